//! Analytic gradients against central finite differences, per op and for
//! whole networks.

use ftfd::model::{FtfdModel, ModelConfig, ModelInput, Variant};
use ftfd::tensor::Mode;
use ftfd::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-5;
const MODEL_TOL: f64 = 1e-4;
const KINK_FLOOR: f64 = 1e-8;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    // floor keeps near-zero gradients from turning rounding noise into a ratio
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, so ReLU kinks are never straddled.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    })
}

/// Reduces any output to a scalar through a fixed random projection, so
/// every output element gets a distinct weight.
fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let n = tape.value(out).numel();
    let flat = tape.reshape(out, vec![1, n])?;
    let w = tape.constant(weights.reshape(vec![1, n])?);
    let b = tape.constant(Tensor::zeros(vec![1]));
    let y = tape.fully_connected(flat, w, b)?;
    Ok(tape.sum(y))
}

/// Checks d(loss)/d(input) for every element of every input.
fn check<F>(name: &str, inputs: &[Tensor], tol: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let loss = f(&mut tape, &vars).unwrap();
        tape.value(loss).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let g = tape
            .grad(*v)
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape().to_vec()));
        for i in 0..inputs[k].numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += H;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * H;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * H);
            let e = rel_err(g.data()[i], numeric);
            assert!(
                e < tol,
                "{name}: input {k} element {i}: analytic {} numeric {numeric} (rel {e:.2e})",
                g.data()[i]
            );
            worst = worst.max(e);
        }
    }
    worst
}

fn for_seeds(mut f: impl FnMut(&mut ChaCha8Rng)) {
    for seed in 0..SEEDS {
        f(&mut ChaCha8Rng::seed_from_u64(seed));
    }
}

pub fn conv2d_gradients() {
    for_seeds(|rng| {
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=1);
        let cin = rng.gen_range(1..=3);
        let cout = rng.gen_range(1..=3);
        let k = [1, 3][rng.gen_range(0..2)];
        let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
        let x = random(&[2, cin, h, w], rng);
        let wt = random(&[cout, cin, k, k], rng);
        let b = random(&[cout], rng);
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let proj = random(&[2 * cout * oh * ow], rng);
        check("conv2d", &[x, wt, b], OP_TOL, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, padding)?;
            project(t, y, &proj)
        });
    });
}

pub fn channel_pool_gradients() {
    for_seeds(|rng| {
        let c = rng.gen_range(1..=5);
        let x = random(&[2, c, 3, 4], rng);
        let proj = random(&[24], rng);
        check(
            "channel_avg_pool",
            std::slice::from_ref(&x),
            OP_TOL,
            |t, v| {
                let y = t.channel_avg_pool(v[0])?;
                project(t, y, &proj)
            },
        );
        // continuous random values: no ties, and H moves no argmax
        check("channel_max_pool", &[x], OP_TOL, |t, v| {
            let y = t.channel_max_pool(v[0])?;
            project(t, y, &proj)
        });
    });
}

pub fn elementwise_gradients() {
    for_seeds(|rng| {
        let shape = [2, 3, 2, 2];
        let a = random(&shape, rng);
        let b = random(&shape, rng);
        let proj = random(&[24], rng);
        check("sigmoid", std::slice::from_ref(&a), OP_TOL, |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, &proj)
        });
        check("relu", &[away_from_zero(&shape, rng)], OP_TOL, |t, v| {
            let y = t.relu(v[0]);
            project(t, y, &proj)
        });
        check("add", &[a.clone(), b.clone()], OP_TOL, |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, &proj)
        });
        let factor = rng.gen_range(-3.0..3.0);
        check("scale", std::slice::from_ref(&a), OP_TOL, |t, v| {
            let y = t.scale(v[0], factor);
            project(t, y, &proj)
        });
        check("sum", std::slice::from_ref(&a), OP_TOL, |t, v| {
            let y = t.sigmoid(v[0]);
            Ok(t.sum(y))
        });
        check("reshape", std::slice::from_ref(&a), OP_TOL, |t, v| {
            let y = t.reshape(v[0], vec![6, 4])?;
            project(t, y, &proj)
        });
        let m = random(&[2, 1, 2, 2], rng);
        check("mul_broadcast", &[a, m], OP_TOL, |t, v| {
            let y = t.mul_broadcast(v[0], v[1])?;
            project(t, y, &proj)
        });
    });
}

pub fn concat_and_pooling_gradients() {
    for_seeds(|rng| {
        let a = random(&[2, 2, 3, 3], rng);
        let b = random(&[2, 3, 3, 3], rng);
        let proj = random(&[90], rng);
        check("concat_channels", &[a.clone(), b], OP_TOL, |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            project(t, y, &proj)
        });
        let proj = random(&[4], rng);
        check("global_avg_pool", &[a], OP_TOL, |t, v| {
            let y = t.global_avg_pool(v[0])?;
            project(t, y, &proj)
        });
    });
}

pub fn fully_connected_gradients() {
    for_seeds(|rng| {
        let (b, d, e) = (
            rng.gen_range(1..=4),
            rng.gen_range(1..=8),
            rng.gen_range(1..=5),
        );
        let x = random(&[b, d], rng);
        let w = random(&[e, d], rng);
        let bias = random(&[e], rng);
        let proj = random(&[b * e], rng);
        check("fully_connected", &[x, w, bias], OP_TOL, |t, v| {
            let y = t.fully_connected(v[0], v[1], v[2])?;
            project(t, y, &proj)
        });
    });
}

pub fn batch_norm_gradients() {
    for_seeds(|rng| {
        let c = rng.gen_range(1..=3);
        let x = random(&[3, c, 2, 3], rng);
        let gamma = random(&[c], rng);
        let beta = random(&[c], rng);
        let proj = random(&[18 * c], rng);
        let (rm, rv) = (vec![0.0; c], vec![1.0; c]);
        check(
            "batch_norm/train",
            &[x.clone(), gamma.clone(), beta.clone()],
            OP_TOL,
            |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], &rm, &rv, Mode::Train)?;
                project(t, y, &proj)
            },
        );
        let rm: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        check("batch_norm/eval", &[x, gamma, beta], OP_TOL, |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], &rm, &rv, Mode::Eval)?;
            project(t, y, &proj)
        });
    });
}

pub fn dropout_gradients() {
    for_seeds(|rng| {
        let x = random(&[4, 6], rng);
        let proj = random(&[24], rng);
        let mask_seed: u64 = rng.gen();
        check("dropout", &[x], OP_TOL, |t, v| {
            // same mask on every evaluation
            let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
            let y = t.dropout(v[0], 0.3, Mode::Train, &mut r)?;
            project(t, y, &proj)
        });
    });
}

pub fn bce_gradients() {
    for_seeds(|rng| {
        let n = rng.gen_range(1..=6);
        let z = Tensor::from_fn(vec![n, 1], |_| rng.gen_range(-6.0..6.0));
        let labels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        check("bce_with_logits", &[z], OP_TOL, |t, v| {
            t.bce_with_logits(v[0], &labels)
        });
    });
}

pub fn sigmoid_of_product_at_origin() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::new(vec![1, 1], vec![0.0]).unwrap(), true);
    let x = tape.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    let b = tape.constant(Tensor::zeros(vec![1]));
    let z = tape.fully_connected(x, w, b).unwrap();
    let s = tape.sigmoid(z);
    let loss = tape.sum(s);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(w).unwrap().data(), &[0.25]);
}

fn model_input(cfg: &ModelConfig, batch: usize, rng: &mut ChaCha8Rng) -> ModelInput {
    let [h, w] = cfg.crop;
    let mut input = ModelInput::default();
    if cfg.variant.uses_visual() {
        input.visual = Some(Tensor::from_fn(
            vec![batch, cfg.visual_channels(), h, w],
            |_| rng.gen(),
        ));
    }
    if cfg.variant.uses_audio() {
        input.mel = Some(Tensor::from_fn(
            vec![batch, 1, cfg.n_mels, cfg.audio_steps],
            |_| rng.gen_range(-10.0..2.0),
        ));
    }
    if cfg.variant.uses_siamese() {
        input.mel_resized = Some(Tensor::from_fn(vec![batch, 1, h, w], |_| {
            rng.gen_range(-10.0..2.0)
        }));
    }
    input
}

/// Train-mode loss (batch statistics, a fixed dropout mask).
fn model_loss(
    model: &FtfdModel,
    input: &ModelInput,
    labels: &[f64],
    mask_seed: u64,
) -> (Tape, Var, ftfd::model::Bound) {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let out = model
        .forward(&mut tape, &bound, input, Mode::Train, &mut rng)
        .unwrap();
    let loss = tape.bce_with_logits(out.logits, labels).unwrap();
    (tape, loss, bound)
}

pub fn end_to_end_tiny_model_gradients() {
    let variants = [
        Variant::FtfdnetAvam,
        Variant::Ftfdnet,
        Variant::FtfdnetCbam,
        Variant::Audio,
        Variant::Visual,
    ];
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let variant = variants[seed as usize % variants.len()];
        let cfg = ModelConfig::tiny(variant, 3);
        let mut model = FtfdModel::new(cfg.clone(), seed).unwrap();
        let input = model_input(&cfg, 3, &mut rng);
        let labels = [0.0, 1.0, 1.0];
        let mask_seed = rng.gen();

        let (mut tape, loss, bound) = model_loss(&model, &input, &labels, mask_seed);
        tape.backward(loss).unwrap();
        let grads = bound.grads(&tape);

        // two random coordinates of every trainable tensor
        let entries = model.params().entries().len();
        let mut checked = 0;
        let mut kinks = 0;
        for k in 0..entries {
            if !model.params().entries()[k].trainable {
                continue;
            }
            let n = model.params().entries()[k].value.numel();
            for _ in 0..2 {
                let i = rng.gen_range(0..n);
                let mut at = |delta: f64| {
                    let v = &mut model.params_mut().entries_mut()[k].value.data_mut()[i];
                    let orig = *v;
                    *v = orig + delta;
                    let (tape, loss, _) = model_loss(&model, &input, &labels, mask_seed);
                    model.params_mut().entries_mut()[k].value.data_mut()[i] = orig;
                    tape.value(loss).item().unwrap()
                };
                let analytic = grads[k].as_ref().map_or(0.0, |g| g.data()[i]);
                // A ReLU input or a max-pool argmax within h of a switch point
                // makes the two one-sided slopes disagree; shrink h until they
                // agree instead of comparing against a kinked difference.
                let centre = at(0.0);
                let mut h = H;
                let numeric = loop {
                    let (up, down) = (at(h), at(-h));
                    let (fwd, bwd) = ((up - centre) / h, (centre - down) / h);
                    if rel_err(fwd, bwd) < 1e-2 || h < KINK_FLOOR {
                        break (up - down) / (2.0 * h);
                    }
                    h /= 4.0;
                    kinks += 1;
                };
                let e = rel_err(analytic, numeric);
                assert!(
                    e < MODEL_TOL,
                    "{variant} seed {seed}: {}[{i}] analytic {analytic} numeric {numeric} at h {h:e} (rel {e:.2e})",
                    model.params().entries()[k].name
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
        assert!(
            kinks < checked / 4,
            "{kinks} kinked coordinates out of {checked}"
        );
    }
}
