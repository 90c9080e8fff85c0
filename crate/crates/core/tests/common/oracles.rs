//! Forward values against independent references: nested scalar loops for
//! the array ops and attention modules, arbitrary precision for the loss.

use dashu_float::FBig;
use ftfd::model::{avam, cbam_spatial, AttentionConv, AttentionParams};
use ftfd::tensor::{sigmoid_scalar, Mode};
use ftfd::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOOP_TOL: f64 = 1e-12;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn idx(shape: &[usize], b: usize, c: usize, h: usize, w: usize) -> usize {
    ((b * shape[1] + c) * shape[2] + h) * shape[3] + w
}

/// Direct cross-correlation with zero padding.
fn conv_loop(x: &Tensor, w: &Tensor, bias: &[f64], stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for u in 0..k {
                            for v in 0..k {
                                let (y, z) = (
                                    (i * stride + u) as isize - pad as isize,
                                    (j * stride + v) as isize - pad as isize,
                                );
                                if y < 0 || z < 0 || y >= h as isize || z >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[idx(xs, n, c, y as usize, z as usize)]
                                    * w.data()[idx(ws, o, c, u, v)];
                            }
                        }
                    }
                    out[((n * cout + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, oh, ow], out).unwrap()
}

fn channel_reduce(x: &Tensor, max: bool) -> Tensor {
    let s = x.shape();
    let mut out = vec![0.0; s[0] * s[2] * s[3]];
    for b in 0..s[0] {
        for h in 0..s[2] {
            for w in 0..s[3] {
                let vals = (0..s[1]).map(|c| x.data()[idx(s, b, c, h, w)]);
                out[(b * s[2] + h) * s[3] + w] = if max {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.sum::<f64>() / s[1] as f64
                };
            }
        }
    }
    Tensor::new(vec![s[0], 1, s[2], s[3]], out).unwrap()
}

fn concat_loop(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let c = sa[1] + sb[1];
    Tensor::from_fn(vec![sa[0], c, sa[2], sa[3]], |i| {
        let w = i % sa[3];
        let h = (i / sa[3]) % sa[2];
        let ch = (i / (sa[3] * sa[2])) % c;
        let n = i / (sa[3] * sa[2] * c);
        if ch < sa[1] {
            a.data()[idx(sa, n, ch, h, w)]
        } else {
            b.data()[idx(sb, n, ch - sa[1], h, w)]
        }
    })
}

fn sigmoid_loop(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape().to_vec(), |i| 1.0 / (1.0 + (-x.data()[i]).exp()))
}

fn broadcast_loop(f: &Tensor, m: &Tensor) -> Tensor {
    let s = f.shape();
    Tensor::from_fn(s.to_vec(), |i| {
        let w = i % s[3];
        let h = (i / s[3]) % s[2];
        let n = i / (s[3] * s[2] * s[1]);
        f.data()[i] * m.data()[(n * s[2] + h) * s[3] + w]
    })
}

fn attn_conv_loop(x: &Tensor, c: &AttentionConv) -> Tensor {
    conv_loop(x, &c.weight, c.bias.data(), 1, 3)
}

/// Step-by-step reference for the audio-visual attention map and output.
fn avam_loop(fv: &Tensor, fa: &Tensor, p: &AttentionParams) -> (Tensor, Tensor) {
    let f_avg = concat_loop(&channel_reduce(fv, false), &channel_reduce(fa, false));
    let f_max = concat_loop(&channel_reduce(fv, true), &channel_reduce(fa, true));
    let a = sigmoid_loop(&attn_conv_loop(&f_avg, &p.conv_avg));
    let m = sigmoid_loop(&attn_conv_loop(&f_max, &p.conv_max));
    let map = sigmoid_loop(&attn_conv_loop(&concat_loop(&a, &m), &p.conv_fuse));
    (broadcast_loop(fv, &map), map)
}

fn cbam_loop(fv: &Tensor, c: &AttentionConv) -> (Tensor, Tensor) {
    let desc = concat_loop(&channel_reduce(fv, false), &channel_reduce(fv, true));
    let map = sigmoid_loop(&attn_conv_loop(&desc, c));
    (broadcast_loop(fv, &map), map)
}

pub fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // the fixed example plus random geometries
    let mut cases = vec![([1, 2, 5, 5], [3, 2, 3, 3], 1, 0)];
    for _ in 0..30 {
        let k = [1, 3, 5, 7][rng.gen_range(0..4)];
        let pad = rng.gen_range(0..=k / 2);
        let h = rng.gen_range(k.max(2)..12);
        let w = rng.gen_range(k.max(2)..12);
        cases.push((
            [rng.gen_range(1..3), rng.gen_range(1..4), h, w],
            [rng.gen_range(1..5), 0, k, k],
            rng.gen_range(1..=3),
            pad,
        ));
    }
    for (xs, mut ws, stride, pad) in cases {
        ws[1] = xs[1];
        let x = random(&xs, &mut rng);
        let w = random(&ws, &mut rng);
        let b = random(&[ws[0]], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
        );
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
        let reference = conv_loop(&x, &w, b.data(), stride, pad);
        assert_eq!(tape.shape(y), reference.shape());
        let d = tape.value(y).max_abs_diff(&reference);
        assert!(d < LOOP_TOL, "{xs:?} * {ws:?} s{stride} p{pad}: {d:e}");
    }
}

pub fn channel_pools_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for c in [1, 2, 7] {
        let x = random(&[2, c, 4, 4], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let avg = tape.channel_avg_pool(xv).unwrap();
        let max = tape.channel_max_pool(xv).unwrap();
        assert!(tape.value(avg).max_abs_diff(&channel_reduce(&x, false)) < LOOP_TOL);
        assert_eq!(tape.value(max), &channel_reduce(&x, true));
    }
}

pub fn fully_connected_matches_loop_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[4, 8], &mut rng);
    let w = random(&[5, 8], &mut rng);
    let b = random(&[5], &mut rng);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let y = tape.fully_connected(xv, wv, bv).unwrap();
    for n in 0..4 {
        for e in 0..5 {
            let mut acc = b.data()[e];
            for d in 0..8 {
                acc += x.data()[n * 8 + d] * w.data()[e * 8 + d];
            }
            assert!((tape.value(y).data()[n * 5 + e] - acc).abs() < LOOP_TOL);
        }
    }
}

pub fn global_average_pool_matches_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 5, 4, 6], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.global_avg_pool(xv).unwrap();
    assert_eq!(tape.shape(y), &[3, 5]);
    for n in 0..3 {
        for c in 0..5 {
            let s: f64 = (0..24)
                .map(|i| x.data()[idx(x.shape(), n, c, i / 6, i % 6)])
                .sum();
            assert!((tape.value(y).data()[n * 5 + c] - s / 24.0).abs() < LOOP_TOL);
        }
    }
}

pub fn attention_modules_match_scalar_loops_on_100_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let b = rng.gen_range(1..=2);
        let (c1, c2) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let fv = random(&[b, c1, h, w], &mut rng);
        let fa = random(&[b, c2, h, w], &mut rng);
        let params = AttentionParams::random(&mut rng);

        let mut tape = Tape::new();
        let (v, a) = (tape.constant(fv.clone()), tape.constant(fa.clone()));
        let vars = params.bind(&mut tape);
        let (att, map) = avam(&mut tape, v, a, &vars).unwrap();
        let (ref_att, ref_map) = avam_loop(&fv, &fa, &params);
        let dm = tape.value(map).max_abs_diff(&ref_map);
        let da = tape.value(att).max_abs_diff(&ref_att);
        assert!(
            dm < LOOP_TOL && da < LOOP_TOL,
            "avam case {case} {:?}: {dm:e} {da:e}",
            fv.shape()
        );
        assert!(tape.value(map).data().iter().all(|&m| m > 0.0 && m < 1.0));

        let conv = params.conv_avg.bind(&mut tape);
        let (att, map) = cbam_spatial(&mut tape, v, conv).unwrap();
        let (ref_att, ref_map) = cbam_loop(&fv, &params.conv_avg);
        let dm = tape.value(map).max_abs_diff(&ref_map);
        let da = tape.value(att).max_abs_diff(&ref_att);
        assert!(
            dm < LOOP_TOL && da < LOOP_TOL,
            "cbam case {case}: {dm:e} {da:e}"
        );
        assert_eq!(tape.shape(map), &[b, 1, h, w]);
    }
}

pub fn avam_on_identical_streams_with_tied_convs_matches_the_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fv = random(&[2, 4, 7, 5], &mut rng);
    let conv = AttentionConv::random(&mut rng);
    let params = AttentionParams {
        conv_avg: conv.clone(),
        conv_max: conv,
        conv_fuse: AttentionConv::random(&mut rng),
    };
    let mut tape = Tape::new();
    let v = tape.constant(fv.clone());
    let vars = params.bind(&mut tape);
    let (_, map) = avam(&mut tape, v, v, &vars).unwrap();
    let (_, ref_map) = avam_loop(&fv, &fv, &params);
    assert!(tape.value(map).max_abs_diff(&ref_map) < LOOP_TOL);
}

/// `ln(1 + e^x) − y·x` evaluated with 256-bit mantissas.
fn bce_exact(logits: &[f64], labels: &[f64]) -> f64 {
    let big = |v: f64| {
        FBig::<dashu_float::round::mode::HalfEven>::try_from(v)
            .unwrap()
            .with_precision(256)
            .value()
    };
    let one = big(1.0);
    let mut total = big(0.0);
    for (&z, &y) in logits.iter().zip(labels) {
        let zb = big(z);
        let term = (one.clone() + zb.exp()).ln() - big(y) * zb;
        total += term;
    }
    (total / big(logits.len() as f64)).to_f64().value()
}

pub fn bce_matches_arbitrary_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.gen_range(1..=16);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let ours = ftfd::train::bce_with_logits(&z, &y).unwrap();
        let exact = bce_exact(&z, &y);
        assert!((ours - exact).abs() < 1e-10, "{ours} vs {exact}");

        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(vec![n, 1], z.clone()).unwrap());
        let l = tape.bce_with_logits(zv, &y).unwrap();
        assert!((tape.value(l).item().unwrap() - exact).abs() < 1e-10);
    }
    for y in [0.0, 1.0] {
        let l = ftfd::train::bce_with_logits(&[0.0], &[y]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
    // fixed reference value for one positive logit
    assert!((bce_exact(&[2.0], &[1.0]) - 0.126_928_011_042_972_5).abs() < 1e-15);
}

pub fn loss_is_permutation_invariant() {
    let z = [0.3, -2.0, 5.5, 1.25];
    let y = [1.0, 0.0, 1.0, 0.0];
    let a = ftfd::train::bce_with_logits(&z, &y).unwrap();
    let b =
        ftfd::train::bce_with_logits(&[z[2], z[0], z[3], z[1]], &[y[2], y[0], y[3], y[1]]).unwrap();
    assert!((a - b).abs() < 1e-15);
}

pub fn sigmoid_tails_and_symmetry() {
    let s = sigmoid_scalar(-1000.0);
    assert!(s > 0.0 && s <= 1e-300);
    assert!(sigmoid_scalar(1000.0) < 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let x: f64 = rng.gen_range(-40.0..40.0);
        assert!((sigmoid_scalar(x) - (1.0 - sigmoid_scalar(-x))).abs() < 1e-15);
    }
}

pub fn dropout_keeps_the_mean() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(vec![1_000_000], 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
    let mean = tape.value(y).data().iter().sum::<f64>() / 1e6;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
    let again = {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(vec![1_000_000], 1.0));
        let y = t
            .dropout(x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        t.value(y).clone()
    };
    assert_eq!(tape.value(y), &again);
}

pub fn batch_norm_train_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::from_fn(vec![4, 3, 5, 5], |_| rng.gen_range(-3.0..7.0));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(vec![3], 1.0));
    let b = tape.constant(Tensor::zeros(vec![3]));
    let (y, stats) = tape
        .batch_norm(xv, g, b, &[0.0; 3], &[1.0; 3], Mode::Train)
        .unwrap();
    assert!(stats.is_some());
    let y = tape.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..100)
            .map(|i| y.at4(i / 25, c, (i % 25) / 5, i % 5))
            .collect();
        let mean = vals.iter().sum::<f64>() / 100.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
        assert!(
            mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-3,
            "{mean} {var}"
        );
    }
}
