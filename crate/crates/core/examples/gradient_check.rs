//! Compares tape gradients of a small conv -> batch-norm -> relu -> pool -> fc
//! network against central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check -- [seed]
//! ```

use ftfd::tensor::Mode;
use ftfd::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(tape: &mut Tape, p: &[Var]) -> ftfd::Result<Var> {
    let h = tape.conv2d(p[0], p[1], p[2], 1, 1)?;
    let (h, _) = tape.batch_norm(h, p[3], p[4], &[0.0; 4], &[1.0; 4], Mode::Train)?;
    let h = tape.relu(h);
    let h = tape.global_avg_pool(h)?;
    let z = tape.fully_connected(h, p[5], p[6])?;
    tape.bce_with_logits(z, &[1.0, 0.0, 1.0])
}

fn main() -> ftfd::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "input",
        "conv.weight",
        "conv.bias",
        "bn.gamma",
        "bn.beta",
        "fc.weight",
        "fc.bias",
    ];
    let shapes = [
        vec![3, 2, 6, 6],
        vec![4, 2, 3, 3],
        vec![4],
        vec![4],
        vec![4],
        vec![1, 4],
        vec![1],
    ];
    let params: Vec<Tensor> = shapes.iter().map(|s| random(s.clone(), &mut rng)).collect();

    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let l = loss(&mut tape, &vars).unwrap();
        tape.value(l).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let l = loss(&mut tape, &vars)?;
    tape.backward(l)?;

    let h = 1e-5;
    for (k, name) in names.iter().enumerate() {
        let g = tape
            .grad(vars[k])
            .expect("every parameter reaches the loss");
        let mut worst = 0.0f64;
        for i in 0..params[k].numel() {
            let mut ps = params.clone();
            ps[k].data_mut()[i] += h;
            let up = eval(&ps);
            ps[k].data_mut()[i] -= 2.0 * h;
            let numeric = (up - eval(&ps)) / (2.0 * h);
            let a = g.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        println!(
            "{name:<12} {:>4} values, worst relative error {worst:.2e}",
            params[k].numel()
        );
    }
    Ok(())
}
