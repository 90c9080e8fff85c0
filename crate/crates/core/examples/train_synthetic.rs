//! Trains one variant on an in-memory synthetic mismatch dataset and reports
//! test accuracy.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [variant] [count] [seed] [epochs]
//! ```

use std::time::Instant;

use ftfd::audio::VIDEO_FPS;
use ftfd::dataset::{
    assign_splits, Generator, Scheme, Split, Subset, SynthDataset, DEFAULT_RATIOS,
};
use ftfd::model::{FtfdModel, ModelConfig, Variant};
use ftfd::train::{evaluate, fit, TrainConfig};

fn main() -> ftfd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args
        .first()
        .map_or("ftfdnet-avam", |s| s.as_str())
        .parse()?;
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let patience: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5);

    let t0 = Instant::now();
    let data = SynthDataset::generate(count, seed, 3, VIDEO_FPS)?;
    let keys: Vec<_> = data
        .videos
        .iter()
        .map(|v| (v.label, Generator::Synthetic))
        .collect();
    let splits = assign_splits(&keys, DEFAULT_RATIOS, seed, false)?;
    let pick = |s: Split| -> Vec<usize> { (0..splits.len()).filter(|&i| splits[i] == s).collect() };
    let train = Subset::new(&data, pick(Split::Train))?;
    let val = Subset::new(&data, pick(Split::Val))?;
    let test = Subset::new(&data, pick(Split::Test))?;
    println!("generated {count} videos in {:.1?}", t0.elapsed());

    let mut model = FtfdModel::new(ModelConfig::desk(variant, 3), seed)?;
    let cfg = TrainConfig {
        seed,
        max_epochs: epochs,
        patience,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let report = fit(
        &mut model,
        &train,
        &val,
        &cfg,
        &mut std::io::stdout(),
        &mut |r, _| {
            eprintln!("epoch {} done at {:.1?}", r.epoch, t1.elapsed());
            Ok(())
        },
    )?;
    let test_report = evaluate(&model, &test, Scheme::Random { seed })?;
    println!(
        "{variant}: best epoch {}, test accuracy {:.4}, test BCE {:.4}, {:.1?}",
        report.best_epoch,
        test_report.accuracy,
        test_report.loss,
        t1.elapsed()
    );
    Ok(())
}
