//! Trains FTFDNet-AVAM on synthetic data and reports how often attention
//! favours the mouth region on fake test clips.
//!
//! ```text
//! cargo run --release --example attention_sanity -- [count] [seed]
//! ```

use ftfd::dataset::Label;
use ftfd::experiment::{desk_config, mouth_attention, run, test_scheme, SyntheticTask};
use ftfd::model::Variant;
use ftfd::train::TrainConfig;

fn main() -> ftfd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let task = SyntheticTask::generate(count, seed, 3)?;
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let result = run(
        &task,
        desk_config(Variant::FtfdnetAvam, 3),
        &cfg,
        &mut std::io::sink(),
    )?;
    println!("test accuracy {:.4}", result.test.accuracy);

    let fakes: Vec<usize> = task
        .test
        .iter()
        .copied()
        .filter(|&i| task.data.videos[i].label == Label::Fake)
        .collect();
    let stats = mouth_attention(&result.model, &task.data, &fakes, test_scheme(seed))?;
    let hits = stats.iter().filter(|s| s.inside > s.outside).count();
    let mean_in = stats.iter().map(|s| s.inside).sum::<f64>() / stats.len() as f64;
    let mean_out = stats.iter().map(|s| s.outside).sum::<f64>() / stats.len() as f64;
    println!(
        "mouth > elsewhere on {hits}/{} fake clips ({:.1}%), mean inside {mean_in:.4}, outside {mean_out:.4}",
        stats.len(),
        100.0 * hits as f64 / stats.len() as f64
    );
    Ok(())
}
