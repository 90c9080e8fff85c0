//! Scores clips with a checkpoint, or with a freshly initialised network
//! when none is given, over a few synthetic videos.
//!
//! ```text
//! cargo run --release --example infer_clip -- [model.ckpt]
//! ```

use ftfd::audio::{MelFrontend, VIDEO_FPS};
use ftfd::dataset::{assemble_batch, load_clip, Scheme, SynthDataset};
use ftfd::model::{is_fake, FtfdModel, ModelConfig, Variant};

fn main() -> ftfd::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => FtfdModel::load(path)?,
        None => FtfdModel::new(ModelConfig::desk(Variant::FtfdnetAvam, 3), 0)?,
    };
    let cfg = model.config().clone();
    println!("{} with T = {}", cfg.variant, cfg.frames);

    let data = SynthDataset::generate(6, 42, cfg.frames, VIDEO_FPS)?;
    let fe = MelFrontend::default();
    let clips = (0..data.videos.len())
        .map(|i| load_clip(&data, i, Scheme::Definite { n: 10 }, cfg.frames, &fe))
        .collect::<ftfd::Result<Vec<_>>>()?;
    let batch = assemble_batch(&clips, &cfg)?;
    let probs = model.predict(&batch.input)?;
    for ((v, clip), p) in data.videos.iter().zip(&clips).zip(probs) {
        let verdict = if is_fake(p) { "FAKE" } else { "REAL" };
        println!(
            "{} frames {}..{} ({:?}): {verdict} p={p:.4}",
            v.id,
            clip.start_frame,
            clip.start_frame + cfg.frames,
            v.label
        );
    }
    Ok(())
}
