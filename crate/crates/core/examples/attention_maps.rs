//! Exports the five stage attention maps of one synthetic fake clip as PGM
//! images, plus the clip's first frame for reference.
//!
//! ```text
//! cargo run --release --example attention_maps -- <out-dir> [model.ckpt]
//! ```

use std::path::PathBuf;

use ftfd::audio::{MelFrontend, VIDEO_FPS};
use ftfd::dataset::{assemble_batch, load_clip, Label, Scheme, SynthDataset};
use ftfd::model::{write_pgm, FtfdModel, ModelConfig, PgmImage, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first().map(PathBuf::from) else {
        eprintln!("usage: attention_maps <out-dir> [model.ckpt]");
        std::process::exit(2);
    };
    let model = match args.get(1) {
        Some(path) => FtfdModel::load(path)?,
        None => FtfdModel::new(ModelConfig::desk(Variant::FtfdnetAvam, 3), 0)?,
    };
    let cfg = model.config().clone();
    let data = SynthDataset::generate(4, 1, cfg.frames, VIDEO_FPS)?;
    let i = data
        .videos
        .iter()
        .position(|v| v.label == Label::Fake)
        .unwrap();
    let clip = load_clip(
        &data,
        i,
        Scheme::Definite { n: 10 },
        cfg.frames,
        &MelFrontend::default(),
    )?;
    let maps = model.attention_maps(&assemble_batch(&[clip], &cfg)?.input)?;
    if maps.is_empty() {
        eprintln!("{} has no attention modules", cfg.variant);
        std::process::exit(2);
    }
    std::fs::create_dir_all(&out)?;
    for (k, m) in maps.iter().enumerate() {
        let (_, _, h, w) = m.dims4()?;
        let path = out.join(format!("stage{}.pgm", k + 1));
        write_pgm(&path, &PgmImage::from_unit_map(h, w, m.data())?)?;
        let mean = m.data().iter().sum::<f64>() / m.numel() as f64;
        println!("{} {h}x{w} mean {mean:.4}", path.display());
    }
    let frame = data.videos[i].frame(10);
    let path = out.join("frame.png");
    frame.save(&path)?;
    println!("{}", path.display());
    Ok(())
}
