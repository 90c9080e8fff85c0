//! Writes a synthetic real/fake talking-face dataset to disk and builds its
//! split manifest.
//!
//! ```text
//! cargo run --release --example synth_dataset -- <out-dir> [count] [seed]
//! ```

use std::path::PathBuf;

use ftfd::audio::VIDEO_FPS;
use ftfd::dataset::{
    build_manifest, write_synth_dataset, Label, Split, SynthDataset, DEFAULT_RATIOS,
};

fn main() -> ftfd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(root) = args.first().map(PathBuf::from) else {
        eprintln!("usage: synth_dataset <out-dir> [count] [seed]");
        std::process::exit(2);
    };
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let data = SynthDataset::generate(count, seed, 5, VIDEO_FPS)?;
    write_synth_dataset(&data.videos, &root)?;
    let build = build_manifest(&root, DEFAULT_RATIOS, seed)?;
    for r in &build.rejected {
        println!("rejected {}: {}", r.path.display(), r.reasons.join("; "));
    }
    let m = &build.manifest;
    for split in Split::ALL {
        let of = |l: Label| {
            m.entries
                .iter()
                .filter(|e| e.split == split && e.label == l)
                .count()
        };
        println!(
            "{split:?}: {} real, {} fake",
            of(Label::Real),
            of(Label::Fake)
        );
    }
    let path = root.join("manifest.json");
    m.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
