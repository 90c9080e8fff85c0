//! The `ftfd` command line: manifest building, synthetic data, training,
//! evaluation, inference and attention-map export.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use crate::audio::{MelFrontend, VIDEO_FPS};
use crate::dataset::{
    assemble_batch, build_manifest_with, load_clip, write_synth_dataset, ClipSource, Manifest,
    ManifestOptions, ManifestSource, Scheme, Split, SynthDataset,
};
use crate::error::{Error, Result};
use crate::model::{is_fake, write_pgm, FtfdModel, ModelConfig, PgmImage, Variant};
use crate::train::{evaluate, fit, EvalReport, FitReport, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ftfd", version, about = "Audio-visual face-forgery detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a dataset tree and write a split manifest.
    Manifest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, validation and test fractions.
        #[arg(long, value_parser = parse_ratios, default_value = "0.6,0.2,0.2")]
        ratios: [f64; 3],
        /// Split each generator method separately.
        #[arg(long)]
        stratify_generator: bool,
        /// Defaults to `<root>/manifest.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic audio-visual mismatch dataset plus its manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant; writes checkpoints, metrics.tsv and run.json.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON with optional `model` and `train` objects.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, value_parser = parse_frames, default_value = "3")]
        t: usize,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config file's training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy and BCE of a checkpoint on one split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["random", "definite"], default_value = "definite")]
        scheme: String,
        /// Start frame of the definite scheme.
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Seed of the random scheme.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Also write the full report, with per-clip predictions, as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify one video.
    Infer {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// First frame of the clip.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Export the attention maps of one clip as PGM images.
    Attn {
        /// Video directory holding `frames/` and `audio.wav`.
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_frames(s: &str) -> std::result::Result<usize, String> {
    match s {
        "1" => Ok(1),
        "3" => Ok(3),
        "5" => Ok(5),
        _ => Err(format!("T must be 1, 3 or 5, got {s}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

fn parse_ratios(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three ratios, got {}", p.len()))
}

/// Contents of `--config`; either half may be omitted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
}

/// Everything needed to recompute a training run's numbers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub manifest: PathBuf,
    pub manifest_seed: u64,
    /// `git hash-object` of the best checkpoint.
    pub checkpoint_sha1: String,
    pub fit: FitReport,
    pub wall_clock_secs: f64,
}

/// SHA-1 of `"blob <len>\0" + bytes`, as git computes object ids.
pub fn git_blob_sha1(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match run(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("FTFD_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::invalid(format!(
            "FTFD_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    // a second call in the same process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn emit(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("stdout", e))
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Manifest {
            root,
            seed,
            ratios,
            stratify_generator,
            out: path,
        } => {
            let build = build_manifest_with(
                &root,
                ManifestOptions {
                    ratios,
                    seed,
                    stratify_by_generator: stratify_generator,
                },
            )?;
            for r in &build.rejected {
                eprintln!("rejected {}: {}", r.path.display(), r.reasons.join("; "));
            }
            let path = path.unwrap_or_else(|| root.join("manifest.json"));
            build.manifest.save(&path)?;
            emit(out, summary(&build.manifest, build.rejected.len(), &path))
        }
        Command::Synth {
            count,
            seed,
            out: dir,
        } => {
            // long enough for definite(10) clips at the largest T
            let data = SynthDataset::generate(count, seed, 5, VIDEO_FPS)?;
            write_synth_dataset(&data.videos, &dir)?;
            let build = build_manifest_with(
                &dir,
                ManifestOptions {
                    seed,
                    ..ManifestOptions::default()
                },
            )?;
            if !build.rejected.is_empty() {
                return Err(Error::data(format!(
                    "{} generated videos failed validation",
                    build.rejected.len()
                )));
            }
            let path = dir.join("manifest.json");
            build.manifest.save(&path)?;
            emit(out, summary(&build.manifest, 0, &path))
        }
        Command::Train {
            manifest,
            config,
            variant,
            t,
            out: dir,
            seed,
        } => cmd_train(&manifest, config.as_deref(), variant, t, &dir, seed, out),
        Command::Eval {
            manifest,
            checkpoint,
            scheme,
            n,
            seed,
            split,
            report,
        } => {
            let scheme = match scheme.as_str() {
                "random" => Scheme::Random { seed },
                _ => Scheme::Definite { n },
            };
            let model = FtfdModel::load(&checkpoint)?;
            let manifest = Manifest::load(&manifest)?;
            let source = manifest.source(split.split());
            if source.is_empty() {
                return Err(Error::data("no manifest entries in the requested split"));
            }
            let r = evaluate(&model, &source, scheme)?;
            emit(out, eval_summary(&r))?;
            for s in &r.skipped {
                eprintln!("skipped {}: {}", s.video_id, s.reason);
            }
            if let Some(path) = report {
                write_json(&path, &r)?;
            }
            Ok(())
        }
        Command::Infer {
            frames,
            audio,
            checkpoint,
            start,
        } => {
            let model = FtfdModel::load(&checkpoint)?;
            let source = ManifestSource::single(&frames, &audio)?;
            let p = predict_one(&model, &source, start)?;
            let verdict = if is_fake(p) { "FAKE" } else { "REAL" };
            emit(out, format!("{verdict} p={p:.6}"))
        }
        Command::Attn {
            clip,
            checkpoint,
            out: dir,
            start,
        } => {
            let model = FtfdModel::load(&checkpoint)?;
            let source = ManifestSource::single(&clip.join("frames"), &clip.join("audio.wav"))?;
            let paths = export_attention(&model, &source, start, &dir)?;
            for p in paths {
                emit(out, p.display())?;
            }
            Ok(())
        }
    }
}

fn summary(m: &Manifest, rejected: usize, path: &Path) -> String {
    let count = |s| m.entries.iter().filter(|e| e.split == s).count();
    format!(
        "{} entries (train {}, val {}, test {}), {rejected} rejected -> {}",
        m.entries.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        path.display()
    )
}

pub fn eval_summary(r: &EvalReport) -> String {
    format!(
        "scheme={} accuracy={:.6} bce={:.6} evaluated={} skipped={}",
        r.scheme,
        r.accuracy,
        r.loss,
        r.evaluated,
        r.skipped.len()
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn cmd_train(
    manifest_path: &Path,
    config: Option<&Path>,
    variant: Variant,
    frames: usize,
    dir: &Path,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<()> {
    let started = Instant::now();
    let run_cfg = read_run_config(config)?;
    let mut model_cfg = run_cfg
        .model
        .unwrap_or_else(|| ModelConfig::desk(variant, frames));
    model_cfg.variant = variant;
    model_cfg.frames = frames;
    let mut train_cfg = run_cfg.train;
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    model_cfg.validate()?;
    train_cfg.validate()?;

    let manifest = Manifest::load(manifest_path)?;
    let train = manifest.source(Some(Split::Train));
    let val = manifest.source(Some(Split::Val));
    if train.is_empty() || val.is_empty() {
        return Err(Error::data(
            "the manifest needs both train and validation entries",
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut model = FtfdModel::new(model_cfg.clone(), train_cfg.seed)?;
    let metrics_path = dir.join("metrics.tsv");
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = LineFlush(BufWriter::new(file));
    let last = dir.join("last.ckpt");
    let report = fit(
        &mut model,
        &train,
        &val,
        &train_cfg,
        &mut log,
        &mut |rec, m| {
            m.save(&last)?;
            eprintln!(
                "epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
                rec.epoch, rec.train.loss, rec.train.accuracy, rec.val_loss, rec.val_accuracy
            );
            Ok(())
        },
    )?;
    log.0.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let best = dir.join("model.ckpt");
    model.save(&best)?;
    let bytes = std::fs::read(&best).map_err(|e| Error::io(&best, e))?;
    let record = RunRecord {
        model: model_cfg,
        train: train_cfg,
        manifest: manifest_path.to_path_buf(),
        manifest_seed: manifest.seed,
        checkpoint_sha1: git_blob_sha1(&bytes),
        fit: report,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("run.json"), &record)?;
    let best_rec = &record.fit.history[record.fit.best_epoch - 1];
    emit(
        out,
        format!(
            "best epoch {} val loss {:.6} val accuracy {:.6} -> {} ({})",
            record.fit.best_epoch,
            best_rec.val_loss,
            best_rec.val_accuracy,
            best.display(),
            record.checkpoint_sha1
        ),
    )
}

/// Flushes after every line so the metrics log can be tailed.
struct LineFlush<W: Write>(W);

impl<W: Write> Write for LineFlush<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.0.write(buf)?;
        if buf[..n].contains(&b'\n') {
            self.0.flush()?;
        }
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn single_clip_input(
    model: &FtfdModel,
    source: &ManifestSource,
    start: usize,
) -> Result<crate::dataset::Batch> {
    let frames = model.config().frames;
    let clip = load_clip(
        source,
        0,
        Scheme::Definite { n: start },
        frames,
        &MelFrontend::default(),
    )?;
    assemble_batch(&[clip], model.config())
}

/// Fake-class probability for the clip starting at `start`.
pub fn predict_one(model: &FtfdModel, source: &ManifestSource, start: usize) -> Result<f64> {
    let batch = single_clip_input(model, source, start)?;
    Ok(model.predict(&batch.input)?[0])
}

/// Writes `stage1.pgm` … `stage5.pgm` at each stage's native resolution.
pub fn export_attention(
    model: &FtfdModel,
    source: &ManifestSource,
    start: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let batch = single_clip_input(model, source, start)?;
    let maps = model.attention_maps(&batch.input)?;
    if maps.is_empty() {
        return Err(Error::invalid(format!(
            "variant {} has no attention modules",
            model.config().variant
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(maps.len());
    for (k, m) in maps.iter().enumerate() {
        let (_, _, h, w) = m.dims4()?;
        let path = dir.join(format!("stage{}.pgm", k + 1));
        write_pgm(&path, &PgmImage::from_unit_map(h, w, m.data())?)?;
        paths.push(path);
    }
    Ok(paths)
}
