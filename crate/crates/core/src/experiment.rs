//! End-to-end runs on the synthetic mismatch task: split, train, test, and
//! inspect where attention lands.

use std::io::Write;

use crate::audio::{resize_bilinear, MelFrontend, VIDEO_FPS};
use crate::dataset::{
    assemble_batch, assign_splits, load_clip, ClipSource, Generator, Scheme, Split, Subset,
    SynthDataset, DEFAULT_RATIOS, FRAME_SIZE,
};
use crate::error::{Error, Result};
use crate::model::{FtfdModel, ModelConfig, Variant};
use crate::train::{evaluate, fit, EvalReport, FitReport, TrainConfig};

/// A generated dataset with its stratified split.
pub struct SyntheticTask {
    pub data: SynthDataset,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SyntheticTask {
    /// `count` videos long enough for `frames`-frame clips, split 60/20/20
    /// by label with `seed`.
    pub fn generate(count: usize, seed: u64, frames: usize) -> Result<Self> {
        let data = SynthDataset::generate(count, seed, frames, VIDEO_FPS)?;
        let keys: Vec<_> = data
            .videos
            .iter()
            .map(|v| (v.label, Generator::Synthetic))
            .collect();
        let splits = assign_splits(&keys, DEFAULT_RATIOS, seed, false)?;
        let pick = |s: Split| (0..splits.len()).filter(|&i| splits[i] == s).collect();
        Ok(Self {
            train: pick(Split::Train),
            val: pick(Split::Val),
            test: pick(Split::Test),
            data,
        })
    }

    pub fn subset(&self, split: Split) -> Subset<'_, SynthDataset> {
        let indices = match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        };
        Subset::new(&self.data, indices.clone()).expect("split indices are in range")
    }
}

pub struct RunResult {
    pub model: FtfdModel,
    pub fit: FitReport,
    pub test: EvalReport,
}

/// Trains `config` with early stopping on the validation split and evaluates
/// the best-validation weights on the test split with a seeded random clip
/// per video.
pub fn run(
    task: &SyntheticTask,
    config: ModelConfig,
    train_cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<RunResult> {
    let mut model = FtfdModel::new(config, train_cfg.seed)?;
    let fit = fit(
        &mut model,
        &task.subset(Split::Train),
        &task.subset(Split::Val),
        train_cfg,
        log,
        &mut |_, _| Ok(()),
    )?;
    let test = evaluate(
        &model,
        &task.subset(Split::Test),
        test_scheme(train_cfg.seed),
    )?;
    Ok(RunResult { model, fit, test })
}

pub fn test_scheme(seed: u64) -> Scheme {
    Scheme::Random {
        seed: seed.wrapping_add(0x7e57),
    }
}

/// Desk-scale configuration of `variant` with `frames` frames per clip.
pub fn desk_config(variant: Variant, frames: usize) -> ModelConfig {
    ModelConfig::desk(variant, frames)
}

/// Per-clip attention statistics over the mouth box.
#[derive(Clone, Debug, PartialEq)]
pub struct MouthAttention {
    pub video_id: String,
    pub inside: f64,
    pub outside: f64,
}

/// Mean attention inside versus outside the mouth box for the given videos.
///
/// The five stage maps are bilinearly resized to the 96×96 frame grid and
/// averaged; the box is the mouth's extent at its widest opening.
pub fn mouth_attention(
    model: &FtfdModel,
    data: &SynthDataset,
    indices: &[usize],
    scheme: Scheme,
) -> Result<Vec<MouthAttention>> {
    if model.config().variant != Variant::FtfdnetAvam
        && model.config().variant != Variant::FtfdnetCbam
    {
        return Err(Error::invalid("the model has no attention modules"));
    }
    let frontend = MelFrontend::default();
    let frames = model.config().frames;
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(32) {
        let clips = chunk
            .iter()
            .map(|&i| load_clip(data, i, scheme, frames, &frontend))
            .collect::<Result<Vec<_>>>()?;
        let batch = assemble_batch(&clips, model.config())?;
        let maps = model.attention_maps(&batch.input)?;
        for (b, &i) in chunk.iter().enumerate() {
            let mut avg = vec![0.0; FRAME_SIZE * FRAME_SIZE];
            for m in &maps {
                let item = m.batch_item(b)?;
                let (_, _, h, w) = item.dims4()?;
                let up = resize_bilinear(&item.reshape(vec![1, h, w])?, FRAME_SIZE, FRAME_SIZE)?;
                avg.iter_mut()
                    .zip(up.data())
                    .for_each(|(a, v)| *a += v / maps.len() as f64);
            }
            let (x0, y0, x1, y1) = data.videos[i].face.mouth_box();
            let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
            for y in 0..FRAME_SIZE {
                for x in 0..FRAME_SIZE {
                    let v = avg[y * FRAME_SIZE + x];
                    if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                        sin += v;
                        nin += 1;
                    } else {
                        sout += v;
                        nout += 1;
                    }
                }
            }
            out.push(MouthAttention {
                video_id: data.video_id(i).to_string(),
                inside: sin / nin as f64,
                outside: sout / nout as f64,
            });
        }
    }
    Ok(out)
}
