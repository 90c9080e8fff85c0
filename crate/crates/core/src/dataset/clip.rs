use std::fmt;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{window_for_frames, MelFrontend, Spectrogram};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::manifest::ManifestSource;
use super::{Label, VideoEntry, FRAME_SIZE};

/// Start frame of the fixed-position evaluation scheme used in the
/// detection experiments.
pub const PAPER_DEFINITE_START: usize = 10;

/// Where a clip's `T` frames start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Uniform start, drawn from a stream keyed by `seed` and the video id.
    Random { seed: u64 },
    /// Frames `n, …, n+T−1`.
    Definite { n: usize },
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Random { seed } => write!(f, "random(seed={seed})"),
            Scheme::Definite { n } => write!(f, "definite({n})"),
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Scheme {
    /// First frame of the clip, or an error naming required and available
    /// frame counts.
    pub fn start_frame(&self, video_id: &str, frame_count: usize, frames: usize) -> Result<usize> {
        if frames == 0 {
            return Err(Error::invalid("clips need at least one frame"));
        }
        match *self {
            Scheme::Random { seed } => {
                if frame_count < frames {
                    return Err(Error::data(format!(
                        "video {video_id}: {frames} frames required, {frame_count} available"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(fnv1a(video_id));
                Ok(rng.gen_range(0..=frame_count - frames))
            }
            Scheme::Definite { n } => {
                if frame_count < n + frames {
                    return Err(Error::data(format!(
                        "video {video_id}: {} frames required from frame {n}, {frame_count} available",
                        n + frames
                    )));
                }
                Ok(n)
            }
        }
    }
}

/// One training or evaluation unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleClip {
    /// `[3T, 96, 96]`, RGB in `[0, 1]`, frame `k` in channels `3k..3k+3`.
    pub visual: Tensor,
    /// Log-mel spectrogram of the aligned audio window.
    pub mel: Spectrogram,
    /// The spectrogram resized to the frame grid, `[1, 96, 96]`.
    pub mel_resized: Tensor,
    pub label: Label,
    pub video_id: String,
    pub start_frame: usize,
}

impl SampleClip {
    pub fn frames(&self) -> usize {
        self.visual.shape()[0] / 3
    }
}

/// Anything that can deliver frames and audio of indexed videos.
///
/// Implementations are read-only so clips may be loaded concurrently.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;
    fn video_id(&self, index: usize) -> &str;
    fn label(&self, index: usize) -> Label;
    fn frame_count(&self, index: usize) -> usize;
    /// `count` consecutive 96×96 frames from `start`.
    fn load_frames(&self, index: usize, start: usize, count: usize) -> Result<Vec<RgbImage>>;
    /// The full 16 kHz mono stream in `[-1, 1]`.
    fn load_audio(&self, index: usize) -> Result<Vec<f64>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A view of selected videos of another source.
pub struct Subset<'a, S: ?Sized> {
    source: &'a S,
    indices: Vec<usize>,
}

impl<'a, S: ClipSource + ?Sized> Subset<'a, S> {
    pub fn new(source: &'a S, indices: Vec<usize>) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= source.len()) {
            return Err(Error::invalid(format!(
                "subset index {i} out of range for {} videos",
                source.len()
            )));
        }
        Ok(Self { source, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl<S: ClipSource + ?Sized> ClipSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn video_id(&self, index: usize) -> &str {
        self.source.video_id(self.indices[index])
    }

    fn label(&self, index: usize) -> Label {
        self.source.label(self.indices[index])
    }

    fn frame_count(&self, index: usize) -> usize {
        self.source.frame_count(self.indices[index])
    }

    fn load_frames(&self, index: usize, start: usize, count: usize) -> Result<Vec<RgbImage>> {
        self.source.load_frames(self.indices[index], start, count)
    }

    fn load_audio(&self, index: usize) -> Result<Vec<f64>> {
        self.source.load_audio(self.indices[index])
    }
}

/// Stacks frames along channels in temporal order, scaled to `[0, 1]`.
pub fn frames_to_tensor(frames: &[RgbImage]) -> Result<Tensor> {
    let plane = FRAME_SIZE * FRAME_SIZE;
    let mut data = vec![0.0; 3 * frames.len() * plane];
    for (k, img) in frames.iter().enumerate() {
        if (img.width() as usize, img.height() as usize) != (FRAME_SIZE, FRAME_SIZE) {
            return Err(Error::data(format!(
                "frame {k} is {}x{}, expected 96x96",
                img.width(),
                img.height()
            )));
        }
        for (p, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[(3 * k + c) * plane + p] = px.0[c] as f64 / 255.0;
            }
        }
    }
    Tensor::new(vec![3 * frames.len(), FRAME_SIZE, FRAME_SIZE], data)
}

/// Builds the clip of video `index` according to `scheme`.
pub fn load_clip<S: ClipSource + ?Sized>(
    source: &S,
    index: usize,
    scheme: Scheme,
    frames: usize,
    frontend: &MelFrontend,
) -> Result<SampleClip> {
    let id = source.video_id(index);
    let start = scheme.start_frame(id, source.frame_count(index), frames)?;
    let images = source.load_frames(index, start, frames)?;
    let visual = frames_to_tensor(&images)?;
    let cfg = frontend.config();
    let audio = source.load_audio(index)?;
    let window = window_for_frames(&audio, cfg.sample_rate, start, frames, cfg.n_fft)
        .map_err(|e| Error::data(format!("video {id}: {e}")))?;
    let mel = frontend.mel_spectrogram(&window)?;
    let mel_resized = mel.resized(FRAME_SIZE, FRAME_SIZE)?;
    Ok(SampleClip {
        visual,
        mel,
        mel_resized,
        label: source.label(index),
        video_id: id.to_string(),
        start_frame: start,
    })
}

/// Loads a clip of one manifest entry whose paths are relative to `base_dir`.
pub fn sample_clip(
    entry: &VideoEntry,
    base_dir: &Path,
    scheme: Scheme,
    frames: usize,
) -> Result<SampleClip> {
    let source = ManifestSource::new(base_dir.to_path_buf(), vec![entry.clone()]);
    load_clip(&source, 0, scheme, frames, &MelFrontend::default())
}
