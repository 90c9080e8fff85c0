//! Procedural talking-face videos with a controllable audio-visual mismatch.
//!
//! Every video is a schematic face whose mouth opening at frame `t` equals a
//! smoothed envelope value `e(t) ∈ [0, 1]`. The paired audio is band-limited
//! noise whose amplitude follows an envelope through `a(e) = A0 · G^e`.
//!
//! Real videos render the mouth from the envelope of their own audio. Fake
//! videos render it from an independently drawn envelope while storing the
//! other stream, so frames alone and audio alone have the same distribution
//! in both classes; only their agreement tells the classes apart.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{samples_to_pcm16, write_wav, WavAudio};
use crate::error::{Error, Result};

use super::clip::ClipSource;
use super::{Generator, Label, FRAME_SIZE, MIN_DURATION};

pub const SAMPLE_RATE: u32 = 16_000;
const MAX_DURATION: f64 = 2.4;
const AMP_BASE: f64 = 0.01;
const AMP_GAIN: f64 = 20.0;
const KNOT_SPACING: (f64, f64) = (0.06, 0.16);
const MOUTH_MIN_HALF_HEIGHT: f64 = 1.0;
const MOUTH_RANGE: f64 = 12.0;
const MOUTH_HALF_WIDTH: f64 = 15.0;
const SUPERSAMPLE: usize = 4;

/// Appearance of one synthetic face; identical distribution for both classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub background: [u8; 3],
    pub skin: [u8; 3],
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub eye_offset: (f64, f64),
    pub mouth_center: (f64, f64),
    pub mouth_half_width: f64,
}

impl FaceParams {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let gray = rng.gen_range(140..200u8);
        let tone = rng.gen_range(0.25..0.75f64);
        let skin = [
            (150.0 + 90.0 * tone) as u8,
            (110.0 + 80.0 * tone) as u8,
            (80.0 + 70.0 * tone) as u8,
        ];
        let center = (
            48.0 + rng.gen_range(-3.0..3.0),
            48.0 + rng.gen_range(-3.0..3.0),
        );
        let radii = (rng.gen_range(28.0..32.0), rng.gen_range(36.0..40.0));
        Self {
            background: [gray, gray.saturating_add(rng.gen_range(0..20)), gray],
            skin,
            center,
            radii,
            eye_offset: (rng.gen_range(10.0..14.0), rng.gen_range(-14.0..-10.0)),
            mouth_center: (center.0, center.1 + rng.gen_range(14.0..17.0)),
            mouth_half_width: MOUTH_HALF_WIDTH,
        }
    }

    /// Pixel box `(x0, y0, x1, y1)`, end-exclusive, that contains the mouth
    /// at its widest opening.
    pub fn mouth_box(&self) -> (usize, usize, usize, usize) {
        let (cx, cy) = self.mouth_center;
        let hh = MOUTH_MIN_HALF_HEIGHT + MOUTH_RANGE;
        let clip = |v: f64| v.clamp(0.0, FRAME_SIZE as f64) as usize;
        (
            clip((cx - self.mouth_half_width).floor()),
            clip((cy - hh).floor()),
            clip((cx + self.mouth_half_width).ceil()),
            clip((cy + hh).ceil()),
        )
    }
}

fn in_ellipse(x: f64, y: f64, (cx, cy): (f64, f64), (rx, ry): (f64, f64)) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn blend(base: [u8; 3], top: [u8; 3], coverage: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (base[c] as f64 * (1.0 - coverage) + top[c] as f64 * coverage).round() as u8;
    }
    out
}

/// Paints an anti-aliased ellipse onto `img`.
fn paint_ellipse(img: &mut RgbImage, center: (f64, f64), radii: (f64, f64), color: [u8; 3]) {
    let x0 = (center.0 - radii.0).floor().max(0.0) as u32;
    let x1 = ((center.0 + radii.0).ceil() as u32).min(img.width());
    let y0 = (center.1 - radii.1).floor().max(0.0) as u32;
    let y1 = ((center.1 + radii.1).ceil() as u32).min(img.height());
    let n = SUPERSAMPLE as f64;
    for py in y0..y1 {
        for px in x0..x1 {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / n;
                    let y = py as f64 + (sy as f64 + 0.5) / n;
                    hits += in_ellipse(x, y, center, radii) as usize;
                }
            }
            if hits > 0 {
                let cov = hits as f64 / (n * n);
                let base = img.get_pixel(px, py).0;
                img.put_pixel(px, py, Rgb(blend(base, color, cov)));
            }
        }
    }
}

/// Everything except the mouth.
pub fn render_base(face: &FaceParams) -> RgbImage {
    let mut img = RgbImage::from_pixel(FRAME_SIZE as u32, FRAME_SIZE as u32, Rgb(face.background));
    paint_ellipse(&mut img, face.center, face.radii, face.skin);
    let eye = [40, 30, 30];
    let (ex, ey) = face.eye_offset;
    for side in [-1.0, 1.0] {
        paint_ellipse(
            &mut img,
            (face.center.0 + side * ex, face.center.1 + ey),
            (4.0, 3.0),
            eye,
        );
    }
    let nose = [
        face.skin[0].saturating_sub(40),
        face.skin[1].saturating_sub(40),
        face.skin[2].saturating_sub(40),
    ];
    paint_ellipse(
        &mut img,
        (face.center.0, face.center.1 + 4.0),
        (2.0, 5.0),
        nose,
    );
    img
}

/// Draws the mouth with opening `aperture ∈ [0, 1]` onto a copy of `base`.
pub fn render_frame(base: &RgbImage, face: &FaceParams, aperture: f64) -> RgbImage {
    let mut img = base.clone();
    let half_height = MOUTH_MIN_HALF_HEIGHT + MOUTH_RANGE * aperture.clamp(0.0, 1.0);
    paint_ellipse(
        &mut img,
        face.mouth_center,
        (face.mouth_half_width, half_height),
        MOUTH_COLOR,
    );
    img
}

pub const MOUTH_COLOR: [u8; 3] = [110, 0, 25];

/// A random smooth envelope in [0, 1] sampled at `SAMPLE_RATE`.
fn envelope(rng: &mut ChaCha8Rng, n_samples: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut knots = vec![(0.0, rng.gen_range(0.0..1.0))];
    while knots.last().expect("non-empty").0 * sr < n_samples as f64 {
        let t = knots.last().expect("non-empty").0 + rng.gen_range(KNOT_SPACING.0..KNOT_SPACING.1);
        knots.push((t, rng.gen_range(0.0..1.0)));
    }
    let mut out = Vec::with_capacity(n_samples);
    let mut k = 0;
    for i in 0..n_samples {
        let t = i as f64 / sr;
        while knots[k + 1].0 < t {
            k += 1;
        }
        let (t0, v0) = knots[k];
        let (t1, v1) = knots[k + 1];
        let u = (t - t0) / (t1 - t0);
        let w = 0.5 - 0.5 * (PI * u).cos();
        out.push(v0 + (v1 - v0) * w);
    }
    out
}

/// Mean envelope over each video frame's time span.
fn frame_means(env: &[f64], fps: f64, frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|t| {
            let a = (t as f64 / fps * SAMPLE_RATE as f64).round() as usize;
            let b = (((t + 1) as f64 / fps * SAMPLE_RATE as f64).round() as usize).min(env.len());
            env[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Band-passed Gaussian noise with unit RMS.
fn band_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // RBJ band-pass biquad, 1 kHz center, Q = 0.7.
    let w0 = 2.0 * PI * 1000.0 / SAMPLE_RATE as f64;
    let alpha = w0.sin() / (2.0 * 0.7);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            y
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|v| *v /= rms);
    out
}

/// One generated video, held in memory. Frames are rendered on demand.
#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub id: String,
    pub label: Label,
    pub face: FaceParams,
    /// Mouth opening per frame.
    pub apertures: Vec<f64>,
    /// Per-frame envelope of the stored audio (equal to `apertures` for
    /// real videos).
    pub audio_envelope: Vec<f64>,
    pub pcm: Vec<i16>,
    pub fps: f64,
    base: RgbImage,
}

impl SynthVideo {
    pub fn frame_count(&self) -> usize {
        self.apertures.len()
    }

    pub fn duration(&self) -> f64 {
        self.pcm.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn generator(&self) -> Generator {
        match self.label {
            Label::Real => Generator::None,
            Label::Fake => Generator::Synthetic,
        }
    }

    pub fn frame(&self, t: usize) -> RgbImage {
        render_frame(&self.base, &self.face, self.apertures[t])
    }

    pub fn samples(&self) -> Vec<f64> {
        self.pcm.iter().map(|&s| s as f64 / 32768.0).collect()
    }
}

fn generate_one(seed: u64, index: usize, label: Label, min_frames: usize, fps: f64) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let face = FaceParams::sample(&mut rng);
    let min_duration = MIN_DURATION.max(min_frames as f64 / fps);
    let lo = (min_duration * fps - 1e-9).ceil() as usize;
    let hi = ((MAX_DURATION * fps + 1e-9).floor() as usize).max(lo);
    let frames = rng.gen_range(lo..=hi);
    let n = (frames as f64 / fps * SAMPLE_RATE as f64).round() as usize;

    let own = envelope(&mut rng, n);
    // Drawn for every video so both classes consume the stream identically.
    let other = envelope(&mut rng, n);
    let noise = band_noise(&mut rng, n);
    let samples: Vec<f64> = own
        .iter()
        .zip(&noise)
        .map(|(e, z)| (AMP_BASE * AMP_GAIN.powf(*e) * z).clamp(-1.0, 1.0))
        .collect();
    let audio_envelope = frame_means(&own, fps, frames);
    let apertures = match label {
        Label::Real => audio_envelope.clone(),
        Label::Fake => frame_means(&other, fps, frames),
    };
    let base = render_base(&face);
    SynthVideo {
        id: format!("synth{index:05}"),
        label,
        face,
        apertures,
        audio_envelope,
        pcm: samples_to_pcm16(&samples),
        fps,
        base,
    }
}

/// Generates `count` videos: `⌊count/2⌋` real and `⌈count/2⌉` fake, in a
/// seeded interleaved order. Every video has at least `10 + frames` frames
/// so fixed-start evaluation at frame 10 is always possible.
pub fn synth_generate(count: usize, seed: u64, frames: usize, fps: f64) -> Result<Vec<SynthVideo>> {
    if count < 2 {
        return Err(Error::invalid(format!(
            "synthetic generation needs at least 2 videos to cross-pair audio, got {count}"
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if frames == 0 || !(fps > 0.0) {
        return Err(Error::invalid("frames and fps must be positive"));
    }
    let n_real = count / 2;
    let mut labels: Vec<Label> = (0..count)
        .map(|i| if i < n_real { Label::Real } else { Label::Fake })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    let min_frames = 10 + frames;
    use rayon::prelude::*;
    Ok(labels
        .into_par_iter()
        .enumerate()
        .map(|(i, label)| generate_one(seed, i, label, min_frames, fps))
        .collect())
}

/// Generated videos held in memory; frames are rendered when loaded.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub videos: Vec<SynthVideo>,
}

impl SynthDataset {
    pub fn generate(count: usize, seed: u64, frames: usize, fps: f64) -> Result<Self> {
        Ok(Self {
            videos: synth_generate(count, seed, frames, fps)?,
        })
    }
}

impl ClipSource for SynthDataset {
    fn len(&self) -> usize {
        self.videos.len()
    }

    fn video_id(&self, index: usize) -> &str {
        &self.videos[index].id
    }

    fn label(&self, index: usize) -> Label {
        self.videos[index].label
    }

    fn frame_count(&self, index: usize) -> usize {
        self.videos[index].frame_count()
    }

    fn load_frames(&self, index: usize, start: usize, count: usize) -> Result<Vec<RgbImage>> {
        let v = &self.videos[index];
        if start + count > v.frame_count() {
            return Err(Error::data(format!(
                "video {} has {} frames, frames {start}..{} requested",
                v.id,
                v.frame_count(),
                start + count
            )));
        }
        Ok((start..start + count).map(|t| v.frame(t)).collect())
    }

    fn load_audio(&self, index: usize) -> Result<Vec<f64>> {
        Ok(self.videos[index].samples())
    }
}

/// Writes videos in the on-disk dataset layout (PNG frames, 16-bit WAV).
pub fn write_synth_dataset(videos: &[SynthVideo], root: &Path) -> Result<()> {
    use rayon::prelude::*;
    videos.par_iter().try_for_each(|v| {
        let dir = match v.label {
            Label::Real => root.join("real").join(&v.id),
            Label::Fake => root.join("fake").join(v.generator().name()).join(&v.id),
        };
        let frames = dir.join("frames");
        fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
        for t in 0..v.frame_count() {
            let path = frames.join(format!("{t:05}.png"));
            v.frame(t)
                .save(&path)
                .map_err(|e| Error::file(&path, format!("cannot write PNG: {e}")))?;
        }
        write_wav(
            dir.join("audio.wav"),
            &WavAudio {
                sample_rate: SAMPLE_RATE,
                pcm: v.pcm.clone(),
            },
        )
    })
}
