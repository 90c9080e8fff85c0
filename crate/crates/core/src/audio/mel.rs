use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{resize_bilinear, AudioWindow};

/// Natural-log floor applied to mel energies.
pub const LOG_FLOOR: f64 = -10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_fft: 800,
            hop: 200,
            n_mels: 80,
            fmin: 55.0,
            fmax: 7600.0,
        }
    }
}

/// Log-mel energies of one audio window, `[1, n_mels, n_steps]`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spectrogram {
    pub mels: Tensor,
}

impl Spectrogram {
    pub fn n_mels(&self) -> usize {
        self.mels.shape()[1]
    }

    pub fn n_steps(&self) -> usize {
        self.mels.shape()[2]
    }

    /// The spectrogram stretched to a face-crop grid, `[1, height, width]`.
    pub fn resized(&self, height: usize, width: usize) -> Result<Tensor> {
        resize_bilinear(&self.mels, height, width)
    }
}

// Slaney-style mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular filters with area normalization, `n_mels × (n_fft/2 + 1)`,
/// row-major.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (right - left);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let rising = (f - left) / (center - left);
                    let falling = (right - f) / (right - center);
                    rising.min(falling).max(0.0) * norm
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT and mel projection for a fixed configuration.
pub struct MelFrontend {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelFrontend {
    pub fn new(cfg: MelConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            window: hann_window(cfg.n_fft),
            filters: mel_filterbank(&cfg),
            fft,
            cfg,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// Number of STFT frames for a signal of `len` samples (no centering).
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.cfg.n_fft {
            0
        } else {
            (len - self.cfg.n_fft) / self.cfg.hop + 1
        }
    }

    /// Magnitude STFT, one row of `n_fft/2 + 1` bins per frame.
    pub fn stft_magnitude(&self, samples: &[f64]) -> Vec<Vec<f64>> {
        let n = self.cfg.n_fft;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        (0..self.n_frames(samples.len()))
            .map(|m| {
                let frame = &samples[m * self.cfg.hop..m * self.cfg.hop + n];
                for ((b, x), w) in buf.iter_mut().zip(frame).zip(&self.window) {
                    *b = Complex::new(x * w, 0.0);
                }
                self.fft.process(&mut buf);
                buf[..=n / 2].iter().map(|c| c.norm()).collect()
            })
            .collect()
    }

    pub fn validate(&self, window: &AudioWindow) -> Result<()> {
        if window.samples.is_empty() {
            return Err(Error::invalid("audio window is empty"));
        }
        if window.sample_rate != self.cfg.sample_rate {
            return Err(Error::invalid(format!(
                "sample rate {} Hz, expected {} Hz",
                window.sample_rate, self.cfg.sample_rate
            )));
        }
        if window.samples.len() < self.cfg.n_fft {
            return Err(Error::invalid(format!(
                "audio window has {} samples, fewer than n_fft = {}",
                window.samples.len(),
                self.cfg.n_fft
            )));
        }
        if let Some(i) = window
            .samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::invalid(format!(
                "sample {i} = {} is outside [-1, 1]",
                window.samples[i]
            )));
        }
        Ok(())
    }

    /// Hann-windowed magnitude STFT → mel filterbank → `ln(max(x, e^-10))`.
    pub fn mel_spectrogram(&self, window: &AudioWindow) -> Result<Spectrogram> {
        self.validate(window)?;
        let frames = self.stft_magnitude(&window.samples);
        let steps = frames.len();
        let floor = LOG_FLOOR.exp();
        let mut data = vec![0.0; self.cfg.n_mels * steps];
        for (m, filter) in self.filters.iter().enumerate() {
            for (t, mag) in frames.iter().enumerate() {
                let energy: f64 = filter.iter().zip(mag).map(|(w, x)| w * x).sum();
                data[m * steps + t] = energy.max(floor).ln();
            }
        }
        Ok(Spectrogram {
            mels: Tensor::new(vec![1, self.cfg.n_mels, steps], data)?,
        })
    }
}

impl Default for MelFrontend {
    fn default() -> Self {
        Self::new(MelConfig::default())
    }
}

/// One-shot convenience wrapper around [`MelFrontend`].
pub fn mel_spectrogram(window: &AudioWindow, cfg: &MelConfig) -> Result<Spectrogram> {
    MelFrontend::new(cfg.clone()).mel_spectrogram(window)
}
