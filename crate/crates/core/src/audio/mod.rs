//! Audio frontend: WAV ingestion, window alignment, log-mel spectrograms
//! and the bilinear resize that maps a spectrogram onto a face-crop grid.

mod mel;
mod resize;
mod wav;

use std::ops::Range;

pub use mel::{
    hann_window, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig, MelFrontend,
    Spectrogram, LOG_FLOOR,
};
pub use resize::{resize_area, resize_bilinear};
pub use wav::{read_wav, samples_to_pcm16, write_wav, WavAudio};

use crate::error::{Error, Result};

/// Video frame rate assumed when aligning audio to frames.
pub const VIDEO_FPS: f64 = 25.0;

/// A slice of mono PCM covering the video frames `covers_frames`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWindow {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub covers_frames: Range<usize>,
}

impl AudioWindow {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn frame_to_sample(frame: usize, fps: f64, sample_rate: u32) -> usize {
    (frame as f64 / fps * sample_rate as f64).round() as usize
}

/// Sample range of the audio that accompanies frames `[t, t + frames)`.
///
/// The nominal range is `[t/fps·sr, (t+frames)/fps·sr)`. A range shorter than
/// one FFT frame is extended to `n_fft` samples so a single-frame clip still
/// yields one spectrogram column. The end is clamped to the stream; if that
/// leaves fewer than `n_fft` samples the start moves back instead.
pub fn align_window(
    video_fps: f64,
    t: usize,
    frames: usize,
    sample_rate: u32,
    stream_len: usize,
    n_fft: usize,
) -> Result<Range<usize>> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(video_fps > 0.0) || frames == 0 {
        return Err(Error::invalid(format!(
            "cannot align {frames} frames at {video_fps} fps"
        )));
    }
    let start = frame_to_sample(t, video_fps, sample_rate);
    let end = frame_to_sample(t + frames, video_fps, sample_rate);
    if start >= stream_len || stream_len < n_fft {
        return Err(Error::data(format!(
            "frame {t} starts at sample {start}; the stream has {stream_len} samples \
             (n_fft = {n_fft})"
        )));
    }
    let end = end.max(start + n_fft).min(stream_len);
    let start = start.min(end - n_fft);
    Ok(start..end)
}

/// Cuts the aligned window out of a full stream.
pub fn window_for_frames(
    samples: &[f64],
    sample_rate: u32,
    t: usize,
    frames: usize,
    n_fft: usize,
) -> Result<AudioWindow> {
    let range = align_window(VIDEO_FPS, t, frames, sample_rate, samples.len(), n_fft)?;
    Ok(AudioWindow {
        samples: samples[range].to_vec(),
        sample_rate,
        covers_frames: t..t + frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_arithmetic() {
        assert_eq!(
            align_window(25.0, 10, 3, 16_000, 100_000, 800).unwrap(),
            6400..8320
        );
        assert_eq!(
            align_window(25.0, 0, 3, 16_000, 100_000, 800).unwrap(),
            0..1920
        );
        assert!(align_window(25.0, 100, 3, 16_000, 32_000, 800).is_err());
    }

    #[test]
    fn short_ranges_extend_to_one_fft_frame() {
        let r = align_window(25.0, 4, 1, 16_000, 100_000, 800).unwrap();
        assert_eq!(r, 2560..3360);
        // clamped at the end of the stream
        let r = align_window(25.0, 0, 3, 16_000, 1000, 800).unwrap();
        assert_eq!(r, 0..1000);
        assert!(align_window(25.0, 0, 3, 16_000, 799, 800).is_err());
        // a single last frame borrows audio from before its start
        assert_eq!(
            align_window(25.0, 49, 1, 16_000, 32_000, 800).unwrap(),
            31_200..32_000
        );
    }

    #[test]
    fn window_duration_matches_frames_within_a_hop() {
        let audio = vec![0.0; 48_000];
        for frames in [1, 3, 5] {
            let w = window_for_frames(&audio, 16_000, 7, frames, 800).unwrap();
            assert!((w.duration() - frames as f64 / VIDEO_FPS).abs() <= 200.0 / 16_000.0);
        }
    }
}
