use std::path::Path;

use crate::error::{Error, Result};

/// Decoded mono 16-bit PCM.
#[derive(Clone, Debug, PartialEq)]
pub struct WavAudio {
    pub sample_rate: u32,
    /// Raw PCM values as stored.
    pub pcm: Vec<i16>,
}

impl WavAudio {
    /// Samples scaled into `[-1, 1)`.
    pub fn samples(&self) -> Vec<f64> {
        self.pcm.iter().map(|&s| s as f64 / 32768.0).collect()
    }
}

/// Quantizes `[-1, 1]` samples to 16-bit PCM (values are clamped).
pub fn samples_to_pcm16(samples: &[f64]) -> Vec<i16> {
    samples
        .iter()
        .map(|s| (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect()
}

/// Reads a RIFF/WAVE file that must be 16-bit integer mono PCM.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WavAudio> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::file(path, format!("not a readable WAV file: {other}")),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::file(
            path,
            format!("{} channels, expected mono", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::file(
            path,
            format!(
                "{}-bit {:?} samples, expected 16-bit integer PCM",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let pcm = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::file(path, format!("corrupt sample data: {e}")))?;
    Ok(WavAudio {
        sample_rate: spec.sample_rate,
        pcm,
    })
}

pub fn write_wav(path: impl AsRef<Path>, audio: &WavAudio) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::file(path, other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &audio.pcm {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}
