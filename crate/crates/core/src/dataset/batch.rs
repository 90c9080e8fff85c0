use crate::audio::{resize_area, resize_bilinear};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelInput};
use crate::tensor::Tensor;

use super::SampleClip;

/// Network inputs plus targets for a list of clips.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: ModelInput,
    /// BCE targets, 0 = real, 1 = fake.
    pub labels: Vec<f64>,
    pub video_ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn to_grid(src: &Tensor, [h, w]: [usize; 2]) -> Result<Tensor> {
    let (sh, sw) = (src.shape()[1], src.shape()[2]);
    if sh % h == 0 && sw % w == 0 {
        resize_area(src, h, w)
    } else {
        resize_bilinear(src, h, w)
    }
}

/// Zero-pads or truncates `[1, n_mels, steps]` along time to `steps`.
pub fn fit_steps(mels: &Tensor, steps: usize) -> Result<Tensor> {
    let &[1, n_mels, have] = mels.shape() else {
        return Err(Error::shape(format!(
            "spectrogram must be [1, n_mels, steps], got {:?}",
            mels.shape()
        )));
    };
    let mut data = vec![0.0; n_mels * steps];
    let keep = have.min(steps);
    for m in 0..n_mels {
        data[m * steps..m * steps + keep].copy_from_slice(&mels.data()[m * have..m * have + keep]);
    }
    Tensor::new(vec![1, n_mels, steps], data)
}

/// Converts clips into the inputs `cfg`'s variant consumes: crops area- or
/// bilinearly resized to `cfg.crop`, spectrograms fitted to
/// `cfg.audio_steps`.
pub fn assemble_batch(clips: &[SampleClip], cfg: &ModelConfig) -> Result<Batch> {
    if clips.is_empty() {
        return Err(Error::invalid("cannot assemble an empty batch"));
    }
    let variant = cfg.variant;
    let mut input = ModelInput::default();
    if variant.uses_visual() {
        let items = clips
            .iter()
            .map(|c| {
                if c.visual.shape()[0] != cfg.visual_channels() {
                    return Err(Error::shape(format!(
                        "clip {} has {} frames, the model expects {}",
                        c.video_id,
                        c.frames(),
                        cfg.frames
                    )));
                }
                to_grid(&c.visual, cfg.crop)
            })
            .collect::<Result<Vec<_>>>()?;
        input.visual = Some(Tensor::stack(&items)?);
    }
    if variant.uses_audio() {
        let items = clips
            .iter()
            .map(|c| {
                if c.mel.n_mels() != cfg.n_mels {
                    return Err(Error::shape(format!(
                        "clip {} has {} mel bins, the model expects {}",
                        c.video_id,
                        c.mel.n_mels(),
                        cfg.n_mels
                    )));
                }
                fit_steps(&c.mel.mels, cfg.audio_steps)
            })
            .collect::<Result<Vec<_>>>()?;
        input.mel = Some(Tensor::stack(&items)?);
    }
    if variant.uses_siamese() {
        let items = clips
            .iter()
            .map(|c| to_grid(&c.mel_resized, cfg.crop))
            .collect::<Result<Vec<_>>>()?;
        input.mel_resized = Some(Tensor::stack(&items)?);
    }
    Ok(Batch {
        input,
        labels: clips.iter().map(|c| c.label.target()).collect(),
        video_ids: clips.iter().map(|c| c.video_id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_steps_pads_with_zeros_and_truncates() {
        let m = Tensor::new(vec![1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(
            fit_steps(&m, 5).unwrap().data(),
            &[1., 2., 3., 0., 0., 4., 5., 6., 0., 0.]
        );
        assert_eq!(fit_steps(&m, 2).unwrap().data(), &[1., 2., 4., 5.]);
    }
}
