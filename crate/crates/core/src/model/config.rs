use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The network family compared in the detection experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Audio branch and head only.
    Audio,
    /// Visual branch and head only.
    Visual,
    /// Both branches, no attention.
    Ftfdnet,
    /// Both branches with audio-visual attention after every visual stage.
    FtfdnetAvam,
    /// Both branches with visual-only spatial attention.
    FtfdnetCbam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    None,
    Avam,
    CbamSpatial,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Audio,
        Variant::Visual,
        Variant::Ftfdnet,
        Variant::FtfdnetAvam,
        Variant::FtfdnetCbam,
    ];

    pub fn attention(self) -> AttentionKind {
        match self {
            Variant::FtfdnetAvam => AttentionKind::Avam,
            Variant::FtfdnetCbam => AttentionKind::CbamSpatial,
            _ => AttentionKind::None,
        }
    }

    pub fn uses_visual(self) -> bool {
        self != Variant::Audio
    }

    pub fn uses_audio(self) -> bool {
        self != Variant::Visual
    }

    /// Whether the resized spectrogram feeding the Siamese branch is needed.
    pub fn uses_siamese(self) -> bool {
        self == Variant::FtfdnetAvam
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Audio => "audio",
            Variant::Visual => "visual",
            Variant::Ftfdnet => "ftfdnet",
            Variant::FtfdnetAvam => "ftfdnet-avam",
            Variant::FtfdnetCbam => "ftfdnet-cbam",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown variant {s:?}; expected audio, visual, ftfdnet, ftfdnet-avam or ftfdnet-cbam"
                ))
            })
    }
}

pub const NUM_STAGES: usize = 5;
/// Stages whose outputs feed the classifier head (zero-based).
pub const FUSED_STAGES: [usize; 3] = [2, 3, 4];

/// Hyperparameters of one network instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Consecutive frames per clip (T); they enter as 3·T stacked channels.
    pub frames: usize,
    /// Face-crop height and width.
    pub crop: [usize; 2],
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub dropout_p: f64,
    pub fc_dims: Vec<usize>,
    pub n_mels: usize,
    /// Time steps of the audio-branch input; spectrograms are zero-padded
    /// or truncated to this width.
    pub audio_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::FtfdnetAvam,
            frames: 3,
            crop: [96, 96],
            stage_channels: vec![32, 64, 128, 256, 512],
            stage_strides: vec![1, 2, 2, 2, 2],
            dropout_p: 0.5,
            fc_dims: vec![512, 128, 1],
            n_mels: 80,
            audio_steps: 96,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, frames: usize) -> Self {
        Self {
            variant,
            frames,
            ..Self::default()
        }
    }

    /// Reduced widths and a 32×32 crop, sized for single-core CPU training.
    pub fn desk(variant: Variant, frames: usize) -> Self {
        Self {
            variant,
            frames,
            crop: [32, 32],
            stage_channels: vec![8, 16, 16, 32, 32],
            audio_steps: 16,
            fc_dims: vec![256, 64, 1],
            ..Self::default()
        }
    }

    /// Smallest sensible configuration; used by gradient checks.
    pub fn tiny(variant: Variant, frames: usize) -> Self {
        Self {
            variant,
            frames,
            crop: [16, 16],
            stage_channels: vec![4, 8, 8, 8, 8],
            audio_steps: 8,
            fc_dims: vec![16, 8, 1],
            ..Self::default()
        }
    }

    pub fn visual_channels(&self) -> usize {
        3 * self.frames
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != NUM_STAGES || self.stage_strides.len() != NUM_STAGES {
            return Err(Error::invalid(format!(
                "exactly {NUM_STAGES} stages are required, got {} widths and {} strides",
                self.stage_channels.len(),
                self.stage_strides.len()
            )));
        }
        if self
            .stage_channels
            .iter()
            .chain(&self.stage_strides)
            .any(|&v| v == 0)
        {
            return Err(Error::invalid("stage widths and strides must be positive"));
        }
        if self.fc_dims.len() != 3 || self.fc_dims[2] != 1 || self.fc_dims.contains(&0) {
            return Err(Error::invalid(format!(
                "the head needs three layers ending in a single logit, got {:?}",
                self.fc_dims
            )));
        }
        if self.frames == 0 || self.crop.contains(&0) || self.n_mels == 0 || self.audio_steps == 0 {
            return Err(Error::invalid(
                "frames, crop, n_mels and audio_steps must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!(
                "dropout_p {} not in [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Width of the feature vector entering the head.
    pub fn head_input_dim(&self) -> usize {
        let per_branch: usize = FUSED_STAGES.iter().map(|&s| self.stage_channels[s]).sum();
        per_branch * (self.variant.uses_visual() as usize + self.variant.uses_audio() as usize)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
