//! Video manifests, clip sampling, batch assembly and the synthetic
//! audio-visual mismatch generator.

mod batch;
mod clip;
mod manifest;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub use batch::{assemble_batch, fit_steps, Batch};
pub use clip::{
    frames_to_tensor, load_clip, sample_clip, ClipSource, SampleClip, Scheme, Subset,
    PAPER_DEFINITE_START,
};
pub use manifest::{
    assign_splits, build_manifest, build_manifest_with, Manifest, ManifestBuild, ManifestOptions,
    ManifestSource, Rejection, Split, VideoEntry, DEFAULT_RATIOS, MANIFEST_VERSION,
};
pub use synth::{synth_generate, write_synth_dataset, SynthDataset, SynthVideo};

/// Side length of the square face crops stored on disk.
pub const FRAME_SIZE: usize = 96;
/// Shortest accepted video, in seconds.
pub const MIN_DURATION: f64 = 1.68;

/// Ground truth; serialized as `0` (real) and `1` (fake).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// BCE target: 0 for real, 1 for fake.
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            v => Err(serde::de::Error::custom(format!(
                "label must be 0 or 1, got {v}"
            ))),
        }
    }
}

/// How a video was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    None,
    Wav2lip,
    Makeittalk,
    Pcavs,
    Synthetic,
}

impl Generator {
    pub const FAKE: [Generator; 4] = [
        Generator::Wav2lip,
        Generator::Makeittalk,
        Generator::Pcavs,
        Generator::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Generator::None => "none",
            Generator::Wav2lip => "wav2lip",
            Generator::Makeittalk => "makeittalk",
            Generator::Pcavs => "pcavs",
            Generator::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        std::iter::once(Generator::None)
            .chain(Generator::FAKE)
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown generator {s:?}")))
    }
}
