//! The detector family: residual visual and audio branches, the Siamese
//! audio branch feeding attention, spatial attention modules, and the
//! three-layer classifier head.

pub mod attention;
mod config;
mod export;
mod net;
mod params;

pub use attention::{avam, cbam_spatial, AttentionConv, AttentionParams, AvamVars, ConvVars};
pub use config::{AttentionKind, ModelConfig, Variant, FUSED_STAGES, NUM_STAGES};
pub use export::{read_pgm, write_pgm, PgmImage};
pub use net::{is_fake, probability, sidecar_path, BnUpdate, ForwardOutput, FtfdModel, ModelInput};
pub use params::{fan_in_uniform, kaiming_uniform, Bound, ParamEntry, ParamId, ParamStore};
