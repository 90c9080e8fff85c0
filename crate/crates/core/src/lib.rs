//! Fake talking-face detection from paired face crops and speech audio.

pub mod audio;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
