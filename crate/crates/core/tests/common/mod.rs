//! Check bodies shared by the per-area test targets and the acceptance run.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
