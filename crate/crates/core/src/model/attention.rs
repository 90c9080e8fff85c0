//! Spatial attention over visual feature maps.
//!
//! The audio-visual variant pools both the visual features `F_V` and the
//! audio features `F_A` across channels:
//!
//! ```text
//! F_avg = concat(avgpool_c(F_V), avgpool_c(F_A))        2 × H × W
//! F_max = concat(maxpool_c(F_V), maxpool_c(F_A))        2 × H × W
//! F'    = concat(σ(conv_avg(F_avg)), σ(conv_max(F_max)))
//! M     = σ(conv_fuse(F'))                              1 × H × W
//! F_att = F_V ⊙ M   (M broadcast over channels)
//! ```
//!
//! The visual-only variant feeds `concat(avgpool_c(F_V), maxpool_c(F_V))`
//! through a single convolution and sigmoid. All convolutions are 7×7,
//! stride 1, padding 3, so `M` keeps the spatial extent of `F_V`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

use super::params::kaiming_uniform;

pub const ATTENTION_KERNEL: usize = 7;
pub const ATTENTION_PADDING: usize = 3;

/// Weight and bias of one 2 → 1 channel attention convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AttentionConv {
    pub fn zeros() -> Self {
        Self {
            weight: Tensor::zeros(vec![1, 2, ATTENTION_KERNEL, ATTENTION_KERNEL]),
            bias: Tensor::zeros(vec![1]),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let fan_in = 2 * ATTENTION_KERNEL * ATTENTION_KERNEL;
        Self {
            weight: kaiming_uniform(&[1, 2, ATTENTION_KERNEL, ATTENTION_KERNEL], fan_in, rng),
            bias: Tensor::full(vec![1], rng.gen_range(-0.5..0.5)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ConvVars {
        ConvVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

/// Learnable weights of one audio-visual attention module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub conv_avg: AttentionConv,
    pub conv_max: AttentionConv,
    pub conv_fuse: AttentionConv,
}

impl AttentionParams {
    pub fn zeros() -> Self {
        Self {
            conv_avg: AttentionConv::zeros(),
            conv_max: AttentionConv::zeros(),
            conv_fuse: AttentionConv::zeros(),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            conv_avg: AttentionConv::random(rng),
            conv_max: AttentionConv::random(rng),
            conv_fuse: AttentionConv::random(rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> AvamVars {
        AvamVars {
            avg: self.conv_avg.bind(tape),
            max: self.conv_max.bind(tape),
            fuse: self.conv_fuse.bind(tape),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AvamVars {
    pub avg: ConvVars,
    pub max: ConvVars,
    pub fuse: ConvVars,
}

fn attention_conv(tape: &mut Tape, x: Var, conv: ConvVars) -> Result<Var> {
    let w = tape.shape(conv.weight);
    if w != [1, 2, ATTENTION_KERNEL, ATTENTION_KERNEL] {
        return Err(Error::shape(format!(
            "attention convolution must map 2 channels to 1 with a 7x7 kernel, got {w:?}"
        )));
    }
    tape.conv2d(x, conv.weight, conv.bias, 1, ATTENTION_PADDING)
}

/// Audio-visual attention; returns `(F_att, M)`.
pub fn avam(tape: &mut Tape, visual: Var, audio: Var, w: &AvamVars) -> Result<(Var, Var)> {
    let (bv, _, hv, wv) = tape.value(visual).dims4()?;
    let (ba, _, ha, wa) = tape.value(audio).dims4()?;
    if (bv, hv, wv) != (ba, ha, wa) {
        return Err(Error::shape(format!(
            "avam: visual features {:?} and audio features {:?} differ in batch or spatial extent",
            tape.shape(visual),
            tape.shape(audio)
        )));
    }
    let v_avg = tape.channel_avg_pool(visual)?;
    let a_avg = tape.channel_avg_pool(audio)?;
    let f_avg = tape.concat_channels(v_avg, a_avg)?;
    let v_max = tape.channel_max_pool(visual)?;
    let a_max = tape.channel_max_pool(audio)?;
    let f_max = tape.concat_channels(v_max, a_max)?;

    let avg_path = attention_conv(tape, f_avg, w.avg)?;
    let avg_path = tape.sigmoid(avg_path);
    let max_path = attention_conv(tape, f_max, w.max)?;
    let max_path = tape.sigmoid(max_path);
    let fused = tape.concat_channels(avg_path, max_path)?;

    let map = attention_conv(tape, fused, w.fuse)?;
    let map = tape.sigmoid(map);
    let attended = tape.mul_broadcast(visual, map)?;
    Ok((attended, map))
}

/// Visual-only spatial attention; returns `(F_att, M)`.
pub fn cbam_spatial(tape: &mut Tape, visual: Var, conv: ConvVars) -> Result<(Var, Var)> {
    let avg = tape.channel_avg_pool(visual)?;
    let max = tape.channel_max_pool(visual)?;
    let desc = tape.concat_channels(avg, max)?;
    let map = attention_conv(tape, desc, conv)?;
    let map = tape.sigmoid(map);
    let attended = tape.mul_broadcast(visual, map)?;
    Ok((attended, map))
}
