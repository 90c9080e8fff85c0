use crate::error::{Error, Result};

use super::conv::{self, ConvGeometry};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(super) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    ChannelAvgPool {
        input: Var,
    },
    ChannelMaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sigmoid {
        input: Var,
    },
    Relu {
        input: Var,
    },
    MulBroadcast {
        a: Var,
        map: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
}

pub(super) struct Node {
    pub(super) value: Tensor,
    pub(super) needs_grad: bool,
    pub(super) op: Op,
}

/// Record of operations for one forward pass.
///
/// A tape supports exactly one [`backward`](Tape::backward); running it
/// again without recording a new forward pass is an error.
#[derive(Default)]
pub struct Tape {
    pub(super) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an input value. Gradients are kept for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that takes part in differentiation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last backward pass with respect to `var`, shaped like
    /// its value. `None` before backward or for values that do not require
    /// gradients.
    pub fn grad(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[var.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    pub(super) fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(super) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Propagates d(loss)/d(x) to every value that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        let n = self.nodes[loss.0].value.numel();
        if n != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut self.grads[var.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn propagate(&mut self, index: usize, g: &[f64]) {
        let node = &self.nodes[index];
        let out = node.value.data();
        let mut deltas: Vec<(Var, Vec<f64>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            } => {
                let grads = conv::conv2d_backward(
                    geometry,
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    g,
                    self.wants(*input),
                );
                if let Some(dx) = grads.input {
                    deltas.push((*input, dx));
                }
                deltas.push((*weight, grads.weight));
                deltas.push((*bias, grads.bias));
            }
            Op::ChannelAvgPool { input } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let plane = h * w;
                let scale = 1.0 / c as f64;
                let mut dx = vec![0.0; b * c * plane];
                for bi in 0..b {
                    let gs = &g[bi * plane..(bi + 1) * plane];
                    for ci in 0..c {
                        let dst = &mut dx[(bi * c + ci) * plane..][..plane];
                        dst.iter_mut().zip(gs).for_each(|(d, v)| *d = v * scale);
                    }
                }
                deltas.push((*input, dx));
            }
            Op::ChannelMaxPool { input, argmax } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let plane = h * w;
                let mut dx = vec![0.0; b * c * plane];
                for bi in 0..b {
                    for p in 0..plane {
                        let ci = argmax[bi * plane + p] as usize;
                        dx[(bi * c + ci) * plane + p] += g[bi * plane + p];
                    }
                }
                deltas.push((*input, dx));
            }
            Op::Concat { a, b } => {
                let sa = self.nodes[a.0].value.numel();
                let sb = self.nodes[b.0].value.numel();
                let batch = node.value.shape()[0];
                let (la, lb) = (sa / batch, sb / batch);
                let mut da = Vec::with_capacity(sa);
                let mut db = Vec::with_capacity(sb);
                for chunk in g.chunks(la + lb) {
                    da.extend_from_slice(&chunk[..la]);
                    db.extend_from_slice(&chunk[la..]);
                }
                deltas.push((*a, da));
                deltas.push((*b, db));
            }
            Op::Sigmoid { input } => {
                let dx = g
                    .iter()
                    .zip(out)
                    .map(|(gv, s)| gv * s * (1.0 - s))
                    .collect();
                deltas.push((*input, dx));
            }
            Op::Relu { input } => {
                let x = self.nodes[input.0].value.data();
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                deltas.push((*input, dx));
            }
            Op::MulBroadcast { a, map } => {
                let (b, c, h, w) = self.nodes[a.0].value.dims4().expect("4-D");
                let plane = h * w;
                let av = self.nodes[a.0].value.data();
                let mv = self.nodes[map.0].value.data();
                if self.wants(*a) {
                    let mut da = vec![0.0; av.len()];
                    for bi in 0..b {
                        let m = &mv[bi * plane..(bi + 1) * plane];
                        for ci in 0..c {
                            let off = (bi * c + ci) * plane;
                            for p in 0..plane {
                                da[off + p] = g[off + p] * m[p];
                            }
                        }
                    }
                    deltas.push((*a, da));
                }
                if self.wants(*map) {
                    let mut dm = vec![0.0; mv.len()];
                    for bi in 0..b {
                        let dst = &mut dm[bi * plane..(bi + 1) * plane];
                        for ci in 0..c {
                            let off = (bi * c + ci) * plane;
                            for p in 0..plane {
                                dst[p] += g[off + p] * av[off + p];
                            }
                        }
                    }
                    deltas.push((*map, dm));
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = &self.nodes[input.0].value;
                let wt = &self.nodes[weight.0].value;
                let (batch, in_dim) = (x.shape()[0], x.shape()[1]);
                let out_dim = wt.shape()[0];
                let (dx, dw, db) =
                    conv::linear_backward(batch, in_dim, out_dim, x.data(), wt.data(), g);
                deltas.push((*input, dx));
                deltas.push((*weight, dw));
                deltas.push((*bias, db));
            }
            Op::GlobalAvgPool { input } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let plane = h * w;
                let scale = 1.0 / plane as f64;
                let mut dx = vec![0.0; b * c * plane];
                for (i, chunk) in dx.chunks_mut(plane).enumerate() {
                    chunk.fill(g[i] * scale);
                }
                deltas.push((*input, dx));
            }
            Op::Add { a, b } => {
                deltas.push((*a, g.to_vec()));
                deltas.push((*b, g.to_vec()));
            }
            Op::Scale { input, factor } => {
                deltas.push((*input, g.iter().map(|v| v * factor).collect()));
            }
            Op::Sum { input } => {
                let n = self.nodes[input.0].value.numel();
                deltas.push((*input, vec![g[0]; n]));
            }
            Op::Reshape { input } => {
                deltas.push((*input, g.to_vec()));
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let plane = h * w;
                let count = (b * plane) as f64;
                let gam = self.nodes[gamma.0].value.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        for p in 0..plane {
                            dgamma[ci] += g[off + p] * xhat[off + p];
                            dbeta[ci] += g[off + p];
                        }
                    }
                }
                let mut dx = vec![0.0; b * c * plane];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        let k = gam[ci] * inv_std[ci] / count;
                        for p in 0..plane {
                            dx[off + p] =
                                k * (count * g[off + p] - dbeta[ci] - xhat[off + p] * dgamma[ci]);
                        }
                    }
                }
                deltas.push((*input, dx));
                deltas.push((*gamma, dgamma));
                deltas.push((*beta, dbeta));
            }
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let plane = h * w;
                let gam = self.nodes[gamma.0].value.data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; b * c * plane];
                for bi in 0..b {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        for p in 0..plane {
                            dgamma[ci] += g[off + p] * xhat[off + p];
                            dbeta[ci] += g[off + p];
                            dx[off + p] = g[off + p] * gam[ci] * inv_std[ci];
                        }
                    }
                }
                deltas.push((*input, dx));
                deltas.push((*gamma, dgamma));
                deltas.push((*beta, dbeta));
            }
            Op::Dropout { input, mask } => {
                deltas.push((*input, g.iter().zip(mask).map(|(a, m)| a * m).collect()));
            }
            Op::BceWithLogits { logits, labels } => {
                let x = self.nodes[logits.0].value.data();
                let n = x.len() as f64;
                let dx = x
                    .iter()
                    .zip(labels)
                    .map(|(xv, y)| g[0] * (super::ops::sigmoid_unclamped(*xv) - y) / n)
                    .collect();
                deltas.push((*logits, dx));
            }
        }
        for (var, delta) in deltas {
            self.accumulate(var, delta);
        }
    }
}
