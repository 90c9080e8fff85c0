use rand::Rng;

use crate::error::{Error, Result};

use super::conv::{self, ConvGeometry};
use super::tape::{Op, Tape, Var};
use super::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Train mode uses batch statistics and active dropout; eval mode uses
/// running statistics and makes dropout the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics of one train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used to update running statistics.
    pub var: Vec<f64>,
}

impl BatchStats {
    /// Moves running statistics towards this batch with momentum 0.1.
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64]) {
        for (r, m) in running_mean.iter_mut().zip(&self.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in running_var.iter_mut().zip(&self.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, saturated to the open interval (0, 1).
///
/// Far tails that would round to exactly 0 or 1 are clamped to the smallest
/// normal double and to the largest double below one.
pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid_unclamped(x).clamp(f64::MIN_POSITIVE, SIGMOID_MAX)
}

pub(super) fn sigmoid_unclamped(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl Tape {
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geometry = ConvGeometry::new(
            self.shape(input),
            self.shape(weight),
            self.shape(bias),
            stride,
            padding,
        )?;
        let out = conv::conv2d_forward(
            &geometry,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(geometry.output_shape().to_vec(), out)?;
        let needs = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            needs,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
        ))
    }

    /// Mean over the channel axis: `[B, C, H, W] → [B, 1, H, W]`.
    pub fn channel_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (b, c, h, w) = x.dims4()?;
        let plane = h * w;
        let mut out = vec![0.0; b * plane];
        for bi in 0..b {
            let dst = &mut out[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let src = &x.data()[(bi * c + ci) * plane..][..plane];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= c as f64);
        }
        let value = Tensor::new(vec![b, 1, h, w], out)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, needs, Op::ChannelAvgPool { input }))
    }

    /// Maximum over the channel axis; ties resolve to the lowest channel.
    pub fn channel_max_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (b, c, h, w) = x.dims4()?;
        let plane = h * w;
        let mut out = vec![f64::NEG_INFINITY; b * plane];
        let mut argmax = vec![0u32; b * plane];
        for bi in 0..b {
            for ci in 0..c {
                let src = &x.data()[(bi * c + ci) * plane..][..plane];
                for p in 0..plane {
                    if src[p] > out[bi * plane + p] {
                        out[bi * plane + p] = src[p];
                        argmax[bi * plane + p] = ci as u32;
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, 1, h, w], out)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, needs, Op::ChannelMaxPool { input, argmax }))
    }

    /// Concatenates along axis 1. Works for `[B, C, H, W]` maps and `[B, D]`
    /// feature vectors; all other extents must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape(format!(
                "concat_channels: {sa:?} and {sb:?} must agree on every axis but 1"
            )));
        }
        let inner: usize = sa[2..].iter().product();
        let (la, lb) = (sa[1] * inner, sb[1] * inner);
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(xa.len() + xb.len());
        for (ca, cb) in xa.chunks(la).zip(xb.chunks(lb)) {
            out.extend_from_slice(ca);
            out.extend_from_slice(cb);
        }
        let value = Tensor::new(shape, out)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, needs, Op::Concat { a, b }))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let data = self
            .value(input)
            .data()
            .iter()
            .map(|&x| sigmoid_scalar(x))
            .collect();
        let value = Tensor {
            shape: self.shape(input).to_vec(),
            data,
        };
        let needs = self.any_grad(&[input]);
        self.push(value, needs, Op::Sigmoid { input })
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let data = self
            .value(input)
            .data()
            .iter()
            .map(|&x| x.max(0.0))
            .collect();
        let value = Tensor {
            shape: self.shape(input).to_vec(),
            data,
        };
        let needs = self.any_grad(&[input]);
        self.push(value, needs, Op::Relu { input })
    }

    /// Multiplies every channel of `a` by the single-channel `map`.
    pub fn mul_broadcast(&mut self, a: Var, map: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let (mb, mc, mh, mw) = self.value(map).dims4()?;
        if (mb, mc, mh, mw) != (b, 1, h, w) {
            return Err(Error::shape(format!(
                "mul_broadcast: map {:?} does not fit features {:?}",
                self.shape(map),
                self.shape(a)
            )));
        }
        let plane = h * w;
        let (av, mv) = (self.value(a).data(), self.value(map).data());
        let mut out = vec![0.0; av.len()];
        for bi in 0..b {
            let m = &mv[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                for p in 0..plane {
                    out[off + p] = av[off + p] * m[p];
                }
            }
        }
        let value = Tensor::new(vec![b, c, h, w], out)?;
        let needs = self.any_grad(&[a, map]);
        Ok(self.push(value, needs, Op::MulBroadcast { a, map }))
    }

    /// `input[B, D] · weight[E, D]ᵀ + bias[E]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        let (&[batch, in_dim], &[out_dim, w_in]) = (si, sw) else {
            return Err(Error::shape(format!(
                "fully_connected: input {si:?} and weight {sw:?} must be 2-D"
            )));
        };
        if w_in != in_dim || sb != [out_dim] {
            return Err(Error::shape(format!(
                "fully_connected: input {si:?}, weight {sw:?}, bias {sb:?} are incompatible"
            )));
        }
        let out = conv::linear_forward(
            batch,
            in_dim,
            out_dim,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![batch, out_dim], out)?;
        let needs = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            needs,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Spatial mean: `[B, C, H, W] → [B, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let plane = (h * w) as f64;
        let data = self
            .value(input)
            .data()
            .chunks(h * w)
            .map(|ch| ch.iter().sum::<f64>() / plane)
            .collect();
        let value = Tensor::new(vec![b, c], data)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, needs, Op::GlobalAvgPool { input }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, needs, Op::Add { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let data = self
            .value(input)
            .data()
            .iter()
            .map(|x| x * factor)
            .collect();
        let value = Tensor {
            shape: self.shape(input).to_vec(),
            data,
        };
        let needs = self.any_grad(&[input]);
        self.push(value, needs, Op::Scale { input, factor })
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        let needs = self.any_grad(&[input]);
        self.push(Tensor::scalar(total), needs, Op::Sum { input })
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, needs, Op::Reshape { input }))
    }

    /// Per-channel batch normalization.
    ///
    /// In [`Mode::Train`] the batch statistics are used and returned so the
    /// caller can update its running statistics; in [`Mode::Eval`] the given
    /// running statistics are used and `None` is returned.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (b, c, h, w) = self.value(input).dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(format!(
                    "batch_norm: {name} {:?} does not match {c} channels",
                    self.shape(v)
                )));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(format!(
                "batch_norm: running statistics must have {c} entries"
            )));
        }
        let plane = h * w;
        let count = b * plane;
        let x = self.value(input).data();
        let (mean, var_biased, stats) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::invalid(
                        "batch_norm in train mode needs at least two values per channel",
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        mean[ci] += x[(bi * c + ci) * plane..][..plane].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for bi in 0..b {
                    for ci in 0..c {
                        var[ci] += x[(bi * c + ci) * plane..][..plane]
                            .iter()
                            .map(|v| (v - mean[ci]).powi(2))
                            .sum::<f64>();
                    }
                }
                let unbiased = var.iter().map(|v| v / (count - 1) as f64).collect();
                var.iter_mut().for_each(|v| *v /= count as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
        };
        let inv_std: Vec<f64> = var_biased
            .iter()
            .map(|v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                for p in 0..plane {
                    let xh = (x[off + p] - mean[ci]) * inv_std[ci];
                    xhat[off + p] = xh;
                    out[off + p] = gv[ci] * xh + bv[ci];
                }
            }
        }
        let value = Tensor::new(vec![b, c, h, w], out)?;
        let needs = self.any_grad(&[input, gamma, beta]);
        let op = match mode {
            Mode::Train => Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Mode::Eval => Op::BatchNormEval {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        };
        Ok((self.push(value, needs, op), stats))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(input).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .value(input)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let value = Tensor {
            shape: self.shape(input).to_vec(),
            data,
        };
        let needs = self.any_grad(&[input]);
        Ok(self.push(value, needs, Op::Dropout { input, mask }))
    }

    /// Mean binary cross entropy of logits against 0/1 labels, evaluated as
    /// `softplus(x) - y·x` so it never takes the log of a rounded sigmoid.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.is_empty() {
            return Err(Error::invalid("bce_with_logits on an empty batch"));
        }
        if x.len() != labels.len() {
            return Err(Error::shape(format!(
                "bce_with_logits: {} logits but {} labels",
                x.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        let loss = bce_terms(x, labels) / x.len() as f64;
        let needs = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            needs,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }
}

pub(crate) fn bce_terms(logits: &[f64], labels: &[f64]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| softplus(x) - y * x)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let w = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        let y = tape.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0]);
    }

    #[test]
    fn conv_counts_overlapping_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert_eq!(out.at4(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(out.at4(0, 0, h, w), 4.0);
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 3, 3]));
        let w = tape.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        assert!(matches!(tape.conv2d(x, w, b, 1, 0), Err(Error::Shape(_))));
        let w = tape.constant(Tensor::zeros(vec![1, 2, 5, 5]));
        assert!(tape.conv2d(x, w, b, 1, 0).is_err());
        assert!(tape.conv2d(x, w, b, 1, 1).is_ok());
    }

    #[test]
    fn channel_pools() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let avg = tape.channel_avg_pool(x).unwrap();
        let max = tape.channel_max_pool(x).unwrap();
        assert_eq!(tape.value(avg).data(), &[3., 4., 5., 6.]);
        assert_eq!(tape.value(max).data(), &[5., 6., 7., 8.]);

        let single = tape.constant(t(&[1, 1, 2, 2], &[1., -2., 3., 4.]));
        let avg1 = tape.channel_avg_pool(single).unwrap();
        assert_eq!(tape.value(avg1).data(), tape.value(single).data());
    }

    #[test]
    fn max_pool_ties_route_to_channel_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(vec![1, 3, 2, 2], 1.5));
        let m = tape.channel_max_pool(x).unwrap();
        assert_eq!(tape.value(m).data(), &[1.5; 4]);
        let loss = tape.sum(m);
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(&g.data()[..4], &[1.0; 4]);
        assert!(g.data()[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_and_its_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[1, 1, 1, 1], &[1.0]));
        let b = tape.param(t(&[1, 1, 1, 1], &[2.0]));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[1, 2, 1, 1]);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0]);
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0]);

        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(vec![2, 1, 3, 3]));
        let b = tape.param(Tensor::zeros(vec![2, 1, 3, 4]));
        assert!(tape.concat_channels(a, b).is_err());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let tiny = sigmoid_scalar(-1000.0);
        assert!(tiny > 0.0 && tiny <= 1e-300);
        assert!(sigmoid_scalar(1000.0) < 1.0);
        assert!(sigmoid_scalar(f64::NAN).is_nan());
    }

    #[test]
    fn relu_and_broadcast_product() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[-3.0, 3.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0]);

        let f = tape.constant(Tensor::from_fn(vec![1, 3, 2, 2], |i| i as f64 - 4.0));
        let m = tape.constant(Tensor::full(vec![1, 1, 2, 2], 0.5));
        let y = tape.mul_broadcast(f, m).unwrap();
        let expect: Vec<f64> = tape.value(f).data().iter().map(|v| v * 0.5).collect();
        assert_eq!(tape.value(y).data(), expect.as_slice());
    }

    #[test]
    fn batch_norm_constant_input_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![2, 2, 2, 2], |i| {
            if i % 8 < 4 {
                3.0
            } else {
                -1.0
            }
        }));
        let g = tape.constant(Tensor::full(vec![2], 1.0));
        let b = tape.constant(Tensor::zeros(vec![2]));
        let (y, stats) = tape
            .batch_norm(x, g, b, &[0.0; 2], &[1.0; 2], Mode::Train)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let stats = stats.unwrap();
        assert_eq!(stats.mean, vec![3.0, -1.0]);
    }

    #[test]
    fn batch_norm_eval_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 1, 1], 3.0));
        let g = tape.constant(Tensor::full(vec![1], 2.0));
        let b = tape.constant(Tensor::full(vec![1], 1.0));
        let (y, stats) = tape
            .batch_norm(x, g, b, &[0.0], &[1.0], Mode::Eval)
            .unwrap();
        assert!(stats.is_none());
        let expect = 2.0 * 3.0 / (1.0f64 + 1e-5).sqrt() + 1.0;
        assert!((tape.value(y).data()[0] - expect).abs() < 1e-14);
        assert!((expect - 6.99997).abs() < 1e-5);
    }

    #[test]
    fn batch_norm_train_rejects_single_value() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 1, 1], 3.0));
        let g = tape.constant(Tensor::full(vec![1], 1.0));
        let b = tape.constant(Tensor::zeros(vec![1]));
        assert!(tape
            .batch_norm(x, g, b, &[0.0], &[1.0], Mode::Train)
            .is_err());
    }

    #[test]
    fn batch_norm_running_update() {
        let stats = BatchStats {
            mean: vec![1.0],
            var: vec![3.0],
        };
        let (mut m, mut v) = (vec![0.0], vec![1.0]);
        stats.update_running(&mut m, &mut v);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn dropout_identity_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(vec![10], |i| i as f64));
        let a = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        let b = tape.dropout(x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(a), tape.value(x));
        assert_eq!(tape.value(b), tape.value(x));
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn backward_rules() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(vec![2, 3], |i| i as f64));
        let y = tape.scale(x, 2.0);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 2.0));
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))));

        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(vec![2]));
        assert!(tape.backward(x).is_err());

        // d sigmoid(w x) / dw at w = 0, x = 1
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(vec![1, 1]));
        let x = tape.constant(Tensor::full(vec![1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let z = tape.fully_connected(x, w, b).unwrap();
        let s = tape.sigmoid(z);
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[0.25]);
    }

    #[test]
    fn bce_basics() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(vec![1, 1]));
        for y in [0.0, 1.0] {
            let l = tape.bce_with_logits(x, &[y]).unwrap();
            assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        }
        assert!(tape.bce_with_logits(x, &[0.5]).is_err());
        let far = tape.constant(Tensor::full(vec![1, 1], -1e4));
        let l = tape.bce_with_logits(far, &[0.0]).unwrap();
        let v = tape.value(l).data()[0];
        assert!(v.is_finite() && v.abs() < 1e-300);
    }
}
