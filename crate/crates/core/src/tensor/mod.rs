//! Dense f64 tensors and a tape-based reverse-mode differentiator.
//!
//! [`Tensor`] is a plain value: a shape and a contiguous row-major buffer.
//! Differentiation happens on a [`Tape`]: leaves are registered with a
//! `requires_grad` flag, every operation records its inputs and a backward
//! rule, and [`Tape::backward`] replays the record in reverse. Gradients of
//! leaves are read back with [`Tape::grad`].
//!
//! 4-D feature maps use the batch × channels × height × width layout.

mod checkpoint;
pub mod conv;
mod ops;
mod tape;

pub use checkpoint::{
    read_tensors, read_tensors_from, write_tensors, write_tensors_to, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use ops::{sigmoid_scalar, softplus, BatchStats, Mode};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive and match the
    /// buffer length.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::shape(format!(
                "item() needs one element, shape is {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Extents of a 4-D tensor as `(batch, channels, height, width)`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok((b, c, h, w)),
            s => Err(Error::shape(format!("expected a 4-D tensor, got {s:?}"))),
        }
    }

    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * cc + c) * hh + h) * ww + w]
    }

    /// Splits a tensor along axis 1 into the first `first` channels and the rest.
    pub fn split_channels(&self, first: usize) -> Result<(Tensor, Tensor)> {
        if self.rank() < 2 || first == 0 || first >= self.shape[1] {
            return Err(Error::shape(format!(
                "cannot split {:?} after {first} channels",
                self.shape
            )));
        }
        let batch = self.shape[0];
        let channels = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut a = Vec::with_capacity(batch * first * inner);
        let mut b = Vec::with_capacity(batch * (channels - first) * inner);
        for chunk in self.data.chunks(channels * inner) {
            a.extend_from_slice(&chunk[..first * inner]);
            b.extend_from_slice(&chunk[first * inner..]);
        }
        let mut sa = self.shape.clone();
        sa[1] = first;
        let mut sb = self.shape.clone();
        sb[1] = channels - first;
        Ok((Tensor::new(sa, a)?, Tensor::new(sb, b)?))
    }

    /// Selects one batch element, keeping a leading batch axis of 1.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        if self.rank() < 1 || index >= self.shape[0] {
            return Err(Error::shape(format!(
                "batch index {index} out of range for {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(
            shape,
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }

    /// Stacks same-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(format!(
                    "stack: {:?} differs from {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn split_inverts_stacking_of_channels() {
        let t = Tensor::from_fn(vec![2, 3, 2, 2], |i| i as f64);
        let (a, b) = t.split_channels(1).unwrap();
        assert_eq!(a.shape(), &[2, 1, 2, 2]);
        assert_eq!(b.shape(), &[2, 2, 2, 2]);
        assert_eq!(a.data()[..4], [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.data()[..4], [4.0, 5.0, 6.0, 7.0]);
    }
}
