//! 2-D cross-correlation kernels (no kernel flip, zero padding).
//!
//! Each batch element is lowered with im2col and multiplied with the weight
//! matrix. Batch elements are processed in parallel; every reduction across
//! the batch happens sequentially in batch order, so results do not depend
//! on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Static description of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let &[batch, in_channels, height, width] = input else {
            return Err(Error::shape(format!(
                "conv2d input must be 4-D, got {input:?}"
            )));
        };
        let &[out_channels, w_in, kh, kw] = weight else {
            return Err(Error::shape(format!(
                "conv2d weight must be 4-D, got {weight:?}"
            )));
        };
        if kh != kw {
            return Err(Error::shape(format!(
                "conv2d kernel must be square, got {kh}x{kw}"
            )));
        }
        if w_in != in_channels {
            return Err(Error::shape(format!(
                "conv2d weight expects {w_in} input channels, input has {in_channels}"
            )));
        }
        if bias != [out_channels] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{out_channels}], got {bias:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if kh > height + 2 * padding || kw > width + 2 * padding {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        Ok(Self {
            batch,
            in_channels,
            height,
            width,
            out_channels,
            kernel: kh,
            stride,
            padding,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [
            self.batch,
            self.out_channels,
            self.out_height(),
            self.out_width(),
        ]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_sample(&self) -> usize {
        self.out_channels * self.out_plane()
    }
}

/// `c = a · b + beta · c` on row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the assertions above keep every strided access inside the
    // borrowed slices; `c` is uniquely borrowed and does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for ci in 0..g.in_channels {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, cols: &[f64], dx: &mut [f64]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for ci in 0..g.in_channels {
        let plane = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution; returns the output buffer in `[B, Cout, H', W']` order.
pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.out_sample()];
    let plane = g.out_plane();
    let patch = g.patch_len();
    out.par_chunks_mut(g.out_sample())
        .zip(input.par_chunks(g.in_sample()))
        .for_each(|(y, x)| {
            let mut cols = vec![0.0; patch * plane];
            im2col(g, x, &mut cols);
            for (co, row) in y.chunks_mut(plane).enumerate() {
                row.fill(bias[co]);
            }
            gemm(
                g.out_channels,
                patch,
                plane,
                weight,
                (patch, 1),
                &cols,
                (plane, 1),
                1.0,
                y,
            );
        });
    out
}

/// Gradients of a convolution given the upstream gradient.
pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> ConvGrads {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let wlen = g.out_channels * patch;
    let mut dx = if need_input {
        vec![0.0; g.batch * g.in_sample()]
    } else {
        Vec::new()
    };

    let per_sample = |(b, dx_b): (usize, Option<&mut [f64]>)| {
        let x = &input[b * g.in_sample()..(b + 1) * g.in_sample()];
        let gy = &grad_out[b * g.out_sample()..(b + 1) * g.out_sample()];
        let mut cols = vec![0.0; patch * plane];
        im2col(g, x, &mut cols);
        let mut dw = vec![0.0; wlen];
        gemm(
            g.out_channels,
            plane,
            patch,
            gy,
            (plane, 1),
            &cols,
            (1, plane),
            0.0,
            &mut dw,
        );
        let db: Vec<f64> = gy.chunks(plane).map(|r| r.iter().sum()).collect();
        if let Some(dx_b) = dx_b {
            gemm(
                patch,
                g.out_channels,
                plane,
                weight,
                (1, patch),
                gy,
                (plane, 1),
                0.0,
                &mut cols,
            );
            col2im(g, &cols, dx_b);
        }
        (dw, db)
    };

    let partials: Vec<(Vec<f64>, Vec<f64>)> = if need_input {
        dx.par_chunks_mut(g.in_sample())
            .enumerate()
            .map(|(b, chunk)| per_sample((b, Some(chunk))))
            .collect()
    } else {
        (0..g.batch)
            .into_par_iter()
            .map(|b| per_sample((b, None)))
            .collect()
    };

    let mut dw = vec![0.0; wlen];
    let mut db = vec![0.0; g.out_channels];
    for (pw, pb) in &partials {
        dw.iter_mut().zip(pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
    }
    ConvGrads {
        input: need_input.then_some(dx),
        weight: dw,
        bias: db,
    }
}

/// Plain matrix product used by the fully connected layer:
/// `out[B, E] = input[B, D] · weight[E, D]ᵀ + bias[E]`.
pub fn linear_forward(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * out_dim);
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    gemm(
        batch,
        in_dim,
        out_dim,
        input,
        (in_dim, 1),
        weight,
        (1, in_dim),
        1.0,
        &mut out,
    );
    out
}

/// Returns `(d_input, d_weight, d_bias)` for [`linear_forward`].
pub fn linear_backward(
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * in_dim];
    gemm(
        batch,
        out_dim,
        in_dim,
        grad_out,
        (out_dim, 1),
        weight,
        (in_dim, 1),
        0.0,
        &mut dx,
    );
    let mut dw = vec![0.0; out_dim * in_dim];
    gemm(
        out_dim,
        batch,
        in_dim,
        grad_out,
        (1, out_dim),
        input,
        (in_dim, 1),
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; out_dim];
    for row in grad_out.chunks(out_dim) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    (dx, dw, db)
}
