use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn planes(src: &Tensor) -> Result<(usize, usize, usize)> {
    match src.shape() {
        &[h, w] => Ok((1, h, w)),
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(format!(
            "resize expects [H, W] or [C, H, W], got {s:?}"
        ))),
    }
}

/// Bilinear resize of every plane of a `[C, H, W]` (or `[H, W]`) tensor to
/// `[C, target_h, target_w]`, using half-pixel centers (corners not
/// aligned) with source coordinates clamped to the valid range.
pub fn resize_bilinear(src: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let (c, h, w) = planes(src)?;
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if (h, w) == (target_h, target_w) {
        return src.reshape(vec![c, h, w]);
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = taps(target_h, h);
    let xs = taps(target_w, w);
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for plane in src.data().chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, target_h, target_w], out)
}

/// Box-filter downscale by an integer factor along both axes.
pub fn resize_area(src: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let (c, h, w) = planes(src)?;
    if target_h == 0 || target_w == 0 || h % target_h != 0 || w % target_w != 0 {
        return Err(Error::invalid(format!(
            "area resize needs integer factors, {h}x{w} -> {target_h}x{target_w}"
        )));
    }
    let (fy, fx) = (h / target_h, w / target_w);
    let norm = 1.0 / (fy * fx) as f64;
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for plane in src.data().chunks(h * w) {
        for oy in 0..target_h {
            for ox in 0..target_w {
                let mut acc = 0.0;
                for y in oy * fy..(oy + 1) * fy {
                    acc += plane[y * w + ox * fx..y * w + (ox + 1) * fx]
                        .iter()
                        .sum::<f64>();
                }
                out.push(acc * norm);
            }
        }
    }
    Tensor::new(vec![c, target_h, target_w], out)
}
