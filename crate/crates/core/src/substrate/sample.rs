//! Bilinear box sampling: the one interpolation kernel behind full-frame
//! resizing and roi cropping.
//!
//! The convention is corner-aligned and fixed globally: output sample `j` of
//! `out_w` maps to source coordinate `(left + u * width) * (W - 1)` with
//! `u = j / (out_w - 1)`, so output corners land exactly on the box corners.
//! A one-element output axis samples the box origin.

use super::tensor::Tensor;
use super::Scalar;
use crate::error::{Error, Result};

/// Normalized sub-window of a source frame, coordinates in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBox {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl SampleBox {
    pub fn full() -> Self {
        SampleBox {
            top: 0.0,
            left: 0.0,
            height: 1.0,
            width: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if !(inside(self.top)
            && inside(self.left)
            && inside(self.top + self.height)
            && inside(self.left + self.width))
        {
            return Err(Error::config(format!("roi box out of [0,1]: {self:?}")));
        }
        if self.height <= 0.0 || self.width <= 0.0 {
            return Err(Error::config(format!("empty roi box: {self:?}")));
        }
        Ok(())
    }
}

/// Per-axis sample positions: left index and interpolation weight.
fn axis_taps(src: usize, out: usize, origin: f64, span: f64) -> Vec<(usize, usize, f64)> {
    let last = (src - 1) as f64;
    (0..out)
        .map(|j| {
            let u = if out > 1 { j as f64 / (out - 1) as f64 } else { 0.0 };
            let pos = ((origin + u * span) * last).clamp(0.0, last);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub(crate) fn sample_box_forward<T: Scalar>(
    x: &Tensor<T>,
    bx: &SampleBox,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    bx.validate()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("sample: zero output size"));
    }
    let (n, c, h, w) = x.dims4()?;
    let taps_y = axis_taps(h, out_h, bx.top, bx.height);
    let taps_x = axis_taps(w, out_w, bx.left, bx.width);
    let mut out = Tensor::zeros(vec![n, c, out_h, out_w]);
    let xs = x.data();
    let plane_in = h * w;
    let plane_out = out_h * out_w;
    for p in 0..n * c {
        let src = &xs[p * plane_in..(p + 1) * plane_in];
        let dst = &mut out.data_mut()[p * plane_out..(p + 1) * plane_out];
        for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
            let wy1 = T::from_f64(fy).unwrap();
            let wy0 = T::one() - wy1;
            let row0 = &src[y0 * w..y0 * w + w];
            let row1 = &src[y1 * w..y1 * w + w];
            let out_row = &mut dst[oy * out_w..(oy + 1) * out_w];
            for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                let wx1 = T::from_f64(fx).unwrap();
                let wx0 = T::one() - wx1;
                out_row[ox] = wy0 * (wx0 * row0[x0] + wx1 * row0[x1])
                    + wy1 * (wx0 * row1[x0] + wx1 * row1[x1]);
            }
        }
    }
    Ok(out)
}

/// Scatter the upstream gradient back through the four taps of each output
/// sample. Sequential on purpose: scattered writes overlap between samples.
pub(crate) fn sample_box_backward<T: Scalar>(
    g: &Tensor<T>,
    bx: &SampleBox,
    x_shape: &[usize],
) -> Result<Tensor<T>> {
    let (n, c, out_h, out_w) = g.dims4()?;
    let (h, w) = (x_shape[2], x_shape[3]);
    let taps_y = axis_taps(h, out_h, bx.top, bx.height);
    let taps_x = axis_taps(w, out_w, bx.left, bx.width);
    let mut dx = Tensor::zeros(x_shape.to_vec());
    let gs = g.data();
    let plane_in = h * w;
    let plane_out = out_h * out_w;
    for p in 0..n * c {
        let gp = &gs[p * plane_out..(p + 1) * plane_out];
        let dp = &mut dx.data_mut()[p * plane_in..(p + 1) * plane_in];
        for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
            let wy1 = T::from_f64(fy).unwrap();
            let wy0 = T::one() - wy1;
            for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                let wx1 = T::from_f64(fx).unwrap();
                let wx0 = T::one() - wx1;
                let gv = gp[oy * out_w + ox];
                dp[y0 * w + x0] += gv * wy0 * wx0;
                dp[y0 * w + x1] += gv * wy0 * wx1;
                dp[y1 * w + x0] += gv * wy1 * wx0;
                dp[y1 * w + x1] += gv * wy1 * wx1;
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_stays_constant() {
        let x = Tensor::<f64>::filled(vec![1, 1, 3, 5], 2.5);
        let y = sample_box_forward(&x, &SampleBox::full(), 9, 13).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn identity_resize_is_exact() {
        let x = Tensor::<f64>::new(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = sample_box_forward(&x, &SampleBox::full(), 2, 3).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn ramp_upscale_matches_closed_form() {
        // 2x2 ramp [[0,1],[2,3]] upscaled to 4x4, corner-aligned: value at
        // output (i,j) is 2*i/3 + j/3.
        let x = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = sample_box_forward(&x, &SampleBox::full(), 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = 2.0 * (i as f64 / 3.0) + (j as f64 / 3.0);
                let got = y.data()[i * 4 + j];
                assert!((got - want).abs() < 1e-12, "({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn box_validation() {
        assert!(SampleBox {
            top: -0.1,
            left: 0.0,
            height: 0.5,
            width: 0.5
        }
        .validate()
        .is_err());
        assert!(SampleBox {
            top: 0.5,
            left: 0.5,
            height: 0.6,
            width: 0.2
        }
        .validate()
        .is_err());
        assert!(SampleBox {
            top: 0.0,
            left: 0.0,
            height: 0.0,
            width: 1.0
        }
        .validate()
        .is_err());
    }
}
