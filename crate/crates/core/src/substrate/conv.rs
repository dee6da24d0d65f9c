//! Direct 2-D convolution kernels (forward and the three backward passes).
//!
//! Layout is NCHW with OIHW weights. Every output element is written by
//! exactly one task, so the rayon parallelism below is bit-deterministic:
//! each element's accumulation order is fixed regardless of thread count.

use super::tensor::Tensor;
use super::Scalar;
use crate::error::{Error, Result};
use rayon::prelude::*;

pub(crate) fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Dot product with eight independent accumulator lanes. The summation
/// order is fixed (lane-major), so results are reproducible while the lanes
/// map onto SIMD registers.
#[inline]
fn dot_lanes<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for k in 0..chunks {
        let (ac, bc) = (&a[k * LANES..(k + 1) * LANES], &b[k * LANES..(k + 1) * LANES]);
        for l in 0..LANES {
            acc[l] += ac[l] * bc[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in a[chunks * LANES..].iter().zip(&b[chunks * LANES..]) {
        tail += *x * *y;
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    total + tail
}

/// Column range `[lo, hi)` of the output such that the sampled input column
/// `ox * stride + k - pad` stays within `[0, input)`.
#[inline]
fn valid_out_range(input: usize, out: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // ox * stride + k - pad <= input - 1
    let hi = if input + pad > k {
        (((input + pad - k - 1) / stride) + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, ci, h, wd) = x.dims4()?;
    let (co, ci_w, kh, kw) = w.dims4()?;
    if ci != ci_w {
        return Err(Error::shape(format!(
            "conv2d: input has {ci} channels, kernel expects {ci_w}"
        )));
    }
    if b.len() != co {
        return Err(Error::shape(format!(
            "conv2d: bias has {} entries for {co} output channels",
            b.len()
        )));
    }
    if stride == 0 {
        return Err(Error::config("conv2d: stride must be >= 1"));
    }
    let oh = out_extent(h, kh, stride, pad)?;
    let ow = out_extent(wd, kw, stride, pad)?;

    let mut out = Tensor::zeros(vec![n, co, oh, ow]);
    let xs = x.data();
    let ws = w.data();
    let bs = b.data();
    let plane_in = h * wd;
    let plane_out = oh * ow;

    out.data_mut()
        .par_chunks_exact_mut(plane_out)
        .enumerate()
        .for_each(|(chunk, plane)| {
            let ni = chunk / co;
            let coi = chunk % co;
            plane.fill(bs[coi]);
            for cii in 0..ci {
                let x_plane = &xs[(ni * ci + cii) * plane_in..(ni * ci + cii + 1) * plane_in];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = ws[((coi * ci + cii) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = valid_out_range(wd, ow, stride, pad, kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let in_row = &x_plane[(iy - pad) * wd..(iy - pad + 1) * wd];
                            let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                // ix = ox + kx - pad, contiguous: zip of two
                                // slices so the loop vectorizes
                                let src = &in_row[(lo + kx) - pad..(hi + kx) - pad];
                                for (o, &i) in out_row[lo..hi].iter_mut().zip(src) {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in lo..hi {
                                    out_row[ox] += wv * in_row[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradient w.r.t. the input, gather form: every input element sums its own
/// contributions, so the pass parallelizes over input planes.
pub(crate) fn conv2d_backward_input<T: Scalar>(
    g: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (_, co, oh, ow) = g.dims4()?;
    let (co_w, ci, kh, kw) = w.dims4()?;
    debug_assert_eq!(co, co_w);
    let (h, wd) = (x_shape[2], x_shape[3]);
    let mut dx = Tensor::zeros(x_shape.to_vec());
    let gs = g.data();
    let ws = w.data();
    let plane_out = oh * ow;
    let plane_in = h * wd;

    dx.data_mut()
        .par_chunks_exact_mut(plane_in)
        .enumerate()
        .for_each(|(chunk, plane)| {
            let ni = chunk / ci;
            let cii = chunk % ci;
            for coi in 0..co {
                let g_plane = &gs[(ni * co + coi) * plane_out..(ni * co + coi + 1) * plane_out];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = ws[((coi * ci + cii) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = valid_out_range(wd, ow, stride, pad, kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                            let dx_row = &mut plane[(iy - pad) * wd..(iy - pad + 1) * wd];
                            if stride == 1 {
                                let dst = &mut dx_row[(lo + kx) - pad..(hi + kx) - pad];
                                for (d, &gv) in dst.iter_mut().zip(&g_row[lo..hi]) {
                                    *d += wv * gv;
                                }
                            } else {
                                for ox in lo..hi {
                                    dx_row[ox * stride + kx - pad] += wv * g_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(dx)
}

pub(crate) fn conv2d_backward_weight<T: Scalar>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, co, oh, ow) = g.dims4()?;
    let (_, ci, h, wd) = x.dims4()?;
    let (kh, kw) = (w_shape[2], w_shape[3]);
    let mut dw = Tensor::zeros(w_shape.to_vec());
    let gs = g.data();
    let xs = x.data();
    let plane_out = oh * ow;
    let plane_in = h * wd;
    let w_slice = ci * kh * kw;

    dw.data_mut()
        .par_chunks_exact_mut(w_slice)
        .enumerate()
        .for_each(|(coi, dw_co)| {
            for ni in 0..n {
                let g_plane = &gs[(ni * co + coi) * plane_out..(ni * co + coi + 1) * plane_out];
                for cii in 0..ci {
                    let x_plane = &xs[(ni * ci + cii) * plane_in..(ni * ci + cii + 1) * plane_in];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (lo, hi) = valid_out_range(wd, ow, stride, pad, kx);
                            if lo >= hi {
                                continue;
                            }
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                                let in_row = &x_plane[(iy - pad) * wd..(iy - pad + 1) * wd];
                                if stride == 1 {
                                    acc += dot_lanes(
                                        &g_row[lo..hi],
                                        &in_row[(lo + kx) - pad..(hi + kx) - pad],
                                    );
                                } else {
                                    for ox in lo..hi {
                                        acc += g_row[ox] * in_row[ox * stride + kx - pad];
                                    }
                                }
                            }
                            dw_co[(cii * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        });
    Ok(dw)
}

pub(crate) fn conv2d_backward_bias<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, co, oh, ow) = g.dims4()?;
    let plane = oh * ow;
    let mut db = Tensor::zeros(vec![co]);
    let gs = g.data();
    for ni in 0..n {
        for coi in 0..co {
            let mut acc = T::zero();
            for v in &gs[(ni * co + coi) * plane..(ni * co + coi + 1) * plane] {
                acc += *v;
            }
            db.data_mut()[coi] += acc;
        }
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive sliding-window convolution, the independent oracle for the
    /// production kernel.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, ci, h, wd) = x.dims4().unwrap();
        let (co, _, kh, kw) = w.dims4().unwrap();
        let oh = out_extent(h, kh, stride, pad).unwrap();
        let ow = out_extent(wd, kw, stride, pad).unwrap();
        let mut out = Tensor::zeros(vec![n, co, oh, ow]);
        for ni in 0..n {
            for coi in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[coi];
                        for cii in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((ni * ci + cii) * h + iy as usize) * wd
                                        + ix as usize]
                                        * w.data()[((coi * ci + cii) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out.data_mut()[((ni * co + coi) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn forward_shape_stride1_pad1() {
        let x = rand_tensor(vec![1, 4, 8, 8], 1);
        let w = rand_tensor(vec![6, 4, 3, 3], 2);
        let b = rand_tensor(vec![6], 3);
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 6, 8, 8]);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = rand_tensor(vec![1, 3, 5, 5], 4);
        let w = Tensor::zeros(vec![2, 3, 3, 3]);
        let b = Tensor::zeros(vec![2]);
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_sliding_window_oracle() {
        for (stride, pad, seed) in [(1, 1, 10u64), (2, 1, 11), (1, 0, 12), (2, 0, 13)] {
            let x = rand_tensor(vec![2, 2, 5, 5], seed);
            let w = rand_tensor(vec![3, 2, 3, 3], seed + 100);
            let b = rand_tensor(vec![3], seed + 200);
            let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-6, "stride={stride} pad={pad}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = rand_tensor(vec![1, 3, 5, 5], 1);
        let w = rand_tensor(vec![2, 4, 3, 3], 2);
        let b = Tensor::zeros(vec![2]);
        assert!(conv2d_forward(&x, &w, &b, 1, 1).is_err());
    }
}
