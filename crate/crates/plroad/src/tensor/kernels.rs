//! Dense forward/backward kernels shared by the graph ops.

use super::real::Real;

pub fn conv_out_extent(input: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Unfold one batch element (ci,h,w) into a (ci*kh*kw) x (oh*ow) matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    input: &[T],
    ci: usize, h: usize, w: usize,
    kh: usize, kw: usize,
    stride: (usize, usize), pad: (usize, usize),
    oh: usize, ow: usize,
    cols: &mut [T],
) {
    let l = oh * ow;
    debug_assert_eq!(cols.len(), ci * kh * kw * l);
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                    for ox in 0..ow {
                        let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                        let v = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            input[(c * h + iy as usize) * w + ix as usize]
                        } else {
                            T::zero()
                        };
                        cols[row * l + oy * ow + ox] = v;
                    }
                }
            }
        }
    }
}

/// Scatter-add the column gradient back onto one batch element's input gradient.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Real>(
    cols: &[T],
    ci: usize, h: usize, w: usize,
    kh: usize, kw: usize,
    stride: (usize, usize), pad: (usize, usize),
    oh: usize, ow: usize,
    grad_input: &mut [T],
) {
    let l = oh * ow;
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        grad_input[(c * h + iy as usize) * w + ix as usize] += cols[row * l + oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Disjoint-partition bin bounds for adaptive average pooling.
pub fn bin_bounds(extent: usize, bins: usize, idx: usize) -> (usize, usize) {
    let start = idx * extent / bins;
    let end = (idx + 1) * extent / bins;
    (start, end.max(start + 1).min(extent))
}

/// Source coordinates and weights for align-corners-false bilinear sampling.
pub fn bilinear_coeffs(dst: usize, src_extent: usize, dst_extent: usize) -> (usize, usize, f64) {
    let scale = src_extent as f64 / dst_extent as f64;
    let f = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_extent - 1) as f64);
    let lo = f.floor() as usize;
    let hi = (lo + 1).min(src_extent - 1);
    (lo, hi, f - lo as f64)
}
