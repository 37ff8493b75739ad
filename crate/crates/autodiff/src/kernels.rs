//! Numeric kernels behind the graph ops.

use crate::error::{Result, TensorError};

/// `c = a * b + beta * c` for row-major `c` (`m x n`); `a` (`m x k`) and `b`
/// (`k x n`) are addressed through (row stride, column stride) pairs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        let max_a = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
        let max_b = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
        assert!(
            max_a < a.len() && max_b < b.len(),
            "gemm operand out of bounds"
        );
    }
    // SAFETY: the asserts above bound every element the kernel reads or
    // writes, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 || x[1] != k[1] {
            return Err(TensorError::Shape {
                op: "conv2d",
                lhs: x.to_vec(),
                rhs: k.to_vec(),
            });
        }
        let (kh, kw) = (k[2], k[3]);
        if !matches!(kh, 1 | 3) || !matches!(kw, 1 | 3) {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} unsupported (1 or 3 only)"),
            });
        }
        if !matches!(stride, 1 | 2) {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!("stride {stride} unsupported (1 or 2 only)"),
            });
        }
        let out_h = out_extent(x[2], kh, stride, pad)?;
        let out_w = out_extent(x[3], kw, stride, pad)?;
        Ok(Self {
            batch: x[0],
            channels: x[1],
            in_h: x[2],
            in_w: x[3],
            filters: k[0],
            kh,
            kw,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }
}

/// Output extent of a strided window. The windows must reach the last real
/// input row; only trailing padding may be left unvisited.
fn out_extent(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        return Err(TensorError::Dimension {
            op: "conv2d",
            msg: format!("input extent {n} with pad {pad} is smaller than kernel {k}"),
        });
    }
    let out = (padded - k) / stride + 1;
    if (out - 1) * stride + k < n + pad {
        return Err(TensorError::Dimension {
            op: "conv2d",
            msg: format!(
                "output extent ({n} + 2*{pad} - {k})/{stride} + 1 is not integral: input rows would be dropped"
            ),
        });
    }
    Ok(out)
}

/// Output columns `ox` whose input column `ox * stride + j - pad` lies in
/// `[0, w)`.
fn valid_cols(geom: &ConvGeom, j: usize, w: usize) -> std::ops::Range<usize> {
    let (s, pad) = (geom.stride, geom.pad);
    let lo = pad.saturating_sub(j).div_ceil(s);
    let hi = if w + pad > j {
        (w + pad - j - 1) / s + 1
    } else {
        0
    };
    lo.min(geom.out_w)..hi.min(geom.out_w).max(lo.min(geom.out_w))
}

fn im2col(geom: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let (h, w, oh, ow) = (geom.in_h, geom.in_w, geom.out_h, geom.out_w);
    let (s, pad) = (geom.stride, geom.pad);
    let p = geom.out_plane();
    for c in 0..geom.channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = (c * geom.kh + i) * geom.kw + j;
                let dst = &mut col[row * p..(row + 1) * p];
                let cols = valid_cols(geom, j, w);
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = (oy * s + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    line[..cols.start].fill(0.0);
                    line[cols.end..].fill(0.0);
                    let x0 = cols.start * s + j - pad;
                    let inner = &mut line[cols.clone()];
                    if s == 1 {
                        inner.copy_from_slice(&src[x0..x0 + inner.len()]);
                    } else {
                        for (d, v) in inner.iter_mut().zip(src[x0..].iter().step_by(s)) {
                            *d = *v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(geom: &ConvGeom, col: &[f64], gx: &mut [f64]) {
    let (h, w, oh, ow) = (geom.in_h, geom.in_w, geom.out_h, geom.out_w);
    let (s, pad) = (geom.stride, geom.pad);
    let p = geom.out_plane();
    for c in 0..geom.channels {
        let plane = &mut gx[c * h * w..(c + 1) * h * w];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = (c * geom.kh + i) * geom.kw + j;
                let src = &col[row * p..(row + 1) * p];
                let cols = valid_cols(geom, j, w);
                if cols.is_empty() {
                    continue;
                }
                let x0 = cols.start * s + j - pad;
                for oy in 0..oh {
                    let iy = (oy * s + i) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * ow + cols.start..oy * ow + cols.end];
                    if s == 1 {
                        for (d, v) in dst[x0..x0 + line.len()].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in dst[x0..].iter_mut().step_by(s).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    geom: &ConvGeom,
    x: &[f64],
    k: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (f, q, p) = (geom.filters, geom.patch(), geom.out_plane());
    let in_item = geom.channels * geom.in_plane();
    let mut out = vec![0.0; geom.batch * f * p];
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; q * p]
    };
    for b in 0..geom.batch {
        let xb = &x[b * in_item..(b + 1) * in_item];
        let ob = &mut out[b * f * p..(b + 1) * f * p];
        if let Some(bias) = bias {
            for (row, &bv) in ob.chunks_mut(p).zip(bias) {
                row.fill(bv);
            }
        }
        let src: &[f64] = if geom.is_pointwise() {
            xb
        } else {
            im2col(geom, xb, &mut col);
            &col
        };
        gemm(f, q, p, k, (q, 1), src, (p, 1), ob, 1.0);
    }
    out
}

pub(crate) fn conv2d_grad_kernel(geom: &ConvGeom, x: &[f64], g: &[f64], gk: &mut [f64]) {
    let (f, q, p) = (geom.filters, geom.patch(), geom.out_plane());
    let in_item = geom.channels * geom.in_plane();
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; q * p]
    };
    for b in 0..geom.batch {
        let xb = &x[b * in_item..(b + 1) * in_item];
        let src: &[f64] = if geom.is_pointwise() {
            xb
        } else {
            im2col(geom, xb, &mut col);
            &col
        };
        // gk += g_b * col^T
        gemm(
            f,
            p,
            q,
            &g[b * f * p..(b + 1) * f * p],
            (p, 1),
            src,
            (1, p),
            gk,
            1.0,
        );
    }
}

pub(crate) fn conv2d_grad_input(geom: &ConvGeom, k: &[f64], g: &[f64], gx: &mut [f64]) {
    let (f, q, p) = (geom.filters, geom.patch(), geom.out_plane());
    let in_item = geom.channels * geom.in_plane();
    let mut col = vec![0.0; q * p];
    for b in 0..geom.batch {
        let gb = &g[b * f * p..(b + 1) * f * p];
        let gxb = &mut gx[b * in_item..(b + 1) * in_item];
        if geom.is_pointwise() {
            gemm(q, f, p, k, (1, q), gb, (p, 1), gxb, 1.0);
        } else {
            gemm(q, f, p, k, (1, q), gb, (p, 1), &mut col, 0.0);
            col2im_add(geom, &col, gxb);
        }
    }
}

/// Index of the element of sorted `values` nearest to `x` (lower index on ties).
fn nearest_sorted(values: &[f64], x: f64) -> usize {
    let pos = values.partition_point(|&v| v < x);
    if pos == 0 {
        0
    } else if pos == values.len() {
        values.len() - 1
    } else if (x - values[pos - 1]) <= (values[pos] - x) {
        pos - 1
    } else {
        pos
    }
}

/// Bidirectional squared chamfer distance between 1-d sets and its gradient
/// with respect to `centers`.
pub(crate) fn chamfer_1d(centers: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let nc = centers.len();
    let nt = targets.len();
    let mut order: Vec<usize> = (0..nc).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    let sorted_c: Vec<f64> = order.iter().map(|&i| centers[i]).collect();
    let mut sorted_t = targets.to_vec();
    sorted_t.sort_by(f64::total_cmp);

    let mut grad = vec![0.0; nc];
    let mut to_center = 0.0;
    for &t in targets {
        let j = order[nearest_sorted(&sorted_c, t)];
        let d = t - centers[j];
        to_center += d * d;
        grad[j] -= 2.0 * d / nt as f64;
    }
    let mut to_target = 0.0;
    for (j, &c) in centers.iter().enumerate() {
        let t = sorted_t[nearest_sorted(&sorted_t, c)];
        let d = c - t;
        to_target += d * d;
        grad[j] += 2.0 * d / nc as f64;
    }
    (to_center / nt as f64 + to_target / nc as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_two_on_even_input_keeps_every_row() {
        assert_eq!(out_extent(64, 3, 2, 1).unwrap(), 32);
        assert_eq!(out_extent(8, 3, 1, 1).unwrap(), 8);
        assert_eq!(out_extent(8, 3, 1, 0).unwrap(), 6);
    }

    #[test]
    fn dropped_input_rows_are_rejected() {
        // A 1x1 stride-2 window never touches the last row of an even input.
        assert!(out_extent(64, 1, 2, 0).is_err());
        assert!(out_extent(2, 3, 1, 0).is_err());
    }

    #[test]
    fn chamfer_hand_values() {
        let (v, _) = chamfer_1d(&[1.0, 3.0], &[1.0]);
        assert_eq!(v, 2.0);
        let (v, g) = chamfer_1d(&[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn nearest_prefers_lower_on_ties() {
        assert_eq!(nearest_sorted(&[1.0, 3.0], 2.0), 0);
        assert_eq!(nearest_sorted(&[1.0, 3.0], 2.5), 1);
        assert_eq!(nearest_sorted(&[1.0, 3.0], -4.0), 0);
        assert_eq!(nearest_sorted(&[1.0, 3.0], 9.0), 1);
    }
}
