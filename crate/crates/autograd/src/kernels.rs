//! Raw numeric kernels. Everything here works on flat slices; the graph layer
//! owns shapes and bookkeeping.

use crate::tensor::{numel, strides};

/// `c = alpha * a·b + beta * c` for row/column strided matrices.
///
/// `a` is m×k, `b` is k×n, `c` is m×n. Strides are in elements.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: bounds of every strided access are asserted above and the
    // output slice is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out_shape`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let own = strides(shape);
    let mut s = vec![0; nd];
    for i in 0..shape.len() {
        let o = i + nd - shape.len();
        if shape[i] != 1 {
            s[o] = own[i];
        }
    }
    s
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
fn for_each_broadcast(
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let nd = out_shape.len();
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let n = numel(out_shape);
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[nd - 1];
    let (ia_step, ib_step) = (sa[nd - 1], sb[nd - 1]);
    let mut counter = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        let (mut xa, mut xb) = (ia, ib);
        for j in 0..inner {
            f(o + j, xa, xb);
            xa += ia_step;
            xb += ib_step;
        }
        o += inner;
        for d in (0..nd - 1).rev() {
            counter[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if counter[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            counter[d] = 0;
        }
    }
}

pub fn broadcast_binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    op: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| op(x, y)).collect();
    }
    let mut out = vec![0.0; numel(out_shape)];
    for_each_broadcast(a_shape, b_shape, out_shape, |o, ia, ib| out[o] = op(a[ia], b[ib]));
    out
}

/// Gradients of a broadcast binary op: `da[ia] += ga(g, a, b)`, `db[ib] += gb(g, a, b)`.
#[allow(clippy::too_many_arguments)]
pub fn broadcast_binary_backward(
    grad: &[f64],
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    ga: Option<&dyn Fn(f64, f64, f64) -> f64>,
    gb: Option<&dyn Fn(f64, f64, f64) -> f64>,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut da = ga.map(|_| vec![0.0; a.len()]);
    let mut db = gb.map(|_| vec![0.0; b.len()]);
    for_each_broadcast(a_shape, b_shape, out_shape, |o, ia, ib| {
        let (g, x, y) = (grad[o], a[ia], b[ib]);
        if let (Some(d), Some(f)) = (da.as_mut(), ga) {
            d[ia] += f(g, x, y);
        }
        if let (Some(d), Some(f)) = (db.as_mut(), gb) {
            d[ib] += f(g, x, y);
        }
    });
    (da, db)
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

pub fn sum_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// Row-wise softmax over contiguous rows of length `n`.
pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

pub fn softmax_rows_backward(y: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for ((yr, gr), dst) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(out.chunks_exact_mut(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    out
}

/// How a row is standardised by [`normalize_rows`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    /// `(x - mean) / sqrt(var + eps)`
    Layer,
    /// `(x - mean) / (std + eps)`
    InstanceStd,
}

/// Standardises contiguous rows of length `n`; returns outputs and per-row scale `1/denominator`
/// together with the per-row population std.
pub fn normalize_rows(x: &[f64], n: usize, eps: f64, kind: NormKind) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    let mut inv = vec![0.0; rows];
    let mut sd = vec![0.0; rows];
    for (r, (row, dst)) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        let scale = match kind {
            NormKind::Layer => 1.0 / (var + eps).sqrt(),
            NormKind::InstanceStd => 1.0 / (s + eps),
        };
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - mean) * scale;
        }
        inv[r] = scale;
        sd[r] = s;
    }
    (out, inv, sd)
}

pub fn normalize_rows_backward(
    y: &[f64],
    g: &[f64],
    inv: &[f64],
    sd: &[f64],
    n: usize,
    kind: NormKind,
) -> Vec<f64> {
    let nf = n as f64;
    let mut out = vec![0.0; y.len()];
    for (r, ((yr, gr), dst)) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(out.chunks_exact_mut(n)).enumerate() {
        let gmean = gr.iter().sum::<f64>() / nf;
        let gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / nf;
        match kind {
            NormKind::Layer => {
                for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                    *d = inv[r] * (gv - gmean - yv * gy);
                }
            }
            NormKind::InstanceStd => {
                // y = d/s with s = std + eps; d(std)/dx_j = d_j / (n std).
                // The std term vanishes when the row is constant.
                let s = 1.0 / inv[r];
                let coef = if sd[r] > 0.0 { s / sd[r] } else { 0.0 };
                for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                    *d = inv[r] * (gv - gmean - yv * gy * coef);
                }
            }
        }
    }
    out
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let h_out = (h + 2 * pad - kh) / stride + 1;
        let w_out = (w + 2 * pad - kw) / stride + 1;
        Some(ConvGeom { c_in, h, w, kh, kw, stride, pad, h_out, w_out })
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds one image `[C, H, W]` into `[C*kh*kw, H_out*W_out]` with zero padding.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let ncol = g.col_cols();
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image gradient.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let ncol = g.col_cols();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Source taps of 2x bilinear upsampling along one axis (half-pixel centres,
/// edge clamped): for each output index, `(i0, i1, weight_of_i1)`.
pub fn upsample_taps(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2x(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample2x_backward(g: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let gp = &g[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = gp[oy * wo + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

/// One bilinear tap set for a sample position with replicate borders.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTap {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
    /// Whether the position was inside the clamp range on each axis.
    pub live_x: bool,
    pub live_y: bool,
}

impl BilinearTap {
    /// `x`, `y` are continuous pixel-index coordinates (pixel centres at integers).
    pub fn new(x: f64, y: f64, h: usize, w: usize) -> Self {
        let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
        let live_x = (0.0..=xmax).contains(&x);
        let live_y = (0.0..=ymax).contains(&y);
        let xc = x.clamp(0.0, xmax);
        let yc = y.clamp(0.0, ymax);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        BilinearTap {
            x0,
            x1: (x0 + 1).min(w - 1),
            y0,
            y1: (y0 + 1).min(h - 1),
            fx: xc - x0 as f64,
            fy: yc - y0 as f64,
            live_x,
            live_y,
        }
    }

    pub fn sample(&self, plane: &[f64], w: usize) -> f64 {
        let top = plane[self.y0 * w + self.x0] * (1.0 - self.fx) + plane[self.y0 * w + self.x1] * self.fx;
        let bot = plane[self.y1 * w + self.x0] * (1.0 - self.fx) + plane[self.y1 * w + self.x1] * self.fx;
        top * (1.0 - self.fy) + bot * self.fy
    }

    /// Derivatives of the sample with respect to `x` and `y`.
    pub fn grad_xy(&self, plane: &[f64], w: usize) -> (f64, f64) {
        let v00 = plane[self.y0 * w + self.x0];
        let v01 = plane[self.y0 * w + self.x1];
        let v10 = plane[self.y1 * w + self.x0];
        let v11 = plane[self.y1 * w + self.x1];
        let dx = if self.live_x && self.x1 != self.x0 {
            (v01 - v00) * (1.0 - self.fy) + (v11 - v10) * self.fy
        } else {
            0.0
        };
        let dy = if self.live_y && self.y1 != self.y0 {
            (v10 - v00) * (1.0 - self.fx) + (v11 - v01) * self.fx
        } else {
            0.0
        };
        (dx, dy)
    }

    pub fn scatter(&self, plane: &mut [f64], w: usize, v: f64) {
        plane[self.y0 * w + self.x0] += v * (1.0 - self.fy) * (1.0 - self.fx);
        plane[self.y0 * w + self.x1] += v * (1.0 - self.fy) * self.fx;
        plane[self.y1 * w + self.x0] += v * self.fy * (1.0 - self.fx);
        plane[self.y1 * w + self.x1] += v * self.fy * self.fx;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect();
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, &a, (3, 1), &b, (4, 1), 0.0, &mut c, (4, 1));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = vec![2.5; 3 * 4];
        let y = upsample2x(&x, 1, 3, 4);
        assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        assert_eq!(y.len(), 6 * 8);
    }

    #[test]
    fn bilinear_half_pixel_is_neighbour_mean() {
        let plane = [1.0, 3.0, 5.0, 7.0];
        let tap = BilinearTap::new(0.5, 0.0, 2, 2);
        assert_eq!(tap.sample(&plane, 2), 2.0);
    }
}
