//! Synthetic linear morphable face model.
//!
//! Model space has x to the right, y pointing down (image convention) and z
//! towards the camera. The mean face is the front half of an ellipsoid with a
//! neck below it; the contour polygon, lip ring and teeth points are placed
//! explicitly so the index sets are geometrically meaningful.

use autograd::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::container::{Array, ArrayDir};
use crate::error::{ensure_dims, Error, Result};
use crate::seeded_rng;

const FACE_RX: f64 = 1.0;
const FACE_RY: f64 = 1.3;
const FACE_RZ: f64 = 0.8;
/// Centre of the lip ring in model units.
pub const MOUTH_CENTER: [f64; 2] = [0.0, 0.8];
const LIP_AXES: [f64; 2] = [0.36, 0.12];
const TEETH_AXES: [f64; 2] = [0.2, 0.05];
const NECK_BOTTOM: f64 = 1.55;
const NECK_HALF_WIDTH: f64 = 0.45;
const CONTOUR_TOP: f64 = 0.15;

/// Rigid head pose: Euler angles (radians) about x, y, z and a 3D translation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub angles: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Packs into the 6-vector `[angles, translation]` used by the renderer.
    pub fn to_vec6(&self) -> [f64; 6] {
        let [a, b, c] = self.angles;
        let [x, y, z] = self.translation;
        [a, b, c, x, y, z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Pose { angles: [v[0], v[1], v[2]], translation: [v[3], v[4], v[5]] }
    }

    /// `R = Rz(c) * Ry(b) * Rx(a)`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.angles;
        let (sx, cx) = a.sin_cos();
        let (sy, cy) = b.sin_cos();
        let (sz, cz) = c.sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }
}

/// One frame's coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Coeff3D {
    pub shape: Vec<f64>,
    pub expr: Vec<f64>,
    pub pose: Pose,
    /// Image-plane offset in pixels.
    pub tau: [f64; 2],
}

impl Coeff3D {
    pub fn zeros(d_s: usize, d_e: usize) -> Self {
        Coeff3D { shape: vec![0.0; d_s], expr: vec![0.0; d_e], pose: Pose::identity(), tau: [0.0; 2] }
    }

    pub fn is_finite(&self) -> bool {
        self.shape.iter().chain(&self.expr).chain(&self.pose.to_vec6()).chain(&self.tau).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexArray {
    pub positions: Vec<[f64; 3]>,
}

impl VertexArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoints {
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphableModel {
    /// `[N_v, 3]`
    pub mean: Tensor,
    /// `[N_v * 3, d_s]`, row `3v + k` is coordinate `k` of vertex `v`.
    pub shape_basis: Tensor,
    /// `[N_v * 3, d_e]`
    pub expr_basis: Tensor,
    pub mouth_indices: Vec<usize>,
    pub contour_indices: Vec<usize>,
    pub teeth_indices: Vec<usize>,
    pub seed: u64,
}

fn ellipsoid_z(x: f64, y: f64) -> f64 {
    let r = 1.0 - (x / FACE_RX).powi(2) - (y / FACE_RY).powi(2);
    FACE_RZ * r.max(0.0).sqrt()
}

/// Closed contour path around the lower face and neck, resampled to `n`
/// points at equal arc length. Clockwise on screen (y down).
fn contour_path(n: usize) -> Vec<[f64; 2]> {
    let (jx, jy) = (0.95, 1.25);
    let phi_top = (CONTOUR_TOP / jy).asin();
    let phi_neck = (NECK_HALF_WIDTH / jx).acos();
    let arc = |from: f64, to: f64, steps: usize| -> Vec<[f64; 2]> {
        (0..=steps)
            .map(|i| {
                let p = from + (to - from) * i as f64 / steps as f64;
                [jx * p.cos(), jy * p.sin()]
            })
            .collect()
    };
    let mut way: Vec<[f64; 2]> = vec![[-jx * phi_top.cos(), CONTOUR_TOP]];
    way.extend(arc(phi_top, phi_neck, 12));
    way.push([NECK_HALF_WIDTH, NECK_BOTTOM]);
    way.push([-NECK_HALF_WIDTH, NECK_BOTTOM]);
    way.extend(arc(std::f64::consts::PI - phi_neck, std::f64::consts::PI - phi_top, 12));
    // Close back to the start.
    way.push(way[0]);
    let seg: Vec<f64> = way.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(n);
    let (mut si, mut acc) = (0, 0.0);
    for i in 0..n {
        let target = total * i as f64 / n as f64;
        while si < seg.len() - 1 && acc + seg[si] < target {
            acc += seg[si];
            si += 1;
        }
        let t = if seg[si] > 0.0 { (target - acc) / seg[si] } else { 0.0 };
        let (a, b) = (way[si], way[si + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

fn ring(n: usize, center: [f64; 2], axes: [f64; 2], phase: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let t = phase + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [center[0] + axes[0] * t.cos(), center[1] + axes[1] * t.sin()]
        })
        .collect()
}

fn normalize_columns(basis: &mut Tensor) {
    let (rows, cols) = (basis.shape()[0], basis.shape()[1]);
    for j in 0..cols {
        let norm = (0..rows).map(|r| basis.data()[r * cols + j].powi(2)).sum::<f64>().sqrt();
        for r in 0..rows {
            basis.data_mut()[r * cols + j] /= norm;
        }
    }
}

/// Builds a deterministic synthetic model.
pub fn gen_synthetic_model(seed: u64, n_vertices: usize, d_s: usize, d_e: usize) -> Result<MorphableModel> {
    if n_vertices < 16 {
        return Err(Error::InvalidArgument(format!("n_vertices must be >= 16, got {n_vertices}")));
    }
    if d_s == 0 || d_e == 0 {
        return Err(Error::InvalidArgument(format!("basis dimensions must be positive, got d_s={d_s} d_e={d_e}")));
    }
    let mut rng = seeded_rng(seed, 0x6d6f_7270);
    let n_contour = (n_vertices / 5).clamp(6, 24);
    let n_mouth = (n_vertices / 8).clamp(4, 16);
    let n_teeth = (n_vertices / 16).clamp(3, 8);
    let n_rest = n_vertices - n_contour - n_mouth - n_teeth;

    let mut verts: Vec<[f64; 3]> = Vec::with_capacity(n_vertices);
    for [x, y] in contour_path(n_contour) {
        let z = if y > FACE_RY * 0.9 { 0.3 } else { ellipsoid_z(x, y).max(0.3) };
        verts.push([x, y, z]);
    }
    for [x, y] in ring(n_mouth, MOUTH_CENTER, LIP_AXES, 0.0) {
        verts.push([x, y, ellipsoid_z(x, y) + 0.05]);
    }
    for [x, y] in ring(n_teeth, MOUTH_CENTER, TEETH_AXES, 0.3) {
        verts.push([x, y, ellipsoid_z(x, y) - 0.05]);
    }
    // Forehead landmark pins the top of the face so the y-range is stable.
    verts.push([0.0, -0.98 * FACE_RY, ellipsoid_z(0.0, -0.98 * FACE_RY)]);
    while verts.len() < n_vertices {
        let x: f64 = rng.random_range(-FACE_RX..FACE_RX);
        let y: f64 = rng.random_range(-FACE_RY..FACE_RY);
        if (x / FACE_RX).powi(2) + (y / FACE_RY).powi(2) < 0.95 {
            verts.push([x, y, ellipsoid_z(x, y)]);
        }
    }
    debug_assert_eq!(n_rest, n_vertices - n_contour - n_mouth - n_teeth);

    let contour_indices: Vec<usize> = (0..n_contour).collect();
    let mouth_indices: Vec<usize> = (n_contour..n_contour + n_mouth).collect();
    let teeth_indices: Vec<usize> = (n_contour + n_mouth..n_contour + n_mouth + n_teeth).collect();

    let mean = Tensor::new([n_vertices, 3], verts.iter().flatten().copied().collect());

    // Expression: affine displacement fields weighted towards the mouth and jaw.
    let mut expr = Tensor::zeros([n_vertices * 3, d_e]);
    for j in 0..d_e {
        let a: Vec<f64> = (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (v, p) in verts.iter().enumerate() {
            let (dx, dy) = (p[0] - MOUTH_CENTER[0], p[1] - MOUTH_CENTER[1]);
            let w = (-(dx / 0.6).powi(2) - (dy / 0.5).powi(2)).exp() + 0.05;
            let rel = [dx, dy, p[2]];
            for k in 0..3 {
                let lin: f64 = (0..3).map(|m| a[3 * k + m] * rel[m]).sum::<f64>() + a[9 + k];
                expr.data_mut()[(3 * v + k) * d_e + j] = w * lin;
            }
        }
    }
    normalize_columns(&mut expr);

    // Shape: global low-frequency fields.
    let mut shape = Tensor::zeros([n_vertices * 3, d_s]);
    for j in 0..d_s {
        let a: Vec<f64> = (0..15).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (v, p) in verts.iter().enumerate() {
            for k in 0..3 {
                let lin: f64 = (0..3).map(|m| a[3 * k + m] * p[m]).sum::<f64>()
                    + a[9 + k]
                    + a[12 + k] * (p[0] * p[0] - p[1] * p[1]);
                shape.data_mut()[(3 * v + k) * d_s + j] = lin;
            }
        }
    }
    normalize_columns(&mut shape);

    Ok(MorphableModel { mean, shape_basis: shape, expr_basis: expr, mouth_indices, contour_indices, teeth_indices, seed })
}

impl MorphableModel {
    pub fn n_vertices(&self) -> usize {
        self.mean.shape()[0]
    }

    pub fn d_s(&self) -> usize {
        self.shape_basis.shape()[1]
    }

    pub fn d_e(&self) -> usize {
        self.expr_basis.shape()[1]
    }

    pub fn check_coeffs(&self, c: &Coeff3D) -> Result<()> {
        ensure_dims("shape coefficient length", c.shape.len(), self.d_s())?;
        ensure_dims("expression coefficient length", c.expr.len(), self.d_e())
    }

    /// Unposed linear model `mean + S a + E b` for vertex `v`.
    fn linear_vertex(&self, v: usize, alpha: &[f64], beta: &[f64]) -> [f64; 3] {
        let (ds, de) = (self.d_s(), self.d_e());
        let mut p = [0.0; 3];
        for (k, pk) in p.iter_mut().enumerate() {
            let r = 3 * v + k;
            let s: f64 = self.shape_basis.data()[r * ds..(r + 1) * ds].iter().zip(alpha).map(|(b, a)| b * a).sum();
            let e: f64 = self.expr_basis.data()[r * de..(r + 1) * de].iter().zip(beta).map(|(b, a)| b * a).sum();
            *pk = self.mean.data()[r] + s + e;
        }
        p
    }

    pub fn compute_vertices(&self, c: &Coeff3D) -> Result<VertexArray> {
        self.check_coeffs(c)?;
        let r = c.pose.rotation();
        let t = c.pose.translation;
        let positions = (0..self.n_vertices())
            .map(|v| {
                let p = self.linear_vertex(v, &c.shape, &c.expr);
                let mut q = [0.0; 3];
                for i in 0..3 {
                    q[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
                }
                q
            })
            .collect();
        Ok(VertexArray { positions })
    }

    pub fn mouth_vertex_subset(&self, v: &VertexArray) -> VertexArray {
        VertexArray { positions: self.mouth_indices.iter().map(|&i| v.positions[i]).collect() }
    }

    /// Basis rows for the given vertices, transposed to `[d, n * 3]`.
    fn basis_rows_t(basis: &Tensor, verts: &[usize]) -> Tensor {
        let d = basis.shape()[1];
        let n3 = verts.len() * 3;
        let mut out = vec![0.0; d * n3];
        for (i, &v) in verts.iter().enumerate() {
            for k in 0..3 {
                let row = &basis.data()[(3 * v + k) * d..(3 * v + k + 1) * d];
                for (j, &x) in row.iter().enumerate() {
                    out[j * n3 + 3 * i + k] = x;
                }
            }
        }
        Tensor::new([d, n3], out)
    }

    /// Differentiable batched vertices for the selected vertex rows.
    ///
    /// `alpha: [B, d_s]`, `beta: [B, d_e]`, `pose: [B, 6]` (angles then
    /// translation). Returns `[B, n, 3]`.
    pub fn vertices_graph(&self, g: &mut Graph, alpha: Var, beta: Var, pose: Var, verts: &[usize]) -> Var {
        let b = g.shape(alpha)[0];
        let n = verts.len();
        let st = g.constant(Self::basis_rows_t(&self.shape_basis, verts));
        let et = g.constant(Self::basis_rows_t(&self.expr_basis, verts));
        let mean: Vec<f64> = verts.iter().flat_map(|&v| self.mean.data()[3 * v..3 * v + 3].to_vec()).collect();
        let mean = g.constant(Tensor::new([1, n * 3], mean));
        let s = g.matmul(alpha, st);
        let e = g.matmul(beta, et);
        let lin = g.add(s, e);
        let lin = g.add(lin, mean);
        let lin = g.reshape(lin, &[b, n, 3]);

        let angles = g.narrow(pose, 1, 0, 3);
        let trans = g.narrow(pose, 1, 3, 3);
        let rt = rotation_transposed_graph(g, angles);
        let rotated = g.matmul(lin, rt);
        let trans = g.reshape(trans, &[b, 1, 3]);
        g.add(rotated, trans)
    }

    pub fn to_array_dir(&self) -> ArrayDir {
        let mut d = ArrayDir::new();
        d.set_header("seed", self.seed);
        d.push("mean", Array::from_tensor(&self.mean));
        d.push("shape_basis", Array::from_tensor(&self.shape_basis));
        d.push("expr_basis", Array::from_tensor(&self.expr_basis));
        d.push("mouth_idx", Array::from_indices(&self.mouth_indices));
        d.push("contour_idx", Array::from_indices(&self.contour_indices));
        d.push("teeth_idx", Array::from_indices(&self.teeth_indices));
        d
    }

    pub fn from_array_dir(d: &ArrayDir) -> Result<Self> {
        let seed = d
            .header_value("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("model manifest lacks a seed".into()))?;
        let model = MorphableModel {
            mean: d.get("mean")?.to_tensor()?,
            shape_basis: d.get("shape_basis")?.to_tensor()?,
            expr_basis: d.get("expr_basis")?.to_tensor()?,
            mouth_indices: d.get("mouth_idx")?.to_indices()?,
            contour_indices: d.get("contour_idx")?.to_indices()?,
            teeth_indices: d.get("teeth_idx")?.to_indices()?,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        if self.mean.ndim() != 2 || self.mean.shape()[1] != 3 {
            return Err(Error::Format(format!("mean must be [N, 3], got {:?}", self.mean.shape())));
        }
        for (name, b) in [("shape_basis", &self.shape_basis), ("expr_basis", &self.expr_basis)] {
            if b.ndim() != 2 || b.shape()[0] != 3 * n {
                return Err(Error::Format(format!("{name} must have {} rows, got {:?}", 3 * n, b.shape())));
            }
        }
        let sets = [(&self.mouth_indices, 1), (&self.contour_indices, 3), (&self.teeth_indices, 1)];
        for (set, min) in sets {
            if set.len() < min || set.iter().any(|&i| i >= n) {
                return Err(Error::Format("vertex index set out of range or too small".into()));
            }
        }
        Ok(())
    }
}

/// `R^T` for a batch of Euler angles `[B, 3]`, shaped `[B, 3, 3]`, so that row
/// vectors transform as `p R^T`.
fn rotation_transposed_graph(g: &mut Graph, angles: Var) -> Var {
    let b = g.shape(angles)[0];
    let s = g.sin(angles);
    let c = g.cos(angles);
    let col = |g: &mut Graph, v: Var, i: usize| g.narrow(v, 1, i, 1);
    let (sx, sy, sz) = (col(g, s, 0), col(g, s, 1), col(g, s, 2));
    let (cx, cy, cz) = (col(g, c, 0), col(g, c, 1), col(g, c, 2));
    let czsy = g.mul(cz, sy);
    let szsy = g.mul(sz, sy);
    let r00 = g.mul(cz, cy);
    let t = g.mul(czsy, sx);
    let u = g.mul(sz, cx);
    let r01 = g.sub(t, u);
    let t = g.mul(czsy, cx);
    let u = g.mul(sz, sx);
    let r02 = g.add(t, u);
    let r10 = g.mul(sz, cy);
    let t = g.mul(szsy, sx);
    let u = g.mul(cz, cx);
    let r11 = g.add(t, u);
    let t = g.mul(szsy, cx);
    let u = g.mul(cz, sx);
    let r12 = g.sub(t, u);
    let r20 = g.neg(sy);
    let r21 = g.mul(cy, sx);
    let r22 = g.mul(cy, cx);
    // Transposed layout: entry (i, j) holds R[j][i].
    let flat = g.concat(&[r00, r10, r20, r01, r11, r21, r02, r12, r22], 1);
    g.reshape(flat, &[b, 3, 3])
}

pub fn project(v: &VertexArray, tau: [f64; 2], focal_scale: f64) -> Result<ProjectedPoints> {
    if !(focal_scale > 0.0 && focal_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("focal_scale must be positive, got {focal_scale}")));
    }
    Ok(ProjectedPoints {
        points: v.positions.iter().map(|p| [focal_scale * p[0] + tau[0], focal_scale * p[1] + tau[1]]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_sizes_scale_with_vertex_count() {
        let m = gen_synthetic_model(0, 16, 1, 1).unwrap();
        assert_eq!((m.contour_indices.len(), m.mouth_indices.len(), m.teeth_indices.len()), (6, 4, 3));
        let m = gen_synthetic_model(0, 400, 2, 2).unwrap();
        assert_eq!((m.contour_indices.len(), m.mouth_indices.len(), m.teeth_indices.len()), (24, 16, 8));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(gen_synthetic_model(0, 15, 4, 8).is_err());
        assert!(gen_synthetic_model(0, 64, 0, 8).is_err());
        assert!(gen_synthetic_model(0, 64, 4, 0).is_err());
    }

    #[test]
    fn contour_is_closed_lower_face_loop() {
        let p = contour_path(20);
        assert!(p.iter().all(|q| q[1] >= CONTOUR_TOP - 1e-9 && q[1] <= NECK_BOTTOM + 1e-9));
        // Signed area is non-zero, so the loop encloses a region.
        let area: f64 = (0..p.len()).map(|i| {
            let (a, b) = (p[i], p[(i + 1) % p.len()]);
            a[0] * b[1] - b[0] * a[1]
        }).sum();
        assert!(area.abs() > 1.0);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = Pose { angles: [0.3, -0.7, 1.1], translation: [0.0; 3] }.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
