//! Learnable facial mask and teeth mask from projected model vertices.

use crate::error::{Error, Result};
use crate::image::MaskImage;
use crate::morphable::{project, Coeff3D, MorphableModel};
use crate::raster::{convex_hull, dilate, distinct_points, scanline_fill};

pub const DEFAULT_DILATION: f64 = 1.15;
const DISTINCT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskParams {
    pub focal_scale: f64,
    pub height: usize,
    pub width: usize,
    /// Contour growth factor about its centroid.
    pub dilation: f64,
}

impl MaskParams {
    pub fn new(focal_scale: f64, height: usize, width: usize) -> Self {
        MaskParams { focal_scale, height, width, dilation: DEFAULT_DILATION }
    }

    fn check(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidArgument(format!("mask size {}x{} below 8x8", self.height, self.width)));
        }
        if !(self.dilation > 0.0) {
            return Err(Error::InvalidArgument("dilation must be positive".into()));
        }
        Ok(())
    }
}

/// A mask plus whether its geometry was degenerate.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskOutput {
    pub mask: MaskImage,
    pub degenerate: bool,
}

/// Projects points of `indices` for coefficients `c`.
pub fn projected_subset(model: &MorphableModel, c: &Coeff3D, indices: &[usize], focal: f64) -> Result<Vec<[f64; 2]>> {
    let v = model.compute_vertices(c)?;
    let p = project(&v, c.tau, focal)?;
    Ok(indices.iter().map(|&i| p.points[i]).collect())
}

/// Mask from a polygon in pixel coordinates: 0 inside, 1 outside.
pub fn mask_from_polygon(poly: &[[f64; 2]], height: usize, width: usize) -> MaskOutput {
    if distinct_points(poly, DISTINCT_TOL) < 3 {
        log::warn!("mask contour has fewer than 3 distinct points; keeping the whole source frame");
        return MaskOutput { mask: MaskImage::filled(height, width, 1), degenerate: true };
    }
    let cover = scanline_fill(poly, height, width);
    MaskOutput {
        mask: MaskImage { height, width, data: cover.iter().map(|&c| u8::from(!c)).collect() },
        degenerate: false,
    }
}

pub fn build_mask(model: &MorphableModel, c: &Coeff3D, p: &MaskParams) -> Result<MaskOutput> {
    p.check()?;
    let contour = projected_subset(model, c, &model.contour_indices, p.focal_scale)?;
    Ok(mask_from_polygon(&dilate(&contour, p.dilation), p.height, p.width))
}

/// Teeth region: filled hull of the projected teeth points intersected with
/// the generated region of the facial mask.
pub fn build_teeth_mask(model: &MorphableModel, c: &Coeff3D, p: &MaskParams) -> Result<MaskOutput> {
    p.check()?;
    let teeth = projected_subset(model, c, &model.teeth_indices, p.focal_scale)?;
    let hull = convex_hull(&teeth);
    if hull.len() < 3 {
        log::warn!("teeth points are degenerate; teeth mask is empty");
        return Ok(MaskOutput { mask: MaskImage::filled(p.height, p.width, 0), degenerate: true });
    }
    let face = build_mask(model, c, p)?.mask;
    let cover = scanline_fill(&hull, p.height, p.width);
    let data = cover.iter().zip(&face.data).map(|(&t, &m)| u8::from(t && m == 0)).collect();
    Ok(MaskOutput { mask: MaskImage { height: p.height, width: p.width, data }, degenerate: false })
}

/// Fixed lower-half mask used as the naive baseline: rows at or below the
/// middle are regenerated.
pub fn lower_half_mask(height: usize, width: usize) -> MaskImage {
    let mut m = MaskImage::filled(height, width, 1);
    for i in height / 2..height {
        for j in 0..width {
            m.data[i * width + j] = 0;
        }
    }
    m
}
