//! Polygon rasterization at pixel centres.
//!
//! Pixel `(row i, col j)` has its centre at `(j + 0.5, i + 0.5)` in image
//! coordinates. Both the scanline fill and the reference point test use the
//! even-odd rule with the half-open edge convention `y0 <= y < y1`.

/// Even-odd scanline fill; returns a row-major `h x w` coverage map. Parts of
/// the polygon outside the image are clipped implicitly.
pub fn scanline_fill(poly: &[[f64; 2]], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    if poly.len() < 3 {
        return out;
    }
    let mut xs: Vec<f64> = Vec::with_capacity(poly.len());
    for i in 0..h {
        let yc = i as f64 + 0.5;
        xs.clear();
        for k in 0..poly.len() {
            let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
            if (a[1] <= yc) != (b[1] <= yc) {
                xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Pixels with x0 <= j + 0.5 < x1.
            let lo = (span[0] - 0.5).ceil().max(0.0);
            let hi = (span[1] - 0.5).ceil().min(w as f64);
            let mut j = lo;
            while j < hi {
                out[i * w + j as usize] = true;
                j += 1.0;
            }
        }
    }
    out
}

/// Crossing-number point-in-polygon test.
pub fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        if (a[1] <= p[1]) != (b[1] <= p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Distance from `p` to the segment `ab`.
pub fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

pub fn distance_to_boundary(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    (0..poly.len()).map(|k| segment_distance(p, poly[k], poly[(k + 1) % poly.len()])).fold(f64::INFINITY, f64::min)
}

/// Number of points that differ from every earlier point by more than `tol`.
pub fn distinct_points(points: &[[f64; 2]], tol: f64) -> usize {
    let mut seen: Vec<[f64; 2]> = Vec::new();
    for p in points {
        if !seen.iter().any(|q| (q[0] - p[0]).abs() <= tol && (q[1] - p[1]).abs() <= tol) {
            seen.push(*p);
        }
    }
    seen.len()
}

/// Andrew's monotone chain; counter-clockwise hull without collinear points.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Scales `poly` about its vertex centroid.
pub fn dilate(poly: &[[f64; 2]], factor: f64) -> Vec<[f64; 2]> {
    if poly.is_empty() {
        return Vec::new();
    }
    let n = poly.len() as f64;
    let cx = poly.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = poly.iter().map(|p| p[1]).sum::<f64>() / n;
    poly.iter().map(|p| [cx + factor * (p[0] - cx), cy + factor * (p[1] - cy)]).collect()
}
