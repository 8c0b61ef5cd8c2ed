use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{Error, Result};

/// Ground-truth object: oriented box with planar velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub center: [f64; 3],
    /// (length, width, height), length along the heading.
    pub dims: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
    pub class_id: u8,
}

impl GtObject {
    pub fn validate(&self) -> Result<()> {
        if !self.dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument("object dims must be positive".into()));
        }
        if !(self.yaw > -PI && self.yaw <= PI) {
            return Err(Error::InvalidArgument(format!("yaw {} outside (-pi, pi]", self.yaw)));
        }
        if !self.center.iter().chain(self.velocity.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("object state must be finite".into()));
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Simple counter-clockwise polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon2D {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidArgument("polygon needs at least 3 vertices".into()));
        }
        let poly = Self { vertices };
        if !(poly.signed_area() > 0.0) {
            return Err(Error::InvalidArgument("polygon must be counter-clockwise with positive area".into()));
        }
        Ok(poly)
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self {
            vertices: vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]],
        }
    }

    pub fn signed_area(&self) -> f64 {
        shoelace(&self.vertices)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Point-in-polygon for convex CCW polygons (boundary counts as inside).
    pub fn contains_convex(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| cross(self.vertices[i], self.vertices[(i + 1) % n], p) >= 0.0)
    }
}

fn shoelace(v: &[[f64; 2]]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

#[inline]
fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// BEV rectangle of an object, counter-clockwise.
pub fn bev_footprint(obj: &GtObject) -> Polygon2D {
    let (hl, hw) = (obj.dims[0] / 2.0, obj.dims[1] / 2.0);
    let (s, c) = obj.yaw.sin_cos();
    let local = [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]];
    Polygon2D {
        vertices: local
            .iter()
            .map(|p| {
                [
                    obj.center[0] + c * p[0] - s * p[1],
                    obj.center[1] + s * p[0] + c * p[1],
                ]
            })
            .collect(),
    }
}

/// Sutherland–Hodgman clip of `subject` against a convex CCW `clip` polygon.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let dc = cross(a, b, cur);
            let dp = cross(a, b, prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

#[inline]
fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection area of two convex polygons.
pub fn convex_intersection_area(a: &Polygon2D, b: &Polygon2D) -> f64 {
    shoelace(&clip_convex(&a.vertices, &b.vertices)).abs()
}

/// True when two convex footprints share positive area.
pub fn footprints_overlap(a: &Polygon2D, b: &Polygon2D) -> bool {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    if ahi[0] <= blo[0] || bhi[0] <= alo[0] || ahi[1] <= blo[1] || bhi[1] <= alo[1] {
        return false;
    }
    convex_intersection_area(a, b) > 1e-12
}

/// Per-polygon list of `(linear cell index, intersection area)` for every cell
/// the polygon touches.
pub fn cell_overlap_areas(spec: &GridSpec, polys: &[Polygon2D]) -> Vec<Vec<(usize, f64)>> {
    polys
        .iter()
        .map(|poly| {
            let (lo, hi) = poly.bounds();
            let x0 = ((lo[0] - spec.origin[0]) / spec.cell_size).floor().max(0.0) as usize;
            let y0 = ((lo[1] - spec.origin[1]) / spec.cell_size).floor().max(0.0) as usize;
            let x1 = ((hi[0] - spec.origin[0]) / spec.cell_size).ceil();
            let y1 = ((hi[1] - spec.origin[1]) / spec.cell_size).ceil();
            if x1 <= 0.0 || y1 <= 0.0 {
                return Vec::new();
            }
            let x1 = (x1 as usize).min(spec.x_cells);
            let y1 = (y1 as usize).min(spec.y_cells);
            let mut cells = Vec::new();
            for x in x0..x1 {
                for y in y0..y1 {
                    let (clo, chi) = spec.cell_bounds(x, y);
                    let sq = Polygon2D::rect(clo, chi);
                    let a = shoelace(&clip_convex(&sq.vertices, &poly.vertices)).abs();
                    if a > 0.0 {
                        cells.push((spec.linear(x, y), a));
                    }
                }
            }
            cells
        })
        .collect()
}

/// Fraction of cell `(x, y)` covered by the union of `polys`.
///
/// Footprints are assumed pairwise disjoint, so the union area is the sum of
/// the per-polygon intersections.
pub fn cell_box_overlap_ratio(spec: &GridSpec, x: usize, y: usize, polys: &[Polygon2D]) -> f64 {
    let (lo, hi) = spec.cell_bounds(x, y);
    let sq = Polygon2D::rect(lo, hi);
    let cell_area = spec.cell_size * spec.cell_size;
    let total: f64 = polys
        .iter()
        .map(|p| shoelace(&clip_convex(&sq.vertices, &p.vertices)).abs())
        .sum();
    let r = total / cell_area;
    debug_assert!(r <= 1.0 + 1e-9, "overlapping footprints in cell ({x}, {y}): ratio {r}");
    r.clamp(0.0, 1.0)
}
