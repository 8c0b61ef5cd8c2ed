use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{Error, Result};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Rigid transform `parent ← child`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigid3 {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Rigid3 {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation by `yaw` about +z followed by a translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    #[inline]
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    #[inline]
    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Applies the inverse transform (child ← parent).
    pub fn inverse_transform(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > tol {
                    return false;
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        (det - 1.0).abs() <= tol
    }
}

/// Pinhole camera. `pose` maps the camera body frame (x forward, y left,
/// z up) into ego; the optical frame (x right, y down, z forward) is fixed
/// relative to the body, so an identity pose looks along ego +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Rigid3,
    pub image_w: usize,
    pub image_h: usize,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidArgument("image must be non-empty".into()));
        }
        if !self.pose.is_proper_rotation(1e-9) {
            return Err(Error::InvalidArgument(
                "camera rotation must be orthonormal with determinant +1".into(),
            ));
        }
        Ok(())
    }

    /// Camera looking along ego azimuth `yaw` with a horizontal field of view
    /// `hfov` (radians), principal point at the image center.
    pub fn looking_at_yaw(yaw: f64, hfov: f64, image_w: usize, image_h: usize, mount: [f64; 3]) -> Self {
        let fx = (image_w as f64 / 2.0) / (hfov / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: image_w as f64 / 2.0,
            cy: image_h as f64 / 2.0,
            pose: Rigid3::from_yaw(yaw, mount),
            image_w,
            image_h,
        }
    }

    #[inline]
    fn optical_to_body(v: [f64; 3]) -> [f64; 3] {
        [v[2], -v[0], -v[1]]
    }

    #[inline]
    fn body_to_optical(v: [f64; 3]) -> [f64; 3] {
        [-v[1], -v[2], v[0]]
    }

    /// Ego-frame direction of the ray through image point `(u, v)`, scaled so
    /// that its optical-axis component is 1 (a step of `t` reaches depth `t`).
    #[inline]
    pub fn ray_ego(&self, u: f64, v: f64) -> [f64; 3] {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        self.pose.rotate(Self::optical_to_body(d))
    }

    #[inline]
    pub fn position(&self) -> [f64; 3] {
        self.pose.translation
    }

    /// Ego point at optical depth `depth` along the ray through `(u, v)`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let d = self.ray_ego(u, v);
        let o = self.position();
        [o[0] + depth * d[0], o[1] + depth * d[1], o[2] + depth * d[2]]
    }

    /// Image coordinates and optical depth of an ego point; `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let body = self.pose.inverse_transform(p);
        let o = Self::body_to_optical(body);
        if o[2] <= 0.0 {
            return None;
        }
        Some((self.fx * o[0] / o[2] + self.cx, self.fy * o[1] / o[2] + self.cy, o[2]))
    }
}

/// Ego azimuth of the ray through the center of column `j` at the principal row.
///
/// # Panics
/// When `j >= cam.image_w`.
pub fn azimuth_of_column(cam: &CameraModel, j: usize) -> f64 {
    assert!(j < cam.image_w, "column {j} outside image width {}", cam.image_w);
    let d = cam.ray_ego(j as f64 + 0.5, cam.cy);
    wrap_angle(d[1].atan2(d[0]))
}

/// Azimuth of a cell center about the ego origin.
pub fn azimuth_of_cell(spec: &GridSpec, x: usize, y: usize) -> Result<f64> {
    let [cx, cy] = spec.cell_center(x, y);
    if cx == 0.0 && cy == 0.0 {
        return Err(Error::DegenerateAzimuth { x, y });
    }
    Ok(wrap_angle(cy.atan2(cx)))
}
