//! Seeded synthetic scenes: constant-velocity boxes, accumulated radar sweeps
//! and painted camera feature maps with depth ground truth.

mod config;
mod generate;
pub mod io;
mod radar;
mod render;

pub use config::{object_class, EgoTwist, ObjectClass, RigConfig, SceneConfig, OBJECT_CLASSES};
pub use generate::{generate_sequence, place_objects, propagate};
pub use radar::{sample_radar, RadarPoint, RadarPointCloud, RADAR_FEATURES};
pub use render::{class_signature, ray_box_depth, render_camera, BACKGROUND_DEPTH};

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraFeatureMap, CameraModel, GtObject};

/// Planar rigid pose `world ← ego`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.yaw == 0.0
    }

    /// world ← ego
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// ego ← world
    pub fn to_ego(&self, p: [f64; 2]) -> [f64; 2] {
        if self.is_identity() {
            return p;
        }
        let (s, c) = self.yaw.sin_cos();
        let d = [p[0] - self.x, p[1] - self.y];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    pub fn rotate_to_ego(&self, v: [f64; 2]) -> [f64; 2] {
        if self.yaw == 0.0 {
            return v;
        }
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }
}

/// One camera of a frame with its rendered features and depth ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub camera: CameraModel,
    pub features: CameraFeatureMap,
    /// Optical depth per pixel, row-major `H x W`; background is [`BACKGROUND_DEPTH`].
    pub depth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub radar: RadarPointCloud,
    pub cameras: Vec<CameraView>,
    /// Objects in the world frame.
    pub objects: Vec<GtObject>,
    pub ego_pose: Pose2,
}

impl Frame {
    /// Objects expressed in this frame's ego coordinates. Velocities are
    /// rotated but not ego-compensated.
    pub fn objects_in_ego(&self) -> Vec<GtObject> {
        self.objects
            .iter()
            .map(|o| object_in_ego(o, &self.ego_pose))
            .collect()
    }
}

pub(crate) fn object_in_ego(o: &GtObject, pose: &Pose2) -> GtObject {
    if pose.is_identity() {
        return o.clone();
    }
    let c = pose.to_ego([o.center[0], o.center[1]]);
    GtObject {
        center: [c[0], c[1], o.center[2]],
        dims: o.dims,
        yaw: crate::geometry::wrap_angle(o.yaw - pose.yaw),
        velocity: pose.rotate_to_ego(o.velocity),
        class_id: o.class_id,
    }
}

/// `N + 1` synchronized frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub config: SceneConfig,
    pub frames: Vec<Frame>,
    pub frame_period: f64,
}

impl FrameSequence {
    pub fn cameras(&self) -> Vec<CameraModel> {
        self.frames
            .first()
            .map(|f| f.cameras.iter().map(|c| c.camera.clone()).collect())
            .unwrap_or_default()
    }
}
