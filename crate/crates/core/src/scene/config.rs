use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, GridSpec};

/// Box and radar statistics of one object class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectClass {
    pub name: &'static str,
    pub dims: [f64; 3],
    pub rcs_mean: f64,
}

pub const OBJECT_CLASSES: [ObjectClass; 3] = [
    ObjectClass {
        name: "car",
        dims: [4.5, 1.9, 1.6],
        rcs_mean: 2.0,
    },
    ObjectClass {
        name: "van",
        dims: [5.25, 2.125, 2.25],
        rcs_mean: 3.0,
    },
    ObjectClass {
        name: "truck",
        dims: [6.5, 2.5, 3.0],
        rcs_mean: 4.0,
    },
];

pub fn object_class(id: u8) -> &'static ObjectClass {
    &OBJECT_CLASSES[id as usize % OBJECT_CLASSES.len()]
}

/// Ring of identical cameras evenly spaced in yaw, first one facing ego +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub n_cameras: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub hfov_deg: f64,
    pub mount_height: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            n_cameras: 6,
            image_w: 32,
            image_h: 8,
            hfov_deg: 70.0,
            mount_height: 1.5,
        }
    }
}

impl RigConfig {
    pub fn cameras(&self) -> Vec<CameraModel> {
        let hfov = self.hfov_deg.to_radians();
        (0..self.n_cameras)
            .map(|i| {
                let yaw = crate::geometry::wrap_angle(i as f64 * 2.0 * std::f64::consts::PI / self.n_cameras as f64);
                CameraModel::looking_at_yaw(yaw, hfov, self.image_w, self.image_h, [0.0, 0.0, self.mount_height])
            })
            .collect()
    }
}

/// Constant ego twist: forward speed (m/s) and yaw rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoTwist {
    pub speed: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_objects: usize,
    /// `[min, max]` speed of moving objects, m/s.
    pub speed_range: [f64; 2],
    pub static_fraction: f64,
    pub radar_points_per_object: usize,
    pub clutter_points: usize,
    /// Radar position noise σ, meters.
    pub radar_noise_sigma: f64,
    pub radar_dropout: f64,
    /// Radial-velocity noise σ, m/s.
    pub doppler_noise_sigma: f64,
    pub sweep_count: usize,
    pub sweep_period: f64,
    /// Frame period `t_s`, seconds.
    pub frame_period: f64,
    pub seed: u64,
    pub grid: GridSpec,
    pub rig: RigConfig,
    /// Channels of the rendered camera feature maps.
    pub camera_channels: usize,
    /// σ of the background texture noise painted on every pixel.
    pub camera_noise_sigma: f64,
    /// Minimum clearance between the ego origin and any footprint, meters.
    pub ego_clearance: f64,
    /// Minimum gap kept between footprints, meters.
    pub placement_gap: f64,
    pub ego_twist: Option<EgoTwist>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_objects: 10,
            speed_range: [0.5, 12.0],
            static_fraction: 0.25,
            radar_points_per_object: 3,
            clutter_points: 150,
            radar_noise_sigma: 0.35,
            radar_dropout: 0.3,
            doppler_noise_sigma: 0.3,
            sweep_count: 6,
            sweep_period: 1.0 / 12.0,
            frame_period: 0.5,
            seed: 0,
            grid: GridSpec::default(),
            rig: RigConfig::default(),
            camera_channels: 16,
            camera_noise_sigma: 0.5,
            ego_clearance: 3.0,
            placement_gap: 1.0,
            ego_twist: None,
        }
    }
}

impl SceneConfig {
    /// Validates every field; the error carries the offending field path
    /// relative to `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}{name}");
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.speed_range[0] >= 0.0 && self.speed_range[0] <= self.speed_range[1]) {
            return Err(Error::config(f("speed_range"), "must satisfy 0 <= min <= max"));
        }
        if !prob(self.static_fraction) {
            return Err(Error::config(f("static_fraction"), "must be in [0, 1]"));
        }
        if !prob(self.radar_dropout) {
            return Err(Error::config(f("radar_dropout"), "must be in [0, 1]"));
        }
        if !(self.radar_noise_sigma >= 0.0) {
            return Err(Error::config(f("radar_noise_sigma"), "must be >= 0"));
        }
        if !(self.doppler_noise_sigma >= 0.0) {
            return Err(Error::config(f("doppler_noise_sigma"), "must be >= 0"));
        }
        if self.sweep_count == 0 {
            return Err(Error::config(f("sweep_count"), "must be >= 1"));
        }
        if !(self.sweep_period >= 0.0) {
            return Err(Error::config(f("sweep_period"), "must be >= 0"));
        }
        if !(self.frame_period > 0.0) {
            return Err(Error::config(f("frame_period"), "must be > 0"));
        }
        if self.camera_channels == 0 {
            return Err(Error::config(f("camera_channels"), "must be >= 1"));
        }
        if !(self.camera_noise_sigma >= 0.0) {
            return Err(Error::config(f("camera_noise_sigma"), "must be >= 0"));
        }
        if self.rig.n_cameras == 0 || self.rig.image_w == 0 || self.rig.image_h == 0 {
            return Err(Error::config(f("rig"), "needs at least one camera with a non-empty image"));
        }
        if !(self.rig.hfov_deg > 0.0 && self.rig.hfov_deg < 180.0) {
            return Err(Error::config(f("rig.hfov_deg"), "must be in (0, 180)"));
        }
        self.grid
            .validate()
            .map_err(|e| Error::config(f("grid"), e.to_string()))?;
        Ok(())
    }
}
