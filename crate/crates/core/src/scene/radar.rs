use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{object_class, SceneConfig};
use crate::geometry::GtObject;

/// Per-point feature length: RCS and the radial velocity vector (x, y).
pub const RADAR_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub pos: [f64; 3],
    /// `(rcs, vr_x, vr_y)`: radial speed times the unit line-of-sight vector.
    pub features: [f64; RADAR_FEATURES],
    /// 0 is the most recent sweep.
    pub sweep: usize,
    /// Index of the source object, `None` for clutter.
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadarPointCloud {
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

impl RadarPointCloud {
    pub fn is_finite(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.pos.iter().chain(p.features.iter()).all(|v| v.is_finite()))
    }
}

fn radial_features(pos: [f64; 3], velocity: [f64; 2], rcs: f64, doppler_noise: f64) -> [f64; RADAR_FEATURES] {
    let r = pos[0].hypot(pos[1]);
    if r == 0.0 {
        return [rcs, 0.0, 0.0];
    }
    let u = [pos[0] / r, pos[1] / r];
    let vr = velocity[0] * u[0] + velocity[1] * u[1] + doppler_noise;
    [rcs, vr * u[0], vr * u[1]]
}

/// Accumulated multi-sweep cloud for objects given in the ego frame.
///
/// Points of sweep `s` are drawn uniformly on each footprint and moved back by
/// `velocity * s * sweep_period`, so a moving object leaves a trail of length
/// `speed * (S - 1) * sweep_period` behind it.
pub fn sample_radar(objects: &[GtObject], timestamp: f64, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> RadarPointCloud {
    let pos_noise = Normal::new(0.0, cfg.radar_noise_sigma.max(0.0)).expect("finite sigma");
    let doppler = Normal::new(0.0, cfg.doppler_noise_sigma.max(0.0)).expect("finite sigma");
    let rcs_noise = Normal::new(0.0, 0.5).expect("finite sigma");
    let mut points = Vec::new();

    for (idx, obj) in objects.iter().enumerate() {
        let class = object_class(obj.class_id);
        let (s, c) = obj.yaw.sin_cos();
        for sweep in 0..cfg.sweep_count {
            let lag = sweep as f64 * cfg.sweep_period;
            for _ in 0..cfg.radar_points_per_object {
                // draw even when dropped so dropout does not shift the stream
                let a = rng.random_range(-0.5..0.5) * obj.dims[0];
                let b = rng.random_range(-0.5..0.5) * obj.dims[1];
                let z = rng.random_range(0.0..1.0) * obj.dims[2];
                let (nx, ny) = (pos_noise.sample(rng), pos_noise.sample(rng));
                let rcs = class.rcs_mean + rcs_noise.sample(rng);
                let dn = doppler.sample(rng);
                let keep = rng.random::<f64>() >= cfg.radar_dropout;
                if !keep {
                    continue;
                }
                let pos = [
                    obj.center[0] + c * a - s * b - obj.velocity[0] * lag + nx,
                    obj.center[1] + s * a + c * b - obj.velocity[1] * lag + ny,
                    z,
                ];
                points.push(RadarPoint {
                    pos,
                    features: radial_features(pos, obj.velocity, rcs, dn),
                    sweep,
                    object: Some(idx),
                });
            }
        }
    }

    let (lo, hi) = cfg.grid.extent();
    for _ in 0..cfg.clutter_points {
        let pos = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(0.0..2.0),
        ];
        let rcs = rng.random_range(0.0..1.5);
        let sweep = rng.random_range(0..cfg.sweep_count.max(1));
        let dn = doppler.sample(rng);
        points.push(RadarPoint {
            pos,
            features: radial_features(pos, [0.0, 0.0], rcs, dn),
            sweep,
            object: None,
        });
    }

    RadarPointCloud { timestamp, points }
}
