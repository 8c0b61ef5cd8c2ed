use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::radar::sample_radar;
use super::render::render_camera;
use super::{config::OBJECT_CLASSES, object_in_ego, CameraView, Frame, FrameSequence, Pose2, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::{bev_footprint, footprints_overlap, wrap_angle, GtObject, Polygon2D};
use crate::rng::substream;

const MAX_PLACEMENT_ATTEMPTS: usize = 500;

/// Positions and velocities are snapped to multiples of 2^-10 so constant
/// velocity propagation with dyadic frame periods is exact in `f64`.
#[inline]
fn quantize(v: f64) -> f64 {
    (v * 1024.0).round() / 1024.0
}

/// Object state at time `t` under constant velocity.
pub fn propagate(obj: &GtObject, t: f64) -> GtObject {
    GtObject {
        center: [
            obj.center[0] + obj.velocity[0] * t,
            obj.center[1] + obj.velocity[1] * t,
            obj.center[2],
        ],
        ..obj.clone()
    }
}

pub(crate) fn ego_pose_at(cfg: &SceneConfig, t: f64) -> Pose2 {
    match cfg.ego_twist {
        None => Pose2::identity(),
        Some(tw) => {
            let yaw = tw.yaw_rate * t;
            let (x, y) = if tw.yaw_rate.abs() < 1e-12 {
                (tw.speed * t, 0.0)
            } else {
                let r = tw.speed / tw.yaw_rate;
                (r * yaw.sin(), r * (1.0 - yaw.cos()))
            };
            Pose2 {
                x,
                y,
                yaw: wrap_angle(yaw),
            }
        }
    }
}

fn distance_to_polygon(poly: &Polygon2D, p: [f64; 2]) -> f64 {
    if poly.contains_convex(p) {
        return 0.0;
    }
    let n = poly.vertices.len();
    (0..n)
        .map(|i| {
            let a = poly.vertices[i];
            let b = poly.vertices[(i + 1) % n];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let ap = [p[0] - a[0], p[1] - a[1]];
            let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
            (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Samples the frame-0 state of `cfg.n_objects` objects whose footprints stay
/// inside the grid, clear of the ego and pairwise disjoint in every frame.
pub fn place_objects(cfg: &SceneConfig, n_frames: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GtObject>> {
    let times: Vec<f64> = (0..n_frames).map(|k| k as f64 * cfg.frame_period).collect();
    let poses: Vec<Pose2> = times.iter().map(|&t| ego_pose_at(cfg, t)).collect();
    let t_last = *times.last().unwrap_or(&0.0);
    let (lo, hi) = cfg.grid.extent();
    let edge = 0.5;

    let mut placed: Vec<GtObject> = Vec::with_capacity(cfg.n_objects);
    // inflated footprints of placed objects, per frame
    let mut occupied: Vec<Vec<Polygon2D>> = vec![Vec::new(); n_frames];

    for i in 0..cfg.n_objects {
        let mut ok = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let class_id = rng.random_range(0..OBJECT_CLASSES.len()) as u8;
            let class = &OBJECT_CLASSES[class_id as usize];
            let is_static = rng.random::<f64>() < cfg.static_fraction;
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = if is_static || cfg.speed_range[1] <= 0.0 {
                0.0
            } else if cfg.speed_range[0] == cfg.speed_range[1] {
                cfg.speed_range[0]
            } else {
                rng.random_range(cfg.speed_range[0]..cfg.speed_range[1])
            };
            let velocity = [quantize(speed * heading.cos()), quantize(speed * heading.sin())];
            let yaw = if speed > 0.0 {
                wrap_angle(velocity[1].atan2(velocity[0]))
            } else {
                wrap_angle(heading)
            };
            // current-frame position, then back out the frame-0 center
            let last_ego = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
            let last_world = poses.last().map(|p| p.to_world(last_ego)).unwrap_or(last_ego);
            let c0 = [
                quantize(last_world[0] - velocity[0] * t_last),
                quantize(last_world[1] - velocity[1] * t_last),
            ];
            let obj = GtObject {
                center: [c0[0], c0[1], class.dims[2] / 2.0],
                dims: class.dims,
                yaw,
                velocity,
                class_id,
            };
            let mut inflated = obj.clone();
            inflated.dims[0] += cfg.placement_gap;
            inflated.dims[1] += cfg.placement_gap;

            let fits = times.iter().zip(&poses).enumerate().all(|(k, (&t, pose))| {
                let ego_obj = object_in_ego(&propagate(&obj, t), pose);
                let fp = bev_footprint(&ego_obj);
                let (plo, phi) = fp.bounds();
                if plo[0] < lo[0] + edge || plo[1] < lo[1] + edge || phi[0] > hi[0] - edge || phi[1] > hi[1] - edge {
                    return false;
                }
                if distance_to_polygon(&fp, [0.0, 0.0]) < cfg.ego_clearance {
                    return false;
                }
                let infl = bev_footprint(&object_in_ego(&propagate(&inflated, t), pose));
                !occupied[k].iter().any(|other| footprints_overlap(&infl, other))
            });
            if fits {
                ok = Some((obj, inflated));
                break;
            }
        }
        let (obj, inflated) = ok.ok_or_else(|| {
            Error::SceneOverconstrained(format!(
                "could not place object {} of {} after {MAX_PLACEMENT_ATTEMPTS} attempts",
                i + 1,
                cfg.n_objects
            ))
        })?;
        for (k, (&t, pose)) in times.iter().zip(&poses).enumerate() {
            occupied[k].push(bev_footprint(&object_in_ego(&propagate(&inflated, t), pose)));
        }
        placed.push(obj);
    }
    Ok(placed)
}

/// Generates `n_frames` frames spaced by `cfg.frame_period`, oldest first.
pub fn generate_sequence(cfg: &SceneConfig, n_frames: usize) -> Result<FrameSequence> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    cfg.validate("scene.")?;
    let mut rng = substream(cfg.seed, "scene", 0);
    let initial = place_objects(cfg, n_frames, &mut rng)?;
    let cameras = cfg.rig.cameras();

    let mut frames = Vec::with_capacity(n_frames);
    let mut objects = initial;
    for k in 0..n_frames {
        let timestamp = k as f64 * cfg.frame_period;
        if k > 0 {
            objects = objects.iter().map(|o| propagate(o, cfg.frame_period)).collect();
        }
        let ego_pose = ego_pose_at(cfg, timestamp);
        let ego_objects: Vec<GtObject> = objects.iter().map(|o| object_in_ego(o, &ego_pose)).collect();
        let radar = sample_radar(&ego_objects, timestamp, cfg, &mut substream(cfg.seed, "radar", k as u64));
        let views = cameras
            .iter()
            .enumerate()
            .map(|(i, cam)| {
                let mut rng = substream(cfg.seed, "camera", (k * cameras.len() + i) as u64);
                let (features, depth) = render_camera(&ego_objects, cam, i, cfg.camera_channels, cfg.camera_noise_sigma, &mut rng);
                CameraView {
                    camera: cam.clone(),
                    features,
                    depth,
                }
            })
            .collect();
        frames.push(Frame {
            timestamp,
            radar,
            cameras: views,
            objects: objects.clone(),
            ego_pose,
        });
    }
    Ok(FrameSequence {
        config: cfg.clone(),
        frames,
        frame_period: cfg.frame_period,
    })
}
