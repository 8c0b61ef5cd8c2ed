use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraFeatureMap, CameraModel, GtObject};
use crate::rng::substream;

/// Depth of pixels whose ray hits no object. It lands in the last depth bin.
pub const BACKGROUND_DEPTH: f64 = f64::INFINITY;

const SIGNATURE_SEED: u64 = 0x00C1_A551_6E00;

/// Fixed feature signature of an object class, independent of the scene seed.
pub fn class_signature(class_id: u8, channels: usize) -> Vec<f64> {
    let mut rng = substream(SIGNATURE_SEED, "class-signature", class_id as u64);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (0..channels).map(|_| 1.0 + n.sample(&mut rng)).collect()
}

/// Smallest positive ray parameter `t` where `origin + t·dir` enters the
/// object's box (z from 0 to height above its base), or `None`.
pub fn ray_box_depth(origin: [f64; 3], dir: [f64; 3], obj: &GtObject) -> Option<f64> {
    let (s, c) = obj.yaw.sin_cos();
    // express ray in the box frame
    let rel = [origin[0] - obj.center[0], origin[1] - obj.center[1], origin[2] - obj.center[2]];
    let o = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let half = [obj.dims[0] / 2.0, obj.dims[1] / 2.0, obj.dims[2] / 2.0];
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t1 = (-half[k] - o[k]) / d[k];
        let t2 = (half[k] - o[k]) / d[k];
        t_near = t_near.max(t1.min(t2));
        t_far = t_far.min(t1.max(t2));
    }
    if t_near > t_far || t_far <= 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

/// Renders the nearest-surface depth and painted features of `objects`
/// (ego frame) for one camera. Depth is optical depth, row-major `H x W`.
pub fn render_camera(
    objects: &[GtObject],
    cam: &CameraModel,
    camera_id: usize,
    channels: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (CameraFeatureMap, Vec<f64>) {
    let (w, h) = (cam.image_w, cam.image_h);
    let signatures: Vec<Vec<f64>> = objects.iter().map(|o| class_signature(o.class_id, channels)).collect();
    let origin = cam.position();
    let mut depth = vec![BACKGROUND_DEPTH; w * h];
    let mut hit = vec![None; w * h];
    for v in 0..h {
        for u in 0..w {
            let dir = cam.ray_ego(u as f64 + 0.5, v as f64 + 0.5);
            for (i, obj) in objects.iter().enumerate() {
                if let Some(t) = ray_box_depth(origin, dir, obj) {
                    if t < depth[v * w + u] {
                        depth[v * w + u] = t;
                        hit[v * w + u] = Some(i);
                    }
                }
            }
        }
    }
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut fmap = CameraFeatureMap::zeros(camera_id, channels, h, w);
    for c in 0..channels {
        for v in 0..h {
            for u in 0..w {
                let base = hit[v * w + u].map_or(0.0, |i| signatures[i][c]);
                fmap.set(c, v, u, base + noise.sample(rng));
            }
        }
    }
    (fmap, depth)
}
