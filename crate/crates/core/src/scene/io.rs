//! Directory layout of a serialized sequence:
//!
//! ```text
//! scene.json            config, frame period, per-frame timestamp/pose/objects/cameras
//! radar_<kkk>.csv       x,y,z,rcs,vr_x,vr_y,sweep,object   (object = -1 for clutter)
//! cam_<kkk>_<i>.bin     camera features, dims (C, H, W)
//! depth_<kkk>_<i>.bin   depth ground truth, dims (1, H, W)
//! ```
//!
//! `<kkk>` is the zero-padded frame index within the sequence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CameraView, Frame, FrameSequence, Pose2, RadarPoint, RadarPointCloud, SceneConfig};
use crate::array_io::{write_atomic, Array3};
use crate::error::{Error, Result};
use crate::geometry::{CameraFeatureMap, CameraModel, GtObject};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    timestamp: f64,
    ego_pose: Pose2,
    objects: Vec<GtObject>,
    cameras: Vec<CameraModel>,
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    schema_version: u32,
    frame_period: f64,
    config: SceneConfig,
    frames: Vec<FrameMeta>,
}

#[derive(Serialize, Deserialize)]
struct RadarRow {
    x: f64,
    y: f64,
    z: f64,
    rcs: f64,
    vr_x: f64,
    vr_y: f64,
    sweep: usize,
    object: i64,
}

pub fn radar_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("radar_{k:03}.csv"))
}

pub fn cam_file(dir: &Path, k: usize, i: usize) -> PathBuf {
    dir.join(format!("cam_{k:03}_{i}.bin"))
}

pub fn depth_file(dir: &Path, k: usize, i: usize) -> PathBuf {
    dir.join(format!("depth_{k:03}_{i}.bin"))
}

fn radar_to_csv(cloud: &RadarPointCloud, path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &cloud.points {
        w.serialize(RadarRow {
            x: p.pos[0],
            y: p.pos[1],
            z: p.pos[2],
            rcs: p.features[0],
            vr_x: p.features[1],
            vr_y: p.features[2],
            sweep: p.sweep,
            object: p.object.map_or(-1, |o| o as i64),
        })
        .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::format(path, e.to_string()))
}

fn radar_from_csv(path: &Path, timestamp: f64) -> Result<RadarPointCloud> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut points = Vec::new();
    for row in r.deserialize::<RadarRow>() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        points.push(RadarPoint {
            pos: [row.x, row.y, row.z],
            features: [row.rcs, row.vr_x, row.vr_y],
            sweep: row.sweep,
            object: usize::try_from(row.object).ok(),
        });
    }
    Ok(RadarPointCloud { timestamp, points })
}

/// Writes `seq` into `dir` and returns the written paths, `scene.json` first.
pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    let meta = SceneMeta {
        schema_version: SCENE_SCHEMA_VERSION,
        frame_period: seq.frame_period,
        config: seq.config.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| FrameMeta {
                timestamp: f.timestamp,
                ego_pose: f.ego_pose,
                objects: f.objects.clone(),
                cameras: f.cameras.iter().map(|c| c.camera.clone()).collect(),
            })
            .collect(),
    };
    let scene_path = dir.join("scene.json");
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::format(&scene_path, e.to_string()))?;
    write_atomic(&scene_path, &json)?;
    let mut written = vec![scene_path];
    for (k, frame) in seq.frames.iter().enumerate() {
        let path = radar_file(dir, k);
        write_atomic(&path, &radar_to_csv(&frame.radar, &path)?)?;
        written.push(path);
        for (i, view) in frame.cameras.iter().enumerate() {
            let f = &view.features;
            let path = cam_file(dir, k, i);
            Array3::new([f.channels, f.height, f.width], f.data.clone())?.save(&path)?;
            written.push(path);
            let path = depth_file(dir, k, i);
            Array3::new([1, f.height, f.width], view.depth.clone())?.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    let scene_path = dir.join("scene.json");
    let bytes = std::fs::read(&scene_path).map_err(|e| Error::io(&scene_path, e))?;
    let meta: SceneMeta = serde_json::from_slice(&bytes).map_err(|e| Error::format(&scene_path, e.to_string()))?;
    if meta.schema_version != SCENE_SCHEMA_VERSION {
        return Err(Error::format(
            &scene_path,
            format!("unsupported schema version {}", meta.schema_version),
        ));
    }
    let mut frames = Vec::with_capacity(meta.frames.len());
    for (k, fm) in meta.frames.into_iter().enumerate() {
        let radar = radar_from_csv(&radar_file(dir, k), fm.timestamp)?;
        let mut cameras = Vec::with_capacity(fm.cameras.len());
        for (i, camera) in fm.cameras.into_iter().enumerate() {
            let path = cam_file(dir, k, i);
            let a = Array3::load(&path)?;
            let features = CameraFeatureMap::from_vec(i, a.dims[0], a.dims[1], a.dims[2], a.data)
                .map_err(|e| Error::format(&path, e.to_string()))?;
            if a.dims[1] != camera.image_h || a.dims[2] != camera.image_w {
                return Err(Error::format(&path, "feature map size differs from camera model"));
            }
            let path = depth_file(dir, k, i);
            let d = Array3::load(&path)?;
            if d.dims != [1, camera.image_h, camera.image_w] {
                return Err(Error::format(&path, format!("unexpected depth dims {:?}", d.dims)));
            }
            cameras.push(CameraView {
                camera,
                features,
                depth: d.data,
            });
        }
        frames.push(Frame {
            timestamp: fm.timestamp,
            radar,
            cameras,
            objects: fm.objects,
            ego_pose: fm.ego_pose,
        });
    }
    Ok(FrameSequence {
        config: meta.config,
        frames,
        frame_period: meta.frame_period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;
    use crate::scene::generate_sequence;

    #[test]
    fn sequence_roundtrip_is_exact() {
        let cfg = SceneConfig {
            n_objects: 3,
            seed: 9,
            grid: GridSpec::new(32, 32, 1.0, [-16.0, -16.0]).unwrap(),
            ..SceneConfig::default()
        };
        let seq = generate_sequence(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = save_sequence(&seq, dir.path()).unwrap();
        assert_eq!(files.len(), 1 + 2 * (1 + 2 * cfg.rig.n_cameras));
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(back, seq);
    }
}
