use super::lift::{depth_seg_head, lift_to_bev, DepthSegOutput};
use super::rca::{compress_features, enhance_perspective, radar_columns, AzimuthGroups};
use super::{MvfConfig, MvfWeights};
use crate::error::{Error, Result};
use crate::geometry::{Grid2D, GridSpec};
use crate::nn::{sigmoid, LinearLayer};
use crate::par;
use crate::scene::{CameraView, RadarPointCloud, RADAR_FEATURES};

/// Pillar encoder input: `(x_rel, y_rel, z, features..., sweep_age)`.
pub const PILLAR_INPUTS: usize = 4 + RADAR_FEATURES;

/// Per-cell max-pool of linear point embeddings; empty cells stay zero.
/// `x_rel`/`y_rel` are offsets from the cell center, `sweep_age` the sweep index.
pub fn radar_bev_encode(cloud: &RadarPointCloud, grid: &GridSpec, pillar: &LinearLayer) -> Result<Grid2D> {
    pillar.check_dims(PILLAR_INPUTS, pillar.out_dim, "pillar")?;
    let c = pillar.out_dim;
    let mut out = Grid2D::zeros(*grid, c);
    let plane = out.plane_len();
    let mut seen = vec![false; plane];
    let mut input = [0.0; PILLAR_INPUTS];
    let mut emb = vec![0.0; c];
    for p in &cloud.points {
        let Some((x, y)) = grid.cell_of([p.pos[0], p.pos[1]]) else {
            continue;
        };
        let center = grid.cell_center(x, y);
        input[0] = p.pos[0] - center[0];
        input[1] = p.pos[1] - center[1];
        input[2] = p.pos[2];
        input[3..3 + RADAR_FEATURES].copy_from_slice(&p.features);
        input[3 + RADAR_FEATURES] = p.sweep as f64;
        pillar.forward_into(&input, &mut emb);
        let cell = grid.linear(x, y);
        for (ch, e) in emb.iter().enumerate() {
            let slot = &mut out.data[ch * plane + cell];
            *slot = if seen[cell] { slot.max(*e) } else { *e };
        }
        seen[cell] = true;
    }
    Ok(out)
}

/// `B = Conv1x1(concat(g_c ⊙ cam, g_r ⊙ radar))` with sigmoid gates computed
/// from `concat(cam, radar)`.
pub fn gated_fuse(cam: &Grid2D, radar: &Grid2D, w: &MvfWeights) -> Result<Grid2D> {
    cam.check_same_layout(radar, "gated_fuse")?;
    let c = cam.channels;
    w.gate_cam.check_dims(2 * c, c, "gate_cam")?;
    w.gate_radar.check_dims(2 * c, c, "gate_radar")?;
    w.fuse.check_dims(2 * c, w.fuse.out_dim, "fuse")?;
    let out_c = w.fuse.out_dim;
    let plane = cam.plane_len();
    let mut out = Grid2D::zeros(cam.spec, out_c);
    let mut input = vec![0.0; 2 * c];
    let mut gc = vec![0.0; c];
    let mut gr = vec![0.0; c];
    let mut y = vec![0.0; out_c];
    for cell in 0..plane {
        for ch in 0..c {
            input[ch] = cam.data[ch * plane + cell];
            input[c + ch] = radar.data[ch * plane + cell];
        }
        w.gate_cam.forward_into(&input, &mut gc);
        w.gate_radar.forward_into(&input, &mut gr);
        for ch in 0..c {
            input[ch] *= sigmoid(gc[ch]);
            input[c + ch] *= sigmoid(gr[ch]);
        }
        w.fuse.forward_into(&input, &mut y);
        for (ch, v) in y.iter().enumerate() {
            out.data[ch * plane + cell] = *v;
        }
    }
    Ok(out)
}

/// Intermediate and final products of one frame's multi-view fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct MvfOutput {
    pub radar_bev: Grid2D,
    pub cam_bev: Grid2D,
    /// Fused BEV features `B`.
    pub bev: Grid2D,
    pub depth_seg: Vec<DepthSegOutput>,
}

/// Runs the full fusion for one frame. With `camera_only` the radar grid is
/// zero for the column attention and `B` is the lifted camera grid itself.
pub fn run_mvf(
    radar: &RadarPointCloud,
    cameras: &[CameraView],
    groups: &[AzimuthGroups],
    w: &MvfWeights,
    cfg: &MvfConfig,
    grid: &GridSpec,
    camera_only: bool,
) -> Result<MvfOutput> {
    let radar_bev = if camera_only {
        Grid2D::zeros(*grid, w.pillar.out_dim)
    } else {
        radar_bev_encode(radar, grid, &w.pillar)?
    };
    run_mvf_with_radar(radar_bev, cameras, groups, w, cfg, grid, camera_only)
}

/// [`run_mvf`] with the radar grid already encoded.
pub fn run_mvf_with_radar(
    radar_bev: Grid2D,
    cameras: &[CameraView],
    groups: &[AzimuthGroups],
    w: &MvfWeights,
    cfg: &MvfConfig,
    grid: &GridSpec,
    camera_only: bool,
) -> Result<MvfOutput> {
    if groups.len() != cameras.len() {
        return Err(Error::DimMismatch(format!(
            "{} azimuth groups for {} cameras",
            groups.len(),
            cameras.len()
        )));
    }
    if radar_bev.spec != *grid || radar_bev.channels != w.pillar.out_dim {
        return Err(Error::SpecMismatch("radar grid does not match the fusion grid".into()));
    }
    let bins = cfg.bins();
    let pairs: Vec<(&CameraView, &AzimuthGroups)> = cameras.iter().zip(groups).collect();
    let per_camera = par::try_map(&pairs, |(view, group)| -> Result<(Grid2D, DepthSegOutput)> {
        let (wc, hc) = compress_features(&view.features, w)?;
        let wbar = radar_columns(&wc, &radar_bev, group, w)?;
        let fhat = enhance_perspective(&view.features, &wbar, &hc, w)?;
        let d = depth_seg_head(&fhat, w, &bins)?;
        let lifted = lift_to_bev(&fhat, &d, &view.camera, grid, cfg.tau_p)?;
        Ok((lifted, d))
    })?;
    let mut cam_bev = Grid2D::zeros(*grid, w.perspective.out_dim);
    let mut depth_seg = Vec::with_capacity(per_camera.len());
    for (lifted, d) in per_camera {
        cam_bev.check_same_layout(&lifted, "camera lift")?;
        for (a, b) in cam_bev.data.iter_mut().zip(&lifted.data) {
            *a += b;
        }
        depth_seg.push(d);
    }
    let bev = if camera_only {
        cam_bev.clone()
    } else {
        gated_fuse(&cam_bev, &radar_bev, w)?
    };
    Ok(MvfOutput {
        radar_bev,
        cam_bev,
        bev,
        depth_seg,
    })
}
