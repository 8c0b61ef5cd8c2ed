//! Motion-guided temporal fusion: velocity-driven warping of past BEV grids,
//! occupancy-gated recurrent aggregation and a timestamp-keyed memory bank.

mod bank;

pub use bank::{timestamp_key, MemoryBank, BANK_INDEX_FILE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Grid2D, GridSpec};
use crate::nn::{LinearLayer, WeightBundle};
use crate::scene::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatingMode {
    /// Multiply by the occupancy score.
    Soft,
    /// Multiply by `1[O >= tau_b]`.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatedHalves {
    Both,
    ShiftedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StaticCells {
    /// Static cells keep their features in place.
    Passthrough,
    /// Only dynamic cells contribute to the warped grid.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgtfConfig {
    /// Number of past frames `N`.
    pub n_frames: usize,
    /// Frame period `t_s`, seconds.
    pub frame_period: f64,
    /// Speed threshold above which a cell is shifted, m/s.
    pub tau_v: f64,
    pub gating: GatingMode,
    pub tau_b: f64,
    pub gated_halves: GatedHalves,
    pub static_cells: StaticCells,
    /// When false the warp is skipped and past grids are concatenated as-is.
    pub compensate: bool,
    /// Resample past grids into the current ego frame before warping.
    pub ego_align: bool,
}

impl Default for MgtfConfig {
    fn default() -> Self {
        Self {
            n_frames: 6,
            frame_period: 0.5,
            tau_v: 1.0,
            gating: GatingMode::Soft,
            tau_b: 0.05,
            gated_halves: GatedHalves::Both,
            static_cells: StaticCells::Passthrough,
            compensate: true,
            ego_align: false,
        }
    }
}

impl MgtfConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}{name}");
        if !(self.frame_period > 0.0 && self.frame_period.is_finite()) {
            return Err(Error::config(f("frame_period"), "must be finite and > 0"));
        }
        if !(self.tau_v >= 0.0) {
            return Err(Error::config(f("tau_v"), "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.tau_b) {
            return Err(Error::config(f("tau_b"), "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Channel reduction applied after every fusion step and the final 1x1 conv.
#[derive(Debug, Clone, PartialEq)]
pub struct MgtfWeights {
    /// `2C -> C`.
    pub reduction: LinearLayer,
    /// `C -> C`.
    pub final_conv: LinearLayer,
}

impl MgtfWeights {
    /// Reduction averaging the shifted and current halves, identity final conv.
    pub fn averaging(channels: usize) -> Self {
        let mut reduction = LinearLayer::zeros(2 * channels, channels);
        for o in 0..channels {
            reduction.weight[o * 2 * channels + o] = 0.5;
            reduction.weight[o * 2 * channels + channels + o] = 0.5;
        }
        Self {
            reduction,
            final_conv: LinearLayer::identity(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.final_conv.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.reduction.out_dim;
        self.reduction.check_dims(2 * c, c, "mgtf reduction")?;
        self.final_conv.check_dims(c, self.final_conv.out_dim, "mgtf final conv")
    }

    pub fn push_to(&self, bundle: &mut WeightBundle) {
        bundle.push("mgtf.reduction", self.reduction.clone());
        bundle.push("mgtf.final", self.final_conv.clone());
    }

    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        let w = Self {
            reduction: bundle.get("mgtf.reduction")?.clone(),
            final_conv: bundle.get("mgtf.final")?.clone(),
        };
        w.validate()?;
        Ok(w)
    }
}

/// Per-cell shift in cell units plus the dynamic mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftField {
    /// Channels `(dx, dy)` in cells.
    pub shift: Grid2D,
    pub dynamic: Vec<bool>,
}

pub fn compute_shift(motion: &Grid2D, t_s: f64, tau_v: f64, cell_size: f64) -> Result<ShiftField> {
    if motion.channels != 2 {
        return Err(Error::DimMismatch(format!("motion map has {} channels", motion.channels)));
    }
    if !(cell_size > 0.0) {
        return Err(Error::InvalidArgument("cell_size must be > 0".into()));
    }
    let n = motion.plane_len();
    let mut shift = Grid2D::zeros(motion.spec, 2);
    let mut dynamic = vec![false; n];
    for cell in 0..n {
        let (vx, vy) = (motion.data[cell], motion.data[n + cell]);
        shift.data[cell] = vx * t_s / cell_size;
        shift.data[n + cell] = vy * t_s / cell_size;
        dynamic[cell] = vx.hypot(vy) > tau_v;
    }
    Ok(ShiftField { shift, dynamic })
}

/// Scatter-mean warp: each dynamic source cell lands on its rounded shifted
/// cell and the features landing on a target are averaged. With passthrough
/// a static cell keeps its own features unless a dynamic feature lands on it.
/// Everything else, including out-of-grid landings, is zero or dropped.
pub fn warp(prev: &Grid2D, shifts: &ShiftField, static_cells: StaticCells) -> Result<Grid2D> {
    if shifts.shift.spec != prev.spec || shifts.dynamic.len() != prev.plane_len() {
        return Err(Error::SpecMismatch("shift field and grid differ".into()));
    }
    let spec = prev.spec;
    let n = prev.plane_len();
    let c = prev.channels;
    let mut out = Grid2D::zeros(spec, c);
    let mut count = vec![0u32; n];
    for src in (0..n).filter(|s| shifts.dynamic[*s]) {
        let (x, y) = spec.unlinear(src);
        let tx = x as i64 + shifts.shift.data[src].round() as i64;
        let ty = y as i64 + shifts.shift.data[n + src].round() as i64;
        if !spec.contains_index(tx, ty) {
            continue;
        }
        let target = spec.linear(tx as usize, ty as usize);
        count[target] += 1;
        for ch in 0..c {
            out.data[ch * n + target] += prev.data[ch * n + src];
        }
    }
    for (cell, k) in count.iter().enumerate() {
        if *k > 1 {
            let k = *k as f64;
            for ch in 0..c {
                out.data[ch * n + cell] /= k;
            }
        } else if *k == 0 && static_cells == StaticCells::Passthrough && !shifts.dynamic[cell] {
            for ch in 0..c {
                out.data[ch * n + cell] = prev.data[ch * n + cell];
            }
        }
    }
    Ok(out)
}

/// `Conv1x1(concat(B', B) ⊙ gate(O))`.
pub fn fuse_step(warped: &Grid2D, curr: &Grid2D, occupancy: &Grid2D, w: &MgtfWeights, cfg: &MgtfConfig) -> Result<Grid2D> {
    warped.check_same_layout(curr, "fuse_step")?;
    if occupancy.spec != curr.spec || occupancy.channels != 1 {
        return Err(Error::SpecMismatch("occupancy must be a 1-channel grid on the same spec".into()));
    }
    let c = curr.channels;
    w.reduction.check_dims(2 * c, w.reduction.out_dim, "mgtf reduction")?;
    let out_c = w.reduction.out_dim;
    let n = curr.plane_len();
    let mut out = Grid2D::zeros(curr.spec, out_c);
    let mut input = vec![0.0; 2 * c];
    let mut y = vec![0.0; out_c];
    for cell in 0..n {
        let o = occupancy.data[cell];
        let g = match cfg.gating {
            GatingMode::Soft => o,
            GatingMode::Hard => {
                if o >= cfg.tau_b {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let g_curr = match cfg.gated_halves {
            GatedHalves::Both => g,
            GatedHalves::ShiftedOnly => 1.0,
        };
        for ch in 0..c {
            input[ch] = warped.data[ch * n + cell] * g;
            input[c + ch] = curr.data[ch * n + cell] * g_curr;
        }
        w.reduction.forward_into(&input, &mut y);
        for (ch, v) in y.iter().enumerate() {
            out.data[ch * n + cell] = *v;
        }
    }
    Ok(out)
}

/// Nearest-cell resampling of a grid from ego frame `from` into ego frame
/// `to`. Channel pairs listed in `vector_pairs` are rotated as planar vectors.
pub fn align_to_ego(g: &Grid2D, from: &Pose2, to: &Pose2, vector_pairs: &[(usize, usize)]) -> Grid2D {
    let spec = g.spec;
    let n = g.plane_len();
    let mut out = Grid2D::zeros(spec, g.channels);
    let dyaw = to.yaw - from.yaw;
    let (s, c) = dyaw.sin_cos();
    for cell in 0..n {
        let (x, y) = spec.unlinear(cell);
        let p = from.to_ego(to.to_world(spec.cell_center(x, y)));
        let Some((sx, sy)) = spec.cell_of(p) else {
            continue;
        };
        let src = spec.linear(sx, sy);
        for ch in 0..g.channels {
            out.data[ch * n + cell] = g.data[ch * n + src];
        }
        for &(a, b) in vector_pairs {
            let (va, vb) = (g.data[a * n + src], g.data[b * n + src]);
            // rotate from the `from` frame into the `to` frame
            out.data[a * n + cell] = c * va + s * vb;
            out.data[b * n + cell] = -s * va + c * vb;
        }
    }
    out
}

/// Aligned per-frame inputs, oldest first (`N + 1` entries each).
pub struct MgtfInputs<'a> {
    pub bev: &'a [Grid2D],
    pub motion: &'a [Grid2D],
    pub occupancy: &'a [Grid2D],
    pub timestamps: &'a [f64],
    /// Ego poses, needed only with `ego_align`.
    pub poses: Option<&'a [Pose2]>,
}

impl MgtfInputs<'_> {
    fn check(&self, cfg: &MgtfConfig) -> Result<GridSpec> {
        let want = cfg.n_frames + 1;
        let lens = [self.bev.len(), self.motion.len(), self.occupancy.len(), self.timestamps.len()];
        if lens.iter().any(|l| *l != want) {
            return Err(Error::MisalignedSequence(format!(
                "expected {want} frames, got bev/motion/occupancy/timestamps = {lens:?}"
            )));
        }
        if let Some(p) = self.poses {
            if p.len() != want {
                return Err(Error::MisalignedSequence(format!("{} poses for {want} frames", p.len())));
            }
        }
        if !self.timestamps.windows(2).all(|t| t[0] < t[1]) {
            return Err(Error::MisalignedSequence("timestamps must increase".into()));
        }
        let spec = self.bev[0].spec;
        for k in 0..want {
            self.bev[k].check_same_layout(&self.bev[0], "temporal bev")?;
            if self.motion[k].spec != spec || self.motion[k].channels != 2 {
                return Err(Error::MisalignedSequence(format!("motion map {k} does not match")));
            }
            if self.occupancy[k].spec != spec || self.occupancy[k].channels != 1 {
                return Err(Error::MisalignedSequence(format!("occupancy map {k} does not match")));
            }
        }
        Ok(spec)
    }
}

/// Recurrent fusion over `N + 1` frames, returning `Conv1x1(B̂_t)`.
///
/// Every intermediate `B̂` is stored in `bank`; entries already present for
/// the same window origin are reused instead of recomputed.
pub fn run_mgtf(inp: &MgtfInputs, cfg: &MgtfConfig, w: &MgtfWeights, bank: &mut MemoryBank) -> Result<Grid2D> {
    let spec = inp.check(cfg)?;
    w.validate()?;
    let keys: Vec<i64> = inp.timestamps.iter().map(|t| timestamp_key(*t)).collect();
    bank.begin_window(keys[0], cfg.n_frames + 1);

    // resume from the newest cached step
    let start = (0..keys.len()).rev().find(|k| bank.get(keys[*k]).is_some());
    let (mut fused, first) = match start {
        Some(k) => (bank.get(keys[k]).cloned().expect("present"), k + 1),
        None => {
            let b0 = inp.bev[0].clone();
            bank.insert(keys[0], b0.clone());
            (b0, 1)
        }
    };
    for k in first..keys.len() {
        let (mut prev, mut motion) = (fused, inp.motion[k - 1].clone());
        if cfg.ego_align {
            if let Some(poses) = inp.poses {
                prev = align_to_ego(&prev, &poses[k - 1], &poses[k], &[]);
                motion = align_to_ego(&motion, &poses[k - 1], &poses[k], &[(0, 1)]);
            }
        }
        let warped = if cfg.compensate {
            let shifts = compute_shift(&motion, cfg.frame_period, cfg.tau_v, spec.cell_size)?;
            warp(&prev, &shifts, cfg.static_cells)?
        } else {
            prev
        };
        fused = fuse_step(&warped, &inp.bev[k], &inp.occupancy[k], w, cfg)?;
        bank.insert(keys[k], fused.clone());
    }
    apply_conv1x1(&fused, &w.final_conv)
}

pub fn apply_conv1x1(g: &Grid2D, layer: &LinearLayer) -> Result<Grid2D> {
    layer.check_dims(g.channels, layer.out_dim, "1x1 conv")?;
    let n = g.plane_len();
    let mut out = Grid2D::zeros(g.spec, layer.out_dim);
    let mut y = vec![0.0; layer.out_dim];
    for cell in 0..n {
        layer.forward_into(&g.cell_vector(cell), &mut y);
        for (ch, v) in y.iter().enumerate() {
            out.data[ch * n + cell] = *v;
        }
    }
    Ok(out)
}
