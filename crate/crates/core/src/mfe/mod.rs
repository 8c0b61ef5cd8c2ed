//! Motion feature estimation: per-cell velocity and occupancy heads, target
//! rasterization, losses and closed-form / gradient-based head fitting.

mod fit;
mod loss;

pub use fit::{
    fit_heads, fit_occupancy_head, fit_velocity_head, occupancy_objective, FitConfig, FitReport, FitSample, FittedHeads,
    FIT_REPORT_SCHEMA,
};
pub use loss::{bce, focal_grad_logit, focal_loss, mfe_loss, LossInputs, LossReport, LossWeights, PROB_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_footprint, cell_overlap_areas, Grid2D, GridSpec, GtObject};
use crate::nn::{sigmoid, LinearLayer, WeightBundle};

/// Number of taps of the 3x3 neighborhood.
pub const TAPS: usize = 9;

/// Linear `Conv1x1(Conv3x3(B))` head. `conv3` maps a `9C` patch (tap-major,
/// taps ordered by `dx` then `dy` in `-1..=1`) to `mid` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub conv3: LinearLayer,
    pub conv1: LinearLayer,
}

impl HeadWeights {
    pub fn zeros(channels: usize, mid: usize, out: usize) -> Self {
        Self {
            conv3: LinearLayer::zeros(TAPS * channels, mid),
            conv1: LinearLayer::zeros(mid, out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv3.in_dim / TAPS
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv3.in_dim % TAPS != 0 {
            return Err(Error::DimMismatch(format!("3x3 conv input {} is not 9C", self.conv3.in_dim)));
        }
        self.conv1.check_dims(self.conv3.out_dim, self.conv1.out_dim, "head conv1x1")
    }

    pub fn push_to(&self, bundle: &mut WeightBundle, prefix: &str) {
        bundle.push(format!("{prefix}.conv3"), self.conv3.clone());
        bundle.push(format!("{prefix}.conv1"), self.conv1.clone());
    }

    pub fn from_bundle(bundle: &WeightBundle, prefix: &str) -> Result<Self> {
        let h = Self {
            conv3: bundle.get(&format!("{prefix}.conv3"))?.clone(),
            conv1: bundle.get(&format!("{prefix}.conv1"))?.clone(),
        };
        h.validate()?;
        Ok(h)
    }
}

/// Zero-padded 3x3 neighborhood of cell `(x, y)` written into `out` (`9C`).
#[inline]
pub fn gather_patch(b: &Grid2D, x: usize, y: usize, out: &mut [f64]) {
    let c = b.channels;
    let plane = b.plane_len();
    let (nx, ny) = (b.spec.x_cells as i64, b.spec.y_cells as i64);
    for dx in -1i64..=1 {
        for dy in -1i64..=1 {
            let t = ((dx + 1) * 3 + (dy + 1)) as usize;
            let (sx, sy) = (x as i64 + dx, y as i64 + dy);
            let slot = &mut out[t * c..(t + 1) * c];
            if sx < 0 || sy < 0 || sx >= nx || sy >= ny {
                slot.fill(0.0);
            } else {
                let cell = sx as usize * b.spec.y_cells + sy as usize;
                for (ch, s) in slot.iter_mut().enumerate() {
                    *s = b.data[ch * plane + cell];
                }
            }
        }
    }
}

/// Pre-activation output of a head (`out` channels).
pub fn head_logits(b: &Grid2D, w: &HeadWeights) -> Result<Grid2D> {
    w.validate()?;
    if w.in_channels() != b.channels {
        return Err(Error::DimMismatch(format!(
            "head expects {} channels, grid has {}",
            w.in_channels(),
            b.channels
        )));
    }
    let out_c = w.out_channels();
    let mut out = Grid2D::zeros(b.spec, out_c);
    let plane = out.plane_len();
    let mut patch = vec![0.0; w.conv3.in_dim];
    let mut mid = vec![0.0; w.conv3.out_dim];
    let mut y = vec![0.0; out_c];
    for x in 0..b.spec.x_cells {
        for yy in 0..b.spec.y_cells {
            gather_patch(b, x, yy, &mut patch);
            w.conv3.forward_into(&patch, &mut mid);
            w.conv1.forward_into(&mid, &mut y);
            let cell = b.spec.linear(x, yy);
            for (ch, v) in y.iter().enumerate() {
                out.data[ch * plane + cell] = *v;
            }
        }
    }
    Ok(out)
}

/// Per-cell `(v_x, v_y)`.
pub fn velocity_head(b: &Grid2D, w: &HeadWeights) -> Result<Grid2D> {
    if w.out_channels() != 2 {
        return Err(Error::DimMismatch(format!("velocity head has {} outputs", w.out_channels())));
    }
    head_logits(b, w)
}

/// Per-cell occupancy probability.
pub fn occupancy_head(b: &Grid2D, w: &HeadWeights) -> Result<Grid2D> {
    if w.out_channels() != 1 {
        return Err(Error::DimMismatch(format!("occupancy head has {} outputs", w.out_channels())));
    }
    let mut g = head_logits(b, w)?;
    g.data.iter_mut().for_each(|v| *v = sigmoid(*v));
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfeConfig {
    pub tau_iou: f64,
    pub ridge_lambda: f64,
    pub occupancy_iters: usize,
    pub occupancy_lr: f64,
    pub loss: LossWeights,
}

impl Default for MfeConfig {
    fn default() -> Self {
        Self {
            tau_iou: 0.5,
            ridge_lambda: 1.0,
            occupancy_iters: 150,
            occupancy_lr: 0.05,
            loss: LossWeights::default(),
        }
    }
}

impl MfeConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}{name}");
        if !(self.tau_iou > 0.0 && self.tau_iou <= 1.0) {
            return Err(Error::config(f("tau_iou"), "must be in (0, 1]"));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::config(f("ridge_lambda"), "must be finite and >= 0"));
        }
        if !(self.occupancy_lr > 0.0 && self.occupancy_lr.is_finite()) {
            return Err(Error::config(f("occupancy_lr"), "must be finite and > 0"));
        }
        self.loss.validate(&f("loss."))
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            ridge_lambda: self.ridge_lambda,
            occupancy_iters: self.occupancy_iters,
            occupancy_lr: self.occupancy_lr,
            gamma: self.loss.gamma,
            alpha: self.loss.alpha,
        }
    }
}

/// Rasterized supervision: `(M^GT, O^GT)`.
///
/// A cell is positive when the union of footprints covers at least `tau_iou`
/// of it; it then takes the velocity of the object with the largest overlap
/// (first in list order on ties).
pub fn make_targets(grid: &GridSpec, objects: &[GtObject], tau_iou: f64) -> (Grid2D, Grid2D) {
    let n = grid.n_cells();
    let polys: Vec<_> = objects.iter().map(bev_footprint).collect();
    let mut total = vec![0.0; n];
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];
    for (i, cells) in cell_overlap_areas(grid, &polys).into_iter().enumerate() {
        for (cell, a) in cells {
            total[cell] += a;
            if best[cell].is_none_or(|(ba, _)| a > ba) {
                best[cell] = Some((a, i));
            }
        }
    }
    let cell_area = grid.cell_size * grid.cell_size;
    let mut m = Grid2D::zeros(*grid, 2);
    let mut o = Grid2D::zeros(*grid, 1);
    for cell in 0..n {
        let r = (total[cell] / cell_area).clamp(0.0, 1.0);
        if r >= tau_iou {
            o.data[cell] = 1.0;
            if let Some((_, i)) = best[cell] {
                m.data[cell] = objects[i].velocity[0];
                m.data[n + cell] = objects[i].velocity[1];
            }
        }
    }
    (m, o)
}
