use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Grid2D;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_depth: f64,
    pub lambda_seg: f64,
    pub lambda_vel: f64,
    pub lambda_occ: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_depth: 3.0,
            lambda_seg: 25.0,
            lambda_vel: 1.0,
            lambda_occ: 30.0,
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let named = [
            ("lambda_depth", self.lambda_depth),
            ("lambda_seg", self.lambda_seg),
            ("lambda_vel", self.lambda_vel),
            ("lambda_occ", self.lambda_occ),
            ("gamma", self.gamma),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{prefix}{name}"), "must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("{prefix}alpha"), "must be in [0, 1]"));
        }
        Ok(())
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary focal loss of one probability against a 0/1 target.
#[inline]
pub fn focal_loss(p: f64, target: f64, gamma: f64, alpha: f64) -> f64 {
    let p = clamp_prob(p);
    if target >= 0.5 {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// `d focal(sigmoid(z)) / dz`, zero where the probability is clamped.
#[inline]
pub fn focal_grad_logit(z: f64, target: f64, gamma: f64, alpha: f64) -> f64 {
    let p = crate::nn::sigmoid(z);
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    let q = 1.0 - p;
    if target >= 0.5 {
        alpha * (gamma * p * q.powf(gamma) * p.ln() - q.powf(gamma + 1.0))
    } else {
        (1.0 - alpha) * (p.powf(gamma + 1.0) - gamma * p.powf(gamma) * q * q.ln())
    }
}

/// Binary cross-entropy of one probability.
#[inline]
pub fn bce(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Predictions and targets entering the combined loss. Depth entries are
/// per-bin probabilities against one-hot bins; segmentation entries are
/// foreground scores against 0/1 masks.
pub struct LossInputs<'a> {
    pub motion: &'a Grid2D,
    pub occupancy: &'a Grid2D,
    pub motion_gt: &'a Grid2D,
    pub occupancy_gt: &'a Grid2D,
    pub depth_pred: &'a [f64],
    pub depth_gt: &'a [f64],
    pub seg_pred: &'a [f64],
    pub seg_gt: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub l_depth: f64,
    pub l_seg: f64,
    pub l_vel: f64,
    pub l_occ: f64,
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        0.0
    } else {
        v.sum::<f64>() / n as f64
    }
}

pub fn mfe_loss(inp: &LossInputs, lw: &LossWeights) -> Result<LossReport> {
    inp.motion.check_same_layout(inp.motion_gt, "motion vs target")?;
    inp.occupancy.check_same_layout(inp.occupancy_gt, "occupancy vs target")?;
    if inp.motion.channels != 2 || inp.occupancy.channels != 1 {
        return Err(Error::DimMismatch("motion needs 2 channels and occupancy 1".into()));
    }
    if inp.depth_pred.len() != inp.depth_gt.len() || inp.seg_pred.len() != inp.seg_gt.len() {
        return Err(Error::DimMismatch("depth/segmentation prediction and target lengths differ".into()));
    }
    let l_vel = mean(inp.motion.data.iter().zip(&inp.motion_gt.data).map(|(a, b)| (a - b) * (a - b)));
    let l_occ = mean(
        inp.occupancy
            .data
            .iter()
            .zip(&inp.occupancy_gt.data)
            .map(|(p, y)| focal_loss(*p, *y, lw.gamma, lw.alpha)),
    );
    let l_depth = mean(inp.depth_pred.iter().zip(inp.depth_gt).map(|(p, y)| bce(*p, *y)));
    let l_seg = mean(inp.seg_pred.iter().zip(inp.seg_gt).map(|(p, y)| bce(*p, *y)));
    let total = lw.lambda_depth * l_depth + lw.lambda_seg * l_seg + lw.lambda_vel * l_vel + lw.lambda_occ * l_occ;
    Ok(LossReport {
        total,
        l_depth,
        l_seg,
        l_vel,
        l_occ,
    })
}
