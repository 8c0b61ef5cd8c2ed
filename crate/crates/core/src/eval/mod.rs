//! Peak-extraction detector, center-distance matching and velocity-binned AP.

mod detect;
mod metrics;

pub use detect::{detect, find_peaks, CenterMode, Detection};
pub use metrics::{
    average_precision, gain_table, match_and_score, BinGain, BinReport, EvalReport, GainTable, SceneEval, EVAL_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau_det: f64,
    /// Suppression radius in cells, about one car length on the default grid.
    pub nms_radius: f64,
    pub center_mode: CenterMode,
    /// Center-distance thresholds in meters, increasing.
    pub thresholds: Vec<f64>,
    /// Lower edges of the GT speed bins (m/s); the last bin is open-ended.
    pub speed_bin_edges: Vec<f64>,
    /// Threshold whose matches feed the center/velocity errors and counts.
    pub error_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau_det: 0.05,
            nms_radius: 4.5,
            center_mode: CenterMode::Centroid,
            thresholds: vec![0.5, 1.0, 2.0, 4.0],
            speed_bin_edges: vec![0.0, 0.5, 2.0, 5.0, 10.0],
            error_threshold: 2.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}{name}");
        if !(0.0..=1.0).contains(&self.tau_det) {
            return Err(Error::config(f("tau_det"), "must be in [0, 1]"));
        }
        if !(self.nms_radius >= 0.0) {
            return Err(Error::config(f("nms_radius"), "must be >= 0"));
        }
        if self.thresholds.is_empty() || !self.thresholds.windows(2).all(|w| w[0] < w[1]) || self.thresholds[0] <= 0.0 {
            return Err(Error::config(f("thresholds"), "must be positive and strictly increasing"));
        }
        if self.speed_bin_edges.is_empty()
            || self.speed_bin_edges[0] != 0.0
            || !self.speed_bin_edges.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::config(f("speed_bin_edges"), "must start at 0 and increase"));
        }
        if !(self.error_threshold > 0.0) {
            return Err(Error::config(f("error_threshold"), "must be > 0"));
        }
        Ok(())
    }

    /// `(lo, hi)` per bin, `hi = inf` for the last.
    pub fn bins(&self) -> Vec<(f64, f64)> {
        let e = &self.speed_bin_edges;
        (0..e.len())
            .map(|i| (e[i], e.get(i + 1).copied().unwrap_or(f64::INFINITY)))
            .collect()
    }

    pub fn bin_of(&self, speed: f64) -> usize {
        self.speed_bin_edges.iter().rposition(|lo| speed >= *lo).unwrap_or(0)
    }
}

pub fn bin_label(lo: f64, hi: f64) -> String {
    if hi.is_finite() {
        format!("[{lo},{hi})")
    } else {
        format!("[{lo},inf)")
    }
}
