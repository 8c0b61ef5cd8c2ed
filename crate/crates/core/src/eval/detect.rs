use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Grid2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: [f64; 2],
    pub score: f64,
    pub velocity: [f64; 2],
}

impl Detection {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterMode {
    /// Center of the peak cell.
    Peak,
    /// Score-weighted centroid of the cells grown from the peak.
    Centroid,
}

/// Peaks of `O >= tau_det`. A peak is a plateau of 8-connected equal cells
/// with no greater neighbor, represented by its lowest linear index. Peaks are
/// greedily suppressed within `nms_radius` cells (higher score first, ties by
/// linear index). Returns surviving cell indices in that order.
pub fn find_peaks(occ: &Grid2D, tau_det: f64, nms_radius: f64) -> Vec<usize> {
    let spec = occ.spec;
    let o = &occ.data[..occ.plane_len()];
    let neighbors = |cell: usize| {
        let (x, y) = spec.unlinear(cell);
        (-1i64..=1)
            .flat_map(move |dx| (-1i64..=1).map(move |dy| (x as i64 + dx, y as i64 + dy)))
            .filter(move |&(nx, ny)| (nx, ny) != (x as i64, y as i64) && spec.contains_index(nx, ny))
            .map(move |(nx, ny)| spec.linear(nx as usize, ny as usize))
    };
    let mut seen = vec![false; o.len()];
    let mut peaks = Vec::new();
    let mut stack = Vec::new();
    for cell in 0..o.len() {
        let v = o[cell];
        if seen[cell] || !(v >= tau_det) {
            continue;
        }
        // scanning in index order makes `cell` the lowest index of its plateau
        let mut maximal = true;
        seen[cell] = true;
        stack.push(cell);
        while let Some(c) = stack.pop() {
            for nb in neighbors(c) {
                if o[nb] > v {
                    maximal = false;
                } else if o[nb] == v && !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        if maximal {
            peaks.push(cell);
        }
    }
    peaks.sort_by(|a, b| o[*b].total_cmp(&o[*a]).then(a.cmp(b)));
    let r2 = nms_radius * nms_radius;
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        let (px, py) = spec.unlinear(p);
        let suppressed = kept.iter().any(|&k| {
            let (kx, ky) = spec.unlinear(k);
            let (dx, dy) = (px as f64 - kx as f64, py as f64 - ky as f64);
            dx * dx + dy * dy <= r2
        });
        if !suppressed {
            kept.push(p);
        }
    }
    kept
}

/// Detections from an occupancy map and a motion map.
pub fn detect(occ: &Grid2D, motion: &Grid2D, tau_det: f64, nms_radius: f64, mode: CenterMode) -> Result<Vec<Detection>> {
    if occ.channels != 1 || motion.channels != 2 || occ.spec != motion.spec {
        return Err(Error::SpecMismatch("detect needs 1-channel occupancy and 2-channel motion on one grid".into()));
    }
    if !(0.0..=1.0).contains(&tau_det) {
        return Err(Error::InvalidArgument(format!("tau_det {tau_det} outside [0, 1]")));
    }
    let spec = occ.spec;
    let n = occ.plane_len();
    let peaks = find_peaks(occ, tau_det, nms_radius);

    // grow all peaks at once over 8-connected cells above threshold
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut queue = VecDeque::new();
    if mode == CenterMode::Centroid {
        for (k, &p) in peaks.iter().enumerate() {
            owner[p] = Some(k);
            queue.push_back(p);
        }
        while let Some(cell) = queue.pop_front() {
            let k = owner[cell];
            let (x, y) = spec.unlinear(cell);
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if !spec.contains_index(nx, ny) {
                        continue;
                    }
                    let nb = spec.linear(nx as usize, ny as usize);
                    if owner[nb].is_none() && occ.data[nb] >= tau_det {
                        owner[nb] = k;
                        queue.push_back(nb);
                    }
                }
            }
        }
    }
    let mut acc = vec![(0.0, 0.0, 0.0); peaks.len()];
    for (cell, k) in owner.iter().enumerate() {
        if let Some(k) = k {
            let (x, y) = spec.unlinear(cell);
            let c = spec.cell_center(x, y);
            let w = occ.data[cell];
            acc[*k].0 += w * c[0];
            acc[*k].1 += w * c[1];
            acc[*k].2 += w;
        }
    }
    Ok(peaks
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let (x, y) = spec.unlinear(p);
            let center = match mode {
                CenterMode::Centroid if acc[k].2 > 0.0 => [acc[k].0 / acc[k].2, acc[k].1 / acc[k].2],
                _ => spec.cell_center(x, y),
            };
            Detection {
                center,
                score: occ.data[p].clamp(0.0, 1.0),
                velocity: [motion.data[p], motion.data[n + p]],
            }
        })
        .collect())
}
