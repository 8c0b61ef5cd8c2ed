use serde::{Deserialize, Serialize};

use super::{bin_label, Detection, EvalConfig};
use crate::geometry::GtObject;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Detections and ground truth of one scene (the evaluated frame).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEval {
    pub scene_id: String,
    pub detections: Vec<Detection>,
    pub objects: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub label: String,
    pub lo: f64,
    /// `None` for the open-ended last bin.
    pub hi: Option<f64>,
    pub n_gt: usize,
    /// AP per threshold.
    pub ap: Vec<f64>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub scene_id: String,
    pub thresholds: Vec<f64>,
    pub ap: Vec<f64>,
    pub mean_ap: f64,
    /// Mean center distance of matches, per threshold (meters).
    pub center_err_per_threshold: Vec<f64>,
    /// Mean L2 velocity error of matches, per threshold (m/s).
    pub vel_err_per_threshold: Vec<f64>,
    pub error_threshold: f64,
    pub center_err: f64,
    pub vel_err: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub matched: usize,
    pub missed: usize,
    pub false_pos: usize,
    pub bins: Vec<BinReport>,
}

impl EvalReport {
    /// Rows `scene_id,bin,threshold,ap,center_err,vel_err`; bin `all` covers
    /// every object.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for (t, thr) in self.thresholds.iter().enumerate() {
            rows.push(format!(
                "{},all,{},{},{},{}",
                self.scene_id, thr, self.ap[t], self.center_err_per_threshold[t], self.vel_err_per_threshold[t]
            ));
        }
        for b in &self.bins {
            for (t, thr) in self.thresholds.iter().enumerate() {
                rows.push(format!(
                    "{},{},{},{},{},{}",
                    self.scene_id, b.label, thr, b.ap[t], self.center_err_per_threshold[t], self.vel_err_per_threshold[t]
                ));
            }
        }
        rows
    }

    pub const CSV_HEADER: &'static str = "scene_id,bin,threshold,ap,center_err,vel_err";

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in reports {
            for row in r.csv_rows() {
                s.push_str(&row);
                s.push('\n');
            }
        }
        s
    }
}

/// All-point interpolated AP from `(is_tp)` flags in descending-score order.
pub fn average_precision(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &t in tp_flags {
        if t {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_r {
            ap += (r - prev_r) * p;
            prev_r = *r;
        }
    }
    ap
}

/// Outcome of matching every detection at one threshold.
struct Matching {
    /// Per detection in ranked order: matched GT `(scene, index)`.
    matched: Vec<Option<(usize, usize)>>,
}

fn greedy_match(scenes: &[SceneEval], order: &[(usize, usize)], threshold: f64) -> Matching {
    let mut taken: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.objects.len()]).collect();
    let matched = order
        .iter()
        .map(|&(si, di)| {
            let d = &scenes[si].detections[di];
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in scenes[si].objects.iter().enumerate() {
                if taken[si][gi] {
                    continue;
                }
                let dist = (d.center[0] - g.center[0]).hypot(d.center[1] - g.center[1]);
                if dist <= threshold && best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, gi));
                }
            }
            best.map(|(_, gi)| {
                taken[si][gi] = true;
                (si, gi)
            })
        })
        .collect();
    Matching { matched }
}

/// Pools all scenes, ranks detections by score (ties by scene then detection
/// order) and greedily matches each to the nearest unmatched GT of its scene.
pub fn match_and_score(scenes: &[SceneEval], cfg: &EvalConfig, scene_id: &str) -> EvalReport {
    let mut order: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.detections.len()).map(move |di| (si, di)))
        .collect();
    order.sort_by(|a, b| {
        let (sa, sb) = (scenes[a.0].detections[a.1].score, scenes[b.0].detections[b.1].score);
        sb.total_cmp(&sa).then(a.cmp(b))
    });
    let n_gt: usize = scenes.iter().map(|s| s.objects.len()).sum();
    let bins = cfg.bins();
    let gt_bin = |si: usize, gi: usize| cfg.bin_of(scenes[si].objects[gi].speed());
    let mut bin_gt = vec![0usize; bins.len()];
    for (si, s) in scenes.iter().enumerate() {
        for gi in 0..s.objects.len() {
            bin_gt[gt_bin(si, gi)] += 1;
        }
    }

    let mut ap = Vec::new();
    let mut center_err = Vec::new();
    let mut vel_err = Vec::new();
    let mut bin_ap = vec![Vec::new(); bins.len()];
    let mut counts = (0, 0);
    for &thr in &cfg.thresholds {
        let m = greedy_match(scenes, &order, thr);
        let flags: Vec<bool> = m.matched.iter().map(|x| x.is_some()).collect();
        ap.push(average_precision(&flags, n_gt));
        let (mut ce, mut ve, mut k) = (0.0, 0.0, 0usize);
        for (&(si, di), g) in order.iter().zip(&m.matched) {
            if let Some((_, gi)) = g {
                let d = &scenes[si].detections[di];
                let o = &scenes[si].objects[*gi];
                ce += (d.center[0] - o.center[0]).hypot(d.center[1] - o.center[1]);
                ve += (d.velocity[0] - o.velocity[0]).hypot(d.velocity[1] - o.velocity[1]);
                k += 1;
            }
        }
        center_err.push(if k > 0 { ce / k as f64 } else { 0.0 });
        vel_err.push(if k > 0 { ve / k as f64 } else { 0.0 });
        if thr == cfg.error_threshold {
            counts = (k, flags.len() - k);
        }
        for (b, aps) in bin_ap.iter_mut().enumerate() {
            let flags: Vec<bool> = order
                .iter()
                .zip(&m.matched)
                .filter_map(|(&(si, di), g)| match g {
                    Some((gs, gi)) => (gt_bin(*gs, *gi) == b).then_some(true),
                    None => (cfg.bin_of(scenes[si].detections[di].speed()) == b).then_some(false),
                })
                .collect();
            aps.push(average_precision(&flags, bin_gt[b]));
        }
    }
    let err_idx = cfg.thresholds.iter().position(|t| *t == cfg.error_threshold);
    if err_idx.is_none() {
        // counts at the largest threshold when the error threshold is not evaluated
        let m = greedy_match(scenes, &order, *cfg.thresholds.last().unwrap_or(&0.0));
        let k = m.matched.iter().filter(|x| x.is_some()).count();
        counts = (k, m.matched.len() - k);
    }
    let pick = err_idx.unwrap_or(cfg.thresholds.len().saturating_sub(1));
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        scene_id: scene_id.to_string(),
        thresholds: cfg.thresholds.clone(),
        mean_ap: mean(&ap),
        center_err: center_err.get(pick).copied().unwrap_or(0.0),
        vel_err: vel_err.get(pick).copied().unwrap_or(0.0),
        ap,
        center_err_per_threshold: center_err,
        vel_err_per_threshold: vel_err,
        error_threshold: cfg.error_threshold,
        n_gt,
        n_det: order.len(),
        matched: counts.0,
        missed: n_gt - counts.0,
        false_pos: counts.1,
        bins: bins
            .iter()
            .zip(bin_ap)
            .zip(bin_gt)
            .map(|(((lo, hi), ap), n)| BinReport {
                label: bin_label(*lo, *hi),
                lo: *lo,
                hi: hi.is_finite().then_some(*hi),
                n_gt: n,
                mean_ap: mean(&ap),
                ap,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGain {
    pub label: String,
    pub n_gt: usize,
    pub ap_a: f64,
    pub ap_b: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    pub schema_version: u32,
    pub label_a: String,
    pub label_b: String,
    pub overall: BinGain,
    pub bins: Vec<BinGain>,
}

impl GainTable {
    pub const CSV_HEADER: &'static str = "bin,n_gt,ap_a,ap_b,gain";

    pub fn to_csv(&self) -> String {
        let mut s = format!("# a={} b={}\n{}\n", self.label_a, self.label_b, Self::CSV_HEADER);
        for g in std::iter::once(&self.overall).chain(&self.bins) {
            s.push_str(&format!("{},{},{},{},{}\n", g.label, g.n_gt, g.ap_a, g.ap_b, g.gain));
        }
        s
    }
}

/// Per-bin difference of threshold-averaged AP, `a - b`.
pub fn gain_table(a: &EvalReport, b: &EvalReport, label_a: &str, label_b: &str) -> GainTable {
    GainTable {
        schema_version: EVAL_SCHEMA_VERSION,
        label_a: label_a.into(),
        label_b: label_b.into(),
        overall: BinGain {
            label: "all".into(),
            n_gt: a.n_gt,
            ap_a: a.mean_ap,
            ap_b: b.mean_ap,
            gain: a.mean_ap - b.mean_ap,
        },
        bins: a
            .bins
            .iter()
            .zip(&b.bins)
            .map(|(x, y)| BinGain {
                label: x.label.clone(),
                n_gt: x.n_gt,
                ap_a: x.mean_ap,
                ap_b: y.mean_ap,
                gain: x.mean_ap - y.mean_ap,
            })
            .collect(),
    }
}
