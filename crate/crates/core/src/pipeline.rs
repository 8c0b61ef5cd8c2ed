//! End-to-end orchestration: per-frame fusion, head fitting, temporal fusion,
//! detection and evaluation for the three pipeline modes.

use crate::config::{PipelineMode, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{detect, gain_table, match_and_score, Detection, EvalReport, GainTable, SceneEval};
use crate::geometry::{CameraModel, Grid2D, GtObject};
use crate::mfe::{fit_heads, make_targets, occupancy_head, velocity_head, FitReport, FitSample, HeadWeights};
use crate::mgtf::{run_mgtf, MemoryBank, MgtfConfig, MgtfInputs, MgtfWeights};
use crate::mvf::{azimuth_group, run_mvf, AzimuthGroups, MvfWeights};
use crate::nn::WeightBundle;
use crate::par;
use crate::scene::{Frame, FrameSequence, Pose2};

/// Per-frame fusion with fixed weights and azimuth groups cached for the rig.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: RunConfig,
    pub mvf: MvfWeights,
    pub mgtf: MgtfWeights,
    rig: Vec<CameraModel>,
    groups: Vec<AzimuthGroups>,
}

/// One sequence reduced to what the temporal stages need.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scene_id: String,
    pub bev: Vec<Grid2D>,
    pub motion_gt: Vec<Grid2D>,
    pub occupancy_gt: Vec<Grid2D>,
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose2>,
    /// Objects of the last frame in its ego frame.
    pub objects: Vec<GtObject>,
}

/// Fitted heads of one mode: the per-frame MFE heads that drive the warp and
/// gate, and the detection heads read on the temporally fused grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSet {
    pub velocity: HeadWeights,
    pub occupancy: HeadWeights,
    pub det_velocity: HeadWeights,
    pub det_occupancy: HeadWeights,
    pub mfe_report: FitReport,
    pub det_report: FitReport,
}

impl HeadSet {
    pub fn push_to(&self, bundle: &mut WeightBundle) {
        self.velocity.push_to(bundle, "mfe.velocity");
        self.occupancy.push_to(bundle, "mfe.occupancy");
        self.det_velocity.push_to(bundle, "det.velocity");
        self.det_occupancy.push_to(bundle, "det.occupancy");
    }

    /// Loads the heads; reports are not stored in bundles.
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        let empty = empty_fit_report();
        Ok(Self {
            velocity: HeadWeights::from_bundle(bundle, "mfe.velocity")?,
            occupancy: HeadWeights::from_bundle(bundle, "mfe.occupancy")?,
            det_velocity: HeadWeights::from_bundle(bundle, "det.velocity")?,
            det_occupancy: HeadWeights::from_bundle(bundle, "det.occupancy")?,
            mfe_report: empty.clone(),
            det_report: empty,
        })
    }
}

/// Placeholder report for heads that were loaded rather than fitted.
pub(crate) fn empty_fit_report() -> FitReport {
    FitReport {
        schema_version: crate::mfe::FIT_REPORT_SCHEMA,
        l_vel: f64::NAN,
        l_occ: f64::NAN,
        n_samples: 0,
        lambda_r: f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Heads {
    Fitted(HeadSet),
    /// Motion and occupancy maps rasterized from ground truth, both for the
    /// temporal stage and for detection.
    Oracle,
    /// Ground-truth maps drive the temporal stage; detection uses the fitted
    /// detection heads.
    OracleMotion(HeadSet),
}

/// Final products of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    pub scene_id: String,
    pub fused: Grid2D,
    pub motion: Grid2D,
    pub occupancy: Grid2D,
    pub detections: Vec<Detection>,
    pub objects: Vec<GtObject>,
}

/// Copy of `cfg` with the warp switched on or off for `mode`.
pub fn mode_mgtf(cfg: &MgtfConfig, mode: PipelineMode) -> MgtfConfig {
    MgtfConfig {
        compensate: mode.compensates(),
        ..cfg.clone()
    }
}

impl Pipeline {
    /// Pipeline with weights seeded from the config.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let mvf = MvfWeights::seeded(cfg.mvf.channels, cfg.mvf.depth_bins, cfg.weight_seed());
        Self::with_weights(cfg, mvf, MgtfWeights::averaging(cfg.mvf.channels))
    }

    pub fn with_weights(cfg: &RunConfig, mvf: MvfWeights, mgtf: MgtfWeights) -> Result<Self> {
        cfg.validate()?;
        mvf.validate()?;
        mgtf.validate()?;
        if mvf.channels != cfg.mvf.channels || mgtf.channels() != mvf.channels {
            return Err(Error::config(
                "mvf.channels",
                format!("weights carry {} / {} channels", mvf.channels, mgtf.channels()),
            ));
        }
        let rig = cfg.scene.rig.cameras();
        let groups = rig
            .iter()
            .map(|c| azimuth_group(c, &cfg.scene.grid, cfg.mvf.m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            mvf,
            mgtf,
            rig,
            groups,
        })
    }

    /// Pipeline whose fusion weights come from a bundle written by `to_bundle`.
    pub fn from_bundle(cfg: &RunConfig, bundle: &WeightBundle) -> Result<Self> {
        Self::with_weights(cfg, MvfWeights::from_bundle(bundle)?, MgtfWeights::from_bundle(bundle)?)
    }

    pub fn to_bundle(&self) -> WeightBundle {
        let mut b = self.mvf.to_bundle();
        self.mgtf.push_to(&mut b);
        b
    }

    fn groups_for(&self, frame: &Frame) -> Result<Vec<AzimuthGroups>> {
        let cams: Vec<&CameraModel> = frame.cameras.iter().map(|c| &c.camera).collect();
        if cams.len() == self.rig.len() && cams.iter().zip(&self.rig).all(|(a, b)| *a == b) {
            return Ok(self.groups.clone());
        }
        cams.iter()
            .map(|c| azimuth_group(c, &self.cfg.scene.grid, self.cfg.mvf.m))
            .collect()
    }

    /// Fused BEV grid `B` of one frame.
    pub fn frame_bev(&self, frame: &Frame, camera_only: bool) -> Result<Grid2D> {
        let groups = self.groups_for(frame)?;
        let out = run_mvf(
            &frame.radar,
            &frame.cameras,
            &groups,
            &self.mvf,
            &self.cfg.mvf,
            &self.cfg.scene.grid,
            camera_only,
        )?;
        Ok(out.bev)
    }

    /// Per-frame grids and targets of a sequence.
    pub fn prepare(&self, scene_id: &str, seq: &FrameSequence, camera_only: bool) -> Result<Prepared> {
        let need = self.cfg.mgtf.n_frames + 1;
        if seq.frames.len() < need {
            return Err(Error::MisalignedSequence(format!(
                "sequence {scene_id} has {} frames, the fusion window needs {need}",
                seq.frames.len()
            )));
        }
        let grid = self.cfg.scene.grid;
        let mut p = Prepared {
            scene_id: scene_id.to_string(),
            bev: Vec::with_capacity(seq.frames.len()),
            motion_gt: Vec::with_capacity(seq.frames.len()),
            occupancy_gt: Vec::with_capacity(seq.frames.len()),
            timestamps: Vec::with_capacity(seq.frames.len()),
            poses: Vec::with_capacity(seq.frames.len()),
            objects: Vec::new(),
        };
        for frame in &seq.frames {
            let objects = frame.objects_in_ego();
            let (m, o) = make_targets(&grid, &objects, self.cfg.mfe.tau_iou);
            p.bev.push(self.frame_bev(frame, camera_only)?);
            p.motion_gt.push(m);
            p.occupancy_gt.push(o);
            p.timestamps.push(frame.timestamp);
            p.poses.push(frame.ego_pose);
            p.objects = objects;
        }
        Ok(p)
    }

    /// Prepares a set of sequences in parallel, one task per sequence.
    pub fn prepare_all(&self, seqs: &[(String, FrameSequence)], camera_only: bool) -> Result<Vec<Prepared>> {
        par::try_map(seqs, |(id, s)| self.prepare(id, s, camera_only))
    }

    /// Velocity and occupancy maps fed to the temporal stage.
    pub fn frame_maps(&self, p: &Prepared, heads: &Heads) -> Result<(Vec<Grid2D>, Vec<Grid2D>)> {
        match heads {
            Heads::Oracle | Heads::OracleMotion(_) => Ok((p.motion_gt.clone(), p.occupancy_gt.clone())),
            Heads::Fitted(h) => {
                let m = p.bev.iter().map(|b| velocity_head(b, &h.velocity)).collect::<Result<_>>()?;
                let o = p.bev.iter().map(|b| occupancy_head(b, &h.occupancy)).collect::<Result<_>>()?;
                Ok((m, o))
            }
        }
    }

    /// Temporally fused grid of the window ending at frame `end`.
    pub fn fuse_window(
        &self,
        p: &Prepared,
        maps: &(Vec<Grid2D>, Vec<Grid2D>),
        end: usize,
        mode: PipelineMode,
        bank: &mut MemoryBank,
    ) -> Result<Grid2D> {
        let n = self.cfg.mgtf.n_frames;
        if end < n || end >= p.bev.len() {
            return Err(Error::MisalignedSequence(format!("no full window ends at frame {end}")));
        }
        let r = end - n..end + 1;
        let inp = MgtfInputs {
            bev: &p.bev[r.clone()],
            motion: &maps.0[r.clone()],
            occupancy: &maps.1[r.clone()],
            timestamps: &p.timestamps[r.clone()],
            poses: Some(&p.poses[r]),
        };
        run_mgtf(&inp, &mode_mgtf(&self.cfg.mgtf, mode), &self.mgtf, bank)
    }

    /// Fits the per-frame heads on every frame, then the detection heads on
    /// the fused grid of every full window.
    pub fn fit(&self, train: &[Prepared], mode: PipelineMode) -> Result<HeadSet> {
        self.fit_shared(train, &[mode], false)
    }

    /// One head set for several temporal modes over the same per-frame grids:
    /// the detection heads see the fused windows of every mode in `modes`.
    /// With `oracle_motion` those windows are fused with ground-truth maps.
    pub fn fit_shared(&self, train: &[Prepared], modes: &[PipelineMode], oracle_motion: bool) -> Result<HeadSet> {
        if modes.is_empty() {
            return Err(Error::InvalidArgument("no pipeline mode to fit".into()));
        }
        let fit_cfg = self.cfg.mfe.fit_config();
        let samples: Vec<FitSample> = train
            .iter()
            .flat_map(|p| {
                (0..p.bev.len()).map(|k| FitSample {
                    bev: p.bev[k].clone(),
                    motion_gt: p.motion_gt[k].clone(),
                    occupancy_gt: p.occupancy_gt[k].clone(),
                })
            })
            .collect();
        let mfe = fit_heads(&samples, &fit_cfg)?;
        drop(samples);
        log::info!("per-frame heads l_vel={:.4} l_occ={:.4}", mfe.report.l_vel, mfe.report.l_occ);
        let mut set = HeadSet {
            velocity: mfe.velocity,
            occupancy: mfe.occupancy,
            det_velocity: HeadWeights::zeros(1, 1, 1),
            det_occupancy: HeadWeights::zeros(1, 1, 1),
            mfe_report: mfe.report.clone(),
            det_report: mfe.report,
        };
        let heads = if oracle_motion {
            Heads::OracleMotion(set.clone())
        } else {
            Heads::Fitted(set.clone())
        };
        let fused = par::try_map(train, |p| -> Result<Vec<FitSample>> {
            let maps = self.frame_maps(p, &heads)?;
            let mut out = Vec::new();
            for &mode in modes {
                let mut bank = MemoryBank::new(self.cfg.mgtf.n_frames + 1);
                for end in self.cfg.mgtf.n_frames..p.bev.len() {
                    out.push(FitSample {
                        bev: self.fuse_window(p, &maps, end, mode, &mut bank)?,
                        motion_gt: p.motion_gt[end].clone(),
                        occupancy_gt: p.occupancy_gt[end].clone(),
                    });
                }
            }
            Ok(out)
        })?;
        let samples: Vec<FitSample> = fused.into_iter().flatten().collect();
        let det = fit_heads(&samples, &fit_cfg)?;
        log::info!("detection heads l_vel={:.4} l_occ={:.4}", det.report.l_vel, det.report.l_occ);
        set.det_velocity = det.velocity;
        set.det_occupancy = det.occupancy;
        set.det_report = det.report;
        Ok(set)
    }

    /// Runs the last window of a prepared sequence and detects on it.
    pub fn run_prepared(&self, p: &Prepared, heads: &Heads, mode: PipelineMode) -> Result<SequenceOutput> {
        let maps = self.frame_maps(p, heads)?;
        let end = p.bev.len() - 1;
        let mut bank = MemoryBank::new(self.cfg.mgtf.n_frames + 1);
        let fused = self.fuse_window(p, &maps, end, mode, &mut bank)?;
        let (motion, occupancy) = match heads {
            Heads::Oracle => (p.motion_gt[end].clone(), p.occupancy_gt[end].clone()),
            Heads::Fitted(h) | Heads::OracleMotion(h) => {
                (velocity_head(&fused, &h.det_velocity)?, occupancy_head(&fused, &h.det_occupancy)?)
            }
        };
        let e = &self.cfg.eval;
        let detections = detect(&occupancy, &motion, e.tau_det, e.nms_radius, e.center_mode)?;
        Ok(SequenceOutput {
            scene_id: p.scene_id.clone(),
            fused,
            motion,
            occupancy,
            detections,
            objects: p.objects.clone(),
        })
    }

    pub fn run_all(&self, prepared: &[Prepared], heads: &Heads, mode: PipelineMode) -> Result<Vec<SequenceOutput>> {
        par::try_map(prepared, |p| self.run_prepared(p, heads, mode))
    }

    pub fn evaluate(&self, outputs: &[SequenceOutput], label: &str) -> EvalReport {
        let scenes: Vec<SceneEval> = outputs
            .iter()
            .map(|o| SceneEval {
                scene_id: o.scene_id.clone(),
                detections: o.detections.clone(),
                objects: o.objects.clone(),
            })
            .collect();
        match_and_score(&scenes, &self.cfg.eval, label)
    }
}

/// Mean squared velocity error `|M - M_gt|^2` over cells with `O_gt = 1`.
pub fn velocity_mse(prepared: &[Prepared], head: &HeadWeights) -> Result<f64> {
    let parts = par::try_map(prepared, |p| -> Result<(f64, usize)> {
        let mut acc = (0.0, 0usize);
        for k in 0..p.bev.len() {
            let m = velocity_head(&p.bev[k], head)?;
            let occ = p.occupancy_gt[k].channel(0);
            let n = occ.len();
            for (cell, o) in occ.iter().enumerate() {
                if *o == 1.0 {
                    let dx = m.data[cell] - p.motion_gt[k].data[cell];
                    let dy = m.data[n + cell] - p.motion_gt[k].data[n + cell];
                    acc.0 += dx * dx + dy * dy;
                    acc.1 += 1;
                }
            }
        }
        Ok(acc)
    })?;
    let (sse, n) = parts.into_iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        return Err(Error::InvalidArgument("no occupied cells to score velocity on".into()));
    }
    Ok(sse / n as f64)
}

/// Outcome of comparing motion-aware against naive-concat fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub motion_aware: EvalReport,
    pub naive: EvalReport,
    pub table: GainTable,
}

/// Evaluates both temporal modes on the same grids with identical weights.
/// With `oracle` the maps come from ground truth; otherwise one head set is
/// fitted on `train` through both temporal modes.
pub fn compare_pipelines(pipe: &Pipeline, train: &[Prepared], eval: &[Prepared], oracle: bool) -> Result<Comparison> {
    let (a, b) = (PipelineMode::MotionAware, PipelineMode::NaiveConcat);
    let heads = if oracle {
        Heads::Oracle
    } else {
        Heads::Fitted(pipe.fit_shared(train, &[a, b], false)?)
    };
    compare_with_heads(pipe, eval, &heads)
}

pub fn compare_with_heads(pipe: &Pipeline, eval: &[Prepared], heads: &Heads) -> Result<Comparison> {
    let (a, b) = (PipelineMode::MotionAware, PipelineMode::NaiveConcat);
    let ra = pipe.evaluate(&pipe.run_all(eval, heads, a)?, a.name());
    let rb = pipe.evaluate(&pipe.run_all(eval, heads, b)?, b.name());
    let table = gain_table(&ra, &rb, a.name(), b.name());
    Ok(Comparison {
        motion_aware: ra,
        naive: rb,
        table,
    })
}

/// Generates suite `suite` (`"scene"` or `"train"`) as `(id, sequence)` pairs.
pub fn generate_suite(cfg: &RunConfig, suite: &str, count: usize) -> Result<Vec<(String, FrameSequence)>> {
    let ids: Vec<usize> = (0..count).collect();
    par::try_map(&ids, |i| {
        let sc = cfg.scene_for(suite, *i);
        crate::scene::generate_sequence(&sc, cfg.frames_per_sequence()).map(|s| (format!("{suite}_{i:03}"), s))
    })
}
