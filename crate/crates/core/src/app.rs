//! Command implementations behind the `crtbev` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array_io::{write_atomic, Array3};
use crate::config::{PipelineMode, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{detect, match_and_score, EvalReport, SceneEval};
use crate::geometry::Grid2D;
use crate::mfe::{occupancy_head, velocity_head, FitReport, HeadWeights};
use crate::mgtf::MemoryBank;
use crate::mvf::{radar_bev_encode, run_mvf_with_radar};
use crate::nn::{LinearLayer, WeightBundle};
use crate::pipeline::{compare_pipelines, generate_suite, HeadSet, Heads, Pipeline};
use crate::scene::{io as scene_io, FrameSequence};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;
pub const FIT_SCHEMA: u32 = 1;
pub const BENCH_SCHEMA: u32 = 1;

/// Process exit code of a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::SceneOverconstrained(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 1,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub id: String,
    pub seed: u64,
    pub frames: usize,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub root_seed: u64,
    pub suite: String,
    pub sequences: Vec<ManifestSequence>,
}

/// Writes `n_sequences` sequences of suite `suite` under `out`, one directory
/// each, plus a manifest with per-file SHA-256 hashes.
pub fn cmd_generate(cfg: &RunConfig, out: &Path, suite: &str) -> Result<Manifest> {
    create_dir(out)?;
    let seqs = generate_suite(cfg, suite, cfg.suite.n_sequences)?;
    let mut sequences = Vec::with_capacity(seqs.len());
    for (id, seq) in &seqs {
        let dir = out.join(id);
        let files = scene_io::save_sequence(seq, &dir)?;
        let files = files
            .iter()
            .map(|f| {
                Ok(ManifestFile {
                    path: f
                        .strip_prefix(out)
                        .unwrap_or(f)
                        .to_string_lossy()
                        .replace('\\', "/"),
                    sha256: sha256_file(f)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sequences.push(ManifestSequence {
            id: id.clone(),
            seed: seq.config.seed,
            frames: seq.frames.len(),
            files,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA,
        root_seed: cfg.seed,
        suite: suite.to_string(),
        sequences,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    log::info!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(manifest)
}

/// Sequences listed in `dir/manifest.json`, in manifest order.
pub fn load_scenes(dir: &Path) -> Result<Vec<(String, FrameSequence)>> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    manifest
        .sequences
        .iter()
        .map(|s| Ok((s.id.clone(), scene_io::load_sequence(&dir.join(&s.id))?)))
        .collect()
}

fn scenes_or_generated(cfg: &RunConfig, scenes: Option<&Path>) -> Result<Vec<(String, FrameSequence)>> {
    match scenes {
        Some(dir) => load_scenes(dir),
        None => generate_suite(cfg, "scene", cfg.suite.n_sequences),
    }
}

/// Heads for `mode` fitted on the configured training suite.
fn fit_on_train_suite(pipe: &Pipeline, mode: PipelineMode) -> Result<HeadSet> {
    let train = generate_suite(&pipe.cfg, "train", pipe.cfg.suite.n_train_sequences)?;
    let prepared = pipe.prepare_all(&train, mode.camera_only())?;
    pipe.fit(&prepared, mode)
}

fn load_weights(cfg: &RunConfig, path: &Path) -> Result<(Pipeline, HeadSet)> {
    let bundle = WeightBundle::load(path)?;
    Ok((Pipeline::from_bundle(cfg, &bundle)?, HeadSet::from_bundle(&bundle)?))
}

fn grid_array(g: &Grid2D) -> Result<Array3> {
    Array3::new([g.channels, g.spec.x_cells, g.spec.y_cells], g.data.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub mode: PipelineMode,
    pub pooled: EvalReport,
    pub scenes: Vec<EvalReport>,
}

/// Runs every sequence through the configured mode and writes fused grids,
/// detections and reports under `out`.
pub fn cmd_run(cfg: &RunConfig, scenes: Option<&Path>, out: &Path, weights: Option<&Path>) -> Result<RunSummary> {
    let mode = cfg.mode;
    let (pipe, heads) = match weights {
        Some(w) => load_weights(cfg, w)?,
        None => {
            let pipe = Pipeline::new(cfg)?;
            let heads = fit_on_train_suite(&pipe, mode)?;
            (pipe, heads)
        }
    };
    let seqs = scenes_or_generated(cfg, scenes)?;
    let prepared = pipe.prepare_all(&seqs, mode.camera_only())?;
    let outputs = pipe.run_all(&prepared, &Heads::Fitted(heads), mode)?;
    create_dir(out)?;
    let mut per_scene = Vec::with_capacity(outputs.len());
    for o in &outputs {
        let dir = out.join(&o.scene_id);
        create_dir(&dir)?;
        grid_array(&o.fused)?.save(&dir.join("fused.bin"))?;
        grid_array(&o.occupancy)?.save(&dir.join("occupancy.bin"))?;
        grid_array(&o.motion)?.save(&dir.join("motion.bin"))?;
        write_json(&dir.join("detections.json"), &o.detections)?;
        let scene = SceneEval {
            scene_id: o.scene_id.clone(),
            detections: o.detections.clone(),
            objects: o.objects.clone(),
        };
        per_scene.push(match_and_score(std::slice::from_ref(&scene), &cfg.eval, &o.scene_id));
    }
    let summary = RunSummary {
        schema_version: crate::eval::EVAL_SCHEMA_VERSION,
        mode,
        pooled: pipe.evaluate(&outputs, "all"),
        scenes: per_scene,
    };
    write_json(&out.join("report.json"), &summary)?;
    let all: Vec<EvalReport> = std::iter::once(summary.pooled.clone()).chain(summary.scenes.iter().cloned()).collect();
    write_atomic(&out.join("report.csv"), EvalReport::to_csv(&all).as_bytes())?;
    log::info!("{}: mean AP {:.4} over {} scenes", mode.name(), summary.pooled.mean_ap, outputs.len());
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub schema_version: u32,
    pub mode: PipelineMode,
    pub n_sequences: usize,
    /// Per-frame velocity and occupancy heads.
    pub mfe: FitReport,
    /// Heads read on the temporally fused grid.
    pub detection: FitReport,
}

/// Fits all heads of the configured mode on the sequences in `scenes` and
/// writes `weights.bin` and `fit_report.json` under `out`.
pub fn cmd_fit(cfg: &RunConfig, scenes: &Path, out: &Path) -> Result<FitSummary> {
    let pipe = Pipeline::new(cfg)?;
    let seqs = load_scenes(scenes)?;
    let prepared = pipe.prepare_all(&seqs, cfg.mode.camera_only())?;
    let heads = pipe.fit(&prepared, cfg.mode)?;
    create_dir(out)?;
    let mut bundle = pipe.to_bundle();
    heads.push_to(&mut bundle);
    bundle.save(&out.join("weights.bin"))?;
    let summary = FitSummary {
        schema_version: FIT_SCHEMA,
        mode: cfg.mode,
        n_sequences: prepared.len(),
        mfe: heads.mfe_report,
        detection: heads.det_report,
    };
    write_json(&out.join("fit_report.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub schema_version: u32,
    pub oracle_heads: bool,
    pub table: crate::eval::GainTable,
    pub motion_aware: EvalReport,
    pub naive_concat: EvalReport,
}

/// Motion-aware against naive-concat fusion on the same grids; writes
/// `gain.csv` and `compare.json` under `out`.
pub fn cmd_compare(cfg: &RunConfig, scenes: Option<&Path>, out: &Path, oracle: bool) -> Result<CompareSummary> {
    let pipe = Pipeline::new(cfg)?;
    let train = if oracle {
        Vec::new()
    } else {
        let t = generate_suite(cfg, "train", cfg.suite.n_train_sequences)?;
        pipe.prepare_all(&t, false)?
    };
    let eval = pipe.prepare_all(&scenes_or_generated(cfg, scenes)?, false)?;
    let c = compare_pipelines(&pipe, &train, &eval, oracle)?;
    create_dir(out)?;
    write_atomic(&out.join("gain.csv"), c.table.to_csv().as_bytes())?;
    let summary = CompareSummary {
        schema_version: crate::eval::EVAL_SCHEMA_VERSION,
        oracle_heads: oracle,
        table: c.table,
        motion_aware: c.motion_aware,
        naive_concat: c.naive,
    };
    write_json(&out.join("compare.json"), &summary)?;
    Ok(summary)
}

/// Median milliseconds per stage over the measured iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub radar_encode: f64,
    pub mvf: f64,
    pub mfe: f64,
    pub mgtf: f64,
    pub detect: f64,
}

impl StageTimes {
    pub fn sum(&self) -> f64 {
        self.radar_encode + self.mvf + self.mfe + self.mgtf + self.detect
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub workers: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub frames: usize,
    pub stages_ms: StageTimes,
    pub stage_sum_ms: f64,
    pub end_to_end_ms: f64,
}

fn seeded_head(c: usize, out: usize, seed: u64, name: &str) -> HeadWeights {
    let mut rng = crate::rng::substream(seed, name, 0);
    HeadWeights {
        conv3: LinearLayer::seeded(9 * c, out, &mut rng),
        conv1: LinearLayer::identity(out),
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times each stage on one generated sequence. Heads are seeded, not
/// fitted, since only latency is measured.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let b = &cfg.bench;
    if b.iterations < 1 {
        return Err(Error::config("bench.iterations", "iterations must be ≥ 1"));
    }
    let pipe = Pipeline::new(cfg)?;
    let seq = crate::scene::generate_sequence(&cfg.scene_for("bench", 0), cfg.mgtf.n_frames + 1)?;
    let c = cfg.mvf.channels;
    let heads = HeadSet {
        velocity: seeded_head(c, 2, cfg.seed, "bench-velocity"),
        occupancy: seeded_head(c, 1, cfg.seed, "bench-occupancy"),
        det_velocity: seeded_head(c, 2, cfg.seed, "bench-det-velocity"),
        det_occupancy: seeded_head(c, 1, cfg.seed, "bench-det-occupancy"),
        mfe_report: crate::pipeline::empty_fit_report(),
        det_report: crate::pipeline::empty_fit_report(),
    };
    let groups = cfg
        .scene
        .rig
        .cameras()
        .iter()
        .map(|cam| crate::mvf::azimuth_group(cam, &cfg.scene.grid, cfg.mvf.m))
        .collect::<Result<Vec<_>>>()?;
    let camera_only = cfg.mode.camera_only();
    let grid = cfg.scene.grid;

    let staged = || -> Result<([f64; 5], f64)> {
        let mut t = [0.0; 5];
        let start = Instant::now();
        let mut bev = Vec::with_capacity(seq.frames.len());
        for frame in &seq.frames {
            let s = Instant::now();
            let radar = if camera_only {
                Grid2D::zeros(grid, pipe.mvf.pillar.out_dim)
            } else {
                radar_bev_encode(&frame.radar, &grid, &pipe.mvf.pillar)?
            };
            t[0] += s.elapsed().as_secs_f64();
            let s = Instant::now();
            let out = run_mvf_with_radar(radar, &frame.cameras, &groups, &pipe.mvf, &cfg.mvf, &grid, camera_only)?;
            t[1] += s.elapsed().as_secs_f64();
            bev.push(out.bev);
        }
        let s = Instant::now();
        let motion = bev.iter().map(|g| velocity_head(g, &heads.velocity)).collect::<Result<Vec<_>>>()?;
        let occupancy = bev.iter().map(|g| occupancy_head(g, &heads.occupancy)).collect::<Result<Vec<_>>>()?;
        t[2] += s.elapsed().as_secs_f64();
        let s = Instant::now();
        let timestamps: Vec<f64> = seq.frames.iter().map(|f| f.timestamp).collect();
        let poses: Vec<_> = seq.frames.iter().map(|f| f.ego_pose).collect();
        let inp = crate::mgtf::MgtfInputs {
            bev: &bev,
            motion: &motion,
            occupancy: &occupancy,
            timestamps: &timestamps,
            poses: Some(&poses),
        };
        let mut bank = MemoryBank::new(cfg.mgtf.n_frames + 1);
        let mgtf_cfg = crate::pipeline::mode_mgtf(&cfg.mgtf, cfg.mode);
        let fused = crate::mgtf::run_mgtf(&inp, &mgtf_cfg, &pipe.mgtf, &mut bank)?;
        t[3] += s.elapsed().as_secs_f64();
        let s = Instant::now();
        let m = velocity_head(&fused, &heads.det_velocity)?;
        let o = occupancy_head(&fused, &heads.det_occupancy)?;
        let dets = detect(&o, &m, cfg.eval.tau_det, cfg.eval.nms_radius, cfg.eval.center_mode)?;
        t[4] += s.elapsed().as_secs_f64();
        std::hint::black_box(dets);
        Ok((t, start.elapsed().as_secs_f64()))
    };

    for _ in 0..b.warmup {
        staged()?;
    }
    let mut per_stage: [Vec<f64>; 5] = Default::default();
    let mut total = Vec::with_capacity(b.iterations);
    for _ in 0..b.iterations {
        let (t, e2e) = staged()?;
        for (acc, v) in per_stage.iter_mut().zip(t) {
            acc.push(v * 1e3);
        }
        total.push(e2e * 1e3);
    }
    let [a, m, f, g, d] = per_stage.map(|mut v| median(&mut v));
    let stages = StageTimes {
        radar_encode: a,
        mvf: m,
        mfe: f,
        mgtf: g,
        detect: d,
    };
    Ok(BenchReport {
        schema_version: BENCH_SCHEMA,
        workers: crate::par::current_workers(),
        warmup: b.warmup,
        iterations: b.iterations,
        frames: seq.frames.len(),
        stage_sum_ms: stages.sum(),
        stages_ms: stages,
        end_to_end_ms: median(&mut total),
    })
}

/// Writes a bench report to `out/bench.json`.
pub fn write_bench(report: &BenchReport, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let path = out.join("bench.json");
    write_json(&path, report)?;
    Ok(path)
}
