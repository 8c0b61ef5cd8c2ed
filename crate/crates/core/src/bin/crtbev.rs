use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crtbev::app;
use crtbev::config::{PipelineMode, RunConfig};
use crtbev::Result;

#[derive(Parser)]
#[command(name = "crtbev", version, about = "Radar-camera-temporal BEV fusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `output_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for scene-level parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Pipeline mode: motion-aware, naive-concat or camera-only.
    #[arg(long)]
    mode: Option<PipelineMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic sequences and a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Seed suite name; `scene` is the evaluation suite, `train` the fitting suite.
        #[arg(long, default_value = "scene")]
        suite: String,
    },
    /// Run the pipeline on sequences and write fused grids, detections and reports.
    Run {
        #[command(flatten)]
        common: Common,
        /// Directory written by `generate`; sequences are generated in memory when absent.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Weights written by `fit`; heads are fitted on the training suite when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Fit velocity, occupancy and detection heads on a scenes directory.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Per-speed-bin AP gain of motion-aware over naive-concat fusion.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Use ground-truth motion and occupancy maps instead of fitted heads.
        #[arg(long)]
        oracle_heads: bool,
    },
    /// Per-stage latency over warmup plus measured iterations.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(mode) = common.mode {
        cfg.mode = mode;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => log::warn!("could not print summary: {e}"),
    }
}

fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Generate { common, suite } => {
            let (cfg, out) = load(common)?;
            let m = crtbev::par::with_workers(common.workers, || app::cmd_generate(&cfg, &out, suite))?;
            println!("{} sequences -> {}", m.sequences.len(), out.join(app::MANIFEST_FILE).display());
        }
        Command::Run { common, scenes, weights } => {
            let (cfg, out) = load(common)?;
            let s = crtbev::par::with_workers(common.workers, || {
                app::cmd_run(&cfg, scenes.as_deref(), &out, weights.as_deref())
            })?;
            println!(
                "{}: mean AP {:.4}, matched {}/{} -> {}",
                s.mode.name(),
                s.pooled.mean_ap,
                s.pooled.matched,
                s.pooled.n_gt,
                out.join("report.json").display()
            );
        }
        Command::Fit { common, scenes } => {
            let (cfg, out) = load(common)?;
            let s = crtbev::par::with_workers(common.workers, || app::cmd_fit(&cfg, scenes, &out))?;
            print_json(&s);
        }
        Command::Compare {
            common,
            scenes,
            oracle_heads,
        } => {
            let (cfg, out) = load(common)?;
            let s = crtbev::par::with_workers(common.workers, || {
                app::cmd_compare(&cfg, scenes.as_deref(), &out, *oracle_heads)
            })?;
            print!("{}", s.table.to_csv());
        }
        Command::Bench { common } => {
            let (cfg, out) = load(common)?;
            let r = crtbev::par::with_workers(common.workers, || app::cmd_bench(&cfg))?;
            let path = app::write_bench(&r, &out)?;
            print_json(&r);
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
