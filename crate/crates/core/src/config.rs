//! Run configuration: one TOML document with every knob defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::mfe::MfeConfig;
use crate::mgtf::MgtfConfig;
use crate::mvf::MvfConfig;
use crate::scene::SceneConfig;

/// Environment variable overriding [`RunConfig::seed`].
pub const SEED_ENV: &str = "CRTBEV_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    /// Velocity-warped temporal fusion of radar-camera features.
    MotionAware,
    /// Temporal fusion without warping.
    NaiveConcat,
    /// Motion-aware temporal fusion of camera-only features.
    CameraOnly,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [Self::MotionAware, Self::NaiveConcat, Self::CameraOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::MotionAware => "motion-aware",
            Self::NaiveConcat => "naive-concat",
            Self::CameraOnly => "camera-only",
        }
    }

    pub fn camera_only(self) -> bool {
        self == Self::CameraOnly
    }

    pub fn compensates(self) -> bool {
        self != Self::NaiveConcat
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown mode `{s}` (motion-aware | naive-concat | camera-only)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Sequences written by `generate` and evaluated by `run`/`compare`.
    pub n_sequences: usize,
    /// Extra frames per sequence beyond the `N + 1` fusion window.
    pub extra_frames: usize,
    /// Sequences of the separate training suite used by `compare`.
    pub n_train_sequences: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_sequences: 10,
            extra_frames: 0,
            n_train_sequences: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub warmup: usize,
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: 1,
            iterations: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream derives from it.
    pub seed: u64,
    pub mode: PipelineMode,
    pub output_dir: PathBuf,
    pub suite: SuiteConfig,
    pub scene: SceneConfig,
    pub mvf: MvfConfig,
    pub mfe: MfeConfig,
    pub mgtf: MgtfConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: PipelineMode::MotionAware,
            output_dir: PathBuf::from("out"),
            suite: SuiteConfig::default(),
            scene: SceneConfig::default(),
            mvf: MvfConfig::default(),
            mfe: MfeConfig::default(),
            mgtf: MgtfConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn toml_error(e: toml::de::Error) -> Error {
    let path = e
        .message()
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".into());
    let span = e.span().map(|s| format!(" (bytes {}..{})", s.start, s.end)).unwrap_or_default();
    Error::config(path, format!("{}{span}", e.message().trim()))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// Reads and validates a config file, then applies the seed override
    /// from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned 64-bit integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate("scene.")?;
        self.mvf.validate("mvf.")?;
        self.mfe.validate("mfe.")?;
        self.mgtf.validate("mgtf.")?;
        self.eval.validate("eval.")?;
        if self.scene.frame_period != self.mgtf.frame_period {
            return Err(Error::config(
                "mgtf.frame_period",
                format!("must equal scene.frame_period ({})", self.scene.frame_period),
            ));
        }
        if self.scene.camera_channels != self.mvf.channels {
            return Err(Error::config(
                "mvf.channels",
                format!("must equal scene.camera_channels ({})", self.scene.camera_channels),
            ));
        }
        if self.mvf.m > self.scene.grid.n_cells() {
            return Err(Error::config("mvf.m", format!("exceeds the {} grid cells", self.scene.grid.n_cells())));
        }
        if self.suite.n_sequences == 0 {
            return Err(Error::config("suite.n_sequences", "must be >= 1"));
        }
        Ok(())
    }

    /// Frames per generated sequence.
    pub fn frames_per_sequence(&self) -> usize {
        self.mgtf.n_frames + 1 + self.suite.extra_frames
    }

    /// Scene config of evaluation sequence `index`.
    pub fn scene_for(&self, suite: &str, index: usize) -> SceneConfig {
        SceneConfig {
            seed: crate::rng::derive_seed(self.seed, suite, index as u64),
            ..self.scene.clone()
        }
    }

    pub fn weight_seed(&self) -> u64 {
        crate::rng::derive_seed(self.seed, "weights", self.mvf.weight_seed)
    }
}
