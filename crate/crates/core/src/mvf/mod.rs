//! Multi-view fusion: radar-guided enhancement of perspective camera features,
//! depth/foreground prediction, lifting to BEV and gated radar-camera fusion.

mod bev;
mod lift;
mod rca;

pub use bev::{gated_fuse, radar_bev_encode, run_mvf, run_mvf_with_radar, MvfOutput, PILLAR_INPUTS};
pub use lift::{depth_seg_head, lift_to_bev, DepthBins, DepthSegOutput};
pub use rca::{
    azimuth_group, compress_features, enhance_perspective, pixelwise_fuse, rca_column, AzimuthGroups, RcaColumn,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LinearLayer, Mlp2, WeightBundle};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvfConfig {
    /// Radar cells matched to each image column.
    pub m: usize,
    /// Foreground threshold applied before lifting.
    pub tau_p: f64,
    pub depth_bins: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Feature channels shared by camera maps and BEV grids.
    pub channels: usize,
    /// Index of the weight substream derived from the root seed.
    pub weight_seed: u64,
}

impl Default for MvfConfig {
    fn default() -> Self {
        Self {
            m: 128,
            tau_p: 0.25,
            depth_bins: 32,
            depth_min: 1.0,
            depth_max: 60.0,
            channels: 16,
            weight_seed: 0,
        }
    }
}

impl MvfConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let f = |name: &str| format!("{prefix}{name}");
        if self.m == 0 {
            return Err(Error::config(f("m"), "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tau_p) {
            return Err(Error::config(f("tau_p"), "must be in [0, 1]"));
        }
        if self.depth_bins == 0 {
            return Err(Error::config(f("depth_bins"), "must be >= 1"));
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max && self.depth_max.is_finite()) {
            return Err(Error::config(f("depth_min"), "need 0 < depth_min < depth_max < inf"));
        }
        if self.channels == 0 {
            return Err(Error::config(f("channels"), "must be >= 1"));
        }
        Ok(())
    }

    pub fn bins(&self) -> DepthBins {
        DepthBins::uniform(self.depth_min, self.depth_max, self.depth_bins)
    }
}

/// Frozen weights of every multi-view fusion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MvfWeights {
    pub channels: usize,
    pub depth_bins: usize,
    /// Applied to the height-max-pooled columns (gives `W_c`).
    pub compress_w: Mlp2,
    /// Applied to the width-max-pooled rows (gives `H_c`).
    pub compress_h: Mlp2,
    /// `2C -> C` on `concat(W_c_j, radar cell)`.
    pub mlp1: LinearLayer,
    pub mlp2: LinearLayer,
    /// `C -> 1` attention logit.
    pub mlp3: LinearLayer,
    /// `2C -> C` on `concat(F_bar, F_c)`.
    pub perspective: LinearLayer,
    /// `C -> b + 1`.
    pub depth_seg: LinearLayer,
    pub pillar: LinearLayer,
    pub gate_cam: LinearLayer,
    pub gate_radar: LinearLayer,
    pub fuse: LinearLayer,
    pub init_seed: u64,
}

const LAYER_NAMES: [&str; 13] = [
    "compress_w.0",
    "compress_w.1",
    "compress_h.0",
    "compress_h.1",
    "mlp1",
    "mlp2",
    "mlp3",
    "perspective",
    "depth_seg",
    "pillar",
    "gate_cam",
    "gate_radar",
    "fuse",
];

impl MvfWeights {
    /// Seeded uniform initialization, `k = 1/sqrt(fan_in)`.
    pub fn seeded(channels: usize, depth_bins: usize, init_seed: u64) -> Self {
        let c = channels;
        let mut rng: ChaCha8Rng = substream(init_seed, "mvf-weights", 0);
        Self {
            channels,
            depth_bins,
            compress_w: Mlp2::seeded(c, c, c, &mut rng),
            compress_h: Mlp2::seeded(c, c, c, &mut rng),
            mlp1: LinearLayer::seeded(2 * c, c, &mut rng),
            mlp2: LinearLayer::seeded(c, c, &mut rng),
            mlp3: LinearLayer::seeded(c, 1, &mut rng),
            perspective: LinearLayer::seeded(2 * c, c, &mut rng),
            depth_seg: LinearLayer::seeded(c, depth_bins + 1, &mut rng),
            pillar: LinearLayer::seeded(PILLAR_INPUTS, c, &mut rng),
            gate_cam: LinearLayer::seeded(2 * c, c, &mut rng),
            gate_radar: LinearLayer::seeded(2 * c, c, &mut rng),
            fuse: LinearLayer::seeded(2 * c, c, &mut rng),
            init_seed,
        }
    }

    fn layers(&self) -> [&LinearLayer; 13] {
        [
            &self.compress_w.first,
            &self.compress_w.second,
            &self.compress_h.first,
            &self.compress_h.second,
            &self.mlp1,
            &self.mlp2,
            &self.mlp3,
            &self.perspective,
            &self.depth_seg,
            &self.pillar,
            &self.gate_cam,
            &self.gate_radar,
            &self.fuse,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let b = self.depth_bins;
        let dims = [
            (c, c),
            (c, c),
            (c, c),
            (c, c),
            (2 * c, c),
            (c, c),
            (c, 1),
            (2 * c, c),
            (c, b + 1),
            (PILLAR_INPUTS, c),
            (2 * c, c),
            (2 * c, c),
            (2 * c, c),
        ];
        for ((layer, (i, o)), name) in self.layers().iter().zip(dims).zip(LAYER_NAMES) {
            layer.check_dims(i, o, name)?;
            if !layer.is_finite() {
                return Err(Error::InvalidArgument(format!("layer {name} has non-finite weights")));
            }
        }
        Ok(())
    }

    /// Bundle representation; the init seed travels as the bias of a `2x0`
    /// layer holding its low and high 32-bit halves.
    pub fn to_bundle(&self) -> WeightBundle {
        let mut b = WeightBundle::default();
        for (name, layer) in LAYER_NAMES.iter().zip(self.layers()) {
            b.push(*name, layer.clone());
        }
        b.push(
            "meta.init_seed",
            LinearLayer::from_parts(
                0,
                2,
                vec![],
                vec![(self.init_seed & 0xFFFF_FFFF) as f64, (self.init_seed >> 32) as f64],
            )
            .expect("2x0 layer"),
        );
        b
    }

    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        let get = |n: &str| bundle.get(n).cloned();
        let mlp1 = get("mlp1")?;
        let depth_seg = get("depth_seg")?;
        let w = Self {
            channels: mlp1.out_dim,
            depth_bins: depth_seg.out_dim.saturating_sub(1),
            compress_w: Mlp2 {
                first: get("compress_w.0")?,
                second: get("compress_w.1")?,
            },
            compress_h: Mlp2 {
                first: get("compress_h.0")?,
                second: get("compress_h.1")?,
            },
            mlp1,
            mlp2: get("mlp2")?,
            mlp3: get("mlp3")?,
            perspective: get("perspective")?,
            depth_seg,
            pillar: get("pillar")?,
            gate_cam: get("gate_cam")?,
            gate_radar: get("gate_radar")?,
            fuse: get("fuse")?,
            init_seed: bundle
                .get("meta.init_seed")
                .ok()
                .filter(|l| l.bias.len() == 2)
                .map(|l| l.bias[0] as u64 | ((l.bias[1] as u64) << 32))
                .unwrap_or(0),
        };
        w.validate()?;
        Ok(w)
    }
}
