use super::MvfWeights;
use crate::error::{Error, Result};
use crate::geometry::{CameraFeatureMap, CameraModel, Grid2D, GridSpec};
use crate::nn::{sigmoid, softmax_in_place};

/// Increasing depth bin edges in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBins {
    pub edges: Vec<f64>,
}

impl DepthBins {
    pub fn uniform(min: f64, max: f64, bins: usize) -> Self {
        let step = (max - min) / bins as f64;
        Self {
            edges: (0..=bins).map(|k| min + k as f64 * step).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Bin holding `depth`; depths beyond the last edge (background) map to
    /// the last bin, depths before the first edge to bin 0.
    pub fn bin_of(&self, depth: f64) -> usize {
        let n = self.len();
        match self.edges.iter().position(|e| depth < *e) {
            Some(0) => 0,
            Some(k) => (k - 1).min(n - 1),
            None => n - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthSegOutput {
    pub height: usize,
    pub width: usize,
    /// `b x H x W` raw depth logits.
    pub depth_logits: Vec<f64>,
    /// `H x W` sigmoid foreground scores.
    pub foreground: Vec<f64>,
    pub bin_edges: Vec<f64>,
}

impl DepthSegOutput {
    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    /// Softmax over bins at pixel `(h, w)`.
    pub fn depth_probs_at(&self, h: usize, w: usize) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut p: Vec<f64> = (0..self.bins())
            .map(|k| self.depth_logits[k * plane + h * self.width + w])
            .collect();
        softmax_in_place(&mut p);
        p
    }

    /// Softmax over bins for every pixel, `b x H x W`.
    pub fn depth_probs(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.depth_logits.len()];
        for h in 0..self.height {
            for w in 0..self.width {
                for (k, p) in self.depth_probs_at(h, w).into_iter().enumerate() {
                    out[k * plane + h * self.width + w] = p;
                }
            }
        }
        out
    }
}

/// One linear map to `b + 1` channels per pixel: softmax depth, sigmoid foreground.
pub fn depth_seg_head(fhat: &CameraFeatureMap, w: &MvfWeights, bins: &DepthBins) -> Result<DepthSegOutput> {
    let b = bins.len();
    w.depth_seg.check_dims(fhat.channels, b + 1, "depth_seg")?;
    let plane = fhat.height * fhat.width;
    let mut depth_logits = vec![0.0; b * plane];
    let mut foreground = vec![0.0; plane];
    let mut y = vec![0.0; b + 1];
    for h in 0..fhat.height {
        for j in 0..fhat.width {
            w.depth_seg.forward_into(&fhat.pixel_vector(h, j), &mut y);
            let p = h * fhat.width + j;
            for k in 0..b {
                depth_logits[k * plane + p] = y[k];
            }
            foreground[p] = sigmoid(y[b]);
        }
    }
    Ok(DepthSegOutput {
        height: fhat.height,
        width: fhat.width,
        depth_logits,
        foreground,
        bin_edges: bins.edges.clone(),
    })
}

/// Sum-pools `prob · feature` of every foreground pixel and depth bin into
/// the BEV cell under the bin-center point of the pixel ray.
pub fn lift_to_bev(fhat: &CameraFeatureMap, d: &DepthSegOutput, cam: &CameraModel, grid: &GridSpec, tau_p: f64) -> Result<Grid2D> {
    if d.height != fhat.height || d.width != fhat.width || cam.image_h != fhat.height || cam.image_w != fhat.width {
        return Err(Error::DimMismatch(format!(
            "lift inputs disagree: features {}x{}, depth {}x{}, camera {}x{}",
            fhat.height, fhat.width, d.height, d.width, cam.image_h, cam.image_w
        )));
    }
    if !d.bin_edges.windows(2).all(|e| e[0] < e[1]) {
        return Err(Error::InvalidArgument("depth bin edges must increase".into()));
    }
    let centers: Vec<f64> = d.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    let c = fhat.channels;
    let mut out = Grid2D::zeros(*grid, c);
    let plane = out.plane_len();
    for h in 0..fhat.height {
        for j in 0..fhat.width {
            if d.foreground[h * fhat.width + j] < tau_p {
                continue;
            }
            let probs = d.depth_probs_at(h, j);
            let feat = fhat.pixel_vector(h, j);
            for (k, depth) in centers.iter().enumerate() {
                let p = cam.unproject(j as f64 + 0.5, h as f64 + 0.5, *depth);
                let Some((x, y)) = grid.cell_of([p[0], p[1]]) else {
                    continue;
                };
                let cell = grid.linear(x, y);
                for (ch, f) in feat.iter().enumerate() {
                    out.data[ch * plane + cell] += probs[k] * f;
                }
            }
        }
    }
    Ok(out)
}
