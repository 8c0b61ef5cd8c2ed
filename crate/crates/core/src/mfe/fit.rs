use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::loss::{focal_grad_logit, focal_loss};
use super::{gather_patch, head_logits, HeadWeights, TAPS};
use crate::error::{Error, Result};
use crate::geometry::Grid2D;
use crate::nn::{sigmoid, LinearLayer};
use crate::par;

/// One training grid with its rasterized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSample {
    pub bev: Grid2D,
    pub motion_gt: Grid2D,
    pub occupancy_gt: Grid2D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub ridge_lambda: f64,
    pub occupancy_iters: usize,
    pub occupancy_lr: f64,
    pub gamma: f64,
    pub alpha: f64,
}

pub const FIT_REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub l_vel: f64,
    pub l_occ: f64,
    pub n_samples: usize,
    #[serde(rename = "λ_r")]
    pub lambda_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedHeads {
    pub velocity: HeadWeights,
    pub occupancy: HeadWeights,
    pub report: FitReport,
}

fn check_samples(samples: &[FitSample]) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("fit needs at least one sample grid".into()))?;
    let c = first.bev.channels;
    for s in samples {
        if s.bev.channels != c {
            return Err(Error::DimMismatch("samples disagree on channel count".into()));
        }
        s.bev.check_same_layout(&Grid2D::zeros(s.bev.spec, c), "fit sample")?;
        if s.motion_gt.spec != s.bev.spec || s.motion_gt.channels != 2 {
            return Err(Error::DimMismatch("motion target must be a 2-channel grid on the sample grid".into()));
        }
        if s.occupancy_gt.spec != s.bev.spec || s.occupancy_gt.channels != 1 {
            return Err(Error::DimMismatch("occupancy target must be a 1-channel grid on the sample grid".into()));
        }
    }
    Ok(c)
}

/// Folds a linear map on `[patch, 1]` (rows = outputs) into a head whose
/// 1x1 stage is the identity.
fn head_from_rows(rows: &[Vec<f64>]) -> HeadWeights {
    let out = rows.len();
    let d = rows[0].len() - 1;
    let mut conv3 = LinearLayer::zeros(d, out);
    for (o, r) in rows.iter().enumerate() {
        conv3.weight[o * d..(o + 1) * d].copy_from_slice(&r[..d]);
        conv3.bias[o] = r[d];
    }
    HeadWeights {
        conv3,
        conv1: LinearLayer::identity(out),
    }
}

/// Closed-form ridge fit of the velocity head on `[patch, 1]` rows. The bias
/// is not penalized: solves `(XᵀX + λ diag(1,…,1,0)) w = Xᵀy`.
pub fn fit_velocity_head(samples: &[FitSample], lambda: f64) -> Result<(HeadWeights, f64)> {
    let c = check_samples(samples)?;
    let d = TAPS * c + 1;
    let partial = par::map(samples, |s| {
        let mut gram = vec![0.0; d * d];
        let mut rhs = vec![0.0; d * 2];
        let mut x = vec![0.0; d];
        x[d - 1] = 1.0;
        let n = s.bev.plane_len();
        for gx in 0..s.bev.spec.x_cells {
            for gy in 0..s.bev.spec.y_cells {
                gather_patch(&s.bev, gx, gy, &mut x[..d - 1]);
                let cell = s.bev.spec.linear(gx, gy);
                let (vx, vy) = (s.motion_gt.data[cell], s.motion_gt.data[n + cell]);
                for i in 0..d {
                    let xi = x[i];
                    if xi == 0.0 {
                        continue;
                    }
                    let row = &mut gram[i * d..(i + 1) * d];
                    for j in i..d {
                        row[j] += xi * x[j];
                    }
                    rhs[i * 2] += xi * vx;
                    rhs[i * 2 + 1] += xi * vy;
                }
            }
        }
        (gram, rhs)
    });
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DMatrix::<f64>::zeros(d, 2);
    for (g, r) in &partial {
        for i in 0..d {
            for j in i..d {
                gram[(i, j)] += g[i * d + j];
            }
            rhs[(i, 0)] += r[i * 2];
            rhs[(i, 1)] += r[i * 2 + 1];
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
        if i + 1 < d {
            gram[(i, i)] += lambda;
        }
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("normal matrix is not positive definite".into()))?;
    let l = chol.l();
    let diag: Vec<f64> = (0..d).map(|i| l[(i, i)]).collect();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
        return Err(Error::IllConditioned(format!(
            "normal matrix condition estimate {:.3e}",
            (hi / lo).powi(2)
        )));
    }
    let sol = chol.solve(&rhs);
    let rows: Vec<Vec<f64>> = (0..2).map(|o| sol.column(o).iter().cloned().collect()).collect();
    let head = head_from_rows(&rows);

    let sse = par::try_map(samples, |s| -> Result<(f64, usize)> {
        let pred = head_logits(&s.bev, &head)?;
        Ok((
            pred.data
                .iter()
                .zip(&s.motion_gt.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
            pred.data.len(),
        ))
    })?;
    let (tot, n) = sse.iter().fold((0.0, 0), |(a, n), (s, k)| (a + s, n + k));
    Ok((head, tot / n as f64))
}

/// Mean focal loss of an occupancy head and its gradient with respect to
/// `conv3` weights followed by the `conv3` bias. Requires one mid channel.
pub fn occupancy_objective(samples: &[FitSample], head: &HeadWeights, gamma: f64, alpha: f64) -> Result<(f64, Vec<f64>)> {
    check_samples(samples)?;
    head.validate()?;
    if head.conv3.out_dim != 1 || head.conv1.out_dim != 1 {
        return Err(Error::InvalidArgument("occupancy objective needs a 1-channel head".into()));
    }
    let a = head.conv1.weight[0];
    let d = head.conv3.in_dim;
    let parts = par::try_map(samples, |s| -> Result<(f64, Vec<f64>, usize)> {
        let logits = head_logits(&s.bev, head)?;
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        let mut patch = vec![0.0; d];
        for gx in 0..s.bev.spec.x_cells {
            for gy in 0..s.bev.spec.y_cells {
                let cell = s.bev.spec.linear(gx, gy);
                let z = logits.data[cell];
                let y = s.occupancy_gt.data[cell];
                loss += focal_loss(sigmoid(z), y, gamma, alpha);
                let gz = focal_grad_logit(z, y, gamma, alpha) * a;
                if gz == 0.0 {
                    continue;
                }
                gather_patch(&s.bev, gx, gy, &mut patch);
                for (g, p) in grad.iter_mut().zip(&patch) {
                    *g += gz * p;
                }
                grad[d] += gz;
            }
        }
        Ok((loss, grad, s.bev.plane_len()))
    })?;
    let n: usize = parts.iter().map(|p| p.2).sum();
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (l, g, _) in &parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, grad))
}

/// Full-batch Adam on the mean focal loss, in standardized patch
/// coordinates; the result is folded back into raw-feature weights.
pub fn fit_occupancy_head(samples: &[FitSample], cfg: &FitConfig) -> Result<(HeadWeights, f64)> {
    let c = check_samples(samples)?;
    let d = TAPS * c;

    // feature moments and positive rate
    let moments = par::map(samples, |s| {
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut patch = vec![0.0; d];
        for gx in 0..s.bev.spec.x_cells {
            for gy in 0..s.bev.spec.y_cells {
                gather_patch(&s.bev, gx, gy, &mut patch);
                for j in 0..d {
                    sum[j] += patch[j];
                    sq[j] += patch[j] * patch[j];
                }
            }
        }
        let pos = s.occupancy_gt.data.iter().filter(|v| **v >= 0.5).count();
        (sum, sq, pos, s.bev.plane_len())
    });
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    let (mut pos, mut n) = (0usize, 0usize);
    for (s, q, p, k) in &moments {
        for j in 0..d {
            mean[j] += s[j];
            var[j] += q[j];
        }
        pos += p;
        n += k;
    }
    let nf = n as f64;
    let std: Vec<f64> = (0..d)
        .map(|j| {
            mean[j] /= nf;
            let v = (var[j] / nf - mean[j] * mean[j]).max(0.0);
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();

    let rate = (pos as f64 / nf).clamp(1e-4, 1.0 - 1e-4);
    // standardized parameters: theta[..d] weights, theta[d] bias
    let mut theta = vec![0.0; d + 1];
    theta[d] = (rate / (1.0 - rate)).ln();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; d + 1];
    let mut m2 = vec![0.0; d + 1];

    let to_raw = |theta: &[f64]| -> HeadWeights {
        let mut row = vec![0.0; d + 1];
        let mut bias = theta[d];
        for j in 0..d {
            row[j] = theta[j] / std[j];
            bias -= theta[j] * mean[j] / std[j];
        }
        row[d] = bias;
        head_from_rows(&[row])
    };

    for it in 0..cfg.occupancy_iters {
        let head = to_raw(&theta);
        let (_, g_raw) = occupancy_objective(samples, &head, cfg.gamma, cfg.alpha)?;
        // chain rule into standardized coordinates
        let mut g = vec![0.0; d + 1];
        g[d] = g_raw[d];
        for j in 0..d {
            g[j] = (g_raw[j] - mean[j] * g_raw[d]) / std[j];
        }
        let t = (it + 1) as i32;
        for k in 0..=d {
            m1[k] = b1 * m1[k] + (1.0 - b1) * g[k];
            m2[k] = b2 * m2[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m1[k] / (1.0 - b1.powi(t));
            let vh = m2[k] / (1.0 - b2.powi(t));
            theta[k] -= cfg.occupancy_lr * mh / (vh.sqrt() + eps);
        }
    }
    let head = to_raw(&theta);
    let (loss, _) = occupancy_objective(samples, &head, cfg.gamma, cfg.alpha)?;
    if !loss.is_finite() {
        return Err(Error::IllConditioned("occupancy fit diverged".into()));
    }
    Ok((head, loss))
}

pub fn fit_heads(samples: &[FitSample], cfg: &FitConfig) -> Result<FittedHeads> {
    let (velocity, l_vel) = fit_velocity_head(samples, cfg.ridge_lambda)?;
    let (occupancy, l_occ) = fit_occupancy_head(samples, cfg)?;
    Ok(FittedHeads {
        velocity,
        occupancy,
        report: FitReport {
            schema_version: FIT_REPORT_SCHEMA,
            l_vel,
            l_occ,
            n_samples: samples.len(),
            lambda_r: cfg.ridge_lambda,
        },
    })
}
