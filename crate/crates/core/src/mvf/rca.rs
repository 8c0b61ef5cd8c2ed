use super::MvfWeights;
use crate::error::{Error, Result};
use crate::geometry::{azimuth_of_cell, azimuth_of_column, wrap_angle, CameraFeatureMap, CameraModel, Grid2D, GridSpec};
use crate::nn::{relu_in_place, softmax_in_place};

/// Max-pools `F_c` over height and width and passes both through the
/// compression MLPs. Returns `(W_c, H_c)` as `C x 1 x W` and `C x H x 1` maps.
pub fn compress_features(f: &CameraFeatureMap, w: &MvfWeights) -> Result<(CameraFeatureMap, CameraFeatureMap)> {
    let c = f.channels;
    w.compress_w.first.check_dims(c, w.compress_w.first.out_dim, "compress_w")?;
    w.compress_h.first.check_dims(c, w.compress_h.first.out_dim, "compress_h")?;
    let out_c = w.compress_w.second.out_dim;
    if w.compress_h.second.out_dim != out_c {
        return Err(Error::DimMismatch("compression MLPs disagree on output width".into()));
    }
    let mut wc = CameraFeatureMap::zeros(f.camera_id, out_c, 1, f.width);
    let mut hc = CameraFeatureMap::zeros(f.camera_id, out_c, f.height, 1);
    let mut pooled = vec![0.0; c];
    for j in 0..f.width {
        for (ch, p) in pooled.iter_mut().enumerate() {
            *p = (0..f.height).map(|h| f.get(ch, h, j)).fold(f64::NEG_INFINITY, f64::max);
        }
        for (ch, v) in w.compress_w.forward(&pooled).into_iter().enumerate() {
            wc.set(ch, 0, j, v);
        }
    }
    for h in 0..f.height {
        for (ch, p) in pooled.iter_mut().enumerate() {
            *p = (0..f.width).map(|j| f.get(ch, h, j)).fold(f64::NEG_INFINITY, f64::max);
        }
        for (ch, v) in w.compress_h.forward(&pooled).into_iter().enumerate() {
            hc.set(ch, h, 0, v);
        }
    }
    Ok((wc, hc))
}

/// Per-column lists of the `m` radar cells nearest in azimuth.
#[derive(Debug, Clone, PartialEq)]
pub struct AzimuthGroups {
    pub m: usize,
    pub columns: Vec<Vec<usize>>,
}

/// Selects, for every image column, the `m` cells with the smallest wrapped
/// azimuth difference, ties broken by ascending linear cell index.
pub fn azimuth_group(cam: &CameraModel, grid: &GridSpec, m: usize) -> Result<AzimuthGroups> {
    let n = grid.n_cells();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("M = {m} must be in [1, {n}]")));
    }
    let mut cell_az = Vec::with_capacity(n);
    for idx in 0..n {
        let (x, y) = grid.unlinear(idx);
        cell_az.push(azimuth_of_cell(grid, x, y)?);
    }
    let columns = (0..cam.image_w)
        .map(|j| {
            let theta = azimuth_of_column(cam, j);
            let mut keyed: Vec<(f64, usize)> = cell_az
                .iter()
                .enumerate()
                .map(|(idx, a)| (wrap_angle(theta - a).abs(), idx))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if m < n {
                keyed.select_nth_unstable_by(m - 1, cmp);
                keyed.truncate(m);
            }
            keyed.sort_unstable_by(cmp);
            keyed.into_iter().map(|(_, idx)| idx).collect()
        })
        .collect();
    Ok(AzimuthGroups { m, columns })
}

/// Intermediate quantities of the attention for one column.
#[derive(Debug, Clone, PartialEq)]
pub struct RcaColumn {
    pub output: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `M x C`, row-major.
    pub intermediates: Vec<f64>,
}

/// Attention over the `M` radar features matched to one column.
/// `radar_feats` is `M x C_r`, row-major.
pub fn rca_column(w_c_j: &[f64], radar_feats: &[f64], w: &MvfWeights) -> Result<RcaColumn> {
    let cw = w_c_j.len();
    let in_dim = w.mlp1.in_dim;
    if in_dim <= cw || radar_feats.is_empty() || radar_feats.len() % (in_dim - cw) != 0 {
        return Err(Error::DimMismatch(format!(
            "column feature {cw} + radar rows of {} values does not match MLP1 input {in_dim}",
            radar_feats.len()
        )));
    }
    let cr = in_dim - cw;
    let m = radar_feats.len() / cr;
    let c = w.mlp2.out_dim;
    w.mlp2.check_dims(w.mlp1.out_dim, c, "mlp2")?;
    w.mlp3.check_dims(c, 1, "mlp3")?;

    let mut input = vec![0.0; in_dim];
    input[..cw].copy_from_slice(w_c_j);
    let mut hidden = vec![0.0; w.mlp1.out_dim];
    let mut intermediates = vec![0.0; m * c];
    let mut alpha = vec![0.0; m];
    for k in 0..m {
        input[cw..].copy_from_slice(&radar_feats[k * cr..(k + 1) * cr]);
        w.mlp1.forward_into(&input, &mut hidden);
        relu_in_place(&mut hidden);
        let row = &mut intermediates[k * c..(k + 1) * c];
        w.mlp2.forward_into(&hidden, row);
        alpha[k] = w.mlp3.forward(row)[0];
    }
    softmax_in_place(&mut alpha);
    let mut output = vec![0.0; c];
    for (k, a) in alpha.iter().enumerate() {
        for (o, v) in output.iter_mut().zip(&intermediates[k * c..(k + 1) * c]) {
            *o += a * v;
        }
    }
    Ok(RcaColumn {
        output,
        alpha,
        intermediates,
    })
}

/// Attention-weighted sum of the per-cell intermediate features.
pub fn pixelwise_fuse(w_c_j: &[f64], radar_feats: &[f64], w: &MvfWeights) -> Result<Vec<f64>> {
    rca_column(w_c_j, radar_feats, w).map(|r| r.output)
}

/// Radar-enhanced column features `W_bar` (`C x 1 x W`) for one camera.
pub(crate) fn radar_columns(wc: &CameraFeatureMap, radar: &Grid2D, groups: &AzimuthGroups, w: &MvfWeights) -> Result<CameraFeatureMap> {
    if groups.columns.len() != wc.width {
        return Err(Error::DimMismatch(format!(
            "{} column groups for a {}-column map",
            groups.columns.len(),
            wc.width
        )));
    }
    let mut out = CameraFeatureMap::zeros(wc.camera_id, w.mlp2.out_dim, 1, wc.width);
    let cr = radar.channels;
    let mut feats = vec![0.0; groups.m * cr];
    let mut col = vec![0.0; wc.channels];
    for (j, cells) in groups.columns.iter().enumerate() {
        for (k, &cell) in cells.iter().enumerate() {
            for ch in 0..cr {
                feats[k * cr + ch] = radar.data[ch * radar.plane_len() + cell];
            }
        }
        for (ch, v) in col.iter_mut().enumerate() {
            *v = wc.get(ch, 0, j);
        }
        for (ch, v) in pixelwise_fuse(&col, &feats[..cells.len() * cr], w)?.into_iter().enumerate() {
            out.set(ch, 0, j, v);
        }
    }
    Ok(out)
}

/// `F_hat = Conv1x1(concat(W_bar ⊙ H_c, F_c))`.
pub fn enhance_perspective(
    fc: &CameraFeatureMap,
    wbar: &CameraFeatureMap,
    hc: &CameraFeatureMap,
    w: &MvfWeights,
) -> Result<CameraFeatureMap> {
    let c = fc.channels;
    if wbar.channels != hc.channels || wbar.height != 1 || hc.width != 1 || wbar.width != fc.width || hc.height != fc.height {
        return Err(Error::DimMismatch(format!(
            "W_bar {}x{}x{} and H_c {}x{}x{} do not match F_c {}x{}x{}",
            wbar.channels, wbar.height, wbar.width, hc.channels, hc.height, hc.width, c, fc.height, fc.width
        )));
    }
    let cb = wbar.channels;
    w.perspective.check_dims(cb + c, w.perspective.out_dim, "perspective")?;
    let out_c = w.perspective.out_dim;
    let mut out = CameraFeatureMap::zeros(fc.camera_id, out_c, fc.height, fc.width);
    let mut input = vec![0.0; cb + c];
    let mut y = vec![0.0; out_c];
    for h in 0..fc.height {
        for j in 0..fc.width {
            for ch in 0..cb {
                input[ch] = wbar.get(ch, 0, j) * hc.get(ch, h, 0);
            }
            for ch in 0..c {
                input[cb + ch] = fc.get(ch, h, j);
            }
            w.perspective.forward_into(&input, &mut y);
            for (ch, v) in y.iter().enumerate() {
                out.set(ch, h, j, *v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LinearLayer, Mlp2};
    use crate::rng::substream;
    use rand::Rng;

    fn identity_weights(c: usize) -> MvfWeights {
        let mut w = MvfWeights::seeded(c, 4, 0);
        let id = Mlp2 {
            first: LinearLayer::identity(c),
            second: LinearLayer::identity(c),
        };
        w.compress_w = id.clone();
        w.compress_h = id;
        w
    }

    #[test]
    fn constant_map_compresses_to_constant() {
        let w = identity_weights(3);
        let f = CameraFeatureMap::from_vec(0, 3, 2, 4, vec![0.7; 24]).unwrap();
        let (wc, hc) = compress_features(&f, &w).unwrap();
        assert!(wc.data.iter().chain(&hc.data).all(|v| *v == 0.7));
    }

    #[test]
    fn single_activation_dominates_max_pool() {
        let w = identity_weights(2);
        let mut f = CameraFeatureMap::zeros(0, 2, 3, 4);
        f.set(1, 2, 3, 9.0);
        let (wc, hc) = compress_features(&f, &w).unwrap();
        assert_eq!(wc.get(1, 0, 3), 9.0);
        assert_eq!(wc.get(1, 0, 2), 0.0);
        assert_eq!(hc.get(1, 2, 0), 9.0);
        assert_eq!(hc.get(1, 1, 0), 0.0);
    }

    #[test]
    fn single_radar_feature_passes_through() {
        let w = MvfWeights::seeded(4, 4, 3);
        let col = [0.1, -0.2, 0.3, 0.4];
        let feat = [1.0, 2.0, -1.0, 0.5];
        let r = rca_column(&col, &feat, &w).unwrap();
        assert_eq!(r.alpha, vec![1.0]);
        assert_eq!(r.output, r.intermediates);
        let twice: Vec<f64> = feat.iter().chain(feat.iter()).cloned().collect();
        let r2 = rca_column(&col, &twice, &w).unwrap();
        assert_eq!(r2.alpha, vec![0.5, 0.5]);
        for (a, b) in r2.output.iter().zip(&r.output) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grouping_matches_exhaustive_sort() {
        let grid = GridSpec::new(16, 16, 1.0, [-8.0, -8.0]).unwrap();
        let cam = CameraModel::looking_at_yaw(0.4, 1.2, 12, 4, [0.0, 0.0, 1.5]);
        let groups = azimuth_group(&cam, &grid, 8).unwrap();
        for (j, cells) in groups.columns.iter().enumerate() {
            let theta = azimuth_of_column(&cam, j);
            let mut all: Vec<(f64, usize)> = (0..grid.n_cells())
                .map(|i| {
                    let (x, y) = grid.unlinear(i);
                    let c = grid.cell_center(x, y);
                    (wrap_angle(theta - c[1].atan2(c[0])).abs(), i)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..8].iter().map(|p| p.1).collect();
            assert_eq!(cells, &want);
        }
        assert!(azimuth_group(&cam, &grid, 0).is_err());
        assert_eq!(azimuth_group(&cam, &grid, 256).unwrap().columns[0].len(), 256);
    }

    #[test]
    fn enhance_matches_naive_loops() {
        let mut rng = substream(1, "t", 0);
        let (c, h, wd) = (3, 2, 4);
        let w = MvfWeights::seeded(c, 4, 9);
        let rnd = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let fc = CameraFeatureMap::from_vec(0, c, h, wd, rnd(c * h * wd, &mut rng)).unwrap();
        let wbar = CameraFeatureMap::from_vec(0, c, 1, wd, rnd(c * wd, &mut rng)).unwrap();
        let hc = CameraFeatureMap::from_vec(0, c, h, 1, rnd(c * h, &mut rng)).unwrap();
        let out = enhance_perspective(&fc, &wbar, &hc, &w).unwrap();
        for o in 0..c {
            for y in 0..h {
                for x in 0..wd {
                    let mut s = w.perspective.bias[o];
                    for k in 0..c {
                        s += w.perspective.w(o, k) * wbar.get(k, 0, x) * hc.get(k, y, 0);
                        s += w.perspective.w(o, c + k) * fc.get(k, y, x);
                    }
                    assert!((out.get(o, y, x) - s).abs() < 1e-12);
                }
            }
        }
    }
}
