//! Dense layers and the binary weight-bundle format.
//!
//! Bundle layout (all integers little-endian `u32`, reals little-endian `f64`):
//!
//! ```text
//! "CRTW" | version | n_layers
//! n_layers x { name_len | name (utf-8) | out | in }
//! n_layers x { weight[out*in] row-major | bias[out] }
//! ```

use std::path::Path;

use rand::Rng;

use crate::array_io::write_atomic;
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"CRTW";
pub const BUNDLE_VERSION: u32 = 1;

/// Affine map `y = W x + b` with `W` stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform init in `[-k, k]`, `k = 1/sqrt(in_dim)`, for weights and bias.
    pub fn seeded<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let k = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-k..=k)).collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-k..=k)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::DimMismatch(format!(
                "layer {out_dim}x{in_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    #[inline]
    pub fn w(&self, o: usize, i: usize) -> f64 {
        self.weight[o * self.in_dim + i]
    }

    #[inline]
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            *y = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        out
    }

    pub fn check_dims(&self, in_dim: usize, out_dim: usize, what: &str) -> Result<()> {
        if self.in_dim != in_dim || self.out_dim != out_dim {
            return Err(Error::DimMismatch(format!(
                "{what}: expected {out_dim}x{in_dim}, layer is {}x{}",
                self.out_dim, self.in_dim
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub first: LinearLayer,
    pub second: LinearLayer,
}

impl Mlp2 {
    pub fn seeded<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            first: LinearLayer::seeded(in_dim, hidden, rng),
            second: LinearLayer::seeded(hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.first.forward(x);
        relu_in_place(&mut h);
        self.second.forward(&h)
    }
}

#[inline]
pub fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Named, ordered collection of layers; the unit of (de)serialization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightBundle {
    pub layers: Vec<(String, LinearLayer)>,
}

impl WeightBundle {
    pub fn push(&mut self, name: impl Into<String>, layer: LinearLayer) {
        self.layers.push((name.into(), layer));
    }

    pub fn get(&self, name: &str) -> Result<&LinearLayer> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l)
            .ok_or_else(|| Error::InvalidArgument(format!("weight bundle has no layer `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (name, l) in &self.layers {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        }
        for (_, l) in &self.layers {
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::format(origin, "bad weight-bundle magic"));
        }
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::format(origin, format!("unsupported bundle version {version}")));
        }
        let n = r.u32()? as usize;
        let mut table = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(origin, "layer name is not utf-8"))?
                .to_string();
            let out = r.u32()? as usize;
            let inp = r.u32()? as usize;
            table.push((name, out, inp));
        }
        let mut layers = Vec::with_capacity(n);
        for (name, out, inp) in table {
            let weight = r.f64s(out * inp)?;
            let bias = r.f64s(out)?;
            layers.push((name, LinearLayer::from_parts(inp, out, weight, bias)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after weight payload"));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "truncated weight bundle"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
