//! Binary real-array files and atomic writes.
//!
//! An array file is a 16-byte header followed by row-major little-endian `f64`
//! values:
//!
//! ```text
//! bytes 0..4    magic "CRTA"
//! bytes 4..8    d0 (u32 LE)   slowest axis
//! bytes 8..12   d1 (u32 LE)
//! bytes 12..16  d2 (u32 LE)   fastest axis
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const ARRAY_MAGIC: &[u8; 4] = b"CRTA";

#[derive(Debug, Clone, PartialEq)]
pub struct Array3 {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Array3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::DimMismatch(format!("array dims {dims:?} vs {} values", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(ARRAY_MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != ARRAY_MAGIC {
            return Err(Error::format(origin, "missing array header"));
        }
        let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        let dims = [dim(0), dim(1), dim(2)];
        let n: usize = dims.iter().product();
        if bytes.len() != 16 + n * 8 {
            return Err(Error::format(
                origin,
                format!("payload is {} bytes, header promises {}", bytes.len() - 16, n * 8),
            ));
        }
        let data = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
