use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_io::{write_atomic, Array3};
use crate::error::{Error, Result};
use crate::geometry::{Grid2D, GridSpec};

pub const BANK_INDEX_FILE: &str = "bank_index.json";
const BANK_SCHEMA_VERSION: u32 = 1;

/// Integer bank key of a timestamp in seconds (nanoseconds, rounded).
pub fn timestamp_key(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

/// Fused grids keyed by timestamp. Entries belong to one fusion window,
/// identified by the key of its oldest frame; starting a different window
/// discards them.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    origin: Option<i64>,
    entries: BTreeMap<i64, Grid2D>,
}

#[derive(Serialize, Deserialize)]
struct BankIndex {
    schema_version: u32,
    capacity: usize,
    origin: Option<i64>,
    entries: Vec<BankEntry>,
}

#[derive(Serialize, Deserialize)]
struct BankEntry {
    timestamp_ns: i64,
    file: String,
    spec: GridSpec,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            origin: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, key: i64) -> Option<&Grid2D> {
        self.entries.get(&key)
    }

    /// Stores `grid`, evicting the oldest entries beyond capacity.
    pub fn insert(&mut self, key: i64, grid: Grid2D) {
        self.entries.insert(key, grid);
        while self.entries.len() > self.capacity {
            self.entries.pop_first();
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.origin = None;
    }

    pub(crate) fn begin_window(&mut self, origin: i64, capacity: usize) {
        if self.origin != Some(origin) || self.capacity != capacity.max(1) {
            self.entries.clear();
            self.origin = Some(origin);
            self.capacity = capacity.max(1);
        }
    }

    /// Writes `bank_<ns>.bin` per entry plus the index JSON.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.entries.len());
        for (key, g) in &self.entries {
            let file = format!("bank_{key}.bin");
            Array3::new([g.channels, g.spec.x_cells, g.spec.y_cells], g.data.clone())?.save(&dir.join(&file))?;
            entries.push(BankEntry {
                timestamp_ns: *key,
                file,
                spec: g.spec,
            });
        }
        let index = BankIndex {
            schema_version: BANK_SCHEMA_VERSION,
            capacity: self.capacity,
            origin: self.origin,
            entries,
        };
        let path = dir.join(BANK_INDEX_FILE);
        let json = serde_json::to_vec_pretty(&index).map_err(|e| Error::format(&path, e.to_string()))?;
        write_atomic(&path, &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BANK_INDEX_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: BankIndex = serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        if index.schema_version != BANK_SCHEMA_VERSION {
            return Err(Error::format(&path, format!("unsupported schema version {}", index.schema_version)));
        }
        let mut bank = Self::new(index.capacity);
        bank.origin = index.origin;
        for e in index.entries {
            let file = dir.join(&e.file);
            let a = Array3::load(&file)?;
            if a.dims[1] != e.spec.x_cells || a.dims[2] != e.spec.y_cells {
                return Err(Error::format(&file, "grid dims differ from index"));
            }
            let g = Grid2D::from_vec(e.spec, a.dims[0], a.data).map_err(|err| Error::format(&file, err.to_string()))?;
            bank.entries.insert(e.timestamp_ns, g);
        }
        Ok(bank)
    }
}
