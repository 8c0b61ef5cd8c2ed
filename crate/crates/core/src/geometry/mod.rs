//! Grid, camera and box geometry shared by every stage.
//!
//! Frames follow one convention throughout: ego x forward, y left, z up;
//! image x right, y down.

mod boxes;
mod camera;

pub use boxes::{
    bev_footprint, cell_box_overlap_ratio, cell_overlap_areas, clip_convex, convex_intersection_area,
    footprints_overlap, GtObject, Polygon2D,
};
pub use camera::{azimuth_of_cell, azimuth_of_column, wrap_angle, CameraModel, Rigid3};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric layout of a BEV grid. Cell `(x, y)` covers
/// `origin + [x, x+1) * cell_size` by `origin + [y, y+1) * cell_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_cells: usize,
    pub y_cells: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_cells: 64,
            y_cells: 64,
            cell_size: 1.0,
            origin: [-32.0, -32.0],
        }
    }
}

impl GridSpec {
    pub fn new(x_cells: usize, y_cells: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        let spec = Self {
            x_cells,
            y_cells,
            cell_size,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_cells == 0 || self.y_cells == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell per axis".into()));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::InvalidArgument("cell_size must be positive".into()));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.x_cells * self.y_cells
    }

    /// Linear cell index, `x`-major. Matches the in-memory layout of [`Grid2D`].
    #[inline]
    pub fn linear(&self, x: usize, y: usize) -> usize {
        x * self.y_cells + y
    }

    #[inline]
    pub fn unlinear(&self, idx: usize) -> (usize, usize) {
        (idx / self.y_cells, idx % self.y_cells)
    }

    #[inline]
    pub fn contains_index(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.x_cells && (y as usize) < self.y_cells
    }

    #[inline]
    pub fn cell_center(&self, x: usize, y: usize) -> [f64; 2] {
        [
            self.origin[0] + (x as f64 + 0.5) * self.cell_size,
            self.origin[1] + (y as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Lower-left and upper-right corners of the cell square.
    #[inline]
    pub fn cell_bounds(&self, x: usize, y: usize) -> ([f64; 2], [f64; 2]) {
        let lo = [
            self.origin[0] + x as f64 * self.cell_size,
            self.origin[1] + y as f64 * self.cell_size,
        ];
        (lo, [lo[0] + self.cell_size, lo[1] + self.cell_size])
    }

    /// Cell containing a metric point; lower-left edges are closed.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let fy = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let (ix, iy) = (fx as i64, fy as i64);
        self.contains_index(ix, iy).then(|| (ix as usize, iy as usize))
    }

    /// Metric extent `([xmin, ymin], [xmax, ymax])`.
    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.x_cells as f64 * self.cell_size,
                self.origin[1] + self.y_cells as f64 * self.cell_size,
            ],
        )
    }
}

/// Per-camera perspective feature map, channel-major over `(channel, row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFeatureMap {
    pub camera_id: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl CameraFeatureMap {
    pub fn zeros(camera_id: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            camera_id,
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(camera_id: usize, channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width || channels == 0 || height == 0 || width == 0 {
            return Err(Error::DimMismatch(format!(
                "camera map {channels}x{height}x{width} given {} values",
                data.len()
            )));
        }
        Ok(Self {
            camera_id,
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(c, h, w);
        self.data[i] = v;
    }

    pub fn pixel_vector(&self, h: usize, w: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, h, w)).collect()
    }
}

/// Dense channel-major feature grid over `(channel, x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub spec: GridSpec,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        Self {
            spec,
            channels,
            data: vec![0.0; channels * spec.n_cells()],
        }
    }

    pub fn from_vec(spec: GridSpec, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * spec.n_cells() {
            return Err(Error::DimMismatch(format!(
                "grid data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                spec.x_cells,
                spec.y_cells
            )));
        }
        Ok(Self {
            spec,
            channels,
            data,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.spec.n_cells()
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        c * self.plane_len() + self.spec.linear(x, y)
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Feature vector of one cell (strided gather across channels).
    pub fn cell_vector(&self, cell: usize) -> Vec<f64> {
        let n = self.plane_len();
        (0..self.channels).map(|c| self.data[c * n + cell]).collect()
    }

    pub fn check_same_layout(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch(format!("{what}: grid specs differ")));
        }
        if self.channels != other.channels {
            return Err(Error::DimMismatch(format!(
                "{what}: {} vs {} channels",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis.
    pub fn concat(&self, other: &Grid2D) -> Result<Grid2D> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch("concat: grid specs differ".into()));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Grid2D {
            spec: self.spec,
            channels: self.channels + other.channels,
            data,
        })
    }
}
