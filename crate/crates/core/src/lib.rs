//! Radar–camera–temporal bird's-eye-view fusion kernels.
//!
//! The crate is organised the way data flows through a frame sequence:
//!
//! - [`geometry`]: grids, cameras, boxes and exact cell/box overlap.
//! - [`scene`]: seeded synthetic scenes (moving boxes, radar sweeps, camera renders).
//! - [`mvf`]: perspective/BEV radar–camera fusion producing one BEV map per frame.
//! - [`mfe`]: per-cell velocity and occupancy heads, their targets, losses and fitting.
//! - [`mgtf`]: velocity-driven warping and occupancy-gated recurrent temporal fusion.
//! - [`eval`]: peak detection, center-distance AP and the pipeline comparison.
//! - [`pipeline`], [`config`], [`app`]: orchestration used by the `crtbev` binary.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise.

pub mod app;
pub mod array_io;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mfe;
pub mod mgtf;
pub mod mvf;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{CameraFeatureMap, CameraModel, GridSpec, Grid2D, GtObject, Polygon2D};
