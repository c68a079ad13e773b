//! Masked-face presentation attack detection with partial attack labels and
//! regional weighted inference.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: landmark geometry, mask polygons, 14×14 pixel labels and
//!   region weight maps.
//! - [`dataset`]: sample taxonomy, the synthetic corpus generator, identity
//!   disjoint splits and augmentation.
//! - [`network`]: the two pixel-supervised backbones, loss and checkpoints.
//! - [`trainer`]: optimisation loop with early stopping.
//! - [`inference`]: frame and video scoring.
//! - [`evaluation`]: APCER/BPCER/ACER, thresholds, ROC and AUC.
//! - [`pipeline`]: end-to-end runs and the ablation harness.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod inference;
pub mod network;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{LandmarkSet, MaskPolygon, PixelLabel, Point, Rect, RegionWeightMap, RegionWeights};
pub use grid::Grid;
pub use dataset::{Category, Medium, Sample};
