//! Synthetic labeled point clouds for indoor semantic segmentation.
//!
//! The pipeline plans scanner stations over room footprints, ray-casts a
//! virtual time-of-flight scanner against component meshes, transfers
//! semantic labels from per-component reference samples, mixes the result
//! with real scans into training sets, and scores predictions.

pub mod annotate;
pub mod cloud;
pub mod dataset;
pub mod fixtures;
pub mod geometry;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod polygon;
pub mod scanner;
pub mod scene;
pub mod seed;

pub use cloud::{PointCloud, PointRecord, Rgb};
pub use geometry::{Point2, Vec3};
pub use labels::SemanticClass;
