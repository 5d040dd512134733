//! Relative range, bearing and heading estimation from a passive cylindrical
//! color marker, plus the synthetic camera used to calibrate and evaluate it.
//!
//! The detection pipeline runs in this order:
//!
//! 1. [`raster`]: median filtering and RGB to HSV conversion.
//! 2. [`segment`]: per-color threshold masks, image moments and the pixel
//!    features of the red ring, blue ring and yellow helix.
//! 3. [`estimate`]: pixel features to metric pose with validity envelopes.
//!
//! [`calibrate`] fits the constants used by [`estimate`] from sweeps rendered
//! by [`synthcam`], and [`harness`] scores a calibration against held-out
//! sweeps.
//!
//! Data-parallel loops (rows of a frame, frames of a sweep) go through
//! [`Execution`]. With the `parallel` feature disabled everything runs on the
//! calling thread and produces bit-identical results.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod estimate;
mod exec;
pub use exec::Execution;
pub mod harness;
pub mod raster;
pub mod segment;
pub mod synthcam;

pub use calibrate::{build_calibration, Calibration, SweepSample};
pub use estimate::{estimate_pose, PoseEstimate};
pub use raster::{Image, Rgb};
pub use segment::{extract_features, MarkerFeatures};
pub use synthcam::{render, CameraSpec, MarkerSpec, ScenePose};
