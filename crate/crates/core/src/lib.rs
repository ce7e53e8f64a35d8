//! Inverse design of stern sections from pressure-contour images.
//!
//! * [`hullgeom`]: quadratic B-spline fitting of section offsets.
//! * [`synthgen`]: synthetic hull variants, surrogate pressure fields and contour images.
//! * [`tensor`]: a small reverse-mode autodiff engine.
//! * [`model`]: single-task and multi-task VGG-style regressors.
//! * [`trainer`]: Adam, learning-rate schedule, early stopping, checkpoints.
//! * [`evaluator`]: RMSE protocols and report tables.
//! * [`gradcam`]: per-task Grad-CAM heatmaps.

pub mod evaluator;
pub mod gradcam;
pub mod hullgeom;
pub mod model;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod trainer;
