//! Temporally consistent semantic labeling for sparse direct visual odometry.
//!
//! Each sparse point is reprojected into the left and right images of the
//! keyframes around its host, and the 2D class predictions found there are
//! combined in an inverse-depth weighted vote. Around that core sit loaders
//! for sequence directories, a photometric energy check, LiDAR based ground
//! truth fusion, segmentation metrics, a synthetic scene generator and PLY
//! export.

// `!(x > limit)` is used on purpose so that NaN takes the rejection path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covisibility;
pub mod dataset;
pub mod error;
pub mod export;
pub mod geometry;
pub mod gt_fusion;
pub mod metrics;
pub mod photometric;
pub mod pipeline;
pub mod synth;
pub mod tcl;

pub use error::{Error, Result};
