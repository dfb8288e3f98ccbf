//! Sparse key-frame feature propagation for video detection.
//!
//! Full features are extracted only on key frames. Frames in between reuse
//! the last key frame's features, warped by estimated motion and refined by a
//! scale map. At key frames the warped memory is fused with the fresh
//! features using position-wise similarity weights.

pub mod aggregation;
pub mod bench;
pub mod commands;
pub mod detect;
pub mod error;
pub mod extract;
pub mod flow;
pub mod io;
pub mod pipeline;
pub mod settings;
pub mod synth;
pub mod tensor;
pub mod trace;
pub mod verify;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, FeaturePyramid, FlowField, Image, ScaleMap, Shape};
