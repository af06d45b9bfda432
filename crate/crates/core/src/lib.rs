//! Absolute 6-DoF pose regression from FMCW radar scans.
//!
//! The pipeline converts polar scans into bird's-eye Cartesian images,
//! gates them with a learned soft attention mask, encodes them with a small
//! convolutional backbone and regresses translation plus log-quaternion
//! rotation. Training uses windows of consecutive frames so relative-pose
//! residuals constrain the network alongside the absolute ones.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod dual;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod layers;
pub mod losses;
pub mod network;
pub mod params;
pub mod plot;
pub mod pose;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
