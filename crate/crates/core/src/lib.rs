//! Hybrid quad-mesh / neural-field textures.
//!
//! Per-face features from a face-convolutional generator are interpolated
//! barycentrically and decoded to colour by a small shared field network.
//! Renders are differentiable with respect to every texture parameter, which
//! drives both adversarial training and style-based texture transfer from a
//! single query image.

pub mod context;
pub mod diff;
pub mod error;
pub mod field;
pub mod gantrain;
pub mod generator;
pub mod geometry;
pub mod model;
pub mod par;
pub mod perceptual;
pub mod render;
pub mod selftest;
pub mod transfer;

pub use error::{Error, Result};
