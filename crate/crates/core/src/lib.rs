//! Streaming audio-to-talking-head pre-renderer.
//!
//! Audio enters as 16 kHz PCM and leaves as a 60 fps stream of head poses,
//! mouth landmark displacements and rasterized 512×512 feature maps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod apc;
pub mod audio;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod manifold;
pub mod mouth;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod scene;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
