//! Object removal for indoor scenes, one room plane at a time.

pub mod adapter;
pub mod error;
pub mod geometry;
pub mod inpaint;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
