//! Walking-assistance perception and control pipeline: 2D laser scans are
//! rasterized into occupancy grids, legs are segmented by a small
//! convolutional network, leg midpoints are tracked through coordinate
//! frames into gait parameters, and a follower controller closes the loop
//! against a deterministic scene simulator.

pub mod blob;
pub mod control;
pub mod error;
pub mod eval;
pub mod gait;
pub mod geometry;
pub mod nn;
pub mod raster;
pub mod scan;
pub mod sim;

pub use error::{Error, Result};
