//! Simulation and processing for non-coherent two-site FMCW respiration
//! monitoring.
//!
//! The crate synthesizes raw IF cubes for breathing point targets, turns them
//! into range-time maps, detects occupied range bins, extracts respiration
//! displacement per bin, pairs bins across radars by respiration
//! cross-correlation (rejecting ghost intersections), multilaterates the
//! surviving pairs and estimates each subject's breathing rate.

pub mod assoc;
pub mod config;
pub mod csvfmt;
pub mod cube_io;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod range;
pub mod scene;
pub mod spectral;
pub mod vital;

pub use error::{Error, Result};
