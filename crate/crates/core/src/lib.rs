//! Simulation and localization for metasurface-assisted indoor RSS positioning.

pub mod channel;
pub mod config;
pub mod error;
pub mod harness;
pub mod heatmap;
pub mod io;
pub mod localizer;
pub mod radiomap;
pub mod rng;
pub mod scene;
pub mod verify;

pub use error::{Error, Result};
