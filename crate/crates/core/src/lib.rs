//! Photometric-geometric LiDAR-inertial odometry.
//!
//! A sliding-window factor graph fuses IMU preintegration (with the gravity
//! direction as a variable), point-to-plane geometric factors and NCC-based
//! intensity patch factors. A deterministic simulator provides ground truth.

pub mod error;
pub mod eval;
pub mod geometric;
pub mod geometry;
pub mod inertial;
pub mod io;
pub mod photometric;
pub mod pipeline;
pub mod simulator;
pub mod smoother;

pub use error::{Error, Result};
