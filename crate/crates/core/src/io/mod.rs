//! File formats at the boundary between datasets and the estimator.

pub mod config;
pub mod imu;
pub mod scan;
pub mod trajectory;

pub use config::{read_config, Config};
pub use imu::{read_imu, write_imu, ImuSample};
pub use scan::{read_scan, write_scan, BeamIntrinsics, LidarScan};
pub use trajectory::{read_trajectory, write_trajectory};
