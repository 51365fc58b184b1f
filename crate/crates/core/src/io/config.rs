//! Estimator configuration read from `key = value` files.
//!
//! Every tunable lives here with its default. Unset keys keep the default,
//! unknown keys and out-of-range values are rejected.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};

#[derive(Clone, Debug, PartialEq)]
pub struct ImuConfig {
    /// Gyro white noise, rad/s/sqrt(Hz).
    pub gyro_noise: f64,
    /// Accelerometer white noise, m/s^2/sqrt(Hz).
    pub accel_noise: f64,
    /// Gyro bias random walk, rad/s^2/sqrt(Hz).
    pub gyro_walk: f64,
    /// Accelerometer bias random walk, m/s^3/sqrt(Hz).
    pub accel_walk: f64,
    pub gravity: f64,
    pub init_duration_s: f64,
    pub init_max_gyro_std: f64,
    pub max_accel_bias: f64,
    pub max_gyro_bias: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            gyro_noise: 1.7e-4,
            accel_noise: 2e-3,
            gyro_walk: 1e-5,
            accel_walk: 1e-4,
            gravity: 9.81,
            init_duration_s: 0.5,
            init_max_gyro_std: 0.05,
            max_accel_bias: 1.0,
            max_gyro_bias: 0.2,
        }
    }
}

/// IMU-LiDAR extrinsic `T_IL`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExtrinsicConfig {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl ExtrinsicConfig {
    pub fn pose(&self) -> Pose {
        Pose::new(Rotation::from_rpy(self.roll, self.pitch, self.yaw), Vector3::new(self.tx, self.ty, self.tz))
    }

    pub fn from_pose(p: &Pose) -> Self {
        let (roll, pitch, yaw) = p.rotation.rpy();
        Self { tx: p.translation.x, ty: p.translation.y, tz: p.translation.z, roll, pitch, yaw }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeoConfig {
    pub enabled: bool,
    pub stride: usize,
    pub voxel_size: f64,
    pub max_points_per_voxel: usize,
    pub min_point_dist: f64,
    pub d1: f64,
    pub d2: f64,
    pub sigma: f64,
    pub huber: f64,
    pub min_correspondences: usize,
    pub degeneracy_threshold: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            stride: 4,
            voxel_size: 0.5,
            max_points_per_voxel: 20,
            min_point_dist: 0.1,
            d1: 1.0,
            d2: 0.1,
            sigma: 0.05,
            huber: 0.1,
            min_correspondences: 10,
            degeneracy_threshold: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapConfig {
    pub update_dist_m: f64,
    pub update_angle_deg: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { update_dist_m: 2.0, update_angle_deg: 30.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhotoConfig {
    pub enabled: bool,
    pub patch_size: usize,
    pub sigma: f64,
    pub huber: f64,
    pub min_ncc: f64,
    pub max_depth_diff: f64,
    pub filter_kv: usize,
    pub filter_kh: usize,
    pub brightness_window: usize,
    pub gauss_sigma: f64,
    pub nms_radius: usize,
    /// Gradient magnitude below which maxima are treated as noise.
    pub min_gradient: f64,
    pub features_per_direction: usize,
    pub max_features: usize,
    pub max_depth_spread: f64,
    pub min_std: f64,
}

impl Default for PhotoConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            patch_size: 5,
            sigma: 0.1,
            huber: 0.5,
            min_ncc: 0.5,
            max_depth_diff: 0.3,
            filter_kv: 9,
            filter_kh: 101,
            brightness_window: 64,
            gauss_sigma: 0.85,
            nms_radius: 7,
            min_gradient: 0.04,
            features_per_direction: 12,
            max_features: 120,
            max_depth_spread: 0.5,
            min_std: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptConfig {
    pub max_iterations: usize,
    pub min_step: f64,
    pub min_rel_decrease: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub refresh_all: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iterations: 8,
            min_step: 1e-6,
            min_rel_decrease: 1e-9,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.5,
            refresh_all: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    pub length_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length_s: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub imu: ImuConfig,
    pub extrinsic: ExtrinsicConfig,
    pub geo: GeoConfig,
    pub map: MapConfig,
    pub photo: PhotoConfig,
    pub opt: OptConfig,
    pub window: WindowConfig,
}

enum Slot<'a> {
    F(&'a mut f64),
    U(&'a mut usize),
    B(&'a mut bool),
}

impl Config {
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        use Slot::*;
        let Config { imu, extrinsic, geo, map, photo, opt, window } = self;
        vec![
            ("imu.gyro_noise", F(&mut imu.gyro_noise)),
            ("imu.accel_noise", F(&mut imu.accel_noise)),
            ("imu.gyro_walk", F(&mut imu.gyro_walk)),
            ("imu.accel_walk", F(&mut imu.accel_walk)),
            ("imu.gravity", F(&mut imu.gravity)),
            ("imu.init_duration_s", F(&mut imu.init_duration_s)),
            ("imu.init_max_gyro_std", F(&mut imu.init_max_gyro_std)),
            ("imu.max_accel_bias", F(&mut imu.max_accel_bias)),
            ("imu.max_gyro_bias", F(&mut imu.max_gyro_bias)),
            ("extrinsic.tx", F(&mut extrinsic.tx)),
            ("extrinsic.ty", F(&mut extrinsic.ty)),
            ("extrinsic.tz", F(&mut extrinsic.tz)),
            ("extrinsic.roll", F(&mut extrinsic.roll)),
            ("extrinsic.pitch", F(&mut extrinsic.pitch)),
            ("extrinsic.yaw", F(&mut extrinsic.yaw)),
            ("geo.enabled", B(&mut geo.enabled)),
            ("geo.stride", U(&mut geo.stride)),
            ("geo.voxel_size", F(&mut geo.voxel_size)),
            ("geo.max_points_per_voxel", U(&mut geo.max_points_per_voxel)),
            ("geo.min_point_dist", F(&mut geo.min_point_dist)),
            ("geo.d1", F(&mut geo.d1)),
            ("geo.d2", F(&mut geo.d2)),
            ("geo.sigma", F(&mut geo.sigma)),
            ("geo.huber", F(&mut geo.huber)),
            ("geo.min_correspondences", U(&mut geo.min_correspondences)),
            ("geo.degeneracy_threshold", F(&mut geo.degeneracy_threshold)),
            ("map.update_dist_m", F(&mut map.update_dist_m)),
            ("map.update_angle_deg", F(&mut map.update_angle_deg)),
            ("photo.enabled", B(&mut photo.enabled)),
            ("photo.patch_size", U(&mut photo.patch_size)),
            ("photo.sigma", F(&mut photo.sigma)),
            ("photo.huber", F(&mut photo.huber)),
            ("photo.min_ncc", F(&mut photo.min_ncc)),
            ("photo.max_depth_diff", F(&mut photo.max_depth_diff)),
            ("photo.filter_kv", U(&mut photo.filter_kv)),
            ("photo.filter_kh", U(&mut photo.filter_kh)),
            ("photo.brightness_window", U(&mut photo.brightness_window)),
            ("photo.gauss_sigma", F(&mut photo.gauss_sigma)),
            ("photo.nms_radius", U(&mut photo.nms_radius)),
            ("photo.features_per_direction", U(&mut photo.features_per_direction)),
            ("photo.max_features", U(&mut photo.max_features)),
            ("photo.max_depth_spread", F(&mut photo.max_depth_spread)),
            ("photo.min_std", F(&mut photo.min_std)),
            ("photo.min_gradient", F(&mut photo.min_gradient)),
            ("opt.max_iterations", U(&mut opt.max_iterations)),
            ("opt.min_step", F(&mut opt.min_step)),
            ("opt.min_rel_decrease", F(&mut opt.min_rel_decrease)),
            ("opt.lambda_init", F(&mut opt.lambda_init)),
            ("opt.lambda_up", F(&mut opt.lambda_up)),
            ("opt.lambda_down", F(&mut opt.lambda_down)),
            ("opt.refresh_all", B(&mut opt.refresh_all)),
            ("window.length_s", F(&mut window.length_s)),
        ]
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut slots = self.slots();
        let slot = slots
            .iter_mut()
            .find(|(k, _)| *k == key)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
        let bad = |what: &str| Error::Config(format!("{key}: cannot parse '{value}' as {what}"));
        match slot {
            Slot::F(f) => {
                let v: f64 = value.parse().map_err(|_| bad("a number"))?;
                if !v.is_finite() {
                    return Err(bad("a finite number"));
                }
                **f = v;
            }
            Slot::U(u) => **u = value.parse().map_err(|_| bad("a non-negative integer"))?,
            Slot::B(b) => {
                **b = match value {
                    "true" | "1" | "yes" | "on" => true,
                    "false" | "0" | "no" | "off" => false,
                    _ => return Err(bad("a boolean")),
                }
            }
        }
        drop(slots);
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        Ok(cfg)
    }

    pub fn to_text(&mut self) -> String {
        let mut s = String::new();
        for (k, slot) in self.slots() {
            let _ = match slot {
                Slot::F(f) => writeln!(s, "{k} = {f}"),
                Slot::U(u) => writeln!(s, "{k} = {u}"),
                Slot::B(b) => writeln!(s, "{k} = {b}"),
            };
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} out of range (must be > 0)")))
            }
        };
        let within = |name: &str, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} out of range [{lo}, {hi}]")))
            }
        };
        let i = &self.imu;
        pos("imu.gyro_noise", i.gyro_noise)?;
        pos("imu.accel_noise", i.accel_noise)?;
        pos("imu.gyro_walk", i.gyro_walk)?;
        pos("imu.accel_walk", i.accel_walk)?;
        within("imu.gravity", i.gravity, 9.0, 10.5)?;
        pos("imu.init_duration_s", i.init_duration_s)?;
        pos("imu.init_max_gyro_std", i.init_max_gyro_std)?;
        pos("imu.max_accel_bias", i.max_accel_bias)?;
        pos("imu.max_gyro_bias", i.max_gyro_bias)?;
        let g = &self.geo;
        within("geo.stride", g.stride as f64, 1.0, 64.0)?;
        pos("geo.voxel_size", g.voxel_size)?;
        within("geo.max_points_per_voxel", g.max_points_per_voxel as f64, 5.0, 1000.0)?;
        within("geo.min_point_dist", g.min_point_dist, 0.0, 10.0)?;
        pos("geo.d1", g.d1)?;
        pos("geo.d2", g.d2)?;
        pos("geo.sigma", g.sigma)?;
        pos("geo.huber", g.huber)?;
        pos("geo.degeneracy_threshold", g.degeneracy_threshold)?;
        pos("map.update_dist_m", self.map.update_dist_m)?;
        within("map.update_angle_deg", self.map.update_angle_deg, 0.0, 180.0)?;
        let p = &self.photo;
        within("photo.patch_size", p.patch_size as f64, 3.0, 15.0)?;
        if p.patch_size % 2 == 0 {
            return Err(Error::Config(format!("photo.patch_size = {} must be odd", p.patch_size)));
        }
        pos("photo.sigma", p.sigma)?;
        pos("photo.huber", p.huber)?;
        within("photo.min_ncc", p.min_ncc, -1.0, 1.0)?;
        pos("photo.max_depth_diff", p.max_depth_diff)?;
        within("photo.filter_kv", p.filter_kv as f64, 1.0, 1e4)?;
        within("photo.filter_kh", p.filter_kh as f64, 1.0, 1e5)?;
        within("photo.brightness_window", p.brightness_window as f64, 1.0, 1e5)?;
        pos("photo.gauss_sigma", p.gauss_sigma)?;
        pos("photo.max_depth_spread", p.max_depth_spread)?;
        pos("photo.min_std", p.min_std)?;
        within("photo.min_gradient", p.min_gradient, 0.0, f64::MAX)?;
        let o = &self.opt;
        within("opt.max_iterations", o.max_iterations as f64, 1.0, 1000.0)?;
        pos("opt.min_step", o.min_step)?;
        pos("opt.min_rel_decrease", o.min_rel_decrease)?;
        pos("opt.lambda_init", o.lambda_init)?;
        within("opt.lambda_up", o.lambda_up, 1.0 + 1e-9, 1e6)?;
        within("opt.lambda_down", o.lambda_down, 1e-6, 1.0 - 1e-9)?;
        pos("window.length_s", self.window.length_s)?;
        Ok(())
    }
}

pub fn read_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Config::parse(&text)
}
