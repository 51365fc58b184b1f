//! Deterministic synthetic LiDAR and IMU data over analytic scenes.
//!
//! Scenes are closed-form surfaces (a cylindrical tunnel along `+x` or an
//! axis-aligned box) so that ranges and normals have exact oracles. Every
//! random draw comes from a ChaCha stream keyed by the dataset seed.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{log_so3, GravityDir, NavState, Pose, Rotation};
use crate::io::{write_imu, write_scan, write_trajectory, BeamIntrinsics, Config, ImuSample, LidarScan};

/// Reference range of the intensity falloff.
const FALLOFF_R0: f64 = 20.0;
const MAX_RANGE: f64 = 500.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    /// Infinite cylinder of `radius` around the `x` axis, optionally cut by
    /// a flat floor at height `floor_z`.
    Tunnel {
        radius: f64,
        floor_z: Option<f64>,
    },
    Room {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    Plain {
        albedo: f64,
    },
    /// Sinusoid mural bands on the unrolled tunnel wall: `period` metre
    /// sections of which the first `mural` metres are painted.
    Murals {
        period: f64,
        mural: f64,
    },
    /// Low-frequency wall patterns of a room.
    Patterned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub geometry: Geometry,
    pub texture: Texture,
}

/// First intersection of a ray with the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub point: Vector3<f64>,
    /// Unit surface normal facing the ray origin.
    pub normal: Vector3<f64>,
    pub surface: Surface,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Wall,
    Floor,
    Face(usize),
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn smoothstep_deriv(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    30.0 * x * x * (1.0 - x) * (1.0 - x)
}

impl SceneModel {
    pub fn tunnel(radius: f64, floor_z: Option<f64>, texture: Texture) -> Self {
        Self { geometry: Geometry::Tunnel { radius, floor_z }, texture }
    }

    pub fn room(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { geometry: Geometry::Room { min, max }, texture: Texture::Patterned }
    }

    /// First positive hit of the ray `o + t d` (`d` unit length).
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        match &self.geometry {
            Geometry::Tunnel { radius, floor_z } => {
                let a = d.y * d.y + d.z * d.z;
                let mut best: Option<Hit> = None;
                if a > 1e-15 {
                    let b = o.y * d.y + o.z * d.z;
                    let c = o.y * o.y + o.z * o.z - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let t = (-b + disc.sqrt()) / a;
                        if t > 0.0 {
                            let p = o + d * t;
                            let n = -Vector3::new(0.0, p.y, p.z) / *radius;
                            best = Some(Hit { range: t, point: p, normal: n, surface: Surface::Wall });
                        }
                    }
                }
                if let Some(fz) = floor_z {
                    if d.z < 0.0 && o.z > *fz {
                        let t = (fz - o.z) / d.z;
                        if best.is_none_or(|h| t < h.range) {
                            let p = o + d * t;
                            best = Some(Hit { range: t, point: p, normal: Vector3::z(), surface: Surface::Floor });
                        }
                    }
                }
                best
            }
            Geometry::Room { min, max } => {
                let mut best: Option<Hit> = None;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        continue;
                    }
                    let bound = if d[k] > 0.0 { max[k] } else { min[k] };
                    let t = (bound - o[k]) / d[k];
                    if t > 0.0 && best.is_none_or(|h| t < h.range) {
                        let mut n = Vector3::zeros();
                        n[k] = -d[k].signum();
                        let face = 2 * k + usize::from(d[k] > 0.0);
                        best = Some(Hit { range: t, point: o + d * t, normal: n, surface: Surface::Face(face) });
                    }
                }
                best
            }
        }
    }

    /// Surface reflectance in `[0, 1]`.
    pub fn albedo(&self, hit: &Hit) -> f64 {
        let p = &hit.point;
        let a = match (&self.texture, hit.surface) {
            (Texture::Plain { albedo }, _) => *albedo,
            (Texture::Murals { .. }, Surface::Floor) => 0.35,
            (Texture::Murals { period, mural }, _) => {
                let radius = match self.geometry {
                    Geometry::Tunnel { radius, .. } => radius,
                    _ => 1.0,
                };
                let s = p.x;
                let arc = radius * p.z.atan2(p.y);
                let k = (s / period).floor();
                let local = s - k * period;
                let edge = 0.4;
                let w = smoothstep(local / edge) * smoothstep((mural - local) / edge);
                // per-section phases keep sections distinct
                let ph = (k * 2.399_963).sin() * PI;
                let m = 0.22 * (2.0 * PI * s / 1.9 + ph).sin()
                    + 0.14 * (2.0 * PI * (s / 0.8 + arc / 6.0) + 1.3 * ph).sin()
                    + 0.10 * (2.0 * PI * (s / 2.9 + arc / 3.7) - ph).sin();
                0.5 + w * m
            }
            (Texture::Patterned, Surface::Face(f)) => {
                let (u, v) = match f / 2 {
                    0 => (p.y, p.z),
                    1 => (p.x, p.z),
                    _ => (p.x, p.y),
                };
                let ph = f as f64 * 0.7;
                0.5 + 0.2 * (2.0 * PI * u / 1.7 + ph).sin() * (2.0 * PI * v / 1.1).cos()
                    + 0.1 * (2.0 * PI * (u + v) / 2.3).sin()
            }
            (Texture::Patterned, _) => 0.5,
        };
        a.clamp(0.0, 1.0)
    }

    /// Return intensity of `hit` seen along `d`.
    pub fn intensity(&self, hit: &Hit, d: &Vector3<f64>) -> f64 {
        let cos = d.dot(&hit.normal).abs();
        let f = 1.0 + hit.range / FALLOFF_R0;
        self.albedo(hit) * cos / (f * f)
    }
}

/// Pose and world velocity of the IMU frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FigureEight {
    pub center: Vector3<f64>,
    /// Amplitudes of the `x`, `y` and `z` lobes.
    pub amplitude: Vector3<f64>,
    pub period: f64,
    /// Roll, pitch and yaw oscillation amplitudes, radians.
    pub attitude: Vector3<f64>,
    pub yaw0: f64,
    /// Motion starts here and blends in over `ramp` seconds.
    pub start: f64,
    pub ramp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunnelTransit {
    pub length: f64,
    pub v_max: f64,
    pub start: f64,
    /// Duration of the acceleration and of the deceleration phase.
    pub ramp: f64,
    pub lateral: f64,
    pub heading: f64,
    pub oscillations: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryModel {
    Static { pose: Pose },
    ConstantVelocity { start: Pose, velocity: Vector3<f64> },
    FigureEight(FigureEight),
    TunnelTransit(TunnelTransit),
}

impl TunnelTransit {
    fn cruise(&self) -> f64 {
        (self.length - self.v_max * self.ramp) / self.v_max
    }

    /// Time at which the vehicle stops again.
    pub fn end(&self) -> f64 {
        self.start + 2.0 * self.ramp + self.cruise()
    }

    /// Distance travelled and speed along the axis.
    fn axial(&self, t: f64) -> (f64, f64) {
        let (vm, ta) = (self.v_max, self.ramp);
        let ramp_len = 0.5 * vm * ta;
        let tau = t - self.start;
        let cruise = self.cruise();
        if tau <= 0.0 {
            (0.0, 0.0)
        } else if tau < ta {
            (0.5 * vm * (tau - ta / PI * (PI * tau / ta).sin()), 0.5 * vm * (1.0 - (PI * tau / ta).cos()))
        } else if tau < ta + cruise {
            (ramp_len + vm * (tau - ta), vm)
        } else if tau < 2.0 * ta + cruise {
            let s = tau - ta - cruise;
            let x = ramp_len + vm * cruise + 0.5 * vm * (s + ta / PI * (PI * s / ta).sin());
            (x, 0.5 * vm * (1.0 + (PI * s / ta).cos()))
        } else {
            (self.length, 0.0)
        }
    }
}

impl TrajectoryModel {
    pub fn at(&self, t: f64) -> Kinematics {
        match self {
            TrajectoryModel::Static { pose } => Kinematics { pose: *pose, velocity: Vector3::zeros() },
            TrajectoryModel::ConstantVelocity { start, velocity } => {
                Kinematics { pose: Pose::new(start.rotation, start.translation + velocity * t), velocity: *velocity }
            }
            TrajectoryModel::FigureEight(f) => {
                let w = 2.0 * PI / f.period;
                let tau = t - f.start;
                let e = smoothstep(tau / f.ramp);
                let de = smoothstep_deriv(tau / f.ramp) / f.ramp;
                let a = &f.amplitude;
                let shape =
                    Vector3::new(a.x * (w * tau).sin(), a.y * (2.0 * w * tau).sin(), a.z * (3.0 * w * tau + 0.5).sin());
                let dshape = Vector3::new(
                    a.x * w * (w * tau).cos(),
                    2.0 * a.y * w * (2.0 * w * tau).cos(),
                    3.0 * a.z * w * (3.0 * w * tau + 0.5).cos(),
                );
                let z0 = Vector3::new(0.0, 0.0, a.z * 0.5f64.sin());
                let pos = f.center + (shape - z0) * e;
                let vel = (shape - z0) * de + dshape * e;
                let att = &f.attitude;
                let rot = Rotation::from_rpy(
                    e * att.x * (1.3 * w * tau).sin(),
                    e * att.y * (1.7 * w * tau + 1.0).sin(),
                    f.yaw0 + e * att.z * (w * tau).sin(),
                );
                Kinematics { pose: Pose::new(rot, pos), velocity: vel }
            }
            TrajectoryModel::TunnelTransit(tt) => {
                let (x, vx) = tt.axial(t);
                let q = x / tt.length;
                let dq = vx / tt.length;
                let k = tt.oscillations * PI;
                let y = tt.lateral * (k * q).sin();
                let vy = tt.lateral * k * (k * q).cos() * dq;
                let yaw = tt.heading * (0.7 * k * q).sin() * (PI * q).sin();
                let pitch = 0.01 * (1.3 * k * q).sin();
                let roll = 0.01 * (0.9 * k * q + 1.0).sin() * (PI * q).sin();
                Kinematics {
                    pose: Pose::new(Rotation::from_rpy(roll, pitch, yaw), Vector3::new(x, y, tt.height)),
                    velocity: Vector3::new(vx, vy, 0.0),
                }
            }
        }
    }
}

/// LiDAR simulation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarSim {
    pub intrinsics: BeamIntrinsics,
    /// Duration of one revolution.
    pub period: f64,
    pub range_noise: f64,
    pub intensity_noise: f64,
}

impl Default for LidarSim {
    fn default() -> Self {
        let az = 11f64.to_radians();
        Self {
            intrinsics: BeamIntrinsics::uniform(
                64,
                512,
                PI / 2.0,
                0.02767,
                (0..64).map(|i| if i % 2 == 0 { az } else { -az }).collect(),
            ),
            period: 0.1,
            range_noise: 0.01,
            intensity_noise: 0.02,
        }
    }
}

/// Deterministic normal stream; zero sigma draws nothing.
struct Noise {
    rng: ChaCha8Rng,
}

impl Noise {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    fn draw(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).map(|n| n.sample(&mut self.rng)).unwrap_or(0.0)
        } else {
            0.0
        }
    }

    fn vec3(&mut self, sigma: f64) -> Vector3<f64> {
        Vector3::new(self.draw(sigma), self.draw(sigma), self.draw(sigma))
    }
}

/// One revolution starting at `t_start`; every column is cast from the
/// LiDAR pose at its own firing time.
pub fn simulate_scan(
    scene: &SceneModel,
    trajectory: &TrajectoryModel,
    t_il: &Pose,
    lidar: &LidarSim,
    t_start: f64,
    seed: u64,
) -> LidarScan {
    let intr = &lidar.intrinsics;
    let (h, w) = (intr.rows, intr.cols);
    let column_offsets: Vec<f64> = (0..w).map(|c| lidar.period * c as f64 / w as f64).collect();
    let mut noise = Noise::new(seed, (t_start * 1e3).round() as u64 + 1);
    let mut range = vec![0f32; h * w];
    let mut intensity = vec![0f32; h * w];
    for (c, off) in column_offsets.iter().enumerate() {
        let t_wl = trajectory.at(t_start + off).pose.compose(t_il);
        let enc = intr.encoder_angle(c as f64);
        for r in 0..h {
            let o = intr.point(r, enc, 0.0);
            let d = intr.point(r, enc, 1.0) - o;
            let (ow, dw) = (t_wl.transform_point(&o), t_wl.rotation.rotate(&d));
            let dr = noise.draw(lidar.range_noise);
            let di = noise.draw(lidar.intensity_noise);
            let Some(hit) = scene.cast(&ow, &dw) else { continue };
            if hit.range > MAX_RANGE {
                continue;
            }
            let i = r * w + c;
            range[i] = (hit.range + dr).max(1e-3) as f32;
            intensity[i] = (scene.intensity(&hit, &dw) + di).clamp(0.0, 1.0) as f32;
        }
    }
    LidarScan {
        intrinsics: intr.clone(),
        start_time: t_start,
        end_time: t_start + column_offsets[w - 1],
        column_offsets,
        range,
        intensity,
    }
}

/// In-flight accelerometer offset that blends in after `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelOffset {
    pub body: Vector3<f64>,
    pub start: f64,
    pub ramp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImuSim {
    pub rate: f64,
    pub gravity: f64,
    pub g_hat: GravityDir,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub accel_offset: Option<AccelOffset>,
}

impl Default for ImuSim {
    fn default() -> Self {
        Self {
            rate: 200.0,
            gravity: 9.81,
            g_hat: GravityDir::down(),
            gyro_bias: Vector3::new(0.002, -0.0015, 0.001),
            accel_bias: Vector3::new(0.03, -0.02, 0.04),
            gyro_noise: 1.7e-4,
            accel_noise: 2e-3,
            accel_offset: None,
        }
    }
}

impl ImuSim {
    pub fn noise_free() -> Self {
        Self {
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gyro_noise: 0.0,
            accel_noise: 0.0,
            ..Self::default()
        }
    }

    fn accel_bias_at(&self, t: f64) -> Vector3<f64> {
        match &self.accel_offset {
            Some(o) => self.accel_bias + o.body * smoothstep((t - o.start) / o.ramp),
            None => self.accel_bias,
        }
    }
}

/// IMU samples on `[0, duration]` that reproduce the trajectory exactly in
/// rotation and velocity under zero-order-hold integration: each sample
/// carries the mean angular rate and mean acceleration of its interval.
pub fn simulate_imu(trajectory: &TrajectoryModel, imu: &ImuSim, duration: f64, seed: u64) -> Vec<ImuSample> {
    let dt = 1.0 / imu.rate;
    let n = (duration * imu.rate).round() as usize;
    let mut noise = Noise::new(seed, 0);
    let gd = imu.gyro_noise / dt.sqrt();
    let ad = imu.accel_noise / dt.sqrt();
    let gv = imu.g_hat.vector() * imu.gravity;
    let mut out = Vec::with_capacity(n + 1);
    let mut cur = trajectory.at(0.0);
    for k in 0..=n {
        let t = k as f64 * dt;
        let next = trajectory.at((k + 1) as f64 * dt);
        let r = cur.pose.rotation;
        let omega = log_so3(&r.inverse().compose(&next.pose.rotation)) / dt;
        let a_w = (next.velocity - cur.velocity) / dt;
        let specific = r.inverse().rotate(&(a_w - gv));
        out.push(ImuSample::new(
            t,
            omega + imu.gyro_bias + noise.vec3(gd),
            specific + imu.accel_bias_at(t) + noise.vec3(ad),
        ));
        cur = next;
    }
    out
}

/// Ground-truth states consistent with zero-order-hold integration of
/// noise-free samples: rotation and velocity are sampled from the model,
/// position is integrated with the trapezoid rule from the model start.
pub fn imu_consistent_states(trajectory: &TrajectoryModel, rate: f64, duration: f64) -> Vec<NavState> {
    let dt = 1.0 / rate;
    let n = (duration * rate).round() as usize;
    let first = trajectory.at(0.0);
    let mut p = first.pose.translation;
    let mut out = Vec::with_capacity(n + 1);
    let mut prev_v = first.velocity;
    for k in 0..=n {
        let kin = trajectory.at(k as f64 * dt);
        if k > 0 {
            p += 0.5 * (prev_v + kin.velocity) * dt;
        }
        prev_v = kin.velocity;
        out.push(NavState {
            pose: Pose::new(kin.pose.rotation, p),
            velocity: kin.velocity,
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            stamp: k as f64 * dt,
        });
    }
    out
}

/// A complete synthetic experiment.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub scene: SceneModel,
    pub trajectory: TrajectoryModel,
    pub duration: f64,
    pub lidar: LidarSim,
    pub imu: ImuSim,
    pub t_il: Pose,
    /// Estimator configuration matching the simulated sensors.
    pub config: Config,
}

pub const SCENARIOS: [&str; 5] =
    ["room-slow", "room-dynamic", "tunnel-textured", "tunnel-plain", "tunnel-transit-fast"];

pub fn default_extrinsic() -> Pose {
    Pose::new(Rotation::from_rpy(0.01, -0.015, 0.02), Vector3::new(0.04, -0.02, 0.08))
}

pub fn room_scene() -> SceneModel {
    SceneModel::room(Vector3::new(-4.5, -3.0, -1.4), Vector3::new(3.5, 3.0, 2.6))
}

pub fn tunnel_transit(length: f64, v_max: f64, ramp: f64) -> TunnelTransit {
    TunnelTransit {
        length,
        v_max,
        start: 1.0,
        ramp,
        lateral: 0.3,
        heading: 3f64.to_radians(),
        oscillations: 6.0,
        height: 0.0,
    }
}

pub fn scenario(name: &str) -> Result<Scenario> {
    let t_il = default_extrinsic();
    let mut config = Config::default();
    config.extrinsic = crate::io::config::ExtrinsicConfig::from_pose(&t_il);
    let lidar = LidarSim::default();
    let imu = ImuSim::default();
    config.imu.gyro_noise = imu.gyro_noise;
    config.imu.accel_noise = imu.accel_noise;
    let figure = |period: f64, amp: Vector3<f64>, att: Vector3<f64>| {
        TrajectoryModel::FigureEight(FigureEight {
            center: Vector3::new(0.0, 0.0, 0.0),
            amplitude: amp,
            period,
            attitude: att,
            yaw0: 0.0,
            start: 1.0,
            ramp: 2.0,
        })
    };
    let tunnel_scene = |texture| SceneModel::tunnel(4.0, Some(-1.5), texture);
    let murals = Texture::Murals { period: 10.0, mural: 8.0 };
    let s = match name {
        "room-slow" => Scenario {
            name: name.into(),
            scene: room_scene(),
            trajectory: figure(30.0, Vector3::new(1.5, 0.8, 0.1), Vector3::new(0.05, 0.05, 0.5)),
            duration: 30.0,
            lidar,
            imu,
            t_il,
            config,
        },
        "room-dynamic" => Scenario {
            name: name.into(),
            scene: room_scene(),
            trajectory: figure(12.0, Vector3::new(2.0, 1.2, 0.3), Vector3::new(0.25, 0.2, 0.8)),
            duration: 60.0,
            lidar,
            imu,
            t_il,
            config,
        },
        "tunnel-textured" | "tunnel-plain" => {
            let texture = if name == "tunnel-textured" { murals } else { Texture::Plain { albedo: 0.5 } };
            let tt = tunnel_transit(30.0, 2.0, 2.0);
            Scenario {
                name: name.into(),
                scene: tunnel_scene(texture),
                duration: tt.end() + 1.0,
                trajectory: TrajectoryModel::TunnelTransit(tt),
                lidar,
                imu,
                t_il,
                config,
            }
        }
        "tunnel-transit-fast" => {
            let tt = tunnel_transit(100.0, 10.8, 4.0);
            let imu = ImuSim {
                accel_offset: Some(AccelOffset { body: Vector3::new(0.5, 0.0, 0.0), start: tt.start, ramp: 1.0 }),
                ..imu
            };
            config.imu.accel_walk = 0.02;
            Scenario {
                name: name.into(),
                scene: tunnel_scene(murals),
                duration: tt.end() + 1.0,
                trajectory: TrajectoryModel::TunnelTransit(tt),
                lidar,
                imu,
                t_il,
                config,
            }
        }
        _ => return Err(Error::UnknownScenario(name.into())),
    };
    Ok(s)
}

/// Simulated sensor streams and ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scans: Vec<LidarScan>,
    pub imu: Vec<ImuSample>,
    /// `T_WI` at every scan end time.
    pub truth: Vec<(f64, Pose)>,
    pub config: Config,
}

impl Scenario {
    /// Start times of all complete revolutions.
    pub fn scan_starts(&self) -> Vec<f64> {
        let n = ((self.duration - self.lidar.period) / self.lidar.period + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.lidar.period).collect()
    }

    pub fn simulate(&self, seed: u64) -> Dataset {
        let imu = simulate_imu(&self.trajectory, &self.imu, self.duration, seed);
        let mut scans = Vec::new();
        let mut truth = Vec::new();
        for t in self.scan_starts() {
            let scan = simulate_scan(&self.scene, &self.trajectory, &self.t_il, &self.lidar, t, seed);
            truth.push((scan.end_time, self.trajectory.at(scan.end_time).pose));
            scans.push(scan);
        }
        Dataset { scans, imu, truth, config: self.config.clone() }
    }
}

/// Writes `scans/NNNNNN.pgls`, `imu.csv`, `groundtruth.tum` and `config.txt`.
pub fn write_dataset(dataset: &Dataset, out_dir: &Path) -> Result<()> {
    let scans = out_dir.join("scans");
    std::fs::create_dir_all(&scans).map_err(|e| Error::io(&scans, e))?;
    for (i, scan) in dataset.scans.iter().enumerate() {
        write_scan(scans.join(format!("{i:06}.pgls")), scan)?;
    }
    write_imu(out_dir.join("imu.csv"), &dataset.imu)?;
    write_trajectory(out_dir.join("groundtruth.tum"), &dataset.truth)?;
    let cfg_path = out_dir.join("config.txt");
    std::fs::write(&cfg_path, dataset.config.clone().to_text()).map_err(|e| Error::io(&cfg_path, e))
}

pub fn generate_dataset(name: &str, seed: u64, out_dir: &Path) -> Result<Dataset> {
    let dataset = scenario(name)?.simulate(seed);
    write_dataset(&dataset, out_dir)?;
    Ok(dataset)
}
