//! Static initialization, zero-order-hold IMU propagation and on-manifold
//! preintegration with the gravity direction as an estimated variable.
//!
//! `GravityDir` points along the gravity vector, so a level IMU at rest has
//! `g_hat = (0, 0, -1)` and measures a specific force of `(0, 0, +g)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    exp_so3, log_so3, right_jacobian, right_jacobian_inv, skew, GravityDir, NavState, Rotation, BA, BG, POS, ROT, VEL,
};
use crate::io::config::ImuConfig;
use crate::io::ImuSample;

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Vec9 = SVector<f64, 9>;

/// Continuous-time IMU noise densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    pub gyro_noise: f64,
    pub accel_noise: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
}

impl ImuNoise {
    pub fn new(gyro_noise: f64, accel_noise: f64, gyro_walk: f64, accel_walk: f64) -> Result<Self> {
        let n = Self { gyro_noise, accel_noise, gyro_walk, accel_walk };
        if [gyro_noise, accel_noise, gyro_walk, accel_walk].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(n)
        } else {
            Err(Error::Validation(format!("IMU noise densities must be positive: {n:?}")))
        }
    }
}

impl From<&ImuConfig> for ImuNoise {
    fn from(c: &ImuConfig) -> Self {
        Self { gyro_noise: c.gyro_noise, accel_noise: c.accel_noise, gyro_walk: c.gyro_walk, accel_walk: c.accel_walk }
    }
}

/// Bias and gravity direction from an initial static period.
///
/// The returned state sits at the end of the static window with identity
/// pose (`W = I_0`) and zero velocity.
pub fn initialize_static(
    samples: &[ImuSample],
    duration: f64,
    gravity: f64,
    max_gyro_std: f64,
) -> Result<(NavState, GravityDir)> {
    let first = samples.first().ok_or(Error::InsufficientSamples { needed: duration, got: 0.0 })?;
    let t0 = first.stamp;
    let window: Vec<&ImuSample> = samples.iter().filter(|s| s.stamp < t0 + duration - 1e-9).collect();
    let n = window.len();
    let covered = if n >= 2 { (window[n - 1].stamp - t0) * n as f64 / (n - 1) as f64 } else { 0.0 };
    if n < 2 || covered < duration - 1e-9 || samples.len() <= n && covered < duration {
        return Err(Error::InsufficientSamples { needed: duration, got: covered });
    }
    let nf = n as f64;
    let mean_gyro = window.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / nf;
    let mean_accel = window.iter().map(|s| s.accel).sum::<Vector3<f64>>() / nf;
    let var = window.iter().map(|s| (s.gyro - mean_gyro).norm_squared()).sum::<f64>() / nf;
    let std = var.sqrt();
    if std > max_gyro_std {
        return Err(Error::NotStatic { std, limit: max_gyro_std });
    }
    // At rest the accelerometer reads -g * g_hat.
    let g_hat = GravityDir::new(-mean_accel);
    let mut state = NavState::at_rest(t0 + duration);
    state.gyro_bias = mean_gyro;
    state.accel_bias = mean_accel + gravity * g_hat.vector();
    Ok((state, g_hat))
}

/// One zero-order-hold step of the mean IMU kinematics.
pub fn propagate(x: &NavState, g_hat: &GravityDir, s: &ImuSample, dt: f64, gravity: f64) -> NavState {
    let r = x.pose.rotation;
    let acc = r.rotate(&(s.accel - x.accel_bias));
    let gv = gravity * g_hat.vector();
    let mut out = *x;
    out.pose.rotation = r.compose(&exp_so3(&((s.gyro - x.gyro_bias) * dt)));
    out.velocity = x.velocity + gv * dt + acc * dt;
    out.pose.translation = x.pose.translation + x.velocity * dt + 0.5 * gv * dt * dt + 0.5 * acc * dt * dt;
    out.stamp = x.stamp + dt;
    out
}

/// Index of the sample active at time `t` (last stamp <= t).
fn active_index(samples: &[ImuSample], t: f64) -> Option<usize> {
    match samples.partition_point(|s| s.stamp <= t) {
        0 => None,
        k => Some(k - 1),
    }
}

/// Propagates `x0` through the samples and reports the state at each query.
///
/// Queries must lie in `[x0.stamp, last sample stamp]`. Each sample is held
/// constant until the next one; a query inside a sample interval takes a
/// partial step from the interval start, so results do not depend on which
/// other queries were requested.
pub fn propagate_sequence(
    x0: &NavState,
    g_hat: &GravityDir,
    samples: &[ImuSample],
    query_times: &[f64],
    gravity: f64,
) -> Result<Vec<NavState>> {
    let (start, end) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.stamp, b.stamp),
        _ => return Err(Error::EmptySamples),
    };
    let mut order: Vec<usize> = (0..query_times.len()).collect();
    order.sort_by(|&a, &b| query_times[a].total_cmp(&query_times[b]));
    let mut out = vec![*x0; query_times.len()];
    let mut x = *x0;
    let mut k = active_index(samples, x.stamp).ok_or(Error::Extrapolation { t: x.stamp, start, end })?;
    for idx in order {
        let q = query_times[idx];
        if q < x0.stamp || q > end || !q.is_finite() {
            return Err(Error::Extrapolation { t: q, start: x0.stamp.max(start), end });
        }
        while k + 1 < samples.len() && samples[k + 1].stamp <= q {
            let dt = samples[k + 1].stamp - x.stamp;
            if dt > 0.0 {
                x = propagate(&x, g_hat, &samples[k], dt, gravity);
            }
            x.stamp = samples[k + 1].stamp;
            k += 1;
        }
        let dt = q - x.stamp;
        out[idx] = if dt > 0.0 {
            let mut y = propagate(&x, g_hat, &samples[k], dt, gravity);
            y.stamp = q;
            y
        } else {
            x
        };
    }
    Ok(out)
}

/// Splits the sample stream into `(sample, dt)` pieces covering `[t0, t1]`.
pub fn imu_segments(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<(ImuSample, f64)>> {
    let (start, end) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.stamp, b.stamp),
        _ => return Err(Error::EmptySamples),
    };
    if t0 < start || t1 > end || t1 < t0 {
        return Err(Error::Extrapolation { t: if t0 < start { t0 } else { t1 }, start, end });
    }
    let mut k = active_index(samples, t0).unwrap();
    let mut t = t0;
    let mut out = Vec::new();
    while t < t1 {
        let next = if k + 1 < samples.len() { samples[k + 1].stamp.min(t1) } else { t1 };
        if next > t {
            out.push((samples[k], next - t));
        }
        t = next;
        k += 1;
        if k >= samples.len() {
            break;
        }
    }
    Ok(out)
}

/// IMU measurements compounded between two states.
///
/// Rotation, velocity and position increments are expressed in the body
/// frame of the first state and exclude gravity. Covariance is over
/// `(dtheta, dv, dp)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Preintegrated {
    pub dt: f64,
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub lin_accel_bias: Vector3<f64>,
    pub lin_gyro_bias: Vector3<f64>,
    pub dr_dbg: Matrix3<f64>,
    pub dv_dba: Matrix3<f64>,
    pub dv_dbg: Matrix3<f64>,
    pub dp_dba: Matrix3<f64>,
    pub dp_dbg: Matrix3<f64>,
    pub covariance: Mat9,
    pub noise: ImuNoise,
}

pub fn preintegrate(
    segments: &[(ImuSample, f64)],
    accel_bias: &Vector3<f64>,
    gyro_bias: &Vector3<f64>,
    noise: &ImuNoise,
) -> Result<Preintegrated> {
    if segments.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut p = Preintegrated {
        dt: 0.0,
        delta_r: Rotation::identity(),
        delta_v: Vector3::zeros(),
        delta_p: Vector3::zeros(),
        lin_accel_bias: *accel_bias,
        lin_gyro_bias: *gyro_bias,
        dr_dbg: Matrix3::zeros(),
        dv_dba: Matrix3::zeros(),
        dv_dbg: Matrix3::zeros(),
        dp_dba: Matrix3::zeros(),
        dp_dbg: Matrix3::zeros(),
        covariance: Mat9::zeros(),
        noise: *noise,
    };
    let i3 = Matrix3::identity();
    for (s, dt) in segments {
        let dt = *dt;
        let w = s.gyro - gyro_bias;
        let a = s.accel - accel_bias;
        let dr = exp_so3(&(w * dt));
        let jr = right_jacobian(&(w * dt));
        let rk = *p.delta_r.matrix();
        let ax = skew(&a);

        // (dtheta, dv, dp) error-state transition
        let mut trans = Mat9::identity();
        trans.fixed_view_mut::<3, 3>(0, 0).copy_from(&dr.0.transpose());
        trans.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rk * ax * dt));
        trans.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * rk * ax * dt * dt));
        trans.fixed_view_mut::<3, 3>(6, 3).copy_from(&(i3 * dt));
        let mut bg = SMatrix::<f64, 9, 3>::zeros();
        bg.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let mut ba = SMatrix::<f64, 9, 3>::zeros();
        ba.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rk * dt));
        ba.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * rk * dt * dt));
        let qg = noise.gyro_noise * noise.gyro_noise / dt;
        let qa = noise.accel_noise * noise.accel_noise / dt;
        p.covariance = trans * p.covariance * trans.transpose() + bg * bg.transpose() * qg + ba * ba.transpose() * qa;

        p.dp_dba += p.dv_dba * dt - 0.5 * rk * dt * dt;
        p.dp_dbg += p.dv_dbg * dt - 0.5 * rk * ax * p.dr_dbg * dt * dt;
        p.dv_dba -= rk * dt;
        p.dv_dbg -= rk * ax * p.dr_dbg * dt;
        p.dr_dbg = dr.0.transpose() * p.dr_dbg - jr * dt;

        p.delta_p += p.delta_v * dt + 0.5 * rk * a * dt * dt;
        p.delta_v += rk * a * dt;
        p.delta_r = p.delta_r.compose(&dr);
        p.dt += dt;
    }
    p.covariance = 0.5 * (p.covariance + p.covariance.transpose());
    Ok(p)
}

/// Preintegration residual and its Jacobians.
///
/// Residual order `(r_R, r_v, r_p)`; state Jacobians follow the tangent
/// ordering of [`NavState::retract`].
#[derive(Clone, Debug)]
pub struct ImuResidual {
    pub residual: Vec9,
    pub d_xi: SMatrix<f64, 9, 15>,
    pub d_xj: SMatrix<f64, 9, 15>,
    pub d_g: SMatrix<f64, 9, 2>,
}

impl Preintegrated {
    /// Lower-triangular `L^-1` with `covariance = L L^T`.
    pub fn sqrt_information(&self) -> Mat9 {
        sqrt_information(&self.covariance)
    }

    /// Increments corrected to first order for the biases of `xi`.
    pub fn corrected(
        &self,
        accel_bias: &Vector3<f64>,
        gyro_bias: &Vector3<f64>,
    ) -> (Rotation, Vector3<f64>, Vector3<f64>) {
        let dba = accel_bias - self.lin_accel_bias;
        let dbg = gyro_bias - self.lin_gyro_bias;
        (
            self.delta_r.compose(&exp_so3(&(self.dr_dbg * dbg))),
            self.delta_v + self.dv_dba * dba + self.dv_dbg * dbg,
            self.delta_p + self.dp_dba * dba + self.dp_dbg * dbg,
        )
    }

    /// Unwhitened residual with analytic Jacobians.
    pub fn evaluate(&self, xi: &NavState, xj: &NavState, g_hat: &GravityDir, gravity: f64) -> ImuResidual {
        let dt = self.dt;
        let ri = xi.pose.rotation.0;
        let rj = xj.pose.rotation.0;
        let rit = ri.transpose();
        let gv = gravity * g_hat.vector();
        let dbg = xi.gyro_bias - self.lin_gyro_bias;
        let (dr_c, dv_c, dp_c) = self.corrected(&xi.accel_bias, &xi.gyro_bias);

        let err_r = Rotation(dr_c.0.transpose() * rit * rj);
        let r_r = log_so3(&err_r);
        let dv_world = xj.velocity - xi.velocity - gv * dt;
        let dp_world = xj.pose.translation - xi.pose.translation - xi.velocity * dt - 0.5 * gv * dt * dt;
        let r_v = rit * dv_world - dv_c;
        let r_p = rit * dp_world - dp_c;

        let jr_inv = right_jacobian_inv(&r_r);
        let mut d_xi = SMatrix::<f64, 9, 15>::zeros();
        let mut d_xj = SMatrix::<f64, 9, 15>::zeros();
        // rotation rows
        d_xi.fixed_view_mut::<3, 3>(0, ROT).copy_from(&(-jr_inv * rj.transpose() * ri));
        d_xi.fixed_view_mut::<3, 3>(0, BG)
            .copy_from(&(-jr_inv * err_r.0.transpose() * right_jacobian(&(self.dr_dbg * dbg)) * self.dr_dbg));
        d_xj.fixed_view_mut::<3, 3>(0, ROT).copy_from(&jr_inv);
        // velocity rows
        d_xi.fixed_view_mut::<3, 3>(3, ROT).copy_from(&skew(&(rit * dv_world)));
        d_xi.fixed_view_mut::<3, 3>(3, VEL).copy_from(&(-rit));
        d_xi.fixed_view_mut::<3, 3>(3, BA).copy_from(&(-self.dv_dba));
        d_xi.fixed_view_mut::<3, 3>(3, BG).copy_from(&(-self.dv_dbg));
        d_xj.fixed_view_mut::<3, 3>(3, VEL).copy_from(&rit);
        // position rows
        d_xi.fixed_view_mut::<3, 3>(6, ROT).copy_from(&skew(&(rit * dp_world)));
        d_xi.fixed_view_mut::<3, 3>(6, POS).copy_from(&(-Matrix3::identity()));
        d_xi.fixed_view_mut::<3, 3>(6, VEL).copy_from(&(-rit * dt));
        d_xi.fixed_view_mut::<3, 3>(6, BA).copy_from(&(-self.dp_dba));
        d_xi.fixed_view_mut::<3, 3>(6, BG).copy_from(&(-self.dp_dbg));
        d_xj.fixed_view_mut::<3, 3>(6, POS).copy_from(&(rit * rj));
        // gravity direction
        let dg = g_hat.jacobian() * gravity;
        let mut d_g = SMatrix::<f64, 9, 2>::zeros();
        d_g.fixed_view_mut::<3, 2>(3, 0).copy_from(&(-rit * dg * dt));
        d_g.fixed_view_mut::<3, 2>(6, 0).copy_from(&(-0.5 * rit * dg * dt * dt));

        let mut residual = Vec9::zeros();
        residual.fixed_rows_mut::<3>(0).copy_from(&r_r);
        residual.fixed_rows_mut::<3>(3).copy_from(&r_v);
        residual.fixed_rows_mut::<3>(6).copy_from(&r_p);
        ImuResidual { residual, d_xi, d_xj, d_g }
    }
}

/// Whitened preintegration residual (the factor's contribution).
pub fn preintegration_residual(
    xi: &NavState,
    xj: &NavState,
    g_hat: &GravityDir,
    pre: &Preintegrated,
    gravity: f64,
) -> ImuResidual {
    let raw = pre.evaluate(xi, xj, g_hat, gravity);
    let w = pre.sqrt_information();
    ImuResidual { residual: w * raw.residual, d_xi: w * raw.d_xi, d_xj: w * raw.d_xj, d_g: w * raw.d_g }
}

/// Whitened bias random-walk residual `(b_a,j - b_a,i, b_g,j - b_g,i)`.
pub fn bias_walk_residual(
    xi: &NavState,
    xj: &NavState,
    dt: f64,
    noise: &ImuNoise,
) -> (SVector<f64, 6>, SMatrix<f64, 6, 15>, SMatrix<f64, 6, 15>) {
    let sa = 1.0 / (noise.accel_walk * dt.sqrt());
    let sg = 1.0 / (noise.gyro_walk * dt.sqrt());
    let mut r = SVector::<f64, 6>::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&((xj.accel_bias - xi.accel_bias) * sa));
    r.fixed_rows_mut::<3>(3).copy_from(&((xj.gyro_bias - xi.gyro_bias) * sg));
    let mut ji = SMatrix::<f64, 6, 15>::zeros();
    let mut jj = SMatrix::<f64, 6, 15>::zeros();
    for k in 0..3 {
        ji[(k, BA + k)] = -sa;
        jj[(k, BA + k)] = sa;
        ji[(3 + k, BG + k)] = -sg;
        jj[(3 + k, BG + k)] = sg;
    }
    (r, ji, jj)
}

/// `L^-1` for a symmetric positive (semi)definite covariance, with a small
/// diagonal floor so near-singular blocks stay invertible.
pub fn sqrt_information(cov: &Mat9) -> Mat9 {
    let floor = 1e-14 * cov.diagonal().amax().max(1e-30);
    let mut c = *cov;
    for k in 0..9 {
        c[(k, k)] += floor;
    }
    let chol = c.cholesky().expect("preintegration covariance is positive definite after flooring");
    let l = chol.l();
    l.try_inverse().expect("triangular factor is invertible")
}
