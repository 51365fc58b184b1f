//! Lie-group primitives and the state conventions shared by every factor.
//!
//! Perturbations are applied on the right for rotation and in the body frame
//! for translation:
//!
//! ```text
//! R <- R * Exp(dtheta)    p <- p + R * dp    v <- v + dv    b <- b + db
//! ```
//!
//! The 15-dimensional state tangent is ordered `(dtheta, dp, dv, dba, dbg)`.

use nalgebra::{Matrix3, Matrix3x2, SVector, Unit, UnitQuaternion, Vector2, Vector3};

/// Below this angle `exp_so3`/`log_so3` switch to their Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Distance from pi under which the log map extracts the axis from `R + R^T`.
const NEAR_PI: f64 = 1e-6;

pub type Tangent15 = SVector<f64, 15>;

pub const ROT: usize = 0;
pub const POS: usize = 3;
pub const VEL: usize = 6;
pub const BA: usize = 9;
pub const BG: usize = 12;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map of so(3).
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Rotation(Matrix3::identity() + k + 0.5 * k * k);
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Rotation(Matrix3::identity() + a * k + b * k * k)
}

/// Logarithm map of SO(3); total on valid rotations, including angles at pi.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = &r.0;
    let w = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = w.norm();
    let c = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta < NEAR_PI {
        // R + R^T = 2c I + 2(1 - c) a a^T
        let sym = (m + m.transpose() - 2.0 * c * Matrix3::identity()) / (2.0 * (1.0 - c));
        let (mut best, mut diag) = (0, sym[(0, 0)]);
        for i in 1..3 {
            if sym[(i, i)] > diag {
                best = i;
                diag = sym[(i, i)];
            }
        }
        let mut axis: Vector3<f64> = sym.column(best).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / s)
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < 1e-10 {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - (1.0 - theta.cos()) / theta2 * k + (theta - theta.sin()) / (theta2 * theta) * k * k
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() + 0.5 * k + (1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())) * k * k
}

/// An element of SO(3) stored as an orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(pub Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self(*UnitQuaternion::from_euler_angles(roll, pitch, yaw).to_rotation_matrix().matrix())
    }

    pub fn rz(angle: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, angle))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(*q.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        UnitQuaternion::from_rotation_matrix(&rot)
    }

    /// (roll, pitch, yaw) in radians, ZYX convention.
    pub fn rpy(&self) -> (f64, f64, f64) {
        nalgebra::Rotation3::from_matrix_unchecked(self.0).euler_angles()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Projects back onto SO(3) to undo accumulated round-off.
    pub fn normalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Self(r)
    }

    pub fn angle_to(&self, other: &Rotation) -> f64 {
        log_so3(&self.inverse().compose(other)).norm()
    }
}

/// Rigid transform `T_AB`, mapping points from frame B to frame A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.rotation.compose(&other.rotation), self.rotation.rotate(&other.translation) + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose::new(rt, -rt.rotate(&self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Right perturbation with a body-frame translation increment.
    pub fn retract(&self, dtheta: &Vector3<f64>, dp: &Vector3<f64>) -> Pose {
        Pose::new(self.rotation.compose(&exp_so3(dtheta)), self.translation + self.rotation.rotate(dp))
    }

    /// Inverse of [`Pose::retract`]: returns `(dtheta, dp)`.
    pub fn local(&self, other: &Pose) -> (Vector3<f64>, Vector3<f64>) {
        let rt = self.rotation.inverse();
        (log_so3(&rt.compose(&other.rotation)), rt.rotate(&(other.translation - self.translation)))
    }
}

/// Per-scan estimation variable: pose `T_WI`, world velocity and IMU biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub stamp: f64,
}

impl NavState {
    pub fn at_rest(stamp: f64) -> Self {
        Self {
            pose: Pose::identity(),
            velocity: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            stamp,
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.pose.rotation
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.pose.translation
    }

    pub fn retract(&self, delta: &Tangent15) -> NavState {
        let v3 = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
        NavState {
            pose: self.pose.retract(&v3(ROT), &v3(POS)),
            velocity: self.velocity + v3(VEL),
            accel_bias: self.accel_bias + v3(BA),
            gyro_bias: self.gyro_bias + v3(BG),
            stamp: self.stamp,
        }
    }

    pub fn local(&self, other: &NavState) -> Tangent15 {
        let (dtheta, dp) = self.pose.local(&other.pose);
        let mut out = Tangent15::zeros();
        out.fixed_rows_mut::<3>(ROT).copy_from(&dtheta);
        out.fixed_rows_mut::<3>(POS).copy_from(&dp);
        out.fixed_rows_mut::<3>(VEL).copy_from(&(other.velocity - self.velocity));
        out.fixed_rows_mut::<3>(BA).copy_from(&(other.accel_bias - self.accel_bias));
        out.fixed_rows_mut::<3>(BG).copy_from(&(other.gyro_bias - self.gyro_bias));
        out
    }

    /// Checks the bias sanity bounds and finiteness of the stamp.
    pub fn is_sane(&self, max_accel_bias: f64, max_gyro_bias: f64) -> bool {
        self.stamp.is_finite() && self.accel_bias.norm() < max_accel_bias && self.gyro_bias.norm() < max_gyro_bias
    }
}

/// Direction of gravity in the world frame; the magnitude is held separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GravityDir(Vector3<f64>);

impl GravityDir {
    pub fn new(v: Vector3<f64>) -> Self {
        Self(v / v.norm())
    }

    pub fn down() -> Self {
        Self(Vector3::new(0.0, 0.0, -1.0))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn unit(&self) -> Unit<Vector3<f64>> {
        Unit::new_unchecked(self.0)
    }

    /// Orthonormal tangent basis at this direction.
    ///
    /// The columns are the first two columns of the Householder reflection
    /// that maps a pole onto the direction. The pole farther from the
    /// direction is used so the reflection is well conditioned.
    pub fn basis(&self) -> Matrix3x2<f64> {
        let g = self.0;
        let pole = if g.z < 0.0 { Vector3::z() } else { -Vector3::z() };
        let u = pole - g;
        let h = Matrix3::identity() - 2.0 * u * u.transpose() / u.norm_squared();
        h.fixed_columns::<2>(0).into()
    }

    /// `Exp(B(g) delta) * g`, renormalized.
    pub fn retract(&self, delta: &Vector2<f64>) -> GravityDir {
        let axis = self.basis() * delta;
        let g = exp_so3(&axis).rotate(&self.0);
        GravityDir(g / g.norm())
    }

    /// Inverse of [`GravityDir::retract`] for directions less than pi apart.
    pub fn local(&self, other: &GravityDir) -> Vector2<f64> {
        let cross = self.0.cross(&other.0);
        let s = cross.norm();
        let c = self.0.dot(&other.0);
        let angle = s.atan2(c);
        if s < 1e-15 {
            return self.basis().transpose() * cross;
        }
        self.basis().transpose() * (cross * (angle / s))
    }

    /// Derivative of the unit direction with respect to the 2-dof tangent.
    pub fn jacobian(&self) -> nalgebra::Matrix3x2<f64> {
        -skew(&self.0) * self.basis()
    }

    pub fn angle_to(&self, other: &GravityDir) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}
