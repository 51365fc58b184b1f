use approx::assert_relative_eq;
use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use pglio::geometry::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn series_exp(omega: &Vector3<f64>, terms: usize) -> Matrix3<f64> {
    let k = skew(omega);
    let mut acc = Matrix3::identity();
    let mut term = Matrix3::identity();
    for n in 1..terms {
        term = term * k / n as f64;
        acc += term;
    }
    acc
}

#[test]
fn exp_identity_and_quarter_turn() {
    assert_eq!(exp_so3(&Vector3::zeros()).0, Matrix3::identity());
    let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
    assert_relative_eq!(r.rotate(&Vector3::x()), Vector3::y(), epsilon = 1e-15);
}

#[test]
fn exp_tiny_angle_matches_series() {
    let w = Vector3::new(1e-10, 0.0, 0.0);
    let diff = exp_so3(&w).0 - series_exp(&w, 10);
    assert!(diff.amax() < 1e-15);
}

#[test]
fn exp_switch_point_branches_agree() {
    let w = Vector3::new(0.6, -0.3, 0.74).normalize() * SMALL_ANGLE;
    let rod = {
        let theta = w.norm();
        let k = skew(&w);
        Matrix3::identity() + theta.sin() / theta * k + (1.0 - theta.cos()) / (theta * theta) * k * k
    };
    assert!((exp_so3(&(w * 0.999)).0 - series_exp(&(w * 0.999), 10)).amax() < 1e-15);
    assert!((rod - series_exp(&w, 10)).amax() < 1e-15);
}

#[test]
fn log_round_trip_and_identity() {
    assert_eq!(log_so3(&Rotation::identity()), Vector3::zeros());
    let w = Vector3::new(0.1, 0.2, 0.3);
    assert_relative_eq!(log_so3(&exp_so3(&w)), w, epsilon = 1e-12);
}

#[test]
fn log_near_pi_uses_axis_branch() {
    let angle = PI - 1e-7;
    // quaternion oracle
    let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle);
    let r = Rotation::from_quaternion(&q);
    let w = log_so3(&r);
    assert!(w.iter().all(|x| x.is_finite()));
    assert_relative_eq!(w.norm(), angle, epsilon = 1e-6);
    assert_relative_eq!(w.x.abs() / w.norm(), 1.0, epsilon = 1e-9);
    // exactly pi
    let w = log_so3(&Rotation(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))));
    assert_relative_eq!(w.norm(), PI, epsilon = 1e-12);
}

#[test]
fn skew_is_cross_product() {
    assert_eq!(skew(&Vector3::x()) * Vector3::y(), Vector3::z());
    let v = Vector3::new(0.3, -1.2, 2.0);
    assert_eq!(skew(&v) * v, Vector3::zeros());
}

#[test]
fn retract_examples() {
    let x = NavState::at_rest(0.0);
    assert_eq!(x.retract(&Tangent15::zeros()), x);
    let mut d = Tangent15::zeros();
    d[POS] = 1.0;
    assert_relative_eq!(*x.retract(&d).position(), Vector3::x());
    let mut y = x;
    y.pose.rotation = Rotation::rz(PI / 2.0);
    assert_relative_eq!(*y.retract(&d).position(), Vector3::y(), epsilon = 1e-15);
}

#[test]
fn gravity_quarter_turn_is_orthogonal() {
    let g = GravityDir::new(Vector3::z());
    assert_eq!(g.retract(&Vector2::zeros()), g);
    let out = g.retract(&(Vector2::new(0.6, 0.8) * (PI / 2.0)));
    assert!(out.vector().dot(&Vector3::z()).abs() < 1e-12);
}

#[test]
fn gravity_basis_is_orthonormal_tangent() {
    for g in [Vector3::z(), -Vector3::z(), Vector3::new(0.3, -0.2, 0.1), Vector3::new(1.0, 0.0, 0.0)] {
        let g = GravityDir::new(g);
        let b = g.basis();
        assert_relative_eq!(b.transpose() * b, nalgebra::Matrix2::identity(), epsilon = 1e-14);
        assert!((b.transpose() * g.vector()).amax() < 1e-14);
    }
}

#[test]
fn gravity_retract_unit_norm_random() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let g = GravityDir::new(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let d = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        assert!((g.retract(&d).vector().norm() - 1.0).abs() < 1e-12);
    }
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(), vec3()).prop_map(|(w, t)| Pose::new(exp_so3(&(w * 3.0)), t * 10.0))
}

fn state() -> impl Strategy<Value = NavState> {
    (pose(), vec3(), vec3(), vec3()).prop_map(|(pose, v, ba, bg)| NavState {
        pose,
        velocity: v * 5.0,
        accel_bias: ba * 0.1,
        gyro_bias: bg * 0.01,
        stamp: 1.0,
    })
}

proptest! {
    #[test]
    fn state_local_inverts_retract(x in state(), d in proptest::collection::vec(-1.0..1.0f64, 15)) {
        let d = Tangent15::from_iterator(d.into_iter()) * (0.1 / 15f64.sqrt());
        let back = x.local(&x.retract(&d));
        prop_assert!((back - d).amax() < 1e-9);
    }

    #[test]
    fn gravity_local_inverts_retract(g in vec3(), d in (-0.07..0.07f64, -0.07..0.07f64)) {
        prop_assume!(g.norm() > 1e-3);
        let g = GravityDir::new(g);
        let d = Vector2::new(d.0, d.1);
        prop_assert!((g.local(&g.retract(&d)) - d).amax() < 1e-9);
    }

    #[test]
    fn exp_log_round_trip(w in vec3(), scale in 0.0..(PI - 1e-6)) {
        prop_assume!(w.norm() > 1e-6);
        let w = w.normalize() * scale;
        let r = exp_so3(&w);
        prop_assert!((exp_so3(&log_so3(&r)).0 - r.0).amax() < 1e-9);
        prop_assert!((r.0 * r.0.transpose() - Matrix3::identity()).amax() < 1e-9);
        prop_assert!((r.0.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pose_group_axioms(a in pose(), b in pose(), c in pose(), p in vec3()) {
        let lhs = a.compose(&b).compose(&c);
        let rhs = a.compose(&b.compose(&c));
        prop_assert!((lhs.rotation.0 - rhs.rotation.0).amax() < 1e-9);
        prop_assert!((lhs.translation - rhs.translation).amax() < 1e-9);
        let id = a.compose(&a.inverse());
        prop_assert!((id.rotation.0 - Matrix3::identity()).amax() < 1e-9);
        prop_assert!(id.translation.amax() < 1e-9);
        let q = a.inverse().transform_point(&a.transform_point(&p));
        prop_assert!((q - p).amax() < 1e-9);
    }

    #[test]
    fn skew_matches_cross(v in vec3(), w in vec3()) {
        prop_assert!((skew(&v) * w - v.cross(&w)).amax() < 1e-15);
    }
}
