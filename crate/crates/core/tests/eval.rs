use nalgebra::Vector3;
use pglio::error::Error;
use pglio::eval::*;
use pglio::geometry::{Pose, Rotation};

fn straight(n: usize, length: f64, drift: f64) -> (Vec<(f64, Pose)>, Vec<(f64, Pose)>) {
    let mut gt = Vec::new();
    let mut est = Vec::new();
    for k in 0..=n {
        let s = k as f64 / n as f64;
        let t = k as f64 * 0.1;
        gt.push((t, Pose::from_translation(Vector3::new(length * s, 0.0, 0.0))));
        est.push((t + 0.003, Pose::from_translation(Vector3::new((length + drift) * s, 0.0, 0.0))));
    }
    (est, gt)
}

#[test]
fn identical_trajectories_have_zero_error() {
    let (_, gt) = straight(100, 50.0, 0.0);
    let m = evaluate(&gt, &gt, 10.0).unwrap();
    assert!(m.ate_rmse_m < 1e-12);
    assert!(m.re_percent.unwrap() < 1e-12);
}

#[test]
fn rigid_offset_vanishes_after_alignment() {
    let mut gt = Vec::new();
    for k in 0..200 {
        let t = k as f64 * 0.1;
        let r = Rotation::from_rpy(0.1 * t.sin(), 0.05 * t, 0.3 * t);
        gt.push((t, Pose::new(r, Vector3::new(3.0 * t.cos(), 2.0 * (2.0 * t).sin(), 0.1 * t))));
    }
    let offset = Pose::new(Rotation::from_rpy(0.3, -0.2, 1.1), Vector3::new(5.0, -2.0, 0.7));
    let est: Vec<_> = gt.iter().map(|(t, p)| (*t, offset.compose(p))).collect();
    let m = evaluate(&est, &gt, 10.0).unwrap();
    assert!(m.ate_rmse_m < 1e-9, "{}", m.ate_rmse_m);
    assert!(m.re_percent.unwrap() < 1e-9);
}

#[test]
fn linear_drift_gives_one_percent() {
    let (est, gt) = straight(1000, 100.0, 1.0);
    let m = evaluate(&est, &gt, 10.0).unwrap();
    assert!((m.re_percent.unwrap() - 1.0).abs() < 0.1, "{:?}", m.re_percent);
    assert!((m.path_length_m - 100.0).abs() < 1e-9);
}

#[test]
fn unmatched_stamp_is_rejected() {
    let (mut est, gt) = straight(10, 10.0, 0.0);
    est.push((50.0, Pose::identity()));
    assert!(matches!(evaluate(&est, &gt, 10.0), Err(Error::Association(_))));
}

#[test]
fn umeyama_recovers_transform() {
    let t = Pose::new(Rotation::from_rpy(0.4, 0.1, -2.0), Vector3::new(1.0, 2.0, 3.0));
    let src: Vec<_> = (0..20).map(|k| Vector3::new(k as f64, (k * k) as f64 * 0.1, (k as f64).sin())).collect();
    let dst: Vec<_> = src.iter().map(|p| t.transform_point(p)).collect();
    let est = umeyama(&src, &dst);
    assert!((est.translation - t.translation).norm() < 1e-9);
    assert!((est.rotation.0 - t.rotation.0).norm() < 1e-9);
}
