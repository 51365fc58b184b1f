use nalgebra::Vector3;
use pglio::geometry::Pose;
use pglio::pipeline::*;
use pglio::simulator::scenario;

#[test]
fn stationary_drift_below_millimeter() {
    let mut s = scenario("room-slow").unwrap();
    s.trajectory =
        pglio::simulator::TrajectoryModel::Static { pose: Pose::from_translation(Vector3::new(-0.5, 0.2, 0.1)) };
    s.duration = 2.0;
    s.lidar.range_noise = 0.0;
    let ds = s.simulate(4);
    let mut p = Pipeline::new(ds.config.clone()).unwrap();
    p.push_imu(&ds.imu).unwrap();
    let mut poses = Vec::new();
    for scan in &ds.scans {
        if let Some(out) = p.process_scan(scan).unwrap() {
            poses.push(out.pose);
        }
    }
    assert!(poses.len() >= 10, "{} scans processed", poses.len());
    let first = poses[0];
    for q in &poses[..10] {
        assert!(
            (q.translation - first.translation).norm() < 1e-3,
            "drift {}",
            (q.translation - first.translation).norm()
        );
    }
}

#[test]
fn scans_before_initialization_are_skipped() {
    let s = scenario("room-slow").unwrap();
    let mut short = s.clone();
    short.duration = 1.0;
    let ds = short.simulate(1);
    let mut p = Pipeline::new(ds.config.clone()).unwrap();
    p.push_imu(&ds.imu).unwrap();
    let mut kept = 0;
    for scan in &ds.scans {
        let out = p.process_scan(scan).unwrap();
        assert_eq!(out.is_some(), scan.start_time >= 0.5);
        kept += out.is_some() as usize;
    }
    assert!(kept > 0);
    assert!(p.window().unwrap().len() >= 2);
}
