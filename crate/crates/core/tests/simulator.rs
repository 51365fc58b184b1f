use nalgebra::Vector3;
use pglio::error::Error;
use pglio::geometry::{GravityDir, NavState, Pose, Rotation};
use pglio::inertial::{initialize_static, propagate};
use pglio::io::BeamIntrinsics;
use pglio::simulator::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn noise_free_lidar(az: f64, n: f64) -> LidarSim {
    LidarSim {
        intrinsics: BeamIntrinsics::uniform(
            32,
            512,
            PI / 2.0,
            n,
            (0..32).map(|i| if i % 2 == 0 { az } else { -az }).collect(),
        ),
        range_noise: 0.0,
        intensity_noise: 0.0,
        ..LidarSim::default()
    }
}

#[test]
fn cylinder_ranges_closed_form() {
    let scene = SceneModel::tunnel(4.0, None, Texture::Plain { albedo: 0.5 });
    // sensor z along the tunnel axis
    let pose = Pose::new(Rotation::from_rpy(0.0, PI / 2.0, 0.0), Vector3::zeros());
    let traj = TrajectoryModel::Static { pose };
    let lidar = noise_free_lidar(0.0, 0.0);
    let scan = simulate_scan(&scene, &traj, &Pose::identity(), &lidar, 0.0, 1);
    for r in 0..32 {
        let expected = 4.0 / lidar.intrinsics.elevation[r].cos();
        for c in 0..512 {
            assert!((scan.range_at(r, c) - expected).abs() < 1e-5 * expected, "{} vs {expected}", scan.range_at(r, c));
        }
    }
}

#[test]
fn ray_cast_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tunnel = SceneModel::tunnel(4.0, Some(-1.5), Texture::Plain { albedo: 0.5 });
    let room = room_scene();
    for _ in 0..1000 {
        let o = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalize();
        let h = tunnel.cast(&o, &d).unwrap();
        let p = o + d * h.range;
        match h.surface {
            Surface::Wall => {
                assert!(((p.y * p.y + p.z * p.z).sqrt() - 4.0).abs() < 1e-9);
                assert!(p.z >= -1.5 - 1e-9);
            }
            _ => assert!((p.z + 1.5).abs() < 1e-9 && p.y.hypot(p.z) <= 4.0 + 1e-9),
        }
        let o = Vector3::new(rng.random_range(-4.0..3.0), rng.random_range(-2.5..2.5), rng.random_range(-1.0..2.0));
        let h = room.cast(&o, &d).unwrap();
        let p = o + d * h.range;
        let Geometry::Room { min, max } = &room.geometry else { unreachable!() };
        let on_face = (0..3).any(|k| (p[k] - min[k]).abs() < 1e-9 || (p[k] - max[k]).abs() < 1e-9);
        let inside = (0..3).all(|k| p[k] >= min[k] - 1e-9 && p[k] <= max[k] + 1e-9);
        assert!(on_face && inside);
    }
}

#[test]
fn same_seed_bit_identical() {
    let s = scenario("tunnel-textured").unwrap();
    let a = simulate_scan(&s.scene, &s.trajectory, &s.t_il, &s.lidar, 2.0, 42);
    let b = simulate_scan(&s.scene, &s.trajectory, &s.t_il, &s.lidar, 2.0, 42);
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = simulate_scan(&s.scene, &s.trajectory, &s.t_il, &s.lidar, 2.0, 43);
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn bias_lut_matches_analytic_curve() {
    let scene = SceneModel::tunnel(4.0, Some(-1.5), Texture::Plain { albedo: 0.5 });
    let traj = TrajectoryModel::Static { pose: Pose::identity() };
    let lidar = noise_free_lidar(11f64.to_radians(), 0.02767);
    let scan = simulate_scan(&scene, &traj, &Pose::identity(), &lidar, 0.0, 1);
    let lut = pglio::photometric::build_bias_lut(&scan);
    for r in 0..32 {
        for c in 0..512 {
            if scan.is_valid(r, c) {
                let ic = scan.intrinsics.image_column(r, c);
                let b = pglio::photometric::image_bias(&scan.intrinsics, r, ic, scan.range_at(r, c));
                assert!((lut.bias[r * 512 + ic] - b).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn static_imu_reads_gravity() {
    let pose = Pose::new(Rotation::from_rpy(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
    let traj = TrajectoryModel::Static { pose };
    let imu = simulate_imu(&traj, &ImuSim::noise_free(), 1.0, 0);
    let expected = pose.rotation.inverse().rotate(&Vector3::new(0.0, 0.0, 9.81));
    for s in &imu {
        assert!(s.gyro.norm() < 1e-15);
        assert!((s.accel - expected).norm() < 1e-12);
    }
}

#[test]
fn propagation_reproduces_trajectory() {
    let s = scenario("room-dynamic").unwrap();
    let imu_cfg = ImuSim { rate: 400.0, ..ImuSim::noise_free() };
    let imu = simulate_imu(&s.trajectory, &imu_cfg, 10.0, 0);
    let k0 = s.trajectory.at(0.0);
    let mut x = NavState { pose: k0.pose, velocity: k0.velocity, ..NavState::at_rest(0.0) };
    let g = GravityDir::down();
    for smp in &imu[..imu.len() - 1] {
        x = propagate(&x, &g, smp, 1.0 / 400.0, 9.81);
    }
    let truth = s.trajectory.at(10.0);
    assert!(
        (x.pose.translation - truth.pose.translation).norm() < 1e-5,
        "{}",
        (x.pose.translation - truth.pose.translation).norm()
    );
    assert!(x.pose.rotation.angle_to(&truth.pose.rotation) < 1e-9);
}

#[test]
fn static_init_recovers_injected_biases() {
    let s = scenario("room-dynamic").unwrap();
    let imu = simulate_imu(&s.trajectory, &s.imu, 1.0, 7);
    let (x, g) = initialize_static(&imu, 0.5, 9.81, 0.05).unwrap();
    let n = 100f64;
    let tol = 3.0 * s.imu.gyro_noise * s.imu.rate.sqrt() / n.sqrt();
    assert!((x.gyro_bias - s.imu.gyro_bias).amax() < tol);
    // the accelerometer bias splits into a gravity tilt and the part along gravity
    let along = s.imu.accel_bias.dot(g.vector());
    assert!((x.accel_bias.dot(g.vector()) - along).abs() < 3.0 * s.imu.accel_noise * s.imu.rate.sqrt() / n.sqrt());
}

#[test]
fn transit_profile() {
    let tt = tunnel_transit(100.0, 10.8, 4.0);
    let traj = TrajectoryModel::TunnelTransit(tt.clone());
    assert!((traj.at(tt.end() + 0.5).pose.translation.x - 100.0).abs() < 1e-9);
    let vmax = (0..2000).map(|k| traj.at(k as f64 * 0.01).velocity.x).fold(0.0, f64::max);
    assert!((vmax - 10.8).abs() < 1e-9);
    // velocity is the derivative of position
    for k in 1..200 {
        let t = k as f64 * 0.09;
        let fd = (traj.at(t + 1e-6).pose.translation - traj.at(t - 1e-6).pose.translation) / 2e-6;
        assert!((fd - traj.at(t).velocity).norm() < 1e-5);
    }
    let f8 = scenario("room-dynamic").unwrap().trajectory;
    for k in 1..200 {
        let t = k as f64 * 0.3;
        let fd = (f8.at(t + 1e-6).pose.translation - f8.at(t - 1e-6).pose.translation) / 2e-6;
        assert!((fd - f8.at(t).velocity).norm() < 1e-5);
    }
}

#[test]
fn scenarios_resolve_and_write() {
    for name in SCENARIOS {
        let s = scenario(name).unwrap();
        assert!(s.duration > 5.0);
    }
    assert!(matches!(scenario("cave"), Err(Error::UnknownScenario(_))));
    let mut s = scenario("room-slow").unwrap();
    s.duration = 1.0;
    let ds = s.simulate(5);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let again = pglio::io::read_scan(dir.path().join("scans/000003.pgls")).unwrap();
    assert_eq!(again, ds.scans[3]);
    let truth = pglio::io::read_trajectory(dir.path().join("groundtruth.tum")).unwrap();
    assert_eq!(truth.len(), ds.scans.len());
    for ((t, _), scan) in truth.iter().zip(&ds.scans) {
        assert!((t - scan.end_time).abs() < 1e-9);
    }
    let cfg = pglio::io::read_config(dir.path().join("config.txt")).unwrap();
    assert_eq!(cfg.extrinsic.pose().translation, default_extrinsic().translation);
}
