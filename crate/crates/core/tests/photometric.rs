use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use pglio::error::Error;
use pglio::geometric::{DeskewTable, DeskewedCloud};
use pglio::geometry::Pose;
use pglio::io::config::PhotoConfig;
use pglio::io::{BeamIntrinsics, LidarScan};
use pglio::photometric::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn cfg() -> PhotoConfig {
    PhotoConfig::default()
}

fn image_from(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> IntensityImage {
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            data.push(f(r, c));
        }
    }
    IntensityImage { rows: h, cols: w, data, mask: vec![true; h * w], depth: vec![5.0; h * w] }
}

fn const_scan(h: usize, w: usize, az: f64, n: f64, range: f32) -> LidarScan {
    LidarScan {
        intrinsics: BeamIntrinsics::uniform(
            h,
            w,
            PI / 2.0,
            n,
            (0..h).map(|i| if i % 2 == 0 { az } else { -az }).collect(),
        ),
        start_time: 0.0,
        end_time: 0.1,
        column_offsets: (0..w).map(|c| 0.1 * c as f64 / w as f64).collect(),
        range: vec![range; h * w],
        intensity: vec![1.0; h * w],
    }
}

#[test]
fn image_columns_are_destaggered() {
    let mut scan = const_scan(8, 512, 11f64.to_radians(), 0.02767, 30.0);
    for c in 0..512 {
        for r in 0..8 {
            let i = scan.index(r, c);
            scan.intensity[i] = c as f32;
        }
    }
    let img = build_image(&scan);
    for r in 0..8 {
        for c in 0..512 {
            let sc = scan.intrinsics.scan_column(r, c as i64);
            assert_eq!(img.at(r, c), sc as f64);
            let u = project(&scan.point(r, sc), &scan.intrinsics).unwrap().x;
            assert!(wrap_half(u - c as f64, 512.0).abs() < 0.6, "ring {r} col {c} u {u}");
        }
    }
}

#[test]
fn build_image_masks_invalid() {
    let mut scan = const_scan(4, 16, 0.0, 0.0, 3.0);
    scan.range[5] = 0.0;
    let img = build_image(&scan);
    assert_eq!((img.rows, img.cols), (4, 16));
    assert!(!img.mask[5]);
    assert_eq!(img.mask.iter().filter(|m| **m).count(), 63);
}

#[test]
fn constant_image_unchanged() {
    let img = image_from(32, 512, |_, _| 0.7);
    let out = filter_image(&img, &cfg());
    assert!(out.data.iter().all(|v| (v - 0.7).abs() < 1e-12));
}

fn texture(r: usize, c: usize) -> f64 {
    let (r, c) = (r as f64, c as f64);
    1.0 + 0.3 * (2.0 * PI * c / 37.0).sin() * (2.0 * PI * r / 23.0).cos() + 0.2 * (2.0 * PI * c / 91.0).cos()
}

#[test]
fn stripes_removed() {
    let amp = 0.4;
    let base = image_from(32, 512, texture);
    let striped = image_from(32, 512, |r, c| texture(r, c) + if r % 2 == 0 { amp } else { -amp });
    let a = filter_image(&base, &cfg());
    let b = filter_image(&striped, &cfg());
    let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 0.02 * amp, "residual stripe {worst}");
}

#[test]
fn exposure_equalized() {
    let w = 1024;
    let img = image_from(64, w, |r, c| texture(r, c) * if c < w / 2 { 0.5 } else { 1.0 });
    let out = filter_image(&img, &cfg());
    let half_mean = |lo: usize, hi: usize| {
        let mut s = 0.0;
        for r in 0..64 {
            for c in lo..hi {
                s += out.at(r, c);
            }
        }
        s / (64 * (hi - lo)) as f64
    };
    let (l, r) = (half_mean(0, w / 2), half_mean(w / 2, w));
    assert!((l - r).abs() / r < 0.05, "{l} vs {r}");
}

#[test]
fn projection_examples() {
    let intr = BeamIntrinsics::uniform(32, 512, PI / 2.0, 0.0, vec![0.0; 32]);
    let a = project(&Vector3::new(-1.0, 0.0, 0.0), &intr).unwrap();
    assert!(a.x.abs() < 1e-9 || (a.x - 512.0).abs() < 1e-9);
    assert!((a.y - 16.0).abs() < 1e-12);
    let b = project(&Vector3::new(1.0, 0.0, 0.0), &intr).unwrap();
    assert!((b.x - 256.0).abs() < 1e-12);
    let edge = project(&Vector3::new(1.0, 0.0, 1.0), &intr).unwrap();
    assert!(edge.y.abs() < 1e-12 || (edge.y - 32.0).abs() < 1e-12);
    assert!(matches!(project(&Vector3::new(0.0, 0.0, 1.0), &intr), Err(Error::UndefinedAzimuth)));
}

#[test]
fn projection_jacobian_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let intr = BeamIntrinsics::uniform(32, 512, PI / 2.0, 0.02767, vec![0.0; 32]);
    for _ in 0..100 {
        let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0));
        let j = project_jacobian(&p, &intr);
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = 1e-6;
            let a = project(&(p + d), &intr).unwrap();
            let b = project(&(p - d), &intr).unwrap();
            let du = wrap_half(a.x - b.x, 512.0) / 2e-6;
            let dv = (a.y - b.y) / 2e-6;
            assert!((du - j[(0, k)]).abs() < 1e-6 * j.amax().max(1.0));
            assert!((dv - j[(1, k)]).abs() < 1e-6 * j.amax().max(1.0));
        }
    }
}

#[test]
fn zero_offset_gives_zero_bias() {
    let scan = const_scan(8, 64, 0.0, 0.0, 5.0);
    let lut = build_bias_lut(&scan);
    assert!(lut.bias.iter().all(|b| b.abs() < 1e-9));
    let p = scan.point(3, 10);
    let a = project_n(&p, &scan.intrinsics, &lut).unwrap();
    let b = project(&p, &scan.intrinsics).unwrap();
    assert!((a.u - b.x).abs() < 1e-12);
}

#[test]
fn round_trip_hits_source_cell() {
    for &az in &[-11f64, 0.0, 11.0] {
        for &r in &[0.3f32, 1.0, 5.0, 20.0] {
            let scan = const_scan(32, 1024, az.to_radians(), 0.02767, r);
            let lut = build_bias_lut(&scan);
            for ring in [0usize, 7, 16, 31] {
                for col in [0usize, 100, 513, 1023] {
                    let p = scan.point(ring, col);
                    let pr = project_n(&p, &scan.intrinsics, &lut).unwrap();
                    let du = wrap_half(pr.u - scan.intrinsics.image_column(ring, col) as f64, 1024.0);
                    assert!(du.abs() < 0.01, "az {az} r {r} ({ring},{col}) du {du}");
                    assert!((pr.v - ring as f64).abs() < 0.05, "v {}", pr.v);
                }
            }
        }
    }
}

#[test]
fn bias_curve_monotone_toward_asymptote() {
    let intr = BeamIntrinsics::uniform(32, 1024, PI / 2.0, 0.02767, vec![11f64.to_radians(); 32]);
    let asym = -intr.fx() * 11f64.to_radians();
    let col = 1024 / 2 - (30f64.to_radians() * 1024.0 / (2.0 * PI)).round() as usize;
    let mut last_gap = f64::INFINITY;
    for k in 0..60 {
        let r = 0.3 + k as f64 * (20.0 - 0.3) / 59.0;
        let b = analytic_bias(&intr, 16, col, r);
        // independent evaluation: azimuth of the beam point relative to the encoder ray
        let th = intr.encoder_angle(col as f64);
        let phi = intr.elevation[16];
        let x = r * (th + 11f64.to_radians()).cos() * phi.cos() + 0.02767 * th.cos();
        let y = r * (th + 11f64.to_radians()).sin() * phi.cos() + 0.02767 * th.sin();
        let oracle = wrap_half(y.atan2(x) - th, 2.0 * PI) * 1024.0 / (2.0 * PI);
        assert!((b - oracle).abs() < 1e-9, "{b} vs {oracle}");
        let gap = (asym - b).abs();
        assert!(gap < last_gap);
        last_gap = gap;
    }
    assert!(last_gap < 0.1);
}

#[test]
fn fractional_ring_between_rings() {
    let intr = BeamIntrinsics::uniform(8, 64, PI / 2.0, 0.0, vec![0.0; 8]);
    let phi = 0.5 * (intr.elevation[2] + intr.elevation[3]);
    let p = Vector3::new(phi.cos(), 0.0, phi.sin());
    let pr = project_n(&p, &intr, &BiasLut::zeros(8, 64)).unwrap();
    assert!((pr.v - 2.5).abs() < 1e-12);
}

#[test]
fn ncc_examples() {
    let (psi, _) = normalize_ncc(&DVector::from_vec(vec![1.0, 2.0, 3.0]), 1e-6).unwrap();
    let s = 2f64.sqrt();
    assert!((psi - DVector::from_vec(vec![-1.0 / s, 0.0, 1.0 / s])).norm() < 1e-15);
    let x = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
    let (a, _) = normalize_ncc(&x, 1e-6).unwrap();
    let (b, _) = normalize_ncc(&(x.clone() * -2.5).add_scalar(4.0), 1e-6).unwrap();
    assert!((a + b).norm() < 1e-12);
    assert!(matches!(normalize_ncc(&DVector::from_element(5, 2.0), 1e-6), Err(Error::DegeneratePatch { .. })));
    assert!((ncc_score(&x, &x, 1e-6).unwrap() - 1.0).abs() < 1e-12);
    assert!(znssd(&x, &x, 1e-6).unwrap() < 1e-24);
    assert!((ncc_score(&x, &-x.clone(), 1e-6).unwrap() + 1.0).abs() < 1e-12);
    assert!((znssd(&x, &-x.clone(), 1e-6).unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn ncc_jacobian_and_null_spaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let x = DVector::from_fn(25, |_, _| rng.random_range(0.0..1.0));
        let (psi, j) = normalize_ncc(&x, 1e-6).unwrap();
        assert!((&j * DVector::from_element(25, 1.0)).amax() < 1e-12);
        assert!((psi.transpose() * &j).amax() < 1e-12);
        for k in 0..25 {
            let mut d = DVector::zeros(25);
            d[k] = 1e-6;
            let a = normalize_ncc(&(&x + &d), 1e-6).unwrap().0;
            let b = normalize_ncc(&(&x - &d), 1e-6).unwrap().0;
            let fd = (a - b) / 2e-6;
            assert!((fd - j.column(k)).amax() < 1e-6 * j.amax().max(1.0));
        }
    }
}

#[test]
fn sample_matches_bilinear_without_offsets() {
    let img = image_from(8, 32, |r, c| (r * 32 + c) as f64);
    let (s, g) = sample(&img, &BiasLut::zeros(8, 32), 3.25, 2.5).unwrap();
    assert!((s - (2.5 * 32.0 + 3.25)).abs() < 1e-12);
    assert!((g[0] - 1.0).abs() < 1e-12 && (g[1] - 32.0).abs() < 1e-12);
    assert!(sample(&img, &BiasLut::zeros(8, 32), 3.0, 7.5).is_none());
}

#[test]
fn constant_image_has_no_candidates() {
    let img = Arc::new(image_from(32, 256, |_, _| 1.0));
    let scan = const_scan(32, 256, 0.0, 0.0, 5.0);
    let cloud = DeskewedCloud {
        rows: 32,
        cols: 256,
        points: (0..32 * 256).map(|i| Some(scan.point(i / 256, i % 256))).collect(),
    };
    let frame = PhotoFrame {
        id: 1,
        image: img,
        lut: Arc::new(BiasLut::zeros(32, 256)),
        intrinsics: Arc::new(scan.intrinsics.clone()),
        deskew: Arc::new(DeskewTable::identity(&scan)),
        t_il: Pose::identity(),
    };
    let dirs = [Vector3::x()];
    let ctx =
        ExtractionContext { frame: &frame, cloud: &cloud, pose: &Pose::identity(), directions: &dirs, occupied: &[] };
    assert!(extract_candidates(&ctx, 10, &cfg()).is_empty());
}

fn texture_at(p: &Vector3<f64>) -> f64 {
    1.0 + 0.3 * (1.3 * p.x).sin() * (1.1 * p.y).cos()
        + 0.2 * (1.7 * p.z + 0.5 * p.x).sin()
        + 0.15 * (0.9 * p.y + 0.4 * p.z).cos()
}

/// Scan of a textured 8 x 6 x 4 m box seen from LiDAR pose `t_wl`.
fn room_scan(t_wl: &Pose) -> LidarScan {
    let (h, w) = (32, 512);
    let mut scan = const_scan(h, w, 3f64.to_radians(), 0.02767, 1.0);
    let half = Vector3::new(4.0, 3.0, 2.0);
    for r in 0..h {
        for c in 0..w {
            let enc = scan.intrinsics.encoder_angle(c as f64);
            let o = scan.intrinsics.point(r, enc, 0.0);
            let d = scan.intrinsics.point(r, enc, 1.0) - o;
            let (ow, dw) = (t_wl.transform_point(&o), t_wl.rotation.rotate(&d));
            let t = (0..3)
                .filter(|&k| dw[k].abs() > 1e-12)
                .map(|k| ((half[k] * dw[k].signum()) - ow[k]) / dw[k])
                .fold(f64::INFINITY, f64::min);
            let i = scan.index(r, c);
            scan.range[i] = t as f32;
            scan.intensity[i] = texture_at(&(ow + dw * scan.range[i] as f64)) as f32;
        }
    }
    scan
}

fn room_setup() -> (PhotoFrame, Vec<PatchFeature>, Pose) {
    let t_il = Pose::new(pglio::geometry::Rotation::from_rpy(0.01, -0.02, 0.03), Vector3::new(0.05, -0.02, 0.1));
    let truth = Pose::new(pglio::geometry::Rotation::from_rpy(0.05, -0.03, 0.4), Vector3::new(0.5, -0.3, 0.2));
    let scan = room_scan(&truth.compose(&t_il));
    let img = build_image(&scan);
    let lut = build_bias_lut(&scan);
    let mut features = Vec::new();
    for r in (3..29).step_by(5) {
        for c in (0..512).step_by(32) {
            let mut points = Vec::new();
            let mut vals = Vec::new();
            for dr in -2i64..=2 {
                for dc in -2i64..=2 {
                    let rr = (r as i64 + dr) as usize;
                    let cc = (c as i64 + dc).rem_euclid(512) as usize;
                    points.push(
                        truth
                            .compose(&t_il)
                            .transform_point(&scan.point(rr, scan.intrinsics.scan_column(rr, cc as i64))),
                    );
                    vals.push(img.at(rr, cc));
                }
            }
            let Ok(reference) = normalized(&DVector::from_vec(vals), 1e-6) else {
                continue;
            };
            features.push(PatchFeature {
                id: features.len() as u64,
                points,
                reference,
                reference_image: 0,
                reference_depth: Vec::new(),
                alive: true,
            });
        }
    }
    let frame = PhotoFrame {
        id: 0,
        image: Arc::new(img),
        lut: Arc::new(lut),
        intrinsics: Arc::new(scan.intrinsics.clone()),
        deskew: Arc::new(DeskewTable::identity(&scan)),
        t_il,
    };
    (frame, features, truth)
}

#[test]
fn photometric_jacobian_finite_differences() {
    let (frame, features, truth) = room_setup();
    let pose = truth.retract(&Vector3::new(0.004, -0.003, 0.006), &Vector3::new(0.02, 0.01, -0.015));
    let (factor, _) = PhotometricFactor::build(&features, frame, &pose, &cfg());
    assert!(factor.observations.len() > 50);
    let h = 1e-6;
    let mut checked = 0;
    for obs in &factor.observations {
        let pr = factor.patch(obs, &pose).unwrap();
        let mut fd = DMatrix::zeros(pr.residual.len(), 6);
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            let plus = pose.retract(&d.fixed_rows::<3>(0).into(), &d.fixed_rows::<3>(3).into());
            let minus = pose.retract(&-d.fixed_rows::<3>(0), &-d.fixed_rows::<3>(3));
            let a = factor.patch(obs, &plus).unwrap().residual;
            let b = factor.patch(obs, &minus).unwrap().residual;
            fd.column_mut(k).copy_from(&((a - b) / (2.0 * h)));
        }
        let rel = (&fd - &pr.jacobian).norm() / pr.jacobian.norm();
        if rel < 1e-4 {
            checked += 1;
        }
    }
    // a finite-difference step occasionally straddles a cell boundary of the
    // piecewise-linear sampler
    assert!(checked as f64 >= 0.95 * factor.observations.len() as f64, "{checked}/{}", factor.observations.len());
}

#[test]
fn photometric_alignment_converges() {
    let (frame, features, truth) = room_setup();
    let dir = Vector3::new(1.0, -2.0, 0.5).normalize();
    let mut pose = truth.retract(&(Vector3::new(0.3, 1.0, -0.6).normalize() * 2f64.to_radians()), &(dir * 0.3));
    for _ in 0..30 {
        let (factor, _) = PhotometricFactor::build(&features, frame.clone(), &pose, &cfg());
        let b = factor.linearize(&pose);
        let Some(delta) = b.jtj.cholesky().map(|c| c.solve(&-b.jtr)) else {
            break;
        };
        pose = pose.retract(&delta.fixed_rows::<3>(0).into(), &delta.fixed_rows::<3>(3).into());
        if delta.norm() < 1e-9 {
            break;
        }
    }
    let (dth, dp) = truth.local(&pose);
    assert!(dp.norm() < 0.01, "translation error {}", dp.norm());
    assert!(dth.norm().to_degrees() < 0.1, "rotation error {}", dth.norm().to_degrees());
}
