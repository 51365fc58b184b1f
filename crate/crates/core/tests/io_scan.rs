use pglio::error::Error;
use pglio::io::scan::*;

fn one_cell() -> LidarScan {
    LidarScan {
        intrinsics: BeamIntrinsics::uniform(1, 1, 0.5, 0.0, vec![0.0]),
        start_time: 1.0,
        end_time: 1.1,
        column_offsets: vec![0.0],
        range: vec![3.5],
        intensity: vec![0.25],
    }
}

#[test]
fn minimal_scan_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgls");
    let scan = one_cell();
    write_scan(&path, &scan).unwrap();
    let back = read_scan(&path).unwrap();
    assert_eq!(back, scan);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    assert_eq!(back.range.len(), 1);
}

#[test]
fn truncation_reports_missing_bytes() {
    let bytes = one_cell().to_bytes();
    let cut = &bytes[..bytes.len() - 3];
    match LidarScan::from_bytes(cut) {
        Err(Error::Truncated { needed, .. }) => assert_eq!(needed, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_magic_and_version() {
    let mut bytes = one_cell().to_bytes();
    bytes[0] = b'X';
    assert!(matches!(LidarScan::from_bytes(&bytes), Err(Error::Format(_))));
    let mut bytes = one_cell().to_bytes();
    bytes[4] = 2;
    assert!(matches!(LidarScan::from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn invalid_cell_is_named() {
    let mut scan = one_cell();
    scan.range[0] = 0.05;
    let err = LidarScan::from_bytes(&scan.to_bytes()).unwrap_err().to_string();
    assert!(err.contains("cell (0, 0)"), "{err}");
}

#[test]
fn encoder_angle_puts_column_on_u() {
    let k = BeamIntrinsics::uniform(4, 64, 1.0, 0.0, vec![0.0; 4]);
    for c in [0.0, 5.0, 31.0, 63.0] {
        let a = k.encoder_angle(c);
        let u = k.fx() * a.sin().atan2(a.cos()) + k.cx();
        let u = u.rem_euclid(64.0);
        assert!((u - c).abs() < 1e-9 || (u - c).abs() > 63.9, "{u} vs {c}");
    }
}
