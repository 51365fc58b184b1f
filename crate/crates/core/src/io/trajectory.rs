//! TUM trajectory text: `stamp tx ty tz qx qy qz qw`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};

const DIGITS: usize = 9;

/// Fixed nine fractional digits with trailing zeros trimmed; `0` for zero.
fn fmt_num(v: f64) -> String {
    let s = format!("{:.*}", DIGITS, v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    match s {
        "-0" | "" => "0".to_string(),
        other => other.to_string(),
    }
}

pub fn format_tum_line(stamp: f64, pose: &Pose) -> String {
    let q = pose.rotation.to_quaternion();
    let t = &pose.translation;
    format!(
        "{:.9} {} {} {} {} {} {} {}",
        stamp,
        fmt_num(t.x),
        fmt_num(t.y),
        fmt_num(t.z),
        fmt_num(q.i),
        fmt_num(q.j),
        fmt_num(q.k),
        fmt_num(q.w)
    )
}

pub fn format_trajectory(states: &[(f64, Pose)]) -> String {
    let mut s = String::new();
    for (t, p) in states {
        let _ = writeln!(s, "{}", format_tum_line(*t, p));
    }
    s
}

pub fn write_trajectory(path: impl AsRef<Path>, states: &[(f64, Pose)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_trajectory(states)).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory(text: &str) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if v.len() != 8 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected 8 fields, found {}", v.len()) });
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
        out.push((v[0], Pose::new(Rotation::from_quaternion(&q), Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(out)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<(f64, Pose)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text)
}
