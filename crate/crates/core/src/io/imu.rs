//! IMU CSV: `t,gx,gy,gz,ax,ay,az` per line, `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub stamp: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(stamp: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { stamp, gyro, accel }
    }
}

pub fn parse_imu(text: &str) -> Result<Vec<ImuSample>> {
    let mut out: Vec<ImuSample> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::Parse { line: line_no, msg: format!("expected 7 fields, found {}", fields.len()) });
        }
        let mut v = [0.0; 7];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("field {} '{f}' is not a number", k + 1) })?;
            if !v[k].is_finite() {
                return Err(Error::Parse { line: line_no, msg: format!("field {} is not finite", k + 1) });
            }
        }
        if let Some(last) = out.last() {
            if v[0] <= last.stamp {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("stamp {} not strictly greater than previous {}", v[0], last.stamp),
                });
            }
        }
        out.push(ImuSample::new(v[0], Vector3::new(v[1], v[2], v[3]), Vector3::new(v[4], v[5], v[6])));
    }
    Ok(out)
}

pub fn read_imu(path: impl AsRef<Path>) -> Result<Vec<ImuSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_imu(&text)
}

/// Writes with shortest round-trip float formatting.
pub fn format_imu(samples: &[ImuSample]) -> String {
    let mut s = String::from("# t,gx,gy,gz,ax,ay,az\n");
    for m in samples {
        let _ =
            writeln!(s, "{},{},{},{},{},{},{}", m.stamp, m.gyro.x, m.gyro.y, m.gyro.z, m.accel.x, m.accel.y, m.accel.z);
    }
    s
}

pub fn write_imu(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_imu(samples)).map_err(|e| Error::io(path, e))
}
