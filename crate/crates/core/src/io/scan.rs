//! `PGLS` organized scan format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PGLS" | u32 version (=1) | u32 H | u32 W
//! f64 start_time | f64 end_time | f64 beam_offset | f64 vertical_fov
//! H x (f64 elevation, f64 azimuth_offset)
//! W x f64 column_time_offset
//! H*W x (f32 range_m, f32 intensity)     row-major
//! ```

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGLS";
pub const VERSION: u32 = 1;
pub const MIN_RANGE: f64 = 0.1;
pub const MAX_RANGE: f64 = 500.0;
pub const MAX_AZIMUTH_OFFSET: f64 = 0.35;

/// Per-ring beam geometry of a mechanically spinning LiDAR.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamIntrinsics {
    pub rows: usize,
    pub cols: usize,
    /// Elevation of each ring, radians; strictly monotonic.
    pub elevation: Vec<f64>,
    /// Azimuth offset of each laser head relative to the encoder ray.
    pub azimuth_offset: Vec<f64>,
    /// Distance from the sensor origin to the rotating projection center.
    pub beam_offset: f64,
    pub vertical_fov: f64,
}

impl BeamIntrinsics {
    /// Rings evenly spaced by `fov / rows`, centered on the horizon, with the
    /// given per-ring azimuth offsets.
    pub fn uniform(rows: usize, cols: usize, vertical_fov: f64, beam_offset: f64, azimuth_offset: Vec<f64>) -> Self {
        let step = vertical_fov / rows as f64;
        let elevation = (0..rows).map(|i| 0.5 * vertical_fov - (i as f64 + 0.5) * step).collect();
        Self { rows, cols, elevation, azimuth_offset, beam_offset, vertical_fov }
    }

    /// Encoder angle at which column `col` fires; column `c` lands on
    /// `u = c` under the panoramic projection.
    pub fn encoder_angle(&self, col: f64) -> f64 {
        PI - 2.0 * PI * col / self.cols as f64
    }

    /// Whole-pixel shift that destaggers `ring`: scan column `c` is shown at
    /// image column `c - shift`, cancelling the far-range azimuth offset.
    pub fn pixel_shift(&self, ring: usize) -> i64 {
        (self.cols as f64 * self.azimuth_offset[ring] / (2.0 * PI)).round() as i64
    }

    pub fn image_column(&self, ring: usize, scan_col: usize) -> usize {
        (scan_col as i64 - self.pixel_shift(ring)).rem_euclid(self.cols as i64) as usize
    }

    pub fn scan_column(&self, ring: usize, image_col: i64) -> usize {
        (image_col + self.pixel_shift(ring)).rem_euclid(self.cols as i64) as usize
    }

    pub fn fx(&self) -> f64 {
        -(self.cols as f64) / (2.0 * PI)
    }

    pub fn fy(&self) -> f64 {
        -(self.rows as f64) / self.vertical_fov
    }

    pub fn cx(&self) -> f64 {
        self.cols as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.rows as f64 / 2.0
    }

    /// Sensor-frame point for a return of `range` on `ring` at encoder angle
    /// `encoder`.
    pub fn point(&self, ring: usize, encoder: f64, range: f64) -> nalgebra::Vector3<f64> {
        let phi = self.elevation[ring];
        let az = encoder + self.azimuth_offset[ring];
        let n = self.beam_offset;
        nalgebra::Vector3::new(
            range * az.cos() * phi.cos() + n * encoder.cos(),
            range * az.sin() * phi.cos() + n * encoder.sin(),
            range * phi.sin(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Validation(format!("scan dimensions {}x{} must be positive", self.rows, self.cols)));
        }
        if self.elevation.len() != self.rows || self.azimuth_offset.len() != self.rows {
            return Err(Error::Validation("per-ring tables do not match row count".into()));
        }
        if !(self.beam_offset.is_finite() && self.beam_offset >= 0.0) {
            return Err(Error::Validation(format!("beam offset n = {} must be >= 0", self.beam_offset)));
        }
        if !(self.vertical_fov.is_finite() && self.vertical_fov > 0.0) {
            return Err(Error::Validation(format!("vertical fov {} must be > 0", self.vertical_fov)));
        }
        for (i, a) in self.azimuth_offset.iter().enumerate() {
            if !a.is_finite() || a.abs() > MAX_AZIMUTH_OFFSET {
                return Err(Error::Validation(format!("ring {i}: azimuth offset {a} outside +-{MAX_AZIMUTH_OFFSET}")));
            }
        }
        if self.elevation.iter().any(|e| !e.is_finite()) {
            return Err(Error::Validation("non-finite elevation".into()));
        }
        if self.rows > 1 {
            let dir = (self.elevation[1] - self.elevation[0]).signum();
            for i in 1..self.rows {
                let d = self.elevation[i] - self.elevation[i - 1];
                if d == 0.0 || d.signum() != dir {
                    return Err(Error::Validation(format!("ring {i}: elevation not strictly monotonic")));
                }
            }
        }
        Ok(())
    }
}

/// One organized revolution.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub intrinsics: BeamIntrinsics,
    pub start_time: f64,
    pub end_time: f64,
    /// Firing time of each column relative to `start_time`.
    pub column_offsets: Vec<f64>,
    /// Row-major ranges in meters, 0 = no return.
    pub range: Vec<f32>,
    pub intensity: Vec<f32>,
}

impl LidarScan {
    pub fn rows(&self) -> usize {
        self.intrinsics.rows
    }

    pub fn cols(&self) -> usize {
        self.intrinsics.cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.intrinsics.cols + col
    }

    pub fn range_at(&self, row: usize, col: usize) -> f64 {
        self.range[self.index(row, col)] as f64
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.range[self.index(row, col)] > 0.0
    }

    pub fn column_time(&self, col: usize) -> f64 {
        self.start_time + self.column_offsets[col]
    }

    /// Point of cell `(row, col)` in the sensor frame at its firing time.
    pub fn point(&self, row: usize, col: usize) -> nalgebra::Vector3<f64> {
        let enc = self.intrinsics.encoder_angle(col as f64);
        self.intrinsics.point(row, enc, self.range_at(row, col))
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let (h, w) = (self.rows(), self.cols());
        if !(self.start_time.is_finite() && self.end_time.is_finite() && self.end_time >= self.start_time) {
            return Err(Error::Validation(format!("bad scan times [{}, {}]", self.start_time, self.end_time)));
        }
        if self.column_offsets.len() != w || self.range.len() != h * w || self.intensity.len() != h * w {
            return Err(Error::Validation("array sizes do not match dimensions".into()));
        }
        let span = self.end_time - self.start_time;
        let mut last = 0.0;
        for (c, &o) in self.column_offsets.iter().enumerate() {
            if !o.is_finite() || o < 0.0 || o > span + 1e-12 {
                return Err(Error::Validation(format!("column {c}: time offset {o} outside [0, {span}]")));
            }
            if o < last {
                return Err(Error::Validation(format!("column {c}: time offset decreases")));
            }
            last = o;
        }
        for r in 0..h {
            for c in 0..w {
                let i = self.index(r, c);
                let rg = self.range[i] as f64;
                if !(rg == 0.0 || (MIN_RANGE..=MAX_RANGE).contains(&rg)) {
                    return Err(Error::Validation(format!(
                        "cell ({r}, {c}): range {rg} outside [{MIN_RANGE}, {MAX_RANGE}]"
                    )));
                }
                let it = self.intensity[i];
                if !(it.is_finite() && it >= 0.0) {
                    return Err(Error::Validation(format!("cell ({r}, {c}): intensity {it} invalid")));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(56 + 16 * h + 8 * w + 8 * h * w);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        for v in [self.start_time, self.end_time, self.intrinsics.beam_offset, self.intrinsics.vertical_fov] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..h {
            out.extend_from_slice(&self.intrinsics.elevation[i].to_le_bytes());
            out.extend_from_slice(&self.intrinsics.azimuth_offset[i].to_le_bytes());
        }
        for o in &self.column_offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for i in 0..h * w {
            out.extend_from_slice(&self.range[i].to_le_bytes());
            out.extend_from_slice(&self.intensity[i].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        let magic = rd.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected \"PGLS\"", String::from_utf8_lossy(magic))));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let h = rd.u32()? as usize;
        let w = rd.u32()? as usize;
        if h == 0 || w == 0 {
            return Err(Error::Validation(format!("scan dimensions {h}x{w} must be positive")));
        }
        let start_time = rd.f64()?;
        let end_time = rd.f64()?;
        let beam_offset = rd.f64()?;
        let vertical_fov = rd.f64()?;
        let mut elevation = Vec::with_capacity(h);
        let mut azimuth_offset = Vec::with_capacity(h);
        for _ in 0..h {
            elevation.push(rd.f64()?);
            azimuth_offset.push(rd.f64()?);
        }
        let column_offsets = (0..w).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        let cells = h.checked_mul(w).ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        rd.require(cells * 8)?;
        let mut range = Vec::with_capacity(cells);
        let mut intensity = Vec::with_capacity(cells);
        for _ in 0..cells {
            range.push(rd.f32()?);
            intensity.push(rd.f32()?);
        }
        if rd.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - rd.pos)));
        }
        let scan = LidarScan {
            intrinsics: BeamIntrinsics { rows: h, cols: w, elevation, azimuth_offset, beam_offset, vertical_fov },
            start_time,
            end_time,
            column_offsets,
            range,
            intensity,
        };
        scan.validate()?;
        Ok(scan)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn require(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::Truncated { offset: self.pos, needed: n - left });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_scan(path: impl AsRef<Path>) -> Result<LidarScan> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LidarScan::from_bytes(&bytes)
}

pub fn write_scan(path: impl AsRef<Path>, scan: &LidarScan) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scan.to_bytes()).map_err(|e| Error::io(path, e))
}
