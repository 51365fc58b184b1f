//! Intensity images, the beam-aware panoramic projection, NCC patch features
//! and the photometric factor.
//!
//! Pixel coordinates use integer centers: column `c` sits at `u = c` and
//! ring `i` at `v = i`.

use std::sync::Arc;

use nalgebra::{
    DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, RowVector2, RowVector6, SMatrix, Vector2, Vector3, Vector6,
};

use crate::error::{Error, Result};
use crate::geometric::{huber, DeskewTable, DeskewedCloud, PoseBlock};
use crate::geometry::{skew, Pose};
use crate::io::config::PhotoConfig;
use crate::io::{BeamIntrinsics, LidarScan};

/// Organized intensity image with validity mask and per-cell depth.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub mask: Vec<bool>,
    /// Sensor-frame distance of each cell's point, 0 where invalid.
    pub depth: Vec<f64>,
}

impl IntensityImage {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn valid(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.cols + c]
    }

    fn wrap(&self, c: i64) -> usize {
        c.rem_euclid(self.cols as i64) as usize
    }

    /// Binary PGM, linearly scaled to the valid range.
    pub fn to_pgm(&self) -> Vec<u8> {
        let vals: Vec<f64> = self.data.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(
            self.data.iter().zip(&self.mask).map(|(v, m)| if *m { ((v - lo) * scale).round() as u8 } else { 0 }),
        );
        out
    }
}

pub fn build_image(scan: &LidarScan) -> IntensityImage {
    let (h, w) = (scan.rows(), scan.cols());
    let mut img =
        IntensityImage { rows: h, cols: w, data: vec![0.0; h * w], mask: vec![false; h * w], depth: vec![0.0; h * w] };
    for r in 0..h {
        for c in 0..w {
            if scan.is_valid(r, c) {
                let i = scan.index(r, c);
                let j = r * w + scan.intrinsics.image_column(r, c);
                img.data[j] = scan.intensity[i] as f64;
                img.mask[j] = true;
                img.depth[j] = scan.point(r, c).norm();
            }
        }
    }
    img
}

/// Mirrors a row index into `0..h` without repeating the edge row.
fn reflect(r: i64, h: usize) -> usize {
    let h = h as i64;
    if h == 1 {
        return 0;
    }
    let period = 2 * (h - 1);
    let m = r.rem_euclid(period);
    (if m < h { m } else { period - m }) as usize
}

/// Masked vertical box sums (mirrored at the top and bottom) of `vals` and
/// of the mask.
fn vertical_sums(vals: &[f64], mask: &[bool], h: usize, w: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let half = (k / 2) as i64;
    let mut s = vec![0.0; h * w];
    let mut n = vec![0.0; h * w];
    for r in 0..h {
        for d in -half..=half {
            let rr = reflect(r as i64 + d, h);
            for c in 0..w {
                if mask[rr * w + c] {
                    s[r * w + c] += vals[rr * w + c];
                    n[r * w + c] += 1.0;
                }
            }
        }
    }
    (s, n)
}

/// Horizontal box sums with wrap-around; a window at least as wide as the
/// image covers the whole row once.
fn horizontal_sums(vals: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let row = &vals[r * w..(r + 1) * w];
        if k >= w {
            let total: f64 = row.iter().sum();
            out[r * w..(r + 1) * w].fill(total);
            continue;
        }
        let half = k / 2;
        let mut ps = vec![0.0; 2 * w + 1];
        for i in 0..2 * w {
            ps[i + 1] = ps[i] + row[i % w];
        }
        for c in 0..w {
            // window [c - half, c + half] shifted by +w into the doubled row
            let lo = c + w - half;
            let hi = c + w + half + 1;
            let (lo, hi) = if hi > 2 * w { (lo - w, hi - w) } else { (lo, hi) };
            out[r * w + c] = ps[hi] - ps[lo];
        }
    }
    out
}

fn masked_vals(img: &IntensityImage) -> Vec<f64> {
    img.data.iter().zip(&img.mask).map(|(v, m)| if *m { *v } else { 0.0 }).collect()
}

fn box_mean(vals: &[f64], mask: &[bool], h: usize, w: usize, kv: usize, kh: usize) -> Vec<f64> {
    let (s, n) = vertical_sums(vals, mask, h, w, kv);
    let s = horizontal_sums(&s, h, w, kh);
    let n = horizontal_sums(&n, h, w, kh);
    s.iter().zip(&n).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()
}

/// Line-artifact removal, brightness normalization and Gaussian smoothing.
pub fn filter_image(img: &IntensityImage, cfg: &PhotoConfig) -> IntensityImage {
    let (h, w) = (img.rows, img.cols);
    let vals = masked_vals(img);

    // per-ring line signal: vertical highpass, then horizontal lowpass
    let vmean = box_mean(&vals, &img.mask, h, w, cfg.filter_kv, 1);
    let hp: Vec<f64> = (0..h * w).map(|i| if img.mask[i] { vals[i] - vmean[i] } else { 0.0 }).collect();
    let line = box_mean(&hp, &img.mask, h, w, 1, cfg.filter_kh);
    let delined: Vec<f64> = (0..h * w).map(|i| if img.mask[i] { vals[i] - line[i] } else { 0.0 }).collect();

    // brightness map
    let local = box_mean(&delined, &img.mask, h, w, cfg.brightness_window, cfg.brightness_window);
    let count = img.mask.iter().filter(|m| **m).count().max(1) as f64;
    let global = delined.iter().sum::<f64>() / count;
    let bright: Vec<f64> = (0..h * w)
        .map(|i| {
            if !img.mask[i] {
                0.0
            } else if local[i].abs() > 1e-12 {
                delined[i] * global / local[i]
            } else {
                delined[i]
            }
        })
        .collect();

    // 3x3 Gaussian over valid cells
    let s = cfg.gauss_sigma;
    let g = [(-0.5 / (s * s)).exp(), 1.0, (-0.5 / (s * s)).exp()];
    let mut data = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !img.mask[i] {
                continue;
            }
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (dr, gr) in (-1i64..=1).zip(g) {
                let rr = reflect(r as i64 + dr, h);
                for (dc, gc) in (-1i64..=1).zip(g) {
                    let j = rr * w + img.wrap(c as i64 + dc);
                    if img.mask[j] {
                        acc += gr * gc * bright[j];
                        wsum += gr * gc;
                    }
                }
            }
            data[i] = acc / wsum;
        }
    }
    IntensityImage { rows: h, cols: w, data, mask: img.mask.clone(), depth: img.depth.clone() }
}

/// Panoramic projection of a sensor-frame point without bias correction.
pub fn project(p: &Vector3<f64>, intr: &BeamIntrinsics) -> Result<Vector2<f64>> {
    if p.x == 0.0 && p.y == 0.0 {
        return Err(Error::UndefinedAzimuth);
    }
    let l = (p.x * p.x + p.y * p.y).sqrt() - intr.beam_offset;
    let r = (l * l + p.z * p.z).sqrt();
    let w = intr.cols as f64;
    let u = (intr.fx() * p.y.atan2(p.x) + intr.cx()).rem_euclid(w);
    let v = intr.fy() * (p.z / r).asin() + intr.cy();
    Ok(Vector2::new(u, v))
}

/// Derivative of the unwrapped projection.
pub fn project_jacobian(p: &Vector3<f64>, intr: &BeamIntrinsics) -> Matrix2x3<f64> {
    let rho2 = p.x * p.x + p.y * p.y;
    let rho = rho2.sqrt();
    let l = rho - intr.beam_offset;
    let r2 = l * l + p.z * p.z;
    let (fx, fy) = (intr.fx(), intr.fy());
    Matrix2x3::new(
        -fx * p.y / rho2,
        fx * p.x / rho2,
        0.0,
        -fy * p.z * p.x / (r2 * rho),
        -fy * p.z * p.y / (r2 * rho),
        fy * l / r2,
    )
}

/// Elevation of the beam reaching `p`, measured from the projection center.
fn beam_elevation(p: &Vector3<f64>, n: f64) -> f64 {
    let l = (p.x * p.x + p.y * p.y).sqrt() - n;
    p.z.atan2(l)
}

/// Fractional ring index for elevation `phi` and `dv/dphi`, by piecewise
/// linear interpolation of the ring table (linear extrapolation outside).
pub fn ring_coordinate(phi: f64, intr: &BeamIntrinsics) -> (f64, f64) {
    let e = &intr.elevation;
    let h = e.len();
    if h == 1 {
        return (intr.fy() * (phi - e[0]), intr.fy());
    }
    let desc = e[1] < e[0];
    // segment k spans rings k..k+1
    let mut k = if desc { e.partition_point(|&x| x > phi) } else { e.partition_point(|&x| x < phi) };
    k = k.saturating_sub(1).min(h - 2);
    let slope = 1.0 / (e[k + 1] - e[k]);
    (k as f64 + (phi - e[k]) * slope, slope)
}

/// Per-cell horizontal bias aligning the projection with scan columns.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasLut {
    pub rows: usize,
    pub cols: usize,
    pub bias: Vec<f64>,
}

impl BiasLut {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bias: vec![0.0; rows * cols] }
    }

    pub fn at(&self, ring: usize, u: f64) -> f64 {
        let c = (u.round() as i64).rem_euclid(self.cols as i64) as usize;
        self.bias[ring * self.cols + c]
    }

    /// Bias for `ring` at raw column `u_raw`, re-looked-up at the corrected
    /// column once.
    pub fn lookup(&self, ring: usize, u_raw: f64) -> f64 {
        let b = self.at(ring, u_raw);
        self.at(ring, u_raw + b)
    }
}

/// `x` wrapped into `[-w/2, w/2)`.
pub fn wrap_half(x: f64, w: f64) -> f64 {
    (x + 0.5 * w).rem_euclid(w) - 0.5 * w
}

/// Column bias of a return on `ring` fired at scan column `col` with range
/// `range`, relative to the scan column.
pub fn analytic_bias(intr: &BeamIntrinsics, ring: usize, col: usize, range: f64) -> f64 {
    let p = intr.point(ring, intr.encoder_angle(col as f64), range);
    let u = project(&p, intr).map(|x| x.x).unwrap_or(col as f64);
    wrap_half(col as f64 - u, intr.cols as f64)
}

/// [`analytic_bias`] relative to the destaggered image column.
pub fn image_bias(intr: &BeamIntrinsics, ring: usize, image_col: usize, range: f64) -> f64 {
    let col = intr.scan_column(ring, image_col as i64);
    wrap_half(analytic_bias(intr, ring, col, range) - intr.pixel_shift(ring) as f64, intr.cols as f64)
}

pub fn build_bias_lut(scan: &LidarScan) -> BiasLut {
    let (h, w) = (scan.rows(), scan.cols());
    let intr = &scan.intrinsics;
    let mut lut = BiasLut::zeros(h, w);
    for r in 0..h {
        let mut known: Vec<(usize, f64)> = Vec::new();
        for c in 0..w {
            let sc = intr.scan_column(r, c as i64);
            if scan.is_valid(r, sc) {
                if let Ok(uv) = project(&scan.point(r, sc), intr) {
                    known.push((c, wrap_half(c as f64 - uv.x, w as f64)));
                }
            }
        }
        let row = &mut lut.bias[r * w..(r + 1) * w];
        if known.is_empty() {
            for (c, b) in row.iter_mut().enumerate() {
                *b = image_bias(intr, r, c, 10.0);
            }
            continue;
        }
        for &(c, b) in &known {
            row[c] = b;
        }
        // linear interpolation across gaps, wrapping around the row
        for k in 0..known.len() {
            let (c0, b0) = known[k];
            let (c1, b1) = known[(k + 1) % known.len()];
            let gap = (c1 + w - c0 - 1) % w + 1;
            for step in 1..gap {
                let a = step as f64 / gap as f64;
                row[(c0 + step) % w] = b0 + a * (b1 - b0);
            }
        }
    }
    lut
}

/// Bias-corrected projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Destaggered image column.
    pub u: f64,
    pub v: f64,
    /// Uncorrected azimuth coordinate.
    pub u_raw: f64,
    /// `dv/dphi` at this elevation.
    pub ring_slope: f64,
}

pub fn project_n(p: &Vector3<f64>, intr: &BeamIntrinsics, lut: &BiasLut) -> Result<Projection> {
    let raw = project(p, intr)?;
    let (v, ring_slope) = ring_coordinate(beam_elevation(p, intr.beam_offset), intr);
    let ring = (v.round().max(0.0) as usize).min(intr.rows - 1);
    let u = (raw.x + lut.lookup(ring, raw.x)).rem_euclid(intr.cols as f64);
    Ok(Projection { u, v, u_raw: raw.x, ring_slope })
}

/// `d(u, v)/dp` of [`project_n`] with the bias held constant.
pub fn project_n_jacobian(p: &Vector3<f64>, intr: &BeamIntrinsics, ring_slope: f64) -> Matrix2x3<f64> {
    let mut j = project_jacobian(p, intr);
    let s = ring_slope / intr.fy();
    j[(1, 0)] *= s;
    j[(1, 1)] *= s;
    j[(1, 2)] *= s;
    j
}

/// Ring-aware bilinear sample: each of the two bracketing rings is read at
/// its own bias-corrected column, then blended vertically.
///
/// Returns the intensity and `d/d(u_raw, v)`, or `None` if any contributing
/// cell is masked or the rings are out of range.
pub fn sample(img: &IntensityImage, lut: &BiasLut, u_raw: f64, v: f64) -> Option<(f64, RowVector2<f64>)> {
    if !(v >= 0.0 && v <= (img.rows - 1) as f64) {
        return None;
    }
    let r0 = (v.floor() as usize).min(img.rows.saturating_sub(2));
    let r1 = (r0 + 1).min(img.rows - 1);
    let a = v - r0 as f64;
    let (s0, g0) = sample_ring(img, lut, r0, u_raw)?;
    let (s1, g1) = sample_ring(img, lut, r1, u_raw)?;
    Some(((1.0 - a) * s0 + a * s1, RowVector2::new((1.0 - a) * g0 + a * g1, s1 - s0)))
}

/// Linear interpolation along `ring` at its bias-corrected column, with the
/// derivative along `u_raw`.
pub fn sample_ring(img: &IntensityImage, lut: &BiasLut, ring: usize, u_raw: f64) -> Option<(f64, f64)> {
    let u = u_raw + lut.lookup(ring, u_raw);
    let c0 = u.floor();
    let t = u - c0;
    let i0 = img.wrap(c0 as i64);
    let i1 = img.wrap(c0 as i64 + 1);
    if !(img.valid(ring, i0) && img.valid(ring, i1)) {
        return None;
    }
    let (x0, x1) = (img.at(ring, i0), img.at(ring, i1));
    Some((x0 + t * (x1 - x0), x1 - x0))
}

/// Zero-mean, unit-norm normalization and its Jacobian.
pub fn normalize_ncc(x: &DVector<f64>, eps: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = x.len();
    let mean = x.mean();
    let centered = x.add_scalar(-mean);
    let sigma = centered.norm();
    if !(sigma > eps) {
        return Err(Error::DegeneratePatch { sigma, eps });
    }
    let psi = &centered / sigma;
    let proj = DMatrix::identity(m, m) - &psi * psi.transpose();
    let center = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    Ok((psi, proj * center / sigma))
}

/// Zero-mean, unit-norm copy of `x`.
pub fn normalized(x: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    let mean = x.mean();
    let centered = x.add_scalar(-mean);
    let sigma = centered.norm();
    if !(sigma > eps) {
        return Err(Error::DegeneratePatch { sigma, eps });
    }
    Ok(centered / sigma)
}

/// Clamped to `[-1, 1]` against rounding.
pub fn ncc_score(s: &DVector<f64>, t: &DVector<f64>, eps: f64) -> Result<f64> {
    Ok(normalized(s, eps)?.dot(&normalized(t, eps)?).clamp(-1.0, 1.0))
}

pub fn znssd(s: &DVector<f64>, t: &DVector<f64>, eps: f64) -> Result<f64> {
    Ok((normalized(s, eps)? - normalized(t, eps)?).norm_squared())
}

/// Photometric landmark: world points of a patch with frozen reference
/// appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeature {
    pub id: u64,
    pub points: Vec<Vector3<f64>>,
    /// Normalized reference intensities.
    pub reference: DVector<f64>,
    pub reference_image: u64,
    pub reference_depth: Vec<f64>,
    pub alive: bool,
}

/// Cap on the firing-column fixed-point iteration; it contracts by roughly
/// `v T / (2 pi d)` per step.
const MAX_FIRING_ITERATIONS: usize = 4;

/// Everything needed to project into and sample one scan's image.
#[derive(Clone, Debug)]
pub struct PhotoFrame {
    pub id: u64,
    pub image: Arc<IntensityImage>,
    pub lut: Arc<BiasLut>,
    pub intrinsics: Arc<BeamIntrinsics>,
    pub deskew: Arc<DeskewTable>,
    pub t_il: Pose,
}

impl PhotoFrame {
    /// Projects world point `p_w` seen from IMU pose `pose` as sampled by
    /// `ring`, resolving that ring's firing column by fixed-point
    /// iteration. Returns the point in the LiDAR frame at its firing time,
    /// the frozen `T_{L_e L_t}` and the projection.
    pub fn project_ring(
        &self,
        pose: &Pose,
        p_w: &Vector3<f64>,
        ring: usize,
    ) -> Result<(Vector3<f64>, Pose, Projection)> {
        let p_le = self.t_il.inverse().transform_point(&pose.inverse().transform_point(p_w));
        let mut proj = project_n(&p_le, &self.intrinsics, &self.lut)?;
        let mut t = Pose::identity();
        let mut p_lt = p_le;
        let mut col = i64::MIN;
        for _ in 0..MAX_FIRING_ITERATIONS {
            let c = self.scan_column(&proj, ring);
            if c.round() as i64 == col {
                break;
            }
            col = c.round() as i64;
            t = *self.deskew.at_column(c);
            p_lt = t.inverse().transform_point(&p_le);
            proj = project_n(&p_lt, &self.intrinsics, &self.lut)?;
        }
        Ok((p_lt, t, proj))
    }

    /// [`PhotoFrame::project_ring`] for the ring nearest to the point.
    pub fn project_world(&self, pose: &Pose, p_w: &Vector3<f64>) -> Result<(Vector3<f64>, Pose, Projection)> {
        let p_le = self.t_il.inverse().transform_point(&pose.inverse().transform_point(p_w));
        let ring = self.nearest_ring(project_n(&p_le, &self.intrinsics, &self.lut)?.v);
        self.project_ring(pose, p_w, ring)
    }

    fn nearest_ring(&self, v: f64) -> usize {
        (v.round().max(0.0) as usize).min(self.intrinsics.rows - 1)
    }

    /// Fractional scan column, which fixes the firing time, at which `ring`
    /// samples a projection.
    fn scan_column(&self, proj: &Projection, ring: usize) -> f64 {
        proj.u_raw + self.lut.lookup(ring, proj.u_raw) + self.intrinsics.pixel_shift(ring) as f64
    }

    fn depth_at(&self, proj: &Projection) -> f64 {
        let r = self.nearest_ring(proj.v);
        let c = self.image.wrap(proj.u.round() as i64);
        self.image.depth[r * self.image.cols + c]
    }

    /// Value of [`PhotoFrame::point_value`] without the derivative.
    fn point_intensity(&self, q: &Vector3<f64>, r0: usize, t_li: &[Pose; 2]) -> Option<f64> {
        let intr = &*self.intrinsics;
        let mut vals = [0.0; 2];
        let mut v = 0.0;
        for i in 0..2 {
            let p = t_li[i].transform_point(q);
            vals[i] = sample_ring(&self.image, &self.lut, r0 + i, project(&p, intr).ok()?.x)?.0;
            if i == 0 {
                v = ring_coordinate(beam_elevation(&p, intr.beam_offset), intr).0;
            }
        }
        if !(v >= 0.0 && v <= (intr.rows - 1) as f64) {
            return None;
        }
        let a = v - r0 as f64;
        Some((1.0 - a) * vals[0] + a * vals[1])
    }

    /// Intensity of IMU-frame point `q` blended between rings `r0` and
    /// `r0 + 1`, each read through its own IMU-to-LiDAR transform at firing
    /// time, and its derivative
    /// with respect to the pose perturbation `(dtheta, dp)`.
    fn point_value(&self, q: &Vector3<f64>, r0: usize, t_li: &[Pose; 2]) -> Option<(f64, RowVector6<f64>)> {
        let intr = &*self.intrinsics;
        let mut vals = [0.0; 2];
        let mut rows = [RowVector6::zeros(); 2];
        let mut v_row = RowVector6::zeros();
        let mut v = 0.0;
        for i in 0..2 {
            let p = t_li[i].transform_point(q);
            let raw = project(&p, intr).ok()?.x;
            let (s, g) = sample_ring(&self.image, &self.lut, r0 + i, raw)?;
            let r = t_li[i].rotation.0;
            let mut j_gamma = SMatrix::<f64, 3, 6>::zeros();
            j_gamma.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * skew(q)));
            j_gamma.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r));
            let (ring_v, slope) = ring_coordinate(beam_elevation(&p, intr.beam_offset), intr);
            let j_pi = project_n_jacobian(&p, intr, slope) * j_gamma;
            vals[i] = s;
            rows[i] = j_pi.row(0) * g;
            if i == 0 {
                v = ring_v;
                v_row = j_pi.row(1).into_owned();
            }
        }
        if !(v >= 0.0 && v <= (intr.rows - 1) as f64) {
            return None;
        }
        let a = v - r0 as f64;
        let value = (1.0 - a) * vals[0] + a * vals[1];
        Some((value, rows[0] * (1.0 - a) + rows[1] * a + v_row * (vals[1] - vals[0])))
    }
}

/// Outcome of tracking one feature in a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FeatureStatus {
    Tracked { ncc: f64 },
    OutOfImage,
    Occluded,
    LowNcc { ncc: f64 },
    Degenerate,
}

impl FeatureStatus {
    pub fn is_tracked(&self) -> bool {
        matches!(self, FeatureStatus::Tracked { .. })
    }
}

/// A feature observed in a frame. Each point keeps the lower of its two
/// bracketing rings and, per ring, the IMU-to-LiDAR transform at its
/// firing time, frozen at association.
#[derive(Clone, Debug)]
pub struct FeatureObservation {
    pub feature_id: u64,
    pub points: Vec<Vector3<f64>>,
    pub reference: DVector<f64>,
    pub firing: Vec<(usize, [Pose; 2])>,
}

/// Patch residuals of one scan.
#[derive(Clone, Debug)]
pub struct PhotometricFactor {
    pub frame: PhotoFrame,
    pub observations: Vec<FeatureObservation>,
    pub sigma: f64,
    pub huber: f64,
    pub min_std: f64,
}

/// Residual block of one patch and its `M x 6` Jacobian (unwhitened).
pub struct PatchResidual {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl PhotometricFactor {
    /// Associates live features against `frame` at `pose`, applying the
    /// out-of-image, occlusion and NCC tests.
    pub fn build(
        features: &[PatchFeature],
        frame: PhotoFrame,
        pose: &Pose,
        cfg: &PhotoConfig,
    ) -> (Self, Vec<(u64, FeatureStatus)>) {
        let mut statuses = Vec::new();
        let mut observations = Vec::new();
        for f in features.iter().filter(|f| f.alive) {
            let status = Self::associate(f, &frame, pose, cfg);
            if let Ok((obs, ncc)) = &status {
                if *ncc >= cfg.min_ncc {
                    observations.push(obs.clone());
                    statuses.push((f.id, FeatureStatus::Tracked { ncc: *ncc }));
                } else {
                    statuses.push((f.id, FeatureStatus::LowNcc { ncc: *ncc }));
                }
            } else if let Err(s) = status {
                statuses.push((f.id, s));
            }
        }
        (Self { frame, observations, sigma: cfg.sigma, huber: cfg.huber, min_std: cfg.min_std }, statuses)
    }

    fn associate(
        f: &PatchFeature,
        frame: &PhotoFrame,
        pose: &Pose,
        cfg: &PhotoConfig,
    ) -> std::result::Result<(FeatureObservation, f64), FeatureStatus> {
        let rows = frame.intrinsics.rows;
        if rows < 2 {
            return Err(FeatureStatus::OutOfImage);
        }
        let inv = pose.inverse();
        let rt_il = frame.t_il.inverse();
        let mut firing = Vec::with_capacity(f.points.len());
        let mut vals = DVector::zeros(f.points.len());
        for (k, p) in f.points.iter().enumerate() {
            let (p_lt, _, proj) = frame.project_world(pose, p).map_err(|_| FeatureStatus::OutOfImage)?;
            if !(proj.v >= 0.0 && proj.v <= (rows - 1) as f64) {
                return Err(FeatureStatus::OutOfImage);
            }
            let d = frame.depth_at(&proj);
            if d <= 0.0 {
                return Err(FeatureStatus::OutOfImage);
            }
            if (d - p_lt.norm()).abs() > cfg.max_depth_diff {
                return Err(FeatureStatus::Occluded);
            }
            let r0 = (proj.v.floor() as usize).min(rows - 2);
            let t0 = frame.project_ring(pose, p, r0).map_err(|_| FeatureStatus::OutOfImage)?.1;
            let t1 = frame.project_ring(pose, p, r0 + 1).map_err(|_| FeatureStatus::OutOfImage)?.1;
            let t_li = [t0.inverse().compose(&rt_il), t1.inverse().compose(&rt_il)];
            let s = frame.point_intensity(&inv.transform_point(p), r0, &t_li).ok_or(FeatureStatus::OutOfImage)?;
            firing.push((r0, t_li));
            vals[k] = s;
        }
        let ncc = ncc_score(&vals, &f.reference, cfg.min_std).map_err(|_| FeatureStatus::Degenerate)?;
        Ok((
            FeatureObservation { feature_id: f.id, points: f.points.clone(), reference: f.reference.clone(), firing },
            ncc,
        ))
    }

    /// Residual and Jacobian of one observation at `pose`; `None` when the
    /// patch leaves the image or becomes flat.
    pub fn patch(&self, obs: &FeatureObservation, pose: &Pose) -> Option<PatchResidual> {
        let m = obs.points.len();
        let mut vals = DVector::zeros(m);
        let mut chain = DMatrix::zeros(m, 6);
        let inv = pose.inverse();
        for (k, (p, (r0, firing))) in obs.points.iter().zip(&obs.firing).enumerate() {
            let (s, row) = self.frame.point_value(&inv.transform_point(p), *r0, firing)?;
            vals[k] = s;
            chain.row_mut(k).copy_from(&row);
        }
        let mean = vals.mean();
        let centered = vals.add_scalar(-mean);
        let sigma = centered.norm();
        if !(sigma > self.min_std) {
            return None;
        }
        let psi = centered / sigma;
        // (I - psi psi^T)(I - 11^T/m) / sigma applied column-wise.
        for mut col in chain.column_iter_mut() {
            let c = col.mean();
            col.add_scalar_mut(-c);
            let d = psi.dot(&col);
            col.axpy(-d, &psi, 1.0);
            col /= sigma;
        }
        Some(PatchResidual { residual: psi - &obs.reference, jacobian: chain })
    }

    /// Residual of [`PhotometricFactor::patch`] without the Jacobian.
    pub fn residual(&self, obs: &FeatureObservation, pose: &Pose) -> Option<DVector<f64>> {
        let inv = pose.inverse();
        let mut vals = DVector::zeros(obs.points.len());
        for (k, (p, (r0, firing))) in obs.points.iter().zip(&obs.firing).enumerate() {
            vals[k] = self.frame.point_intensity(&inv.transform_point(p), *r0, firing)?;
        }
        Some(normalized(&vals, self.min_std).ok()? - &obs.reference)
    }

    pub fn linearize(&self, pose: &Pose) -> PoseBlock {
        let mut b = PoseBlock::zero();
        let s2 = self.sigma * self.sigma;
        for obs in &self.observations {
            let Some(pr) = self.patch(obs, pose) else { continue };
            let (w, rho) = huber(pr.residual.norm(), self.huber);
            let jtj = pr.jacobian.tr_mul(&pr.jacobian);
            let jtr = pr.jacobian.tr_mul(&pr.residual);
            b.jtj += Matrix6::from_fn(|i, j| jtj[(i, j)]) * (w / s2);
            b.jtr += Vector6::from_fn(|i, _| jtr[i]) * (w / s2);
            b.cost += 0.5 * rho / s2;
            b.rows += pr.residual.len();
        }
        b
    }

    pub fn cost(&self, pose: &Pose) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.observations
            .iter()
            .filter_map(|o| self.residual(o, pose))
            .map(|r| 0.5 * huber(r.norm(), self.huber).1 / s2)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Scharr gradient magnitude with horizontal wrap; 0 on border rows and
/// next to masked cells.
pub fn gradient_magnitude(img: &IntensityImage) -> Vec<f64> {
    let (h, w) = (img.rows, img.cols);
    let mut out = vec![0.0; h * w];
    if h < 3 {
        return out;
    }
    for r in 1..h - 1 {
        for c in 0..w {
            let mut ok = true;
            let mut px = [[0.0; 3]; 3];
            for (i, dr) in (-1i64..=1).enumerate() {
                for (j, dc) in (-1i64..=1).enumerate() {
                    let rr = (r as i64 + dr) as usize;
                    let cc = img.wrap(c as i64 + dc);
                    ok &= img.valid(rr, cc);
                    px[i][j] = img.at(rr, cc);
                }
            }
            if !ok {
                continue;
            }
            let gx = 3.0 * (px[0][2] - px[0][0]) + 10.0 * (px[1][2] - px[1][0]) + 3.0 * (px[2][2] - px[2][0]);
            let gy = 3.0 * (px[2][0] - px[0][0]) + 10.0 * (px[2][1] - px[0][1]) + 3.0 * (px[2][2] - px[0][2]);
            out[r * w + c] = (gx * gx + gy * gy).sqrt() / 32.0;
        }
    }
    out
}

/// Local maxima of `mag` that dominate a `(2r+1)^2` window; ties go to the
/// lower index.
pub fn non_maximum_suppression(mag: &[f64], h: usize, w: usize, radius: usize, floor: f64) -> Vec<(usize, usize)> {
    let rad = radius as i64;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let m = mag[r * w + c];
            if m <= floor {
                continue;
            }
            let mut is_max = true;
            'scan: for dr in -rad..=rad {
                let rr = r as i64 + dr;
                if rr < 0 || rr >= h as i64 {
                    continue;
                }
                for dc in -rad..=rad {
                    let cc = (c as i64 + dc).rem_euclid(w as i64) as usize;
                    let j = rr as usize * w + cc;
                    let o = mag[j];
                    if o > m || (o == m && j < r * w + c) {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                out.push((r, c));
            }
        }
    }
    out
}

/// Inputs for candidate extraction from one optimized scan.
pub struct ExtractionContext<'a> {
    pub frame: &'a PhotoFrame,
    pub cloud: &'a DeskewedCloud,
    /// Optimized `T_WI` at scan end.
    pub pose: &'a Pose,
    /// Degenerate translation directions in the IMU frame.
    pub directions: &'a [Vector3<f64>],
    /// Pixels already occupied by tracked features.
    pub occupied: &'a [(f64, f64)],
}

/// A scored candidate before conversion into a feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub row: usize,
    pub col: usize,
    pub scores: Vec<f64>,
    pub feature: PatchFeature,
}

/// Patch candidates scored by how strongly their intensities respond to a
/// translation along each degenerate direction.
pub fn score_candidates(ctx: &ExtractionContext, cfg: &PhotoConfig) -> Vec<Candidate> {
    let img = &ctx.frame.image;
    let (h, w) = (img.rows, img.cols);
    let half = (cfg.patch_size / 2) as i64;
    let mag = gradient_magnitude(img);
    let maxima = non_maximum_suppression(&mag, h, w, cfg.nms_radius, cfg.min_gradient);
    let r_li: Matrix3<f64> = ctx.frame.t_il.inverse().rotation.0;
    let mut out = Vec::new();
    for (r, c) in maxima {
        if (r as i64) < half || r as i64 + half >= h as i64 {
            continue;
        }
        let near = ctx.occupied.iter().any(|&(u, v)| {
            let du = wrap_half(u - c as f64, w as f64).abs();
            du <= cfg.nms_radius as f64 && (v - r as f64).abs() <= cfg.nms_radius as f64
        });
        if near {
            continue;
        }
        let mut pts_i = Vec::new();
        let mut vals = Vec::new();
        let mut depths = Vec::new();
        let mut grads = Vec::new();
        let mut ok = true;
        for dr in -half..=half {
            for dc in -half..=half {
                let rr = (r as i64 + dr) as usize;
                let cc = img.wrap(c as i64 + dc);
                match ctx.cloud.get(rr, ctx.frame.intrinsics.scan_column(rr, cc as i64)) {
                    Some(p) if img.valid(rr, cc) => {
                        pts_i.push(*p);
                        vals.push(img.at(rr, cc));
                        depths.push(img.depth[rr * w + cc]);
                        let u_raw = cc as f64 - ctx.frame.lut.at(rr, cc as f64);
                        match sample(img, &ctx.frame.lut, u_raw, rr as f64) {
                            Some((_, g)) => grads.push(g),
                            None => ok = false,
                        }
                    }
                    _ => ok = false,
                }
            }
        }
        if !ok {
            continue;
        }
        let spread = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - depths.iter().copied().fold(f64::INFINITY, f64::min);
        if spread >= cfg.max_depth_spread {
            continue;
        }
        let Ok(reference) = normalized(&DVector::from_vec(vals), cfg.min_std) else { continue };
        let scores = ctx
            .directions
            .iter()
            .map(|d| {
                let dl = r_li * d;
                pts_i
                    .iter()
                    .zip(&grads)
                    .map(|(p, g)| {
                        let p_l = ctx.frame.t_il.inverse().transform_point(p);
                        let proj = project_n(&p_l, &ctx.frame.intrinsics, &ctx.frame.lut);
                        let slope = proj.map(|x| x.ring_slope).unwrap_or(ctx.frame.intrinsics.fy());
                        (g * project_n_jacobian(&p_l, &ctx.frame.intrinsics, slope) * dl)[0].abs()
                    })
                    .sum::<f64>()
            })
            .collect();
        let points = pts_i.iter().map(|p| ctx.pose.transform_point(p)).collect();
        out.push(Candidate {
            row: r,
            col: c,
            scores,
            feature: PatchFeature {
                id: 0,
                points,
                reference,
                reference_image: ctx.frame.id,
                reference_depth: depths,
                alive: true,
            },
        });
    }
    out
}

/// Selects the top `count` candidates per degenerate direction.
pub fn extract_candidates(ctx: &ExtractionContext, count: usize, cfg: &PhotoConfig) -> Vec<Candidate> {
    if count == 0 || ctx.directions.is_empty() {
        return Vec::new();
    }
    let mut cands = score_candidates(ctx, cfg);
    let mut taken = vec![false; cands.len()];
    let mut order = Vec::new();
    for k in 0..ctx.directions.len() {
        let mut idx: Vec<usize> = (0..cands.len()).filter(|&i| !taken[i] && cands[i].scores[k] > 0.0).collect();
        idx.sort_by(|&a, &b| cands[b].scores[k].total_cmp(&cands[a].scores[k]).then(a.cmp(&b)));
        for &i in idx.iter().take(count) {
            taken[i] = true;
            order.push(i);
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for i in order {
        out.push(std::mem::replace(
            &mut cands[i],
            Candidate {
                row: 0,
                col: 0,
                scores: Vec::new(),
                feature: PatchFeature {
                    id: 0,
                    points: Vec::new(),
                    reference: DVector::zeros(0),
                    reference_image: 0,
                    reference_depth: Vec::new(),
                    alive: false,
                },
            },
        ));
    }
    out
}
