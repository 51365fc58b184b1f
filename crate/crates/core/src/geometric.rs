//! Deskewing, subsampling, the voxel-hash map and point-to-plane factors,
//! plus the localizability analysis that detects degenerate directions.

use rustc_hash::FxHashMap;

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{skew, Pose};
use crate::io::config::{GeoConfig, MapConfig};
use crate::io::LidarScan;

/// Per-column motion of the LiDAR relative to its pose at scan end.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskewTable {
    /// `(t, T_{L_e L_t})` for every column, in column order.
    pub entries: Vec<(f64, Pose)>,
}

impl DeskewTable {
    pub fn identity(scan: &LidarScan) -> Self {
        Self { entries: (0..scan.cols()).map(|c| (scan.column_time(c), Pose::identity())).collect() }
    }

    /// Transform of the column nearest to fractional column `u`, with wrap.
    pub fn at_column(&self, u: f64) -> &Pose {
        let w = self.entries.len() as i64;
        let c = (u.round() as i64).rem_euclid(w) as usize;
        &self.entries[c].1
    }
}

/// Organized cloud in the IMU frame at scan end; `None` marks no return.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskewedCloud {
    pub rows: usize,
    pub cols: usize,
    pub points: Vec<Option<Vector3<f64>>>,
}

impl DeskewedCloud {
    pub fn get(&self, row: usize, col: usize) -> Option<&Vector3<f64>> {
        self.points[row * self.cols + col].as_ref()
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.points.iter().flatten()
    }
}

/// Motion-compensates a scan given IMU poses `T_WI` at every column time and
/// at scan end.
pub fn deskew(
    scan: &LidarScan,
    column_poses: &[Pose],
    end_pose: &Pose,
    t_il: &Pose,
) -> Result<(DeskewedCloud, DeskewTable)> {
    let (h, w) = (scan.rows(), scan.cols());
    if column_poses.len() != w {
        return Err(Error::Validation(format!(
            "deskew needs a state for each of {w} columns, got {}",
            column_poses.len()
        )));
    }
    let base = t_il.inverse().compose(&end_pose.inverse());
    let mut entries = Vec::with_capacity(w);
    for (c, pose) in column_poses.iter().enumerate() {
        entries.push((scan.column_time(c), base.compose(pose).compose(t_il)));
    }
    let mut points = vec![None; h * w];
    for r in 0..h {
        for c in 0..w {
            if scan.is_valid(r, c) {
                let p = entries[c].1.transform_point(&scan.point(r, c));
                points[r * w + c] = Some(t_il.transform_point(&p));
            }
        }
    }
    Ok((DeskewedCloud { rows: h, cols: w, points }, DeskewTable { entries }))
}

/// Integer cell of `p` on a grid of edge `size`.
pub fn voxel_key(p: &Vector3<f64>, size: f64) -> [i64; 3] {
    [(p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64]
}

/// Voxel-hash point store with the count-and-spacing admission rule.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub max_per_voxel: usize,
    pub min_dist: f64,
    voxels: FxHashMap<[i64; 3], Vec<Vector3<f64>>>,
    len: usize,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64, max_per_voxel: usize, min_dist: f64) -> Self {
        Self { voxel_size, max_per_voxel, min_dist, voxels: FxHashMap::default(), len: 0 }
    }

    pub fn from_config(cfg: &GeoConfig) -> Self {
        Self::new(cfg.voxel_size, cfg.max_points_per_voxel, cfg.min_point_dist)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Inserts `p` unless its voxel is full or already has a point within
    /// `min_dist`.
    pub fn admit(&mut self, p: Vector3<f64>) -> bool {
        let key = voxel_key(&p, self.voxel_size);
        let cell = self.voxels.entry(key).or_default();
        let md2 = self.min_dist * self.min_dist;
        if cell.len() >= self.max_per_voxel || cell.iter().any(|q| (q - p).norm_squared() <= md2) {
            return false;
        }
        cell.push(p);
        self.len += 1;
        true
    }

    /// All points in a deterministic order (sorted voxel keys).
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let mut keys: Vec<_> = self.voxels.keys().copied().collect();
        keys.sort_unstable();
        keys.iter().flat_map(|k| self.voxels[k].iter().copied()).collect()
    }

    pub fn voxel(&self, key: &[i64; 3]) -> Option<&Vec<Vector3<f64>>> {
        self.voxels.get(key)
    }

    /// The `k` stored points nearest to `q` within `radius`, sorted by
    /// distance. Searches the 27-neighbourhood first and widens shell by
    /// shell until the radius or the current k-th distance is covered.
    pub fn nearest(&self, q: &Vector3<f64>, k: usize, radius: f64) -> Vec<(f64, Vector3<f64>)> {
        let max_reach = (radius / self.voxel_size).ceil().max(1.0) as i64;
        let c = voxel_key(q, self.voxel_size);
        let r2 = radius * radius;
        let mut best: Vec<(f64, Vector3<f64>)> = Vec::with_capacity(k + 1);
        let visit = |key: [i64; 3], best: &mut Vec<(f64, Vector3<f64>)>| {
            let Some(cell) = self.voxels.get(&key) else { return };
            for p in cell {
                let d2 = (p - q).norm_squared();
                if d2 > r2 || (best.len() == k && d2 >= best[k - 1].0) {
                    continue;
                }
                let pos = best.partition_point(|b| b.0 < d2 || (b.0 == d2 && lex_less(&b.1, p)));
                best.insert(pos, (d2, *p));
                best.truncate(k);
            }
        };
        for reach in 1..=max_reach {
            let inner = if reach == 1 { -1 } else { reach - 1 };
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    for dz in -reach..=reach {
                        if dx.abs().max(dy.abs()).max(dz.abs()) <= inner {
                            continue;
                        }
                        visit([c[0] + dx, c[1] + dy, c[2] + dz], &mut best);
                    }
                }
            }
            // distance from q to the outside of the searched block
            let mut covered = f64::INFINITY;
            for a in 0..3 {
                let lo = (c[a] - reach) as f64 * self.voxel_size;
                let hi = (c[a] + reach + 1) as f64 * self.voxel_size;
                covered = covered.min(q[a] - lo).min(hi - q[a]);
            }
            if covered >= radius || (best.len() == k && best[k - 1].0 <= covered * covered) {
                break;
            }
        }
        best.into_iter().map(|(d2, p)| (d2.sqrt(), p)).collect()
    }
}

fn lex_less(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    (a.x, a.y, a.z) < (b.x, b.y, b.z)
}

/// Keeps every `stride`-th point.
pub fn decimate(points: &[Vector3<f64>], stride: usize) -> Vec<Vector3<f64>> {
    points.iter().step_by(stride.max(1)).copied().collect()
}

/// Voxel admission over a point sequence, in order.
pub fn voxel_filter(points: &[Vector3<f64>], cfg: &GeoConfig) -> Vec<Vector3<f64>> {
    let mut grid = VoxelGrid::from_config(cfg);
    points.iter().copied().filter(|p| grid.admit(*p)).collect()
}

/// Stride decimation followed by voxel admission.
pub fn subsample(points: &[Vector3<f64>], cfg: &GeoConfig) -> Vec<Vector3<f64>> {
    voxel_filter(&decimate(points, cfg.stride), cfg)
}

/// World map with the poses at which it was extended.
#[derive(Clone, Debug)]
pub struct VoxelGeoMap {
    pub grid: VoxelGrid,
    pub insertion_poses: Vec<Pose>,
}

impl VoxelGeoMap {
    pub fn new(cfg: &GeoConfig) -> Self {
        Self { grid: VoxelGrid::from_config(cfg), insertion_poses: Vec::new() }
    }

    /// Transforms `cloud` (IMU frame) into the world and admits it.
    pub fn insert(&mut self, pose: &Pose, cloud: &[Vector3<f64>]) -> usize {
        let n = cloud.iter().filter(|p| self.grid.admit(pose.transform_point(p))).count();
        self.insertion_poses.push(*pose);
        n
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// ASCII `x y z` dump, one point per line.
    pub fn to_xyz(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        for p in self.grid.points() {
            let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
        }
        s
    }
}

/// Point-to-plane association in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneCorrespondence {
    /// Query point in the IMU frame at scan end.
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub plane_point: Vector3<f64>,
    /// Robust weight at the last evaluation.
    pub weight: f64,
}

const PLANE_NEIGHBORS: usize = 5;

/// Plane through neighbours `pts` if they pass the collinearity and flatness
/// tests.
pub fn fit_plane(pts: &[Vector3<f64>], d2: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let n = pts.len() as f64;
    let centroid = pts.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l_max, l_mid) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]]);
    if !(l_max < 3.0 * l_mid) {
        return None;
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(idx[2]).into();
    normal.normalize_mut();
    if pts.iter().any(|p| normal.dot(&(p - centroid)).abs() > d2) {
        return None;
    }
    Some((canonical_sign(normal), centroid))
}

/// Flips `v` so its largest-magnitude component is positive.
pub fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

pub fn find_correspondence(
    p_w: &Vector3<f64>,
    map: &VoxelGeoMap,
    d1: f64,
    d2: f64,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    find_correspondence_cached(p_w, map, d1, d2, &mut None)
}

/// Plane neighbourhood of one query. The neighbour set stays the nearest
/// one while the query moves less than `reach`, half the gap between the
/// last neighbour and the next candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedNeighbours {
    query: Vector3<f64>,
    reach: f64,
    /// In the order of the last fit.
    neighbours: Vec<Vector3<f64>>,
    plane: Option<(Vector3<f64>, Vector3<f64>)>,
}

/// [`find_correspondence`] reusing `slot` when the neighbour set provably
/// has not changed; the result equals a fresh search.
pub fn find_correspondence_cached(
    p_w: &Vector3<f64>,
    map: &VoxelGeoMap,
    d1: f64,
    d2: f64,
    slot: &mut Option<CachedNeighbours>,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if let Some(c) = slot {
        if (p_w - c.query).norm() < c.reach {
            let mut pts = c.neighbours.clone();
            pts.sort_by(|a, b| {
                (a - p_w)
                    .norm_squared()
                    .total_cmp(&(b - p_w).norm_squared())
                    .then_with(|| (a.x, a.y, a.z).partial_cmp(&(b.x, b.y, b.z)).unwrap_or(std::cmp::Ordering::Equal))
            });
            if pts != c.neighbours {
                c.plane = fit_plane(&pts, d2);
                c.neighbours = pts;
            }
            return c.plane;
        }
    }
    let nn = map.grid.nearest(p_w, PLANE_NEIGHBORS + 1, d1);
    if nn.len() < PLANE_NEIGHBORS {
        *slot = None;
        return None;
    }
    let last = nn[PLANE_NEIGHBORS - 1].0;
    let next = nn.get(PLANE_NEIGHBORS).map_or(d1, |x| x.0);
    let neighbours: Vec<Vector3<f64>> = nn[..PLANE_NEIGHBORS].iter().map(|x| x.1).collect();
    let plane = fit_plane(&neighbours, d2);
    *slot = Some(CachedNeighbours { query: *p_w, reach: 0.5 * (next - last), neighbours, plane });
    plane
}

/// Stacked point-to-plane residuals against the current pose.
#[derive(Clone, Debug)]
pub struct GeometricFactor {
    pub correspondences: Vec<PlaneCorrespondence>,
    pub sigma: f64,
    pub huber: f64,
}

/// Accumulated normal equations of a pose-only factor in `(dtheta, dp)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseBlock {
    pub jtj: Matrix6<f64>,
    pub jtr: Vector6<f64>,
    pub cost: f64,
    pub rows: usize,
}

impl PoseBlock {
    pub fn zero() -> Self {
        Self { jtj: Matrix6::zeros(), jtr: Vector6::zeros(), cost: 0.0, rows: 0 }
    }
}

/// Huber weight and robust cost `rho(e)` for raw residual `e` and threshold
/// `delta`.
pub fn huber(e: f64, delta: f64) -> (f64, f64) {
    let a = e.abs();
    if a <= delta {
        (1.0, e * e)
    } else {
        (delta / a, 2.0 * delta * a - delta * delta)
    }
}

/// Raw residual `n . (T p - q)` and its Jacobian in `(dtheta, dp)`.
pub fn point_to_plane(pose: &Pose, c: &PlaneCorrespondence) -> (f64, SMatrix<f64, 1, 6>) {
    let e = c.normal.dot(&(pose.transform_point(&c.point) - c.plane_point));
    let n_i = pose.rotation.inverse().rotate(&c.normal);
    let pn = c.point.cross(&n_i);
    let j = SMatrix::<f64, 1, 6>::from_row_slice(&[pn.x, pn.y, pn.z, n_i.x, n_i.y, n_i.z]);
    (e, j)
}

impl GeometricFactor {
    /// Associates every point against the map at `pose`.
    pub fn build(points: &[Vector3<f64>], pose: &Pose, map: &VoxelGeoMap, cfg: &GeoConfig) -> Result<Self> {
        Self::build_cached(points, pose, map, cfg, &mut Vec::new())
    }

    /// [`GeometricFactor::build`] with one neighbourhood cache slot per point,
    /// kept between calls against the same map.
    pub fn build_cached(
        points: &[Vector3<f64>],
        pose: &Pose,
        map: &VoxelGeoMap,
        cfg: &GeoConfig,
        cache: &mut Vec<Option<CachedNeighbours>>,
    ) -> Result<Self> {
        cache.resize(points.len(), None);
        let mut correspondences = Vec::new();
        for (p, slot) in points.iter().zip(cache.iter_mut()) {
            let pw = pose.transform_point(p);
            if let Some((normal, plane_point)) = find_correspondence_cached(&pw, map, cfg.d1, cfg.d2, slot) {
                correspondences.push(PlaneCorrespondence { point: *p, normal, plane_point, weight: 1.0 });
            }
        }
        if correspondences.len() < cfg.min_correspondences {
            return Err(Error::DegenerateScan { found: correspondences.len(), required: cfg.min_correspondences });
        }
        Ok(Self { correspondences, sigma: cfg.sigma, huber: cfg.huber })
    }

    /// Whitened, Huber-weighted residual vector and `N x 6` Jacobian.
    pub fn stacked(&self, pose: &Pose) -> (nalgebra::DVector<f64>, nalgebra::DMatrix<f64>) {
        let n = self.correspondences.len();
        let mut r = nalgebra::DVector::zeros(n);
        let mut j = nalgebra::DMatrix::zeros(n, 6);
        for (k, c) in self.correspondences.iter().enumerate() {
            let (e, jr) = point_to_plane(pose, c);
            let s = huber(e, self.huber).0.sqrt() / self.sigma;
            r[k] = s * e;
            j.row_mut(k).copy_from(&(jr * s));
        }
        (r, j)
    }

    /// Robust cost at `pose` without derivatives.
    pub fn cost(&self, pose: &Pose) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.correspondences
            .iter()
            .map(|c| {
                let e = c.normal.dot(&(pose.transform_point(&c.point) - c.plane_point));
                0.5 * huber(e, self.huber).1 / s2
            })
            .sum()
    }

    /// Gauss-Newton block with IRLS weights; `cost` is the robust cost.
    pub fn linearize(&mut self, pose: &Pose) -> PoseBlock {
        let mut b = PoseBlock::zero();
        let s2 = self.sigma * self.sigma;
        for c in &mut self.correspondences {
            let (e, j) = point_to_plane(pose, c);
            let (w, rho) = huber(e, self.huber);
            c.weight = w;
            let jt = j.transpose();
            b.jtj += jt * j * (w / s2);
            b.jtr += jt * (e * w / s2);
            b.cost += 0.5 * rho / s2;
            b.rows += 1;
        }
        b
    }
}

/// Eigen-structure of the translation information of a scan.
#[derive(Clone, Debug, PartialEq)]
pub struct Localizability {
    /// Descending.
    pub eigenvalues: Vector3<f64>,
    /// Columns match `eigenvalues`; IMU frame at scan end.
    pub eigenvectors: Matrix3<f64>,
    pub degenerate: [bool; 3],
}

impl Localizability {
    pub fn degenerate_directions(&self) -> Vec<Vector3<f64>> {
        (0..3).filter(|&k| self.degenerate[k]).map(|k| self.eigenvectors.column(k).into()).collect()
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    /// All directions constrained; used when no geometry is available.
    pub fn none() -> Self {
        Self { eigenvalues: Vector3::zeros(), eigenvectors: Matrix3::identity(), degenerate: [true; 3] }
    }
}

/// Translation block of `J^T J`, whitened but not robust-weighted, divided by
/// the correspondence count.
pub fn analyze_localizability(factor: &GeometricFactor, pose: &Pose, threshold: f64) -> Localizability {
    let s2 = factor.sigma * factor.sigma;
    let mut info = Matrix3::zeros();
    for c in &factor.correspondences {
        let n_i = pose.rotation.inverse().rotate(&c.normal);
        info += n_i * n_i.transpose() / s2;
    }
    let count = factor.correspondences.len().max(1) as f64;
    localizability_from_information(&(info / count), threshold)
}

pub fn localizability_from_information(info: &Matrix3<f64>, threshold: f64) -> Localizability {
    let eig = info.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vector3::zeros();
    let mut vectors = Matrix3::zeros();
    for (k, &i) in idx.iter().enumerate() {
        values[k] = eig.eigenvalues[i].max(0.0);
        let v: Vector3<f64> = eig.eigenvectors.column(i).into();
        vectors.set_column(k, &canonical_sign(v.normalize()));
    }
    let degenerate = [values[0] < threshold, values[1] < threshold, values[2] < threshold];
    Localizability { eigenvalues: values, eigenvectors: vectors, degenerate }
}

/// Whether the map should be extended from `pose`.
pub fn needs_map_update(map: &VoxelGeoMap, pose: &Pose, cfg: &MapConfig) -> bool {
    let Some(nearest) = map.insertion_poses.iter().min_by(|a, b| {
        let da = (a.translation - pose.translation).norm();
        let db = (b.translation - pose.translation).norm();
        da.total_cmp(&db)
    }) else {
        return true;
    };
    let dist = (nearest.translation - pose.translation).norm();
    let (r0, p0, _) = nearest.rotation.rpy();
    let (r1, p1, _) = pose.rotation.rpy();
    let wrap = |a: f64| (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    let tilt = wrap(r1 - r0).abs().max(wrap(p1 - p0).abs());
    dist > cfg.update_dist_m || tilt > cfg.update_angle_deg.to_radians()
}

/// Extends the map with `cloud` when [`needs_map_update`] holds.
pub fn maybe_update_map(map: &mut VoxelGeoMap, pose: &Pose, cloud: &[Vector3<f64>], cfg: &MapConfig) -> bool {
    if needs_map_update(map, pose, cfg) {
        map.insert(pose, cloud);
        true
    } else {
        false
    }
}

/// `d(R p)/d(dtheta)` for right perturbation, exposed for photometric use.
pub fn rotate_jacobian(r: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix3<f64> {
    -r * skew(p)
}
