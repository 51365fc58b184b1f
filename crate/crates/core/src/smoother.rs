//! Fixed-lag sliding-window smoother.
//!
//! Variables are the navigation states inside the window plus one gravity
//! direction. Factors contribute dense normal-equation blocks; the window is
//! solved with Levenberg-Marquardt and states leaving the horizon are folded
//! into a Gaussian prior by Schur complement.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometric::{CachedNeighbours, GeometricFactor, PoseBlock, VoxelGeoMap};
use crate::geometry::{log_so3, right_jacobian_inv, GravityDir, NavState, Tangent15, BA, BG, POS, ROT, VEL};
use crate::inertial::{bias_walk_residual, preintegrate, preintegration_residual, ImuNoise, Preintegrated};
use crate::io::config::{GeoConfig, OptConfig, PhotoConfig};
use crate::io::ImuSample;
use crate::photometric::{PatchFeature, PhotometricFactor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    State(u64),
    Gravity,
}

impl Key {
    pub fn dim(&self) -> usize {
        match self {
            Key::State(_) => 15,
            Key::Gravity => 2,
        }
    }
}

/// Current estimates of all window variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Values {
    pub states: BTreeMap<u64, NavState>,
    pub gravity: GravityDir,
}

impl Values {
    pub fn state(&self, id: u64) -> &NavState {
        &self.states[&id]
    }

    fn offsets(&self) -> (BTreeMap<Key, usize>, usize) {
        let mut map = BTreeMap::new();
        let mut off = 0;
        for id in self.states.keys() {
            map.insert(Key::State(*id), off);
            off += 15;
        }
        map.insert(Key::Gravity, off);
        (map, off + 2)
    }

    fn retract(&self, offsets: &BTreeMap<Key, usize>, delta: &DVector<f64>) -> Values {
        let mut out = self.clone();
        for (id, x) in out.states.iter_mut() {
            let o = offsets[&Key::State(*id)];
            let d = Tangent15::from_fn(|i, _| delta[o + i]);
            *x = x.retract(&d);
        }
        let o = offsets[&Key::Gravity];
        out.gravity = self.gravity.retract(&Vector2::new(delta[o], delta[o + 1]));
        out
    }
}

/// Gauss-Newton contribution of one factor over its own keys.
#[derive(Clone, Debug)]
pub struct Linearized {
    pub keys: Vec<Key>,
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub cost: f64,
}

impl Linearized {
    /// From a whitened residual and its Jacobian over the concatenated keys.
    pub fn from_residual(keys: Vec<Key>, r: &DVector<f64>, j: &DMatrix<f64>) -> Self {
        let jt = j.transpose();
        Self { keys, hessian: &jt * j, gradient: jt * r, cost: 0.5 * r.norm_squared() }
    }

    /// Embeds a pose-only block into the state tangent.
    pub fn from_pose_block(id: u64, b: &PoseBlock) -> Self {
        let mut h = DMatrix::zeros(15, 15);
        let mut g = DVector::zeros(15);
        for r in 0..6 {
            g[r] = b.jtr[r];
            for c in 0..6 {
                h[(r, c)] = b.jtj[(r, c)];
            }
        }
        Self { keys: vec![Key::State(id)], hessian: h, gradient: g, cost: b.cost }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FactorKind {
    Prior,
    Marginal,
    Imu,
    BiasWalk,
    Geometric,
    Photometric,
    Linear,
}

pub trait Factor: std::fmt::Debug + Send {
    fn keys(&self) -> Vec<Key>;
    fn kind(&self) -> FactorKind;
    /// Refreshes any data association, then linearizes at `values`.
    fn linearize(&mut self, values: &Values) -> Linearized;
    fn cost(&self, values: &Values) -> f64;
    /// Re-associates one last time at `values` and stops refreshing.
    fn freeze(&mut self, _values: &Values) {}
    fn as_marginal(&self) -> Option<&MarginalPrior> {
        None
    }
}

/// Derivative of `local(lin, x.retract(d))` with respect to `d` at 0.
fn state_local_jacobian(lin: &NavState, x: &NavState) -> DMatrix<f64> {
    let mut j = DMatrix::identity(15, 15);
    let phi = log_so3(&lin.pose.rotation.inverse().compose(&x.pose.rotation));
    let jr = right_jacobian_inv(&phi);
    let rp = lin.pose.rotation.inverse().0 * x.pose.rotation.0;
    for r in 0..3 {
        for c in 0..3 {
            j[(ROT + r, ROT + c)] = jr[(r, c)];
            j[(POS + r, POS + c)] = rp[(r, c)];
        }
    }
    j
}

fn gravity_local_jacobian(lin: &GravityDir, g: &GravityDir) -> DMatrix<f64> {
    let h = 1e-7;
    let mut j = DMatrix::zeros(2, 2);
    for k in 0..2 {
        let mut d = Vector2::zeros();
        d[k] = h;
        let a = lin.local(&g.retract(&d));
        let b = lin.local(&g.retract(&-d));
        let col = (a - b) / (2.0 * h);
        j[(0, k)] = col[0];
        j[(1, k)] = col[1];
    }
    j
}

fn to_dvec<const R: usize>(v: &SMatrix<f64, R, 1>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Diagonal Gaussian prior on one state.
#[derive(Clone, Debug)]
pub struct StatePrior {
    pub id: u64,
    pub mean: NavState,
    /// Standard deviations in tangent order.
    pub sigma: Tangent15,
}

impl StatePrior {
    fn residual(&self, x: &NavState) -> (DVector<f64>, DMatrix<f64>) {
        let w = DMatrix::from_diagonal(&DVector::from_iterator(15, self.sigma.iter().map(|s| 1.0 / s)));
        let r = &w * to_dvec(&self.mean.local(x));
        (r, w * state_local_jacobian(&self.mean, x))
    }
}

impl Factor for StatePrior {
    fn keys(&self) -> Vec<Key> {
        vec![Key::State(self.id)]
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Prior
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        let (r, j) = self.residual(values.state(self.id));
        Linearized::from_residual(self.keys(), &r, &j)
    }
    fn cost(&self, values: &Values) -> f64 {
        0.5 * self.residual(values.state(self.id)).0.norm_squared()
    }
}

/// Isotropic prior on the gravity direction, `sigma` in radians.
#[derive(Clone, Debug)]
pub struct GravityPrior {
    pub mean: GravityDir,
    pub sigma: f64,
}

impl Factor for GravityPrior {
    fn keys(&self) -> Vec<Key> {
        vec![Key::Gravity]
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Prior
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        let d = self.mean.local(&values.gravity);
        let r = DVector::from_column_slice(d.as_slice()) / self.sigma;
        let j = gravity_local_jacobian(&self.mean, &values.gravity) / self.sigma;
        Linearized::from_residual(self.keys(), &r, &j)
    }
    fn cost(&self, values: &Values) -> f64 {
        0.5 * (self.mean.local(&values.gravity) / self.sigma).norm_squared()
    }
}

/// Preintegrated IMU between consecutive states, connected to gravity.
#[derive(Clone, Debug)]
pub struct ImuFactor {
    pub i: u64,
    pub j: u64,
    pub segments: Vec<(ImuSample, f64)>,
    pub preint: Preintegrated,
    pub gravity: f64,
}

impl ImuFactor {
    pub fn new(
        i: u64,
        j: u64,
        segments: Vec<(ImuSample, f64)>,
        xi: &NavState,
        noise: &ImuNoise,
        gravity: f64,
    ) -> Result<Self> {
        let preint = preintegrate(&segments, &xi.accel_bias, &xi.gyro_bias, noise)?;
        Ok(Self { i, j, segments, preint, gravity })
    }

    fn residual(&self, values: &Values) -> (DVector<f64>, DMatrix<f64>) {
        let r = preintegration_residual(
            values.state(self.i),
            values.state(self.j),
            &values.gravity,
            &self.preint,
            self.gravity,
        );
        let j = hstack(&[
            DMatrix::from_column_slice(9, 15, r.d_xi.as_slice()),
            DMatrix::from_column_slice(9, 15, r.d_xj.as_slice()),
            DMatrix::from_column_slice(9, 2, r.d_g.as_slice()),
        ]);
        (to_dvec(&r.residual), j)
    }
}

impl Factor for ImuFactor {
    fn keys(&self) -> Vec<Key> {
        vec![Key::State(self.i), Key::State(self.j), Key::Gravity]
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Imu
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        // first-order bias correction degrades for large gyro bias changes
        let xi = values.state(self.i);
        if (xi.gyro_bias - self.preint.lin_gyro_bias).norm() > 2e-3 {
            if let Ok(p) = preintegrate(&self.segments, &xi.accel_bias, &xi.gyro_bias, &self.preint.noise) {
                self.preint = p;
            }
        }
        let (r, j) = self.residual(values);
        Linearized::from_residual(self.keys(), &r, &j)
    }
    fn cost(&self, values: &Values) -> f64 {
        0.5 * self.residual(values).0.norm_squared()
    }
}

#[derive(Clone, Debug)]
pub struct BiasWalkFactor {
    pub i: u64,
    pub j: u64,
    pub dt: f64,
    pub noise: ImuNoise,
}

impl BiasWalkFactor {
    fn residual(&self, values: &Values) -> (DVector<f64>, DMatrix<f64>) {
        let (r, ji, jj) = bias_walk_residual(values.state(self.i), values.state(self.j), self.dt, &self.noise);
        let j = hstack(&[
            DMatrix::from_column_slice(6, 15, ji.as_slice()),
            DMatrix::from_column_slice(6, 15, jj.as_slice()),
        ]);
        (to_dvec(&r), j)
    }
}

impl Factor for BiasWalkFactor {
    fn keys(&self) -> Vec<Key> {
        vec![Key::State(self.i), Key::State(self.j)]
    }
    fn kind(&self) -> FactorKind {
        FactorKind::BiasWalk
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        let (r, j) = self.residual(values);
        Linearized::from_residual(self.keys(), &r, &j)
    }
    fn cost(&self, values: &Values) -> f64 {
        0.5 * self.residual(values).0.norm_squared()
    }
}

/// Point-to-plane terms of one scan. While a map is attached the
/// correspondences are searched again at every linearization.
#[derive(Clone, Debug)]
pub struct GeometricScanFactor {
    pub id: u64,
    pub factor: GeometricFactor,
    pub points: Vec<Vector3<f64>>,
    pub map: Option<Arc<VoxelGeoMap>>,
    pub config: GeoConfig,
    pub cache: Vec<Option<CachedNeighbours>>,
}

impl GeometricScanFactor {
    fn refresh(&mut self, values: &Values) {
        if let Some(map) = &self.map {
            let pose = &values.state(self.id).pose;
            if let Ok(f) = GeometricFactor::build_cached(&self.points, pose, map, &self.config, &mut self.cache) {
                self.factor = f;
            }
        }
    }
}

impl Factor for GeometricScanFactor {
    fn keys(&self) -> Vec<Key> {
        vec![Key::State(self.id)]
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Geometric
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        self.refresh(values);
        let b = self.factor.linearize(&values.state(self.id).pose);
        Linearized::from_pose_block(self.id, &b)
    }
    fn cost(&self, values: &Values) -> f64 {
        self.factor.cost(&values.state(self.id).pose)
    }
    fn freeze(&mut self, values: &Values) {
        self.refresh(values);
        self.map = None;
        self.points = Vec::new();
        self.cache = Vec::new();
    }
}

/// Patch terms of one scan. While features are attached they are projected
/// and tested again at every linearization.
#[derive(Clone, Debug)]
pub struct PhotometricScanFactor {
    pub id: u64,
    pub factor: PhotometricFactor,
    pub features: Option<(Vec<PatchFeature>, PhotoConfig)>,
}

impl PhotometricScanFactor {
    fn refresh(&mut self, values: &Values) {
        if let Some((features, cfg)) = &self.features {
            let (f, _) =
                PhotometricFactor::build(features, self.factor.frame.clone(), &values.state(self.id).pose, cfg);
            self.factor = f;
        }
    }
}

impl Factor for PhotometricScanFactor {
    fn keys(&self) -> Vec<Key> {
        vec![Key::State(self.id)]
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Photometric
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        self.refresh(values);
        let b = self.factor.linearize(&values.state(self.id).pose);
        Linearized::from_pose_block(self.id, &b)
    }
    fn cost(&self, values: &Values) -> f64 {
        self.factor.cost(&values.state(self.id).pose)
    }
    fn freeze(&mut self, values: &Values) {
        self.refresh(values);
        self.features = None;
    }
}

/// Linear Gaussian factor `sum_k A_k local(anchor_k, x_k) - z` used for
/// consistency checks of the marginalization.
#[derive(Clone, Debug)]
pub struct LinearFactor {
    pub keys: Vec<u64>,
    pub blocks: Vec<DMatrix<f64>>,
    pub z: DVector<f64>,
}

impl LinearFactor {
    fn residual(&self, values: &Values) -> (DVector<f64>, DMatrix<f64>) {
        let mut r = -self.z.clone();
        let origin = NavState::at_rest(0.0);
        let mut jac = Vec::new();
        for (id, a) in self.keys.iter().zip(&self.blocks) {
            let x = values.state(*id);
            r += a * to_dvec(&origin.local(x));
            jac.push(a * state_local_jacobian(&origin, x));
        }
        (r, hstack(&jac))
    }
}

impl Factor for LinearFactor {
    fn keys(&self) -> Vec<Key> {
        self.keys.iter().map(|k| Key::State(*k)).collect()
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Linear
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        let (r, j) = self.residual(values);
        Linearized::from_residual(self.keys(), &r, &j)
    }
    fn cost(&self, values: &Values) -> f64 {
        0.5 * self.residual(values).0.norm_squared()
    }
}

/// Gaussian summary of marginalized variables: `0.5 |U d + r0|^2` with `d`
/// the local coordinates of the retained variables at the linearization
/// point.
#[derive(Clone, Debug)]
pub struct MarginalPrior {
    pub keys: Vec<Key>,
    pub lin: Values,
    pub sqrt_info: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl MarginalPrior {
    /// Information matrix `U^T U` (symmetric PSD by construction).
    pub fn information(&self) -> DMatrix<f64> {
        self.sqrt_info.transpose() * &self.sqrt_info
    }

    /// Information vector `U^T r0`.
    pub fn information_vector(&self) -> DVector<f64> {
        self.sqrt_info.transpose() * &self.offset
    }

    fn residual(&self, values: &Values) -> (DVector<f64>, DMatrix<f64>) {
        let dim: usize = self.keys.iter().map(|k| k.dim()).sum();
        let mut d = DVector::zeros(dim);
        let mut jl = DMatrix::zeros(dim, dim);
        let mut o = 0;
        for k in &self.keys {
            match k {
                Key::State(id) => {
                    let (lin, x) = (self.lin.state(*id), values.state(*id));
                    d.rows_mut(o, 15).copy_from(&to_dvec(&lin.local(x)));
                    jl.view_mut((o, o), (15, 15)).copy_from(&state_local_jacobian(lin, x));
                }
                Key::Gravity => {
                    let l = self.lin.gravity.local(&values.gravity);
                    d[o] = l[0];
                    d[o + 1] = l[1];
                    jl.view_mut((o, o), (2, 2)).copy_from(&gravity_local_jacobian(&self.lin.gravity, &values.gravity));
                }
            }
            o += k.dim();
        }
        (&self.sqrt_info * d + &self.offset, &self.sqrt_info * jl)
    }
}

impl Factor for MarginalPrior {
    fn keys(&self) -> Vec<Key> {
        self.keys.clone()
    }
    fn kind(&self) -> FactorKind {
        FactorKind::Marginal
    }
    fn as_marginal(&self) -> Option<&MarginalPrior> {
        Some(self)
    }
    fn linearize(&mut self, values: &Values) -> Linearized {
        let (r, j) = self.residual(values);
        Linearized::from_residual(self.keys(), &r, &j)
    }
    fn cost(&self, values: &Values) -> f64 {
        0.5 * self.residual(values).0.norm_squared()
    }
}

/// Relative cost band treated as equal. Near the optimum a full step lowers
/// the cost by less than its rounding error; accepting it within this band
/// lets the solver land on the optimum, after which it stops.
pub const COST_ROUNDOFF: f64 = 64.0 * f64::EPSILON;

/// Outcome of one optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct OptReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step; non-increasing up to
    /// [`COST_ROUNDOFF`].
    pub accepted_costs: Vec<f64>,
}

/// Sliding window of states, gravity and factors.
#[derive(Debug)]
pub struct FactorWindow {
    pub values: Values,
    factors: Vec<Box<dyn Factor>>,
    pub opt: OptConfig,
    /// Window length in seconds.
    pub length: f64,
    next_id: u64,
    /// Smallest eigenvalue clamped during the last marginalization.
    pub last_clamped: f64,
}

impl FactorWindow {
    pub fn new(x0: NavState, gravity: GravityDir, opt: OptConfig, length: f64) -> Self {
        let mut states = BTreeMap::new();
        states.insert(0, x0);
        Self { values: Values { states, gravity }, factors: Vec::new(), opt, length, next_id: 1, last_clamped: 0.0 }
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn newest(&self) -> (u64, &NavState) {
        let (id, x) = self.values.states.iter().next_back().expect("window holds at least one state");
        (*id, x)
    }

    pub fn oldest(&self) -> (u64, &NavState) {
        let (id, x) = self.values.states.iter().next().expect("window holds at least one state");
        (*id, x)
    }

    pub fn len(&self) -> usize {
        self.values.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.states.is_empty()
    }

    pub fn factors(&self) -> &[Box<dyn Factor>] {
        &self.factors
    }

    /// Appends a state after the newest one.
    pub fn add_state(&mut self, x: NavState) -> Result<u64> {
        let last = self.newest().1.stamp;
        if !(x.stamp > last) {
            return Err(Error::NonMonotonicStamp { stamp: x.stamp, last });
        }
        let id = self.next_id;
        self.values.states.insert(id, x);
        self.next_id += 1;
        Ok(id)
    }

    pub fn add_factor(&mut self, f: Box<dyn Factor>) -> Result<()> {
        for k in f.keys() {
            if let Key::State(id) = k {
                if !self.values.states.contains_key(&id) {
                    return Err(Error::Validation(format!("factor references unknown state {id}")));
                }
            }
        }
        let key = (f.kind(), f.keys());
        let pos = self.factors.partition_point(|g| (g.kind(), g.keys()) <= key);
        self.factors.insert(pos, f);
        Ok(())
    }

    /// Appends a state with the factors that attach it (built against
    /// [`FactorWindow::next_id`]).
    pub fn add_scan(&mut self, x: NavState, factors: Vec<Box<dyn Factor>>) -> Result<u64> {
        let id = self.add_state(x)?;
        for f in factors {
            if let Err(e) = self.add_factor(f) {
                self.factors.retain(|g| !g.keys().contains(&Key::State(id)));
                self.values.states.remove(&id);
                self.next_id -= 1;
                return Err(e);
            }
        }
        Ok(id)
    }

    pub fn cost(&self, values: &Values) -> f64 {
        self.factors.iter().map(|f| f.cost(values)).sum()
    }

    fn assemble(&mut self, offsets: &BTreeMap<Key, usize>, dim: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        let mut cost = 0.0;
        let values = &self.values;
        for f in self.factors.iter_mut() {
            let lin = f.linearize(values);
            scatter(&lin, offsets, &mut h, &mut g);
            cost += lin.cost;
        }
        (h, g, cost)
    }

    /// Levenberg-Marquardt over all window tangents.
    pub fn optimize(&mut self) -> Result<OptReport> {
        let (offsets, dim) = self.values.offsets();
        let mut lambda = self.opt.lambda_init;
        let mut report =
            OptReport { iterations: 0, initial_cost: f64::NAN, final_cost: f64::NAN, accepted_costs: Vec::new() };
        if self.factors.is_empty() {
            report.initial_cost = 0.0;
            report.final_cost = 0.0;
            return Ok(report);
        }
        let mut relinearize = true;
        let (mut h, mut g, mut cost) = (DMatrix::zeros(0, 0), DVector::zeros(0), 0.0);
        while report.iterations < self.opt.max_iterations {
            if relinearize {
                (h, g, cost) = self.assemble(&offsets, dim);
                if !cost.is_finite() {
                    return Err(Error::NonFiniteCost(format!("cost {cost} at iteration {}", report.iterations)));
                }
                if report.initial_cost.is_nan() {
                    report.initial_cost = cost;
                }
                relinearize = false;
            }
            report.iterations += 1;
            let mut damped = h.clone();
            for k in 0..dim {
                damped[(k, k)] += lambda * (h[(k, k)] + 1.0);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= self.opt.lambda_up;
                continue;
            };
            let delta = chol.solve(&-&g);
            let trial = self.values.retract(&offsets, &delta);
            let new_cost = self.cost(&trial);
            if new_cost.is_finite() && new_cost <= cost * (1.0 + COST_ROUNDOFF) {
                self.values = trial;
                lambda *= self.opt.lambda_down;
                report.accepted_costs.push(new_cost);
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                relinearize = true;
                report.final_cost = new_cost;
                if delta.norm() < self.opt.min_step || rel < self.opt.min_rel_decrease {
                    break;
                }
            } else {
                lambda *= self.opt.lambda_up;
            }
        }
        if report.final_cost.is_nan() {
            report.final_cost = cost;
        }
        Ok(report)
    }

    /// Freezes the associations of every factor attached to state `id`.
    pub fn freeze_state(&mut self, id: u64) {
        let values = &self.values;
        for f in self.factors.iter_mut() {
            if f.keys().contains(&Key::State(id)) {
                f.freeze(values);
            }
        }
    }

    /// Marginalizes states older than `horizon`, always keeping the newest.
    /// Returns the number of removed states.
    pub fn marginalize(&mut self, horizon: f64) -> usize {
        let mut removed = 0;
        while self.len() > 1 && self.oldest().1.stamp < horizon {
            self.marginalize_oldest();
            removed += 1;
        }
        removed
    }

    fn marginalize_oldest(&mut self) {
        let (m, _) = self.oldest();
        let key = Key::State(m);
        let (connected, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.factors).into_iter().partition(|f| f.keys().contains(&key));
        self.factors = rest;
        let mut retained: Vec<Key> = connected.iter().flat_map(|f| f.keys()).filter(|k| *k != key).collect();
        retained.sort();
        retained.dedup();

        let mut offsets = BTreeMap::new();
        offsets.insert(key, 0);
        let mut dim = 15;
        for k in &retained {
            offsets.insert(*k, dim);
            dim += k.dim();
        }
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        for mut f in connected {
            let lin = f.linearize(&self.values);
            scatter(&lin, &offsets, &mut h, &mut g);
        }
        self.values.states.remove(&m);
        if retained.is_empty() {
            return;
        }
        let r = dim - 15;
        let hmm = h.view((0, 0), (15, 15)).into_owned();
        let hrm = h.view((15, 0), (r, 15)).into_owned();
        let hrr = h.view((15, 15), (r, r)).into_owned();
        let gm = g.rows(0, 15).into_owned();
        let gr = g.rows(15, r).into_owned();
        let hmm_inv = pseudo_inverse(&hmm);
        let schur = hrr - &hrm * &hmm_inv * hrm.transpose();
        let schur = (&schur + schur.transpose()) * 0.5;
        let grad = gr - &hrm * &hmm_inv * gm;

        let eig = schur.symmetric_eigen();
        let max_ev = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let floor = 1e-12 * max_ev;
        self.last_clamped = eig.eigenvalues.min().min(0.0);
        if self.last_clamped < -1e-9 * max_ev {
            log::warn!("marginal information clamped: eigenvalue {:.3e}", self.last_clamped);
        }
        let kept: Vec<usize> = (0..r).filter(|&i| eig.eigenvalues[i] > floor).collect();
        let mut u = DMatrix::zeros(kept.len(), r);
        let mut off = DVector::zeros(kept.len());
        for (row, &i) in kept.iter().enumerate() {
            let s = eig.eigenvalues[i].sqrt();
            let v = eig.eigenvectors.column(i);
            u.row_mut(row).copy_from(&(v.transpose() * s));
            off[row] = v.dot(&grad) / s;
        }
        let mut lin_states = BTreeMap::new();
        for k in &retained {
            if let Key::State(id) = k {
                lin_states.insert(*id, self.values.states[id]);
            }
        }
        let prior = MarginalPrior {
            keys: retained,
            lin: Values { states: lin_states, gravity: self.values.gravity },
            sqrt_info: u,
            offset: off,
        };
        self.add_factor(Box::new(prior)).expect("retained keys exist");
    }
}

fn scatter(lin: &Linearized, offsets: &BTreeMap<Key, usize>, h: &mut DMatrix<f64>, g: &mut DVector<f64>) {
    let mut local = 0;
    let locs: Vec<(usize, usize, usize)> = lin
        .keys
        .iter()
        .map(|k| {
            let l = local;
            local += k.dim();
            (offsets[k], l, k.dim())
        })
        .collect();
    for &(gi, li, di) in &locs {
        for r in 0..di {
            g[gi + r] += lin.gradient[li + r];
        }
        for &(gj, lj, dj) in &locs {
            for r in 0..di {
                for c in 0..dj {
                    h[(gi + r, gj + c)] += lin.hessian[(li + r, lj + c)];
                }
            }
        }
    }
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..eig.eigenvalues.len() {
        let ev = eig.eigenvalues[i];
        if ev > 1e-12 * max_ev {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() / ev;
        }
    }
    out
}

/// Prior sigmas for the first state: a tight pose, loose velocity and biases.
pub fn gauge_sigma() -> Tangent15 {
    let mut s = Tangent15::zeros();
    for k in 0..3 {
        s[ROT + k] = 1e-6;
        s[POS + k] = 1e-6;
        s[VEL + k] = 0.1;
        s[BA + k] = 0.2;
        s[BG + k] = 0.01;
    }
    s
}

/// Rotation helper for tests and diagnostics.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) * 0.5;
    c.clamp(-1.0, 1.0).acos()
}
