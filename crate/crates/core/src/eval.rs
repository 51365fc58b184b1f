//! Trajectory metrics: absolute trajectory error after rigid alignment and
//! relative error over fixed travelled distances.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Rotation};

/// Stamp association tolerance in seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;

/// Pairs every estimated pose with the reference pose nearest in time.
pub fn associate(est: &[(f64, Pose)], reference: &[(f64, Pose)], tol: f64) -> Result<Vec<(Pose, Pose)>> {
    if reference.is_empty() {
        return Err(Error::Association("empty reference trajectory".into()));
    }
    let mut out = Vec::with_capacity(est.len());
    for (t, p) in est {
        let k = reference.partition_point(|r| r.0 < *t);
        let best = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < reference.len())
            .min_by(|&a, &b| (reference[a].0 - t).abs().total_cmp(&(reference[b].0 - t).abs()))
            .expect("reference is not empty");
        let dt = (reference[best].0 - t).abs();
        if dt > tol {
            return Err(Error::Association(format!(
                "no reference pose within {tol} s of stamp {t} (nearest {dt:.4} s)"
            )));
        }
        out.push((*p, reference[best].1));
    }
    if out.len() < 2 {
        return Err(Error::Association(format!("{} associated poses, need at least 2", out.len())));
    }
    Ok(out)
}

/// Rigid transform `T` minimizing `sum |dst - T src|^2`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut sign = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * vt;
    Pose::new(Rotation(r), mu_d - r * mu_s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub pairs: usize,
    pub ate_rmse_m: f64,
    /// `None` when the reference path is shorter than the delta.
    pub re_percent: Option<f64>,
    pub re_delta_m: f64,
    pub path_length_m: f64,
}

/// Translation RMSE after aligning estimated positions to the reference.
pub fn ate_rmse(pairs: &[(Pose, Pose)]) -> f64 {
    let est: Vec<_> = pairs.iter().map(|p| p.0.translation).collect();
    let gt: Vec<_> = pairs.iter().map(|p| p.1.translation).collect();
    let t = umeyama(&est, &gt);
    let sq: f64 = est.iter().zip(&gt).map(|(e, g)| (t.transform_point(e) - g).norm_squared()).sum();
    (sq / pairs.len() as f64).sqrt()
}

/// RMSE of relative translation error over segments of `delta` metres of
/// reference path, in percent of `delta`.
pub fn relative_error(pairs: &[(Pose, Pose)], delta: f64) -> Option<f64> {
    let mut dist = vec![0.0; pairs.len()];
    for i in 1..pairs.len() {
        dist[i] = dist[i - 1] + (pairs[i].1.translation - pairs[i - 1].1.translation).norm();
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for i in 0..pairs.len() {
        let j = dist.partition_point(|d| *d < dist[i] + delta);
        if j >= pairs.len() {
            break;
        }
        let rel_gt = pairs[i].1.inverse().compose(&pairs[j].1);
        let rel_est = pairs[i].0.inverse().compose(&pairs[j].0);
        let e = rel_gt.inverse().compose(&rel_est).translation.norm() / delta;
        sq += e * e;
        count += 1;
    }
    (count > 0).then(|| 100.0 * (sq / count as f64).sqrt())
}

pub fn evaluate(est: &[(f64, Pose)], reference: &[(f64, Pose)], delta: f64) -> Result<Metrics> {
    let pairs = associate(est, reference, ASSOCIATION_TOLERANCE)?;
    let path = pairs.windows(2).map(|w| (w[1].1.translation - w[0].1.translation).norm()).sum();
    Ok(Metrics {
        pairs: pairs.len(),
        ate_rmse_m: ate_rmse(&pairs),
        re_percent: relative_error(&pairs, delta),
        re_delta_m: delta,
        path_length_m: path,
    })
}
