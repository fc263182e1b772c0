//! Correspondence hardening and rigid transform estimation.
//!
//! The path from a soft correspondence matrix to a pose: threshold and run
//! a linear assignment ([`soft_to_hard`]), then fit the transform by
//! weighted SVD or RANSAC. [`register`] wraps the whole loop, re-running
//! the network on the partially aligned cloud.

use crate::correspondence::BinaryCorrespondence;
use crate::diff::{Tape, Tensor};
use crate::geom::{apply_transform, Mat3, PointCloud, RigidTransform, Vec3};
use crate::net::{rgm_forward, NetVars, RgmWeights};
use crate::scalar::{cast, Real};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default RANSAC hypothesis count.
pub const DEFAULT_RANSAC_ITERS: usize = 1000;

/// Default RANSAC inlier threshold, scaled to unit-sphere clouds.
pub const DEFAULT_RANSAC_THRESH: f64 = 0.05;

/// Relative singular-value cutoff below which the covariance is treated
/// as rank deficient.
const RANK_TOL: f64 = 1e-9;

/// Transform estimator used by [`register`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Svd,
    Ransac,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Svd => "svd",
            Estimator::Ransac => "ransac",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd" => Ok(Estimator::Svd),
            "ransac" => Ok(Estimator::Ransac),
            other => Err(Error::Parameter(format!(
                "unknown estimator `{other}` (expected svd or ransac)"
            ))),
        }
    }
}

/// Settings for the registration loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Confidence threshold on row/column sums before assignment.
    pub tau: f64,
    pub estimator: Estimator,
    /// Forward/estimate rounds; each one refines the current alignment.
    pub iterations: usize,
    pub ransac_iters: usize,
    pub ransac_thresh: f64,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tau: 0.5,
            estimator: Estimator::Svd,
            iterations: 2,
            ransac_iters: DEFAULT_RANSAC_ITERS,
            ransac_thresh: DEFAULT_RANSAC_THRESH,
            seed: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Parameter(format!(
                "tau must be in [0, 1], got {}",
                self.tau
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        if self.ransac_iters == 0 {
            return Err(Error::Parameter("ransac_iters must be >= 1".into()));
        }
        if !(self.ransac_thresh > 0.0) {
            return Err(Error::Parameter(format!(
                "ransac_thresh must be > 0, got {}",
                self.ransac_thresh
            )));
        }
        Ok(())
    }
}

/// Result of [`register`].
#[derive(Clone, Debug)]
pub struct RegistrationResult<T: Real> {
    /// Composition of all per-iteration increments.
    pub transform: RigidTransform<T>,
    /// Hard correspondences from the last executed iteration.
    pub correspondences: BinaryCorrespondence,
    /// Soft-correspondence score of each matched pair, same order.
    pub scores: Vec<T>,
    pub per_iteration: Vec<RigidTransform<T>>,
    pub iterations_run: usize,
    /// Set when an iteration could not produce a transform and the loop
    /// kept the best composition so far.
    pub degraded: bool,
    pub estimator: Estimator,
    pub seed: u64,
}

/// Maximum-profit one-to-one assignment of `min(R, C)` pairs, returned as
/// `(row, col)` sorted by row. Scanning order is fixed, so equal-profit
/// instances resolve the same way every run (all-equal profits give the
/// main diagonal).
pub fn lap_hungarian<T: Real>(profit: &Tensor<T>) -> Result<Vec<(usize, usize)>> {
    if !profit.is_finite() {
        return Err(Error::Numeric(
            "assignment profits contain non-finite values".into(),
        ));
    }
    let (r, c) = profit.shape();
    if r <= c {
        return Ok(lap_rows_le_cols(profit));
    }
    let flipped = profit.transpose();
    let mut pairs: Vec<(usize, usize)> = lap_rows_le_cols(&flipped)
        .into_iter()
        .map(|(i, j)| (j, i))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Jonker-Volgenant shortest augmenting path on a cost matrix with
/// `rows <= cols`; 1-indexed internally with column 0 as the virtual root.
fn lap_rows_le_cols<T: Real>(profit: &Tensor<T>) -> Vec<(usize, usize)> {
    let (n, m) = profit.shape();
    let mut top = T::neg_infinity();
    for &p in profit.data() {
        top = top.max(p);
    }
    let cost = |i: usize, j: usize| top - profit.get(i - 1, j - 1);

    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![T::infinity(); m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = T::infinity();
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Hardens a slack-augmented soft correspondence: keep rows and columns of
/// the non-slack block whose sums (slack excluded) exceed `tau`, then
/// solve the assignment on the kept submatrix.
pub fn soft_to_hard<T: Real>(c_tilde: &Tensor<T>, tau: f64) -> Result<BinaryCorrespondence> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Parameter(format!(
            "tau must be in [0, 1], got {tau}"
        )));
    }
    let (rows, cols) = c_tilde.shape();
    if rows < 2 || cols < 2 {
        return Err(Error::Parameter(format!(
            "soft correspondence with slack must be at least 2x2, got {rows}x{cols}"
        )));
    }
    let (n, m) = (rows - 1, cols - 1);
    let tau = cast::<T>(tau);

    let kept_rows: Vec<usize> = (0..n)
        .filter(|&i| (0..m).map(|j| c_tilde.get(i, j)).sum::<T>() > tau)
        .collect();
    let kept_cols: Vec<usize> = (0..m)
        .filter(|&j| (0..n).map(|i| c_tilde.get(i, j)).sum::<T>() > tau)
        .collect();
    if kept_rows.is_empty() || kept_cols.is_empty() {
        return BinaryCorrespondence::new(n, m, Vec::new());
    }

    let mut sub = Tensor::zeros(kept_rows.len(), kept_cols.len());
    for (a, &i) in kept_rows.iter().enumerate() {
        for (b, &j) in kept_cols.iter().enumerate() {
            sub.set(a, b, c_tilde.get(i, j));
        }
    }
    let pairs = lap_hungarian(&sub)?
        .into_iter()
        .map(|(a, b)| (kept_rows[a], kept_cols[b]))
        .collect();
    BinaryCorrespondence::new(n, m, pairs)
}

fn jacobi_eigen_sym3<T: Real>(s: &Mat3<T>) -> (Vec3<T>, Mat3<T>) {
    let mut a = [
        [s.0[0][0], s.0[0][1], s.0[0][2]],
        [s.0[1][0], s.0[1][1], s.0[1][2]],
        [s.0[2][0], s.0[2][1], s.0[2][2]],
    ];
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off <= T::epsilon() * T::epsilon() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (cast::<T>(2.0) * a[p][q]);
            let t = {
                let mag = theta.abs() + (theta * theta + T::one()).sqrt();
                if theta >= T::zero() {
                    T::one() / mag
                } else {
                    -T::one() / mag
                }
            };
            let c = T::one() / (t * t + T::one()).sqrt();
            let sn = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - sn * akq;
                a[k][q] = sn * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - sn * aqk;
                a[q][k] = sn * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - sn * vq;
                row[q] = sn * vp + c * vq;
            }
        }
    }
    (
        Vec3::new(a[0][0], a[1][1], a[2][2]),
        Mat3([v[0], v[1], v[2]]),
    )
}

/// Weighted Kabsch fit: finds the proper rigid transform minimizing
/// `sum w |R x + t - y|^2` over the given `(i, j, w)` triplets.
///
/// Planar supports are fine (the reflection is corrected away); fewer
/// than 3 pairs, or source/target points that are collinear or
/// coincident, are rejected as degenerate.
pub fn weighted_svd<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    corr: &[(usize, usize, T)],
) -> Result<RigidTransform<T>> {
    if corr.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "transform fit needs at least 3 pairs, got {}",
            corr.len()
        )));
    }
    let mut total = T::zero();
    for &(i, j, w) in corr {
        if i >= x.len() || j >= y.len() {
            return Err(Error::Parameter(format!(
                "pair ({i}, {j}) out of bounds for clouds of {} and {} points",
                x.len(),
                y.len()
            )));
        }
        if !(w > T::zero()) {
            return Err(Error::Parameter(format!(
                "pair ({i}, {j}) has non-positive weight"
            )));
        }
        total = total + w;
    }

    let mut xbar = Vec3::zero();
    let mut ybar = Vec3::zero();
    for &(i, j, w) in corr {
        xbar = xbar + x.points[i].scale(w);
        ybar = ybar + y.points[j].scale(w);
    }
    xbar = xbar.scale(T::one() / total);
    ybar = ybar.scale(T::one() / total);

    let mut h = [[T::zero(); 3]; 3];
    for &(i, j, w) in corr {
        let a = x.points[i] - xbar;
        let b = y.points[j] - ybar;
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] = h[r][c] + w * a[r] * b[c];
            }
        }
    }
    let h = Mat3([h[0], h[1], h[2]]);

    let (lambda, vmat) = jacobi_eigen_sym3(&(h.transpose() * h));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| lambda[b].partial_cmp(&lambda[a]).unwrap());
    let sigma: Vec<T> = order
        .iter()
        .map(|&i| lambda[i].max(T::zero()).sqrt())
        .collect();
    let rank_tol = cast::<T>(RANK_TOL);
    if sigma[1] <= sigma[0] * rank_tol || sigma[0] == T::zero() {
        return Err(Error::DegenerateGeometry(
            "correspondence support is collinear or coincident".into(),
        ));
    }

    let col = |m: &Mat3<T>, j: usize| Vec3::new(m.0[0][j], m.0[1][j], m.0[2][j]);
    let v0 = col(&vmat, order[0]);
    let v1 = col(&vmat, order[1]);
    let v2 = v0.cross(&v1);
    let u0 = h.mul_vec(&v0).scale(T::one() / sigma[0]);
    let u1 = h.mul_vec(&v1).scale(T::one() / sigma[1]);
    let u2 = u0.cross(&u1);

    let from_cols = |c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>| {
        Mat3([
            [c0.x(), c1.x(), c2.x()],
            [c0.y(), c1.y(), c2.y()],
            [c0.z(), c1.z(), c2.z()],
        ])
    };
    let umat = from_cols(u0, u1, u2);
    let vmat = from_cols(v0, v1, v2);
    let d = (vmat * umat.transpose()).det();
    let sign = if d >= T::zero() { T::one() } else { -T::one() };
    let corrected = from_cols(u0, u1, u2.scale(sign));
    let rotation = vmat * corrected.transpose();
    let translation = ybar - rotation.mul_vec(&xbar);
    let out = RigidTransform::new(rotation, translation);
    if !out.is_valid(cast(1e-6)) {
        return Err(Error::Numeric(
            "transform fit produced a non-orthonormal rotation".into(),
        ));
    }
    Ok(out)
}

/// RANSAC over 3-pair hypotheses fit with [`weighted_svd`]; the largest
/// consensus set (ties to the earliest hypothesis) is refit on all of its
/// inliers. Deterministic given `seed`.
pub fn ransac_estimate<T: Real>(
    pairs: &[(Vec3<T>, Vec3<T>)],
    iters: usize,
    inlier_thresh: f64,
    seed: u64,
) -> Result<RigidTransform<T>> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "RANSAC needs at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    if iters == 0 || !(inlier_thresh > 0.0) {
        return Err(Error::Parameter(
            "RANSAC needs iters >= 1 and a positive inlier threshold".into(),
        ));
    }
    let xs = PointCloud::new(pairs.iter().map(|p| p.0).collect())?;
    let ys = PointCloud::new(pairs.iter().map(|p| p.1).collect())?;
    let thresh = cast::<T>(inlier_thresh);
    let count_inliers = |t: &RigidTransform<T>| -> Vec<usize> {
        pairs
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| t.apply(a).dist(b) < thresh)
            .map(|(i, _)| i)
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, RigidTransform<T>)> = None;
    for _ in 0..iters {
        let sample = rand::seq::index::sample(&mut rng, pairs.len(), 3);
        let triplet: Vec<(usize, usize, T)> =
            sample.iter().map(|i| (i, i, T::one())).collect();
        let Ok(model) = weighted_svd(&xs, &ys, &triplet) else {
            continue;
        };
        let support = count_inliers(&model).len();
        if best.as_ref().map_or(true, |(b, _)| support > *b) {
            best = Some((support, model));
        }
    }
    let Some((support, model)) = best else {
        return Err(Error::DegenerateGeometry(
            "every RANSAC sample was degenerate".into(),
        ));
    };
    if support < 3 {
        return Ok(model);
    }
    let consensus: Vec<(usize, usize, T)> = count_inliers(&model)
        .into_iter()
        .map(|i| (i, i, T::one()))
        .collect();
    Ok(weighted_svd(&xs, &ys, &consensus).unwrap_or(model))
}

/// Full registration loop: run the network on the current alignment,
/// harden, estimate an increment, move the source cloud, repeat.
pub fn register<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    weights: &RgmWeights<T>,
    settings: &SolverSettings,
) -> Result<RegistrationResult<T>> {
    settings.validate()?;
    let cfg = &weights.config;

    let mut current = x.clone();
    let mut total = RigidTransform::identity();
    let mut per_iteration = Vec::new();
    let mut correspondences = BinaryCorrespondence::empty(x.len(), y.len());
    let mut scores = Vec::new();
    let mut degraded = false;

    for it in 0..settings.iterations {
        let mut tape = Tape::new();
        let binding = weights.params.bind(&mut tape);
        let vars = NetVars::new(&weights.params, &binding);
        let out = rgm_forward(&mut tape, &vars, &current, y, cfg)?;
        let soft = tape.value(out.corr);

        let hard = soft_to_hard(soft, settings.tau)?;
        scores = hard
            .pairs()
            .iter()
            .map(|&(i, j)| soft.get(i, j))
            .collect();
        correspondences = hard;

        let increment = if correspondences.pairs().len() < 3 {
            Err(Error::DegenerateGeometry(format!(
                "iteration {it} kept only {} pairs",
                correspondences.pairs().len()
            )))
        } else {
            match settings.estimator {
                Estimator::Svd => {
                    let triplets: Vec<(usize, usize, T)> = correspondences
                        .pairs()
                        .iter()
                        .map(|&(i, j)| (i, j, T::one()))
                        .collect();
                    weighted_svd(&current, y, &triplets)
                }
                Estimator::Ransac => {
                    let point_pairs: Vec<(Vec3<T>, Vec3<T>)> = correspondences
                        .pairs()
                        .iter()
                        .map(|&(i, j)| (current.points[i], y.points[j]))
                        .collect();
                    ransac_estimate(
                        &point_pairs,
                        settings.ransac_iters,
                        settings.ransac_thresh,
                        settings.seed.wrapping_add(it as u64),
                    )
                }
            }
        };
        match increment {
            Ok(t) => {
                current = apply_transform(&t, &current);
                total = t.compose(&total);
                per_iteration.push(t);
            }
            Err(_) => {
                degraded = true;
                break;
            }
        }
    }

    let iterations_run = per_iteration.len();
    Ok(RegistrationResult {
        transform: total,
        correspondences,
        scores,
        per_iteration,
        iterations_run,
        degraded,
        estimator: settings.estimator,
        seed: settings.seed,
    })
}

/// Serializes a result as JSON: row-major 12-number transforms, matched
/// pair count, estimator, and seed.
pub fn result_to_json<T: Real>(r: &RegistrationResult<T>) -> String {
    let nums = |t: &RigidTransform<T>| -> Vec<f64> {
        t.to_row_major().iter().map(|v| v.to_f64().unwrap()).collect()
    };
    let value = serde_json::json!({
        "transform": nums(&r.transform),
        "per_iteration": r.per_iteration.iter().map(nums).collect::<Vec<_>>(),
        "iterations_run": r.iterations_run,
        "correspondence_count": r.correspondences.pairs().len(),
        "degraded": r.degraded,
        "estimator": r.estimator.to_string(),
        "seed": r.seed,
    });
    serde_json::to_string_pretty(&value).expect("json of plain numbers cannot fail")
}

/// CSV of matched pairs with their soft-correspondence scores.
pub fn scored_pairs_to_csv<T: Real>(corr: &BinaryCorrespondence, scores: &[T]) -> Result<String> {
    if corr.pairs().len() != scores.len() {
        return Err(Error::Parameter(format!(
            "{} pairs but {} scores",
            corr.pairs().len(),
            scores.len()
        )));
    }
    let mut out = String::from("i,j,score\n");
    for (&(i, j), s) in corr.pairs().iter().zip(scores) {
        out.push_str(&format!("{i},{j},{}\n", s.to_f64().unwrap()));
    }
    Ok(out)
}
