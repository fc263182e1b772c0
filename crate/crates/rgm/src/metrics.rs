//! Registration quality metrics.
//!
//! Rotation errors come in two flavors: the isotropic geodesic angle of
//! the relative rotation (MIE) and the anisotropic mean of absolute
//! Z-Y-X Euler angles (MAE). Cloud-level quality uses a clipped chamfer
//! distance; correspondence-level quality uses RMSE over ground-truth
//! pairs and the inlier ratio of predicted pairs. Every report embeds the
//! conventions so exported numbers are self-describing.

use crate::geom::{PointCloud, RigidTransform};
use crate::scalar::Real;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Success thresholds: MAE(R) < 1 degree and MAE(t) < 0.1.
pub const SUCCESS_MAE_R_DEG: f64 = 1.0;
pub const SUCCESS_MAE_T: f64 = 0.1;

/// Default clip value for the chamfer distance.
pub const DEFAULT_CCD_CLIP: f64 = 0.1;

/// Default RMSE threshold for registration recall.
pub const DEFAULT_TAU1: f64 = 0.2;

/// Default residual threshold for the inlier ratio.
pub const DEFAULT_TAU2: f64 = 0.1;

/// Default inlier-ratio threshold for feature-match recall.
pub const DEFAULT_FMR_THRESH: f64 = 0.05;

/// Thresholds and flags shared across a whole evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    pub ccd_clip: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub fmr_thresh: f64,
    /// Report the per-point mean chamfer instead of the raw sum.
    pub ccd_normalized: bool,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            ccd_clip: DEFAULT_CCD_CLIP,
            tau1: DEFAULT_TAU1,
            tau2: DEFAULT_TAU2,
            fmr_thresh: DEFAULT_FMR_THRESH,
            ccd_normalized: false,
        }
    }
}

impl MetricSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ccd_clip", self.ccd_clip),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
        ] {
            if !(v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.fmr_thresh) {
            return Err(Error::Parameter(format!(
                "fmr_thresh must be in [0, 1], got {}",
                self.fmr_thresh
            )));
        }
        Ok(())
    }
}

/// All per-sample metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean absolute Z-Y-X Euler angle of the relative rotation, degrees.
    pub mae_r: f64,
    /// Mean absolute per-axis translation difference.
    pub mae_t: f64,
    /// Geodesic angle of the relative rotation, degrees.
    pub mie_r: f64,
    /// Euclidean norm of the translation difference.
    pub mie_t: f64,
    /// Clipped chamfer distance between the aligned source and the target.
    pub ccd: f64,
    /// MAE thresholds met.
    pub success: bool,
    /// RMSE over ground-truth pairs under the predicted transform.
    pub rmse: f64,
    /// rmse < tau1.
    pub rr_hit: bool,
    /// Fraction of predicted pairs within tau2 of ground truth.
    pub inlier_ratio: f64,
    /// inlier_ratio > fmr_thresh.
    pub fmr_hit: bool,
}

/// One line per metric stating the convention it was computed under.
pub fn conventions() -> &'static str {
    "mie_r: geodesic angle of R_gt^T R_pre, degrees; \
     mie_t: ||t_pre - t_gt||_2; \
     mae_r: mean |Z-Y-X intrinsic Euler angles| of R_gt^T R_pre, degrees; \
     mae_t: mean |t_pre - t_gt| per axis; \
     ccd: sum over both clouds of min(nearest squared distance, clip); \
     rmse: root mean squared pair distance under the predicted transform; \
     inlier_ratio: fraction of predicted pairs within tau2 of ground truth"
}

/// Rotation and translation errors between a predicted and a ground-truth
/// transform, returned as `(mae_r, mae_t, mie_r, mie_t)` with the angles
/// in degrees.
pub fn transform_errors<T: Real>(
    pre: &RigidTransform<T>,
    gt: &RigidTransform<T>,
) -> (f64, f64, f64, f64) {
    let rel = gt.rotation.transpose() * pre.rotation;
    let cos = ((rel.trace().to_f64().unwrap() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let mie_r = cos.acos().to_degrees();

    let (z, y, x) = rel.euler_zyx();
    let mae_r = (z.abs() + y.abs() + x.abs()).to_f64().unwrap().to_degrees() / 3.0;

    let dt = pre.translation - gt.translation;
    let mie_t = dt.norm().to_f64().unwrap();
    let mae_t = (dt.x().abs() + dt.y().abs() + dt.z().abs())
        .to_f64()
        .unwrap()
        / 3.0;
    (mae_r, mae_t, mie_r, mie_t)
}

/// Clipped chamfer distance: for each point the squared distance to the
/// other cloud's nearest point, clipped at `d`, summed over both
/// directions.
pub fn ccd<T: Real>(x: &PointCloud<T>, y: &PointCloud<T>, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Parameter(format!("clip must be > 0, got {d}")));
    }
    let one_way = |from: &PointCloud<T>, to: &PointCloud<T>| -> f64 {
        from.points
            .iter()
            .map(|p| {
                let nearest = to
                    .points
                    .iter()
                    .map(|q| p.dist_sq(q).to_f64().unwrap())
                    .fold(f64::INFINITY, f64::min);
                nearest.min(d)
            })
            .sum()
    };
    Ok(one_way(x, y) + one_way(y, x))
}

/// [`ccd`] divided by the total point count of both clouds.
pub fn ccd_normalized<T: Real>(x: &PointCloud<T>, y: &PointCloud<T>, d: f64) -> Result<f64> {
    Ok(ccd(x, y, d)? / (x.len() + y.len()) as f64)
}

/// Registration success: both MAE thresholds strictly met.
pub fn success(mae_r: f64, mae_t: f64) -> bool {
    mae_r < SUCCESS_MAE_R_DEG && mae_t < SUCCESS_MAE_T
}

/// RMSE of ground-truth matched pairs under the predicted transform, and
/// whether it clears the recall threshold `tau1`.
pub fn rmse_and_rr<T: Real>(
    pre: &RigidTransform<T>,
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    gt_pairs: &[(usize, usize)],
    tau1: f64,
) -> Result<(f64, bool)> {
    if gt_pairs.is_empty() {
        return Err(Error::Parameter(
            "RMSE needs at least one ground-truth pair".into(),
        ));
    }
    let mut sum = 0.0;
    for &(i, j) in gt_pairs {
        if i >= x.len() || j >= y.len() {
            return Err(Error::Parameter(format!(
                "pair ({i}, {j}) out of bounds for clouds of {} and {} points",
                x.len(),
                y.len()
            )));
        }
        sum += pre.apply(&x.points[i]).dist_sq(&y.points[j]).to_f64().unwrap();
    }
    let rmse = (sum / gt_pairs.len() as f64).sqrt();
    Ok((rmse, rmse < tau1))
}

/// Inlier ratio of predicted pairs under the ground-truth transform, and
/// whether it beats the feature-match recall threshold. An empty
/// prediction scores 0.
pub fn inlier_ratio_fmr<T: Real>(
    pred_pairs: &[(usize, usize)],
    gt: &RigidTransform<T>,
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    tau2: f64,
    fmr_thresh: f64,
) -> Result<(f64, bool)> {
    if pred_pairs.is_empty() {
        return Ok((0.0, 0.0 > fmr_thresh));
    }
    let mut inliers = 0usize;
    for &(i, j) in pred_pairs {
        if i >= x.len() || j >= y.len() {
            return Err(Error::Parameter(format!(
                "pair ({i}, {j}) out of bounds for clouds of {} and {} points",
                x.len(),
                y.len()
            )));
        }
        if gt.apply(&x.points[i]).dist(&y.points[j]).to_f64().unwrap() < tau2 {
            inliers += 1;
        }
    }
    let ir = inliers as f64 / pred_pairs.len() as f64;
    Ok((ir, ir > fmr_thresh))
}

/// Builds the full per-sample report from a predicted transform and
/// correspondence set against the ground truth.
pub fn evaluate_sample<T: Real>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    pre: &RigidTransform<T>,
    gt: &RigidTransform<T>,
    gt_pairs: &[(usize, usize)],
    pred_pairs: &[(usize, usize)],
    settings: &MetricSettings,
) -> Result<MetricReport> {
    settings.validate()?;
    let (mae_r, mae_t, mie_r, mie_t) = transform_errors(pre, gt);
    let aligned = crate::geom::apply_transform(pre, x);
    let ccd_val = if settings.ccd_normalized {
        ccd_normalized(&aligned, y, settings.ccd_clip)?
    } else {
        ccd(&aligned, y, settings.ccd_clip)?
    };
    let (rmse, rr_hit) = rmse_and_rr(pre, x, y, gt_pairs, settings.tau1)?;
    let (inlier_ratio, fmr_hit) =
        inlier_ratio_fmr(pred_pairs, gt, x, y, settings.tau2, settings.fmr_thresh)?;
    Ok(MetricReport {
        mae_r,
        mae_t,
        mie_r,
        mie_t,
        ccd: ccd_val,
        success: success(mae_r, mae_t),
        rmse,
        rr_hit,
        inlier_ratio,
        fmr_hit,
    })
}

/// Dataset-level aggregation of per-sample reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub samples: usize,
    pub mean_mae_r: f64,
    pub mean_mae_t: f64,
    pub mean_mie_r: f64,
    pub mean_mie_t: f64,
    pub mean_ccd: f64,
    pub mean_rmse: f64,
    pub mean_inlier_ratio: f64,
    /// Fraction of samples with `success` set (recall).
    pub recall: f64,
    /// Fraction of samples with `rr_hit` set (registration recall).
    pub registration_recall: f64,
    /// Fraction of samples with `fmr_hit` set (feature-match recall).
    pub feature_match_recall: f64,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<MetricAggregate> {
    if reports.is_empty() {
        return Err(Error::Parameter("cannot aggregate zero reports".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let rate = |f: fn(&MetricReport) -> bool| {
        reports.iter().filter(|r| f(r)).count() as f64 / n
    };
    Ok(MetricAggregate {
        samples: reports.len(),
        mean_mae_r: mean(|r| r.mae_r),
        mean_mae_t: mean(|r| r.mae_t),
        mean_mie_r: mean(|r| r.mie_r),
        mean_mie_t: mean(|r| r.mie_t),
        mean_ccd: mean(|r| r.ccd),
        mean_rmse: mean(|r| r.rmse),
        mean_inlier_ratio: mean(|r| r.inlier_ratio),
        recall: rate(|r| r.success),
        registration_recall: rate(|r| r.rr_hit),
        feature_match_recall: rate(|r| r.fmr_hit),
    })
}

/// Evaluation report as JSON: settings, conventions, per-sample records,
/// and the aggregate.
pub fn report_to_json(
    reports: &[MetricReport],
    settings: &MetricSettings,
) -> Result<String> {
    let value = serde_json::json!({
        "conventions": conventions(),
        "settings": settings,
        "aggregate": aggregate(reports)?,
        "samples": reports,
    });
    Ok(serde_json::to_string_pretty(&value).expect("plain data serializes"))
}

/// One CSV row per sample, for plotting.
pub fn report_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(
        "sample,mae_r,mae_t,mie_r,mie_t,ccd,success,rmse,rr_hit,inlier_ratio,fmr_hit\n",
    );
    for (i, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{}\n",
            r.mae_r,
            r.mae_t,
            r.mie_r,
            r.mie_t,
            r.ccd,
            r.success as u8,
            r.rmse,
            r.rr_hit as u8,
            r.inlier_ratio,
            r.fmr_hit as u8
        ));
    }
    out
}
