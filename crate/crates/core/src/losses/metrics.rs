use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::DepthMap;
use crate::normals::{angle_degrees, NormalMap};
use crate::reduce::{median, pairwise_mean};

/// Standard depth error statistics. Threshold accuracies are percentages of
/// pixels with `max(pred/gt, gt/pred) < 1.25^i` (strict).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    #[serde(rename = "delta<1.25")]
    pub delta1: f64,
    #[serde(rename = "delta<1.25^2")]
    pub delta2: f64,
    #[serde(rename = "delta<1.25^3")]
    pub delta3: f64,
    #[serde(rename = "abs.rel")]
    pub abs_rel: f64,
    #[serde(rename = "sq.rel")]
    pub sq_rel: f64,
    pub rmse: f64,
    #[serde(rename = "rmse.log")]
    pub rmse_log: f64,
    #[serde(rename = "scale.inv")]
    pub scale_inv: f64,
}

impl DepthMetrics {
    pub const COLUMNS: [&'static str; 8] =
        ["delta<1.25", "delta<1.25^2", "delta<1.25^3", "abs.rel", "sq.rel", "rmse", "rmse.log", "scale.inv"];

    pub fn values(&self) -> [f64; 8] {
        [self.delta1, self.delta2, self.delta3, self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.scale_inv]
    }
}

/// Angular error statistics in degrees; percentages count angles strictly
/// below each threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    #[serde(rename = "11.25")]
    pub pct_11_25: f64,
    #[serde(rename = "22.5")]
    pub pct_22_5: f64,
    #[serde(rename = "30")]
    pub pct_30: f64,
}

impl NormalMetrics {
    pub const COLUMNS: [&'static str; 6] = ["11.25", "22.5", "30", "mean", "median", "rmse"];

    pub fn values(&self) -> [f64; 6] {
        [self.pct_11_25, self.pct_22_5, self.pct_30, self.mean, self.median, self.rmse]
    }
}

/// Depth error statistics over pixels valid in both maps.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    if !pred.same_shape(gt.width(), gt.height()) {
        return Err(invalid("depth maps differ in size"));
    }
    let pairs: Vec<(f64, f64)> = (0..pred.len()).filter_map(|i| Some((pred.at(i)?, gt.at(i)?))).collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDomain("no jointly valid depth pixels".into()));
    }
    if let Some((p, g)) = pairs.iter().find(|(p, g)| *p <= 0.0 || *g <= 0.0) {
        return Err(invalid(format!("non-positive depth in evaluation set ({p}, {g})")));
    }
    let n = pairs.len() as f64;
    let pct = |limit: f64| {
        let hits = pairs.iter().filter(|(p, g)| (p / g).max(g / p) < limit).count();
        100.0 * hits as f64 / n
    };
    let collect = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pairs.iter().map(|&(p, g)| f(p, g)).collect() };
    let mean = |v: Vec<f64>| pairwise_mean(&v).unwrap_or(0.0);

    let log_diff = collect(&|p, g| p.ln() - g.ln());
    let log_mean = mean(log_diff.clone());
    // Two-pass variance: identical to mean(d²) − mean(d)² but free of cancellation.
    let scale_var = mean(log_diff.iter().map(|d| (d - log_mean) * (d - log_mean)).collect());

    Ok(DepthMetrics {
        delta1: pct(1.25),
        delta2: pct(1.25f64.powi(2)),
        delta3: pct(1.25f64.powi(3)),
        abs_rel: mean(collect(&|p, g| (p - g).abs() / g)),
        sq_rel: mean(collect(&|p, g| (p - g) * (p - g) / g)),
        rmse: mean(collect(&|p, g| (p - g) * (p - g))).sqrt(),
        rmse_log: mean(log_diff.iter().map(|d| d * d).collect()).sqrt(),
        scale_inv: scale_var.max(0.0).sqrt(),
    })
}

/// Angles within this many degrees of a threshold count as reaching it.
pub const ANGLE_THRESHOLD_EPS: f64 = 1e-9;

/// Angular error statistics over pixels valid in both maps.
pub fn normal_metrics(pred: &NormalMap, gt: &NormalMap) -> Result<NormalMetrics> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(invalid("normal maps differ in size"));
    }
    let mut angles: Vec<f64> = (0..pred.normals().len())
        .filter_map(|i| Some(angle_degrees(&pred.at(i)?, &gt.at(i)?)))
        .collect();
    if angles.is_empty() {
        return Err(Error::EmptyDomain("no jointly valid normal pixels".into()));
    }
    let n = angles.len() as f64;
    let below = |t: f64| 100.0 * angles.iter().filter(|a| **a < t - ANGLE_THRESHOLD_EPS).count() as f64 / n;
    let (p1, p2, p3) = (below(11.25), below(22.5), below(30.0));
    let mean = pairwise_mean(&angles).unwrap_or(0.0);
    let squares: Vec<f64> = angles.iter().map(|a| a * a).collect();
    let rmse = pairwise_mean(&squares).unwrap_or(0.0).sqrt();
    let median = median(&mut angles).unwrap_or(0.0);
    Ok(NormalMetrics { mean, median, rmse, pct_11_25: p1, pct_22_5: p2, pct_30: p3 })
}
