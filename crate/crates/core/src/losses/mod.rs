//! Training losses as standalone evaluation functions, plus depth and normal
//! error metrics.
//!
//! Every loss averages over the pixel set `Q` where all of its input maps are
//! valid. Reductions use [`crate::reduce::pairwise_sum`].

mod gradient;
mod metrics;

pub use gradient::{loss_gradient, loss_of_depth, DifferentiableLoss, LossInputs};
pub use metrics::{depth_metrics, normal_metrics, DepthMetrics, NormalMetrics};

use crate::error::{invalid, Error, Result};
use crate::geometry::DepthMap;
use crate::normals::NormalMap;
use crate::occlusion::OcclusionMap;
use crate::reduce::pairwise_sum;

/// Loss weights: `lambda` scales the combined normal loss of the initial
/// loss, `alpha` the occlusion penalty and `beta` the refined normal loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0, alpha: 0.2, beta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("loss weight {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_dims(w: usize, h: usize, others: &[(usize, usize)]) -> Result<()> {
    if others.iter().any(|&(ow, oh)| ow != w || oh != h) {
        return Err(invalid("loss inputs differ in size"));
    }
    Ok(())
}

/// Per-pixel terms over the joint valid set.
struct Terms {
    count: usize,
    /// `ω |D̂ − D|`
    depth: Vec<f64>,
    /// `ω N̂ · N`
    normal: Vec<f64>,
    /// `ω`
    weight: Vec<f64>,
}

fn gather(
    pred: Option<(&DepthMap, &DepthMap)>,
    normals: Option<(&NormalMap, &NormalMap)>,
    occ: Option<&OcclusionMap>,
) -> Result<Terms> {
    let (w, h) = match (pred, normals) {
        (Some((p, _)), _) => (p.width(), p.height()),
        (None, Some((n, _))) => (n.width(), n.height()),
        (None, None) => return Err(invalid("no loss inputs")),
    };
    let mut dims = Vec::new();
    if let Some((p, g)) = pred {
        dims.extend([(p.width(), p.height()), (g.width(), g.height())]);
    }
    if let Some((n, c)) = normals {
        dims.extend([(n.width(), n.height()), (c.width(), c.height())]);
    }
    if let Some(o) = occ {
        dims.push((o.width(), o.height()));
        o.check_range()?;
    }
    check_dims(w, h, &dims)?;

    let mut terms = Terms { count: 0, depth: Vec::new(), normal: Vec::new(), weight: Vec::new() };
    for i in 0..w * h {
        let residual = match pred {
            Some((p, g)) => match (p.at(i), g.at(i)) {
                (Some(a), Some(b)) => Some((b - a).abs()),
                _ => continue,
            },
            None => None,
        };
        let dot = match normals {
            Some((n, c)) => match (n.at(i), c.at(i)) {
                (Some(a), Some(b)) => Some(b.dot(&a)),
                _ => continue,
            },
            None => None,
        };
        let omega = match occ {
            Some(o) => match o.at(i) {
                Some(p) => 1.0 - p,
                None => continue,
            },
            None => 1.0,
        };
        terms.count += 1;
        if let Some(r) = residual {
            terms.depth.push(omega * r);
        }
        if let Some(d) = dot {
            terms.normal.push(omega * d);
        }
        terms.weight.push(omega);
    }
    if terms.count == 0 {
        return Err(Error::EmptyDomain("no jointly valid pixels".into()));
    }
    Ok(terms)
}

/// Mean absolute depth error over pixels valid in both maps.
pub fn depth_loss_l1(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let t = gather(Some((pred, gt)), None, None)?;
    Ok(pairwise_sum(&t.depth) / t.count as f64)
}

/// Negative mean dot product between predicted normals and the combined
/// normal map; −1 for perfect alignment.
pub fn combined_normal_loss(pred_normals: &NormalMap, cnm: &NormalMap) -> Result<f64> {
    let t = gather(None, Some((pred_normals, cnm)), None)?;
    Ok(-(pairwise_sum(&t.normal) / t.count as f64))
}

/// `l_depth + λ · l_normal`, both averaged over the pixels where all four maps are valid.
pub fn total_initial_loss(
    pred_depth: &DepthMap,
    gt_depth: &DepthMap,
    pred_normals: &NormalMap,
    cnm: &NormalMap,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let t = gather(Some((pred_depth, gt_depth)), Some((pred_normals, cnm)), None)?;
    let q = t.count as f64;
    let l_depth = pairwise_sum(&t.depth) / q;
    let l_normal = -(pairwise_sum(&t.normal) / q);
    Ok(l_depth + cfg.lambda * l_normal)
}

/// Occlusion-aware refinement loss
/// `(l_rd + β l_rn) − α · mean(1 − P)` where the depth and normal terms are
/// weighted per pixel by `1 − P`.
pub fn occlusion_aware_loss(
    pred_depth: &DepthMap,
    gt_depth: &DepthMap,
    pred_normals: &NormalMap,
    cnm: &NormalMap,
    occ: &OcclusionMap,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let t = gather(Some((pred_depth, gt_depth)), Some((pred_normals, cnm)), Some(occ))?;
    let q = t.count as f64;
    let l_rd = pairwise_sum(&t.depth) / q;
    let l_rn = -(pairwise_sum(&t.normal) / q);
    let penalty = pairwise_sum(&t.weight) / q;
    Ok(l_rd + cfg.beta * l_rn - cfg.alpha * penalty)
}
