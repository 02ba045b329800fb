//! Losses as functions of the predicted depth map, with normals recomputed by
//! the least-squares module, and their analytic derivatives.

use crate::error::{invalid, Result};
use crate::geometry::{CameraIntrinsics, DepthMap};
use crate::normals::{normal_depth_jacobian, normals_from_depth_with, NormalMap, NormalOptions};
use crate::occlusion::OcclusionMap;

use super::{combined_normal_loss, gather, occlusion_aware_loss, total_initial_loss, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferentiableLoss {
    /// `l_in`: normals of the prediction against the combined normal map.
    CombinedNormal,
    /// `l_id + λ l_in`.
    Initial,
    /// `l_rd + β l_rn − α mean(1 − P)`.
    OcclusionAware,
}

/// Everything a loss needs besides the predicted depth.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub gt: &'a DepthMap,
    pub cnm: &'a NormalMap,
    pub k: &'a CameraIntrinsics,
    pub normals: NormalOptions,
    pub occ: Option<&'a OcclusionMap>,
    pub cfg: LossConfig,
}

impl LossInputs<'_> {
    fn occ_for(&self, kind: DifferentiableLoss) -> Result<Option<&OcclusionMap>> {
        match (kind, self.occ) {
            (DifferentiableLoss::OcclusionAware, None) => Err(invalid("occlusion-aware loss needs an occlusion map")),
            (DifferentiableLoss::OcclusionAware, occ) => Ok(occ),
            _ => Ok(None),
        }
    }
}

/// Evaluates `kind` at `pred`, deriving the predicted normals from `pred`.
pub fn loss_of_depth(kind: DifferentiableLoss, inputs: &LossInputs<'_>, pred: &DepthMap) -> Result<f64> {
    let pn = normals_from_depth_with(pred, inputs.k, &inputs.normals)?;
    match kind {
        DifferentiableLoss::CombinedNormal => combined_normal_loss(&pn, inputs.cnm),
        DifferentiableLoss::Initial => total_initial_loss(pred, inputs.gt, &pn, inputs.cnm, &inputs.cfg),
        DifferentiableLoss::OcclusionAware => {
            let occ = inputs.occ_for(kind)?.expect("checked");
            occlusion_aware_loss(pred, inputs.gt, &pn, inputs.cnm, occ, &inputs.cfg)
        }
    }
}

/// Derivative of [`loss_of_depth`] with respect to the depth at pixel index
/// `pixel`, holding the valid set fixed. At an l1 kink the subgradient 0 is
/// used.
pub fn loss_gradient(kind: DifferentiableLoss, inputs: &LossInputs<'_>, pred: &DepthMap, pixel: usize) -> Result<f64> {
    if pixel >= pred.len() {
        return Err(invalid(format!("pixel {pixel} outside the depth map")));
    }
    inputs.cfg.validate()?;
    let occ = inputs.occ_for(kind)?;
    let pn = normals_from_depth_with(pred, inputs.k, &inputs.normals)?;
    let with_depth = kind != DifferentiableLoss::CombinedNormal;
    let terms = gather(with_depth.then_some((pred, inputs.gt)), Some((&pn, inputs.cnm)), occ)?;
    let q = terms.count as f64;
    let normal_weight = match kind {
        DifferentiableLoss::CombinedNormal => 1.0,
        DifferentiableLoss::Initial => inputs.cfg.lambda,
        DifferentiableLoss::OcclusionAware => inputs.cfg.beta,
    };

    let in_q = |i: usize| -> Option<f64> {
        pn.at(i)?;
        inputs.cnm.at(i)?;
        if with_depth {
            pred.at(i)?;
            inputs.gt.at(i)?;
        }
        match occ {
            Some(o) => o.at(i).map(|p| 1.0 - p),
            None => Some(1.0),
        }
    };

    let mut grad = 0.0;
    if with_depth {
        if let (Some(omega), Some(d), Some(g)) = (in_q(pixel), pred.at(pixel), inputs.gt.at(pixel)) {
            let s = if d > g { 1.0 } else if d < g { -1.0 } else { 0.0 };
            grad += omega * s / q;
        }
    }

    let (w, h) = (pred.width(), pred.height());
    let r = inputs.normals.radius;
    let (px, py) = (pixel % w, pixel / w);
    for y in py.saturating_sub(r)..=(py + r).min(h - 1) {
        for x in px.saturating_sub(r)..=(px + r).min(w - 1) {
            let i = y * w + x;
            let Some(omega) = in_q(i) else { continue };
            let target = inputs.cnm.at(i).expect("in Q");
            if let Some((_, dn)) = normal_depth_jacobian(pred, inputs.k, &inputs.normals, x, y)
                .into_iter()
                .find(|(j, _)| *j == pixel)
            {
                grad -= normal_weight * omega * target.dot(&dn) / q;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn setup() -> (CameraIntrinsics, DepthMap, DepthMap, NormalMap, OcclusionMap) {
        let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 3.0, 9, 7).unwrap();
        let pred: Vec<f64> = (0..63)
            .map(|i| {
                let (x, y) = ((i % 9) as f64, (i / 9) as f64);
                2.0 + 0.01 * x + 0.008 * y + 0.004 * ((x * 1.7 + y * 0.9).sin())
            })
            .collect();
        let gt: Vec<f64> = pred.iter().enumerate().map(|(i, d)| d + if i % 2 == 0 { 0.05 } else { -0.04 }).collect();
        let pred = DepthMap::from_depths(9, 7, pred).unwrap();
        let gt = DepthMap::from_depths(9, 7, gt).unwrap();
        let tilt = |i: usize| {
            let t = (i as f64 * 0.37).sin() * 0.3;
            Vector3::new(t.sin() * 0.5, t.sin() * 0.5, -1.0).normalize()
        };
        let cnm = NormalMap::new(9, 7, (0..63).map(tilt).collect(), vec![true; 63]).unwrap();
        let occ = OcclusionMap::new(9, 7, (0..63).map(|i| (i % 5) as f64 * 0.2).collect(), vec![true; 63]).unwrap();
        (k, pred, gt, cnm, occ)
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (k, pred, gt, cnm, occ) = setup();
        let inputs = LossInputs {
            gt: &gt,
            cnm: &cnm,
            k: &k,
            normals: NormalOptions { radius: 1, max_relative_depth_range: 0.5 },
            occ: Some(&occ),
            cfg: LossConfig::default(),
        };
        let h = 1e-6;
        for kind in [DifferentiableLoss::CombinedNormal, DifferentiableLoss::Initial, DifferentiableLoss::OcclusionAware] {
            for pixel in [10, 31, 40, 52] {
                let analytic = loss_gradient(kind, &inputs, &pred, pixel).unwrap();
                let mut plus = pred.clone();
                plus.set(pixel, Some(pred.at(pixel).unwrap() + h)).unwrap();
                let mut minus = pred.clone();
                minus.set(pixel, Some(pred.at(pixel).unwrap() - h)).unwrap();
                let fd = (loss_of_depth(kind, &inputs, &plus).unwrap() - loss_of_depth(kind, &inputs, &minus).unwrap())
                    / (2.0 * h);
                let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-4, "{kind:?} pixel {pixel}: analytic {analytic} fd {fd}");
            }
        }
    }

    #[test]
    fn occlusion_aware_needs_map() {
        let (k, pred, gt, cnm, _) = setup();
        let inputs =
            LossInputs { gt: &gt, cnm: &cnm, k: &k, normals: NormalOptions::default(), occ: None, cfg: LossConfig::default() };
        assert!(loss_of_depth(DifferentiableLoss::OcclusionAware, &inputs, &pred).is_err());
        assert!(loss_gradient(DifferentiableLoss::Initial, &inputs, &pred, 1000).is_err());
    }
}
