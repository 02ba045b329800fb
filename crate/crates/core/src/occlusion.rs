//! Occlusion probability from cross-view depth disagreement and cost-profile
//! flatness, and fusion of per-pair depth maps into a final depth map.

use rayon::prelude::*;

use crate::cost_volume::CostVolume;
use crate::depth::{extract_depth, DepthExtractionConfig};
use crate::error::{invalid, Result};
use crate::geometry::DepthMap;
use crate::reduce::{median, pairwise_sum};

/// Per-pixel occlusion probability with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMap {
    width: usize,
    height: usize,
    p: Vec<f64>,
    valid: Vec<bool>,
}

impl OcclusionMap {
    pub fn new(width: usize, height: usize, p: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let map = Self::from_raw_unchecked(width, height, p, valid);
        if map.p.len() != width * height || map.valid.len() != width * height {
            return Err(invalid("occlusion map buffers do not match dimensions"));
        }
        map.check_range()?;
        Ok(map)
    }

    /// Every pixel valid with probability `p`.
    pub fn filled(width: usize, height: usize, p: f64) -> Result<Self> {
        Self::new(width, height, vec![p; width * height], vec![true; width * height])
    }

    /// Builds a map without range checks. Consumers validate with
    /// [`OcclusionMap::check_range`].
    pub fn from_raw_unchecked(width: usize, height: usize, p: Vec<f64>, valid: Vec<bool>) -> Self {
        Self { width, height, p, valid }
    }

    pub fn check_range(&self) -> Result<()> {
        for (i, (&p, &v)) in self.p.iter().zip(&self.valid).enumerate() {
            if v && !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("occlusion probability {p} at pixel {i} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, i: usize) -> Option<f64> {
        self.valid[i].then_some(self.p[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Relative depth spread at which the disagreement cue saturates.
    pub tau_rel: f64,
    /// Weight of the cost-flatness cue.
    pub kappa: f64,
    pub extraction: DepthExtractionConfig,
    /// Pixels with `P >= threshold` take the averaged-volume depth.
    pub threshold: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { tau_rel: 0.05, kappa: 0.5, extraction: DepthExtractionConfig::default(), threshold: 0.5 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rel.is_finite() && self.tau_rel > 0.0) {
            return Err(invalid(format!("tau_rel must be positive, got {}", self.tau_rel)));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(invalid(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(invalid(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        self.extraction.validate()
    }
}

fn check_inputs(initial: &[DepthMap], volume: &CostVolume) -> Result<()> {
    if initial.len() < 2 {
        return Err(invalid(format!("need at least 2 initial depth maps, got {}", initial.len())));
    }
    if initial.iter().any(|d| !d.same_shape(volume.width(), volume.height())) {
        return Err(invalid("initial depth maps do not match the cost volume"));
    }
    Ok(())
}

fn valid_depths_at(initial: &[DepthMap], i: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(initial.iter().filter_map(|d| d.at(i)));
}

/// Flatness `c_min / c_mean` of a cost profile: 0 for a sharp zero-cost peak,
/// 1 when flat. Profiles with no valid or only zero costs count as flat.
pub fn profile_flatness(profile: &[f64]) -> f64 {
    if profile.is_empty() {
        return 1.0;
    }
    let mean = pairwise_sum(profile) / profile.len() as f64;
    if mean <= 0.0 {
        return 1.0;
    }
    let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    (min / mean).clamp(0.0, 1.0)
}

/// `P(q) = clamp((1−κ)·min(1, δ/τ) + κ·f, 0, 1)` with `δ` the relative spread
/// `(max − min) / median` of the valid initial depths and `f` the flatness of
/// the averaged cost profile. Invalid where fewer than 2 initial depths are
/// valid.
pub fn occlusion_probability(initial: &[DepthMap], avg_volume: &CostVolume, cfg: &RefineConfig) -> Result<OcclusionMap> {
    cfg.validate()?;
    check_inputs(initial, avg_volume)?;
    let (w, h) = (avg_volume.width(), avg_volume.height());
    let mut p = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    p.par_chunks_mut(w).zip(valid.par_chunks_mut(w)).enumerate().for_each(|(y, (prow, vrow))| {
        let mut depths = Vec::with_capacity(initial.len());
        let mut costs = Vec::with_capacity(avg_volume.planes());
        for x in 0..w {
            let i = y * w + x;
            valid_depths_at(initial, i, &mut depths);
            if depths.len() < 2 {
                continue;
            }
            let med = median(&mut depths).expect("non-empty");
            let spread = (depths[depths.len() - 1] - depths[0]) / med;
            costs.clear();
            costs.extend(avg_volume.profile(i).flatten());
            let f = profile_flatness(&costs);
            let disagreement = (spread / cfg.tau_rel).min(1.0);
            prow[x] = ((1.0 - cfg.kappa) * disagreement + cfg.kappa * f).clamp(0.0, 1.0);
            vrow[x] = true;
        }
    });
    Ok(OcclusionMap { width: w, height: h, p, valid })
}

/// Final depth: the averaged-volume extraction where `P >= threshold`, `P`
/// is invalid, or fewer than 2 initial depths are valid; otherwise the median
/// of the valid initial depths together with the extraction.
pub fn refine_depth(
    initial: &[DepthMap],
    avg_volume: &CostVolume,
    occ: &OcclusionMap,
    cfg: &RefineConfig,
) -> Result<DepthMap> {
    cfg.validate()?;
    check_inputs(initial, avg_volume)?;
    let (w, h) = (avg_volume.width(), avg_volume.height());
    if occ.width != w || occ.height != h {
        return Err(invalid("occlusion map does not match the cost volume"));
    }
    occ.check_range()?;
    let extracted = extract_depth(avg_volume, &cfg.extraction)?;
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    depth.par_chunks_mut(w).zip(valid.par_chunks_mut(w)).enumerate().for_each(|(y, (drow, vrow))| {
        let mut depths = Vec::with_capacity(initial.len() + 1);
        for x in 0..w {
            let i = y * w + x;
            valid_depths_at(initial, i, &mut depths);
            let occluded = occ.at(i).is_none_or(|p| p >= cfg.threshold);
            let value = match extracted.at(i) {
                Some(e) if occluded || depths.len() < 2 => Some(e),
                Some(e) => {
                    depths.push(e);
                    median(&mut depths)
                }
                None => median(&mut depths),
            };
            if let Some(d) = value {
                drow[x] = d;
                vrow[x] = true;
            }
        }
    });
    DepthMap::new(w, h, depth, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PlaneSampling;
    use proptest::prelude::*;

    fn sampling() -> PlaneSampling {
        PlaneSampling::new(1.0, 4.0, 16).unwrap()
    }

    fn peaked(w: usize, h: usize, at: usize) -> CostVolume {
        CostVolume::from_fn(w, h, sampling(), |_, _, n| (n as f64 - at as f64).abs() * 0.1).unwrap()
    }

    fn flat(w: usize, h: usize) -> CostVolume {
        CostVolume::from_fn(w, h, sampling(), |_, _, _| 0.3).unwrap()
    }

    fn constant_depth(w: usize, h: usize, d: f64) -> DepthMap {
        DepthMap::from_depths(w, h, vec![d; w * h]).unwrap()
    }

    #[test]
    fn agreement_with_sharp_peak_is_unoccluded() {
        let v = peaked(4, 3, 5);
        let d = constant_depth(4, 3, 2.0);
        let p = occlusion_probability(&[d.clone(), d], &v, &RefineConfig::default()).unwrap();
        assert!(p.values().iter().all(|x| *x == 0.0));
        assert_eq!(p.valid_count(), 12);
    }

    #[test]
    fn saturated_cues_give_one() {
        let v = flat(3, 2);
        for kappa in [0.0, 0.3, 1.0] {
            let cfg = RefineConfig { kappa, ..Default::default() };
            let p = occlusion_probability(&[constant_depth(3, 2, 2.0), constant_depth(3, 2, 2.2)], &v, &cfg).unwrap();
            assert!(p.values().iter().all(|x| *x == 1.0), "kappa {kappa}");
        }
    }

    #[test]
    fn too_few_views_or_valid_depths() {
        let v = flat(2, 1);
        assert!(occlusion_probability(&[constant_depth(2, 1, 1.0)], &v, &RefineConfig::default()).is_err());
        let half = DepthMap::new(2, 1, vec![1.0, 1.0], vec![true, false]).unwrap();
        let p = occlusion_probability(&[half, constant_depth(2, 1, 1.0)], &v, &RefineConfig::default()).unwrap();
        assert_eq!(p.valid_mask(), &[true, false]);
    }

    #[test]
    fn map_validation() {
        assert!(OcclusionMap::new(1, 1, vec![1.2], vec![true]).is_err());
        assert!(OcclusionMap::new(1, 1, vec![1.2], vec![false]).is_ok());
        assert!(OcclusionMap::new(2, 1, vec![0.0], vec![true]).is_err());
        assert!(RefineConfig { kappa: 1.5, ..Default::default() }.validate().is_err());
        assert!(RefineConfig { tau_rel: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn consensus_is_kept() {
        let v = peaked(3, 3, 5);
        let d5 = sampling().depth(5);
        let d = constant_depth(3, 3, d5);
        let occ = occlusion_probability(&[d.clone(), d.clone()], &v, &RefineConfig::default()).unwrap();
        let fin = refine_depth(&[d.clone(), d], &v, &occ, &RefineConfig::default()).unwrap();
        assert!(fin.depths().iter().all(|x| (x - d5).abs() < 1e-12));
    }

    #[test]
    fn occluded_branch_uses_volume() {
        let v = peaked(3, 2, 9);
        let occ = OcclusionMap::filled(3, 2, 1.0).unwrap();
        let fin = refine_depth(&[constant_depth(3, 2, 1.1), constant_depth(3, 2, 1.2)], &v, &occ, &RefineConfig::default())
            .unwrap();
        assert!(fin.depths().iter().all(|x| (x - sampling().depth(9)).abs() < 1e-12));
    }

    #[test]
    fn unoccluded_branch_takes_median() {
        let v = peaked(1, 1, 9);
        let occ = OcclusionMap::filled(1, 1, 0.0).unwrap();
        let inputs = [constant_depth(1, 1, 1.1), constant_depth(1, 1, 1.2)];
        let fin = refine_depth(&inputs, &v, &occ, &RefineConfig::default()).unwrap();
        assert_eq!(fin.at(0), Some(1.2));
    }

    proptest! {
        #[test]
        fn probability_symmetric_and_scale_invariant(
            d in proptest::collection::vec((0.5f64..5.0, 0.5f64..5.0, 0.5f64..5.0), 6),
            costs in proptest::collection::vec(0.0f64..1.0, 6 * 16),
            s in 0.01f64..100.0,
        ) {
            let maps: Vec<DepthMap> = (0..3)
                .map(|j| DepthMap::from_depths(6, 1, d.iter().map(|t| [t.0, t.1, t.2][j]).collect()).unwrap())
                .collect();
            let v = CostVolume::from_fn(6, 1, sampling(), |x, _, n| costs[n * 6 + x]).unwrap();
            let cfg = RefineConfig::default();
            let a = occlusion_probability(&maps, &v, &cfg).unwrap();
            let rev: Vec<DepthMap> = maps.iter().rev().cloned().collect();
            prop_assert_eq!(&a, &occlusion_probability(&rev, &v, &cfg).unwrap());
            let b = occlusion_probability(&maps, &v.scaled(s).unwrap(), &cfg).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let fin = refine_depth(&maps, &v, &a, &cfg).unwrap();
            let ext = extract_depth(&v, &cfg.extraction).unwrap();
            for (i, di) in d.iter().enumerate() {
                let mut all = [di.0, di.1, di.2, ext.at(i).unwrap()];
                all.sort_by(f64::total_cmp);
                let f = fin.at(i).unwrap();
                prop_assert!(f >= all[0] && f <= all[3]);
            }
        }

        #[test]
        fn duplicating_every_view_keeps_probability(
            d in proptest::collection::vec((0.5f64..5.0, 0.5f64..5.0), 5),
            costs in proptest::collection::vec(0.0f64..1.0, 5 * 16),
        ) {
            let maps: Vec<DepthMap> = (0..2)
                .map(|j| DepthMap::from_depths(5, 1, d.iter().map(|t| if j == 0 { t.0 } else { t.1 }).collect()).unwrap())
                .collect();
            let v = CostVolume::from_fn(5, 1, sampling(), |x, _, n| costs[n * 5 + x]).unwrap();
            let doubled: Vec<DepthMap> = maps.iter().chain(maps.iter()).cloned().collect();
            let cfg = RefineConfig::default();
            prop_assert_eq!(occlusion_probability(&maps, &v, &cfg).unwrap(), occlusion_probability(&doubled, &v, &cfg).unwrap());
        }
    }
}
