//! Depth extraction from aggregated cost volumes.

use rayon::prelude::*;

use crate::cost_volume::CostVolume;
use crate::error::{invalid, Result};
use crate::geometry::DepthMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionMode {
    Argmin,
    SoftArgmin,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DepthExtractionConfig {
    pub mode: ExtractionMode,
    /// Soft-argmin temperature in cost units.
    pub softness: f64,
    /// Quadratic sub-plane refinement around the argmin (argmin mode only).
    pub subplane: bool,
}

impl Default for DepthExtractionConfig {
    fn default() -> Self {
        Self { mode: ExtractionMode::Argmin, softness: 0.01, subplane: true }
    }
}

impl DepthExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ExtractionMode::SoftArgmin && !(self.softness.is_finite() && self.softness > 0.0) {
            return Err(invalid(format!("soft-argmin softness must be positive, got {}", self.softness)));
        }
        Ok(())
    }
}

/// Fractional plane index of the minimum of one cost profile, or `None` when no
/// plane is valid. Ties resolve to the lowest index.
pub fn profile_argmin(profile: &[Option<f64>], subplane: bool) -> Option<f64> {
    let (best, c0) = profile
        .iter()
        .enumerate()
        .filter_map(|(n, c)| c.map(|c| (n, c)))
        .fold(None, |acc: Option<(usize, f64)>, (n, c)| match acc {
            Some((_, bc)) if bc <= c => acc,
            _ => Some((n, c)),
        })?;
    if !subplane || best == 0 || best + 1 >= profile.len() {
        return Some(best as f64);
    }
    let (Some(cm), Some(cp)) = (profile[best - 1], profile[best + 1]) else {
        return Some(best as f64);
    };
    let curvature = cm - 2.0 * c0 + cp;
    if curvature <= 0.0 {
        return Some(best as f64);
    }
    let offset = (0.5 * (cm - cp) / curvature).clamp(-0.5, 0.5);
    Some(best as f64 + offset)
}

/// Soft-argmin expectation of the plane index; `None` when no plane is valid.
pub fn profile_soft_argmin(profile: &[Option<f64>], softness: f64) -> Option<f64> {
    let cmin = profile.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !cmin.is_finite() {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (n, c) in profile.iter().enumerate() {
        if let Some(c) = c {
            let w = (-(c - cmin) / softness).exp();
            num += w * n as f64;
            den += w;
        }
    }
    Some(num / den)
}

/// Depth map from a cost volume. Pixels with no valid plane are invalid.
pub fn extract_depth(volume: &CostVolume, config: &DepthExtractionConfig) -> Result<DepthMap> {
    config.validate()?;
    let (w, h) = (volume.width(), volume.height());
    let sampling = *volume.sampling();
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    depth
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (drow, vrow))| {
            let mut profile = Vec::with_capacity(volume.planes());
            for x in 0..w {
                profile.clear();
                profile.extend(volume.profile(y * w + x));
                let index = match config.mode {
                    ExtractionMode::Argmin => profile_argmin(&profile, config.subplane),
                    ExtractionMode::SoftArgmin => profile_soft_argmin(&profile, config.softness),
                };
                if let Some(index) = index {
                    drow[x] = sampling.depth_at(index);
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
        PlaneSampling::new(0.5, 10.0, 16).unwrap()
    }

    #[test]
    fn unique_minimum() {
        let v = CostVolume::from_fn(3, 2, sampling(), |_, _, n| (n as f64 - 7.0).abs()).unwrap();
        let cfg = DepthExtractionConfig { subplane: false, ..Default::default() };
        let d = extract_depth(&v, &cfg).unwrap();
        assert!(d.depths().iter().all(|x| *x == sampling().depth(7)));
        // Symmetric V profile: refinement keeps the vertex.
        let d = extract_depth(&v, &DepthExtractionConfig::default()).unwrap();
        assert!(d.depths().iter().all(|x| *x == sampling().depth(7)));
    }

    #[test]
    fn flat_volume_breaks_ties_low() {
        let v = CostVolume::from_fn(2, 2, sampling(), |_, _, _| 0.3).unwrap();
        let d = extract_depth(&v, &DepthExtractionConfig::default()).unwrap();
        assert_eq!(d.valid_count(), 4);
        assert!(d.depths().iter().all(|x| *x == 0.5));
    }

    #[test]
    fn all_invalid_volume() {
        let s = sampling();
        let v = CostVolume::new(2, 1, s, vec![0.0; 2 * 16], vec![false; 2 * 16]).unwrap();
        let d = extract_depth(&v, &DepthExtractionConfig::default()).unwrap();
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn quadratic_recovers_parabola_vertex() {
        let p: Vec<Option<f64>> = (0..10).map(|n| Some((n as f64 - 4.3).powi(2))).collect();
        assert!((profile_argmin(&p, true).unwrap() - 4.3).abs() < 1e-12);
        // Boundary argmin: no refinement.
        let p: Vec<Option<f64>> = (0..10).map(|n| Some(n as f64)).collect();
        assert_eq!(profile_argmin(&p, true), Some(0.0));
        // Missing neighbor: no refinement.
        let p = vec![Some(3.0), None, Some(0.0), Some(1.0)];
        assert_eq!(profile_argmin(&p, true), Some(2.0));
    }

    #[test]
    fn soft_argmin_validation() {
        let v = CostVolume::from_fn(1, 1, sampling(), |_, _, n| n as f64).unwrap();
        let cfg = DepthExtractionConfig { mode: ExtractionMode::SoftArgmin, softness: 0.0, subplane: false };
        assert!(extract_depth(&v, &cfg).is_err());
    }

    #[test]
    fn soft_argmin_converges_to_argmin() {
        let v = CostVolume::from_fn(4, 3, sampling(), |x, y, n| ((n as f64) - (x + 2 * y) as f64).abs() * 0.1 + 0.05).unwrap();
        let hard = extract_depth(&v, &DepthExtractionConfig { subplane: false, ..Default::default() }).unwrap();
        let soft = extract_depth(
            &v,
            &DepthExtractionConfig { mode: ExtractionMode::SoftArgmin, softness: 1e-6, subplane: false },
        )
        .unwrap();
        for (a, b) in hard.depths().iter().zip(soft.depths()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn output_within_extended_range(costs in proptest::collection::vec(proptest::option::of(0.0f64..1.0), 16), soft in any::<bool>()) {
            let s = sampling();
            let valid: Vec<bool> = costs.iter().map(|c| c.is_some()).collect();
            let v = CostVolume::new(1, 1, s, costs.iter().map(|c| c.unwrap_or(0.0)).collect(), valid).unwrap();
            let cfg = if soft {
                DepthExtractionConfig { mode: ExtractionMode::SoftArgmin, softness: 0.05, subplane: false }
            } else {
                DepthExtractionConfig::default()
            };
            let d = extract_depth(&v, &cfg).unwrap();
            if let Some(x) = d.at(0) {
                let half = 0.5 * s.spacing();
                prop_assert!(x >= s.d_min - half - 1e-12 && x <= s.d_max + half + 1e-12);
            } else {
                prop_assert!(costs.iter().all(|c| c.is_none()));
            }
        }

        #[test]
        fn argmin_invariant_to_monotone_transform(costs in proptest::collection::vec(0u8..6, 16)) {
            let s = sampling();
            let base = CostVolume::new(1, 1, s, costs.iter().map(|c| *c as f64).collect(), vec![true; 16]).unwrap();
            let mapped = CostVolume::new(1, 1, s, costs.iter().map(|c| (*c as f64 * 0.7).exp() + 3.0).collect(), vec![true; 16]).unwrap();
            let cfg = DepthExtractionConfig { subplane: false, ..Default::default() };
            prop_assert_eq!(extract_depth(&base, &cfg).unwrap(), extract_depth(&mapped, &cfg).unwrap());
        }
    }
}
