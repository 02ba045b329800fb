//! Plane-sweep photometric cost volumes.
//!
//! Storage is plane-major: plane `n` is a contiguous row-major `width × height`
//! slice, so cell `(x, y, n)` lives at `(n * height + y) * width + x`.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{homography_for_plane, warp_to_reference_plane, CameraIntrinsics, Image, PlaneSampling, Pose};

/// Matching costs over sampled depth planes with per-cell validity.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    sampling: PlaneSampling,
    costs: Vec<f64>,
    valid: Vec<bool>,
}

impl CostVolume {
    pub fn new(
        width: usize,
        height: usize,
        sampling: PlaneSampling,
        costs: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        sampling.validate()?;
        let n = width * height * sampling.count;
        if costs.len() != n || valid.len() != n {
            return Err(invalid(format!(
                "cost volume buffers must hold {width}x{height}x{} cells",
                sampling.count
            )));
        }
        if let Some(c) = costs.iter().zip(&valid).find(|(c, v)| **v && !(c.is_finite() && **c >= 0.0)) {
            return Err(invalid(format!("valid cost {} must be finite and non-negative", c.0)));
        }
        Ok(Self { width, height, sampling, costs, valid })
    }

    /// Volume whose cost at `(x, y, n)` is `f(x, y, n)`, all cells valid.
    pub fn from_fn(
        width: usize,
        height: usize,
        sampling: PlaneSampling,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut costs = Vec::with_capacity(width * height * sampling.count);
        for n in 0..sampling.count {
            for y in 0..height {
                for x in 0..width {
                    costs.push(f(x, y, n));
                }
            }
        }
        let valid = vec![true; costs.len()];
        Self::new(width, height, sampling, costs, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planes(&self) -> usize {
        self.sampling.count
    }

    pub fn sampling(&self) -> &PlaneSampling {
        &self.sampling
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, n: usize) -> usize {
        (n * self.height + y) * self.width + x
    }

    /// Cost at a cell, `None` when invalid.
    pub fn get(&self, x: usize, y: usize, n: usize) -> Option<f64> {
        let i = self.index(x, y, n);
        self.valid[i].then_some(self.costs[i])
    }

    /// Cost profile over planes at pixel index `p = y * width + x`.
    pub fn profile(&self, p: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        let slice = self.width * self.height;
        (0..self.planes()).map(move |n| {
            let i = n * slice + p;
            self.valid[i].then_some(self.costs[i])
        })
    }

    fn same_layout(&self, other: &CostVolume) -> bool {
        self.width == other.width && self.height == other.height && self.sampling == other.sampling
    }

    /// Multiplies every cost by `s >= 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.width, self.height, self.sampling, self.costs.iter().map(|c| c * s).collect(), self.valid.clone())
    }
}

/// Raw plane-sweep cost volume of `source` against `reference`.
///
/// The cost at `(q, n)` is the mean absolute difference over the 3×3 patch
/// around `q` and over channels between the reference and the source warped
/// by the plane-`n` homography. A cell is valid only if every patch sample is
/// inside the reference image and covered by the warp.
pub fn build_cost_volume(
    reference: &Image,
    source: &Image,
    k: &CameraIntrinsics,
    pose: &Pose,
    sampling: &PlaneSampling,
) -> Result<CostVolume> {
    if !reference.same_shape(source) {
        return Err(invalid("reference and source images differ in size or channels"));
    }
    if reference.width() != k.width || reference.height() != k.height {
        return Err(invalid("image size does not match intrinsics"));
    }
    sampling.validate()?;
    let (w, h, ch) = (reference.width(), reference.height(), reference.channels());
    let slice = w * h;
    let mut costs = vec![0.0; slice * sampling.count];
    let mut valid = vec![false; slice * sampling.count];

    costs
        .par_chunks_mut(slice)
        .zip(valid.par_chunks_mut(slice))
        .enumerate()
        .try_for_each(|(n, (cslice, vslice))| -> Result<()> {
            let hom = homography_for_plane(k, pose, sampling.depth(n))?;
            let warped = warp_to_reference_plane(source, &hom)?;
            // Per-pixel absolute difference summed over channels.
            let mut diff = vec![0.0; slice];
            for (i, d) in diff.iter_mut().enumerate() {
                if warped.coverage[i] {
                    let r = &reference.data()[i * ch..(i + 1) * ch];
                    let s = &warped.image.data()[i * ch..(i + 1) * ch];
                    *d = r.iter().zip(s).map(|(a, b)| (a - b).abs()).sum();
                }
            }
            let norm = (9 * ch) as f64;
            for y in 1..h.saturating_sub(1) {
                for x in 1..w.saturating_sub(1) {
                    let mut sum = 0.0;
                    let mut complete = true;
                    'patch: for py in y - 1..=y + 1 {
                        for px in x - 1..=x + 1 {
                            let i = py * w + px;
                            if !warped.coverage[i] {
                                complete = false;
                                break 'patch;
                            }
                            sum += diff[i];
                        }
                    }
                    if complete {
                        cslice[y * w + x] = sum / norm;
                        vslice[y * w + x] = true;
                    }
                }
            }
            Ok(())
        })?;
    CostVolume::new(w, h, *sampling, costs, valid)
}

/// Cross-bilateral aggregation parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub radius: usize,
    pub sigma_color: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { radius: 4, sigma_color: 0.1 }
    }
}

/// Filters every depth slice with cross-bilateral weights
/// `exp(-‖guide(q) − guide(p)‖² / (2σ²))` over the `(2r+1)²` window, normalized
/// over valid cells. Cells without any valid neighbor stay invalid.
pub fn aggregate_cost_volume(raw: &CostVolume, guide: &Image, radius: usize, sigma_color: f64) -> Result<CostVolume> {
    if guide.width() != raw.width || guide.height() != raw.height {
        return Err(invalid("guide image does not match cost volume slices"));
    }
    if !(sigma_color.is_finite() && sigma_color > 0.0) {
        return Err(invalid(format!("sigma_color must be positive, got {sigma_color}")));
    }
    if radius == 0 {
        return Ok(raw.clone());
    }
    let (w, h) = (raw.width, raw.height);
    let r = radius as isize;
    let side = 2 * radius + 1;
    let inv = 1.0 / (2.0 * sigma_color * sigma_color);

    // Guide weights depend only on the pixel pair, so they are shared by all slices.
    let mut weights = vec![0.0; w * h * side * side];
    weights.par_chunks_mut(side * side).enumerate().for_each(|(p, wq)| {
        let (x, y) = ((p % w) as isize, (p / w) as isize);
        let gq = guide.pixel(x as usize, y as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                let (nx, ny) = (x + dx, y + dy);
                let k = ((dy + r) as usize) * side + (dx + r) as usize;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    wq[k] = 0.0;
                    continue;
                }
                let gp = guide.pixel(nx as usize, ny as usize);
                let d2: f64 = gq.iter().zip(gp).map(|(a, b)| (a - b) * (a - b)).sum();
                wq[k] = (-d2 * inv).exp();
            }
        }
    });

    let slice = w * h;
    let mut costs = vec![0.0; raw.costs.len()];
    let mut valid = vec![false; raw.costs.len()];
    costs
        .par_chunks_mut(slice)
        .zip(valid.par_chunks_mut(slice))
        .enumerate()
        .for_each(|(n, (cslice, vslice))| {
            let src_c = &raw.costs[n * slice..(n + 1) * slice];
            let src_v = &raw.valid[n * slice..(n + 1) * slice];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let p = y as usize * w + x as usize;
                    let wq = &weights[p * side * side..(p + 1) * side * side];
                    let (mut num, mut den) = (0.0, 0.0);
                    for dy in -r..=r {
                        let ny = y + dy;
                        if ny < 0 || ny >= h as isize {
                            continue;
                        }
                        for dx in -r..=r {
                            let nx = x + dx;
                            if nx < 0 || nx >= w as isize {
                                continue;
                            }
                            let i = ny as usize * w + nx as usize;
                            if src_v[i] {
                                let wt = wq[((dy + r) as usize) * side + (dx + r) as usize];
                                num += wt * src_c[i];
                                den += wt;
                            }
                        }
                    }
                    if den > 0.0 {
                        cslice[p] = num / den;
                        vslice[p] = true;
                    }
                }
            }
        });
    CostVolume::new(w, h, raw.sampling, costs, valid)
}

/// Per-cell mean over the volumes in which the cell is valid. A cell is valid
/// iff it is valid in at least one input. Contributions are summed in sorted
/// order so the result does not depend on the order of `volumes`.
pub fn average_cost_volumes(volumes: &[CostVolume]) -> Result<CostVolume> {
    let first = volumes.first().ok_or_else(|| invalid("need at least one cost volume"))?;
    if volumes.iter().any(|v| !v.same_layout(first)) {
        return Err(invalid("cost volumes differ in dimensions or plane sampling"));
    }
    if volumes.len() == 1 {
        return Ok(first.clone());
    }
    let cells = first.costs.len();
    let mut costs = vec![0.0; cells];
    let mut valid = vec![false; cells];
    costs
        .par_chunks_mut(4096)
        .zip(valid.par_chunks_mut(4096))
        .enumerate()
        .for_each(|(chunk, (cs, vs))| {
            let mut buf = Vec::with_capacity(volumes.len());
            for (j, (c, v)) in cs.iter_mut().zip(vs.iter_mut()).enumerate() {
                let i = chunk * 4096 + j;
                buf.clear();
                buf.extend(volumes.iter().filter(|vol| vol.valid[i]).map(|vol| vol.costs[i]));
                if !buf.is_empty() {
                    buf.sort_by(f64::total_cmp);
                    *c = buf.iter().sum::<f64>() / buf.len() as f64;
                    *v = true;
                }
            }
        });
    CostVolume::new(first.width, first.height, first.sampling, costs, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sampling(n: usize) -> PlaneSampling {
        PlaneSampling::new(1.0, 4.0, n).unwrap()
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| (((x * 37 + y * 91 + c * 13) % 29) as f64) / 28.0).unwrap()
    }

    #[test]
    fn self_matching_is_zero() {
        let img = textured(24, 18);
        let k = CameraIntrinsics::new(20.0, 20.0, 12.0, 9.0, 24, 18).unwrap();
        let v = build_cost_volume(&img, &img, &k, &Pose::identity(), &sampling(5)).unwrap();
        let mut n_valid = 0;
        for (c, ok) in v.costs().iter().zip(v.validity()) {
            if *ok {
                n_valid += 1;
                assert_eq!(*c, 0.0);
            }
        }
        // Interior cells only; the outer ring lacks a complete patch.
        assert_eq!(n_valid, 22 * 16 * 5);
    }

    #[test]
    fn textureless_volume_is_flat() {
        let img = Image::filled(24, 18, 1, 0.4).unwrap();
        let k = CameraIntrinsics::new(20.0, 20.0, 12.0, 9.0, 24, 18).unwrap();
        let pose = Pose::from_translation(nalgebra::Vector3::new(0.1, 0.0, 0.0));
        let v = build_cost_volume(&img, &img, &k, &pose, &sampling(6)).unwrap();
        assert!(v.validity().iter().any(|b| *b));
        for (c, ok) in v.costs().iter().zip(v.validity()) {
            if *ok {
                assert!(c.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let k = CameraIntrinsics::new(20.0, 20.0, 12.0, 9.0, 24, 18).unwrap();
        let a = textured(24, 18);
        let b = textured(24, 17);
        assert!(build_cost_volume(&a, &b, &k, &Pose::identity(), &sampling(3)).is_err());
    }

    #[test]
    fn zero_radius_is_identity() {
        let v = CostVolume::from_fn(7, 5, sampling(3), |x, y, n| (x + 2 * y + 3 * n) as f64 * 0.1).unwrap();
        let g = textured(7, 5);
        assert_eq!(aggregate_cost_volume(&v, &g, 0, 0.1).unwrap(), v);
    }

    #[test]
    fn impulse_spreads_uniformly_on_constant_guide() {
        let v = CostVolume::from_fn(7, 7, sampling(2), |x, y, _| if (x, y) == (3, 3) { 1.0 } else { 0.0 }).unwrap();
        let g = Image::filled(7, 7, 1, 0.5).unwrap();
        let a = aggregate_cost_volume(&v, &g, 1, 0.1).unwrap();
        for y in 0..7usize {
            for x in 0..7usize {
                let near = x.abs_diff(3) <= 1 && y.abs_diff(3) <= 1;
                let expect = if near { 1.0 / 9.0 } else { 0.0 };
                assert!((a.get(x, y, 0).unwrap() - expect).abs() < 1e-15, "({x},{y})");
            }
        }
    }

    #[test]
    fn invalid_cells_are_excluded() {
        let s = sampling(2);
        let mut valid = vec![true; 5 * 5 * 2];
        let mut costs = vec![0.2; 5 * 5 * 2];
        // One invalid cell with a poisonous value.
        costs[12] = 1e9;
        valid[12] = false;
        let v = CostVolume::new(5, 5, s, costs, valid).unwrap();
        let a = aggregate_cost_volume(&v, &Image::filled(5, 5, 1, 0.1).unwrap(), 1, 0.1).unwrap();
        assert!(a.validity().iter().all(|b| *b));
        assert!(a.costs().iter().all(|c| (c - 0.2).abs() < 1e-15));

        let isolated = CostVolume::new(3, 3, s, vec![0.0; 18], vec![false; 18]).unwrap();
        let a = aggregate_cost_volume(&isolated, &Image::filled(3, 3, 1, 0.1).unwrap(), 1, 0.1).unwrap();
        assert!(a.validity().iter().all(|b| !*b));
    }

    #[test]
    fn averaging_fixtures() {
        let s = sampling(2);
        let a = CostVolume::new(1, 1, s, vec![0.2, 0.2], vec![true, true]).unwrap();
        let b = CostVolume::new(1, 1, s, vec![0.4, 9.0], vec![true, false]).unwrap();
        assert_eq!(average_cost_volumes(std::slice::from_ref(&a)).unwrap(), a);
        let m = average_cost_volumes(&[a.clone(), b]).unwrap();
        assert!((m.costs()[0] - 0.3).abs() < 1e-15);
        assert_eq!(m.costs()[1], 0.2);
        assert!(m.validity()[1]);
        let none = CostVolume::new(1, 1, s, vec![0.0, 0.0], vec![false, false]).unwrap();
        let m = average_cost_volumes(&[none.clone(), none]).unwrap();
        assert!(m.validity().iter().all(|v| !*v));
        assert!(average_cost_volumes(&[]).is_err());
        let c = CostVolume::new(1, 1, sampling(3), vec![0.0; 3], vec![true; 3]).unwrap();
        assert!(average_cost_volumes(&[a, c]).is_err());
    }

    proptest! {
        #[test]
        fn averaging_is_permutation_invariant(vals in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 12)) {
            let s = sampling(2);
            let vols: Vec<CostVolume> = vals.chunks(2).map(|c| {
                CostVolume::new(1, 1, s, vec![c[0].0, c[1].0], vec![c[0].1, c[1].1]).unwrap()
            }).collect();
            let fwd = average_cost_volumes(&vols).unwrap();
            let mut rev = vols.clone();
            rev.reverse();
            rev.swap(0, 3);
            prop_assert_eq!(fwd, average_cost_volumes(&rev).unwrap());
        }

        #[test]
        fn aggregation_preserves_constant_slices(c in 0.0f64..2.0, r in 1usize..4, seed in 0usize..50) {
            let v = CostVolume::from_fn(9, 8, sampling(2), |_, _, _| c).unwrap();
            let g = Image::from_fn(9, 8, 1, |x, y, _| ((x * 7 + y * 5 + seed) % 10) as f64 / 9.0).unwrap();
            let a = aggregate_cost_volume(&v, &g, r, 0.1).unwrap();
            for x in a.costs() {
                prop_assert!((x - c).abs() <= 1e-12 * c.max(1.0));
            }
        }
    }
}
