//! Surface normals from depth by windowed total least squares, and the
//! combined normal map (local normals off-plane, region-mean normals on planes).

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point2, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{backproject, CameraIntrinsics, DepthMap};

/// Per-pixel unit normals in camera coordinates, facing the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl NormalMap {
    /// Validates unit length (1e-6) at valid pixels.
    pub fn new(width: usize, height: usize, normals: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        if normals.len() != width * height || valid.len() != width * height {
            return Err(invalid(format!("normal map buffers do not match {width}x{height}")));
        }
        for (n, v) in normals.iter().zip(&valid) {
            if *v && (n.norm() - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("normal {n:?} is not unit length")));
            }
        }
        Ok(Self { width, height, normals, valid })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, normals: vec![Vector3::zeros(); width * height], valid: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, i: usize) -> Option<Vector3<f64>> {
        self.valid[i].then_some(self.normals[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Integer plane labels; 0 is non-planar, `k >= 1` is planar region `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaneMaskSet {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl PlaneMaskSet {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(invalid(format!("plane label buffer does not match {width}x{height}")));
        }
        Ok(Self { width, height, labels })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NormalOptions {
    /// Window half-size; the fit uses `(2r+1)²` pixels.
    pub radius: usize,
    /// Reject windows whose depth range exceeds this fraction of the center depth.
    pub max_relative_depth_range: f64,
}

impl Default for NormalOptions {
    fn default() -> Self {
        Self { radius: 2, max_relative_depth_range: 0.05 }
    }
}

/// Eigen-gap below which the plane fit is considered degenerate.
const DEGENERATE_GAP: f64 = 1e-12;

/// Plane fit around one pixel.
pub(crate) struct WindowFit {
    /// Pixel indices and 3D points of the window samples.
    pub samples: Vec<(usize, Vector3<f64>)>,
    pub centroid: Vector3<f64>,
    /// Ascending eigenvalues and matching eigenvectors (columns).
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [Vector3<f64>; 3],
    /// +1 or -1 so that `sign * eigenvectors[0]` faces the camera.
    pub sign: f64,
}

impl WindowFit {
    pub fn normal(&self) -> Vector3<f64> {
        self.eigenvectors[0] * self.sign
    }
}

pub(crate) fn fit_window(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    opts: &NormalOptions,
    x: usize,
    y: usize,
) -> Option<WindowFit> {
    let (w, h) = (depth.width(), depth.height());
    let center_depth = depth.get(x, y)?;
    let r = opts.radius;
    let mut samples = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for ny in y.saturating_sub(r)..=(y + r).min(h - 1) {
        for nx in x.saturating_sub(r)..=(x + r).min(w - 1) {
            if let Some(d) = depth.get(nx, ny) {
                dmin = dmin.min(d);
                dmax = dmax.max(d);
                samples.push((ny * w + nx, backproject(Point2::new(nx as f64, ny as f64), d, k)));
            }
        }
    }
    if samples.len() < 3 || dmax - dmin > opts.max_relative_depth_range * center_depth {
        return None;
    }
    let m = samples.len() as f64;
    let centroid = samples.iter().fold(Vector3::zeros(), |acc, (_, p)| acc + p) / m;
    let cov = samples.iter().fold(Matrix3::zeros(), |acc, (_, p)| {
        let d = p - centroid;
        acc + d * d.transpose()
    }) / m;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i]);
    let eigenvectors = order.map(|i| eig.eigenvectors.column(i).into_owned());
    if eigenvalues[1] - eigenvalues[0] <= DEGENERATE_GAP {
        return None;
    }
    let center = backproject(Point2::new(x as f64, y as f64), center_depth, k);
    let sign = if eigenvectors[0].dot(&center) > 0.0 { -1.0 } else { 1.0 };
    Some(WindowFit { samples, centroid, eigenvalues, eigenvectors, sign })
}

/// Least-squares normals with the default discontinuity guard.
pub fn normals_from_depth(depth: &DepthMap, k: &CameraIntrinsics, radius: usize) -> Result<NormalMap> {
    normals_from_depth_with(depth, k, &NormalOptions { radius, ..Default::default() })
}

/// For each valid pixel, fits a plane to the back-projected valid pixels of
/// its window (smallest-eigenvalue eigenvector of the centered covariance)
/// and orients it toward the camera. Pixels with fewer than 3 samples, a
/// degenerate fit, or a window spanning a depth discontinuity are invalid.
pub fn normals_from_depth_with(depth: &DepthMap, k: &CameraIntrinsics, opts: &NormalOptions) -> Result<NormalMap> {
    if opts.radius < 1 {
        return Err(invalid("normal window radius must be at least 1"));
    }
    if !depth.same_shape(k.width, k.height) {
        return Err(invalid("depth map does not match intrinsics"));
    }
    let (w, h) = (depth.width(), depth.height());
    let mut normals = vec![Vector3::zeros(); w * h];
    let mut valid = vec![false; w * h];
    normals
        .par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (nrow, vrow))| {
            for x in 0..w {
                if let Some(fit) = fit_window(depth, k, opts, x, y) {
                    nrow[x] = fit.normal();
                    vrow[x] = true;
                }
            }
        });
    Ok(NormalMap { width: w, height: h, normals, valid })
}

/// Derivatives of the normal at `(x, y)` with respect to each depth in its
/// window, from first-order eigenvector perturbation. Empty when the normal
/// is invalid.
pub fn normal_depth_jacobian(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    opts: &NormalOptions,
    x: usize,
    y: usize,
) -> Vec<(usize, Vector3<f64>)> {
    let Some(fit) = fit_window(depth, k, opts, x, y) else {
        return Vec::new();
    };
    let m = fit.samples.len() as f64;
    let w = depth.width();
    let v0 = fit.eigenvectors[0];
    fit.samples
        .iter()
        .map(|(i, p)| {
            let ray = k.ray((i % w) as f64, (i / w) as f64);
            let d = p - fit.centroid;
            let dcov = (ray * d.transpose() + d * ray.transpose()) / m;
            let dcv0 = dcov * v0;
            let mut dv = Vector3::zeros();
            for j in 1..3 {
                let vj = fit.eigenvectors[j];
                dv += vj * (vj.dot(&dcv0) / (fit.eigenvalues[0] - fit.eigenvalues[j]));
            }
            (*i, dv * fit.sign)
        })
        .collect()
}

/// Antipodal-cancellation threshold for region means.
const MIN_MEAN_NORM: f64 = 1e-8;

/// Combined normal map: label-0 pixels keep their local normal; each planar
/// region gets the normalized mean of its valid local normals at every valid
/// pixel. Regions without valid normals, or whose mean cancels, are invalid.
pub fn build_cnm(local: &NormalMap, masks: &PlaneMaskSet) -> Result<NormalMap> {
    if local.width != masks.width || local.height != masks.height {
        return Err(invalid("normal map and plane masks differ in size"));
    }
    struct Region {
        sum: Vector3<f64>,
        first: Option<Vector3<f64>>,
        uniform: bool,
    }
    let mut regions: BTreeMap<u32, Region> = BTreeMap::new();
    for (i, &label) in masks.labels.iter().enumerate() {
        if label == 0 || !local.valid[i] {
            continue;
        }
        let n = local.normals[i];
        let r = regions.entry(label).or_insert(Region { sum: Vector3::zeros(), first: None, uniform: true });
        r.sum += n;
        match r.first {
            None => r.first = Some(n),
            Some(f) => r.uniform &= f == n,
        }
    }
    let means: BTreeMap<u32, Option<Vector3<f64>>> = regions
        .into_iter()
        .map(|(label, r)| {
            // The mean direction of identical vectors is that vector; skip the
            // renormalization so constant regions are reproduced bit-exactly.
            let mean = if r.uniform {
                r.first
            } else {
                let norm = r.sum.norm();
                (norm >= MIN_MEAN_NORM).then(|| r.sum / norm)
            };
            (label, mean)
        })
        .collect();

    let mut out = local.clone();
    for (i, &label) in masks.labels.iter().enumerate() {
        if label == 0 || !local.valid[i] {
            continue;
        }
        match means.get(&label).copied().flatten() {
            Some(n) => out.normals[i] = n,
            None => {
                out.normals[i] = Vector3::zeros();
                out.valid[i] = false;
            }
        }
    }
    Ok(out)
}

/// Angle between two unit vectors in degrees, robust near 0° and 180°.
pub fn angle_degrees(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}
