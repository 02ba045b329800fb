//! Projective TSDF fusion with per-sample weights and marching-cubes meshing.

mod marching_cubes;

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Image, Pose};
use crate::occlusion::OcclusionMap;
use marching_cubes::{case_table, CORNERS, EDGES};

/// Voxel grid of truncated signed distances normalized to `[-1, 1]`, with
/// accumulated weights and weighted mean colors. Voxel `(x, y, z)` is centered
/// at `origin + voxel_size · (x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    tsdf: Vec<f64>,
    weight: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl TsdfVolume {
    /// Empty volume: tsdf 1, weight 0.
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) || !origin.iter().all(|v| v.is_finite()) {
            return Err(invalid("voxel size must be positive and origin finite"));
        }
        let n = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d)).filter(|n| *n > 0);
        let n = n.ok_or_else(|| invalid(format!("invalid volume dimensions {dims:?}")))?;
        Ok(Self { origin, voxel_size, dims, tsdf: vec![1.0; n], weight: vec![0.0; n], color: vec![[0.0; 3]; n] })
    }

    /// Volume with every voxel set from `f(center) = (tsdf, weight)`.
    pub fn from_fn(
        origin: Vector3<f64>,
        voxel_size: f64,
        dims: [usize; 3],
        f: impl Fn(Vector3<f64>) -> (f64, f64),
    ) -> Result<Self> {
        let mut v = Self::new(origin, voxel_size, dims)?;
        for i in 0..v.tsdf.len() {
            let (t, w) = f(v.center(i));
            if !(t.is_finite() && w.is_finite() && w >= 0.0) {
                return Err(invalid(format!("invalid voxel value ({t}, {w})")));
            }
            v.tsdf[i] = t.clamp(-1.0, 1.0);
            v.weight[i] = w;
        }
        Ok(v)
    }

    /// Volume from raw arrays, validated against the volume invariants.
    pub fn from_parts(
        origin: Vector3<f64>,
        voxel_size: f64,
        dims: [usize; 3],
        tsdf: Vec<f64>,
        weight: Vec<f64>,
        color: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let mut v = Self::new(origin, voxel_size, dims)?;
        if tsdf.len() != v.tsdf.len() || weight.len() != v.tsdf.len() || color.len() != v.tsdf.len() {
            return Err(invalid("voxel arrays do not match dimensions"));
        }
        if !tsdf.iter().all(|t| t.abs() <= 1.0) || !weight.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(invalid("tsdf outside [-1, 1] or negative weight"));
        }
        if !color.iter().flatten().all(|c| c.is_finite()) {
            return Err(invalid("non-finite voxel color"));
        }
        (v.tsdf, v.weight, v.color) = (tsdf, weight, color);
        Ok(v)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn tsdf(&self) -> &[f64] {
        &self.tsdf
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.color
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    fn center(&self, i: usize) -> Vector3<f64> {
        let [dx, dy, _] = self.dims;
        let (x, y, z) = (i % dx, (i / dx) % dy, i / (dx * dy));
        self.origin + Vector3::new(x as f64, y as f64, z as f64) * self.voxel_size
    }

    /// Fuses one depth frame. `world_pose` maps world points into the camera.
    /// Each voxel projecting to a valid depth pixel `q` (nearest pixel) with
    /// `sdf = depth(q) − z > −trunc` is updated as a weighted running mean with
    /// weight `1 − P(q)`, or 1 without an occlusion map or where `P` is invalid.
    /// Zero-weight samples leave the voxel untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate(
        &mut self,
        depth: &DepthMap,
        color: &Image,
        occ: Option<&OcclusionMap>,
        k: &CameraIntrinsics,
        world_pose: &Pose,
        trunc: f64,
    ) -> Result<()> {
        if !(trunc.is_finite() && trunc >= 2.0 * self.voxel_size) {
            return Err(invalid(format!("truncation {trunc} must be at least twice the voxel size")));
        }
        let (w, h) = (k.width, k.height);
        if !depth.same_shape(w, h) || color.width() != w || color.height() != h {
            return Err(invalid("depth or color does not match intrinsics"));
        }
        if let Some(o) = occ {
            if o.width() != w || o.height() != h {
                return Err(invalid("occlusion map does not match intrinsics"));
            }
            o.check_range()?;
        }
        let rot = *world_pose.rotation();
        let t = *world_pose.translation();
        let slab = self.dims[0] * self.dims[1];
        let (origin, vs, dx) = (self.origin, self.voxel_size, self.dims[0]);
        let gray = color.channels() == 1;

        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .zip(self.color.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(z, ((ts, ws), cs))| {
                for j in 0..slab {
                    let (x, y) = (j % dx, j / dx);
                    let world = origin + Vector3::new(x as f64, y as f64, z as f64) * vs;
                    let p = rot * world + t;
                    if p.z <= 0.0 {
                        continue;
                    }
                    let u = (k.fx * p.x / p.z + k.cx).round();
                    let v = (k.fy * p.y / p.z + k.cy).round();
                    if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
                        continue;
                    }
                    let q = v as usize * w + u as usize;
                    let Some(d) = depth.at(q) else { continue };
                    let sdf = d - p.z;
                    if sdf <= -trunc {
                        continue;
                    }
                    let sample_w = occ.and_then(|o| o.at(q)).map_or(1.0, |p| 1.0 - p);
                    if sample_w <= 0.0 {
                        continue;
                    }
                    let dn = (sdf / trunc).clamp(-1.0, 1.0);
                    let total = ws[j] + sample_w;
                    ts[j] = (ts[j] * ws[j] + dn * sample_w) / total;
                    let px = color.pixel(u as usize, v as usize);
                    for c in 0..3 {
                        let s = if gray { px[0] } else { px[c] };
                        cs[j][c] = (cs[j][c] * ws[j] + s * sample_w) / total;
                    }
                    ws[j] = total;
                }
            });
        Ok(())
    }

    /// Marching cubes over cubes whose 8 corners all have weight ≥
    /// `min_weight` (and > 0). Vertices lie on linearly interpolated zero
    /// crossings and are shared between neighboring cubes. Triangles wind
    /// counter-clockwise seen from the positive (free-space) side.
    pub fn extract_mesh(&self, min_weight: f64) -> Result<Mesh> {
        if !(min_weight.is_finite() && min_weight >= 0.0) {
            return Err(invalid(format!("min_weight must be non-negative, got {min_weight}")));
        }
        let [dx, dy, dz] = self.dims;
        let mut mesh = Mesh::default();
        if dx < 2 || dy < 2 || dz < 2 {
            return Ok(mesh);
        }
        let table = case_table();
        let mut vertex_of: HashMap<(usize, usize), u32> = HashMap::new();
        let usable = |i: usize| self.weight[i] > 0.0 && self.weight[i] >= min_weight;
        for z in 0..dz - 1 {
            for y in 0..dy - 1 {
                for x in 0..dx - 1 {
                    let corner = CORNERS.map(|[cx, cy, cz]| self.index(x + cx, y + cy, z + cz));
                    if !corner.iter().all(|&i| usable(i)) {
                        continue;
                    }
                    let case = corner.iter().enumerate().fold(0usize, |acc, (c, &i)| {
                        acc | (usize::from(self.tsdf[i] < 0.0) << c)
                    });
                    for tri in &table[case] {
                        let ids = tri.map(|e| {
                            let [a, b] = EDGES[e as usize].map(|c| corner[c]);
                            let key = (a.min(b), a.max(b));
                            *vertex_of.entry(key).or_insert_with(|| mesh.push_vertex(self, key.0, key.1))
                        });
                        mesh.triangles.push(ids);
                    }
                }
            }
        }
        Ok(mesh)
    }
}

/// Indexed triangle mesh with per-vertex colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Edge incidence counts of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct EdgeStats {
    /// Edges shared by exactly two triangles.
    pub manifold: usize,
    /// Edges used by one triangle.
    pub boundary: usize,
    /// Edges used by more than two triangles.
    pub non_manifold: usize,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn push_vertex(&mut self, vol: &TsdfVolume, a: usize, b: usize) -> u32 {
        let (ta, tb) = (vol.tsdf[a], vol.tsdf[b]);
        let t = ta / (ta - tb);
        let p = vol.center(a) + (vol.center(b) - vol.center(a)) * t;
        let (ca, cb) = (vol.color[a], vol.color[b]);
        let color = std::array::from_fn(|c| ((ca[c] + (cb[c] - ca[c]) * t).clamp(0.0, 1.0) * 255.0).round() as u8);
        self.vertices.push(p);
        self.colors.push(color);
        (self.vertices.len() - 1) as u32
    }

    pub fn edge_stats(&self) -> EdgeStats {
        let mut count: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut s = EdgeStats { manifold: 0, boundary: 0, non_manifold: 0 };
        for c in count.values() {
            match c {
                1 => s.boundary += 1,
                2 => s.manifold += 1,
                _ => s.non_manifold += 1,
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_volume(radius: f64, vs: f64, n: usize) -> (TsdfVolume, Vector3<f64>) {
        let c = Vector3::new(0.3, -0.1, 2.0);
        let origin = c - Vector3::repeat(vs * (n as f64 - 1.0) / 2.0);
        let trunc = 4.0 * vs;
        let v = TsdfVolume::from_fn(origin, vs, [n; 3], |p| (((p - c).norm() - radius) / trunc, 1.0)).unwrap();
        (v, c)
    }

    #[test]
    fn empty_volume_gives_empty_mesh() {
        let v = TsdfVolume::new(Vector3::zeros(), 0.1, [8, 8, 8]).unwrap();
        assert!(v.extract_mesh(0.0).unwrap().is_empty());
        let v = TsdfVolume::from_fn(Vector3::zeros(), 0.1, [8, 8, 8], |_| (1.0, 5.0)).unwrap();
        assert!(v.extract_mesh(1.0).unwrap().is_empty());
    }

    #[test]
    fn analytic_sphere_is_closed_and_accurate() {
        let vs = 0.02;
        let (v, c) = sphere_volume(0.3, vs, 40);
        let mesh = v.extract_mesh(1.0).unwrap();
        assert!(!mesh.is_empty());
        let close = mesh.vertices.iter().filter(|p| ((*p - c).norm() - 0.3).abs() <= 0.5 * vs).count();
        assert!(close as f64 >= 0.95 * mesh.vertices.len() as f64);
        let stats = mesh.edge_stats();
        assert_eq!((stats.boundary, stats.non_manifold), (0, 0));
        // Outward winding: normals point away from the center.
        let outward = mesh
            .triangles
            .iter()
            .filter(|t| {
                let [a, b, cc] = t.map(|i| mesh.vertices[i as usize]);
                (b - a).cross(&(cc - a)).dot(&((a + b + cc) / 3.0 - c)) > 0.0
            })
            .count();
        assert_eq!(outward, mesh.triangles.len());
    }

    #[test]
    fn weight_threshold_drops_cubes() {
        let (v, _) = sphere_volume(0.3, 0.02, 40);
        assert!(v.extract_mesh(2.0).unwrap().is_empty());
    }

    fn plane_frame(d: f64) -> (CameraIntrinsics, DepthMap, Image) {
        let k = CameraIntrinsics::new(100.0, 100.0, 40.0, 30.0, 80, 60).unwrap();
        let depth = DepthMap::from_depths(80, 60, vec![d; 4800]).unwrap();
        let img = Image::filled(80, 60, 3, 0.5).unwrap();
        (k, depth, img)
    }

    fn plane_volume() -> TsdfVolume {
        TsdfVolume::new(Vector3::new(-0.3, -0.2, 1.0), 0.02, [30, 20, 50]).unwrap()
    }

    #[test]
    fn zero_crossing_on_central_ray() {
        let (k, depth, img) = plane_frame(1.5);
        let mut v = plane_volume();
        v.integrate(&depth, &img, None, &k, &Pose::identity(), 0.08).unwrap();
        // Column through x = 0, y = 0 (voxel 15, 10).
        let zs: Vec<(f64, f64)> = (0..50).map(|z| (1.0 + z as f64 * 0.02, v.tsdf[v.index(15, 10, z)])).collect();
        let crossing = zs.windows(2).find(|w| w[0].1 > 0.0 && w[1].1 <= 0.0).unwrap();
        let t = crossing[0].1 / (crossing[0].1 - crossing[1].1);
        let z0 = crossing[0].0 + t * 0.02;
        assert!((z0 - 1.5).abs() < 0.02);
    }

    #[test]
    fn repeated_frame_keeps_tsdf() {
        let (k, depth, img) = plane_frame(1.5);
        let mut v = plane_volume();
        v.integrate(&depth, &img, None, &k, &Pose::identity(), 0.08).unwrap();
        let once = v.clone();
        v.integrate(&depth, &img, None, &k, &Pose::identity(), 0.08).unwrap();
        assert_eq!(once.tsdf, v.tsdf);
        for (a, b) in once.weight.iter().zip(&v.weight) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn fully_occluded_frame_is_noop() {
        let (k, depth, img) = plane_frame(1.5);
        let mut v = plane_volume();
        let before = v.clone();
        let occ = OcclusionMap::filled(80, 60, 1.0).unwrap();
        v.integrate(&depth, &img, Some(&occ), &k, &Pose::identity(), 0.08).unwrap();
        assert_eq!(before, v);
    }

    #[test]
    fn truncation_must_cover_two_voxels() {
        let (k, depth, img) = plane_frame(1.5);
        let mut v = plane_volume();
        assert!(v.integrate(&depth, &img, None, &k, &Pose::identity(), 0.03).is_err());
    }
}
