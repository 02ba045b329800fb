//! Analytic test scenes: ray-cast planes, axis-aligned boxes and spheres with
//! procedural solid textures, plus cross-view visibility ground truth.

mod fixtures;
mod texture;

pub use fixtures::{
    fronto_plane, fusion_box, noisy_plane, occlusion_fusion, slanted_plane, sphere, textured_room, two_box, Fixture,
    FixtureKind,
};
pub use texture::Texture;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Image, Pose};
use crate::normals::{NormalMap, PlaneMaskSet};

/// Surfaces closer than this to the ray origin are ignored.
const MIN_HIT: f64 = 1e-9;

/// Projections this far outside the pixel-center bounds still count as inside.
const BOUNDS_SLACK: f64 = 1e-9;

/// Margin by which an occluder must be nearer than the target point.
pub const VISIBILITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Infinite plane through `point` with normal `normal`.
    Plane { point: [f64; 3], normal: [f64; 3], texture: Texture },
    /// Axis-aligned box. Seen from inside, its walls form a room.
    Box { center: [f64; 3], half_extents: [f64; 3], texture: Texture },
    Sphere { center: [f64; 3], radius: f64, texture: Texture },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    /// Color of pixels that hit nothing; their depth is invalid.
    #[serde(default)]
    pub background: [f64; 3],
}

struct Hit {
    /// Ray parameter.
    t: f64,
    point: Vector3<f64>,
    /// Unit world normal facing the ray origin.
    normal: Vector3<f64>,
    label: u32,
    primitive: usize,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Primitive {
    /// Number of plane labels this primitive occupies.
    fn label_count(&self) -> u32 {
        match self {
            Primitive::Plane { .. } => 1,
            Primitive::Box { .. } => 6,
            Primitive::Sphere { .. } => 0,
        }
    }

    fn texture(&self) -> &Texture {
        match self {
            Primitive::Plane { texture, .. } | Primitive::Box { texture, .. } | Primitive::Sphere { texture, .. } => {
                texture
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |a: &[f64]| a.iter().all(|v| v.is_finite());
        let ok = match self {
            Primitive::Plane { point, normal, .. } => finite(point) && finite(normal) && v3(*normal).norm() > 0.0,
            Primitive::Box { center, half_extents, .. } => finite(center) && half_extents.iter().all(|h| *h > 0.0),
            Primitive::Sphere { center, radius, .. } => finite(center) && radius.is_finite() && *radius > 0.0,
        };
        if !ok {
            return Err(invalid(format!("degenerate primitive {self:?}")));
        }
        self.texture().validate()
    }

    /// Nearest intersection with parameter above `MIN_HIT`: `(t, normal, face)`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>, u32)> {
        match self {
            Primitive::Plane { point, normal, .. } => {
                let n = v3(*normal).normalize();
                let denom = n.dot(d);
                if denom == 0.0 {
                    return None;
                }
                let t = n.dot(&(v3(*point) - o)) / denom;
                (t > MIN_HIT).then(|| (t, if denom > 0.0 { -n } else { n }, 0))
            }
            Primitive::Box { center, half_extents, .. } => {
                let (c, h) = (v3(*center), v3(*half_extents));
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut near_axis, mut far_axis) = (0, 0);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if (o[a] - c[a]).abs() > h[a] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (c[a] - h[a] - o[a]) / d[a];
                    let t1 = (c[a] + h[a] - o[a]) / d[a];
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    if lo > t_near {
                        t_near = lo;
                        near_axis = a;
                    }
                    if hi < t_far {
                        t_far = hi;
                        far_axis = a;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis) = if t_near > MIN_HIT {
                    (t_near, near_axis)
                } else if t_far > MIN_HIT {
                    (t_far, far_axis)
                } else {
                    return None;
                };
                let mut n = Vector3::zeros();
                n[axis] = -d[axis].signum();
                // Face ids: 2·axis for the low side, 2·axis + 1 for the high side.
                let high = (o[axis] + t * d[axis]) > c[axis];
                Some((t, n, 2 * axis as u32 + u32::from(high)))
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = o - v3(*center);
                let a = d.norm_squared();
                let b = oc.dot(d);
                let disc = b * b - a * (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = [(-b - s) / a, (-b + s) / a].into_iter().find(|t| *t > MIN_HIT)?;
                let mut n = (oc + d * t) / *radius;
                if n.dot(d) > 0.0 {
                    n = -n;
                }
                Some((t, n.normalize(), 0))
            }
        }
    }

    /// Unsigned distance from `p` to the primitive's surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Primitive::Plane { point, normal, .. } => v3(*normal).normalize().dot(&(p - v3(*point))).abs(),
            Primitive::Box { center, half_extents, .. } => {
                let q = (p - v3(*center)).abs() - v3(*half_extents);
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.max().min(0.0);
                (outside + inside).abs()
            }
            Primitive::Sphere { center, radius, .. } => ((p - v3(*center)).norm() - radius).abs(),
        }
    }
}

/// Per-view render outputs. Normals are in camera coordinates.
#[derive(Debug, Clone)]
pub struct Render {
    pub color: Image,
    pub depth: DepthMap,
    pub normals: NormalMap,
    pub planes: PlaneMaskSet,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(invalid("background color outside [0, 1]"));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    fn first_labels(&self) -> Vec<u32> {
        let mut next = 1;
        self.primitives
            .iter()
            .map(|p| {
                let first = next;
                next += p.label_count();
                first
            })
            .collect()
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>, labels: &[u32]) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            if let Some((t, normal, face)) = prim.intersect(o, d) {
                if best.as_ref().is_none_or(|b| t < b.t) {
                    let label = if prim.label_count() == 0 { 0 } else { labels[i] + face };
                    best = Some(Hit { t, point: o + d * t, normal, label, primitive: i });
                }
            }
        }
        best
    }

    /// Unsigned distance from `p` to the nearest primitive surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.primitives.iter().map(|prim| prim.surface_distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Ray-casts one view. `pose` maps world points into the camera.
    pub fn render(&self, k: &CameraIntrinsics, pose: &Pose) -> Result<Render> {
        self.validate()?;
        let (w, h) = (k.width, k.height);
        let labels = self.first_labels();
        let rt = pose.rotation().transpose();
        let rot = *pose.rotation();
        let origin = pose.center();
        let pixels: Vec<Option<(Hit, [f64; 3])>> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let dir = rt * k.ray((i % w) as f64, (i / w) as f64);
                let hit = self.cast(&origin, &dir, &labels)?;
                let color = self.primitives[hit.primitive].texture().color(&hit.point);
                Some((hit, color))
            })
            .collect();

        let mut color = Vec::with_capacity(w * h * 3);
        let mut depth = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        let mut normals = vec![Vector3::zeros(); w * h];
        let mut plane_labels = vec![0u32; w * h];
        for (i, px) in pixels.into_iter().enumerate() {
            match px {
                Some((hit, c)) => {
                    color.extend(c);
                    // The ray direction has unit camera-z, so t is the depth.
                    depth[i] = hit.t;
                    valid[i] = true;
                    normals[i] = (rot * hit.normal).normalize();
                    plane_labels[i] = hit.label;
                }
                None => color.extend(self.background),
            }
        }
        Ok(Render {
            color: Image::new(w, h, 3, color)?,
            depth: DepthMap::new(w, h, depth, valid.clone())?,
            normals: NormalMap::new(w, h, normals, valid)?,
            planes: PlaneMaskSet::new(w, h, plane_labels)?,
        })
    }

    /// Occlusion ground truth for the reference view: a pixel is occluded iff
    /// its surface point is hidden (another surface nearer by more than
    /// [`VISIBILITY_EPS`]) or outside the image in every source view.
    /// Background pixels are never occluded.
    pub fn visibility_ground_truth(
        &self,
        k: &CameraIntrinsics,
        ref_pose: &Pose,
        src_poses: &[Pose],
    ) -> Result<Vec<bool>> {
        self.validate()?;
        if src_poses.is_empty() {
            return Err(invalid("need at least one source pose"));
        }
        let (w, h) = (k.width, k.height);
        let labels = self.first_labels();
        let rt = ref_pose.rotation().transpose();
        let origin = ref_pose.center();
        Ok((0..w * h)
            .into_par_iter()
            .map(|i| {
                let dir = rt * k.ray((i % w) as f64, (i / w) as f64);
                let Some(hit) = self.cast(&origin, &dir, &labels) else {
                    return false;
                };
                !src_poses.iter().any(|src| self.visible_from(k, src, &hit.point, &labels))
            })
            .collect())
    }

    fn visible_from(&self, k: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>, labels: &[u32]) -> bool {
        let pc = pose.transform_point(p);
        if pc.z <= 0.0 {
            return false;
        }
        let (u, v) = (k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy);
        let (max_u, max_v) = ((k.width - 1) as f64 + BOUNDS_SLACK, (k.height - 1) as f64 + BOUNDS_SLACK);
        if !(u >= -BOUNDS_SLACK && v >= -BOUNDS_SLACK && u <= max_u && v <= max_v) {
            return false;
        }
        let c = pose.center();
        let to = p - c;
        let dist = to.norm();
        let dir = to / dist;
        match self.cast(&c, &dir, labels) {
            Some(hit) => hit.t >= dist - VISIBILITY_EPS,
            None => true,
        }
    }
}

/// Adds seeded zero-mean Gaussian noise to every intensity, clamped to `[0, 1]`.
pub fn add_image_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    Image::new(img.width(), img.height(), img.channels(), data)
}

/// Multiplies each valid depth by `1 + ε`, `ε ~ N(0, rel_sigma²)`, seeded.
pub fn add_depth_noise(depth: &DepthMap, rel_sigma: f64, seed: u64) -> Result<DepthMap> {
    let normal = Normal::new(0.0, rel_sigma).map_err(|e| invalid(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = depth.clone();
    for i in 0..depth.len() {
        let eps = normal.sample(&mut rng);
        if let Some(d) = depth.at(i) {
            out.set(i, Some(d * (1.0 + eps).max(1e-3)))?;
        }
    }
    Ok(out)
}
