use nalgebra::{Matrix3, Point2, Vector3};

use crate::error::{invalid, Result};

const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(serde::Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = crate::Error;

    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        Self::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(invalid("intrinsics must be finite"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(invalid(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if width == 0 || height == 0 {
            return Err(invalid("image size must be non-zero"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(invalid(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of [`Self::matrix`].
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Viewing ray through pixel `(x, y)` scaled so that its z component is 1.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Rigid transform `p' = R p + t`.
///
/// Trajectories store world-to-camera poses; the sweep consumes source poses
/// relative to the reference camera (see [`Pose::relative`]).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = crate::Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = r.rotation;
        Self::new(Matrix3::from_fn(|i, j| m[i][j]), Vector3::from(r.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| p.rotation[(i, j)])),
            translation: p.translation.into(),
        }
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(invalid("pose must be finite"));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > ROTATION_TOLERANCE {
            return Err(invalid(format!("rotation is not orthonormal (deviation {orth:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(invalid(format!("rotation determinant is {det}, expected 1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Rotation about `axis` (normalized internally) by `angle` radians, then translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12).ok_or_else(|| invalid("zero rotation axis"))?;
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        Self::new(*r.matrix(), t)
    }

    /// World-to-camera pose of a camera at `eye` looking at `target` with the
    /// image y axis pointing along `-up` (y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| invalid("look_at target coincides with eye"))?;
        let x = (-up).cross(&z).try_normalize(1e-12).ok_or_else(|| invalid("up parallel to view"))?;
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(r, -(r * eye))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Source pose relative to the reference camera, from two world-to-camera poses.
    pub fn relative(reference: &Pose, source: &Pose) -> Self {
        source.compose(&reference.inverse())
    }

    /// Camera center in the frame this pose maps from.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Uniformly spaced fronto-parallel depth planes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlaneSampling {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
}

impl PlaneSampling {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        let s = Self { d_min, d_max, count };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min.is_finite() && self.d_max.is_finite()) || self.d_min <= 0.0 || self.d_min >= self.d_max {
            return Err(invalid(format!(
                "plane range must satisfy 0 < d_min < d_max, got [{}, {}]",
                self.d_min, self.d_max
            )));
        }
        if self.count < 2 {
            return Err(invalid(format!("need at least 2 planes, got {}", self.count)));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.d_max - self.d_min) / (self.count - 1) as f64
    }

    pub fn depth(&self, n: usize) -> f64 {
        self.d_min + n as f64 * self.spacing()
    }

    /// Depth at a fractional plane index.
    pub fn depth_at(&self, index: f64) -> f64 {
        self.d_min + index * self.spacing()
    }

    pub fn depths(&self) -> Vec<f64> {
        (0..self.count).map(|n| self.depth(n)).collect()
    }
}

impl Default for PlaneSampling {
    fn default() -> Self {
        Self { d_min: 0.5, d_max: 10.0, count: 64 }
    }
}

/// Result of projecting a camera-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Point2<f64>,
    pub depth: f64,
}

impl Projection {
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

pub fn backproject(q: Point2<f64>, depth: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    k.ray(q.x, q.y) * depth
}

/// Projects world point `p` through `pose` (world-to-camera) and `k`.
/// Points at or behind the camera come back with `depth <= 0` and a
/// meaningless pixel; check [`Projection::in_front`].
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics, pose: &Pose) -> Projection {
    let pc = pose.transform_point(p);
    let pixel = if pc.z != 0.0 {
        Point2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy)
    } else {
        Point2::new(f64::NAN, f64::NAN)
    };
    Projection { pixel, depth: pc.z }
}

/// Plane-induced homography mapping reference pixels to source pixels for the
/// fronto-parallel plane at depth `depth`: `K (R + t [0 0 1/d]) K⁻¹`.
pub fn homography_for_plane(k: &CameraIntrinsics, pose: &Pose, depth: f64) -> Result<Matrix3<f64>> {
    if !depth.is_finite() || depth <= 0.0 {
        return Err(invalid(format!("plane depth must be positive and finite, got {depth}")));
    }
    let plane_row = Vector3::new(0.0, 0.0, 1.0 / depth).transpose();
    let h = k.matrix() * (pose.rotation + pose.translation * plane_row) * k.inverse_matrix();
    if !h.iter().all(|v| v.is_finite()) {
        return Err(invalid("non-finite homography"));
    }
    Ok(h)
}
