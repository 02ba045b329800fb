//! Named scenes with camera trajectories used by tests and `synth`.

use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{add_depth_noise, add_image_noise, Primitive, Render, Scene, Texture};
use crate::error::{invalid, Error, Result};
use crate::geometry::{CameraIntrinsics, PlaneSampling, Pose};

/// A scene, shared intrinsics, world-to-camera poses and a plane sampling
/// suited to its depth range. Optional seeded noise is applied per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub scene: Scene,
    pub k: CameraIntrinsics,
    pub poses: Vec<Pose>,
    pub sampling: PlaneSampling,
    /// Gaussian intensity noise sigma.
    #[serde(default)]
    pub image_noise: Option<f64>,
    /// Relative Gaussian depth noise sigma.
    #[serde(default)]
    pub depth_noise: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Fixture {
    fn new(scene: Scene, poses: Vec<Pose>, sampling: PlaneSampling) -> Self {
        Fixture { scene, k: desk_camera(), poses, sampling, image_noise: None, depth_noise: None, seed: 0 }
    }

    /// Renders view `i` and applies the fixture's noise, seeded per view.
    pub fn render_view(&self, i: usize) -> Result<Render> {
        let pose = self.poses.get(i).ok_or_else(|| invalid(format!("fixture has no view {i}")))?;
        let mut r = self.scene.render(&self.k, pose)?;
        let seed = self.seed.wrapping_mul(1000).wrapping_add(i as u64);
        if let Some(s) = self.image_noise {
            r.color = add_image_noise(&r.color, s, seed)?;
        }
        if let Some(s) = self.depth_noise {
            r.depth = add_depth_noise(&r.depth, s, seed ^ 0x5eed)?;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    FrontoPlane,
    SlantedPlane,
    Sphere,
    NoisyPlane,
    TwoBox,
    TexturedRoom,
    FusionBox,
    OcclusionFusion,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 8] = [
        FixtureKind::FrontoPlane,
        FixtureKind::SlantedPlane,
        FixtureKind::Sphere,
        FixtureKind::NoisyPlane,
        FixtureKind::TwoBox,
        FixtureKind::TexturedRoom,
        FixtureKind::FusionBox,
        FixtureKind::OcclusionFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::FrontoPlane => "fronto-plane",
            FixtureKind::SlantedPlane => "slanted-plane",
            FixtureKind::Sphere => "sphere",
            FixtureKind::NoisyPlane => "noisy-plane",
            FixtureKind::TwoBox => "two-box",
            FixtureKind::TexturedRoom => "textured-room",
            FixtureKind::FusionBox => "fusion-box",
            FixtureKind::OcclusionFusion => "occlusion-fusion",
        }
    }

    pub fn build(self) -> Fixture {
        match self {
            FixtureKind::FrontoPlane => fronto_plane(PlaneSampling::default().depth(6), 0.2),
            FixtureKind::SlantedPlane => slanted_plane(),
            FixtureKind::Sphere => sphere(),
            FixtureKind::NoisyPlane => noisy_plane(0.01),
            FixtureKind::TwoBox => two_box(),
            FixtureKind::TexturedRoom => textured_room(),
            FixtureKind::FusionBox => fusion_box(),
            FixtureKind::OcclusionFusion => occlusion_fusion(),
        }
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FixtureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fixture {s:?}")))
    }
}

/// fx = fy = 100, principal point (80, 60), 160×120.
pub fn desk_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(100.0, 100.0, 80.0, 60.0, 160, 120).expect("valid intrinsics")
}

fn noise(seed: u64, scale: f64) -> Texture {
    Texture::Noise { scale, seed, tint: [0.95, 0.9, 0.85], checker: None }
}

fn up() -> Vector3<f64> {
    Vector3::new(0.0, -1.0, 0.0)
}

fn look(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    Pose::look_at(eye, target, up()).expect("non-degenerate camera")
}

fn lateral(offsets: &[f64]) -> Vec<Pose> {
    offsets.iter().map(|x| Pose::from_translation(Vector3::new(-x, 0.0, 0.0))).collect()
}

/// Textured plane `z = depth` seen by three cameras at `x = −b, 0, +b`;
/// the reference is the middle view.
pub fn fronto_plane(depth: f64, baseline: f64) -> Fixture {
    let scene = Scene {
        primitives: vec![Primitive::Plane { point: [0.0, 0.0, depth], normal: [0.0, 0.0, -1.0], texture: noise(11, 0.05) }],
        background: [0.0; 3],
    };
    Fixture::new(scene, lateral(&[-baseline, 0.0, baseline]), PlaneSampling::default())
}

/// Plane `z = 2 + 0.2·X` seen from the origin.
pub fn slanted_plane() -> Fixture {
    let scene = Scene {
        primitives: vec![Primitive::Plane { point: [0.0, 0.0, 2.0], normal: [0.2, 0.0, -1.0], texture: noise(12, 0.05) }],
        background: [0.0; 3],
    };
    Fixture::new(scene, vec![Pose::identity()], PlaneSampling::default())
}

/// Unit sphere centered at `(0, 0, 2.5)` seen from the origin.
pub fn sphere() -> Fixture {
    let scene = Scene {
        primitives: vec![Primitive::Sphere { center: [0.0, 0.0, 2.5], radius: 1.0, texture: noise(13, 0.05) }],
        background: [0.0; 3],
    };
    Fixture::new(scene, vec![Pose::identity()], PlaneSampling::default())
}

/// Slanted plane with multiplicative depth noise of relative sigma `rel_sigma`.
pub fn noisy_plane(rel_sigma: f64) -> Fixture {
    let scene = Scene {
        primitives: vec![Primitive::Plane { point: [0.0, 0.0, 2.0], normal: [0.15, -0.1, -1.0], texture: noise(14, 0.05) }],
        background: [0.0; 3],
    };
    let mut f = Fixture::new(scene, vec![Pose::identity()], PlaneSampling::default());
    f.depth_noise = Some(rel_sigma);
    f.seed = 14;
    f
}

/// Two thin boxes at depth 2 that extend past the image edges, separated by a
/// vertical gap, in front of a bluish wall at depth 4. The side cameras at
/// `x = ±0.7` see the wall region behind the gap hidden by the opposite box,
/// so it is occluded in both sources.
pub fn two_box() -> Fixture {
    let gap = 0.3;
    let wall = Texture::Noise { scale: 0.06, seed: 21, tint: [0.3, 0.5, 1.0], checker: None };
    let board = |seed| Texture::Noise { scale: 0.04, seed, tint: [1.0, 0.6, 0.3], checker: None };
    let scene = Scene {
        primitives: vec![
            Primitive::Plane { point: [0.0, 0.0, 4.0], normal: [0.0, 0.0, -1.0], texture: wall },
            Primitive::Box { center: [-(gap / 2.0 + 2.0), 0.0, 2.05], half_extents: [2.0, 3.0, 0.05], texture: board(22) },
            Primitive::Box { center: [gap / 2.0 + 2.0, 0.0, 2.05], half_extents: [2.0, 3.0, 0.05], texture: board(23) },
        ],
        background: [0.0; 3],
    };
    Fixture::new(scene, lateral(&[-0.7, 0.0, 0.7]), PlaneSampling::new(1.0, 6.0, 64).expect("valid sampling"))
}

/// Camera inside a textured room with a box, a sphere and a pillar, moving
/// laterally over 41 frames spaced 3 cm apart while panning across the far
/// wall.
pub fn textured_room() -> Fixture {
    let scene = Scene {
        primitives: vec![
            Primitive::Box { center: [0.0, 0.0, 1.5], half_extents: [2.5, 1.6, 3.0], texture: noise(31, 0.07) },
            Primitive::Box { center: [-0.7, 1.1, 2.7], half_extents: [0.45, 0.5, 0.4], texture: noise(32, 0.04) },
            Primitive::Sphere { center: [0.9, 0.6, 2.9], radius: 0.45, texture: noise(33, 0.04) },
            Primitive::Box { center: [0.15, -0.2, 3.6], half_extents: [0.12, 1.4, 0.12], texture: noise(34, 0.03) },
        ],
        background: [0.0; 3],
    };
    let poses = (0..41)
        .map(|i| {
            let x = -0.6 + 0.03 * i as f64;
            look(Vector3::new(x, 0.0, 0.0), Vector3::new(3.0 * x, 0.1, 3.0))
        })
        .collect();
    Fixture::new(scene, poses, PlaneSampling::new(1.5, 5.5, 64).expect("valid sampling"))
}

/// Box centered at `(0, 0, 3)` seen by 8 cameras on a ring around it.
pub fn fusion_box() -> Fixture {
    let center = Vector3::new(0.0, 0.0, 3.0);
    let scene = Scene {
        primitives: vec![Primitive::Box { center: [0.0, 0.0, 3.0], half_extents: [0.3, 0.25, 0.35], texture: noise(41, 0.04) }],
        background: [0.0; 3],
    };
    let poses = (0..8)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 8.0 + 0.3;
            let h = if i % 2 == 0 { -0.6 } else { 0.5 };
            look(center + Vector3::new(1.5 * a.sin(), h, -1.5 * a.cos()), center)
        })
        .collect();
    Fixture::new(scene, poses, PlaneSampling::new(0.5, 3.0, 64).expect("valid sampling"))
}

/// Two pillars in front of a textured wall, seen by 9 laterally moving
/// cameras: strong occlusions for fusion comparisons.
pub fn occlusion_fusion() -> Fixture {
    let scene = Scene {
        primitives: vec![
            Primitive::Plane { point: [0.0, 0.0, 3.5], normal: [0.0, 0.0, -1.0], texture: noise(51, 0.06) },
            Primitive::Box { center: [-0.35, 0.0, 2.0], half_extents: [0.12, 3.0, 0.1], texture: noise(52, 0.04) },
            Primitive::Box { center: [0.4, 0.0, 1.8], half_extents: [0.1, 3.0, 0.1], texture: noise(53, 0.04) },
        ],
        background: [0.0; 3],
    };
    let offsets: Vec<f64> = (0..9).map(|i| -0.4 + 0.1 * i as f64).collect();
    Fixture::new(scene, lateral(&offsets), PlaneSampling::new(1.0, 5.0, 64).expect("valid sampling"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in FixtureKind::ALL {
            assert_eq!(k.name().parse::<FixtureKind>().unwrap(), k);
        }
        assert!("nope".parse::<FixtureKind>().is_err());
    }

    #[test]
    fn fixtures_render() {
        for k in FixtureKind::ALL {
            let f = k.build();
            let r = f.render_view(0).unwrap();
            assert!(r.depth.valid_count() > 1000, "{}", k.name());
        }
    }

    #[test]
    fn room_is_fully_covered() {
        let f = textured_room();
        let r = f.render_view(20).unwrap();
        assert_eq!(r.depth.valid_count(), 160 * 120);
        let (lo, hi) = r.depth.depths().iter().fold((f64::INFINITY, 0.0f64), |(a, b), d| (a.min(*d), b.max(*d)));
        assert!(lo > f.sampling.d_min && hi < f.sampling.d_max, "{lo} {hi}");
    }
}
