use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Solid procedural texture evaluated at world-space surface points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// Uniform color: the textureless regime.
    Flat { color: [f64; 3] },
    /// 3D checkerboard with cells of side `scale` meters.
    Checker { scale: f64, a: [f64; 3], b: [f64; 3] },
    /// Multi-octave value noise with base feature size `scale` meters,
    /// tinted by `tint`, optionally mixed with a checker.
    Noise { scale: f64, seed: u64, tint: [f64; 3], checker: Option<f64> },
}

impl Default for Texture {
    fn default() -> Self {
        Texture::Noise { scale: 0.08, seed: 1, tint: [0.9, 0.8, 0.7], checker: Some(0.25) }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(x as u64 ^ splitmix(y as u64 ^ splitmix(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly interpolated lattice noise in `[0, 1]`.
fn value_noise(seed: u64, p: Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
    let (u, v, w) = (smooth(f.x), smooth(f.y), smooth(f.z));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let weight = (if dx == 1 { u } else { 1.0 - u })
                    * (if dy == 1 { v } else { 1.0 - v })
                    * (if dz == 1 { w } else { 1.0 - w });
                acc += weight * lattice(seed, ix + dx, iy + dy, iz + dz);
            }
        }
    }
    acc
}

fn checker(p: &Vector3<f64>, scale: f64) -> bool {
    let s = (p.x / scale).floor() + (p.y / scale).floor() + (p.z / scale).floor();
    s.rem_euclid(2.0) == 1.0
}

impl Texture {
    pub(crate) fn validate(&self) -> Result<()> {
        let unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        let ok = match self {
            Texture::Flat { color } => unit(color),
            Texture::Checker { scale, a, b } => *scale > 0.0 && unit(a) && unit(b),
            Texture::Noise { scale, tint, checker, .. } => {
                *scale > 0.0 && unit(tint) && checker.is_none_or(|c| c > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid texture {self:?}")))
        }
    }

    /// Color in `[0, 1]³` at world point `p`.
    pub fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self {
            Texture::Flat { color } => *color,
            Texture::Checker { scale, a, b } => {
                if checker(p, *scale) {
                    *a
                } else {
                    *b
                }
            }
            Texture::Noise { scale, seed, tint, checker: cell } => {
                let q = p / *scale;
                let n = 0.5 * value_noise(*seed, q)
                    + 0.3 * value_noise(seed.wrapping_add(1), q * 2.13)
                    + 0.2 * value_noise(seed.wrapping_add(2), q * 4.37);
                let c = match cell {
                    Some(s) if checker(p, *s) => 0.25,
                    Some(_) => -0.25,
                    None => 0.0,
                };
                let g = (0.15 + 0.7 * n + c * 0.5).clamp(0.0, 1.0);
                let hue = value_noise(seed.wrapping_add(3), q * 0.5);
                [
                    (g * tint[0]).clamp(0.0, 1.0),
                    (g * (tint[1] * (0.7 + 0.3 * hue))).clamp(0.0, 1.0),
                    (g * (tint[2] * (1.0 - 0.3 * hue))).clamp(0.0, 1.0),
                ]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let t = Texture::default();
        for i in 0..500 {
            let p = Vector3::new(i as f64 * 0.013, -(i as f64) * 0.007, 1.0 + i as f64 * 0.003);
            let c = t.color(&p);
            assert_eq!(c, t.color(&p));
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn flat_is_constant() {
        let t = Texture::Flat { color: [0.4; 3] };
        assert_eq!(t.color(&Vector3::new(1.0, 2.0, 3.0)), [0.4; 3]);
        assert!(Texture::Flat { color: [1.4; 3] }.validate().is_err());
    }

    #[test]
    fn checker_alternates() {
        let t = Texture::Checker { scale: 1.0, a: [1.0; 3], b: [0.0; 3] };
        assert_ne!(t.color(&Vector3::new(0.5, 0.5, 0.5)), t.color(&Vector3::new(1.5, 0.5, 0.5)));
    }
}
