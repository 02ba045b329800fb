use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::raster::Image;
use crate::error::{invalid, Result};

/// Sample positions closer than this to a pixel center are snapped onto it, so
/// homographies that are the identity up to rounding reproduce pixels exactly.
pub const SNAP_TOLERANCE_PX: f64 = 1e-9;

/// Source image resampled on the reference pixel grid, with a coverage mask.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    pub image: Image,
    pub coverage: Vec<bool>,
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_TOLERANCE_PX {
        r
    } else {
        v
    }
}

/// Maps reference pixel `(x, y)` through `h`; `None` for points at or behind
/// the source camera's principal plane.
#[inline]
pub fn apply_homography(h: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(x, y, 1.0);
    if p.z <= 0.0 || !p.z.is_finite() {
        return None;
    }
    Some((snap(p.x / p.z), snap(p.y / p.z)))
}

/// Resamples `source` at `h · u` for every reference pixel `u` of an output
/// the same size as `source`. Uncovered pixels hold 0 and `coverage = false`.
pub fn warp_to_reference_plane(source: &Image, h: &Matrix3<f64>) -> Result<WarpedImage> {
    warp_into(source, h, source.width(), source.height())
}

/// As [`warp_to_reference_plane`] with an explicit output size.
pub fn warp_into(source: &Image, h: &Matrix3<f64>, width: usize, height: usize) -> Result<WarpedImage> {
    if !h.iter().all(|v| v.is_finite()) {
        return Err(invalid("homography must be finite"));
    }
    let det = h.determinant();
    let scale = h.abs().max();
    if scale == 0.0 || det.abs() <= 1e-12 * scale.powi(3) {
        return Err(invalid("singular homography"));
    }
    let ch = source.channels();
    let mut data = vec![0.0; width * height * ch];
    let mut coverage = vec![false; width * height];
    data.par_chunks_mut(width * ch)
        .zip(coverage.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (row, cov))| {
            for x in 0..width {
                if let Some((sx, sy)) = apply_homography(h, x as f64, y as f64) {
                    cov[x] = source.bilinear(sx, sy, &mut row[x * ch..(x + 1) * ch]);
                }
            }
        });
    Ok(WarpedImage { image: Image::from_raw_unchecked(width, height, ch, data), coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> Image {
        Image::from_fn(20, 10, 1, |x, y, _| (x as f64 + 20.0 * y as f64) / 220.0).unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = Image::from_fn(13, 7, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0).unwrap();
        let w = warp_to_reference_plane(&img, &Matrix3::identity()).unwrap();
        assert_eq!(w.image, img);
        assert!(w.coverage.iter().all(|c| *c));
    }

    #[test]
    fn integer_shift() {
        let img = ramp();
        let mut h = Matrix3::identity();
        h[(0, 2)] = 3.0;
        let w = warp_to_reference_plane(&img, &h).unwrap();
        for y in 0..10 {
            for x in 0..20 {
                let covered = w.coverage[y * 20 + x];
                assert_eq!(covered, x + 3 < 20);
                if covered {
                    assert_eq!(w.image.get(x, y, 0), img.get(x + 3, y, 0));
                }
            }
        }
    }

    #[test]
    fn singular_rejected() {
        let mut h = Matrix3::identity();
        h[(2, 2)] = 0.0;
        h[(1, 1)] = 0.0;
        assert!(warp_to_reference_plane(&ramp(), &h).is_err());
        assert!(warp_to_reference_plane(&ramp(), &Matrix3::zeros()).is_err());
    }

    fn arb_h() -> impl Strategy<Value = Matrix3<f64>> {
        (-0.05f64..0.05, -0.05f64..0.05, -4.0f64..4.0, -0.05f64..0.05, -0.05f64..0.05, -4.0f64..4.0, -1e-3f64..1e-3, -1e-3f64..1e-3)
            .prop_map(|(a, b, c, d, e, f, g, i)| Matrix3::new(1.0 + a, b, c, d, 1.0 + e, f, g, i, 1.0))
    }

    proptest! {
        #[test]
        fn warp_is_linear(h in arb_h(), a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            let x = Image::from_fn(16, 12, 1, |px, py, _| (((px * 31 + py * 17) as u64 + seed) % 97) as f64 / 96.0).unwrap();
            let y = Image::from_fn(16, 12, 1, |px, py, _| (((px * 13 + py * 29) as u64 + 3 * seed) % 89) as f64 / 88.0).unwrap();
            let wx = warp_to_reference_plane(&x, &h).unwrap();
            let wy = warp_to_reference_plane(&y, &h).unwrap();
            // Linear combinations leave [0, 1]; compare the bilinear operator directly.
            let combo: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
            let z = Image::from_raw_unchecked(16, 12, 1, combo);
            let wz = warp_to_reference_plane(&z, &h).unwrap();
            for i in 0..16 * 12 {
                prop_assert_eq!(wz.coverage[i], wx.coverage[i]);
                if wz.coverage[i] {
                    let expect = a * wx.image.data()[i] + b * wy.image.data()[i];
                    prop_assert!((wz.image.data()[i] - expect).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn shrinking_source_never_adds_coverage(h in arb_h(), dw in 1usize..6, dh in 1usize..6) {
            let big = Image::filled(16, 12, 1, 0.5).unwrap();
            let small = Image::filled(16 - dw, 12 - dh, 1, 0.5).unwrap();
            let wb = warp_into(&big, &h, 16, 12).unwrap();
            let ws = warp_into(&small, &h, 16, 12).unwrap();
            for i in 0..16 * 12 {
                prop_assert!(!ws.coverage[i] || wb.coverage[i]);
            }
        }
    }
}
