//! Invariants of the public API as property tests.

use nalgebra::{Point2, Vector3};
use proptest::prelude::*;
use sweepdepth::cost_volume::CostVolume;
use sweepdepth::geometry::{backproject, homography_for_plane, project, CameraIntrinsics, DepthMap, PlaneSampling, Pose};
use sweepdepth::losses::depth_metrics;
use sweepdepth::occlusion::{occlusion_probability, refine_depth, RefineConfig};
use sweepdepth::tsdf::TsdfVolume;

fn intrinsics() -> impl Strategy<Value = CameraIntrinsics> {
    (50.0f64..500.0, 0.9f64..1.1, 0.4f64..0.6, 0.4f64..0.6)
        .prop_map(|(f, a, u, v)| CameraIntrinsics::new(f, f * a, 320.0 * u, 240.0 * v, 320, 240).unwrap())
}

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-1.0f64..1.0), 0.0f64..0.3, prop::array::uniform3(-0.4f64..0.4)).prop_filter_map(
        "degenerate axis",
        |(a, angle, t)| Pose::from_axis_angle(Vector3::from(a), angle, Vector3::from(t)).ok(),
    )
}

fn volume(w: usize, h: usize, costs: Vec<f64>) -> CostVolume {
    let s = PlaneSampling::new(1.0, 4.0, costs.len() / (w * h)).unwrap();
    let n = costs.len();
    CostVolume::new(w, h, s, costs, vec![true; n]).unwrap()
}

fn depths(values: &[f64]) -> DepthMap {
    DepthMap::from_depths(values.len(), 1, values.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn homography_agrees_with_point_transfer(k in intrinsics(), p in pose(), d in 0.5f64..10.0, u in 0.0f64..320.0, v in 0.0f64..240.0) {
        let q = Point2::new(u, v);
        let direct = project(&backproject(q, d, &k), &k, &p);
        prop_assume!(direct.in_front());
        let h = homography_for_plane(&k, &p, d).unwrap() * Vector3::new(u, v, 1.0);
        let via_h = Point2::new(h.x / h.z, h.y / h.z);
        prop_assert!((via_h - direct.pixel).norm() < 1e-8);
    }

    #[test]
    fn relative_pose_maps_reference_to_source(a in pose(), b in pose(), x in prop::array::uniform3(-2.0f64..2.0)) {
        let x = Vector3::from(x);
        let rel = Pose::relative(&a, &b);
        let via_rel = rel.transform_point(&a.transform_point(&x));
        prop_assert!((via_rel - b.transform_point(&x)).norm() < 1e-9);
    }

    #[test]
    fn occlusion_is_symmetric_and_scale_free(
        d in prop::collection::vec(prop::collection::vec(1.0f64..4.0, 6), 2..5),
        costs in prop::collection::vec(0.0f64..1.0, 6 * 8),
        s in 0.01f64..100.0,
    ) {
        let maps: Vec<DepthMap> = d.iter().map(|v| depths(v)).collect();
        let mut reversed = maps.clone();
        reversed.reverse();
        let v = volume(6, 1, costs.clone());
        let cfg = RefineConfig::default();
        let p = occlusion_probability(&maps, &v, &cfg).unwrap();
        prop_assert_eq!(&p, &occlusion_probability(&reversed, &v, &cfg).unwrap());
        let scaled = volume(6, 1, costs.iter().map(|c| c * s).collect());
        let q = occlusion_probability(&maps, &scaled, &cfg).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn final_depth_stays_within_contributions(
        d in prop::collection::vec(prop::collection::vec(1.0f64..4.0, 5), 2..5),
        costs in prop::collection::vec(0.0f64..1.0, 5 * 16),
    ) {
        let maps: Vec<DepthMap> = d.iter().map(|v| depths(v)).collect();
        let v = volume(5, 1, costs);
        let cfg = RefineConfig::default();
        let p = occlusion_probability(&maps, &v, &cfg).unwrap();
        let fin = refine_depth(&maps, &v, &p, &cfg).unwrap();
        let extracted = sweepdepth::depth::extract_depth(&v, &cfg.extraction).unwrap();
        for i in 0..5 {
            let mut all: Vec<f64> = d.iter().map(|m| m[i]).collect();
            all.push(extracted.at(i).unwrap());
            let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let x = fin.at(i).unwrap();
            prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        }
    }

    #[test]
    fn depth_metrics_ignore_pixel_order(d in prop::collection::vec((0.2f64..8.0, 0.2f64..8.0), 2..40), rot in 0usize..40) {
        let pred: Vec<f64> = d.iter().map(|x| x.0).collect();
        let gt: Vec<f64> = d.iter().map(|x| x.1).collect();
        let r = rot % d.len();
        let (mut p2, mut g2) = (pred.clone(), gt.clone());
        p2.rotate_left(r);
        g2.rotate_left(r);
        let a = depth_metrics(&depths(&pred), &depths(&gt)).unwrap();
        let b = depth_metrics(&depths(&p2), &depths(&g2)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn sphere_fields_mesh_to_closed_surfaces(c in prop::array::uniform3(-0.1f64..0.1), r in 0.15f64..0.32) {
        let c = Vector3::from(c);
        let v = TsdfVolume::from_fn(Vector3::repeat(-0.5), 0.05, [21, 21, 21], |p| {
            (((p - c).norm() - r) / 0.15, 1.0)
        }).unwrap();
        let mesh = v.extract_mesh(1.0).unwrap();
        let e = mesh.edge_stats();
        prop_assert!(!mesh.is_empty());
        prop_assert_eq!((e.boundary, e.non_manifold), (0, 0));
    }
}
