//! End-to-end driver: frame windowing, per-window sweep and refinement,
//! evaluation and fusion over a sequence.

mod config;
mod dataset;

pub use config::{Bounds, FusionConfig, PipelineConfig, ReferenceChoice};
pub use dataset::{frame_name, write_fixture_dataset, Dataset};

use std::fs;
use std::path::Path;

use log::{info, warn};
use nalgebra::{Point2, Vector3};
use serde::Serialize;

use crate::cost_volume::{aggregate_cost_volume, average_cost_volumes, build_cost_volume, CostVolume};
use crate::depth::extract_depth;
use crate::error::{Error, Result};
use crate::geometry::{backproject, CameraIntrinsics, DepthMap, Image, Pose};
use crate::io;
use crate::losses::{
    depth_metrics, normal_metrics, occlusion_aware_loss, total_initial_loss, DepthMetrics, NormalMetrics,
};
use crate::normals::{build_cnm, normals_from_depth_with, PlaneMaskSet};
use crate::occlusion::{occlusion_probability, refine_depth, OcclusionMap};
use crate::synth::FixtureKind;
use crate::tsdf::{EdgeStats, Mesh, TsdfVolume};

/// A reference position and its source positions, as indices into a frame list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Window {
    pub reference: usize,
    pub sources: Vec<usize>,
}

/// Windows over `count` frames with `n` sources each. Positions without a
/// complete window are returned separately.
pub fn select_windows(count: usize, n: usize, reference: ReferenceChoice) -> (Vec<Window>, Vec<usize>) {
    let (before, after) = match reference {
        ReferenceChoice::Middle => (n / 2, n - n / 2),
        ReferenceChoice::Last => (n, 0),
    };
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for r in 0..count {
        if r < before || r + after >= count {
            skipped.push(r);
            continue;
        }
        let sources = (r - before..r).chain(r + 1..=r + after).collect();
        windows.push(Window { reference: r, sources });
    }
    (windows, skipped)
}

/// Color image and world-to-camera pose of one frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Image,
    pub pose: Pose,
}

/// Optional ground truth for evaluating a window.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub depth: &'a DepthMap,
    pub planes: Option<&'a PlaneMaskSet>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowMetrics {
    #[serde(rename = "final")]
    pub final_depth: DepthMetrics,
    pub pairs: Vec<Option<DepthMetrics>>,
    pub normals: Option<NormalMetrics>,
    pub initial_loss: Option<f64>,
    pub occlusion_aware_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WindowResult {
    pub depth: DepthMap,
    /// Absent with a single source view.
    pub occlusion: Option<OcclusionMap>,
    pub pair_depths: Vec<DepthMap>,
    pub avg_volume: CostVolume,
    pub metrics: Option<WindowMetrics>,
}

/// Aggregated cost volume of one reference/source pair.
pub fn sweep_pair(reference: &Frame, source: &Frame, k: &CameraIntrinsics, cfg: &PipelineConfig) -> Result<CostVolume> {
    let rel = Pose::relative(&reference.pose, &source.pose);
    let raw = build_cost_volume(&reference.image, &source.image, k, &rel, &cfg.sampling)?;
    aggregate_cost_volume(&raw, &reference.image, cfg.aggregation.radius, cfg.aggregation.sigma_color)
}

/// Per-pair sweep, volume averaging, occlusion estimation and refinement for
/// one reference frame. Metrics are computed when ground truth is given.
pub fn run_window(
    reference: &Frame,
    sources: &[Frame],
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
    gt: Option<GroundTruth<'_>>,
) -> Result<WindowResult> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::Config("a window needs at least one source frame".into()));
    }
    let mut volumes = Vec::with_capacity(sources.len());
    let mut pair_depths = Vec::with_capacity(sources.len());
    for src in sources {
        let v = sweep_pair(reference, src, k, cfg)?;
        pair_depths.push(extract_depth(&v, &cfg.extraction)?);
        volumes.push(v);
    }
    let avg_volume = average_cost_volumes(&volumes)?;
    drop(volumes);
    let (depth, occlusion) = if pair_depths.len() >= 2 {
        let occ = occlusion_probability(&pair_depths, &avg_volume, &cfg.refine)?;
        (refine_depth(&pair_depths, &avg_volume, &occ, &cfg.refine)?, Some(occ))
    } else {
        (pair_depths[0].clone(), None)
    };
    let metrics = gt.map(|g| evaluate_window(&depth, occlusion.as_ref(), &pair_depths, k, cfg, g)).transpose()?;
    Ok(WindowResult { depth, occlusion, pair_depths, avg_volume, metrics })
}

fn evaluate_window(
    depth: &DepthMap,
    occ: Option<&OcclusionMap>,
    pairs: &[DepthMap],
    k: &CameraIntrinsics,
    cfg: &PipelineConfig,
    gt: GroundTruth<'_>,
) -> Result<WindowMetrics> {
    let final_depth = depth_metrics(depth, gt.depth)?;
    let pairs = pairs.iter().map(|p| depth_metrics(p, gt.depth).ok()).collect();
    let pred_normals = normals_from_depth_with(depth, k, &cfg.normals)?;
    let gt_normals = normals_from_depth_with(gt.depth, k, &cfg.normals)?;
    let cnm = match gt.planes {
        Some(m) => build_cnm(&gt_normals, m)?,
        None => gt_normals,
    };
    let normals = normal_metrics(&pred_normals, &cnm).ok();
    let initial_loss = total_initial_loss(depth, gt.depth, &pred_normals, &cnm, &cfg.loss).ok();
    let occlusion_aware = occ.and_then(|o| occlusion_aware_loss(depth, gt.depth, &pred_normals, &cnm, o, &cfg.loss).ok());
    Ok(WindowMetrics { final_depth, pairs, normals, initial_loss, occlusion_aware_loss: occlusion_aware })
}

/// Writes `depth/ID.pfm`, `occlusion/ID.pfm`, `pairs/ID_J.pfm` and
/// `metrics/ID.json` under `out`.
pub fn write_window_outputs(out: &Path, frame: u64, result: &WindowResult) -> Result<()> {
    let name = frame_name(frame);
    for sub in ["depth", "occlusion", "pairs", "metrics"] {
        fs::create_dir_all(out.join(sub))?;
    }
    io::write_depth(&out.join("depth").join(format!("{name}.pfm")), &result.depth)?;
    if let Some(o) = &result.occlusion {
        io::write_occlusion(&out.join("occlusion").join(format!("{name}.pfm")), o)?;
    }
    for (j, d) in result.pair_depths.iter().enumerate() {
        io::write_depth(&out.join("pairs").join(format!("{name}_{j}.pfm")), d)?;
    }
    if let Some(m) = &result.metrics {
        io::write_json(&out.join("metrics").join(format!("{name}.json")), m)?;
    }
    Ok(())
}

/// Frames kept after applying the frame interval.
pub fn sampled_frames(frames: &[u64], interval: usize) -> Vec<u64> {
    frames.iter().copied().step_by(interval.max(1)).collect()
}

/// Volume bounds: configured, or the box enclosing every reference camera
/// frustum between the nearest and farthest sweep planes.
pub fn fusion_bounds(cfg: &PipelineConfig, k: &CameraIntrinsics, poses: &[Pose]) -> Bounds {
    if let Some(b) = cfg.fusion.bounds {
        return b;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let corners = [(0.0, 0.0), ((k.width - 1) as f64, 0.0), (0.0, (k.height - 1) as f64), ((k.width - 1) as f64, (k.height - 1) as f64)];
    for pose in poses {
        let inv = pose.inverse();
        for d in [cfg.sampling.d_min, cfg.sampling.d_max] {
            for (x, y) in corners {
                let p = inv.transform_point(&backproject(Point2::new(x, y), d, k));
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }
    Bounds { min: lo.into(), max: hi.into() }
}

/// Empty volume covering `bounds`, or a configuration error when it would
/// exceed `max_voxels`.
pub fn fusion_volume(cfg: &FusionConfig, bounds: &Bounds) -> Result<TsdfVolume> {
    let dims: Vec<f64> = (0..3).map(|a| ((bounds.max[a] - bounds.min[a]) / cfg.voxel_size).ceil() + 1.0).collect();
    let voxels = dims.iter().product::<f64>();
    if !voxels.is_finite() || voxels > cfg.max_voxels as f64 {
        return Err(Error::Config(format!(
            "fusion volume of {:.0}x{:.0}x{:.0} voxels exceeds the limit of {}; set fusion.bounds or a larger voxel_size",
            dims[0], dims[1], dims[2], cfg.max_voxels
        )));
    }
    TsdfVolume::new(Vector3::from(bounds.min), cfg.voxel_size, [dims[0] as usize, dims[1] as usize, dims[2] as usize])
}

/// Pipeline settings matched to a synthetic fixture: its plane sampling, a
/// frame interval suited to its trajectory, and fusion bounds around the
/// scene.
pub fn fixture_config(kind: FixtureKind) -> PipelineConfig {
    let mut cfg = PipelineConfig { frame_interval: 1, sampling: kind.build().sampling, ..Default::default() };
    let fusion = |voxel_size: f64, min: [f64; 3], max: [f64; 3]| FusionConfig {
        voxel_size,
        trunc: 4.0 * voxel_size,
        bounds: Some(Bounds { min, max }),
        ..Default::default()
    };
    cfg.fusion = match kind {
        FixtureKind::FrontoPlane => fusion(0.05, [-3.5, -3.0, 5.5], [3.5, 3.0, 6.5]),
        FixtureKind::SlantedPlane | FixtureKind::NoisyPlane => fusion(0.04, [-2.0, -1.5, 1.2], [2.0, 1.5, 3.2]),
        FixtureKind::Sphere => fusion(0.02, [-1.1, -1.1, 1.4], [1.1, 1.1, 3.6]),
        FixtureKind::TwoBox => fusion(0.04, [-2.5, -1.8, 1.8], [2.5, 1.8, 4.2]),
        FixtureKind::TexturedRoom => fusion(0.08, [-2.6, -1.7, -1.6], [2.6, 1.7, 4.6]),
        FixtureKind::FusionBox => fusion(0.01, [-0.45, -0.4, 2.55], [0.45, 0.4, 3.45]),
        FixtureKind::OcclusionFusion => fusion(0.02, [-1.0, -0.7, 1.5], [1.0, 0.7, 3.7]),
    };
    if kind == FixtureKind::TexturedRoom {
        cfg.frame_interval = 5;
    }
    cfg
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowSummary {
    pub frame: u64,
    pub sources: Vec<u64>,
    pub metrics: Option<WindowMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceSummary {
    pub windows: Vec<WindowSummary>,
    /// Sampled frames without a complete window.
    pub skipped: Vec<u64>,
    pub vertices: usize,
    pub triangles: usize,
    pub edges: EdgeStats,
}

#[derive(Debug)]
pub struct SequenceResult {
    pub summary: SequenceSummary,
    pub mesh: Mesh,
    pub volume: TsdfVolume,
}

/// Runs every complete window of the dataset, fuses each final depth map
/// weighted by `1 − P`, and writes per-window outputs, `mesh.ply`,
/// `summary.json` and `metrics.txt` under `out`.
pub fn run_sequence(dataset_dir: &Path, cfg: &PipelineConfig, out: &Path) -> Result<SequenceResult> {
    cfg.validate()?;
    let ds = Dataset::open(dataset_dir)?;
    let frames = sampled_frames(&ds.frames, cfg.frame_interval);
    let (windows, skipped) = select_windows(frames.len(), cfg.window, cfg.reference);
    for &s in &skipped {
        warn!("frame {}: incomplete window, skipped", frame_name(frames[s]));
    }
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "no complete window of {} sources among {} sampled frames",
            cfg.window,
            frames.len()
        )));
    }
    for w in &windows {
        for &i in std::iter::once(&w.reference).chain(&w.sources) {
            ds.pose(frames[i])?;
        }
    }
    let ref_poses: Vec<Pose> = windows.iter().map(|w| ds.pose(frames[w.reference])).collect::<Result<_>>()?;
    let bounds = fusion_bounds(cfg, &ds.k, &ref_poses);
    let mut volume = fusion_volume(&cfg.fusion, &bounds)?;
    fs::create_dir_all(out)?;

    let load = |i: usize| -> Result<Frame> { Ok(Frame { image: ds.color(frames[i])?, pose: ds.pose(frames[i])? }) };
    let mut summaries = Vec::with_capacity(windows.len());
    let mut table_rows = Vec::new();
    for w in &windows {
        let id = frames[w.reference];
        let reference = load(w.reference)?;
        let sources = w.sources.iter().map(|&i| load(i)).collect::<Result<Vec<_>>>()?;
        let gt_depth = ds.gt_depth(id)?;
        let planes = ds.planes(id)?;
        let gt = gt_depth.as_ref().map(|depth| GroundTruth { depth, planes: planes.as_ref() });
        let result = run_window(&reference, &sources, &ds.k, cfg, gt)?;
        write_window_outputs(out, id, &result)?;
        let occ = if cfg.fusion.occlusion_weighting { result.occlusion.as_ref() } else { None };
        volume.integrate(&result.depth, &reference.image, occ, &ds.k, &reference.pose, cfg.fusion.trunc)?;
        if let Some(m) = &result.metrics {
            info!("frame {}: abs.rel {:.4}", frame_name(id), m.final_depth.abs_rel);
            table_rows.push((frame_name(id), m.final_depth));
        }
        summaries.push(WindowSummary {
            frame: id,
            sources: w.sources.iter().map(|&i| frames[i]).collect(),
            metrics: result.metrics,
        });
    }
    let mesh = volume.extract_mesh(cfg.fusion.min_weight)?;
    io::write_ply(&out.join("mesh.ply"), &mesh)?;
    let summary = SequenceSummary {
        windows: summaries,
        skipped: skipped.iter().map(|&s| frames[s]).collect(),
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        edges: mesh.edge_stats(),
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    fs::write(out.join("metrics.txt"), io::depth_metrics_table(&table_rows))?;
    Ok(SequenceResult { summary, mesh, volume })
}
