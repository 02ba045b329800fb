use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use sweepdepth::geometry::{CameraIntrinsics, DepthMap};
use sweepdepth::io;
use sweepdepth::losses::{depth_metrics, normal_metrics};
use sweepdepth::normals::{build_cnm, normals_from_depth_with, NormalMap};
use sweepdepth::occlusion::{occlusion_probability, refine_depth};
use sweepdepth::pipeline::{
    fixture_config, frame_name, fusion_bounds, fusion_volume, run_sequence, sampled_frames, select_windows,
    sweep_pair, write_fixture_dataset, Dataset, Frame, PipelineConfig, ReferenceChoice,
};
use sweepdepth::cost_volume::average_cost_volumes;
use sweepdepth::depth::extract_depth;
use sweepdepth::synth::{Fixture, FixtureKind};
use sweepdepth::{Error, Result};

#[derive(Parser)]
#[command(name = "sweepdepth", version, about = "Plane-sweep depth, occlusion-aware refinement and TSDF fusion")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-pair plane sweep for one reference frame.
    Sweep(SweepArgs),
    /// Occlusion map and final depth from a sweep directory.
    Refine(RefineArgs),
    /// Local normals and the combined normal map of a depth map.
    Cnm(CnmArgs),
    /// Depth (and optionally normal) metrics against ground truth.
    Eval(EvalArgs),
    /// TSDF fusion of depth maps into a mesh.
    Fuse(FuseArgs),
    /// Render a synthetic fixture into a dataset directory.
    Synth(SynthArgs),
    /// Full pipeline over a dataset.
    Run(RunArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline TOML. Defaults to `pipeline.toml` in the dataset, if present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum)]
    reference: Option<Reference>,
    #[arg(long)]
    frame_interval: Option<usize>,
    /// Number of sweep planes.
    #[arg(long)]
    planes: Option<usize>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    trunc: Option<f64>,
    /// Fuse every sample with weight 1.
    #[arg(long)]
    no_occlusion_weighting: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Middle,
    Last,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Reference frame id.
    #[arg(long)]
    frame: u64,
    /// Source frame ids. Derived from the window settings when omitted.
    #[arg(long, value_delimiter = ',')]
    sources: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct RefineArgs {
    /// Directory written by `sweep`.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct CnmArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// 16-bit plane label image.
    #[arg(long)]
    planes: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    radius: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also evaluate normals of both depth maps.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Plane labels for building the ground-truth combined normal map.
    #[arg(long)]
    planes: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of `ID.pfm` depth maps.
    #[arg(long)]
    depth_dir: PathBuf,
    /// Directory of `ID.pfm` occlusion maps used as `1 − P` weights.
    #[arg(long)]
    occlusion_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the raw volume.
    #[arg(long)]
    tsdf: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    fixture: Option<String>,
    /// Fixture JSON (scene, intrinsics, poses, sampling).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ConfigArgs {
    fn resolve(&self, dataset: Option<&Path>) -> Result<PipelineConfig> {
        let default_path = dataset.map(|d| d.join("pipeline.toml")).filter(|p| p.is_file());
        let mut cfg = match self.config.as_deref().or(default_path.as_deref()) {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(n) = self.window {
            cfg.window = n;
        }
        if let Some(r) = self.reference {
            cfg.reference = match r {
                Reference::Middle => ReferenceChoice::Middle,
                Reference::Last => ReferenceChoice::Last,
            };
        }
        if let Some(i) = self.frame_interval {
            cfg.frame_interval = i;
        }
        if let Some(n) = self.planes {
            cfg.sampling.count = n;
        }
        if let Some(d) = self.d_min {
            cfg.sampling.d_min = d;
        }
        if let Some(d) = self.d_max {
            cfg.sampling.d_max = d;
        }
        if let Some(v) = self.voxel_size {
            cfg.fusion.voxel_size = v;
        }
        if let Some(t) = self.trunc {
            cfg.fusion.trunc = t;
        }
        if self.no_occlusion_weighting {
            cfg.fusion.occlusion_weighting = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes pretty JSON to stdout. A closed pipe is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    io::parse_intrinsics(&fs::read_to_string(path)?)
}

#[derive(Serialize, serde::Deserialize)]
struct SweepManifest {
    frame: u64,
    sources: Vec<u64>,
    width: usize,
    height: usize,
}

fn window_sources(ds: &Dataset, cfg: &PipelineConfig, frame: u64) -> Result<Vec<u64>> {
    let frames = sampled_frames(&ds.frames, cfg.frame_interval);
    let pos = frames
        .iter()
        .position(|&f| f == frame)
        .ok_or_else(|| config_error(format!("frame {} is not a sampled frame", frame_name(frame))))?;
    let (windows, _) = select_windows(frames.len(), cfg.window, cfg.reference);
    let w = windows
        .iter()
        .find(|w| w.reference == pos)
        .ok_or_else(|| config_error(format!("frame {} has no complete window", frame_name(frame))))?;
    Ok(w.sources.iter().map(|&i| frames[i]).collect())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.cfg.resolve(Some(&a.dataset))?;
    let ds = Dataset::open(&a.dataset)?;
    let sources = if a.sources.is_empty() { window_sources(&ds, &cfg, a.frame)? } else { a.sources.clone() };
    let load = |id: u64| -> Result<Frame> { Ok(Frame { image: ds.color(id)?, pose: ds.pose(id)? }) };
    let reference = load(a.frame)?;
    let frames = sources.iter().map(|&id| load(id)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out)?;
    let mut volumes = Vec::with_capacity(frames.len());
    let mut valid = Vec::new();
    for (j, src) in frames.iter().enumerate() {
        let v = sweep_pair(&reference, src, &ds.k, &cfg)?;
        let d = extract_depth(&v, &cfg.extraction)?;
        valid.push(d.valid_count());
        io::write_depth(&a.out.join(format!("pair_{j}.pfm")), &d)?;
        volumes.push(v);
    }
    let avg = average_cost_volumes(&volumes)?;
    io::write_cost_volume(&a.out.join("volume.bin"), &avg)?;
    let manifest = SweepManifest { frame: a.frame, sources: sources.clone(), width: ds.k.width, height: ds.k.height };
    io::write_json(&a.out.join("sweep.json"), &manifest)?;
    print_json(&json!({ "frame": a.frame, "sources": sources, "valid_pixels": valid }))
}

fn refine(a: &RefineArgs) -> Result<()> {
    let cfg = a.cfg.resolve(None)?;
    let manifest: SweepManifest = serde_json::from_str(&fs::read_to_string(a.sweep.join("sweep.json"))?)?;
    let pairs = (0..manifest.sources.len())
        .map(|j| io::read_depth(&a.sweep.join(format!("pair_{j}.pfm"))))
        .collect::<Result<Vec<_>>>()?;
    let avg = io::read_cost_volume(&a.sweep.join("volume.bin"))?;
    fs::create_dir_all(&a.out)?;
    let (depth, occ) = if pairs.len() >= 2 {
        let occ = occlusion_probability(&pairs, &avg, &cfg.refine)?;
        (refine_depth(&pairs, &avg, &occ, &cfg.refine)?, Some(occ))
    } else {
        (pairs[0].clone(), None)
    };
    io::write_depth(&a.out.join("depth.pfm"), &depth)?;
    let mut occluded = None;
    if let Some(o) = &occ {
        io::write_occlusion(&a.out.join("occlusion.pfm"), o)?;
        occluded = Some(o.values().iter().zip(o.valid_mask()).filter(|(p, v)| **v && **p >= cfg.refine.threshold).count());
    }
    print_json(&json!({
        "frame": manifest.frame,
        "valid_pixels": depth.valid_count(),
        "occluded_pixels": occluded,
    }))
}

fn normals_pair(depth: &DepthMap, k: &CameraIntrinsics, radius: usize, planes: Option<&Path>) -> Result<(NormalMap, NormalMap)> {
    let opts = sweepdepth::normals::NormalOptions { radius, ..Default::default() };
    let local = normals_from_depth_with(depth, k, &opts)?;
    let cnm = match planes {
        Some(p) => build_cnm(&local, &io::read_labels(p)?)?,
        None => local.clone(),
    };
    Ok((local, cnm))
}

fn cnm(a: &CnmArgs) -> Result<()> {
    let depth = io::read_depth(&a.depth)?;
    let k = read_intrinsics(&a.intrinsics)?;
    let (local, cnm) = normals_pair(&depth, &k, a.radius, a.planes.as_deref())?;
    fs::create_dir_all(&a.out)?;
    io::write_normals(&a.out.join("normals.pfm"), &local)?;
    io::write_normals_png(&a.out.join("normals.png"), &local)?;
    io::write_normals(&a.out.join("cnm.pfm"), &cnm)?;
    io::write_normals_png(&a.out.join("cnm.png"), &cnm)?;
    print_json(&json!({ "valid_local": local.valid_count(), "valid_cnm": cnm.valid_count() }))
}

fn eval(a: &EvalArgs) -> Result<()> {
    let pred = io::read_depth(&a.pred)?;
    let gt = io::read_depth(&a.gt)?;
    let depth = depth_metrics(&pred, &gt)?;
    let normals = match &a.intrinsics {
        Some(kp) => {
            let k = read_intrinsics(kp)?;
            let opts = sweepdepth::normals::NormalOptions::default();
            let (pred_n, _) = normals_pair(&pred, &k, opts.radius, None)?;
            let (_, gt_n) = normals_pair(&gt, &k, opts.radius, a.planes.as_deref())?;
            Some(normal_metrics(&pred_n, &gt_n)?)
        }
        None => None,
    };
    let report = json!({ "depth": depth, "normals": normals });
    if let Some(p) = &a.json {
        io::write_json(p, &report)?;
    }
    print_json(&report)
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let cfg = a.cfg.resolve(Some(&a.dataset))?;
    let ds = Dataset::open(&a.dataset)?;
    let mut ids = Vec::new();
    for entry in fs::read_dir(&a.depth_dir)? {
        let name = entry?.file_name();
        if let Some(id) = name.to_string_lossy().strip_suffix(".pfm").and_then(|s| s.parse::<u64>().ok()) {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(config_error(format!("no depth maps in {}", a.depth_dir.display())));
    }
    ids.sort_unstable();
    let poses = ids.iter().map(|&id| ds.pose(id)).collect::<Result<Vec<_>>>()?;
    let bounds = fusion_bounds(&cfg, &ds.k, &poses);
    let mut volume = fusion_volume(&cfg.fusion, &bounds)?;
    for (&id, pose) in ids.iter().zip(&poses) {
        let name = frame_name(id);
        let depth = io::read_depth(&a.depth_dir.join(format!("{name}.pfm")))?;
        let occ = match &a.occlusion_dir {
            Some(dir) if cfg.fusion.occlusion_weighting => {
                let p = dir.join(format!("{name}.pfm"));
                p.exists().then(|| io::read_occlusion(&p)).transpose()?
            }
            _ => None,
        };
        volume.integrate(&depth, &ds.color(id)?, occ.as_ref(), &ds.k, pose, cfg.fusion.trunc)?;
    }
    let mesh = volume.extract_mesh(cfg.fusion.min_weight)?;
    fs::create_dir_all(&a.out)?;
    io::write_ply(&a.out.join("mesh.ply"), &mesh)?;
    if a.tsdf {
        io::write_tsdf(&a.out.join("tsdf.bin"), &volume)?;
    }
    print_json(&json!({
        "frames": ids.len(),
        "dims": volume.dims(),
        "vertices": mesh.vertices.len(),
        "triangles": mesh.triangles.len(),
        "edges": mesh.edge_stats(),
    }))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let (fixture, cfg) = match (&a.fixture, &a.spec) {
        (Some(name), _) => {
            let kind: FixtureKind = name.parse()?;
            (kind.build(), fixture_config(kind))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            let fixture: Fixture =
                serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            let cfg = PipelineConfig { frame_interval: 1, sampling: fixture.sampling, ..Default::default() };
            (fixture, cfg)
        }
        (None, None) => return Err(config_error("either --fixture or --spec is required")),
    };
    write_fixture_dataset(&fixture, &a.out)?;
    fs::write(a.out.join("pipeline.toml"), cfg.to_toml()?)?;
    io::write_json(&a.out.join("fixture.json"), &fixture)?;
    print_json(&json!({ "frames": fixture.poses.len(), "width": fixture.k.width, "height": fixture.k.height }))
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = a.cfg.resolve(Some(&a.dataset))?;
    let result = run_sequence(&a.dataset, &cfg, &a.out)?;
    print_json(&result.summary)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Refine(a) => refine(a),
        Command::Cnm(a) => cnm(a),
        Command::Eval(a) => eval(a),
        Command::Fuse(a) => fuse(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
