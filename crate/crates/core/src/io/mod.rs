//! File formats: PFM, PNG, PLY, camera text files, raw volume dumps and
//! metric tables.

mod pfm;
mod ply;

pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, PfmImage};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply};

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cost_volume::CostVolume;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Image, PlaneSampling, Pose};
use crate::losses::{DepthMetrics, NormalMetrics};
use crate::normals::{NormalMap, PlaneMaskSet};
use crate::occlusion::OcclusionMap;
use crate::tsdf::TsdfVolume;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Loads an 8- or 16-bit PNG as intensities in `[0, 1]`. Gray images give one
/// channel, everything else three (alpha is dropped).
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            (3, img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLumaA16(_) => (1, img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        other => (3, other.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
    };
    Image::new(w, h, channels, data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit gray or RGB PNG.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|v| to_u8(*v)).collect();
    let dynimg = match img.channels() {
        1 => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).expect("sized buffer")),
        _ => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).expect("sized buffer")),
    };
    dynimg.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn write_gray8(path: &Path, w: usize, h: usize, bytes: Vec<u8>) -> Result<()> {
    ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, bytes)
        .expect("sized buffer")
        .save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Validity mask as an 8-bit PNG: 255 valid, 0 invalid.
pub fn write_mask(path: &Path, w: usize, h: usize, mask: &[bool]) -> Result<()> {
    write_gray8(path, w, h, mask.iter().map(|v| if *v { 255 } else { 0 }).collect())
}

/// Nonzero pixels are valid.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(|v| v != 0).collect()))
}

/// Plane labels as a 16-bit gray PNG.
pub fn write_labels(path: &Path, masks: &PlaneMaskSet) -> Result<()> {
    let labels = masks
        .labels()
        .iter()
        .map(|l| u16::try_from(*l).map_err(|_| format_err(format!("plane label {l} exceeds 16 bits"))))
        .collect::<Result<Vec<u16>>>()?;
    ImageBuffer::<Luma<u16>, _>::from_raw(masks.width() as u32, masks.height() as u32, labels)
        .expect("sized buffer")
        .save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<PlaneMaskSet> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        _ => return Err(format_err(format!("{} is not a gray label image", path.display()))),
    };
    PlaneMaskSet::new(w, h, labels)
}

/// Sibling validity-mask path: `x/000001.pfm` → `x/000001.mask.png`.
pub fn mask_path(pfm_path: &Path) -> PathBuf {
    pfm_path.with_extension("mask.png")
}

/// Depth as a 1-channel PFM (invalid pixels stored as 0) plus a mask PNG.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let data = (0..depth.len()).map(|i| depth.at(i).unwrap_or(0.0) as f32).collect();
    write_pfm(path, &PfmImage { width: depth.width(), height: depth.height(), channels: 1, data })?;
    write_mask(&mask_path(path), depth.width(), depth.height(), depth.valid_mask())
}

/// Reads a depth PFM. The sibling mask is used when present; otherwise
/// pixels with finite positive depth are valid.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 1 {
        return Err(format_err(format!("{} has {} channels, expected 1", path.display(), pfm.channels)));
    }
    let depth: Vec<f64> = pfm.data.iter().map(|v| *v as f64).collect();
    let mpath = mask_path(path);
    if !mpath.exists() {
        return DepthMap::from_depths(pfm.width, pfm.height, depth);
    }
    let (w, h, mask) = read_mask(&mpath)?;
    if (w, h) != (pfm.width, pfm.height) {
        return Err(format_err(format!("{} does not match its depth map", mpath.display())));
    }
    let valid: Vec<bool> = mask.iter().zip(&depth).map(|(m, d)| *m && d.is_finite() && *d > 0.0).collect();
    DepthMap::new(w, h, depth, valid)
}

/// Normals as a 3-channel PFM (invalid stored as 0) plus a mask PNG.
pub fn write_normals(path: &Path, normals: &NormalMap) -> Result<()> {
    let data = (0..normals.normals().len())
        .flat_map(|i| {
            let n = normals.at(i).unwrap_or_else(Vector3::zeros);
            [n.x as f32, n.y as f32, n.z as f32]
        })
        .collect();
    write_pfm(path, &PfmImage { width: normals.width(), height: normals.height(), channels: 3, data })?;
    write_mask(&mask_path(path), normals.width(), normals.height(), normals.valid_mask())
}

/// Normals mapped from `[-1, 1]³` to `[0, 255]³`; invalid pixels are black.
pub fn write_normals_png(path: &Path, normals: &NormalMap) -> Result<()> {
    let data = (0..normals.normals().len())
        .flat_map(|i| match normals.at(i) {
            Some(n) => [(n.x + 1.0) / 2.0, (n.y + 1.0) / 2.0, (n.z + 1.0) / 2.0],
            None => [0.0; 3],
        })
        .collect();
    write_image(path, &Image::new(normals.width(), normals.height(), 3, data)?)
}

/// Occlusion probabilities as a PFM plus mask, and as an 8-bit PNG (`P·255`).
pub fn write_occlusion(path: &Path, occ: &OcclusionMap) -> Result<()> {
    let (w, h) = (occ.width(), occ.height());
    let data = (0..w * h).map(|i| occ.at(i).unwrap_or(0.0) as f32).collect();
    write_pfm(path, &PfmImage { width: w, height: h, channels: 1, data })?;
    write_mask(&mask_path(path), w, h, occ.valid_mask())?;
    write_gray8(&path.with_extension("png"), w, h, (0..w * h).map(|i| to_u8(occ.at(i).unwrap_or(0.0))).collect())
}

pub fn read_occlusion(path: &Path) -> Result<OcclusionMap> {
    let pfm = read_pfm(path)?;
    let (w, h, valid) = read_mask(&mask_path(path))?;
    if (w, h) != (pfm.width, pfm.height) || pfm.channels != 1 {
        return Err(format_err(format!("{} does not match its mask", path.display())));
    }
    OcclusionMap::new(w, h, pfm.data.iter().map(|v| *v as f64).collect(), valid)
}

/// One trajectory line: frame id, intrinsics and world-to-camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub frame: u64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
}

/// Parses `frame_id fx fy cx cy r00..r22 tx ty tz` lines. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(format_err(format!("trajectory line {} has {} fields, expected 17", n + 1, fields.len())));
        }
        let frame = fields[0].parse().map_err(|_| format_err(format!("bad frame id on line {}", n + 1)))?;
        let v = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| format_err(format!("bad number {f:?} on line {}", n + 1))))
            .collect::<Result<Vec<f64>>>()?;
        let rot = Matrix3::from_row_slice(&v[4..13]);
        let pose = Pose::new(rot, Vector3::new(v[13], v[14], v[15]))
            .map_err(|e| format_err(format!("trajectory line {}: {e}", n + 1)))?;
        out.push(TrajectoryEntry { frame, fx: v[0], fy: v[1], cx: v[2], cy: v[3], pose });
    }
    Ok(out)
}

pub fn format_trajectory(entries: &[TrajectoryEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let r = e.pose.rotation();
        let t = e.pose.translation();
        write!(s, "{} {} {} {} {}", e.frame, e.fx, e.fy, e.cx, e.cy).expect("string write");
        for i in 0..3 {
            for j in 0..3 {
                write!(s, " {}", r[(i, j)]).expect("string write");
            }
        }
        writeln!(s, " {} {} {}", t.x, t.y, t.z).expect("string write");
    }
    s
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    parse_trajectory(&fs::read_to_string(path)?)
}

/// `fx fy cx cy width height` on one line.
pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != 6 {
        return Err(format_err(format!("intrinsics need 6 fields, got {}", f.len())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| format_err(format!("bad intrinsics value {s:?}")));
    let size = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("bad image size {s:?}")));
    CameraIntrinsics::new(num(f[0])?, num(f[1])?, num(f[2])?, num(f[3])?, size(f[4])?, size(f[5])?)
}

pub fn format_intrinsics(k: &CameraIntrinsics) -> String {
    format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    width: usize,
    height: usize,
    planes: usize,
    sampling: PlaneSampling,
    /// Cell order of the raster.
    layout: String,
}

const PLANE_MAJOR: &str = "plane-major";

fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| format_err("missing dump header"))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

fn f32_body(body: &[u8], n: usize) -> Result<Vec<f32>> {
    if body.len() != n * 4 {
        return Err(format_err(format!("dump body has {} bytes, expected {}", body.len(), n * 4)));
    }
    Ok(body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

/// JSON header line, then little-endian f32 costs in `(plane, y, x)` order
/// with NaN marking invalid cells.
pub fn encode_cost_volume(v: &CostVolume) -> Result<Vec<u8>> {
    let header = VolumeHeader {
        width: v.width(),
        height: v.height(),
        planes: v.planes(),
        sampling: *v.sampling(),
        layout: PLANE_MAJOR.into(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for (c, ok) in v.costs().iter().zip(v.validity()) {
        let x = if *ok { *c as f32 } else { f32::NAN };
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cost_volume(bytes: &[u8]) -> Result<CostVolume> {
    let (head, body) = split_header(bytes)?;
    let h: VolumeHeader = serde_json::from_slice(head)?;
    if h.layout != PLANE_MAJOR || h.planes != h.sampling.count {
        return Err(format_err("unsupported cost volume layout"));
    }
    let raw = f32_body(body, h.width * h.height * h.planes)?;
    let valid: Vec<bool> = raw.iter().map(|v| !v.is_nan()).collect();
    let costs = raw.iter().map(|v| if v.is_nan() { 0.0 } else { *v as f64 }).collect();
    CostVolume::new(h.width, h.height, h.sampling, costs, valid)
}

pub fn write_cost_volume(path: &Path, v: &CostVolume) -> Result<()> {
    fs::write(path, encode_cost_volume(v)?)?;
    Ok(())
}

pub fn read_cost_volume(path: &Path) -> Result<CostVolume> {
    decode_cost_volume(&fs::read(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct TsdfHeader {
    origin: [f64; 3],
    voxel_size: f64,
    dims: [usize; 3],
    /// Arrays following the header, in order.
    fields: Vec<String>,
}

/// JSON header line, then little-endian f32 tsdf, weight and RGB arrays.
pub fn encode_tsdf(v: &TsdfVolume) -> Result<Vec<u8>> {
    let header = TsdfHeader {
        origin: v.origin().into(),
        voxel_size: v.voxel_size(),
        dims: v.dims(),
        fields: vec!["tsdf".into(), "weight".into(), "rgb".into()],
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    let mut push = |x: f64| out.extend_from_slice(&(x as f32).to_le_bytes());
    v.tsdf().iter().for_each(|x| push(*x));
    v.weights().iter().for_each(|x| push(*x));
    v.colors().iter().flatten().for_each(|x| push(*x));
    Ok(out)
}

pub fn decode_tsdf(bytes: &[u8]) -> Result<TsdfVolume> {
    let (head, body) = split_header(bytes)?;
    let h: TsdfHeader = serde_json::from_slice(head)?;
    let n: usize = h.dims.iter().product();
    let raw = f32_body(body, n * 5)?;
    let to64 = |s: &[f32]| s.iter().map(|v| *v as f64).collect::<Vec<f64>>();
    let colors = raw[2 * n..].chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    TsdfVolume::from_parts(Vector3::from(h.origin), h.voxel_size, h.dims, to64(&raw[..n]), to64(&raw[n..2 * n]), colors)
}

pub fn write_tsdf(path: &Path, v: &TsdfVolume) -> Result<()> {
    fs::write(path, encode_tsdf(v)?)?;
    Ok(())
}

pub fn read_tsdf(path: &Path) -> Result<TsdfVolume> {
    decode_tsdf(&fs::read(path)?)
}

fn table(columns: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let widths: Vec<usize> = columns.iter().map(|c| c.len().max(9)).collect();
    let mut s = format!("{:<label_w$}", "name");
    for (c, w) in columns.iter().zip(&widths) {
        write!(s, "  {c:>w$}").expect("string write");
    }
    s.push('\n');
    for (label, values) in rows {
        write!(s, "{label:<label_w$}").expect("string write");
        for (v, w) in values.iter().zip(&widths) {
            write!(s, "  {v:>w$.4}").expect("string write");
        }
        s.push('\n');
    }
    s
}

/// Aligned text table of depth metrics, one row per entry.
pub fn depth_metrics_table(rows: &[(String, DepthMetrics)]) -> String {
    let rows: Vec<(String, Vec<f64>)> = rows.iter().map(|(l, m)| (l.clone(), m.values().to_vec())).collect();
    table(&DepthMetrics::COLUMNS, &rows)
}

pub fn normal_metrics_table(rows: &[(String, NormalMetrics)]) -> String {
    let rows: Vec<(String, Vec<f64>)> = rows.iter().map(|(l, m)| (l.clone(), m.values().to_vec())).collect();
    table(&NormalMetrics::COLUMNS, &rows)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
