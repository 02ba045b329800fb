use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Image, Pose};
use crate::io;
use crate::normals::PlaneMaskSet;
use crate::synth::Fixture;

/// Frame files under a dataset root:
/// `color/%06d.png`, `depth/%06d.pfm`, `planes/%06d.png`,
/// plus `trajectory.txt` and `intrinsics.txt`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub k: CameraIntrinsics,
    /// Frame ids with a color image, ascending.
    pub frames: Vec<u64>,
    /// World-to-camera poses by frame id.
    pub poses: BTreeMap<u64, Pose>,
}

pub fn frame_name(id: u64) -> String {
    format!("{id:06}")
}

fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Dataset {
    /// Reads the frame list, intrinsics and trajectory. Structural problems
    /// are configuration errors.
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(config(format!("dataset directory {} does not exist", root.display())));
        }
        let color_dir = root.join("color");
        let mut frames = Vec::new();
        if color_dir.is_dir() {
            for entry in fs::read_dir(&color_dir)? {
                let name = entry?.file_name();
                let name = name.to_string_lossy();
                if let Some(id) = name.strip_suffix(".png").and_then(|s| s.parse::<u64>().ok()) {
                    frames.push(id);
                }
            }
        }
        if frames.is_empty() {
            return Err(config(format!("no color frames in {}", color_dir.display())));
        }
        frames.sort_unstable();
        let kpath = root.join("intrinsics.txt");
        let ktext =
            fs::read_to_string(&kpath).map_err(|e| config(format!("cannot read {}: {e}", kpath.display())))?;
        let k = io::parse_intrinsics(&ktext).map_err(|e| config(format!("{}: {e}", kpath.display())))?;
        let tpath = root.join("trajectory.txt");
        let ttext =
            fs::read_to_string(&tpath).map_err(|e| config(format!("cannot read {}: {e}", tpath.display())))?;
        let entries = io::parse_trajectory(&ttext).map_err(|e| config(format!("{}: {e}", tpath.display())))?;
        let mut poses = BTreeMap::new();
        for e in entries {
            let same = [(e.fx, k.fx), (e.fy, k.fy), (e.cx, k.cx), (e.cy, k.cy)].iter().all(|(a, b)| (a - b).abs() <= 1e-9);
            if !same {
                return Err(config(format!("frame {} intrinsics differ from intrinsics.txt", e.frame)));
            }
            poses.insert(e.frame, e.pose);
        }
        Ok(Self { root: root.to_path_buf(), k, frames, poses })
    }

    pub fn pose(&self, id: u64) -> Result<Pose> {
        self.poses.get(&id).copied().ok_or_else(|| config(format!("no pose for frame {}", frame_name(id))))
    }

    pub fn color_path(&self, id: u64) -> PathBuf {
        self.root.join("color").join(format!("{}.png", frame_name(id)))
    }

    pub fn depth_path(&self, id: u64) -> PathBuf {
        self.root.join("depth").join(format!("{}.pfm", frame_name(id)))
    }

    pub fn planes_path(&self, id: u64) -> PathBuf {
        self.root.join("planes").join(format!("{}.png", frame_name(id)))
    }

    pub fn color(&self, id: u64) -> Result<Image> {
        let img = io::read_image(&self.color_path(id))?;
        if img.width() != self.k.width || img.height() != self.k.height {
            return Err(Error::Format(format!("frame {} size does not match intrinsics", frame_name(id))));
        }
        Ok(img)
    }

    pub fn gt_depth(&self, id: u64) -> Result<Option<DepthMap>> {
        let p = self.depth_path(id);
        p.exists().then(|| io::read_depth(&p)).transpose()
    }

    pub fn planes(&self, id: u64) -> Result<Option<PlaneMaskSet>> {
        let p = self.planes_path(id);
        p.exists().then(|| io::read_labels(&p)).transpose()
    }
}

/// Renders every fixture view into a dataset directory. Frame ids are view
/// indices.
pub fn write_fixture_dataset(fixture: &Fixture, root: &Path) -> Result<()> {
    for sub in ["color", "depth", "planes"] {
        fs::create_dir_all(root.join(sub))?;
    }
    let k = fixture.k;
    let mut entries = Vec::with_capacity(fixture.poses.len());
    for (i, pose) in fixture.poses.iter().enumerate() {
        let r = fixture.render_view(i)?;
        let name = frame_name(i as u64);
        io::write_image(&root.join("color").join(format!("{name}.png")), &r.color)?;
        io::write_depth(&root.join("depth").join(format!("{name}.pfm")), &r.depth)?;
        io::write_labels(&root.join("planes").join(format!("{name}.png")), &r.planes)?;
        entries.push(io::TrajectoryEntry { frame: i as u64, fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, pose: *pose });
    }
    fs::write(root.join("trajectory.txt"), io::format_trajectory(&entries))?;
    fs::write(root.join("intrinsics.txt"), io::format_intrinsics(&k))?;
    Ok(())
}
