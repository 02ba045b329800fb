//! Pinhole cameras, rigid poses, plane-induced homographies and image warping.

mod camera;
mod raster;
mod warp;

pub use camera::{backproject, homography_for_plane, project, CameraIntrinsics, PlaneSampling, Pose, Projection};
pub use raster::{DepthMap, Image};
pub use warp::{apply_homography, warp_into, warp_to_reference_plane, WarpedImage, SNAP_TOLERANCE_PX};
