//! Plane-sweep multi-view depth estimation with normal constraints,
//! occlusion-aware multi-view refinement and occlusion-weighted TSDF fusion.

pub mod cost_volume;
pub mod depth;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod normals;
pub mod occlusion;
pub mod pipeline;
pub mod reduce;
pub mod synth;
pub mod tsdf;

pub use error::{Error, Result};
