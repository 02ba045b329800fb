use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost_volume::AggregationConfig;
use crate::depth::DepthExtractionConfig;
use crate::error::{Error, Result};
use crate::geometry::PlaneSampling;
use crate::losses::LossConfig;
use crate::normals::NormalOptions;
use crate::occlusion::RefineConfig;

/// Position of the reference frame inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    /// `N/2` (rounded down) sources before the reference, the rest after.
    Middle,
    /// All sources precede the reference.
    Last,
}

/// Axis-aligned world-space box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub voxel_size: f64,
    pub trunc: f64,
    pub min_weight: f64,
    /// Weight samples by `1 − P`; otherwise every sample has weight 1.
    pub occlusion_weighting: bool,
    /// Volume extent. Derived from the reference frusta when absent.
    pub bounds: Option<Bounds>,
    pub max_voxels: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            trunc: 0.08,
            min_weight: 1.0,
            occlusion_weighting: true,
            bounds: None,
            max_voxels: 256 * 256 * 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Every `frame_interval`-th frame is used.
    pub frame_interval: usize,
    /// Number of source views per reference frame.
    pub window: usize,
    pub reference: ReferenceChoice,
    pub sampling: PlaneSampling,
    pub aggregation: AggregationConfig,
    pub extraction: DepthExtractionConfig,
    pub normals: NormalOptions,
    pub loss: LossConfig,
    pub refine: RefineConfig,
    pub fusion: FusionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_interval: 10,
            window: 2,
            reference: ReferenceChoice::Middle,
            sampling: PlaneSampling::default(),
            aggregation: AggregationConfig::default(),
            extraction: DepthExtractionConfig::default(),
            normals: NormalOptions::default(),
            loss: LossConfig::default(),
            refine: RefineConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_interval < 1 {
            return Err(config_err("frame_interval must be at least 1"));
        }
        if self.window < 1 {
            return Err(config_err("window must be at least 1"));
        }
        self.sampling.validate().map_err(config_err)?;
        self.extraction.validate().map_err(config_err)?;
        self.loss.validate().map_err(config_err)?;
        self.refine.validate().map_err(config_err)?;
        if !(self.aggregation.sigma_color.is_finite() && self.aggregation.sigma_color > 0.0) {
            return Err(config_err("aggregation.sigma_color must be positive"));
        }
        if self.normals.radius < 1 {
            return Err(config_err("normals.radius must be at least 1"));
        }
        let f = &self.fusion;
        if !(f.voxel_size.is_finite() && f.voxel_size > 0.0) {
            return Err(config_err("fusion.voxel_size must be positive"));
        }
        if !(f.trunc.is_finite() && f.trunc >= 2.0 * f.voxel_size) {
            return Err(config_err("fusion.trunc must be at least twice the voxel size"));
        }
        if !(f.min_weight.is_finite() && f.min_weight >= 0.0) {
            return Err(config_err("fusion.min_weight must be non-negative"));
        }
        if let Some(b) = f.bounds {
            if (0..3).any(|a| !(b.min[a].is_finite() && b.max[a].is_finite() && b.min[a] < b.max[a])) {
                return Err(config_err("fusion.bounds must satisfy min < max on every axis"));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
