//! Pipeline configuration file: one JSON object with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::DEFAULT_MAX_RMS_PX;
use crate::geom::GeomConfig;
use crate::shape::ShapeConfig;
use crate::synth::EvalConfig;
use crate::track::TrackConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid setting {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibSection {
    /// Maximum accepted reprojection RMS (px).
    pub max_rms_px: f64,
}

impl Default for CalibSection {
    fn default() -> Self {
        Self {
            max_rms_px: DEFAULT_MAX_RMS_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// Synthetic model histograms generated when no prior file is given.
    pub models: usize,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { models: 84 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every random choice in the pipeline.
    pub seed: u64,
    pub calib: CalibSection,
    pub geom: GeomConfig,
    pub track: TrackConfig,
    pub shape: ShapeConfig,
    pub prior: PriorSection,
    pub eval: EvalConfig,
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key,
            reason: format!("must be positive, got {v}"),
        })
    }
}

fn fraction(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key,
            reason: format!("must be in [0, 1], got {v}"),
        })
    }
}

fn nonzero(key: &'static str, v: usize) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key,
            reason: "must be at least 1".into(),
        })
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: name.clone(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: name, source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Copies the top-level seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.geom.ransac.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("calib.max_rms_px", self.calib.max_rms_px)?;
        let r = &self.geom.ransac;
        positive("geom.ransac.angular_tol_deg", r.angular_tol_deg)?;
        nonzero("geom.ransac.max_iterations", r.max_iterations)?;
        fraction("geom.ransac.min_inlier_ratio", r.min_inlier_ratio)?;
        let o = &self.geom.occlusion;
        fraction("geom.occlusion.iou_skip", o.iou_skip)?;
        fraction("geom.occlusion.fill_min", o.fill_min)?;
        fraction("geom.occlusion.fill_partial", o.fill_partial)?;
        if o.fill_partial < o.fill_min {
            return Err(ConfigError::Invalid {
                key: "geom.occlusion.fill_partial",
                reason: "must not be below fill_min".into(),
            });
        }
        let t = &self.track;
        positive("track.frame_dt", t.frame_dt)?;
        fraction("track.alpha", t.alpha)?;
        positive("track.roi_scale", t.roi_scale)?;
        nonzero("track.smooth_n", t.smooth_n)?;
        positive("track.velocity.max_distance", t.velocity.max_distance)?;
        nonzero("track.velocity.max_pairs", t.velocity.max_pairs)?;
        positive("track.kalman.accel_sigma", t.kalman.accel_sigma)?;
        positive("track.kalman.pos_sigma", t.kalman.pos_sigma)?;
        positive("track.kalman.vel_sigma", t.kalman.vel_sigma)?;
        let s = &self.shape;
        positive("shape.voxel_size", s.voxel_size)?;
        if !(s.lambda.is_finite() && s.lambda >= 0.0) {
            return Err(ConfigError::Invalid {
                key: "shape.lambda",
                reason: format!("must be non-negative, got {}", s.lambda),
            });
        }
        nonzero("shape.components", s.components)?;
        nonzero("shape.max_views", s.max_views)?;
        fraction("shape.min_view_iou", s.min_view_iou)?;
        if s.bins < 2 {
            return Err(ConfigError::Invalid {
                key: "shape.bins",
                reason: "must be at least 2".into(),
            });
        }
        nonzero("prior.models", self.prior.models)?;
        let e = &self.eval;
        positive("eval.gate_m", e.gate_m)?;
        fraction("eval.min_visibility", e.min_visibility)?;
        fraction("eval.mostly_tracked", e.mostly_tracked)?;
        fraction("eval.mostly_lost", e.mostly_lost)?;
        if e.range_bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid {
                key: "eval.range_bins",
                reason: "must be strictly increasing".into(),
            });
        }
        Ok(())
    }
}
