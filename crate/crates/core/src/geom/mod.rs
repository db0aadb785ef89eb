//! Per-frame vehicle geometry: heading from flow vanishing points, the
//! vanishing triple, the tangent-line 3D box, occlusion gating and the
//! motion-history heading fallback.

mod box3d;
pub mod polygon;
mod vanishing;

use nalgebra::{Matrix2, Point2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibError, GroundTransform};
use crate::scalar::{from_usize, lit, Real};

pub use box3d::{box3d_from_mask, tangent_lines, Box3D, BoxConfig, BoxEstimate};
pub use polygon::{convex_hull, point_in_polygon, polygon_area, Rect};
pub use vanishing::{
    heading_from_vp, orthogonal_vps, ransac_heading_vp, wrap_angle, FlowVector, RansacConfig, VanishingPoint,
    VanishingTriple,
};

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("need at least {needed} flow vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("median flow below the motion threshold")]
    InsufficientMotion,
    #[error("no consensus: inlier ratio {ratio:.2}")]
    RansacFailure { ratio: f64 },
    #[error("horizon is undefined")]
    DegenerateHorizon,
    #[error("zero baseline between location and vanishing point")]
    DegenerateBaseline,
    #[error("mask area {area:.1} px² below threshold")]
    MaskTooSmall { area: f64 },
    #[error("not enough motion history")]
    InsufficientHistory,
    #[error(transparent)]
    Calib(#[from] CalibError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occlusion {
    Clear,
    Partial,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub iou_skip: f64,
    pub fill_min: f64,
    /// Fill ratios in `[fill_min, fill_partial)` are partial.
    pub fill_partial: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            iou_skip: 0.35,
            fill_min: 0.3,
            fill_partial: 0.45,
        }
    }
}

/// Classifies a detection by its worst 2D-box overlap and its mask fill
/// ratio.
pub fn occlusion_gate<T: Real>(box2d: &Rect<T>, mask_area: T, neighbors: &[Rect<T>], cfg: &OcclusionConfig) -> Occlusion {
    let iou = neighbors
        .iter()
        .map(|n| box2d.iou(n))
        .fold(T::zero(), |a, b| a.max(b));
    let area = box2d.area();
    let fill = if area > T::zero() { mask_area / area } else { T::zero() };
    if iou > lit(cfg.iou_skip) || fill < lit(cfg.fill_min) {
        Occlusion::Skip
    } else if fill < lit(cfg.fill_partial) {
        Occlusion::Partial
    } else {
        Occlusion::Clear
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallbackConfig {
    pub window: usize,
    /// Minimum ground distance between the first and last position (m).
    pub min_disp: f64,
}

impl Default for FallbackConfig {
    fn default() -> Self {
        Self {
            window: 5,
            min_disp: 0.5,
        }
    }
}

/// Heading of the least-squares line through time-ordered ground
/// positions, pointing from the oldest toward the newest.
pub fn heading_from_ground_track<T: Real>(points: &[Point2<T>], cfg: &FallbackConfig) -> Result<T, GeomError> {
    let n = points.len();
    if n < cfg.window.max(2) {
        return Err(GeomError::InsufficientHistory);
    }
    let travel = points[n - 1] - points[0];
    if travel.norm() < lit(cfg.min_disp) {
        return Err(GeomError::InsufficientHistory);
    }
    let nt: T = from_usize(n);
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / nt;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let angle = (cov[(0, 1)] * lit(2.0)).atan2(cov[(0, 0)] - cov[(1, 1)]) / lit(2.0);
    let dir = Vector2::new(angle.cos(), angle.sin());
    let h = if dir.dot(&travel) < T::zero() { angle + T::pi() } else { angle };
    Ok(wrap_angle(h))
}

/// Heading from recent image positions of a vehicle.
pub fn heading_fallback<T: Real>(
    history: &[Point2<T>],
    t: &GroundTransform<T>,
    cfg: &FallbackConfig,
) -> Result<T, GeomError> {
    let ground = history
        .iter()
        .map(|p| t.image_to_ground(p).map(|g| g.xy()))
        .collect::<Result<Vec<_>, _>>()?;
    heading_from_ground_track(&ground, cfg)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeomConfig {
    pub ransac: RansacConfig,
    pub occlusion: OcclusionConfig,
    #[serde(rename = "box")]
    pub box3d: BoxConfig,
    pub fallback: FallbackConfig,
}
