//! Vehicle shape from silhouettes: voxel carving, height histograms, a PCA
//! shape prior and mesh export.

mod histogram;
mod mesh;
mod prior;
mod reconstruct;
mod synthetic;
mod voxel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::VehicleType;

pub use histogram::{histogram_to_voxels, resample, voxels_to_histogram, HeightHistogram};
pub use mesh::{mesh_from_voxels, TriangleMesh};
pub use prior::{build_prior, fit_shape, template_for, ModelVector, Provenance, ShapePrior, ShapeVector};
pub use reconstruct::{reconstruct_shapes, CameraStream, ShapeRecord};
pub use synthetic::synthetic_models;
pub use voxel::{carve, View, VoxelGrid};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("no views")]
    NoViews,
    #[error("every voxel was carved away")]
    EmptyHull,
    #[error("empty grid")]
    EmptyGrid,
    #[error("voxel size must be positive")]
    InvalidVoxelSize,
    #[error("histogram needs at least 2x2 bins")]
    TooSmall,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{got} models cannot give {need} components")]
    TooFewModels { need: usize, got: usize },
    #[error("models span only {got} of {need} components")]
    RankDeficient { need: usize, got: usize },
    #[error("no template for type {0}")]
    UnknownType(VehicleType),
    #[error("lambda must be non-negative")]
    NegativeLambda,
    #[error("singular normal equations")]
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    /// Voxel edge (m).
    pub voxel_size: f64,
    /// Weight of the template regularizer.
    pub lambda: f64,
    pub bins: usize,
    pub components: usize,
    /// Views below this count fall back to the type template.
    pub min_views: usize,
    pub max_views: usize,
    /// Minimum overlap between a projected track box and a detection box.
    pub min_view_iou: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            lambda: 0.1,
            bins: 50,
            components: 20,
            min_views: 2,
            max_views: 40,
            min_view_iou: 0.5,
        }
    }
}
