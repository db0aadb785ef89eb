//! Association, velocity, Kalman state estimation, smoothing and record
//! emission.

pub mod associate;
mod kalman;
mod record;
mod smooth;
mod tracker;
mod velocity;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::GeomError;

pub use kalman::{ConstantVelocityKf, KalmanConfig};
pub use record::{write_csv, DetectionRecord, RawMeasurement, StateRecord, CSV_HEADER};
pub use smooth::{angle_diff, PoseSmoother};
pub use tracker::{HistoryEntry, TrackStatus, Tracker, VehicleTrack};
pub use velocity::{aggregate_speed, ground_displacement, pair_displacement, ray_box, VelocityConfig};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("covariance is not positive definite")]
    NonPsdCovariance,
    #[error("no frame-pair displacement in history")]
    NoHistory,
    #[error("detections out of order: frame {got} after {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    /// Seconds per frame.
    pub frame_dt: f64,
    /// Weight of the flow term in the association score.
    pub alpha: f64,
    pub min_score: f64,
    /// Area factor of the flow region around each detection box.
    pub roi_scale: f64,
    /// Frames a track may go unmatched before it is closed.
    pub max_coast: usize,
    pub smooth_n: usize,
    /// Detections this close to the image edge are not measured (px).
    pub border_margin_px: f64,
    /// Attach the per-frame raw measurement to each record.
    pub emit_raw: bool,
    pub velocity: VelocityConfig,
    pub kalman: KalmanConfig,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            frame_dt: 1.0 / 30.0,
            alpha: 0.5,
            min_score: 0.2,
            roi_scale: 4.0,
            max_coast: 30,
            smooth_n: 10,
            border_margin_px: 2.0,
            emit_raw: true,
            velocity: VelocityConfig::default(),
            kalman: KalmanConfig::default(),
        }
    }
}
