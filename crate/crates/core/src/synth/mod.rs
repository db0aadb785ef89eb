//! Synthetic detections with ground truth, and the evaluation harness.

mod eval;
mod generate;
mod hungarian;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibError, Calibration, CameraModel, Heightfield, Intrinsics, MapFrame, MapKind};
use crate::vehicle::VehicleType;

pub use eval::{evaluate, truth_as_records, DistanceBin, EvalConfig, MetricsReport};
pub use generate::{generate, SynthOutput};
pub use hungarian::hungarian;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("vehicle {vehicle} leaves the map at frame {frame}")]
    VehicleOffMap { vehicle: usize, frame: u64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("prediction frame {frame} outside the ground-truth range")]
    FrameMismatch { frame: u64 },
    #[error(transparent)]
    Calib(#[from] CalibError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub position: [f64; 3],
    /// Viewing direction, CCW from world x (rad).
    pub yaw: f64,
    /// Downward tilt (rad).
    pub pitch: f64,
    #[serde(default)]
    pub roll: f64,
    pub focal_px: f64,
    pub image_size: [u32; 2],
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundSpec {
    Flat,
    Heightfield {
        origin: [f64; 2],
        cell_size: f64,
        dims: [usize; 2],
        /// Row-major, `dims[1]` rows of `dims[0]` values (m).
        elevations: Vec<f64>,
    },
}

/// Constant speed, or piecewise-linear `[time s, speed m/s]` knots held
/// constant outside their range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedProfile {
    Constant(f64),
    Knots(Vec<[f64; 2]>),
}

impl SpeedProfile {
    pub fn speed(&self, t: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Knots(k) => {
                if t <= k[0][0] {
                    return k[0][1];
                }
                for w in k.windows(2) {
                    if t <= w[1][0] {
                        let a = (t - w[0][0]) / (w[1][0] - w[0][0]);
                        return w[0][1] + a * (w[1][1] - w[0][1]);
                    }
                }
                k[k.len() - 1][1]
            }
        }
    }

    /// Distance covered from time 0 to `t`.
    pub fn distance(&self, t: f64) -> f64 {
        match self {
            Self::Constant(v) => v * t,
            Self::Knots(k) => {
                let mut d = 0.0;
                let mut t0 = 0.0;
                let mut edges: Vec<f64> = k.iter().map(|k| k[0]).filter(|&x| x > 0.0 && x < t).collect();
                edges.push(t);
                for t1 in edges {
                    d += 0.5 * (self.speed(t0) + self.speed(t1)) * (t1 - t0);
                    t0 = t1;
                }
                d
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Self::Constant(v) if *v >= 0.0 && v.is_finite() => Ok(()),
            Self::Knots(k)
                if !k.is_empty()
                    && k.iter().all(|k| k[1] >= 0.0 && k[0].is_finite() && k[1].is_finite())
                    && k.windows(2).all(|w| w[1][0] > w[0][0]) =>
            {
                Ok(())
            }
            _ => Err("speed must be non-negative with increasing knot times".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    /// `(length, width, height)` (m).
    pub dims: [f64; 3],
    /// Ground path `(x, y)` in world metres.
    pub waypoints: Vec<[f64; 2]>,
    pub speed: SpeedProfile,
    #[serde(default)]
    pub start_frame: u64,
}

/// Ground pose of a vehicle on its path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPose {
    pub position: Point2<f64>,
    pub heading: f64,
    pub speed: f64,
}

impl VehicleSpec {
    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| Point2::from(w[1]).coords.metric_distance(&Point2::from(w[0]).coords))
            .sum()
    }

    /// Pose `t` seconds after the start, or `None` past the path end.
    pub fn pose_at(&self, t: f64) -> Option<PathPose> {
        if t < 0.0 {
            return None;
        }
        let mut s = self.speed.distance(t);
        if s > self.path_length() {
            return None;
        }
        for w in self.waypoints.windows(2) {
            let a = Point2::from(w[0]);
            let b = Point2::from(w[1]);
            let len = (b - a).norm();
            if s <= len || std::ptr::eq(w, self.waypoints.windows(2).last()?) {
                let d = (b - a) / len;
                return Some(PathPose {
                    position: a + d * s.min(len),
                    heading: crate::geom::wrap_angle(d.y.atan2(d.x)),
                    speed: self.speed.speed(t),
                });
            }
            s -= len;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Systematic outward offset of mask boundaries (px).
    pub mask_dilation_px: f64,
    /// Standard deviation of per-vertex boundary noise (px).
    pub mask_noise_px: f64,
    /// Boundary vertex spacing when noise is applied (px).
    pub mask_vertex_spacing_px: f64,
    /// Standard deviation of flow endpoint noise (px).
    pub flow_jitter_px: f64,
    /// Probability that a detection is dropped.
    pub dropout: f64,
    /// Flow vectors sampled on the body per detection.
    pub flow_points: usize,
    /// Wrong-direction flow vectors on the wheels per detection.
    pub wheel_outliers: usize,
    /// Detections below this visible fraction are not emitted.
    pub min_visibility: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mask_dilation_px: 0.0,
            mask_noise_px: 0.0,
            mask_vertex_spacing_px: 4.0,
            flow_jitter_px: 0.0,
            dropout: 0.0,
            flow_points: 24,
            wheel_outliers: 0,
            min_visibility: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub camera: CameraSpec,
    #[serde(default = "flat")]
    pub ground: GroundSpec,
    pub frames: u64,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

fn flat() -> GroundSpec {
    GroundSpec::Flat
}

/// Ground-truth state of one vehicle in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub frame: u64,
    pub time: f64,
    pub vehicle_id: u32,
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    /// Bottom centre of the box (m).
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub speed: f64,
    pub heading: f64,
    pub dims: [f64; 3],
    /// Visible fraction of the full silhouette.
    pub visibility: f64,
    /// Fraction of the in-image silhouette hidden by nearer vehicles.
    pub occluded: f64,
    /// Ground distance to the camera (m).
    pub range: f64,
}

impl Scenario {
    pub fn frame_dt(&self) -> f64 {
        1.0 / self.camera.fps
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        let c = &self.camera;
        if !(c.fps > 0.0) || !(c.focal_px > 0.0) || c.image_size[0] == 0 || c.image_size[1] == 0 {
            return bad("camera needs fps > 0, focal_px > 0 and a non-empty image".into());
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.dropout) || n.mask_noise_px < 0.0 || n.flow_jitter_px < 0.0 {
            return bad("noise levels must be non-negative and dropout in [0, 1]".into());
        }
        if n.mask_noise_px > 0.0 && !(n.mask_vertex_spacing_px > 0.0) {
            return bad("mask_vertex_spacing_px must be positive".into());
        }
        if let GroundSpec::Heightfield { dims, elevations, .. } = &self.ground {
            if dims[0] * dims[1] != elevations.len() {
                return bad("heightfield elevations do not match dims".into());
            }
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.waypoints.len() < 2 {
                return bad(format!("vehicle {i}: need at least two waypoints"));
            }
            if v.waypoints.windows(2).any(|w| w[0] == w[1]) {
                return bad(format!("vehicle {i}: repeated waypoint"));
            }
            if !v.dims.iter().all(|d| *d > 0.0) {
                return bad(format!("vehicle {i}: dimensions must be positive"));
            }
            v.speed.validate().or_else(|m| bad(format!("vehicle {i}: {m}")))?;
        }
        Ok(())
    }

    pub fn camera_model(&self) -> Result<CameraModel<f64>, SynthError> {
        let c = &self.camera;
        let size = (c.image_size[0], c.image_size[1]);
        Ok(CameraModel::look_from(
            &Intrinsics::centered(c.focal_px, size),
            Point3::from(c.position),
            c.yaw,
            c.pitch,
            c.roll,
        )?)
    }

    pub fn heightfield(&self) -> Result<Option<Heightfield<f64>>, SynthError> {
        match &self.ground {
            GroundSpec::Flat => Ok(None),
            GroundSpec::Heightfield {
                origin,
                cell_size,
                dims,
                elevations,
            } => Ok(Some(Heightfield::new(
                Point2::from(*origin),
                *cell_size,
                dims[0],
                dims[1],
                elevations.clone(),
            )?)),
        }
    }

    /// Exact calibration of the scenario camera; world and map frames
    /// coincide.
    pub fn calibration(&self) -> Result<Calibration, SynthError> {
        let camera = self.camera_model()?;
        Ok(match self.heightfield()? {
            None => Calibration::planar(camera, MapFrame::new(MapKind::Planar2d, 1.0, [0.0; 3], 0.0)?)?,
            Some(hf) => Calibration::with_heightfield(
                camera,
                MapFrame::new(MapKind::Heightfield3d, 1.0, [0.0; 3], 0.0)?,
                &hf,
            )?,
        })
    }

    /// 720p camera 10 m up beside a four-lane road; four vehicles at 8–20 m/s
    /// over 1000 frames at 30 fps.
    pub fn benchmark(seed: u64) -> Self {
        let lane = |y: f64, forward: bool| -> Vec<[f64; 2]> {
            if forward {
                vec![[-20.0, y], [150.0, y]]
            } else {
                vec![[150.0, y], [-20.0, y]]
            }
        };
        let vehicles = vec![
            VehicleSpec {
                vehicle_type: VehicleType::Sedan,
                dims: [4.7, 1.85, 1.45],
                waypoints: lane(20.0, false),
                speed: SpeedProfile::Constant(12.0),
                start_frame: 0,
            },
            VehicleSpec {
                vehicle_type: VehicleType::Suv,
                dims: [4.9, 1.95, 1.75],
                waypoints: lane(23.5, false),
                speed: SpeedProfile::Constant(20.0),
                start_frame: 120,
            },
            VehicleSpec {
                vehicle_type: VehicleType::PickupTruck,
                dims: [5.6, 2.0, 1.85],
                waypoints: lane(30.5, true),
                speed: SpeedProfile::Constant(8.0),
                start_frame: 300,
            },
            VehicleSpec {
                vehicle_type: VehicleType::Van,
                dims: [5.2, 2.0, 2.1],
                waypoints: lane(27.0, true),
                speed: SpeedProfile::Constant(16.0),
                start_frame: 560,
            },
        ];
        Self {
            camera: CameraSpec {
                position: [0.0, 0.0, 10.0],
                yaw: 0.4,
                pitch: 0.2,
                roll: 0.0,
                focal_px: 1000.0,
                image_size: [1280, 720],
                fps: 30.0,
            },
            ground: GroundSpec::Flat,
            frames: 1000,
            vehicles,
            noise: NoiseSpec::default(),
            seed,
        }
    }
}
