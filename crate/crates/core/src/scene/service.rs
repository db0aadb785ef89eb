use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{resimulate, Pose, Resimulated, Scene, SceneError, WhatIfEdit};
use crate::calib::MapFrame;
use crate::shape::{HeightHistogram, Provenance, ShapePrior};
use crate::vehicle::VehicleType;

pub const DEFAULT_SESSION: &str = "default";

/// Request failure with an HTTP-style status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceError {
    pub status: u16,
    pub error: String,
}

impl ServiceError {
    fn not_found(msg: impl Into<String>) -> Self {
        Self {
            status: 404,
            error: msg.into(),
        }
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self {
            status: 400,
            error: msg.into(),
        }
    }
}

impl From<SceneError> for ServiceError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::UnknownTrack(_) => Self::not_found(e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub version: u32,
    /// s
    pub frame_dt: f64,
    /// s
    pub duration: f64,
    pub tracks: usize,
    pub map: MapFrame,
    pub backdrop: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: u32,
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    pub first_frame: u64,
    pub last_frame: u64,
    /// s
    pub start: f64,
    /// s
    pub end: f64,
    pub has_shape: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleFrame {
    pub track_id: u32,
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    /// World frame (m).
    pub position: [f64; 3],
    /// rad, CCW from world x.
    pub heading: f64,
    /// m/s
    pub speed: f64,
    /// Length, width, height (m).
    pub dims: [f64; 3],
    /// Map coordinates of the box footprint: front-left, front-right,
    /// rear-right, rear-left.
    pub footprint: [[f64; 2]; 4],
    pub map_position: [f64; 3],
    pub predicted: bool,
    pub edited: bool,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    /// s
    pub t: f64,
    pub vehicles: Vec<VehicleFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapePayload {
    pub track_id: u32,
    #[serde(rename = "type")]
    pub vehicle_type: VehicleType,
    pub provenance: Provenance,
    pub coefficients: Vec<f64>,
    pub dims: [f64; 3],
    /// Recovered height map, when the scene names a shape prior.
    pub histogram: Option<HeightHistogram<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub edit: WhatIfEdit,
    pub stopped_from: Option<u64>,
}

struct Overlay {
    edit: WhatIfEdit,
    track: Resimulated,
}

/// Read access to an immutable scene plus per-session what-if overlays.
pub struct SceneService {
    scene: Arc<Scene>,
    prior: Option<Arc<ShapePrior<f64>>>,
    sessions: RwLock<HashMap<String, Overlay>>,
}

impl SceneService {
    pub fn new(scene: Scene, prior: Option<ShapePrior<f64>>) -> Self {
        Self {
            scene: Arc::new(scene),
            prior: prior.map(Arc::new),
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn info(&self) -> SceneInfo {
        SceneInfo {
            version: super::SCENE_VERSION,
            frame_dt: self.scene.frame_dt,
            duration: self.scene.duration(),
            tracks: self.scene.tracks.len(),
            map: self.scene.map.clone(),
            backdrop: self.scene.backdrop.clone(),
        }
    }

    pub fn tracks(&self) -> Vec<TrackSummary> {
        self.scene
            .tracks
            .iter()
            .filter_map(|(id, r)| {
                let (a, b) = (r.first()?, r.last()?);
                Some(TrackSummary {
                    track_id: *id,
                    vehicle_type: a.vehicle_type,
                    first_frame: a.frame,
                    last_frame: b.frame,
                    start: a.time,
                    end: b.time,
                    has_shape: self.scene.shapes.contains_key(id),
                })
            })
            .collect()
    }

    fn vehicle(&self, p: &Pose, overlay: Option<&Overlay>, t: f64) -> VehicleFrame {
        let map = &self.scene.map;
        let (s, c) = p.heading.sin_cos();
        let (hl, hw) = (p.dims[0] / 2.0, p.dims[1] / 2.0);
        let corner = |fx: f64, fy: f64| {
            let w = [
                p.position[0] + c * hl * fx - s * hw * fy,
                p.position[1] + s * hl * fx + c * hw * fy,
                p.position[2],
            ];
            let m = map.world_to_map(w);
            [m[0], m[1]]
        };
        let edited = overlay.is_some_and(|o| o.edit.track_id == p.track_id);
        let stopped = edited
            && overlay
                .and_then(|o| o.track.stopped_from)
                .is_some_and(|f| t >= f as f64 * self.scene.frame_dt - 1e-9);
        VehicleFrame {
            track_id: p.track_id,
            vehicle_type: p.vehicle_type,
            position: p.position,
            heading: p.heading,
            speed: p.speed,
            dims: p.dims,
            footprint: [corner(1.0, 1.0), corner(1.0, -1.0), corner(-1.0, -1.0), corner(-1.0, 1.0)],
            map_position: map.world_to_map(p.position),
            predicted: p.predicted,
            edited,
            stopped,
        }
    }

    pub fn frame(&self, t: f64, session: &str) -> Result<FramePayload, ServiceError> {
        let sessions = self.sessions.read().expect("session lock");
        let overlay = sessions.get(session);
        let poses = self.scene.frame_with(t, overlay.map(|o| &o.track))?;
        Ok(FramePayload {
            t,
            vehicles: poses.iter().map(|p| self.vehicle(p, overlay, t)).collect(),
        })
    }

    pub fn shape(&self, track_id: u32) -> Result<ShapePayload, ServiceError> {
        let rec = self
            .scene
            .shapes
            .get(&track_id)
            .ok_or_else(|| ServiceError::not_found(format!("no shape for track {track_id}")))?;
        let histogram = match &self.prior {
            Some(p) => Some(
                rec.shape
                    .histogram(p, rec.dims)
                    .map_err(|e| ServiceError::bad_request(e.to_string()))?,
            ),
            None => None,
        };
        Ok(ShapePayload {
            track_id,
            vehicle_type: rec.shape.vehicle_type,
            provenance: rec.shape.provenance,
            coefficients: rec.shape.coefficients.clone(),
            dims: rec.dims,
            histogram,
        })
    }

    /// Replaces the session's edit.
    pub fn apply_edit(&self, session: &str, edit: WhatIfEdit) -> Result<EditResponse, ServiceError> {
        let track = resimulate(&self.scene, &edit)?;
        let response = EditResponse {
            edit,
            stopped_from: track.stopped_from,
        };
        self.sessions
            .write()
            .expect("session lock")
            .insert(session.to_string(), Overlay { edit, track });
        Ok(response)
    }

    /// Drops the session's edit; returns whether one was active.
    pub fn clear_edit(&self, session: &str) -> bool {
        self.sessions.write().expect("session lock").remove(session).is_some()
    }
}
