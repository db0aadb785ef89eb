//! Reconstructed traffic scenes: persistence, replay, what-if
//! re-simulation and the data service behind the replay client.

mod resim;
mod service;

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::file::read_calibration_file;
use crate::calib::MapFrame;
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::shape::ShapeRecord;
use crate::track::{angle_diff, StateRecord};
use crate::vehicle::VehicleType;

pub use resim::{resimulate, Resimulated, SpeedChange, WhatIfEdit};
pub use service::{
    EditResponse, FramePayload, SceneInfo, SceneService, ServiceError, ShapePayload, TrackSummary, VehicleFrame,
    DEFAULT_SESSION,
};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene schema version {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("calibration not found: {0}")]
    MissingCalibration(PathBuf),
    #[error("time {t} s outside [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },
    #[error("unknown track {0}")]
    UnknownTrack(u32),
    #[error("frame {frame} outside the lifespan of track {track}")]
    FrameOutOfLifespan { track: u32, frame: u64 },
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("track {track}: records not strictly increasing at frame {frame}")]
    Unordered { track: u32, frame: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Calib(#[from] crate::calib::CalibError),
}

/// On-disk scene container. Relative paths resolve against the scene file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub frame_dt: f64,
    pub calibration: PathBuf,
    /// JSON-lines state records.
    pub tracks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shapes: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backdrop: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub map: MapFrame,
    pub calibration: PathBuf,
    pub backdrop: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub frame_dt: f64,
    pub tracks: BTreeMap<u32, Vec<StateRecord>>,
    pub shapes: BTreeMap<u32, ShapeRecord>,
}

/// One vehicle at one instant, world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub track_id: u32,
    pub vehicle_type: VehicleType,
    pub position: [f64; 3],
    pub heading: f64,
    pub speed: f64,
    pub dims: [f64; 3],
    pub predicted: bool,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn group(records: Vec<StateRecord>) -> Result<BTreeMap<u32, Vec<StateRecord>>, SceneError> {
    let mut tracks: BTreeMap<u32, Vec<StateRecord>> = BTreeMap::new();
    for r in records {
        tracks.entry(r.track_id).or_default().push(r);
    }
    for (id, recs) in tracks.iter_mut() {
        recs.sort_by_key(|r| r.frame);
        if let Some(w) = recs.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(SceneError::Unordered {
                track: *id,
                frame: w[1].frame,
            });
        }
    }
    Ok(tracks)
}

/// Lerp of two records; `f` in `[0, 1]`.
pub(crate) fn blend(a: &StateRecord, b: &StateRecord, f: f64) -> Pose {
    let lerp = |x: f64, y: f64| x + (y - x) * f;
    Pose {
        track_id: a.track_id,
        vehicle_type: a.vehicle_type,
        position: std::array::from_fn(|k| lerp(a.position[k], b.position[k])),
        heading: (a.heading + angle_diff(b.heading, a.heading) * f).rem_euclid(std::f64::consts::TAU),
        speed: lerp(a.speed, b.speed),
        dims: std::array::from_fn(|k| lerp(a.dims[k], b.dims[k])),
        predicted: a.predicted && b.predicted,
    }
}

pub(crate) fn exact(a: &StateRecord) -> Pose {
    Pose {
        track_id: a.track_id,
        vehicle_type: a.vehicle_type,
        position: a.position,
        heading: a.heading,
        speed: a.speed,
        dims: a.dims,
        predicted: a.predicted,
    }
}

/// Pose of a track at `t`, `None` outside its lifespan.
pub(crate) fn sample(records: &[StateRecord], t: f64) -> Option<Pose> {
    let (first, last) = (records.first()?, records.last()?);
    if t < first.time || t > last.time {
        return None;
    }
    let j = records.partition_point(|r| r.time < t);
    let b = &records[j];
    if b.time == t || j == 0 {
        return Some(exact(b));
    }
    let a = &records[j - 1];
    Some(blend(a, b, (t - a.time) / (b.time - a.time)))
}

impl Scene {
    /// Builds a scene from a track file, an optional shape file and the
    /// calibration carrying the map description.
    pub fn from_files(
        tracks: &Path,
        shapes: Option<&Path>,
        calibration: &Path,
        frame_dt: f64,
    ) -> Result<Self, SceneError> {
        if !calibration.exists() {
            return Err(SceneError::MissingCalibration(calibration.to_path_buf()));
        }
        let cal = read_calibration_file(calibration)?;
        let tracks = group(read_jsonl(tracks)?)?;
        let shapes = match shapes {
            Some(p) => read_json::<Vec<ShapeRecord>>(p)?
                .into_iter()
                .map(|s| (s.track_id, s))
                .collect(),
            None => BTreeMap::new(),
        };
        Ok(Self {
            map: cal.map,
            calibration: calibration.to_path_buf(),
            backdrop: cal.backdrop.map(|b| resolve(calibration.parent().unwrap_or(Path::new(".")), &b)),
            prior: None,
            frame_dt,
            tracks,
            shapes,
        })
    }

    pub fn start(&self) -> f64 {
        0.0
    }

    /// Time of the last record of any track.
    pub fn duration(&self) -> f64 {
        self.tracks
            .values()
            .filter_map(|r| r.last())
            .map(|r| r.time)
            .fold(0.0, f64::max)
    }

    pub fn last_frame(&self) -> u64 {
        self.tracks.values().filter_map(|r| r.last()).map(|r| r.frame).max().unwrap_or(0)
    }

    /// Every vehicle alive at `t`, by track id, interpolated linearly
    /// between the bracketing records.
    pub fn frame_at(&self, t: f64) -> Result<Vec<Pose>, SceneError> {
        self.frame_with(t, None)
    }

    pub(crate) fn frame_with(&self, t: f64, overlay: Option<&Resimulated>) -> Result<Vec<Pose>, SceneError> {
        let duration = self.duration();
        if !(t >= 0.0 && t <= duration) {
            return Err(SceneError::OutOfRange { t, duration });
        }
        let mut out = Vec::new();
        for (id, records) in &self.tracks {
            let records = match overlay {
                Some(o) if o.track_id == *id => &o.records,
                _ => records,
            };
            out.extend(sample(records, t));
        }
        Ok(out)
    }

    /// Writes the scene file plus `<stem>.tracks.jsonl` and, when shapes are
    /// present, `<stem>.shapes.json` beside it.
    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
        let tracks_name = PathBuf::from(format!("{stem}.tracks.jsonl"));
        let records: Vec<&StateRecord> = self.tracks.values().flatten().collect();
        write_jsonl(&dir.join(&tracks_name), &records)?;
        let shapes_name = if self.shapes.is_empty() {
            None
        } else {
            let name = PathBuf::from(format!("{stem}.shapes.json"));
            let shapes: Vec<&ShapeRecord> = self.shapes.values().collect();
            write_json(&dir.join(&name), &shapes)?;
            Some(name)
        };
        let file = SceneFile {
            version: SCENE_VERSION,
            frame_dt: self.frame_dt,
            calibration: self.calibration.clone(),
            tracks: tracks_name,
            shapes: shapes_name,
            prior: self.prior.clone(),
            backdrop: self.backdrop.clone(),
        };
        write_json(path, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let file: SceneFile = read_json(path)?;
        if file.version != SCENE_VERSION {
            return Err(SceneError::SchemaMismatch {
                found: file.version,
                expected: SCENE_VERSION,
            });
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        let calibration = resolve(dir, &file.calibration);
        let shapes = file.shapes.as_ref().map(|s| resolve(dir, s));
        let mut scene = Self::from_files(&resolve(dir, &file.tracks), shapes.as_deref(), &calibration, file.frame_dt)?;
        scene.calibration = file.calibration;
        scene.prior = file.prior;
        scene.backdrop = file.backdrop.or(scene.backdrop);
        Ok(scene)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::calib::file::{write_calibration, CalibrationFile};
    use crate::calib::{Calibration, CameraModel, Intrinsics, MapKind};
    use nalgebra::Point3;

    pub(crate) fn record(track: u32, frame: u64, x: f64, y: f64, speed: f64) -> StateRecord {
        StateRecord {
            frame,
            time: frame as f64 / 10.0,
            track_id: track,
            position: [x, y, 0.0],
            velocity: [speed, 0.0, 0.0],
            speed,
            heading: 0.0,
            dims: [4.5, 1.8, 1.5],
            corners: [[0.0; 3]; 8],
            vehicle_type: VehicleType::Sedan,
            predicted: false,
            raw: None,
        }
    }

    /// Track 1 drives east at 10 m/s for 2 s; track 2 is parked for 1 s.
    pub(crate) fn scene() -> Scene {
        let mut tracks = BTreeMap::new();
        tracks.insert(1, (0..=20).map(|f| record(1, f, f as f64, 0.0, 10.0)).collect());
        tracks.insert(2, (5..=15).map(|f| record(2, f, 3.0, 4.0, 0.0)).collect());
        Scene {
            map: MapFrame::new(MapKind::Planar2d, 0.1, [100.0, 200.0, 0.0], 0.0).unwrap(),
            calibration: PathBuf::from("/nonexistent/calib.json"),
            backdrop: None,
            prior: None,
            frame_dt: 0.1,
            tracks,
            shapes: BTreeMap::new(),
        }
    }

    fn write_calib(dir: &Path) -> PathBuf {
        let k = Intrinsics::centered(1000.0, (1280, 720));
        let cam = CameraModel::look_from(&k, Point3::new(0.0, 0.0, 10.0), 0.4, 0.2, 0.0).unwrap();
        let cal = Calibration::planar(cam, scene().map).unwrap();
        let path = dir.join("calib.json");
        write_calibration(&path, &CalibrationFile::from_calibration(&cal, None, None)).unwrap();
        path
    }

    #[test]
    fn frame_at_record_and_midpoint() {
        let s = scene();
        let f = s.frame_at(0.5).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].position, [5.0, 0.0, 0.0]);
        let f = s.frame_at(0.55).unwrap();
        assert!((f[0].position[0] - 5.5).abs() < 1e-9);
        let f = s.frame_at(1.8).unwrap();
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn out_of_range() {
        let s = scene();
        assert!(matches!(s.frame_at(2.01), Err(SceneError::OutOfRange { .. })));
        assert!(matches!(s.frame_at(-0.1), Err(SceneError::OutOfRange { .. })));
        assert!(s.frame_at(2.0).is_ok());
    }

    #[test]
    fn heading_blend_wraps() {
        let mut a = record(1, 0, 0.0, 0.0, 1.0);
        let mut b = record(1, 1, 1.0, 0.0, 1.0);
        a.heading = 6.2;
        b.heading = 0.1;
        let p = blend(&a, &b, 0.5);
        let want = (6.2 + (0.1 + std::f64::consts::TAU - 6.2) / 2.0) % std::f64::consts::TAU;
        assert!((p.heading - want).abs() < 1e-12);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = scene();
        s.calibration = write_calib(dir.path());
        let path = dir.path().join("scene.json");
        s.save(&path).unwrap();
        let back = Scene::load(&path).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn empty_scene_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = scene();
        s.tracks.clear();
        s.calibration = write_calib(dir.path());
        let path = dir.path().join("empty.json");
        s.save(&path).unwrap();
        let back = Scene::load(&path).unwrap();
        assert!(back.tracks.is_empty());
        assert_eq!(back.frame_at(0.0).unwrap(), vec![]);
    }

    #[test]
    fn missing_calibration_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene();
        let path = dir.path().join("scene.json");
        s.save(&path).unwrap();
        assert!(matches!(Scene::load(&path), Err(SceneError::MissingCalibration(_))));

        let mut file: SceneFile = read_json(&path).unwrap();
        file.version = 7;
        write_json(&path, &file).unwrap();
        assert!(matches!(Scene::load(&path), Err(SceneError::SchemaMismatch { found: 7, .. })));
    }

    #[test]
    fn duplicate_frames_rejected() {
        let recs = vec![record(1, 3, 0.0, 0.0, 1.0), record(1, 3, 1.0, 0.0, 1.0)];
        assert!(matches!(group(recs), Err(SceneError::Unordered { track: 1, frame: 3 })));
    }
}
