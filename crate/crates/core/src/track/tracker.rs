use std::collections::{BTreeMap, VecDeque};

use geo::Polygon;
use nalgebra::{Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::associate::{associate, to_polygon, Candidate, Observation};
use super::{
    aggregate_speed, ground_displacement, pair_displacement, ConstantVelocityKf, DetectionRecord, PoseSmoother,
    RawMeasurement, StateRecord, TrackConfig, TrackError,
};
use crate::calib::{Calibration, GroundTransform};
use crate::geom::polygon::polygon_area;
use crate::geom::{
    box3d_from_mask, heading_fallback, heading_from_vp, occlusion_gate, orthogonal_vps, ransac_heading_vp,
    wrap_angle, Box3D, FlowVector, GeomConfig, GeomError, Occlusion, Rect,
};
use crate::vehicle::{TypeDimensionPrior, VehicleType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Active,
    Coasting,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub frame: u64,
    /// Ground distance along the heading since the previous frame (m).
    pub displacement: Option<f64>,
    /// Bottom centre of the 2D box (px).
    pub image_position: Point2<f64>,
}

#[derive(Debug, Clone)]
pub struct VehicleTrack {
    pub track_id: u32,
    pub status: TrackStatus,
    kf: Option<ConstantVelocityKf<f64>>,
    smoother: PoseSmoother<f64>,
    votes: BTreeMap<VehicleType, u32>,
    history: VecDeque<HistoryEntry>,
    mask: Polygon<f64>,
    mask_frame: u64,
    mask_position: Option<Vector3<f64>>,
    misses: usize,
}

impl VehicleTrack {
    /// Majority class; ties go to the earlier class in the fixed list.
    pub fn vehicle_type(&self) -> VehicleType {
        let mut best = (VehicleType::Sedan, 0);
        for (&ty, &n) in &self.votes {
            if n > best.1 {
                best = (ty, n);
            }
        }
        best.0
    }

    pub fn filter(&self) -> Option<&ConstantVelocityKf<f64>> {
        self.kf.as_ref()
    }

    pub fn heading(&self) -> Option<f64> {
        self.smoother.heading()
    }

    pub fn dims(&self) -> Option<Vector3<f64>> {
        self.smoother.dims()
    }

    pub fn history(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.history.iter()
    }

    /// Aggregated speed over the newest frame pairs.
    pub fn measure_speed(&self, cfg: &TrackConfig) -> Result<(f64, usize), TrackError> {
        let pairs = self.history.iter().rev().filter_map(|h| h.displacement);
        aggregate_speed(pairs, cfg.frame_dt, &cfg.velocity).ok_or(TrackError::NoHistory)
    }

    fn pair_count(&self) -> usize {
        self.history.iter().filter(|h| h.displacement.is_some()).count()
    }
}

/// Multi-vehicle tracker for one camera stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    calib: Calibration,
    geom: GeomConfig,
    cfg: TrackConfig,
    prior: TypeDimensionPrior,
    planar: bool,
    tracks: Vec<VehicleTrack>,
    next_id: u32,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(calib: Calibration, geom: GeomConfig, cfg: TrackConfig, prior: TypeDimensionPrior) -> Self {
        let planar = matches!(calib.ground, GroundTransform::Homography(_));
        Self {
            calib,
            geom,
            cfg,
            prior,
            planar,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        }
    }

    pub fn tracks(&self) -> &[VehicleTrack] {
        &self.tracks
    }

    pub fn track(&self, id: u32) -> Option<&VehicleTrack> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    /// Runs a whole detection stream. Frames without detections between the
    /// first and last frame are stepped as empty.
    pub fn run(&mut self, detections: &[DetectionRecord]) -> Result<Vec<StateRecord>, TrackError> {
        let mut by_frame: BTreeMap<u64, Vec<DetectionRecord>> = BTreeMap::new();
        for d in detections {
            by_frame.entry(d.frame).or_default().push(d.clone());
        }
        let (Some(&first), Some(&last)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for frame in first..=last {
            let mut dets = by_frame.remove(&frame).unwrap_or_default();
            dets.sort_by_key(|d| d.id);
            out.extend(self.step(frame, &dets)?);
        }
        Ok(out)
    }

    /// Advances to `frame` and consumes its detections.
    pub fn step(&mut self, frame: u64, dets: &[DetectionRecord]) -> Result<Vec<StateRecord>, TrackError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackError::OutOfOrder { last, got: frame });
            }
            let dt = (frame - last) as f64 * self.cfg.frame_dt;
            for tr in self.tracks.iter_mut().filter(|t| t.status != TrackStatus::Closed) {
                if let Some(kf) = tr.kf.as_mut() {
                    kf.predict(dt, self.cfg.kalman.accel_sigma)?;
                }
            }
        }
        self.last_frame = Some(frame);

        let polys: Vec<Polygon<f64>> = dets.iter().map(|d| to_polygon(&d.mask())).collect();
        let flows: Vec<Vec<FlowVector<f64>>> = dets.iter().map(|d| self.roi_flows(d)).collect();
        let rects: Vec<Rect<f64>> = dets.iter().map(|d| d.rect()).collect();

        let live: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status != TrackStatus::Closed)
            .collect();
        let matches = {
            let cands: Vec<Candidate<'_>> = live
                .iter()
                .map(|&i| {
                    let tr = &self.tracks[i];
                    Candidate {
                        track_id: tr.track_id,
                        mask: &tr.mask,
                        predicted_shift: (tr.mask_frame + 1 != frame).then(|| self.predicted_shift(tr)),
                    }
                })
                .collect();
            let obs: Vec<Observation<'_>> = polys
                .iter()
                .zip(&flows)
                .map(|(mask, flows)| Observation { mask, flows })
                .collect();
            associate(&cands, &obs, self.cfg.alpha, self.cfg.min_score)
        };
        let mut assigned: Vec<Option<usize>> = vec![None; dets.len()];
        for (ci, oi) in matches {
            assigned[oi] = Some(live[ci]);
        }

        let mut raws: BTreeMap<u32, (RawMeasurement, bool)> = BTreeMap::new();
        for (j, det) in dets.iter().enumerate() {
            let idx = match assigned[j] {
                Some(i) => i,
                None => self.spawn(frame, &polys[j]),
            };
            let m = self.measure(idx, frame, det, &polys[j], &flows[j], &rects, j)?;
            raws.insert(self.tracks[idx].track_id, m);
        }

        for tr in self.tracks.iter_mut() {
            if tr.status == TrackStatus::Closed || tr.mask_frame == frame {
                continue;
            }
            tr.misses += 1;
            tr.status = TrackStatus::Coasting;
            let visible = tr
                .kf
                .as_ref()
                .and_then(|kf| self.calib.camera.project(&Point3::from(kf.position())))
                .is_some_and(|px| self.calib.camera.contains_pixel(&px));
            if tr.misses > self.cfg.max_coast || !visible {
                tr.status = TrackStatus::Closed;
            }
        }

        let mut out = Vec::new();
        for tr in &self.tracks {
            if tr.status == TrackStatus::Closed {
                continue;
            }
            let (raw, used) = match raws.remove(&tr.track_id) {
                Some((raw, used)) => (Some(raw), used),
                None => (None, false),
            };
            if let Some(rec) = self.emit(tr, frame, raw, !used) {
                out.push(rec);
            }
        }
        Ok(out)
    }

    fn roi_flows(&self, det: &DetectionRecord) -> Vec<FlowVector<f64>> {
        let roi = det.rect().scaled(self.cfg.roi_scale.max(1.0).sqrt());
        det.flows().into_iter().filter(|f| roi.contains(&f.cur)).collect()
    }

    fn predicted_shift(&self, tr: &VehicleTrack) -> Vector2<f64> {
        let cam = &self.calib.camera;
        let (Some(kf), Some(then)) = (tr.kf.as_ref(), tr.mask_position) else {
            return Vector2::zeros();
        };
        match (cam.project(&Point3::from(kf.position())), cam.project(&Point3::from(then))) {
            (Some(a), Some(b)) => a - b,
            _ => Vector2::zeros(),
        }
    }

    fn spawn(&mut self, frame: u64, mask: &Polygon<f64>) -> usize {
        self.tracks.push(VehicleTrack {
            track_id: self.next_id,
            status: TrackStatus::Active,
            kf: None,
            smoother: PoseSmoother::new(self.cfg.smooth_n),
            votes: BTreeMap::new(),
            history: VecDeque::new(),
            mask: mask.clone(),
            mask_frame: frame,
            mask_position: None,
            misses: 0,
        });
        self.next_id += 1;
        self.tracks.len() - 1
    }

    fn touches_border(&self, r: &Rect<f64>) -> bool {
        let (w, h) = self.calib.camera.image_size();
        let m = self.cfg.border_margin_px;
        r.min.x <= m || r.min.y <= m || r.max.x >= w as f64 - m || r.max.y >= h as f64 - m
    }

    /// Measures one detection and updates its track. Returns the raw
    /// measurement and whether any observation reached the filter.
    #[allow(clippy::too_many_arguments)]
    fn measure(
        &mut self,
        idx: usize,
        frame: u64,
        det: &DetectionRecord,
        poly: &Polygon<f64>,
        flows: &[FlowVector<f64>],
        rects: &[Rect<f64>],
        j: usize,
    ) -> Result<(RawMeasurement, bool), TrackError> {
        let t = &self.calib.ground;
        let cam = &self.calib.camera;
        let geom = &self.geom;
        let cfg = &self.cfg;

        let mask = det.mask();
        let rect = rects[j];
        let neighbors: Vec<Rect<f64>> = rects
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, r)| *r)
            .collect();
        let mut occlusion = occlusion_gate(&rect, polygon_area(&mask), &neighbors, &geom.occlusion);
        if occlusion == Occlusion::Clear
            && neighbors
                .iter()
                .any(|n| n.intersection_area(&rect) > 0.0 && n.max.y > rect.max.y)
        {
            occlusion = Occlusion::Partial;
        }
        if self.touches_border(&rect) {
            occlusion = Occlusion::Skip;
        }

        let tr = &mut self.tracks[idx];
        *tr.votes.entry(det.vehicle_type).or_default() += 1;
        let range = self.prior.range::<f64>(tr.vehicle_type());
        let anchor = Point2::new(rect.center().x, rect.max.y);
        tr.history.push_back(HistoryEntry {
            frame,
            displacement: None,
            image_position: anchor,
        });
        let cap = cfg.velocity.max_pairs.max(geom.fallback.window).max(1);
        while tr.history.len() > cap {
            tr.history.pop_front();
        }

        let vp = match t.horizon() {
            Some(h) => ransac_heading_vp(flows, h, &geom.ransac),
            None => Err(GeomError::DegenerateHorizon),
        };
        let heading = vp
            .as_ref()
            .ok()
            .and_then(|vp| heading_from_vp(&rect.center(), vp, t).ok())
            .or_else(|| {
                let recent: Vec<Point2<f64>> = tr.history.iter().map(|h| h.image_position).collect();
                heading_fallback(&recent, t, &geom.fallback).ok()
            })
            .or(tr.smoother.heading());
        let vflows: Vec<FlowVector<f64>> = match &vp {
            Ok(v) => v.inliers.iter().map(|&k| flows[k]).collect(),
            Err(_) => flows.to_vec(),
        };

        let mut raw = RawMeasurement {
            occlusion,
            position: None,
            heading,
            speed: None,
            dims: None,
            pairs: 0,
            degenerate_box: false,
        };
        let mut position = None;
        let mut displacement = None;
        if occlusion != Occlusion::Skip {
            if let Some(h) = heading {
                tr.smoother.push_heading(h);
            }
            let heading = tr.smoother.heading().or(heading);
            let estimate = heading.and_then(|h| {
                let vps = orthogonal_vps(&rect.center(), h, t, cam).ok()?;
                box3d_from_mask(&mask, &vps, t, cam, &range, &geom.box3d).ok()
            });
            match (heading, estimate) {
                (Some(h), Some(est)) => {
                    let c = est.bbox.center_bottom;
                    raw.position = Some([c.x, c.y, c.z]);
                    raw.dims = Some([est.bbox.dims.x, est.bbox.dims.y, est.bbox.dims.z]);
                    raw.degenerate_box = est.degenerate;
                    displacement = pair_displacement(&vflows, &est.bbox, cam)
                        .or_else(|| ground_displacement(&vflows, &anchor, h, t));
                    if occlusion == Occlusion::Clear {
                        if !est.degenerate {
                            tr.smoother.push_dims(&est.bbox.dims, &range);
                        }
                        position = Some(c.coords);
                    }
                }
                (Some(h), None) => {
                    displacement = ground_displacement(&vflows, &anchor, h, t);
                }
                (None, _) => {
                    // no direction yet: the ground contact point, used only
                    // once the vehicle has stayed put for a full window
                    if let Ok(g) = t.image_to_ground(&anchor) {
                        raw.position = Some([g.x, g.y, g.z]);
                        if occlusion == Occlusion::Clear && tr.history.len() >= geom.fallback.window {
                            position = Some(g.coords);
                        }
                    }
                    if !vflows.is_empty() {
                        let mean = vflows.iter().fold(Vector2::zeros(), |a, f| a + f.displacement())
                            / vflows.len() as f64;
                        if let (Ok(g0), Ok(g1)) = (t.image_to_ground(&(anchor - mean)), t.image_to_ground(&anchor)) {
                            displacement = Some((g1 - g0).xy().norm());
                        }
                    }
                }
            }
        }
        if let Some(last) = tr.history.back_mut() {
            last.displacement = displacement;
        }

        let mut velocity = None;
        if tr.pair_count() >= cfg.velocity.warmup_pairs.max(1) {
            if let Ok((speed, n)) = tr.measure_speed(cfg) {
                raw.speed = Some(speed);
                raw.pairs = n;
                if let Some(h) = tr.smoother.heading().or(heading) {
                    velocity = Some(Vector3::new(h.cos(), h.sin(), 0.0) * speed);
                }
            }
        }
        if self.planar {
            if let Some(p) = position.as_mut() {
                p.z = 0.0;
            }
        }

        let k = &cfg.kalman;
        match tr.kf.as_mut() {
            Some(kf) => {
                if position.is_some() || velocity.is_some() {
                    kf.update(position, velocity, k.pos_sigma, k.vel_sigma)?;
                }
            }
            None => {
                if let Some(p) = position {
                    tr.kf = Some(ConstantVelocityKf::new(p, velocity, k, self.planar));
                }
            }
        }
        tr.mask = poly.clone();
        tr.mask_frame = frame;
        tr.mask_position = tr.kf.as_ref().map(|kf| kf.position());
        tr.misses = 0;
        tr.status = TrackStatus::Active;
        Ok((raw, position.is_some() || velocity.is_some()))
    }

    fn emit(&self, tr: &VehicleTrack, frame: u64, raw: Option<RawMeasurement>, predicted: bool) -> Option<StateRecord> {
        let kf = tr.kf.as_ref()?;
        let p = kf.position();
        let v = kf.velocity();
        let heading = tr.smoother.heading().unwrap_or_else(|| {
            if v.xy().norm() > 0.1 {
                wrap_angle(v.y.atan2(v.x))
            } else {
                0.0
            }
        });
        let ty = tr.vehicle_type();
        let dims = tr.smoother.dims().unwrap_or(self.prior.range::<f64>(ty).default);
        let bbox = Box3D::upright(Point3::from(p), heading, dims);
        Some(StateRecord {
            frame,
            time: frame as f64 * self.cfg.frame_dt,
            track_id: tr.track_id,
            position: p.into(),
            velocity: v.into(),
            speed: v.norm(),
            heading,
            dims: dims.into(),
            corners: bbox.corners().map(|c| [c.x, c.y, c.z]),
            vehicle_type: ty,
            predicted,
            raw: raw.filter(|_| self.cfg.emit_raw),
        })
    }
}
