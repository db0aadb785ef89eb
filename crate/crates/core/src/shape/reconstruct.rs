use std::collections::BTreeMap;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::histogram::{resample, voxels_to_histogram};
use super::prior::{fit_shape, template_for, ShapePrior, ShapeVector};
use super::voxel::{carve, View};
use super::{ShapeConfig, ShapeError};
use crate::calib::Calibration;
use crate::geom::{Box3D, Rect};
use crate::track::{DetectionRecord, StateRecord};
use crate::vehicle::VehicleType;

/// Detections of one camera, frame-synchronised with the tracks.
pub struct CameraStream<'a> {
    pub calibration: &'a Calibration,
    pub detections: &'a [DetectionRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRecord {
    pub track_id: u32,
    /// Box length, width and height the histogram spans (m).
    pub dims: [f64; 3],
    pub views: usize,
    pub shape: ShapeVector<f64>,
}

fn reframe(p: [f64; 3], heading: f64, from: &Calibration, to: &Calibration) -> (Point3<f64>, f64) {
    let ahead = [p[0] + heading.cos(), p[1] + heading.sin(), p[2]];
    let a = to.map.map_to_world(from.map.world_to_map(p));
    let b = to.map.map_to_world(from.map.world_to_map(ahead));
    (Point3::from(a), (b[1] - a[1]).atan2(b[0] - a[0]))
}

fn touches_border(r: &Rect<f64>, size: (u32, u32)) -> bool {
    r.min.x <= 1.0 || r.min.y <= 1.0 || r.max.x >= size.0 as f64 - 1.0 || r.max.y >= size.1 as f64 - 1.0
}

/// Unoccluded masks of one track, matched by projected-box overlap.
fn collect_views(
    states: &[&StateRecord],
    dims: &Vector3<f64>,
    streams: &[CameraStream],
    by_frame: &[BTreeMap<u64, Vec<&DetectionRecord>>],
    cfg: &ShapeConfig,
) -> Vec<View<f64>> {
    let reference = streams[0].calibration;
    let mut views = Vec::new();
    for s in states.iter().filter(|s| !s.predicted) {
        for (stream, frames) in streams.iter().zip(by_frame) {
            let Some(dets) = frames.get(&s.frame) else { continue };
            let cal = stream.calibration;
            let (c, h) = reframe(s.position, s.heading, reference, cal);
            let pose = Box3D::upright(c, h, *dims);
            let Some(px) = pose.image_corners(&cal.camera).into_iter().collect::<Option<Vec<Point2<f64>>>>() else {
                continue;
            };
            let Some(rect) = Rect::bounding(&px) else { continue };
            let best = dets
                .iter()
                .map(|d| (d, d.rect().iou(&rect)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.id.cmp(&a.0.id)));
            let Some((det, iou)) = best else { continue };
            let r = det.rect();
            let crowded = dets.iter().any(|o| o.id != det.id && o.rect().intersection_area(&r) > 0.0);
            if iou < cfg.min_view_iou || crowded || touches_border(&r, cal.camera.image_size()) {
                continue;
            }
            views.push(View {
                mask: det.mask(),
                camera: cal.camera.clone(),
                pose,
            });
        }
    }
    if views.len() > cfg.max_views {
        let n = views.len();
        let step = n as f64 / cfg.max_views as f64;
        views = (0..cfg.max_views).map(|k| views[(k as f64 * step) as usize].clone()).collect();
    }
    views
}

fn majority(states: &[&StateRecord]) -> VehicleType {
    let mut votes: BTreeMap<VehicleType, usize> = BTreeMap::new();
    for s in states {
        *votes.entry(s.vehicle_type).or_default() += 1;
    }
    votes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(t, _)| t)
        .unwrap_or(VehicleType::Sedan)
}

fn fitted(views: &[View<f64>], ty: VehicleType, prior: &ShapePrior<f64>, cfg: &ShapeConfig) -> Result<ShapeVector<f64>, ShapeError> {
    let grid = carve(views, cfg.voxel_size)?.symmetrize();
    let hist = resample(&voxels_to_histogram(&grid)?, prior.rows, prior.cols)?;
    fit_shape(&hist.values, prior, ty, cfg.lambda)
}

/// One shape per track. Tracks are in the world frame of the first stream.
/// Tracks with too few clean views, or whose hull is empty, get the type
/// template.
pub fn reconstruct_shapes(
    tracks: &[StateRecord],
    streams: &[CameraStream],
    prior: &ShapePrior<f64>,
    cfg: &ShapeConfig,
) -> Result<Vec<ShapeRecord>, ShapeError> {
    if streams.is_empty() {
        return Err(ShapeError::NoViews);
    }
    let by_frame: Vec<BTreeMap<u64, Vec<&DetectionRecord>>> = streams
        .iter()
        .map(|s| {
            let mut m: BTreeMap<u64, Vec<&DetectionRecord>> = BTreeMap::new();
            for d in s.detections {
                m.entry(d.frame).or_default().push(d);
            }
            m
        })
        .collect();
    let mut per_track: BTreeMap<u32, Vec<&StateRecord>> = BTreeMap::new();
    for s in tracks {
        per_track.entry(s.track_id).or_default().push(s);
    }
    let mut out = Vec::with_capacity(per_track.len());
    for (id, states) in per_track {
        let ty = majority(&states);
        let last = states.iter().rev().find(|s| !s.predicted).unwrap_or(&states[states.len() - 1]);
        let dims = Vector3::from(last.dims);
        let views = collect_views(&states, &dims, streams, &by_frame, cfg);
        let shape = if views.len() >= cfg.min_views.max(1) {
            fitted(&views, ty, prior, cfg).or_else(|_| template_for(ty, prior))?
        } else {
            template_for(ty, prior)?
        };
        out.push(ShapeRecord {
            track_id: id,
            dims: last.dims,
            views: views.len(),
            shape,
        });
    }
    Ok(out)
}
