use geo::{Area, BooleanOps, Contains, Coord, LineString, Polygon, Translate};
use nalgebra::{Point2, Vector2};

use crate::geom::FlowVector;

pub fn to_polygon(points: &[Point2<f64>]) -> Polygon<f64> {
    let ring: Vec<Coord<f64>> = points.iter().map(|p| Coord { x: p.x, y: p.y }).collect();
    Polygon::new(LineString::from(ring), vec![])
}

pub fn polygon_iou(a: &Polygon<f64>, b: &Polygon<f64>) -> f64 {
    let inter = a.intersection(b).unsigned_area();
    let union = a.unsigned_area() + b.unsigned_area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn inside(poly: &Polygon<f64>, p: &Point2<f64>) -> bool {
    poly.contains(&geo::Point::new(p.x, p.y))
}

/// A live track as seen by the matcher.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub track_id: u32,
    /// Mask from the last frame the track was detected in.
    pub mask: &'a Polygon<f64>,
    /// `None` when that frame is the previous one; otherwise the predicted
    /// image shift of the mask since then.
    pub predicted_shift: Option<Vector2<f64>>,
}

#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub mask: &'a Polygon<f64>,
    pub flows: &'a [FlowVector<f64>],
}

/// `alpha · flow fraction + (1 − alpha) · overlap` for one pair.
///
/// For a track seen in the previous frame, the flow fraction counts current
/// flow vectors starting inside its mask and the mask is warped by their mean
/// displacement. A coasting track's mask is moved by its predicted shift and
/// the fraction counts vectors ending inside it.
pub fn association_score(c: &Candidate<'_>, o: &Observation<'_>, alpha: f64) -> f64 {
    let (fraction, shift) = match c.predicted_shift {
        None => {
            let hits: Vec<&FlowVector<f64>> = o.flows.iter().filter(|f| inside(c.mask, &f.prev)).collect();
            let shift = if hits.is_empty() {
                Vector2::zeros()
            } else {
                hits.iter().fold(Vector2::zeros(), |a, f| a + f.displacement()) / hits.len() as f64
            };
            let frac = if o.flows.is_empty() {
                0.0
            } else {
                hits.len() as f64 / o.flows.len() as f64
            };
            (frac, shift)
        }
        Some(shift) => {
            let moved = c.mask.translate(shift.x, shift.y);
            let hits = o.flows.iter().filter(|f| inside(&moved, &f.cur)).count();
            let frac = if o.flows.is_empty() {
                0.0
            } else {
                hits as f64 / o.flows.len() as f64
            };
            (frac, shift)
        }
    };
    let warped = c.mask.translate(shift.x, shift.y);
    alpha * fraction + (1.0 - alpha) * polygon_iou(&warped, o.mask)
}

/// Greedy one-to-one matching, best score first; ties go to the lower track
/// id, then the lower observation index. Returns `(candidate, observation)`
/// index pairs.
pub fn associate(cands: &[Candidate<'_>], obs: &[Observation<'_>], alpha: f64, min_score: f64) -> Vec<(usize, usize)> {
    let mut scored = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        for (j, o) in obs.iter().enumerate() {
            let s = association_score(c, o, alpha);
            if s >= min_score {
                scored.push((s, c.track_id, j, i));
            }
        }
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used_c = vec![false; cands.len()];
    let mut used_o = vec![false; obs.len()];
    let mut out = Vec::new();
    for (_, _, j, i) in scored {
        if !used_c[i] && !used_o[j] {
            used_c[i] = true;
            used_o[j] = true;
            out.push((i, j));
        }
    }
    out
}
