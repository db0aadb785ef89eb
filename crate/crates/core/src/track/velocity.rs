use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calib::CameraModel;
use crate::geom::{Box3D, FlowVector};
use crate::scalar::{from_usize, lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityConfig {
    /// Aggregation stops before the summed distance exceeds this (m).
    pub max_distance: f64,
    pub max_pairs: usize,
    /// Pairs required before a velocity observation is used.
    pub warmup_pairs: usize,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self {
            max_distance: 5.0,
            max_pairs: 30,
            warmup_pairs: 2,
        }
    }
}

/// First intersection of a ray with the box, if any.
pub fn ray_box<T: Real>(bbox: &Box3D<T>, origin: &Point3<T>, dir: &Vector3<T>) -> Option<Point3<T>> {
    let o = bbox.to_local(origin);
    let d = bbox.axes.transpose() * dir;
    let half: T = lit(0.5);
    let lo = Vector3::new(-bbox.dims.x * half, -bbox.dims.y * half, T::zero());
    let hi = Vector3::new(bbox.dims.x * half, bbox.dims.y * half, bbox.dims.z);
    let mut t0 = T::zero();
    let mut t1: T = lit(1e30);
    for i in 0..3 {
        if d[i].abs() <= T::default_epsilon() {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((lo[i] - o[i]) / d[i], (hi[i] - o[i]) / d[i]);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    Some(origin + dir * t0)
}

/// Ground distance travelled along the box's forward axis between the two
/// frames of `flows`, averaged over the vectors.
///
/// Each current point is lifted onto the box surface; the matching previous
/// point is lifted onto the plane at the same height above the ground.
pub fn pair_displacement<T: Real>(flows: &[FlowVector<T>], bbox: &Box3D<T>, camera: &CameraModel<T>) -> Option<T> {
    let x = bbox.axes.column(0).into_owned();
    let up = bbox.axes.column(2).into_owned();
    let mut sum = T::zero();
    let mut n = 0usize;
    for f in flows {
        let (oc, dc) = camera.ray(&f.cur);
        let Some(xc) = ray_box(bbox, &oc, &dc) else {
            continue;
        };
        let (op, dp) = camera.ray(&f.prev);
        let denom = dp.dot(&up);
        if denom.abs() <= T::default_epsilon() {
            continue;
        }
        let t = (xc - op).dot(&up) / denom;
        if t <= T::zero() {
            continue;
        }
        let xp = op + dp * t;
        sum += (xc - xp).dot(&x);
        n += 1;
    }
    (n > 0).then(|| sum / from_usize(n))
}

/// Fallback displacement: the mean flow vector placed at `location` and
/// mapped to the ground, projected on `heading`.
pub fn ground_displacement<T: Real>(
    flows: &[FlowVector<T>],
    location: &Point2<T>,
    heading: T,
    t: &crate::calib::GroundTransform<T>,
) -> Option<T> {
    if flows.is_empty() {
        return None;
    }
    let n: T = from_usize(flows.len());
    let mean = flows.iter().fold(nalgebra::Vector2::zeros(), |a, f| a + f.displacement()) / n;
    let g0 = t.image_to_ground(&(location - mean)).ok()?;
    let g1 = t.image_to_ground(location).ok()?;
    let h = Vector3::new(heading.cos(), heading.sin(), T::zero());
    Some((g1 - g0).dot(&h))
}

/// Speed from per-pair displacements, newest first. Pairs are added while
/// the summed distance stays within `max_distance` and at most `max_pairs`
/// are used; the newest pair is always used. Returns `(speed, pairs)`.
pub fn aggregate_speed<T: Real>(
    newest_first: impl IntoIterator<Item = T>,
    frame_dt: T,
    cfg: &VelocityConfig,
) -> Option<(T, usize)> {
    let limit: T = lit(cfg.max_distance);
    let mut sum = T::zero();
    let mut dist = T::zero();
    let mut n = 0usize;
    for d in newest_first {
        if n == cfg.max_pairs.max(1) {
            break;
        }
        if n > 0 && dist + d.abs() > limit {
            break;
        }
        sum += d;
        dist += d.abs();
        n += 1;
        assert!(n <= cfg.max_pairs.max(1) && (n == 1 || dist <= limit));
    }
    (n > 0).then(|| (sum / (from_usize::<T>(n) * frame_dt), n))
}
