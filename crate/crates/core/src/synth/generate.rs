use geo::{Area, BooleanOps, Coord, LineString, MultiPolygon, Polygon, Rect as GeoRect};
use nalgebra::{Point2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scenario, SynthError, TruthRecord};
use crate::calib::{CameraModel, Heightfield};
use crate::geom::polygon::{convex_hull, point_in_polygon};
use crate::geom::{Box3D, Rect};
use crate::track::DetectionRecord;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthOutput {
    pub detections: Vec<DetectionRecord>,
    pub truth: Vec<TruthRecord>,
}

struct Rendered {
    vehicle: usize,
    bbox: Box3D<f64>,
    prev: Option<Box3D<f64>>,
    truth: TruthRecord,
    depth: f64,
    hull: Polygon<f64>,
}

fn to_geo(points: &[Point2<f64>]) -> Polygon<f64> {
    Polygon::new(
        LineString::from(points.iter().map(|p| Coord { x: p.x, y: p.y }).collect::<Vec<_>>()),
        vec![],
    )
}

fn ring(poly: &Polygon<f64>) -> Vec<Point2<f64>> {
    let pts = &poly.exterior().0;
    let n = if pts.len() > 1 && pts[0] == pts[pts.len() - 1] {
        pts.len() - 1
    } else {
        pts.len()
    };
    pts[..n].iter().map(|c| Point2::new(c.x, c.y)).collect()
}

fn largest(mp: &MultiPolygon<f64>) -> Option<&Polygon<f64>> {
    mp.0.iter()
        .max_by(|a, b| a.unsigned_area().total_cmp(&b.unsigned_area()))
}

fn ground_z(hf: Option<&Heightfield<f64>>, p: &Point2<f64>) -> Option<f64> {
    match hf {
        None => Some(0.0),
        Some(h) => h.height_at(p.x, p.y),
    }
}

fn place(
    s: &Scenario,
    hf: Option<&Heightfield<f64>>,
    vehicle: usize,
    frame: u64,
) -> Result<Option<(Box3D<f64>, super::PathPose)>, SynthError> {
    let v = &s.vehicles[vehicle];
    if frame < v.start_frame {
        return Ok(None);
    }
    let t = (frame - v.start_frame) as f64 * s.frame_dt();
    let Some(pose) = v.pose_at(t) else {
        return Ok(None);
    };
    let z = ground_z(hf, &pose.position).ok_or(SynthError::VehicleOffMap { vehicle, frame })?;
    let bbox = Box3D::upright(
        Point3::new(pose.position.x, pose.position.y, z),
        pose.heading,
        Vector3::from(v.dims),
    );
    Ok(Some((bbox, pose)))
}

/// Outward offset of every vertex of a counter-clockwise or clockwise ring,
/// after resampling the boundary at `spacing`.
fn perturb(
    poly: &[Point2<f64>],
    dilation: f64,
    sigma: f64,
    spacing: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Point2<f64>> {
    let mut pts = Vec::new();
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let len = (b - a).norm();
        let k = if sigma > 0.0 { (len / spacing).ceil().max(1.0) as usize } else { 1 };
        for j in 0..k {
            pts.push(a + (b - a) * (j as f64 / k as f64));
        }
    }
    let area2: f64 = (0..pts.len())
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    let sign = if area2 >= 0.0 { 1.0 } else { -1.0 };
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let m = pts.len();
    (0..m)
        .map(|i| {
            let t = pts[(i + 1) % m] - pts[(i + m - 1) % m];
            // outward for counter-clockwise rings in y-down image space
            let out = Vector2::new(t.y, -t.x) * sign;
            let out = out.try_normalize(1e-12).unwrap_or_else(Vector2::zeros);
            let r = if sigma > 0.0 { normal.sample(rng) } else { 0.0 };
            pts[i] + out * (dilation + r)
        })
        .collect()
}

fn clamp_to_image(p: Point2<f64>, size: (u32, u32)) -> Point2<f64> {
    Point2::new(p.x.clamp(0.0, size.0 as f64), p.y.clamp(0.0, size.1 as f64))
}

/// Random point on the box surface (bottom excluded) in local coordinates,
/// with the outward normal of its face.
fn body_point(dims: &Vector3<f64>, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>) {
    let (l, w, h) = (dims.x, dims.y, dims.z);
    let areas = [l * w, w * h, w * h, l * h, l * h];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut face = 0;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
        face = i;
    }
    let u = rng.random::<f64>() - 0.5;
    let v = rng.random::<f64>();
    match face {
        0 => (Vector3::new(u * l, (v - 0.5) * w, h), Vector3::z()),
        1 => (Vector3::new(l / 2.0, u * w, v * h), Vector3::x()),
        2 => (Vector3::new(-l / 2.0, u * w, v * h), -Vector3::x()),
        3 => (Vector3::new(u * l, w / 2.0, v * h), Vector3::y()),
        _ => (Vector3::new(u * l, -w / 2.0, v * h), -Vector3::y()),
    }
}

fn flows_for(
    r: &Rendered,
    visible: &[Point2<f64>],
    camera: &CameraModel<f64>,
    s: &Scenario,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 4]> {
    let Some(prev) = r.prev else {
        return Vec::new();
    };
    let noise = &s.noise;
    let jitter = Normal::new(0.0, noise.flow_jitter_px.max(0.0)).expect("finite sigma");
    let eye = camera.center();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < noise.flow_points && attempts < noise.flow_points * 8 {
        attempts += 1;
        let (local, n) = body_point(&r.bbox.dims, rng);
        let pc = r.bbox.center_bottom + r.bbox.axes * local;
        let pp = prev.center_bottom + prev.axes * local;
        if (r.bbox.axes * n).dot(&(eye - pc)) <= 0.0 {
            continue;
        }
        let (Some(mut c), Some(mut p)) = (camera.project(&pc), camera.project(&pp)) else {
            continue;
        };
        if !point_in_polygon(visible, &c) {
            continue;
        }
        if noise.flow_jitter_px > 0.0 {
            c += Vector2::new(jitter.sample(rng), jitter.sample(rng));
            p += Vector2::new(jitter.sample(rng), jitter.sample(rng));
        }
        out.push([p.x, p.y, c.x, c.y]);
    }
    for k in 0..noise.wheel_outliers {
        let (l, w) = (r.bbox.dims.x, r.bbox.dims.y);
        let fx = if k % 2 == 0 { 0.35 } else { -0.35 };
        let fy = if (k / 2) % 2 == 0 { 0.5 } else { -0.5 };
        let local = Vector3::new(fx * l, fy * w, 0.35);
        let pc = r.bbox.center_bottom + r.bbox.axes * local;
        let pp = prev.center_bottom + prev.axes * local;
        let (Some(c), Some(p)) = (camera.project(&pc), camera.project(&pp)) else {
            continue;
        };
        if !point_in_polygon(visible, &c) {
            continue;
        }
        // wheel rotation: arbitrary direction, up to twice the body motion
        let mag = (c - p).norm().max(1.0) * 2.0 * rng.random::<f64>();
        let ang = rng.random::<f64>() * std::f64::consts::TAU;
        let q = c - Vector2::new(ang.cos(), ang.sin()) * mag;
        out.push([q.x, q.y, c.x, c.y]);
    }
    out
}

/// Renders every vehicle as a cuboid silhouette with body-point flow.
/// Silhouettes are occluded by nearer vehicles and clipped to the image.
pub fn generate(s: &Scenario) -> Result<SynthOutput, SynthError> {
    s.validate()?;
    let camera = s.camera_model()?;
    let hf = s.heightfield()?;
    let size = camera.image_size();
    let image = GeoRect::new(Coord { x: 0.0, y: 0.0 }, Coord { x: size.0 as f64, y: size.1 as f64 }).to_polygon();
    let eye = camera.center();
    let dt = s.frame_dt();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut out = SynthOutput::default();

    for frame in 0..s.frames {
        let mut rendered = Vec::new();
        for vi in 0..s.vehicles.len() {
            let Some((bbox, pose)) = place(s, hf.as_ref(), vi, frame)? else {
                continue;
            };
            let prev = if frame > 0 {
                place(s, hf.as_ref(), vi, frame - 1)?.map(|p| p.0)
            } else {
                None
            };
            let c = bbox.center_bottom;
            let vz = match (hf.as_ref(), prev) {
                (Some(_), Some(p)) => (c.z - p.center_bottom.z) / dt,
                _ => 0.0,
            };
            let v = &s.vehicles[vi];
            let truth = TruthRecord {
                frame,
                time: frame as f64 * dt,
                vehicle_id: vi as u32 + 1,
                vehicle_type: v.vehicle_type,
                position: [c.x, c.y, c.z],
                velocity: [pose.speed * pose.heading.cos(), pose.speed * pose.heading.sin(), vz],
                speed: pose.speed,
                heading: pose.heading,
                dims: v.dims,
                visibility: 0.0,
                occluded: 0.0,
                range: (c.xy() - eye.xy()).norm(),
            };
            let corners: Option<Vec<Point2<f64>>> = bbox.corners().iter().map(|p| camera.project(p)).collect();
            let (hull, depth) = match corners {
                Some(px) => (to_geo(&convex_hull(&px)), camera.depth(&(c + bbox.axes.column(2) * (v.dims[2] / 2.0)))),
                None => (Polygon::new(LineString::new(vec![]), vec![]), f64::INFINITY),
            };
            rendered.push(Rendered {
                vehicle: vi,
                bbox,
                prev,
                truth,
                depth,
                hull,
            });
        }
        rendered.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.vehicle.cmp(&b.vehicle)));

        let mut nearer = MultiPolygon::<f64>::new(vec![]);
        let mut frame_dets: Vec<(usize, DetectionRecord)> = Vec::new();
        for r in &mut rendered {
            let full = r.hull.unsigned_area();
            if !(full > 0.0) || !r.depth.is_finite() {
                out.truth.push(r.truth.clone());
                continue;
            }
            let in_image = r.hull.intersection(&image);
            let in_area = in_image.unsigned_area();
            let visible = in_image.difference(&nearer);
            let vis_area = visible.unsigned_area();
            nearer = nearer.union(&r.hull);
            r.truth.visibility = (vis_area / full).min(1.0);
            r.truth.occluded = if in_area > 0.0 { (1.0 - vis_area / in_area).max(0.0) } else { 0.0 };
            out.truth.push(r.truth.clone());

            let dropped = s.noise.dropout > 0.0 && rng.random::<f64>() < s.noise.dropout;
            if r.truth.visibility < s.noise.min_visibility || dropped {
                continue;
            }
            let Some(piece) = largest(&visible) else {
                continue;
            };
            let vis_ring = ring(piece);
            if vis_ring.len() < 3 {
                continue;
            }
            let noisy = if s.noise.mask_noise_px > 0.0 || s.noise.mask_dilation_px != 0.0 {
                perturb(
                    &vis_ring,
                    s.noise.mask_dilation_px,
                    s.noise.mask_noise_px,
                    s.noise.mask_vertex_spacing_px,
                    &mut rng,
                )
                .into_iter()
                .map(|p| clamp_to_image(p, size))
                .collect()
            } else {
                vis_ring.clone()
            };
            let rect = Rect::bounding(&noisy).expect("non-empty ring");
            let flow = flows_for(r, &vis_ring, &camera, s, &mut rng);
            frame_dets.push((
                r.vehicle,
                DetectionRecord {
                    frame,
                    id: 0,
                    polygon: noisy.iter().map(|p| [p.x, p.y]).collect(),
                    box2d: [rect.min.x, rect.min.y, rect.max.x, rect.max.y],
                    flow,
                    vehicle_type: s.vehicles[r.vehicle].vehicle_type,
                    score: 1.0,
                },
            ));
        }
        frame_dets.sort_by_key(|(v, _)| *v);
        for (k, (_, mut d)) in frame_dets.into_iter().enumerate() {
            d.id = k as u32;
            out.detections.push(d);
        }
    }
    out.truth.sort_by_key(|t| (t.frame, t.vehicle_id));
    Ok(out)
}
