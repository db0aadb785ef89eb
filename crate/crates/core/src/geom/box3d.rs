use nalgebra::{DMatrix, DVector, Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::polygon::{convex_hull, polygon_area, Rect};
use super::vanishing::VanishingTriple;
use super::GeomError;
use crate::calib::{CameraModel, GroundTransform};
use crate::scalar::{lit, radians, Real};
use crate::vehicle::DimensionRange;

/// Oriented vehicle box. `axes` columns are the forward, left and up
/// directions; `dims` is `(length, width, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D<T: Real> {
    pub center_bottom: Point3<T>,
    pub heading: T,
    pub dims: Vector3<T>,
    pub axes: Matrix3<T>,
}

impl<T: Real> Box3D<T> {
    /// Box standing on a horizontal plane.
    pub fn upright(center_bottom: Point3<T>, heading: T, dims: Vector3<T>) -> Self {
        let (s, c) = heading.sin_cos();
        let axes = Matrix3::new(c, -s, T::zero(), s, c, T::zero(), T::zero(), T::zero(), T::one());
        Self {
            center_bottom,
            heading,
            dims,
            axes,
        }
    }

    /// Bottom face front-left, front-right, rear-right, rear-left, then the
    /// top face in the same order.
    pub fn corners(&self) -> [Point3<T>; 8] {
        let half: T = lit(0.5);
        let x = self.axes.column(0) * (self.dims.x * half);
        let y = self.axes.column(1) * (self.dims.y * half);
        let z = self.axes.column(2) * self.dims.z;
        let c = self.center_bottom;
        let bottom = [c + x + y, c + x - y, c - x - y, c - x + y];
        let mut out = [c; 8];
        for (i, b) in bottom.iter().enumerate() {
            out[i] = *b;
            out[i + 4] = b + z;
        }
        out
    }

    pub fn image_corners(&self, camera: &CameraModel<T>) -> [Option<Point2<T>>; 8] {
        self.corners().map(|p| camera.project(&p))
    }

    /// World point to box coordinates (origin at the bottom centre).
    pub fn to_local(&self, p: &Point3<T>) -> Vector3<T> {
        self.axes.transpose() * (p - self.center_bottom)
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        let l = self.to_local(p);
        let half: T = lit(0.5);
        l.x.abs() <= self.dims.x * half && l.y.abs() <= self.dims.y * half && l.z >= T::zero() && l.z <= self.dims.z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxConfig {
    pub min_mask_px: f64,
    /// The view is degenerate when the vehicle axis points within this angle
    /// of the camera (deg).
    pub degenerate_view_deg: f64,
}

impl Default for BoxConfig {
    fn default() -> Self {
        Self {
            min_mask_px: 50.0,
            degenerate_view_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxEstimate<T: Real> {
    pub bbox: Box3D<T>,
    /// Dimensions before clamping to the type range.
    pub raw_dims: Option<Vector3<T>>,
    /// The tangent construction was not usable; prior dims were placed at
    /// the lowest mask point.
    pub degenerate: bool,
}

/// Lines through `vp` touching the convex polygon `hull`, oriented so the
/// polygon lies on the non-positive side. Returns fewer than two lines when
/// `vp` is inside or on the polygon.
pub fn tangent_lines<T: Real>(hull: &[Point2<T>], vp: &Vector3<T>) -> Vec<Vector3<T>> {
    let scale = hull
        .iter()
        .fold(T::one(), |m, p| m.max(p.x.abs()).max(p.y.abs()));
    let tol = scale * T::default_epsilon().sqrt() * lit(1e-2);
    let mut out: Vec<Vector3<T>> = Vec::new();
    for p in hull {
        let mut l = vp.cross(&Vector3::new(p.x, p.y, T::one()));
        let ab = (l.x * l.x + l.y * l.y).sqrt();
        if !(ab > T::default_epsilon() * vp.norm()) {
            continue;
        }
        l /= ab;
        let (mut lo, mut hi) = (T::zero(), T::zero());
        for q in hull {
            let s = l.x * q.x + l.y * q.y + l.z;
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if hi <= tol {
        } else if lo >= -tol {
            l = -l;
        } else {
            continue;
        }
        let dup = out
            .iter()
            .any(|e| (e.x * l.y - e.y * l.x).abs() < lit(1e-9) && e.x * l.x + e.y * l.y > T::zero());
        if !dup {
            out.push(l);
        }
    }
    out
}

fn solve_lsq<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Option<(DVector<T>, T)> {
    let svd = a.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > T::zero()) {
        return None;
    }
    let x = svd.solve(b, smax * T::default_epsilon()).ok()?;
    Some((x, smin / smax))
}

fn fallback<T: Real>(
    contour: &[Point2<T>],
    vps: &VanishingTriple<T>,
    t: &GroundTransform<T>,
    camera: &CameraModel<T>,
    range: &DimensionRange<T>,
    raw_dims: Option<Vector3<T>>,
) -> Result<BoxEstimate<T>, GeomError> {
    let low = contour
        .iter()
        .max_by(|a, b| a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(GeomError::MaskTooSmall { area: 0.0 })?;
    let g = t.image_to_ground(low)?;
    let x = vps.axes.column(0).into_owned();
    let away = if (g - camera.center()).dot(&x) >= T::zero() {
        T::one()
    } else {
        -T::one()
    };
    let dims = range.default;
    let center = g + x * (away * dims.x * lit(0.5));
    Ok(BoxEstimate {
        bbox: Box3D {
            center_bottom: center,
            heading: vps.heading,
            dims,
            axes: vps.axes,
        },
        raw_dims,
        degenerate: true,
    })
}

/// Tangent-line 3D box from a silhouette.
///
/// Each tangent line from a vanishing point back-projects to a plane that
/// supports the box along an edge parallel to that axis. Writing the box
/// support function for all six planes gives a linear system in the bottom
/// centre offset and the three dimensions, solved in the least-squares
/// sense. Dimensions are then clamped to the type range and the centre
/// re-fitted with the clamped dimensions.
pub fn box3d_from_mask<T: Real>(
    contour: &[Point2<T>],
    vps: &VanishingTriple<T>,
    t: &GroundTransform<T>,
    camera: &CameraModel<T>,
    range: &DimensionRange<T>,
    cfg: &BoxConfig,
) -> Result<BoxEstimate<T>, GeomError> {
    let area = polygon_area(contour);
    if area < lit(cfg.min_mask_px) {
        return Err(GeomError::MaskTooSmall {
            area: crate::scalar::to_f64(area),
        });
    }
    let hull = convex_hull(contour);
    let rect = Rect::bounding(&hull).ok_or(GeomError::MaskTooSmall { area: 0.0 })?;
    let anchor = Point2::new(rect.center().x, rect.max.y);
    let g0 = t.image_to_ground(&anchor)?;
    let (x, y, z) = (
        vps.axes.column(0).into_owned(),
        vps.axes.column(1).into_owned(),
        vps.axes.column(2).into_owned(),
    );

    let to_cam = camera.center() - g0;
    let horiz = to_cam - z * to_cam.dot(&z);
    let hn = horiz.norm();
    let limit = radians::<T>(cfg.degenerate_view_deg).sin();
    if hn > T::zero() && x.cross(&horiz).dot(&z).abs() / hn < limit {
        return fallback(contour, vps, t, camera, range, None);
    }

    let mut rows: Vec<[T; 5]> = Vec::with_capacity(6);
    let mut rhs: Vec<T> = Vec::with_capacity(6);
    for vp in [&vps.vp_x, &vps.vp_y, &vps.vp_z] {
        let lines = tangent_lines(&hull, vp);
        if lines.len() != 2 {
            return fallback(contour, vps, t, camera, range, None);
        }
        for l in lines {
            let plane = camera.back_project_line(&l);
            let n = plane.xyz();
            let s = n.norm();
            let (n, d) = (n / s, plane.w / s);
            let (nx, ny, nz) = (n.dot(&x), n.dot(&y), n.dot(&z));
            rows.push([nx, ny, nx.abs() * lit(0.5), ny.abs() * lit(0.5), nz.max(T::zero())]);
            rhs.push(-d - n.dot(&g0.coords));
        }
    }
    let a = DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    let Some((sol, cond)) = solve_lsq(&a, &b) else {
        return fallback(contour, vps, t, camera, range, None);
    };
    let raw = Vector3::new(sol[2], sol[3], sol[4]);
    if cond < lit(1e-7) || raw.iter().any(|v| !(*v > T::zero())) {
        return fallback(contour, vps, t, camera, range, Some(raw));
    }
    let dims = range.clamp(&raw);
    let (da, db) = if dims == raw {
        (sol[0], sol[1])
    } else {
        let fixed = a.columns(2, 3) * DVector::from_column_slice(dims.as_slice());
        let a2 = a.columns(0, 2).into_owned();
        match solve_lsq(&a2, &(&b - fixed)) {
            Some((s2, _)) => (s2[0], s2[1]),
            None => (sol[0], sol[1]),
        }
    };
    let mut center = g0 + x * da + y * db;
    if let GroundTransform::Lut(_) = t {
        if let Some(px) = camera.project(&center) {
            if let Ok(g) = t.image_to_ground(&px) {
                center = g;
            }
        }
    }
    Ok(BoxEstimate {
        bbox: Box3D {
            center_bottom: center,
            heading: vps.heading,
            dims,
            axes: vps.axes,
        },
        raw_dims: Some(raw),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::Intrinsics;
    use crate::geom::orthogonal_vps;
    use crate::geom::polygon::point_in_polygon;
    use crate::vehicle::{TypeDimensionPrior, VehicleType};

    fn camera() -> CameraModel<f64> {
        CameraModel::look_from(
            &Intrinsics::centered(1200.0, (1280, 720)),
            Point3::new(0.0, 0.0, 9.0),
            0.0,
            0.2,
            0.0,
        )
        .unwrap()
    }

    fn silhouette(cam: &CameraModel<f64>, b: &Box3D<f64>) -> Vec<Point2<f64>> {
        let pts: Vec<_> = b.corners().iter().map(|p| cam.project(p).unwrap()).collect();
        convex_hull(&pts)
    }

    fn estimate(cam: &CameraModel<f64>, truth: &Box3D<f64>) -> BoxEstimate<f64> {
        let t = GroundTransform::from_camera(cam).unwrap();
        let contour = silhouette(cam, truth);
        let loc = Rect::bounding(&contour).unwrap().center();
        let vps = orthogonal_vps(&loc, truth.heading, &t, cam).unwrap();
        let range = TypeDimensionPrior::builtin().range(VehicleType::Sedan);
        box3d_from_mask(&contour, &vps, &t, cam, &range, &BoxConfig::default()).unwrap()
    }

    #[test]
    fn oblique_cuboid_at_forty_metres() {
        let cam = camera();
        let truth = Box3D::upright(Point3::new(40.0, 6.0, 0.0), 0.6, Vector3::new(4.5, 1.8, 1.5));
        let est = estimate(&cam, &truth);
        assert!(!est.degenerate);
        for i in 0..3 {
            assert!((est.bbox.dims[i] - truth.dims[i]).abs() / truth.dims[i] < 1e-6);
        }
        assert!((est.bbox.center_bottom - truth.center_bottom).norm() < 1e-6);
    }

    #[test]
    fn reprojected_box_contains_contour() {
        let cam = camera();
        let truth = Box3D::upright(Point3::new(25.0, -4.0, 0.0), 2.2, Vector3::new(4.5, 1.8, 1.5));
        let est = estimate(&cam, &truth);
        let img: Vec<_> = est.bbox.image_corners(&cam).iter().map(|p| p.unwrap()).collect();
        let hull = convex_hull(&img);
        let grown: Vec<_> = hull
            .iter()
            .map(|p| {
                let c = Rect::bounding(&hull).unwrap().center();
                c + (p - c) * (1.0 + 1e-6)
            })
            .collect();
        for p in silhouette(&cam, &truth) {
            assert!(point_in_polygon(&grown, &p));
        }
    }

    #[test]
    fn dims_clamped_with_raw_kept() {
        let cam = camera();
        let truth = Box3D::upright(Point3::new(30.0, 5.0, 0.0), 0.9, Vector3::new(7.0, 1.8, 1.5));
        let est = estimate(&cam, &truth);
        assert!((est.raw_dims.unwrap().x - 7.0).abs() < 1e-6);
        assert_eq!(est.bbox.dims.x, 5.4);
    }

    #[test]
    fn view_along_axis_falls_back() {
        let cam = camera();
        let truth = Box3D::upright(Point3::new(40.0, 0.0, 0.0), std::f64::consts::PI, Vector3::new(4.5, 1.8, 1.5));
        let est = estimate(&cam, &truth);
        assert!(est.degenerate);
        assert_eq!(est.bbox.dims, Vector3::new(4.8, 1.85, 1.45));
    }

    #[test]
    fn tiny_mask_rejected() {
        let cam = camera();
        let t = GroundTransform::from_camera(&cam).unwrap();
        let contour = [Point2::new(600.0, 500.0), Point2::new(603.0, 500.0), Point2::new(603.0, 503.0)];
        let vps = orthogonal_vps(&contour[0], 0.0, &t, &cam).unwrap();
        let range = TypeDimensionPrior::builtin().range(VehicleType::Sedan);
        assert!(matches!(
            box3d_from_mask(&contour, &vps, &t, &cam, &range, &BoxConfig::default()),
            Err(GeomError::MaskTooSmall { .. })
        ));
    }

    #[test]
    fn vp_inside_polygon_has_no_tangent() {
        let sq = [Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(2.0, 2.0), Point2::new(0.0, 2.0)];
        assert!(tangent_lines(&sq, &Vector3::new(1.0, 1.0, 1.0)).is_empty());
        assert_eq!(tangent_lines(&sq, &Vector3::new(5.0, 1.0, 1.0)).len(), 2);
        assert_eq!(tangent_lines(&sq, &Vector3::new(1.0, 0.0, 0.0)).len(), 2);
    }
}
