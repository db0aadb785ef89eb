//! Image → ground transforms: a planar homography for flat maps and a
//! per-pixel look-up table for heightfield terrain.

use nalgebra::{Matrix3, Point2, Point3, Vector3};

use super::{CalibError, CameraModel};
use crate::scalar::{from_usize, lit, Real};

/// Pixels closer than this to the horizon (in px) count as above it.
const HORIZON_MARGIN_PX: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTransform<T: Real> {
    Homography(PlanarGround<T>),
    Lut(GroundLut<T>),
}

impl<T: Real> GroundTransform<T> {
    pub fn from_camera(camera: &CameraModel<T>) -> Result<Self, CalibError> {
        Ok(Self::Homography(PlanarGround::from_camera(camera)?))
    }

    /// Horizon line, oriented positive on the visible-ground side.
    pub fn horizon(&self) -> Option<&Vector3<T>> {
        match self {
            Self::Homography(h) => h.horizon.as_ref(),
            Self::Lut(l) => l.horizon.as_ref(),
        }
    }

    /// Signed distance (px) of a pixel below the horizon; positive means
    /// the pixel can see the ground.
    pub fn below_horizon(&self, px: &Point2<T>) -> T {
        match self.horizon() {
            Some(l) => l.x * px.x + l.y * px.y + l.z,
            None => T::max_value().unwrap_or_else(T::one),
        }
    }

    pub fn image_to_ground(&self, px: &Point2<T>) -> Result<Point3<T>, CalibError> {
        if self.below_horizon(px) <= lit(HORIZON_MARGIN_PX) {
            return Err(CalibError::AboveHorizon);
        }
        match self {
            Self::Homography(h) => h.image_to_ground(px),
            Self::Lut(l) => l.image_to_ground(px),
        }
    }
}

/// Flat ground `z = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarGround<T: Real> {
    image_to_ground: Matrix3<T>,
    ground_to_image: Matrix3<T>,
    horizon: Option<Vector3<T>>,
}

impl<T: Real> PlanarGround<T> {
    /// `image_to_ground` must be sign-normalized so visible pixels map with a
    /// positive projective scale.
    pub fn new(image_to_ground: Matrix3<T>) -> Result<Self, CalibError> {
        let ground_to_image = image_to_ground
            .try_inverse()
            .ok_or_else(|| CalibError::DegenerateConfiguration("singular homography".into()))?;
        let row = image_to_ground.row(2);
        let ab = (row[0] * row[0] + row[1] * row[1]).sqrt();
        let horizon = if ab > row.norm() * T::default_epsilon().sqrt() {
            Some(Vector3::new(row[0], row[1], row[2]) / ab)
        } else {
            None
        };
        Ok(Self {
            image_to_ground,
            ground_to_image,
            horizon,
        })
    }

    pub fn from_camera(camera: &CameraModel<T>) -> Result<Self, CalibError> {
        let g = camera.ground_homography();
        let h = g
            .try_inverse()
            .ok_or_else(|| CalibError::DegenerateConfiguration("singular homography".into()))?;
        Self::new(h)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.image_to_ground
    }

    pub fn image_to_ground(&self, px: &Point2<T>) -> Result<Point3<T>, CalibError> {
        let q = self.image_to_ground * Vector3::new(px.x, px.y, T::one());
        if q.z <= T::zero() {
            return Err(CalibError::AboveHorizon);
        }
        Ok(Point3::new(q.x / q.z, q.y / q.z, T::zero()))
    }

    pub fn ground_to_image(&self, p: &Point2<T>) -> Option<Point2<T>> {
        let q = self.ground_to_image * Vector3::new(p.x, p.y, T::one());
        if q.z <= T::zero() {
            return None;
        }
        Some(Point2::new(q.x / q.z, q.y / q.z))
    }
}

/// Regular elevation grid; row `j` holds the samples at `y = origin.y + j * cell`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield<T: Real> {
    origin: Point2<T>,
    cell_size: T,
    nx: usize,
    ny: usize,
    elevations: Vec<T>,
    z_min: T,
    z_max: T,
}

impl<T: Real> Heightfield<T> {
    pub fn new(
        origin: Point2<T>,
        cell_size: T,
        nx: usize,
        ny: usize,
        elevations: Vec<T>,
    ) -> Result<Self, CalibError> {
        if !(cell_size > T::zero()) {
            return Err(CalibError::InvalidHeightfield("cell size must be positive".into()));
        }
        if nx < 2 || ny < 2 {
            return Err(CalibError::InvalidHeightfield("need at least 2x2 samples".into()));
        }
        if elevations.len() != nx * ny {
            return Err(CalibError::InvalidHeightfield(format!(
                "expected {} elevations, got {}",
                nx * ny,
                elevations.len()
            )));
        }
        if elevations.iter().any(|z| !z.is_finite()) {
            return Err(CalibError::InvalidHeightfield("non-finite elevation".into()));
        }
        let z_min = elevations.iter().copied().fold(elevations[0], T::min);
        let z_max = elevations.iter().copied().fold(elevations[0], T::max);
        Ok(Self {
            origin,
            cell_size,
            nx,
            ny,
            elevations,
            z_min,
            z_max,
        })
    }

    /// Constant elevation over a square extent.
    pub fn flat(origin: Point2<T>, cell_size: T, nx: usize, ny: usize, z: T) -> Self {
        Self::new(origin, cell_size, nx, ny, vec![z; nx * ny]).expect("valid flat heightfield")
    }

    pub fn origin(&self) -> Point2<T> {
        self.origin
    }

    pub fn cell_size(&self) -> T {
        self.cell_size
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn elevations(&self) -> &[T] {
        &self.elevations
    }

    fn extent(&self) -> (Point2<T>, Point2<T>) {
        let max = Point2::new(
            self.origin.x + self.cell_size * from_usize(self.nx - 1),
            self.origin.y + self.cell_size * from_usize(self.ny - 1),
        );
        (self.origin, max)
    }

    /// Bilinear elevation, `None` outside the grid.
    pub fn height_at(&self, x: T, y: T) -> Option<T> {
        let gx = (x - self.origin.x) / self.cell_size;
        let gy = (y - self.origin.y) / self.cell_size;
        let last_x = from_usize::<T>(self.nx - 1);
        let last_y = from_usize::<T>(self.ny - 1);
        if !(gx >= T::zero() && gy >= T::zero() && gx <= last_x && gy <= last_y) {
            return None;
        }
        let i = num_traits::ToPrimitive::to_usize(&gx.floor()).unwrap_or(0).min(self.nx - 2);
        let j = num_traits::ToPrimitive::to_usize(&gy.floor()).unwrap_or(0).min(self.ny - 2);
        let fx = gx - from_usize(i);
        let fy = gy - from_usize(j);
        let at = |i: usize, j: usize| self.elevations[j * self.nx + i];
        let top = at(i, j) * (T::one() - fx) + at(i + 1, j) * fx;
        let bottom = at(i, j + 1) * (T::one() - fx) + at(i + 1, j + 1) * fx;
        Some(top * (T::one() - fy) + bottom * fy)
    }

    /// First intersection of the ray `origin + s * dir`, `s >= 0`, with the
    /// surface.
    pub fn intersect_ray(&self, origin: &Point3<T>, dir: &Vector3<T>) -> Option<Point3<T>> {
        let (lo, hi) = self.extent();
        let mut s0 = T::zero();
        let mut s1 = T::max_value()?;
        for (o, d, a, b) in [(origin.x, dir.x, lo.x, hi.x), (origin.y, dir.y, lo.y, hi.y)] {
            if d.abs() <= T::default_epsilon() {
                if o < a || o > b {
                    return None;
                }
            } else {
                let (mut ta, mut tb) = ((a - o) / d, (b - o) / d);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                s0 = s0.max(ta);
                s1 = s1.min(tb);
            }
        }
        if dir.z < T::zero() {
            if origin.z > self.z_max {
                s0 = s0.max((self.z_max - origin.z) / dir.z);
            }
            s1 = s1.min((self.z_min - origin.z) / dir.z);
        } else if origin.z > self.z_max {
            return None;
        }
        if s0 > s1 {
            return None;
        }
        let f = |s: T| -> Option<T> {
            let p = origin + dir * s;
            self.height_at(p.x, p.y).map(|h| p.z - h)
        };
        let f0 = f(s0)?;
        if f0 < T::zero() {
            return None;
        }
        let horizontal = (dir.x * dir.x + dir.y * dir.y).sqrt();
        let step = if horizontal > T::default_epsilon() {
            self.cell_size * lit(0.5) / horizontal
        } else {
            s1 - s0
        };
        let mut a = s0;
        let mut fa = f0;
        while fa > T::zero() && a < s1 {
            let b = (a + step).min(s1);
            let fb = f(b)?;
            if fb <= T::zero() {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..80 {
                    let mid = (lo + hi) * lit(0.5);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    match f(mid) {
                        Some(fm) if fm > T::zero() => lo = mid,
                        Some(_) => hi = mid,
                        None => break,
                    }
                }
                a = hi;
                break;
            }
            if b >= s1 {
                return None;
            }
            a = b;
            fa = fb;
        }
        let p = origin + dir * a;
        let z = self.height_at(p.x, p.y)?;
        Some(Point3::new(p.x, p.y, z))
    }
}

/// Per-pixel ground points; pixel centres sit at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundLut<T: Real> {
    width: usize,
    height: usize,
    points: Vec<Option<Point3<T>>>,
    horizon: Option<Vector3<T>>,
}

impl<T: Real> GroundLut<T> {
    pub fn get(&self, i: usize, j: usize) -> Option<&Point3<T>> {
        if i >= self.width || j >= self.height {
            return None;
        }
        self.points[j * self.width + i].as_ref()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    fn image_to_ground(&self, px: &Point2<T>) -> Result<Point3<T>, CalibError> {
        let last_x = from_usize::<T>(self.width - 1);
        let last_y = from_usize::<T>(self.height - 1);
        if !(px.x >= T::zero() && px.y >= T::zero() && px.x <= last_x && px.y <= last_y) {
            return Err(CalibError::OutsideImage);
        }
        let i = num_traits::ToPrimitive::to_usize(&px.x.floor()).unwrap_or(0);
        let j = num_traits::ToPrimitive::to_usize(&px.y.floor()).unwrap_or(0);
        let fx = px.x - from_usize(i);
        let fy = px.y - from_usize(j);
        let mut acc = Vector3::zeros();
        for (di, wx) in [(0usize, T::one() - fx), (1, fx)] {
            for (dj, wy) in [(0usize, T::one() - fy), (1, fy)] {
                let w = wx * wy;
                if w == T::zero() {
                    continue;
                }
                let p = self.get(i + di, j + dj).ok_or(CalibError::InvalidLutEntry)?;
                acc += p.coords * w;
            }
        }
        Ok(Point3::from(acc))
    }
}

/// Back-projects every pixel onto the heightfield.
pub fn build_ground_lut<T: Real>(
    camera: &CameraModel<T>,
    surface: &Heightfield<T>,
) -> Result<GroundTransform<T>, CalibError> {
    let (w, h) = camera.image_size();
    let (width, height) = (w as usize, h as usize);
    let center = camera.center();
    let horizon = camera.horizon().copied();
    let mut points = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let px = Point2::new(from_usize::<T>(i), from_usize::<T>(j));
            let visible = horizon
                .map(|l| l.x * px.x + l.y * px.y + l.z > lit(HORIZON_MARGIN_PX))
                .unwrap_or(true);
            let hit = if visible {
                let dir = camera.back_project(&Vector3::new(px.x, px.y, T::one()));
                surface.intersect_ray(&center, &dir)
            } else {
                None
            };
            points.push(hit);
        }
    }
    if points.iter().all(Option::is_none) {
        return Err(CalibError::EmptyIntersection);
    }
    Ok(GroundTransform::Lut(GroundLut {
        width,
        height,
        points,
        horizon,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::Intrinsics;
    use approx::assert_relative_eq;

    fn small_camera() -> CameraModel<f64> {
        // 160x90 keeps the per-pixel LUT cheap in tests
        CameraModel::look_from(
            &Intrinsics::centered(130.0, (160, 90)),
            Point3::new(0.0, 0.0, 8.0),
            0.0,
            0.35,
            0.0,
        )
        .unwrap()
    }

    fn surface(z: f64) -> Heightfield<f64> {
        Heightfield::flat(Point2::new(-50.0, -150.0), 1.0, 351, 301, z)
    }

    #[test]
    fn flat_lut_agrees_with_homography() {
        let cam = small_camera();
        let planar = GroundTransform::from_camera(&cam).unwrap();
        let lut = build_ground_lut(&cam, &surface(0.0)).unwrap();
        let GroundTransform::Lut(table) = &lut else {
            unreachable!()
        };
        let mut compared = 0;
        let mut worst: f64 = 0.0;
        for j in 0..90 {
            for i in 0..160 {
                if let Some(p) = table.get(i, j) {
                    let q = planar
                        .image_to_ground(&Point2::new(i as f64, j as f64))
                        .unwrap();
                    worst = worst.max((p - q).norm());
                    compared += 1;
                }
            }
        }
        assert!(compared > 1000);
        assert!(worst < 0.01, "max deviation {worst} m");
    }

    #[test]
    fn constant_offset_surface_points_lie_on_it() {
        let cam = small_camera();
        let lut = build_ground_lut(&cam, &surface(1.25)).unwrap();
        let GroundTransform::Lut(table) = &lut else {
            unreachable!()
        };
        assert!(table.valid_count() > 0);
        for p in table.points.iter().flatten() {
            assert_eq!(p.z, 1.25);
        }
    }

    #[test]
    fn pixel_above_horizon_is_invalid() {
        // horizon near row 18.6
        let cam = CameraModel::look_from(
            &Intrinsics::centered(130.0, (160, 90)),
            Point3::new(0.0, 0.0, 8.0),
            0.0,
            0.2,
            0.0,
        )
        .unwrap();
        let lut = build_ground_lut(&cam, &surface(0.0)).unwrap();
        let GroundTransform::Lut(table) = &lut else {
            unreachable!()
        };
        assert!(table.get(80, 0).is_none());
        assert!(matches!(
            lut.image_to_ground(&Point2::new(80.0, 0.0)),
            Err(CalibError::AboveHorizon)
        ));
    }

    #[test]
    fn lut_interpolates_between_pixels() {
        let cam = small_camera();
        let lut = build_ground_lut(&cam, &surface(0.0)).unwrap();
        let planar = GroundTransform::from_camera(&cam).unwrap();
        let px = Point2::new(80.5, 70.25);
        let a = lut.image_to_ground(&px).unwrap();
        let b = planar.image_to_ground(&px).unwrap();
        assert!((a - b).norm() < 0.01);
    }

    #[test]
    fn homography_round_trip_and_known_point() {
        let cam = small_camera();
        let t = GroundTransform::from_camera(&cam).unwrap();
        let target = Point3::new(3.5, 7.2, 0.0);
        let cam2 = CameraModel::look_from(
            &Intrinsics::centered(1000.0, (1280, 720)),
            Point3::new(-10.0, -20.0, 9.0),
            1.1,
            0.3,
            0.0,
        )
        .unwrap();
        let t2 = GroundTransform::from_camera(&cam2).unwrap();
        let px = cam2.project(&target).unwrap();
        assert_relative_eq!(t2.image_to_ground(&px).unwrap(), target, epsilon = 1e-6);
        let GroundTransform::Homography(h) = &t else {
            unreachable!()
        };
        let g = Point2::new(12.0, -3.0);
        let px = h.ground_to_image(&g).unwrap();
        let back = h.image_to_ground(&px).unwrap();
        assert_relative_eq!(back.xy(), g, epsilon = 1e-9);
    }

    #[test]
    fn pixel_on_horizon_is_rejected() {
        let cam = small_camera();
        let t = GroundTransform::from_camera(&cam).unwrap();
        let l = t.horizon().unwrap();
        let y = -(l.x * 40.0 + l.z) / l.y;
        assert!(matches!(
            t.image_to_ground(&Point2::new(40.0, y)),
            Err(CalibError::AboveHorizon)
        ));
    }

    #[test]
    fn heightfield_validation() {
        assert!(Heightfield::new(Point2::new(0.0, 0.0), 0.0, 2, 2, vec![0.0; 4]).is_err());
        assert!(Heightfield::new(Point2::new(0.0, 0.0), 1.0, 2, 2, vec![0.0; 3]).is_err());
        assert!(Heightfield::new(Point2::new(0.0, 0.0), 1.0, 2, 2, vec![f64::NAN; 4]).is_err());
        let hf = Heightfield::new(Point2::new(0.0, 0.0), 1.0, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_relative_eq!(hf.height_at(0.5, 0.5).unwrap(), 1.5);
        assert!(hf.height_at(1.5, 0.5).is_none());
    }

    #[test]
    fn ray_hits_sloped_surface() {
        // z = 0.1 x plane
        let nx = 101;
        let ny = 11;
        let mut z = Vec::new();
        for _j in 0..ny {
            for i in 0..nx {
                z.push(0.1 * i as f64);
            }
        }
        let hf = Heightfield::new(Point2::new(0.0, -5.0), 1.0, nx, ny, z).unwrap();
        let hit = hf
            .intersect_ray(&Point3::new(0.0, 0.0, 20.0), &Vector3::new(1.0, 0.0, -0.5))
            .unwrap();
        // 20 - 0.5 s = 0.1 s  =>  s = 33.33
        assert_relative_eq!(hit.x, 20.0 / 0.6, epsilon = 1e-9);
        assert_relative_eq!(hit.z, 0.1 * hit.x, epsilon = 1e-12);
    }
}
