use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Vector3, Vector4};

use super::CalibError;
use crate::scalar::{lit, Real};

/// Pinhole camera without lens distortion.
///
/// The projection is stored with its sign fixed so that points in front of
/// the camera have a positive homogeneous `w`, and scaled so that `w` is the
/// depth along the optical axis in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<T: Real> {
    projection: Matrix3x4<T>,
    ground_homography: Matrix3<T>,
    horizon: Option<Vector3<T>>,
    image_size: (u32, u32),
}

impl<T: Real> CameraModel<T> {
    /// Wraps a 3×4 projection matrix (world metres → image pixels).
    pub fn from_projection(p: Matrix3x4<T>, image_size: (u32, u32)) -> Result<Self, CalibError> {
        let svd = p.svd(false, false);
        let s = svd.singular_values;
        let smax = s.max();
        let smin = s.min();
        if !(smax > T::zero()) || smin <= smax * T::default_epsilon() * lit(100.0) {
            return Err(CalibError::DegenerateConfiguration(
                "projection matrix is not rank 3".into(),
            ));
        }
        let m = p.fixed_view::<3, 3>(0, 0).into_owned();
        let det = m.determinant();
        if det == T::zero() {
            return Err(CalibError::DegenerateConfiguration(
                "left 3x3 block of the projection is singular".into(),
            ));
        }
        let row3 = Vector3::new(p[(2, 0)], p[(2, 1)], p[(2, 2)]).norm();
        let mut scale = T::one() / row3;
        if det < T::zero() {
            scale = -scale;
        }
        let projection = p * scale;

        let ground_homography = Matrix3::from_columns(&[
            projection.column(0).into_owned(),
            projection.column(1).into_owned(),
            projection.column(3).into_owned(),
        ]);
        if ground_homography.determinant().abs() <= T::default_epsilon() {
            return Err(CalibError::DegenerateConfiguration(
                "camera centre lies on the ground plane".into(),
            ));
        }
        let horizon = horizon_from(&projection, &ground_homography);
        Ok(Self {
            projection,
            ground_homography,
            horizon,
            image_size,
        })
    }

    /// Builds a camera from intrinsics and a pose.
    ///
    /// `yaw` is the viewing direction on the ground (CCW from +x), `pitch` the
    /// downward tilt of the optical axis and `roll` the rotation about it,
    /// all in radians.
    pub fn look_from(
        intrinsics: &Intrinsics<T>,
        position: Point3<T>,
        yaw: T,
        pitch: T,
        roll: T,
    ) -> Result<Self, CalibError> {
        let rotation = world_to_camera_rotation(yaw, pitch, roll);
        let t = -(rotation * position.coords);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        rt.set_column(3, &t);
        Self::from_projection(intrinsics.matrix() * rt, intrinsics.image_size)
    }

    pub fn projection(&self) -> &Matrix3x4<T> {
        &self.projection
    }

    /// Homography taking ground-plane points `(x, y, 1)` to image pixels.
    pub fn ground_homography(&self) -> &Matrix3<T> {
        &self.ground_homography
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// Horizon line `(a, b, c)` with `a² + b² = 1`, oriented so that visible
    /// ground points evaluate positive. `None` when the camera looks straight
    /// down.
    pub fn horizon(&self) -> Option<&Vector3<T>> {
        self.horizon.as_ref()
    }

    pub fn compute_horizon(&self) -> Result<Vector3<T>, CalibError> {
        self.horizon.ok_or(CalibError::DegenerateHorizon)
    }

    fn m(&self) -> Matrix3<T> {
        self.projection.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Point3<T> {
        let m_inv = self.m().try_inverse().expect("validated at construction");
        Point3::from(-(m_inv * self.projection.column(3)))
    }

    /// Homogeneous image of a world point; `w` is the depth.
    pub fn project_h(&self, p: &Point3<T>) -> Vector3<T> {
        self.projection * Vector4::new(p.x, p.y, p.z, T::one())
    }

    /// Pixel of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Point3<T>) -> Option<Point2<T>> {
        let h = self.project_h(p);
        if h.z <= T::zero() {
            return None;
        }
        Some(Point2::new(h.x / h.z, h.y / h.z))
    }

    pub fn depth(&self, p: &Point3<T>) -> T {
        self.project_h(p).z
    }

    /// Vanishing point (homogeneous) of a world direction.
    pub fn image_of_direction(&self, d: &Vector3<T>) -> Vector3<T> {
        self.m() * d
    }

    /// World direction whose vanishing point is `vp`; also the viewing-ray
    /// direction through a pixel when `vp = (u, v, 1)`.
    pub fn back_project(&self, vp: &Vector3<T>) -> Vector3<T> {
        self.m().try_inverse().expect("validated at construction") * vp
    }

    pub fn ray(&self, px: &Point2<T>) -> (Point3<T>, Vector3<T>) {
        (self.center(), self.back_project(&Vector3::new(px.x, px.y, T::one())))
    }

    /// Homogeneous world plane `(n, d)` back-projected from an image line.
    pub fn back_project_line(&self, line: &Vector3<T>) -> Vector4<T> {
        self.projection.transpose() * line
    }

    pub fn contains_pixel(&self, px: &Point2<T>) -> bool {
        let (w, h) = self.image_size;
        px.x >= T::zero() && px.y >= T::zero() && px.x <= lit(w as f64) && px.y <= lit(h as f64)
    }

    /// Root-mean-square reprojection error over world/image pairs, in pixels.
    pub fn reprojection_rms<'a, I>(&self, pairs: I) -> T
    where
        I: IntoIterator<Item = (&'a Point3<T>, &'a Point2<T>)>,
        T: 'a,
    {
        let mut sum = T::zero();
        let mut n = 0usize;
        for (world, image) in pairs {
            let h = self.project_h(world);
            let du = h.x / h.z - image.x;
            let dv = h.y / h.z - image.y;
            sum += du * du + dv * dv;
            n += 1;
        }
        if n == 0 {
            return T::zero();
        }
        (sum / lit(n as f64)).sqrt()
    }
}

fn horizon_from<T: Real>(p: &Matrix3x4<T>, ground: &Matrix3<T>) -> Option<Vector3<T>> {
    let c0: Vector3<T> = p.column(0).into_owned();
    let c1: Vector3<T> = p.column(1).into_owned();
    let mut line = c0.cross(&c1);
    let ab = (line.x * line.x + line.y * line.y).sqrt();
    if ab <= line.norm() * T::default_epsilon().sqrt() {
        return None;
    }
    if ground.determinant() < T::zero() {
        line = -line;
    }
    Some(line / ab)
}

/// Rotation taking world vectors (x east, y north, z up) into the camera
/// frame (x right, y down, z forward).
pub fn world_to_camera_rotation<T: Real>(yaw: T, pitch: T, roll: T) -> Matrix3<T> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let forward = Vector3::new(cp * cy, cp * sy, -sp);
    let right0 = Vector3::new(sy, -cy, T::zero());
    let down0 = forward.cross(&right0);
    let (sr, cr) = roll.sin_cos();
    let right = right0 * cr + down0 * sr;
    let down = down0 * cr - right0 * sr;
    Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
}

/// Zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T: Real> {
    pub focal_px: T,
    pub principal_point: Point2<T>,
    pub image_size: (u32, u32),
}

impl<T: Real> Intrinsics<T> {
    /// Square pixels with the principal point at the image centre.
    pub fn centered(focal_px: T, image_size: (u32, u32)) -> Self {
        let half = lit::<T>(0.5);
        Self {
            focal_px,
            principal_point: Point2::new(
                lit::<T>(image_size.0 as f64) * half,
                lit::<T>(image_size.1 as f64) * half,
            ),
            image_size,
        }
    }

    pub fn matrix(&self) -> Matrix3<T> {
        Matrix3::new(
            self.focal_px,
            T::zero(),
            self.principal_point.x,
            T::zero(),
            self.focal_px,
            self.principal_point.y,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }
}
