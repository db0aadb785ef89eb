//! Normalized direct linear transform for projection matrices and ground
//! homographies.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x4, Matrix4, Point2, Point3, Vector3};

use super::ground::{GroundTransform, PlanarGround};
use super::{CalibError, CameraModel};
use crate::scalar::{from_usize, lit, Real};

/// Image pixel paired with a 3D world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCorrespondence<T: Real> {
    pub image_point: Point2<T>,
    pub world_point: Point3<T>,
}

/// Image pixel paired with a point on the ground plane `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundCorrespondence<T: Real> {
    pub image_point: Point2<T>,
    pub ground_point: Point2<T>,
}

pub const MIN_PROJECTION_POINTS: usize = 6;
pub const MIN_HOMOGRAPHY_POINTS: usize = 4;

struct NullSpace<T: Real> {
    vector: DVector<T>,
    /// second-smallest over largest singular value
    conditioning: T,
}

fn null_space<T: Real>(a: DMatrix<T>) -> Result<NullSpace<T>, CalibError> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.view_mut((0, 0), (a.nrows(), cols)).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| CalibError::DegenerateConfiguration("SVD failed".into()))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].partial_cmp(&s[j]).unwrap_or(std::cmp::Ordering::Equal));
    let smallest = order[0];
    let second = s[order[1]];
    let largest = s[order[s.len() - 1]];
    let conditioning = if largest > T::zero() {
        second / largest
    } else {
        T::zero()
    };
    Ok(NullSpace {
        vector: v_t.row(smallest).transpose(),
        conditioning,
    })
}

fn rank_tolerance<T: Real>() -> T {
    T::default_epsilon().sqrt()
}

fn normalization_2d<T: Real>(points: &[Point2<T>]) -> Matrix3<T> {
    let n = from_usize::<T>(points.len());
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| {
        acc + Vector3::new(p.x, p.y, T::zero())
    }) / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - centroid.x).powi(2) + (p.y - centroid.y).powi(2)).sqrt())
        .fold(T::zero(), |a, b| a + b)
        / n;
    let s = if mean_dist > T::zero() {
        lit::<T>(2f64.sqrt()) / mean_dist
    } else {
        T::one()
    };
    Matrix3::new(
        s,
        T::zero(),
        -s * centroid.x,
        T::zero(),
        s,
        -s * centroid.y,
        T::zero(),
        T::zero(),
        T::one(),
    )
}

fn normalization_3d<T: Real>(points: &[Point3<T>]) -> Matrix4<T> {
    let n = from_usize::<T>(points.len());
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mean_dist = points
        .iter()
        .map(|p| (p.coords - centroid).norm())
        .fold(T::zero(), |a, b| a + b)
        / n;
    let s = if mean_dist > T::zero() {
        lit::<T>(3f64.sqrt()) / mean_dist
    } else {
        T::one()
    };
    let mut m = Matrix4::identity() * s;
    m[(3, 3)] = T::one();
    m[(0, 3)] = -s * centroid.x;
    m[(1, 3)] = -s * centroid.y;
    m[(2, 3)] = -s * centroid.z;
    m
}

/// Ratio of the smallest to the largest eigenvalue of the point scatter.
fn planar_spread<T: Real>(points: &[Point2<T>]) -> T {
    let n = from_usize::<T>(points.len());
    let (sx, sy) = points
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mut c = nalgebra::Matrix2::zeros();
    for p in points {
        let d = nalgebra::Vector2::new(p.x - mx, p.y - my);
        c += d * d.transpose();
    }
    let eig = c.symmetric_eigenvalues();
    let (lo, hi) = if eig[0] < eig[1] {
        (eig[0], eig[1])
    } else {
        (eig[1], eig[0])
    };
    if hi > T::zero() {
        lo / hi
    } else {
        T::zero()
    }
}

fn volume_spread<T: Real>(points: &[Point3<T>]) -> T {
    let n = from_usize::<T>(points.len());
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut c = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        c += d * d.transpose();
    }
    let eig = c.symmetric_eigenvalues();
    let hi = eig.max();
    if hi > T::zero() {
        eig.min() / hi
    } else {
        T::zero()
    }
}

fn check_distinct<T: Real>(image: &[Point2<T>]) -> Result<(), CalibError> {
    for (i, a) in image.iter().enumerate() {
        for b in &image[i + 1..] {
            if a == b {
                return Err(CalibError::DegenerateConfiguration(
                    "duplicate image points".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Estimates the 3×4 projection from at least six non-coplanar world points
/// using the Hartley-normalized DLT.
pub fn estimate_projection<T: Real>(
    correspondences: &[PointCorrespondence<T>],
    image_size: (u32, u32),
) -> Result<CameraModel<T>, CalibError> {
    if correspondences.len() < MIN_PROJECTION_POINTS {
        return Err(CalibError::TooFewPoints {
            needed: MIN_PROJECTION_POINTS,
            got: correspondences.len(),
        });
    }
    let image: Vec<_> = correspondences.iter().map(|c| c.image_point).collect();
    let world: Vec<_> = correspondences.iter().map(|c| c.world_point).collect();
    check_distinct(&image)?;
    let tol = rank_tolerance::<T>();
    if volume_spread(&world) <= tol * tol {
        return Err(CalibError::DegenerateConfiguration(
            "world points are coplanar; use the ground homography path".into(),
        ));
    }

    let t2 = normalization_2d(&image);
    let t3 = normalization_3d(&world);
    let n = correspondences.len();
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, c) in correspondences.iter().enumerate() {
        let x = t2 * Vector3::new(c.image_point.x, c.image_point.y, T::one());
        let (u, v) = (x.x / x.z, x.y / x.z);
        let xw = t3 * c.world_point.to_homogeneous();
        for k in 0..4 {
            a[(2 * i, 4 + k)] = -xw[k];
            a[(2 * i, 8 + k)] = v * xw[k];
            a[(2 * i + 1, k)] = xw[k];
            a[(2 * i + 1, 8 + k)] = -u * xw[k];
        }
    }
    let ns = null_space(a)?;
    if ns.conditioning <= tol {
        return Err(CalibError::DegenerateConfiguration(
            "DLT system is rank deficient".into(),
        ));
    }
    let p_norm = Matrix3x4::from_row_slice(ns.vector.as_slice());
    let t2_inv = t2
        .try_inverse()
        .ok_or_else(|| CalibError::DegenerateConfiguration("normalization".into()))?;
    CameraModel::from_projection(t2_inv * p_norm * t3, image_size)
}

/// Estimates the image→ground homography from at least four non-collinear
/// ground correspondences.
pub fn estimate_homography<T: Real>(
    correspondences: &[GroundCorrespondence<T>],
) -> Result<GroundTransform<T>, CalibError> {
    let h = estimate_image_to_ground(correspondences)?;
    Ok(GroundTransform::Homography(PlanarGround::new(h)?))
}

pub(crate) fn estimate_image_to_ground<T: Real>(
    correspondences: &[GroundCorrespondence<T>],
) -> Result<Matrix3<T>, CalibError> {
    if correspondences.len() < MIN_HOMOGRAPHY_POINTS {
        return Err(CalibError::TooFewPoints {
            needed: MIN_HOMOGRAPHY_POINTS,
            got: correspondences.len(),
        });
    }
    let image: Vec<_> = correspondences.iter().map(|c| c.image_point).collect();
    let ground: Vec<_> = correspondences.iter().map(|c| c.ground_point).collect();
    check_distinct(&image)?;
    let tol = rank_tolerance::<T>();
    if planar_spread(&image) <= tol * tol || planar_spread(&ground) <= tol * tol {
        return Err(CalibError::DegenerateConfiguration(
            "points are collinear".into(),
        ));
    }
    let ti = normalization_2d(&image);
    let tg = normalization_2d(&ground);
    let n = correspondences.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, c) in correspondences.iter().enumerate() {
        let x = ti * Vector3::new(c.image_point.x, c.image_point.y, T::one());
        let g = tg * Vector3::new(c.ground_point.x, c.ground_point.y, T::one());
        let (gx, gy) = (g.x / g.z, g.y / g.z);
        for k in 0..3 {
            a[(2 * i, 3 + k)] = -x[k];
            a[(2 * i, 6 + k)] = gy * x[k];
            a[(2 * i + 1, k)] = x[k];
            a[(2 * i + 1, 6 + k)] = -gx * x[k];
        }
    }
    let ns = null_space(a)?;
    if ns.conditioning <= tol {
        return Err(CalibError::DegenerateConfiguration(
            "homography system is rank deficient".into(),
        ));
    }
    let h_norm = Matrix3::from_row_slice(ns.vector.as_slice());
    let tg_inv = tg
        .try_inverse()
        .ok_or_else(|| CalibError::DegenerateConfiguration("normalization".into()))?;
    let mut h = tg_inv * h_norm * ti;
    // positive projective scale at the calibration points
    let positive = image
        .iter()
        .filter(|p| (h.row(2) * Vector3::new(p.x, p.y, T::one()))[0] > T::zero())
        .count();
    if 2 * positive < image.len() {
        h = -h;
    }
    let scale = h.norm();
    Ok(h / scale)
}

/// Recovers a full camera from a planar calibration, assuming square pixels,
/// zero skew and the principal point at the image centre. The focal length
/// is solved from the orthogonality of the two ground axes.
pub fn camera_from_ground_correspondences<T: Real>(
    correspondences: &[GroundCorrespondence<T>],
    image_size: (u32, u32),
) -> Result<CameraModel<T>, CalibError> {
    let h = estimate_image_to_ground(correspondences)?;
    let g = h
        .try_inverse()
        .ok_or_else(|| CalibError::DegenerateConfiguration("singular homography".into()))?;
    let half = lit::<T>(0.5);
    let (cx, cy) = (
        lit::<T>(image_size.0 as f64) * half,
        lit::<T>(image_size.1 as f64) * half,
    );
    let shift = Matrix3::new(
        T::one(),
        T::zero(),
        -cx,
        T::zero(),
        T::one(),
        -cy,
        T::zero(),
        T::zero(),
        T::one(),
    );
    let a = shift * g;
    let a1 = a[(0, 0)] * a[(0, 1)] + a[(1, 0)] * a[(1, 1)];
    let b1 = a[(2, 0)] * a[(2, 1)];
    let a2 = a[(0, 0)].powi(2) + a[(1, 0)].powi(2) - a[(0, 1)].powi(2) - a[(1, 1)].powi(2);
    let b2 = a[(2, 0)].powi(2) - a[(2, 1)].powi(2);
    let denom = a1 * a1 + a2 * a2;
    let inv_f2 = if denom > T::zero() {
        -(a1 * b1 + a2 * b2) / denom
    } else {
        T::zero()
    };
    if !(inv_f2 > T::zero()) || !inv_f2.is_finite() {
        return Err(CalibError::DegenerateConfiguration(
            "focal length is unobservable from this view".into(),
        ));
    }
    let f = T::one() / inv_f2.sqrt();
    let k_inv = Matrix3::new(
        T::one() / f,
        T::zero(),
        T::zero(),
        T::zero(),
        T::one() / f,
        T::zero(),
        T::zero(),
        T::zero(),
        T::one(),
    );
    let b = k_inv * a;
    let b0: Vector3<T> = b.column(0).into_owned();
    let b1v: Vector3<T> = b.column(1).into_owned();
    let b2v: Vector3<T> = b.column(2).into_owned();
    let mut lambda = lit::<T>(2.0) / (b0.norm() + b1v.norm());
    let probe = correspondences[0].ground_point;
    if (b * Vector3::new(probe.x, probe.y, T::one())).z * lambda < T::zero() {
        lambda = -lambda;
    }
    let r1 = b0 * lambda;
    let r2 = b1v * lambda;
    let r3 = r1.cross(&r2);
    let t = b2v * lambda;
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = approx.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let rotation = u * v_t;
    if rotation.determinant() < T::zero() {
        return Err(CalibError::DegenerateConfiguration(
            "ground frame is left-handed".into(),
        ));
    }
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
    rt.set_column(3, &t);
    let k_full = Matrix3::new(
        f,
        T::zero(),
        cx,
        T::zero(),
        f,
        cy,
        T::zero(),
        T::zero(),
        T::one(),
    );
    let camera = CameraModel::from_projection(k_full * rt, image_size)?;
    if camera.center().z <= T::zero() {
        return Err(CalibError::DegenerateConfiguration(
            "camera below the ground plane; check the ground frame handedness".into(),
        ));
    }
    Ok(camera)
}
