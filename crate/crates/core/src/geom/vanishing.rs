use nalgebra::{Matrix3, Point2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeomError;
use crate::calib::{CameraModel, GroundTransform};
use crate::scalar::{lit, radians, Real};

/// One tracked image point, previous frame → current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowVector<T: Real> {
    pub prev: Point2<T>,
    pub cur: Point2<T>,
}

impl<T: Real> FlowVector<T> {
    pub fn new(prev: Point2<T>, cur: Point2<T>) -> Self {
        Self { prev, cur }
    }

    pub fn displacement(&self) -> Vector2<T> {
        self.cur - self.prev
    }

    pub fn length(&self) -> T {
        self.displacement().norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub min_vectors: usize,
    /// Median flow length below which the vehicle counts as stopped (px).
    pub min_flow_px: f64,
    pub angular_tol_deg: f64,
    pub max_iterations: usize,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            min_vectors: 8,
            min_flow_px: 0.5,
            angular_tol_deg: 1.5,
            max_iterations: 200,
            min_inlier_ratio: 0.5,
            seed: 0,
        }
    }
}

/// Heading vanishing point on the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct VanishingPoint<T: Real> {
    /// Homogeneous; `w = 1` when finite.
    pub point: Vector3<T>,
    /// Indices into the input flow set.
    pub inliers: Vec<usize>,
    /// Whether the inliers move toward the point (rather than away from it).
    pub toward: bool,
}

impl<T: Real> VanishingPoint<T> {
    pub fn affine(&self) -> Option<Point2<T>> {
        (self.point.z != T::zero()).then(|| Point2::new(self.point.x / self.point.z, self.point.y / self.point.z))
    }
}

/// Image direction from `p` toward the homogeneous point `vp`.
pub fn direction_to<T: Real>(p: &Point2<T>, vp: &Vector3<T>) -> Vector2<T> {
    Vector2::new(vp.x - vp.z * p.x, vp.y - vp.z * p.y)
}

fn normalize_point<T: Real>(v: Vector3<T>) -> Vector3<T> {
    let n = v.norm();
    if v.z.abs() > n * T::default_epsilon() * lit(100.0) {
        v / v.z
    } else {
        Vector3::new(v.x / n, v.y / n, T::zero())
    }
}

/// Points on the horizon as `foot + scale * tan(theta) * dir`, so points at
/// infinity sit at `theta = ±π/2`.
struct HorizonParam<T: Real> {
    foot: Vector2<T>,
    dir: Vector2<T>,
    scale: T,
}

impl<T: Real> HorizonParam<T> {
    fn new(l: &Vector3<T>) -> Option<Self> {
        let ab = (l.x * l.x + l.y * l.y).sqrt();
        if !(ab > T::zero()) {
            return None;
        }
        let (a, b, c) = (l.x / ab, l.y / ab, l.z / ab);
        Some(Self {
            foot: Vector2::new(-a * c, -b * c),
            dir: Vector2::new(-b, a),
            scale: lit(1000.0),
        })
    }

    fn point(&self, theta: T) -> Vector3<T> {
        let (s, c) = theta.sin_cos();
        let xy = self.foot * c + self.dir * (self.scale * s);
        normalize_point(Vector3::new(xy.x, xy.y, c))
    }

    fn project(&self, v: &Vector3<T>) -> Option<T> {
        let num = self.dir.x * v.x + self.dir.y * v.y;
        let den = self.scale * v.z;
        if num.abs() + den.abs() <= v.norm() * T::default_epsilon() * lit(100.0) {
            return None;
        }
        let mut theta = num.atan2(den);
        if theta > T::frac_pi_2() {
            theta -= T::pi();
        } else if theta <= -T::frac_pi_2() {
            theta += T::pi();
        }
        Some(theta)
    }
}

struct Prepared<T: Real> {
    mid: Point2<T>,
    unit: Vector2<T>,
    weight: T,
    line: Vector3<T>,
}

fn sin_angle<T: Real>(f: &Prepared<T>, vp: &Vector3<T>) -> T {
    let d = direction_to(&f.mid, vp);
    let nd = d.norm();
    if nd <= T::default_epsilon() {
        return T::zero();
    }
    (f.unit.perp(&d) / nd).abs()
}

fn score<T: Real>(flows: &[Prepared<T>], vp: &Vector3<T>, tol: T) -> (Vec<usize>, T) {
    let mut inliers = Vec::new();
    let mut cost = T::zero();
    for (i, f) in flows.iter().enumerate() {
        if f.weight <= T::zero() {
            continue;
        }
        let s = sin_angle(f, vp);
        if s <= tol {
            inliers.push(i);
            cost += s * s;
        }
    }
    (inliers, cost)
}

fn better<T: Real>(a: &(Vec<usize>, T), b: &(Vec<usize>, T)) -> bool {
    a.0.len() > b.0.len() || (a.0.len() == b.0.len() && a.1 < b.1)
}

fn golden_min<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, iters: usize) -> T {
    let g: T = lit(0.618_033_988_749_894_8);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// RANSAC estimate of the heading vanishing point on the horizon.
///
/// Candidates are intersections of two flow lines projected onto the
/// horizon; a vector is an inlier when its line passes within
/// `angular_tol_deg` of the candidate. The winner is refined by minimizing
/// the length-weighted squared angular error of its inliers along the
/// horizon.
pub fn ransac_heading_vp<T: Real>(
    flows: &[FlowVector<T>],
    horizon: &Vector3<T>,
    cfg: &RansacConfig,
) -> Result<VanishingPoint<T>, GeomError> {
    let needed = cfg.min_vectors.max(2);
    if flows.len() < needed {
        return Err(GeomError::TooFewVectors {
            needed,
            got: flows.len(),
        });
    }
    let mut lengths: Vec<T> = flows.iter().map(|f| f.length()).collect();
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = lengths[lengths.len() / 2];
    if median < lit(cfg.min_flow_px) {
        return Err(GeomError::InsufficientMotion);
    }
    let param = HorizonParam::new(horizon).ok_or(GeomError::DegenerateHorizon)?;
    let prepared: Vec<Prepared<T>> = flows
        .iter()
        .map(|f| {
            let d = f.displacement();
            let len = d.norm();
            let a = Vector3::new(f.prev.x, f.prev.y, T::one());
            let b = Vector3::new(f.cur.x, f.cur.y, T::one());
            Prepared {
                mid: nalgebra::center(&f.prev, &f.cur),
                unit: if len > T::zero() { d / len } else { d },
                weight: if len > T::default_epsilon() { len } else { T::zero() },
                line: a.cross(&b),
            }
        })
        .collect();
    let tol: T = radians::<T>(cfg.angular_tol_deg).sin();

    let n = prepared.len();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if n * (n - 1) / 2 <= cfg.max_iterations {
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        while pairs.len() < cfg.max_iterations {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                pairs.push((i, j));
            }
        }
    }

    let mut best: Option<(T, (Vec<usize>, T))> = None;
    for (i, j) in pairs {
        let (a, b) = (&prepared[i], &prepared[j]);
        if a.weight <= T::zero() || b.weight <= T::zero() {
            continue;
        }
        let Some(theta) = param.project(&a.line.cross(&b.line)) else {
            continue;
        };
        let s = score(&prepared, &param.point(theta), tol);
        if best.as_ref().is_none_or(|(_, b)| better(&s, b)) {
            best = Some((theta, s));
        }
    }
    let (mut theta, mut result) = best.ok_or(GeomError::RansacFailure { ratio: 0.0 })?;

    let support = result.0.clone();
    let cost = |th: T| -> T {
        let vp = param.point(th);
        support
            .iter()
            .map(|&i| {
                let s = sin_angle(&prepared[i], &vp);
                prepared[i].weight * s * s
            })
            .fold(T::zero(), |acc, v| acc + v)
    };
    let mut width: T = lit(0.02);
    for _ in 0..2 {
        let refined = golden_min(&cost, theta - width, theta + width, 60);
        let s = score(&prepared, &param.point(refined), tol);
        if s.0.len() >= result.0.len() {
            theta = refined;
            result = s;
        }
        width /= lit(20.0);
    }

    let ratio = result.0.len() as f64 / flows.len() as f64;
    if ratio < cfg.min_inlier_ratio {
        return Err(GeomError::RansacFailure { ratio });
    }
    let point = param.point(theta);
    let mut votes = T::zero();
    for &i in &result.0 {
        let d = direction_to(&prepared[i].mid, &point);
        votes += prepared[i].unit.dot(&d).signum();
    }
    Ok(VanishingPoint {
        point,
        inliers: result.0,
        toward: votes >= T::zero(),
    })
}

/// Angle in `[0, 2π)`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut r = a % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    if r >= two_pi {
        r -= two_pi;
    }
    r
}

/// Ground heading (rad, CCW from world x) of the image line from `center`
/// to the vanishing point, signed by the direction of image motion.
pub fn heading_from_vp<T: Real>(
    center: &Point2<T>,
    vp: &VanishingPoint<T>,
    t: &GroundTransform<T>,
) -> Result<T, GeomError> {
    let d = direction_to(center, &vp.point);
    let len = d.norm();
    if !(len > lit(1e-6)) {
        return Err(GeomError::DegenerateBaseline);
    }
    let max_step: T = lit(25.0);
    let step = if vp.point.z > T::zero() {
        (len / lit(2.0)).min(max_step)
    } else {
        max_step
    };
    let q = center + d * (step / len);
    let g0 = t.image_to_ground(center)?;
    let g1 = t.image_to_ground(&q)?;
    let dg = (g1 - g0).xy();
    if !(dg.norm() > lit(1e-9)) {
        return Err(GeomError::DegenerateBaseline);
    }
    let mut h = dg.y.atan2(dg.x);
    if !vp.toward {
        h += T::pi();
    }
    Ok(wrap_angle(h))
}

/// Vanishing points of the vehicle's forward, left and up axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishingTriple<T: Real> {
    pub vp_x: Vector3<T>,
    pub vp_y: Vector3<T>,
    pub vp_z: Vector3<T>,
    /// World directions of the three axes, as columns.
    pub axes: Matrix3<T>,
    pub heading: T,
}

fn surface_normal<T: Real>(t: &GroundTransform<T>, px: &Point2<T>) -> Option<Vector3<T>> {
    match t {
        GroundTransform::Homography(_) => Some(Vector3::z()),
        GroundTransform::Lut(_) => {
            let d: T = lit(4.0);
            let g0 = t.image_to_ground(px).ok()?;
            let g1 = t.image_to_ground(&Point2::new(px.x + d, px.y)).ok()?;
            let g2 = t.image_to_ground(&Point2::new(px.x, px.y + d)).ok()?;
            let n = (g1 - g0).cross(&(g2 - g0));
            let n = if n.z < T::zero() { -n } else { n };
            n.try_normalize(T::default_epsilon())
        }
    }
}

/// Completes the vanishing triple from a heading. The up axis follows the
/// local ground normal, the forward axis is the heading projected onto the
/// ground.
pub fn orthogonal_vps<T: Real>(
    location: &Point2<T>,
    heading: T,
    t: &GroundTransform<T>,
    camera: &CameraModel<T>,
) -> Result<VanishingTriple<T>, GeomError> {
    t.image_to_ground(location)?;
    let up = surface_normal(t, location).unwrap_or_else(Vector3::z);
    let h = Vector3::new(heading.cos(), heading.sin(), T::zero());
    let x = (h - up * h.dot(&up))
        .try_normalize(T::default_epsilon())
        .ok_or(GeomError::DegenerateBaseline)?;
    let y = up.cross(&x);
    Ok(VanishingTriple {
        vp_x: camera.image_of_direction(&x),
        vp_y: camera.image_of_direction(&y),
        vp_z: camera.image_of_direction(&up),
        axes: Matrix3::from_columns(&[x, y, up]),
        heading: wrap_angle(heading),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::Intrinsics;
    use nalgebra::Point3;
    use rand_distr::{Distribution, Normal};

    fn camera() -> CameraModel<f64> {
        CameraModel::look_from(
            &Intrinsics::centered(1000.0, (1280, 720)),
            Point3::new(0.0, 0.0, 10.0),
            0.3,
            0.25,
            0.0,
        )
        .unwrap()
    }

    /// Body points of a vehicle moving along `heading` by `step` metres.
    fn synthetic_flows(cam: &CameraModel<f64>, heading: f64, n: usize, seed: u64) -> Vec<FlowVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Vector3::new(heading.cos(), heading.sin(), 0.0);
        let base = Point3::new(40.0, 8.0, 0.0);
        (0..n)
            .map(|_| {
                let p = base
                    + Vector3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.2..1.4),
                    );
                FlowVector::new(cam.project(&p).unwrap(), cam.project(&(p + d * 0.5)).unwrap())
            })
            .collect()
    }

    #[test]
    fn exact_flows_recover_vp() {
        let cam = camera();
        let horizon = *cam.horizon().unwrap();
        let flows = synthetic_flows(&cam, 0.4, 20, 1);
        let vp = ransac_heading_vp(&flows, &horizon, &RansacConfig::default()).unwrap();
        let truth = cam.image_of_direction(&Vector3::new(0.4f64.cos(), 0.4f64.sin(), 0.0));
        let truth = truth / truth.z;
        assert_eq!(vp.inliers.len(), 20);
        assert!((vp.affine().unwrap() - Point2::new(truth.x, truth.y)).norm() < 1e-6);
        assert!(horizon.dot(&vp.point).abs() < 1e-9);
        assert!(vp.toward);
    }

    #[test]
    fn outliers_do_not_move_vp() {
        let cam = camera();
        let horizon = *cam.horizon().unwrap();
        let mut flows = synthetic_flows(&cam, 2.0, 20, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mid = flows[0].prev;
        for _ in 0..10 {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let p = mid + Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-20.0..20.0));
            flows.push(FlowVector::new(p, p + Vector2::new(a.cos(), a.sin()) * 3.0));
        }
        let vp = ransac_heading_vp(&flows, &horizon, &RansacConfig::default()).unwrap();
        let truth = cam.image_of_direction(&Vector3::new(2.0f64.cos(), 2.0f64.sin(), 0.0));
        let truth = truth / truth.z;
        assert!(vp.inliers.len() >= 20);
        assert!((vp.affine().unwrap() - Point2::new(truth.x, truth.y)).norm() < 1.0);
    }

    #[test]
    fn stopped_vehicle_is_insufficient_motion() {
        let p = Point2::new(100.0, 400.0);
        let flows: Vec<_> = (0..20)
            .map(|i| {
                let q = p + Vector2::new(i as f64, 0.0);
                FlowVector::new(q, q + Vector2::new(0.1, 0.1))
            })
            .collect();
        assert!(matches!(
            ransac_heading_vp(&flows, &Vector3::new(0.0, 1.0, -100.0), &RansacConfig::default()),
            Err(GeomError::InsufficientMotion)
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let cam = camera();
        let horizon = *cam.horizon().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let flows: Vec<_> = synthetic_flows(&cam, 1.0, 60, 3)
            .into_iter()
            .map(|f| FlowVector::new(f.prev, f.cur + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))))
            .collect();
        let a = ransac_heading_vp(&flows, &horizon, &RansacConfig::default()).unwrap();
        let b = ransac_heading_vp(&flows, &horizon, &RansacConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    fn heading_case(heading: f64) -> f64 {
        let cam = camera();
        let t = GroundTransform::from_camera(&cam).unwrap();
        let flows = synthetic_flows(&cam, heading, 20, 5);
        let vp = ransac_heading_vp(&flows, cam.horizon().unwrap(), &RansacConfig::default()).unwrap();
        let center = cam.project(&Point3::new(40.0, 8.0, 0.75)).unwrap();
        heading_from_vp(&center, &vp, &t).unwrap()
    }

    #[test]
    fn heading_east_and_north() {
        let east = heading_case(0.0);
        assert!(east.min(std::f64::consts::TAU - east) < 0.5f64.to_radians());
        let north = heading_case(std::f64::consts::FRAC_PI_2);
        assert!((north - std::f64::consts::FRAC_PI_2).abs() < 0.5f64.to_radians());
        let back = heading_case(3.5);
        assert!((back - 3.5).abs() < 0.5f64.to_radians());
    }

    #[test]
    fn zero_baseline_is_an_error() {
        let cam = camera();
        let t = GroundTransform::from_camera(&cam).unwrap();
        let p = cam.project(&Point3::new(30.0, 5.0, 0.0)).unwrap();
        let vp = VanishingPoint {
            point: Vector3::new(p.x, p.y, 1.0),
            inliers: vec![],
            toward: true,
        };
        assert!(matches!(heading_from_vp(&p, &vp, &t), Err(GeomError::DegenerateBaseline)));
    }

    #[test]
    fn triple_is_orthogonal_and_vp_z_is_vertical() {
        let cam = CameraModel::look_from(
            &Intrinsics::centered(1000.0, (1280, 720)),
            Point3::new(0.0, 0.0, 10.0),
            0.0,
            0.3,
            0.0,
        )
        .unwrap();
        let t = GroundTransform::from_camera(&cam).unwrap();
        let loc = cam.project(&Point3::new(30.0, 2.0, 0.0)).unwrap();
        let tri = orthogonal_vps(&loc, 0.0, &t, &cam).unwrap();
        let dirs: Vec<Vector3<f64>> = [tri.vp_x, tri.vp_y, tri.vp_z]
            .iter()
            .map(|v: &Vector3<f64>| cam.back_project(v).normalize())
            .collect();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let angle = dirs[i].dot(&dirs[j]).abs().asin();
            assert!(angle < 1e-6);
        }
        let vy = cam.image_of_direction(&Vector3::new(0.0, 1.0, 0.0));
        assert!((tri.vp_y - vy).norm() < 1e-9);
        let vz = tri.vp_z / tri.vp_z.z;
        assert!((vz.x - 640.0).abs() < 1e-6);
        assert!(cam.horizon().unwrap().dot(&tri.vp_x).abs() < 1e-9);
    }
}
