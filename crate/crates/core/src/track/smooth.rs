use nalgebra::Vector3;

use crate::geom::wrap_angle;
use crate::scalar::{from_usize, Real};
use crate::vehicle::DimensionRange;

/// Running average of heading and box dimensions with weight `1/n` on the
/// newest sample. Headings are averaged on the circle; dimensions are
/// clamped to the type range before averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSmoother<T: Real> {
    n: usize,
    heading: Option<T>,
    dims: Option<Vector3<T>>,
}

/// `a - b` wrapped to `(-π, π]`.
pub fn angle_diff<T: Real>(a: T, b: T) -> T {
    let d = wrap_angle(a - b);
    if d > T::pi() {
        d - T::two_pi()
    } else {
        d
    }
}

impl<T: Real> PoseSmoother<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n: n.max(1),
            heading: None,
            dims: None,
        }
    }

    fn alpha(&self) -> T {
        T::one() / from_usize::<T>(self.n)
    }

    pub fn heading(&self) -> Option<T> {
        self.heading
    }

    pub fn dims(&self) -> Option<Vector3<T>> {
        self.dims
    }

    pub fn push_heading(&mut self, h: T) -> T {
        let next = match self.heading {
            None => wrap_angle(h),
            Some(cur) => wrap_angle(cur + angle_diff(h, cur) * self.alpha()),
        };
        self.heading = Some(next);
        next
    }

    pub fn push_dims(&mut self, dims: &Vector3<T>, range: &DimensionRange<T>) -> Vector3<T> {
        let d = range.clamp(dims);
        let next = match self.dims {
            None => d,
            Some(cur) => range.clamp(&(cur + (d - cur) * self.alpha())),
        };
        self.dims = Some(next);
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{TypeDimensionPrior, VehicleType};

    #[test]
    fn constant_heading_is_fixed_point() {
        let mut s = PoseSmoother::new(10);
        for _ in 0..20 {
            assert_eq!(s.push_heading(1.25), 1.25);
        }
    }

    #[test]
    fn heading_wraps_around_zero() {
        let mut s = PoseSmoother::new(10);
        for i in 0..50 {
            let deg: f64 = if i % 2 == 0 { 359.0 } else { 1.0 };
            s.push_heading(deg.to_radians());
        }
        let h = s.heading().unwrap();
        assert!(angle_diff(h, 0.0).abs() < 1f64.to_radians());
    }

    #[test]
    fn outlier_moves_dims_less_than_its_share() {
        let range: DimensionRange<f64> = TypeDimensionPrior::builtin().range(VehicleType::Sedan);
        let base = Vector3::new(4.6, 1.8, 1.45);
        let mut s = PoseSmoother::new(10);
        for _ in 0..10 {
            s.push_dims(&base, &range);
        }
        let after = s.push_dims(&(base * 1.5), &range);
        for i in 0..3 {
            assert!((after[i] - base[i]).abs() / base[i] < 0.5 / 10.0);
        }
    }
}
