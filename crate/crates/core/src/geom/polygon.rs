use nalgebra::Point2;

use crate::scalar::{lit, Real};

/// Axis-aligned image rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T: Real> {
    pub min: Point2<T>,
    pub max: Point2<T>,
}

impl<T: Real> Rect<T> {
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Self {
        Self {
            min: Point2::new(x0.min(x1), y0.min(y1)),
            max: Point2::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn bounding(points: &[Point2<T>]) -> Option<Self> {
        let first = points.first()?;
        let mut r = Self { min: *first, max: *first };
        for p in points {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> T {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> T {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2<T> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn contains(&self, p: &Point2<T>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Grows each side by `(factor - 1) / 2` of the size.
    pub fn scaled(&self, factor: T) -> Self {
        let c = self.center();
        let hw = self.width() * factor / lit(2.0);
        let hh = self.height() * factor / lit(2.0);
        Self::new(c.x - hw, c.y - hh, c.x + hw, c.y + hh)
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.max.x.min(other.max.x) - self.min.x.max(other.min.x);
        let h = self.max.y.min(other.max.y) - self.min.y.max(other.min.y);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= T::zero() {
            T::zero()
        } else {
            inter / union
        }
    }
}

fn cross<T: Real>(o: &Point2<T>, a: &Point2<T>, b: &Point2<T>) -> T {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull, counter-clockwise in a y-up frame, no collinear vertices.
pub fn convex_hull<T: Real>(points: &[Point2<T>]) -> Vec<Point2<T>> {
    let mut pts: Vec<Point2<T>> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<T>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= T::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Unsigned shoelace area.
pub fn polygon_area<T: Real>(poly: &[Point2<T>]) -> T {
    let n = poly.len();
    if n < 3 {
        return T::zero();
    }
    let mut s = T::zero();
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[(i + 1) % n]);
        s += a.x * b.y - b.x * a.y;
    }
    (s / lit(2.0)).abs()
}

/// Even-odd rule.
pub fn point_in_polygon<T: Real>(poly: &[Point2<T>], p: &Point2<T>) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
