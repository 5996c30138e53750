use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location in projected planar coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub(crate) fn sub(self, o: Point2D) -> Point2D {
        Point2D::new(self.x - o.x, self.y - o.y)
    }
}

#[inline]
pub(crate) fn cross(a: Point2D, b: Point2D) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
#[inline]
pub(crate) fn orient(a: Point2D, b: Point2D, c: Point2D) -> f64 {
    cross(b.sub(a), c.sub(a))
}

pub(crate) fn triangle_area(a: Point2D, b: Point2D, c: Point2D) -> f64 {
    0.5 * orient(a, b, c).abs()
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Point2D, a: Point2D, b: Point2D) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2;
    let t = t.clamp(0.0, 1.0);
    p.dist(Point2D::new(a.x + t * ab.x, a.y + t * ab.y))
}

fn on_segment(p: Point2D, a: Point2D, b: Point2D) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub(crate) fn segments_intersect(p1: Point2D, p2: Point2D, q1: Point2D, q2: Point2D) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

/// A simple polygon stored as an open ring (the closing edge is implied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub ring: Vec<Point2D>,
}

impl Polygon {
    /// Builds a polygon from a ring, dropping a repeated closing vertex if present.
    pub fn new(mut ring: Vec<Point2D>) -> Self {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        Self { ring }
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![
            Point2D::new(x0, y0),
            Point2D::new(x1, y0),
            Point2D::new(x1, y1),
            Point2D::new(x0, y1),
        ])
    }

    pub fn unit_square() -> Self {
        Self::rectangle(0.0, 0.0, 1.0, 1.0)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2D, Point2D)> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.edges() {
            acc += cross(a, b);
        }
        0.5 * acc
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point2D {
        let a = self.signed_area();
        if a == 0.0 {
            let n = self.ring.len().max(1) as f64;
            let (sx, sy) = self
                .ring
                .iter()
                .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
            return Point2D::new(sx / n, sy / n);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let c = cross(p, q);
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        Point2D::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bbox(&self) -> (Point2D, Point2D) {
        let mut lo = Point2D::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.ring {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Largest distance between two ring vertices.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.ring.iter().enumerate() {
            for b in &self.ring[i + 1..] {
                d = d.max(a.dist(*b));
            }
        }
        d
    }

    pub fn boundary_distance(&self, p: Point2D) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Point-in-polygon with points on the boundary counted as inside.
    pub fn contains(&self, p: Point2D) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if orient(a, b, p) == 0.0 && on_segment(p, a, b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True when the two closed polygons share at least one point.
    pub fn intersects(&self, other: &Polygon) -> bool {
        if self.ring.iter().any(|&p| other.contains(p))
            || other.ring.iter().any(|&p| self.contains(p))
        {
            return true;
        }
        self.edges()
            .any(|(a, b)| other.edges().any(|(c, d)| segments_intersect(a, b, c, d)))
    }

    /// Strict interior test with a distance margin from the boundary.
    pub fn contains_with_margin(&self, p: Point2D, margin: f64) -> bool {
        self.contains(p) && self.boundary_distance(p) >= margin
    }

    /// Checks that the ring has at least three finite vertices, nonzero area, and
    /// no pair of non-adjacent edges that touch.
    pub fn validate_simple(&self) -> Result<()> {
        let n = self.ring.len();
        if n < 3 {
            return Err(Error::Geometry(format!(
                "polygon has {n} vertices, need at least 3"
            )));
        }
        if let Some(p) = self.ring.iter().find(|p| !p.is_finite()) {
            return Err(Error::Geometry(format!(
                "non-finite vertex ({}, {})",
                p.x, p.y
            )));
        }
        let area = self.area();
        let (lo, hi) = self.bbox();
        let scale = (hi.x - lo.x).max(hi.y - lo.y);
        if area <= 1e-14 * scale * scale || area == 0.0 {
            return Err(Error::Geometry("polygon has zero area".into()));
        }
        for i in 0..n {
            let (a, b) = (self.ring[i], self.ring[(i + 1) % n]);
            if a == b {
                return Err(Error::Geometry(format!(
                    "repeated vertex at ring position {i}"
                )));
            }
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (c, d) = (self.ring[j], self.ring[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::Geometry(format!(
                        "polygon self-intersects: edge {i} crosses edge {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with counter-clockwise orientation.
    pub fn to_ccw(&self) -> Polygon {
        let mut out = self.clone();
        if out.signed_area() < 0.0 {
            out.ring.reverse();
        }
        out
    }
}
