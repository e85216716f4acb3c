//! 2D primitives in pixel space: points, axis-aligned boxes, convex hulls,
//! polygon areas and Intersection-over-Union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance of the orientation predicate used by the hull.
pub const ORIENTATION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn checked(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(Error::NonFinitePoint { x, y })
        }
    }

    pub fn distance_squared(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Twice the signed area of the triangle `(o, a, b)`; positive when the
/// turn `o -> a -> b` is counter-clockwise.
pub fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Axis-aligned box `(x1, y1)`-`(x2, y2)` with `x1 < x2` and `y1 < y2`.
///
/// Fields are public so callers can build boxes from trusted data; use
/// [`BoundingBox::new`] to validate untrusted coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox {
                x1,
                y1,
                x2,
                y2,
                line: None,
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        box_center(self)
    }

    /// Corners in the order `(x1,y1)`, `(x1,y2)`, `(x2,y1)`, `(x2,y2)`.
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.x1, self.y1),
            Point2::new(self.x1, self.y2),
            Point2::new(self.x2, self.y1),
            Point2::new(self.x2, self.y2),
        ]
    }
}

/// Center of a box: `(x1 + w/2, y1 + h/2)`.
pub fn box_center(b: &BoundingBox) -> Point2 {
    let width = b.x2 - b.x1;
    let height = b.y2 - b.y1;
    Point2::new(b.x1 + width / 2.0, b.y1 + height / 2.0)
}

/// Convex polygon with counter-clockwise vertices. Hulls of fewer than three
/// non-collinear points keep one or two vertices and have zero area.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point2>,
}

impl Polygon {
    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }
}

/// Convex hull by Andrew's monotone chain.
///
/// Duplicate, interior and collinear boundary points are excluded, so the
/// output is canonical: counter-clockwise, starting at the lowest-x
/// (then lowest-y) input point.
pub fn convex_hull(points: &[Point2]) -> Result<Polygon> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.x.is_finite() && p.y.is_finite()))
    {
        return Err(Error::NonFinitePoint { x: p.x, y: p.y });
    }

    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();

    if pts.len() < 3 {
        return Ok(Polygon { vertices: pts });
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    // lower chain
    for &p in &pts {
        while hull.len() >= 2
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= ORIENTATION_EPS
        {
            hull.pop();
        }
        hull.push(p);
    }
    // upper chain
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= ORIENTATION_EPS
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();

    // All points collinear: the chains collapse onto the two extremes.
    if hull.len() < 3 {
        let first = pts[0];
        let last = pts[pts.len() - 1];
        return Ok(Polygon {
            vertices: vec![first, last],
        });
    }
    Ok(Polygon { vertices: hull })
}

/// Shoelace area of a polygon. Degenerate polygons are exactly zero.
pub fn polygon_area(p: &Polygon) -> f64 {
    let v = &p.vertices;
    if v.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..v.len() {
        let a = v[i];
        let b = v[(i + 1) % v.len()];
        twice += a.x * b.y - b.x * a.y;
    }
    (twice / 2.0).abs()
}

/// Intersection-over-Union (Jaccard index) of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
