//! Closed planar contours in slice physical coordinates.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A simple closed polygon on one slice, stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContourRecord", into = "ContourRecord")]
pub struct Contour {
    points: Vec<Point2<f64>>,
    slice_z: f64,
    label: u16,
    closed: bool,
}

/// Wire form of a contour, one JSON object per line in contour files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourRecord {
    pub label: u16,
    pub slice_z: f64,
    #[serde(default = "default_closed")]
    pub closed: bool,
    pub points: Vec<[f64; 2]>,
}

fn default_closed() -> bool {
    true
}

impl TryFrom<ContourRecord> for Contour {
    type Error = Error;

    fn try_from(r: ContourRecord) -> Result<Self> {
        let pts = r.points.iter().map(|p| Point2::new(p[0], p[1])).collect();
        let mut c = Contour::new(pts, r.slice_z, r.label)?;
        c.closed = r.closed;
        Ok(c)
    }
}

impl From<Contour> for ContourRecord {
    fn from(c: Contour) -> Self {
        ContourRecord {
            label: c.label,
            slice_z: c.slice_z,
            closed: c.closed,
            points: c.points.iter().map(|p| [p.x, p.y]).collect(),
        }
    }
}

impl Contour {
    /// Validates and normalizes a polygon: consecutive duplicates are dropped,
    /// orientation is made counter-clockwise, and self-intersections are rejected.
    pub fn new(points: Vec<Point2<f64>>, slice_z: f64, label: u16) -> Result<Self> {
        if !slice_z.is_finite() {
            return Err(Error::InvalidContour("non-finite slice position".into()));
        }
        let mut pts: Vec<Point2<f64>> = Vec::with_capacity(points.len());
        for p in points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::InvalidContour("non-finite contour point".into()));
            }
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        if pts.len() < 3 {
            return Err(Error::InvalidContour(format!(
                "contour needs at least 3 distinct points, got {}",
                pts.len()
            )));
        }
        let area = signed_area(&pts);
        if area == 0.0 || !area.is_finite() {
            return Err(Error::InvalidContour("contour has zero area".into()));
        }
        if let Some((a, b)) = first_self_intersection(&pts) {
            return Err(Error::InvalidContour(format!(
                "contour self-intersects between edges {a} and {b}"
            )));
        }
        if area < 0.0 {
            pts.reverse();
        }
        Ok(Self {
            points: pts,
            slice_z,
            label,
            closed: true,
        })
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn slice_z(&self) -> f64 {
        self.slice_z
    }

    pub fn label(&self) -> u16 {
        self.label
    }

    pub fn closed(&self) -> bool {
        self.closed
    }

    pub fn with_label(mut self, label: u16) -> Self {
        self.label = label;
        self
    }

    pub fn with_slice_z(mut self, z: f64) -> Self {
        self.slice_z = z;
        self
    }

    /// Enclosed area in mm².
    pub fn area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn perimeter(&self) -> f64 {
        edges(&self.points).map(|(a, b)| (b - a).norm()).sum()
    }

    /// Area centroid of the polygon.
    pub fn centroid(&self) -> Point2<f64> {
        let a = self.area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in edges(&self.points) {
            let cross = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        Point2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Point2<f64>, Point2<f64>) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        point_in_polygon(p, &self.points)
    }

    /// `m` points spaced at equal arc length, starting at the first vertex.
    pub fn resample_arc_length(&self, m: usize) -> Vec<Point2<f64>> {
        let perim = self.perimeter();
        let step = perim / m as f64;
        let mut out = Vec::with_capacity(m);
        let n = self.points.len();
        let mut seg = 0usize;
        let mut seg_start = 0.0;
        let mut seg_len = (self.points[1 % n] - self.points[0]).norm();
        for k in 0..m {
            let s = k as f64 * step;
            while seg_start + seg_len < s && seg < n - 1 {
                seg_start += seg_len;
                seg += 1;
                seg_len = (self.points[(seg + 1) % n] - self.points[seg]).norm();
            }
            let a = self.points[seg];
            let b = self.points[(seg + 1) % n];
            let t = if seg_len > 0.0 {
                ((s - seg_start) / seg_len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(a + (b - a) * t);
        }
        out
    }

    /// Vertices with extra points inserted so no edge exceeds `max_len`.
    pub fn densified(&self, max_len: f64) -> Vec<Point2<f64>> {
        let mut out = Vec::new();
        for (a, b) in edges(&self.points) {
            let len = (b - a).norm();
            let pieces = ((len / max_len).ceil() as usize).max(1);
            for k in 0..pieces {
                out.push(a + (b - a) * (k as f64 / pieces as f64));
            }
        }
        out
    }

    /// Applies a planar map to every vertex and re-validates.
    pub fn map_points(&self, f: impl Fn(&Point2<f64>) -> Point2<f64>) -> Result<Contour> {
        let pts = self.points.iter().map(f).collect();
        let mut c = Contour::new(pts, self.slice_z, self.label)?;
        c.closed = self.closed;
        Ok(c)
    }
}

/// Shoelace area of the contour in mm², positive for the stored CCW orientation.
pub fn contour_area(c: &Contour) -> f64 {
    c.area()
}

/// Even-odd containment test; points on an edge count as inside.
pub fn point_in_contour(p: &Point2<f64>, c: &Contour) -> bool {
    c.contains(p)
}

pub(crate) fn edges(pts: &[Point2<f64>]) -> impl Iterator<Item = (Point2<f64>, Point2<f64>)> + '_ {
    let n = pts.len();
    (0..n).map(move |i| (pts[i], pts[(i + 1) % n]))
}

pub fn signed_area(pts: &[Point2<f64>]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    // Shift to the first vertex to limit cancellation for far-from-origin contours.
    let o = pts[0];
    let mut s = 0.0;
    for i in 1..n - 1 {
        let a = pts[i] - o;
        let b = pts[i + 1] - o;
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

pub(crate) fn point_in_polygon(p: &Point2<f64>, pts: &[Point2<f64>]) -> bool {
    let scale = pts
        .iter()
        .map(|q| q.x.abs().max(q.y.abs()))
        .fold(1.0f64, f64::max);
    let eps = 1e-12 * scale;
    let mut inside = false;
    for (a, b) in edges(pts) {
        if distance_to_segment(p, &a, &b) <= eps {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub(crate) fn distance_to_segment(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn orient(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    let ab: Vector2<f64> = b - a;
    let ac: Vector2<f64> = c - a;
    ab.x * ac.y - ab.y * ac.x
}

fn on_segment(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub(crate) fn segments_intersect(
    p1: &Point2<f64>,
    p2: &Point2<f64>,
    q1: &Point2<f64>,
    q2: &Point2<f64>,
) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// First pair of non-adjacent edges that touch or cross, if any.
pub(crate) fn first_self_intersection(pts: &[Point2<f64>]) -> Option<(usize, usize)> {
    let n = pts.len();
    let bbox: Vec<[f64; 4]> = (0..n)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            [a.x.min(b.x), a.y.min(b.y), a.x.max(b.x), a.y.max(b.y)]
        })
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (bi, bj) = (&bbox[i], &bbox[j]);
            if bi[0] > bj[2] || bj[0] > bi[2] || bi[1] > bj[3] || bj[1] > bi[3] {
                continue;
            }
            let (a1, a2) = (pts[i], pts[(i + 1) % n]);
            let (b1, b2) = (pts[j], pts[(j + 1) % n]);
            if adjacent {
                // Adjacent edges share one vertex; they only conflict if they fold back.
                let (shared, other_a, other_b) = if j == i + 1 {
                    (a2, a1, b2)
                } else {
                    (a1, a2, b1)
                };
                if orient(&shared, &other_a, &other_b) == 0.0
                    && (other_a - shared).dot(&(other_b - shared)) > 0.0
                {
                    return Some((i, j));
                }
                continue;
            }
            if segments_intersect(&a1, &a2, &b1, &b2) {
                return Some((i, j));
            }
        }
    }
    None
}
