use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// A fiber tract: an ordered 3D polyline in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Streamline {
    points: Vec<Point3<f64>>,
    seed: u64,
}

impl Streamline {
    pub fn new(points: Vec<Point3<f64>>, seed: u64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::arg(format!(
                "streamline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::arg("streamline has non-finite coordinates"));
        }
        Ok(Self { points, seed })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Polyline arc length in mm.
    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }

    /// End-to-end vector.
    pub fn chord(&self) -> Vector3<f64> {
        self.points[self.points.len() - 1] - self.points[0]
    }

    pub fn map_points(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Streamline {
        Streamline {
            points: self.points.iter().map(f).collect(),
            seed: self.seed,
        }
    }
}

pub(crate) fn polyline_length(points: &[Point3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// `m >= 2` points at equal arc-length spacing along a polyline.
pub(crate) fn resample_polyline(points: &[Point3<f64>], m: usize) -> Vec<Point3<f64>> {
    debug_assert!(m >= 2 && points.len() >= 2);
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(m);
    let mut seg = 0usize;
    for k in 0..m {
        let s = total * k as f64 / (m - 1) as f64;
        while seg + 2 < points.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn needs_two_points() {
        assert!(Streamline::new(vec![Point3::origin()], 0).is_err());
    }

    #[test]
    fn resample_preserves_endpoints_and_spacing() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(3.0, 4.0, 0.0),
        ];
        let r = resample_polyline(&pts, 8);
        assert_eq!(r[0], pts[0]);
        assert!((r[7] - pts[2]).norm() < 1e-12);
        assert!((polyline_length(&r) - 7.0).abs() < 1e-9);
    }
}
