use nalgebra::{DMatrix, DVector, Point3};
use rayon::prelude::*;

use super::TrackParams;
use crate::model::streamline::polyline_length;
use crate::model::Streamline;

struct PolyCurve {
    coeffs: [DVector<f64>; 3],
}

impl PolyCurve {
    /// Least-squares polynomial of `order` per coordinate over normalized arc length.
    fn fit(points: &[Point3<f64>], order: usize) -> Option<Self> {
        let n = points.len();
        let total = polyline_length(points);
        if total <= 0.0 {
            return None;
        }
        let mut t = Vec::with_capacity(n);
        t.push(0.0);
        for w in points.windows(2) {
            t.push(t.last().unwrap() + (w[1] - w[0]).norm() / total);
        }
        let deg = order.min(n - 1);
        let v = DMatrix::from_fn(n, deg + 1, |r, c| t[r].powi(c as i32));
        let svd = v.svd(true, true);
        let solve = |axis: usize| {
            let y = DVector::from_fn(n, |r, _| points[r][axis]);
            svd.solve(&y, 1e-12).ok()
        };
        Some(Self {
            coeffs: [solve(0)?, solve(1)?, solve(2)?],
        })
    }

    fn eval(&self, t: f64) -> Point3<f64> {
        let horner = |c: &DVector<f64>| c.iter().rev().fold(0.0, |acc, &a| acc * t + a);
        Point3::new(horner(&self.coeffs[0]), horner(&self.coeffs[1]), horner(&self.coeffs[2]))
    }
}

fn smooth_one(s: &Streamline, p: &TrackParams) -> Option<Streamline> {
    let curve = PolyCurve::fit(s.points(), p.poly_order)?;
    // Dense arc-length table of the fitted curve.
    let rough = (s.length() / p.step).ceil() as usize + 1;
    let m = 32 * rough;
    let ts: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
    let pts: Vec<Point3<f64>> = ts.iter().map(|&t| curve.eval(t)).collect();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let segments = ((total / p.step).round() as usize).max(1);
    let mut out = Vec::with_capacity(segments + 1);
    let mut seg = 0usize;
    for k in 0..=segments {
        let target = total * k as f64 / segments as f64;
        while seg + 1 < m && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 {
            ((target - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(curve.eval(ts[seg] + f * (ts[seg + 1] - ts[seg])));
    }
    Streamline::new(out, s.seed()).ok()
}

/// Drops streamlines shorter than `min_length` and replaces the rest by a
/// per-coordinate polynomial fit resampled at `step` spacing.
pub fn filter_smooth(tracks: &[Streamline], p: &TrackParams) -> Vec<Streamline> {
    tracks
        .par_iter()
        .filter(|s| s.length() >= p.min_length)
        .filter_map(|s| smooth_one(s, p))
        .collect()
}
