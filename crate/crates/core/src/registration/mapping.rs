use nalgebra::Point2;

use super::{Matching, PointIndex};
use crate::error::{Error, Result};
use crate::model::contour::first_self_intersection;
use crate::model::Contour;

/// Mean nearest-neighbour distance among the samples.
fn sample_spacing(points: &[Point2<f64>], index: &PointIndex) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let total: f64 = points
        .iter()
        .map(|p| {
            let nn = index.nearest_n(p, 2);
            (points[nn[1]] - p).norm()
        })
        .sum();
    total / points.len() as f64
}

/// Removes crossings by 2-opt reversals; spikes folding back onto the previous
/// edge are dropped.
fn untangle(mut pts: Vec<Point2<f64>>) -> Vec<Point2<f64>> {
    let limit = 4 * pts.len() * pts.len() + 16;
    for _ in 0..limit {
        if pts.len() < 4 {
            break;
        }
        let n = pts.len();
        let Some((a, b)) = first_self_intersection(&pts) else {
            break;
        };
        if b == a + 1 {
            pts.remove(b);
        } else if a == 0 && b == n - 1 {
            pts.remove(0);
        } else {
            pts[a + 1..=b].reverse();
        }
        pts.dedup();
    }
    pts
}

/// Carries an ultrasound-slice contour into the MRI slice.
///
/// The contour is densified to about the sample spacing; each point is
/// replaced by the matched MRI partner of its nearest ultrasound sample. The
/// result is deduplicated and untangled into a simple polygon carrying the
/// original label and the MRI slice position.
pub fn map_contour(matching: &Matching, contour: &Contour) -> Result<Contour> {
    if matching.pairs.is_empty() {
        return Err(Error::arg("matching is empty"));
    }
    if matching.pairs.len() != matching.u_points.len() {
        return Err(Error::arg("matching does not cover the ultrasound samples"));
    }
    let index = PointIndex::new(&matching.u_points);
    let h = sample_spacing(&matching.u_points, &index);
    let dense = if h > 0.0 {
        contour.densified(0.5 * h)
    } else {
        contour.points().to_vec()
    };
    let mut partners: Vec<usize> = dense.iter().map(|p| index.nearest(p).0).collect();
    partners.dedup();
    while partners.len() > 1 && partners.first() == partners.last() {
        partners.pop();
    }
    // A partner revisited later closes a loop; keep only its first visit.
    let mut seen = vec![false; matching.u_points.len()];
    partners.retain(|&i| !std::mem::replace(&mut seen[i], true));
    let pts: Vec<Point2<f64>> = partners.iter().map(|&i| matching.partner(i)).collect();
    let pts = untangle(pts);
    Contour::new(pts, matching.v_slice_z, contour.label())
}
