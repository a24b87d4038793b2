use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::streamline::resample_polyline;
use crate::model::Streamline;

/// Points per streamline used by the distance.
pub const SAMPLING_POINTS: usize = 16;

struct Resampled {
    pts: Vec<Point3<f64>>,
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Resampled {
    fn new(s: &Streamline) -> Self {
        let pts = resample_polyline(s.points(), SAMPLING_POINTS);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &pts {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Self { pts, lo, hi }
    }

    /// Separation of the bounding boxes, a lower bound of the distance.
    fn gap(&self, o: &Resampled) -> f64 {
        (0..3)
            .map(|a| (self.lo[a] - o.hi[a]).max(o.lo[a] - self.hi[a]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn mean_closest(&self, o: &Resampled) -> f64 {
        self.pts
            .iter()
            .map(|p| {
                o.pts
                    .iter()
                    .map(|q| (p - q).norm_squared())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum::<f64>()
            / self.pts.len() as f64
    }

    fn distance(&self, o: &Resampled) -> f64 {
        0.5 * (self.mean_closest(o) + o.mean_closest(self))
    }
}

/// Symmetric mean closest-point distance between two streamlines, each
/// resampled to [`SAMPLING_POINTS`] equally spaced points.
pub fn streamline_distance(a: &Streamline, b: &Streamline) -> f64 {
    Resampled::new(a).distance(&Resampled::new(b))
}

/// Greedy max-min subset of `target` streamlines.
///
/// The first pick is the track passing closest to `reference` (the mean of all
/// track points when absent). Ties go to the lowest index. Selected tracks are
/// returned in pick order; when `target` equals the input size, the input is
/// returned unchanged.
pub fn farthest_streamline_sample(
    tracks: &[Streamline],
    target: usize,
    reference: Option<Point3<f64>>,
) -> Result<Vec<Streamline>> {
    if target > tracks.len() {
        return Err(Error::arg(format!(
            "requested {target} streamlines from {} candidates",
            tracks.len()
        )));
    }
    if target == tracks.len() {
        return Ok(tracks.to_vec());
    }
    if target == 0 {
        return Ok(Vec::new());
    }
    let res: Vec<Resampled> = tracks.par_iter().map(Resampled::new).collect();
    let reference = reference.unwrap_or_else(|| {
        let (sum, n) = tracks
            .iter()
            .flat_map(|t| t.points())
            .fold((nalgebra::Vector3::zeros(), 0usize), |(s, n), p| (s + p.coords, n + 1));
        Point3::from(sum / n as f64)
    });
    let first = res
        .iter()
        .map(|r| {
            r.pts
                .iter()
                .map(|p| (p - reference).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .enumerate()
        .fold((usize::MAX, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
        .0;

    let mut picked = vec![first];
    let mut mind: Vec<f64> = res.par_iter().map(|r| r.distance(&res[first])).collect();
    mind[first] = 0.0;
    while picked.len() < target {
        let next = mind
            .par_iter()
            .enumerate()
            .map(|(i, &d)| (d, i))
            .reduce(
                || (f64::NEG_INFINITY, usize::MAX),
                |a, b| if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) { a } else { b },
            )
            .1;
        picked.push(next);
        let q = &res[next];
        mind.par_iter_mut().zip(res.par_iter()).for_each(|(m, r)| {
            if *m > 0.0 && r.gap(q) < *m {
                *m = m.min(r.distance(q));
            }
        });
        mind[next] = 0.0;
    }
    Ok(picked.into_iter().map(|i| tracks[i].clone()).collect())
}
