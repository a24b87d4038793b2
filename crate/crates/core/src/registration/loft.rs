use std::collections::BTreeMap;

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::model::contour::first_self_intersection;
use crate::model::raster::fill_polygon;
use crate::model::{Contour, Grid3, LabelVolume};

/// Points per resampled contour.
pub const LOFT_POINTS: usize = 128;

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn natural_spline(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let a = h0;
        let b = 2.0 * (h0 + h1);
        let c = h1;
        let d = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - a * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}

fn spline_eval(x: &[f64], y: &[f64], m: &[f64], t: f64) -> f64 {
    let n = x.len();
    let k = match x.iter().position(|&xi| xi > t) {
        Some(0) => 0,
        Some(p) => p - 1,
        None => n - 2,
    };
    let h = x[k + 1] - x[k];
    let a = (x[k + 1] - t) / h;
    let b = (t - x[k]) / h;
    a * y[k] + b * y[k + 1] + ((a * a * a - a) * m[k] + (b * b * b - b) * m[k + 1]) * h * h / 6.0
}

/// Cyclic shift of `next` that best lines it up with `prev`.
fn best_shift(prev: &[Point2<f64>], next: &[Point2<f64>]) -> usize {
    let m = prev.len();
    (0..m)
        .map(|s| {
            let e: f64 = (0..m).map(|i| (prev[i] - next[(i + s) % m]).norm_squared()).sum();
            (s, e)
        })
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// Interpolating surface through one compartment's slice contours.
struct Loft {
    label: u16,
    z: Vec<f64>,
    /// Per contour point: x and y splines over z.
    xs: Vec<(Vec<f64>, Vec<f64>)>,
    ys: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Loft {
    fn new(label: u16, mut contours: Vec<&Contour>) -> Result<Self> {
        if contours.len() < 2 {
            return Err(Error::arg(format!(
                "compartment {label} has {} slice(s); lofting needs at least 2",
                contours.len()
            )));
        }
        contours.sort_by(|a, b| a.slice_z().total_cmp(&b.slice_z()));
        let z: Vec<f64> = contours.iter().map(|c| c.slice_z()).collect();
        if z.windows(2).any(|w| w[1] - w[0] <= 0.0) {
            return Err(Error::arg(format!(
                "compartment {label} has two contours on one slice"
            )));
        }
        let mut rings: Vec<Vec<Point2<f64>>> = Vec::with_capacity(contours.len());
        for c in &contours {
            let mut ring = c.resample_arc_length(LOFT_POINTS);
            if let Some(prev) = rings.last() {
                let s = best_shift(prev, &ring);
                ring.rotate_left(s);
            }
            rings.push(ring);
        }
        let mut xs = Vec::with_capacity(LOFT_POINTS);
        let mut ys = Vec::with_capacity(LOFT_POINTS);
        for i in 0..LOFT_POINTS {
            let vx: Vec<f64> = rings.iter().map(|r| r[i].x).collect();
            let vy: Vec<f64> = rings.iter().map(|r| r[i].y).collect();
            let mx = natural_spline(&z, &vx);
            let my = natural_spline(&z, &vy);
            xs.push((vx, mx));
            ys.push((vy, my));
        }
        Ok(Self { label, z, xs, ys })
    }

    fn covers(&self, z: f64) -> bool {
        let eps = 1e-9;
        z >= self.z[0] - eps && z <= self.z[self.z.len() - 1] + eps
    }

    fn ring_at(&self, z: f64) -> Vec<Point2<f64>> {
        (0..LOFT_POINTS)
            .map(|i| {
                Point2::new(
                    spline_eval(&self.z, &self.xs[i].0, &self.xs[i].1, z),
                    spline_eval(&self.z, &self.ys[i].0, &self.ys[i].1, z),
                )
            })
            .collect()
    }

    fn knot_distance(&self, z: f64) -> f64 {
        self.z.iter().map(|k| (k - z).abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Lofts per-slice compartment contours into a label volume on `target`.
///
/// Contours are grouped by label. Each MRI slice inside a compartment's z
/// range receives the rasterized interpolated cross-section. A voxel claimed
/// by several compartments goes to the one with an acquired slice nearest in z
/// (lower label on ties).
pub fn loft_masks(contours: &[Contour], target: &Grid3) -> Result<LabelVolume> {
    let mut groups: BTreeMap<u16, Vec<&Contour>> = BTreeMap::new();
    for c in contours {
        if c.label() == 0 {
            return Err(Error::arg("compartment label 0 is reserved for background"));
        }
        groups.entry(c.label()).or_default().push(c);
    }
    if groups.is_empty() {
        return Err(Error::arg("no contours to loft"));
    }
    let lofts: Vec<Loft> = groups
        .into_iter()
        .map(|(label, cs)| Loft::new(label, cs))
        .collect::<Result<_>>()?;

    let [nx, ny, nz] = target.dims;
    let mut labels = vec![0u16; target.len()];
    let mut priority = vec![f64::INFINITY; target.len()];
    for k in 0..nz {
        let z = target.origin[2] + k as f64 * target.spacing[2];
        for loft in lofts.iter().filter(|l| l.covers(z)) {
            let ring = loft.ring_at(z);
            if first_self_intersection(&ring).is_some() {
                log::warn!(
                    "interpolated contour of compartment {} self-intersects at z={z:.3}",
                    loft.label
                );
            }
            let mask = fill_polygon(
                &ring,
                [nx, ny],
                [target.spacing[0], target.spacing[1]],
                [target.origin[0], target.origin[1]],
            );
            let pr = loft.knot_distance(z);
            let mut clashes = 0usize;
            for j in 0..ny {
                for i in 0..nx {
                    if !mask.get(i, j) {
                        continue;
                    }
                    let idx = target.index(i, j, k);
                    if labels[idx] != 0 {
                        clashes += 1;
                        if pr >= priority[idx] {
                            continue;
                        }
                    }
                    labels[idx] = loft.label;
                    priority[idx] = pr;
                }
            }
            if clashes > 0 {
                log::warn!(
                    "compartment {} overlaps {clashes} already labelled voxel(s) at z={z:.3}",
                    loft.label
                );
            }
        }
    }
    LabelVolume::new(*target, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use std::f64::consts::PI;

    fn circle(c: Point2<f64>, r: f64, n: usize, z: f64, label: u16, phase: f64) -> Contour {
        let pts = (0..n)
            .map(|k| {
                let t = phase + 2.0 * PI * k as f64 / n as f64;
                c + Vector2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        Contour::new(pts, z, label).unwrap()
    }

    /// 0.5 mm in-plane, 1 mm slices, voxel centers at z = 0.5, 1.5, ...
    fn grid(nz: usize) -> Grid3 {
        Grid3::new([80, 80, nz], [0.5, 0.5, 1.0], [0.0, 0.0, 0.5]).unwrap()
    }

    #[test]
    fn spline_reproduces_cubic_knots_and_line() {
        let x = [0.0, 1.0, 2.5, 4.0];
        let y: Vec<f64> = x.iter().map(|t| 2.0 * t - 1.0).collect();
        let m = natural_spline(&x, &y);
        for t in [0.3, 1.7, 3.9] {
            assert!((spline_eval(&x, &y, &m, t) - (2.0 * t - 1.0)).abs() < 1e-12);
        }
        let y2 = [1.0, -2.0, 0.5, 3.0];
        let m2 = natural_spline(&x, &y2);
        for (xi, yi) in x.iter().zip(y2) {
            assert!((spline_eval(&x, &y2, &m2, *xi) - yi).abs() < 1e-12);
        }
        assert_eq!(m2[0], 0.0);
        assert_eq!(m2[3], 0.0);
    }

    #[test]
    fn prism_volume() {
        let c = Point2::new(20.0, 20.0);
        let contours: Vec<Contour> = [0.0, 10.0, 20.0]
            .iter()
            .enumerate()
            .map(|(k, &z)| circle(c, 8.0, 64, z, 1, 0.3 * k as f64))
            .collect();
        let g = grid(20);
        let v = loft_masks(&contours, &g).unwrap();
        let vol = v.count_label(1) as f64 * g.voxel_volume();
        let truth = contours[0].area() * 20.0;
        assert!((vol - truth).abs() / truth < 0.02, "{vol} vs {truth}");
    }

    #[test]
    fn frustum_volume() {
        let c = Point2::new(20.0, 20.0);
        let zs = [0.0, 10.0, 20.0, 30.0];
        let contours: Vec<Contour> = zs
            .iter()
            .map(|&z| circle(c, 5.0 + 5.0 * z / 30.0, 96, z, 2, 0.0))
            .collect();
        let g = grid(30);
        let v = loft_masks(&contours, &g).unwrap();
        let vol = v.count_label(2) as f64 * g.voxel_volume();
        let (r1, r2, h) = (5.0, 10.0, 30.0);
        let truth = PI * h / 3.0 * (r1 * r1 + r1 * r2 + r2 * r2);
        assert!((vol - truth).abs() / truth < 0.03, "{vol} vs {truth}");
    }

    #[test]
    fn knot_slices_reproduce_inputs() {
        let zs = [0.5, 6.5, 12.5];
        let contours: Vec<Contour> = zs
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let pts = vec![
                    Point2::new(10.0 + k as f64, 8.0),
                    Point2::new(28.0, 10.0 + k as f64),
                    Point2::new(25.0, 30.0),
                    Point2::new(12.0, 26.0 - 2.0 * k as f64),
                ];
                Contour::new(pts, z, 1).unwrap()
            })
            .collect();
        let g = grid(14);
        let v = loft_masks(&contours, &g).unwrap();
        for c in &contours {
            let k = (c.slice_z() - 0.5).round() as usize;
            let truth = fill_polygon(c.points(), [80, 80], [0.5, 0.5], [0.0, 0.0]);
            let mut got = crate::model::Mask2D::empty([80, 80]);
            for j in 0..80 {
                for i in 0..80 {
                    got.set(i, j, v.get(i, j, k) == 1);
                }
            }
            assert!(got.dice(&truth) >= 0.98, "dice {}", got.dice(&truth));
        }
    }

    #[test]
    fn overlaps_go_to_nearest_acquired_slice() {
        let a = [
            circle(Point2::new(18.0, 20.0), 6.0, 48, 0.5, 1, 0.0),
            circle(Point2::new(18.0, 20.0), 6.0, 48, 10.5, 1, 0.0),
        ];
        let b = [
            circle(Point2::new(22.0, 20.0), 6.0, 48, 4.5, 2, 0.0),
            circle(Point2::new(22.0, 20.0), 6.0, 48, 20.5, 2, 0.0),
        ];
        let all: Vec<Contour> = a.iter().chain(b.iter()).cloned().collect();
        let v = loft_masks(&all, &grid(21)).unwrap();
        // Center of the overlap lens: (20, 20) mm is pixel (40, 40).
        assert_eq!(v.get(40, 40, 0), 1);
        assert_eq!(v.get(40, 40, 4), 2);
        assert_eq!(v.get(40, 40, 9), 1);
        assert_eq!(v.get(40, 40, 15), 2);
    }

    #[test]
    fn single_slice_rejected() {
        let c = circle(Point2::new(20.0, 20.0), 5.0, 32, 1.0, 1, 0.0);
        assert!(matches!(loft_masks(&[c], &grid(4)), Err(Error::Argument(_))));
    }

    #[test]
    fn start_point_alignment_undoes_rotation() {
        let ring: Vec<Point2<f64>> = (0..16)
            .map(|k| Point2::new((k as f64 * 0.4).cos(), (k as f64 * 0.4).sin()))
            .collect();
        let mut shifted = ring.clone();
        shifted.rotate_right(5);
        assert_eq!(best_shift(&ring, &shifted), 5);
    }
}
