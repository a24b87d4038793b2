use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{eigen, fractional_anisotropy, TensorField, TrackParams};
use crate::error::{Error, Result};
use crate::model::{LabelVolume, Streamline};

/// Seed voxels of `label` in shuffled order, at most `candidate_count`.
pub fn seed_voxels(mask: &LabelVolume, label: u16, p: &TrackParams) -> Vec<usize> {
    let mut seeds: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == label).then_some(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    seeds.shuffle(&mut rng);
    seeds.truncate(p.candidate_count);
    seeds
}

struct Tracker<'a> {
    field: &'a TensorField,
    mask: &'a LabelVolume,
    label: u16,
    p: &'a TrackParams,
    cos_max_turn: f64,
    max_steps: usize,
}

impl Tracker<'_> {
    fn inside(&self, q: &Point3<f64>) -> bool {
        match self.mask.grid().nearest_voxel(q) {
            Some([i, j, k]) => self.mask.get(i, j, k) == self.label,
            None => false,
        }
    }

    /// FA and principal direction of the interpolated tensor.
    fn direction_at(&self, q: &Point3<f64>) -> (f64, Vector3<f64>) {
        let t = self.field.interpolate(q);
        let (l, v) = eigen(&t);
        (fractional_anisotropy(&l), v)
    }

    /// Last point inside the mask on the segment from `a` (inside) to `b`.
    fn boundary(&self, a: Point3<f64>, b: Point3<f64>) -> Point3<f64> {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.inside(&(a + (b - a) * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        a + (b - a) * lo
    }

    /// Points visited from `start` heading along `dir`, starting point included.
    fn integrate(&self, start: Point3<f64>, dir: Vector3<f64>) -> Vec<Point3<f64>> {
        let mut pts = vec![start];
        let mut prev = dir;
        let mut cur = start;
        for _ in 0..self.max_steps {
            let (fa, mut e) = self.direction_at(&cur);
            if fa < self.p.fa_min {
                break;
            }
            if e.dot(&prev) < 0.0 {
                e = -e;
            }
            if e.dot(&prev) < self.cos_max_turn {
                break;
            }
            let next = cur + e * self.p.step;
            if !self.inside(&next) {
                let b = self.boundary(cur, next);
                if (b - cur).norm() > 1e-9 {
                    pts.push(b);
                }
                break;
            }
            pts.push(next);
            prev = e;
            cur = next;
        }
        pts
    }

    fn trace_seed(&self, idx: usize) -> Option<Streamline> {
        let start = self.mask.grid().center_of(idx);
        let (fa, e) = self.direction_at(&start);
        if fa < self.p.fa_min {
            return None;
        }
        let fwd = self.integrate(start, e);
        let bwd = self.integrate(start, -e);
        let mut pts: Vec<Point3<f64>> = bwd.into_iter().rev().collect();
        pts.extend_from_slice(&fwd[1..]);
        Streamline::new(pts, idx as u64).ok()
    }
}

/// Bidirectional Euler tracking from the seed voxels of `label`.
///
/// A half-track stops when the interpolated anisotropy falls below `fa_min`,
/// when the direction turns by more than `max_turn` in one step, or when the
/// next step leaves the mask; in the last case the track is extended to the
/// mask boundary. Tract ids are the seed voxel indices.
pub fn track(field: &TensorField, mask: &LabelVolume, label: u16, p: &TrackParams) -> Result<Vec<Streamline>> {
    p.validate()?;
    if mask.grid() != field.grid() {
        return Err(Error::arg("mask and tensor field differ in geometry"));
    }
    let seeds = seed_voxels(mask, label, p);
    if seeds.is_empty() {
        return Err(Error::arg(format!("mask has no voxels with label {label}")));
    }
    let g = mask.grid();
    let diag: f64 = (0..3)
        .map(|a| (g.dims[a] as f64 * g.spacing[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    let tracker = Tracker {
        field,
        mask,
        label,
        p,
        cos_max_turn: p.max_turn.to_radians().cos(),
        max_steps: (4.0 * diag / p.step).ceil() as usize + 8,
    };
    Ok(seeds
        .par_iter()
        .filter_map(|&s| tracker.trace_seed(s))
        .collect())
}
