//! Slice registration between ultrasound and MRI by point-set matching.
//!
//! Both FDS cross-sections are sampled by farthest point sampling, the samples
//! are paired by a minimum total squared distance assignment, and compartment
//! contours are carried across through that pairing. Mapped contours from
//! several slices are lofted into a label volume.

pub mod assignment;
mod loft;
mod mapping;

use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Point2, Rotation2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Contour;
pub use loft::{loft_masks, LOFT_POINTS};
pub use mapping::map_contour;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ultrasound,
    Mri,
}

/// Points sampled from one FDS cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSet {
    pub points: Vec<Point2<f64>>,
    pub source: Modality,
    pub slice_z: f64,
}

impl SampledSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Nearest-neighbour index over planar points.
pub(crate) struct PointIndex {
    tree: ImmutableKdTree<f64, 2>,
}

impl PointIndex {
    pub(crate) fn new(points: &[Point2<f64>]) -> Self {
        let coords: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
        let tree = ImmutableKdTree::new_from_slice(&coords).expect("non-empty point set");
        Self { tree }
    }

    /// Index and squared distance of the nearest point.
    pub(crate) fn nearest(&self, p: &Point2<f64>) -> (usize, f64) {
        let r = self
            .tree
            .query(&[p.x, p.y])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        (r.item as usize, r.distance)
    }

    pub(crate) fn nearest_n(&self, p: &Point2<f64>, k: usize) -> Vec<usize> {
        self.tree
            .query(&[p.x, p.y])
            .nearest_n::<SquaredEuclidean<f64>>(NonZero::new(k.max(1)).unwrap())
            .execute()
            .into_iter()
            .map(|r| r.item as usize)
            .collect()
    }
}

/// Pixel centers on a `spacing` lattice (multiples of `spacing` from the slice
/// origin) that fall inside the contour, in row-major order.
pub fn interior_candidates(contour: &Contour, spacing: f64) -> Result<Vec<Point2<f64>>> {
    if !(spacing > 0.0) {
        return Err(Error::arg("candidate spacing must be positive"));
    }
    let (lo, hi) = contour.bounds();
    let (i0, i1) = ((lo.x / spacing).ceil() as i64, (hi.x / spacing).floor() as i64);
    let (j0, j1) = ((lo.y / spacing).ceil() as i64, (hi.y / spacing).floor() as i64);
    let mut out = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let p = Point2::new(i as f64 * spacing, j as f64 * spacing);
            if contour.contains(&p) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn argmax_lowest(values: &[f64]) -> usize {
    values
        .par_iter()
        .enumerate()
        .map(|(i, &d)| (d, i))
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) { a } else { b },
        )
        .1
}

/// Greedy max-min selection of `n` candidate indices.
///
/// The first pick is the candidate nearest the candidate centroid. Each next
/// pick maximizes the distance to the already selected set. Ties go to the
/// lowest index.
pub fn farthest_point_sample(candidates: &[Point2<f64>], n: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() {
        return Err(Error::arg("no candidate points"));
    }
    if n > candidates.len() {
        return Err(Error::arg(format!(
            "requested {n} samples from {} candidates",
            candidates.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let c = centroid(candidates);
    let first = {
        let d: Vec<f64> = candidates.iter().map(|p| -(p - c).norm_squared()).collect();
        argmax_lowest(&d)
    };
    let mut picked = vec![first];
    let mut mind: Vec<f64> = candidates
        .par_iter()
        .map(|p| (p - candidates[first]).norm_squared())
        .collect();
    while picked.len() < n {
        let next = argmax_lowest(&mind);
        picked.push(next);
        let q = candidates[next];
        mind.par_iter_mut().zip(candidates.par_iter()).for_each(|(m, p)| {
            let d = (p - q).norm_squared();
            if d < *m {
                *m = d;
            }
        });
    }
    Ok(picked)
}

/// Farthest point sample of a contour interior on a `spacing` lattice.
pub fn sample_contour(contour: &Contour, spacing: f64, n: usize, source: Modality) -> Result<SampledSet> {
    let cands = interior_candidates(contour, spacing)?;
    let idx = farthest_point_sample(&cands, n)?;
    Ok(SampledSet {
        points: idx.iter().map(|&i| cands[i]).collect(),
        source,
        slice_z: contour.slice_z(),
    })
}

pub(crate) fn centroid(points: &[Point2<f64>]) -> Point2<f64> {
    let s = points
        .iter()
        .fold(Vector2::zeros(), |acc, p| acc + p.coords);
    Point2::from(s / points.len() as f64)
}

/// Orientation of the principal axis in radians and the relative eigenvalue
/// gap `(l1 - l2) / (l1 + l2)`.
fn principal_axis(points: &[Point2<f64>]) -> (f64, f64) {
    let c = centroid(points);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let tr = sxx + syy;
    let gap = if tr > 0.0 {
        ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt() / tr
    } else {
        0.0
    };
    (angle, gap)
}

/// Rigid pose taking the ultrasound sample set onto the MRI one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub u_centroid: Point2<f64>,
    pub v_centroid: Point2<f64>,
    /// Rotation about the centroid, radians.
    pub rotation: f64,
}

impl Alignment {
    pub fn apply(&self, p: &Point2<f64>) -> Point2<f64> {
        if self.rotation == 0.0 {
            return p + (self.v_centroid - self.u_centroid);
        }
        self.v_centroid + Rotation2::new(self.rotation) * (p - self.u_centroid)
    }
}

/// Below this relative eigenvalue gap the principal axis is not trusted.
const ISOTROPY_GAP: f64 = 0.05;

fn chamfer(a: &[Point2<f64>], b: &[Point2<f64>], b_index: &PointIndex) -> f64 {
    let a_index = PointIndex::new(a);
    let ab: f64 = a.iter().map(|p| b_index.nearest(p).1.sqrt()).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| a_index.nearest(p).1.sqrt()).sum::<f64>() / b.len() as f64;
    ab + ba
}

/// Centroid translation plus principal-axis rotation of `u` onto `v`.
///
/// Candidate rotations are none, the axis difference, and the axis difference
/// plus a half turn; the one with the lowest symmetric chamfer distance wins.
pub fn prealign(u: &[Point2<f64>], v: &[Point2<f64>]) -> Result<Alignment> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::arg("cannot align empty point sets"));
    }
    let (au, gu) = principal_axis(u);
    let (av, gv) = principal_axis(v);
    let mut candidates = vec![0.0];
    if gu > ISOTROPY_GAP && gv > ISOTROPY_GAP {
        let d = av - au;
        candidates.push(d);
        candidates.push(d + std::f64::consts::PI);
    }
    let v_index = PointIndex::new(v);
    let mut best: Option<(f64, Alignment)> = None;
    for rotation in candidates {
        let al = Alignment {
            u_centroid: centroid(u),
            v_centroid: centroid(v),
            rotation,
        };
        let moved: Vec<Point2<f64>> = u.iter().map(|p| al.apply(p)).collect();
        let score = chamfer(&moved, v, &v_index);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, al));
        }
    }
    Ok(best.unwrap().1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum MatchMode {
    Dense,
    Sparse { k: usize },
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::Sparse { k: 32 }
    }
}

/// Sizes above this are refused by the dense solver in automatic mode choice.
pub const DENSE_LIMIT: usize = 2000;

/// A bijection between ultrasound and MRI samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `[u_index, v_index]`, sorted by `u_index`.
    pub pairs: Vec<[usize; 2]>,
    /// Σ squared distances after pre-alignment, mm².
    pub total_cost: f64,
    pub alignment: Alignment,
    /// Ultrasound samples in slice coordinates.
    pub u_points: Vec<Point2<f64>>,
    /// MRI samples in slice coordinates.
    pub v_points: Vec<Point2<f64>>,
    pub v_slice_z: f64,
}

impl Matching {
    pub fn partner(&self, u_index: usize) -> Point2<f64> {
        self.v_points[self.pairs[u_index][1]]
    }
}

fn knn_graph(u: &[Point2<f64>], v: &[Point2<f64>], k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = u.len();
    let v_index = PointIndex::new(v);
    let u_index = PointIndex::new(u);
    let mut adj: Vec<Vec<usize>> = u.par_iter().map(|p| v_index.nearest_n(p, k)).collect();
    let reverse: Vec<Vec<usize>> = v.par_iter().map(|q| u_index.nearest_n(q, k)).collect();
    for (j, rows) in reverse.iter().enumerate() {
        for &i in rows {
            adj[i].push(j);
        }
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cols = adj[i].clone();
            cols.sort_unstable();
            cols.dedup();
            cols.into_iter()
                .map(|j| (j, (u[i] - v[j]).norm_squared()))
                .collect()
        })
        .collect()
}

fn solve(u: &[Point2<f64>], v: &[Point2<f64>], mode: MatchMode) -> Result<Vec<usize>> {
    let n = u.len();
    let dense = || {
        let cost: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|idx| (u[idx / n] - v[idx % n]).norm_squared())
            .collect();
        assignment::dense_assignment(&cost, n)
    };
    match mode {
        MatchMode::Dense => Ok(dense()),
        MatchMode::Sparse { k } => {
            if k == 0 {
                return Err(Error::arg("sparse matching needs k >= 1"));
            }
            let mut k = k;
            loop {
                if k >= n {
                    return Ok(dense());
                }
                let adj = knn_graph(u, v, k);
                if let Some(a) = assignment::sparse_assignment(n, &adj) {
                    return Ok(a);
                }
                log::warn!("sparse assignment infeasible at k={k}, widening");
                k *= 2;
            }
        }
    }
}

/// Minimum Σd² bijection between equal-size sample sets after pre-alignment.
pub fn min_weight_match(u: &SampledSet, v: &SampledSet, mode: MatchMode) -> Result<Matching> {
    if u.len() != v.len() {
        return Err(Error::arg(format!(
            "sample sets differ in size: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::arg("sample sets are empty"));
    }
    let alignment = prealign(&u.points, &v.points)?;
    let moved: Vec<Point2<f64>> = u.points.iter().map(|p| alignment.apply(p)).collect();
    let col4row = solve(&moved, &v.points, mode)?;
    let total_cost = col4row
        .iter()
        .enumerate()
        .map(|(i, &j)| (moved[i] - v.points[j]).norm_squared())
        .sum();
    Ok(Matching {
        pairs: col4row.iter().enumerate().map(|(i, &j)| [i, j]).collect(),
        total_cost,
        alignment,
        u_points: u.points.clone(),
        v_points: v.points.clone(),
        v_slice_z: v.slice_z,
    })
}
