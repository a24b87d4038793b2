//! Conversions between polygons and pixel rasters.

use std::collections::{HashMap, VecDeque};

use nalgebra::Point2;

use super::contour::{distance_to_segment, Contour};
use super::image::Mask2D;
use crate::error::{Error, Result};

/// Marks pixels whose centers fall inside the polygon (even-odd scanline fill).
///
/// Pixel `(i, j)` has its center at `origin + (i*sx, j*sy)`.
pub fn fill_polygon(
    pts: &[Point2<f64>],
    dims: [usize; 2],
    spacing: [f64; 2],
    origin: [f64; 2],
) -> Mask2D {
    let mut mask = Mask2D::empty(dims);
    let n = pts.len();
    if n < 3 {
        return mask;
    }
    let mut xs = Vec::new();
    for j in 0..dims[1] {
        let y = origin[1] + j as f64 * spacing[1];
        xs.clear();
        for k in 0..n {
            let a = pts[k];
            let b = pts[(k + 1) % n];
            if (a.y > y) != (b.y > y) {
                xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = ((pair[0] - origin[0]) / spacing[0]).ceil().max(0.0);
            let hi = ((pair[1] - origin[0]) / spacing[0]).floor();
            if hi < 0.0 || lo > hi {
                continue;
            }
            let hi = (hi as usize).min(dims[0] - 1);
            for i in lo as usize..=hi {
                mask.set(i, j, true);
            }
        }
    }
    mask
}

/// Rasterizes a contour on a slice grid whose pixel (0, 0) sits at the origin.
pub fn rasterize_contour(c: &Contour, dims: [usize; 2], spacing: [f64; 2]) -> Mask2D {
    fill_polygon(c.points(), dims, spacing, [0.0, 0.0])
}

const N8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const N4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

/// Connected-component labels (1-based, 0 for background) and component count.
pub fn connected_components(mask: &Mask2D, eight: bool) -> (Vec<u32>, usize) {
    let [nx, ny] = mask.dims;
    let mut labels = vec![0u32; nx * ny];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    let nbrs: &[(isize, isize)] = if eight { &N8 } else { &N4 };
    for start in 0..nx * ny {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (i, j) = ((idx % nx) as isize, (idx / nx) as isize);
            for &(di, dj) in nbrs {
                let (a, b) = (i + di, j + dj);
                if mask.get_signed(a, b) {
                    let n = a as usize + nx * b as usize;
                    if labels[n] == 0 {
                        labels[n] = count;
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    (labels, count as usize)
}

/// Mask of the largest 8-connected component (lowest label on ties).
pub fn largest_component(mask: &Mask2D) -> Mask2D {
    let (labels, count) = connected_components(mask, true);
    if count <= 1 {
        return mask.clone();
    }
    let mut sizes = vec![0usize; count + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let best = (1..=count).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap() as u32;
    Mask2D {
        dims: mask.dims,
        data: labels.iter().map(|&l| l == best).collect(),
    }
}

fn fill_holes(mask: &mut Mask2D) -> bool {
    let [nx, ny] = mask.dims;
    // Flood the background from a one-pixel frame around the raster.
    let (px, py) = (nx + 2, ny + 2);
    let mut outside = vec![false; px * py];
    let mut queue = VecDeque::from([0usize]);
    outside[0] = true;
    while let Some(idx) = queue.pop_front() {
        let (i, j) = ((idx % px) as isize, (idx / px) as isize);
        for &(di, dj) in &N4 {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a >= px as isize || b >= py as isize {
                continue;
            }
            let n = a as usize + px * b as usize;
            if outside[n] || mask.get_signed(a - 1, b - 1) {
                continue;
            }
            outside[n] = true;
            queue.push_back(n);
        }
    }
    let mut changed = false;
    for j in 0..ny {
        for i in 0..nx {
            if !mask.get(i, j) && !outside[(i + 1) + px * (j + 1)] {
                mask.set(i, j, true);
                changed = true;
            }
        }
    }
    changed
}

fn fill_pinches(mask: &mut Mask2D) -> bool {
    let [nx, ny] = mask.dims;
    let mut changed = false;
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let a = mask.get(i, j);
            let b = mask.get(i + 1, j);
            let c = mask.get(i, j + 1);
            let d = mask.get(i + 1, j + 1);
            if a && d && !b && !c {
                mask.set(i + 1, j, true);
                changed = true;
            } else if b && c && !a && !d {
                mask.set(i, j, true);
                changed = true;
            }
        }
    }
    changed
}

/// Outer boundary of a single-component region along pixel edges, as a CCW
/// vertex loop in pixel-corner lattice units. Holes are filled and diagonal
/// pinches closed so the loop is a simple polygon.
pub fn trace_outer_boundary(mask: &Mask2D) -> Result<Vec<[i64; 2]>> {
    let mut m = mask.clone();
    loop {
        let a = fill_holes(&mut m);
        let b = fill_pinches(&mut m);
        if !a && !b {
            break;
        }
    }
    let [nx, ny] = m.dims;
    let filled = |i: i64, j: i64| m.get_signed(i as isize, j as isize);
    let mut next: HashMap<[i64; 2], [i64; 2]> = HashMap::new();
    let mut start: Option<[i64; 2]> = None;
    for j in 0..ny as i64 {
        for i in 0..nx as i64 {
            if !filled(i, j) {
                continue;
            }
            let mut edge = |from: [i64; 2], to: [i64; 2]| {
                start.get_or_insert(from);
                next.insert(from, to);
            };
            if !filled(i, j - 1) {
                edge([i, j], [i + 1, j]);
            }
            if !filled(i + 1, j) {
                edge([i + 1, j], [i + 1, j + 1]);
            }
            if !filled(i, j + 1) {
                edge([i + 1, j + 1], [i, j + 1]);
            }
            if !filled(i - 1, j) {
                edge([i, j + 1], [i, j]);
            }
        }
    }
    let start = start.ok_or_else(|| Error::Topology("empty region".into()))?;
    let mut loop_pts = vec![start];
    let mut cur = next[&start];
    while cur != start {
        loop_pts.push(cur);
        cur = *next
            .get(&cur)
            .ok_or_else(|| Error::Internal("open boundary chain".into()))?;
        if loop_pts.len() > next.len() {
            return Err(Error::Internal("boundary trace did not close".into()));
        }
    }
    if loop_pts.len() != next.len() {
        return Err(Error::Topology(
            "region boundary has more than one loop".into(),
        ));
    }
    Ok(remove_collinear(&loop_pts))
}

fn remove_collinear(pts: &[[i64; 2]]) -> Vec<[i64; 2]> {
    let n = pts.len();
    (0..n)
        .filter(|&k| {
            let a = pts[(k + n - 1) % n];
            let b = pts[k];
            let c = pts[(k + 1) % n];
            (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0
        })
        .map(|k| pts[k])
        .collect()
}

/// Douglas–Peucker simplification of a closed polygon.
pub fn simplify_closed(pts: &[Point2<f64>], tolerance: f64) -> Vec<Point2<f64>> {
    let n = pts.len();
    if n <= 4 || tolerance <= 0.0 {
        return pts.to_vec();
    }
    let far = (1..n)
        .max_by(|&a, &b| {
            (pts[a] - pts[0])
                .norm_squared()
                .total_cmp(&(pts[b] - pts[0]).norm_squared())
        })
        .unwrap();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    let chain_a: Vec<usize> = (0..=far).collect();
    let chain_b: Vec<usize> = (far..n).chain(std::iter::once(0)).collect();
    for chain in [chain_a, chain_b] {
        dp(pts, &chain, tolerance, &mut keep);
    }
    (0..n).filter(|&k| keep[k]).map(|k| pts[k]).collect()
}

fn dp(pts: &[Point2<f64>], chain: &[usize], tol: f64, keep: &mut [bool]) {
    if chain.len() < 3 {
        return;
    }
    let a = pts[chain[0]];
    let b = pts[chain[chain.len() - 1]];
    let (mut worst, mut worst_d) = (0usize, -1.0);
    for (k, &idx) in chain.iter().enumerate().take(chain.len() - 1).skip(1) {
        let d = distance_to_segment(&pts[idx], &a, &b);
        if d > worst_d {
            worst_d = d;
            worst = k;
        }
    }
    if worst_d > tol {
        keep[chain[worst]] = true;
        dp(pts, &chain[..=worst], tol, keep);
        dp(pts, &chain[worst..], tol, keep);
    }
}

/// Traces the boundary of a one-component region into a simplified contour.
///
/// Pixel `(i, j)` is the square centered at `origin + (i*sx, j*sy)`.
pub fn mask_to_contour(
    mask: &Mask2D,
    spacing: [f64; 2],
    origin: [f64; 2],
    slice_z: f64,
    label: u16,
) -> Result<Contour> {
    let corners = trace_outer_boundary(mask)?;
    let pts: Vec<Point2<f64>> = corners
        .iter()
        .map(|&[a, b]| {
            Point2::new(
                origin[0] + (a as f64 - 0.5) * spacing[0],
                origin[1] + (b as f64 - 0.5) * spacing[1],
            )
        })
        .collect();
    let tol = 0.5 * spacing[0].min(spacing[1]);
    let simplified = simplify_closed(&pts, tol);
    match Contour::new(simplified, slice_z, label) {
        Ok(c) => Ok(c),
        Err(_) => Contour::new(pts, slice_z, label),
    }
}
