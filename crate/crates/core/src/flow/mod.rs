//! Dense tissue motion from consecutive B-mode frames.
//!
//! Two-frame estimation follows the polynomial-expansion scheme: both frames
//! are locally approximated by quadratics, and the displacement that maps one
//! expansion onto the other is solved in a least-squares sense over a Gaussian
//! neighbourhood, coarse to fine over an image pyramid.
//!
//! Displacements use the motion convention: content at `x` in the first frame
//! appears at `x + d` in the second. Output fields are in mm.

pub mod expansion;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DirectionField, Grid2, Image2D};
use expansion::{expand, gaussian_kernel, separable, Expansion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Polynomial-expansion neighbourhood radius in pixels.
    pub window_radius: usize,
    /// Gaussian applicability of the expansion, in pixels.
    pub poly_sigma: f64,
    pub pyramid_levels: usize,
    pub iterations: usize,
    /// Gaussian averaging of the displacement constraints, in pixels.
    pub gaussian_sigma: f64,
    /// Frame stride between the two frames of each pair in a movie.
    pub stride: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            window_radius: 5,
            poly_sigma: 1.1,
            pyramid_levels: 2,
            iterations: 3,
            gaussian_sigma: 2.5,
            stride: 10,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 2 {
            return Err(Error::arg("flow window_radius must be at least 2"));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::arg("flow pyramid_levels must be at least 1"));
        }
        if self.iterations < 1 {
            return Err(Error::arg("flow iterations must be at least 1"));
        }
        if !(self.poly_sigma > 0.0) || !(self.gaussian_sigma > 0.0) {
            return Err(Error::arg("flow sigmas must be positive"));
        }
        if self.stride < 1 {
            return Err(Error::arg("flow stride must be at least 1"));
        }
        Ok(())
    }
}

struct Level {
    data: Vec<f64>,
    nx: usize,
    ny: usize,
}

fn downsample(l: &Level) -> Level {
    let k = gaussian_kernel(1.0, 2);
    let blurred = separable(&l.data, l.nx, l.ny, &k, &k);
    let nx = l.nx.div_ceil(2);
    let ny = l.ny.div_ceil(2);
    let mut data = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            data.push(blurred[(2 * j) * l.nx + 2 * i]);
        }
    }
    Level { data, nx, ny }
}

fn pyramid(img: &Image2D, levels: usize, min_size: usize) -> Vec<Level> {
    let [nx, ny] = img.dims();
    let mut out = vec![Level {
        data: img.data().to_vec(),
        nx,
        ny,
    }];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.nx.div_ceil(2) < min_size || last.ny.div_ceil(2) < min_size {
            break;
        }
        let next = downsample(last);
        out.push(next);
    }
    out
}

fn upsample_flow(flow: &[[f64; 2]], nx: usize, ny: usize, to_nx: usize, to_ny: usize) -> Vec<[f64; 2]> {
    (0..to_nx * to_ny)
        .map(|idx| {
            let (i, j) = (idx % to_nx, idx / to_nx);
            let x = (i as f64 / 2.0).min((nx - 1) as f64);
            let y = (j as f64 / 2.0).min((ny - 1) as f64);
            let x0 = x.floor() as usize;
            let y0 = y.floor() as usize;
            let x1 = (x0 + 1).min(nx - 1);
            let y1 = (y0 + 1).min(ny - 1);
            let (tx, ty) = (x - x0 as f64, y - y0 as f64);
            let mut d = [0.0; 2];
            for c in 0..2 {
                let v = (1.0 - ty) * ((1.0 - tx) * flow[y0 * nx + x0][c] + tx * flow[y0 * nx + x1][c])
                    + ty * ((1.0 - tx) * flow[y1 * nx + x0][c] + tx * flow[y1 * nx + x1][c]);
                d[c] = 2.0 * v;
            }
            d
        })
        .collect()
}

/// One refinement pass: builds per-pixel constraint matrices around the current
/// displacement, averages them over the neighbourhood and solves.
fn refine(e1: &Expansion, e2: &Expansion, flow: &[[f64; 2]], p: &FlowParams) -> Vec<[f64; 2]> {
    let (nx, ny) = (e1.nx, e1.ny);
    let terms: Vec<[f64; 5]> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = ((idx % nx) as f64, (idx / nx) as f64);
            let [dx, dy] = flow[idx];
            let (x2, y2) = (i + dx, j + dy);
            if x2 < 0.0 || y2 < 0.0 || x2 > (nx - 1) as f64 || y2 > (ny - 1) as f64 {
                return [0.0; 5];
            }
            let c1 = e1.coeffs[idx];
            let c2 = e2.sample(x2, y2);
            let a11 = 0.5 * (c1[2] + c2[2]);
            let a22 = 0.5 * (c1[3] + c2[3]);
            let a12 = 0.5 * (c1[4] + c2[4]);
            let bx = -0.5 * (c2[0] - c1[0]) + a11 * dx + a12 * dy;
            let by = -0.5 * (c2[1] - c1[1]) + a12 * dx + a22 * dy;
            [
                a11 * a11 + a12 * a12,
                a11 * a12 + a12 * a22,
                a12 * a12 + a22 * a22,
                a11 * bx + a12 * by,
                a12 * bx + a22 * by,
            ]
        })
        .collect();
    let radius = (3.0 * p.gaussian_sigma).ceil() as usize;
    let k = gaussian_kernel(p.gaussian_sigma, radius);
    let smoothed: Vec<Vec<f64>> = (0..5)
        .map(|c| {
            let channel: Vec<f64> = terms.iter().map(|t| t[c]).collect();
            separable(&channel, nx, ny, &k, &k)
        })
        .collect();
    (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let (g11, g12, g22) = (smoothed[0][idx], smoothed[1][idx], smoothed[2][idx]);
            let (h1, h2) = (smoothed[3][idx], smoothed[4][idx]);
            let det = g11 * g22 - g12 * g12;
            let tr = g11 + g22;
            if !(tr > 0.0) || det <= 1e-12 * tr * tr {
                return flow[idx];
            }
            [(g22 * h1 - g12 * h2) / det, (g11 * h2 - g12 * h1) / det]
        })
        .collect()
}

/// Per-pixel displacement between two frames of identical geometry.
///
/// Pixels within `window_radius` of the border get zero magnitude.
pub fn estimate_flow(f1: &Image2D, f2: &Image2D, p: &FlowParams) -> Result<DirectionField> {
    p.validate()?;
    if f1.grid() != f2.grid() {
        return Err(Error::arg(format!(
            "frame geometry mismatch: {:?} vs {:?}",
            f1.grid(),
            f2.grid()
        )));
    }
    let grid = *f1.grid();
    let min_size = 2 * p.window_radius + 1;
    let pyr1 = pyramid(f1, p.pyramid_levels, min_size);
    let pyr2 = pyramid(f2, pyr1.len(), min_size);
    let levels = pyr1.len().min(pyr2.len());

    let mut flow: Vec<[f64; 2]> = Vec::new();
    let mut prev_dims = (0, 0);
    for lvl in (0..levels).rev() {
        let (l1, l2) = (&pyr1[lvl], &pyr2[lvl]);
        flow = if flow.is_empty() {
            vec![[0.0; 2]; l1.nx * l1.ny]
        } else {
            upsample_flow(&flow, prev_dims.0, prev_dims.1, l1.nx, l1.ny)
        };
        prev_dims = (l1.nx, l1.ny);
        let e1 = expand(&l1.data, l1.nx, l1.ny, p.window_radius, p.poly_sigma);
        let e2 = expand(&l2.data, l2.nx, l2.ny, p.window_radius, p.poly_sigma);
        for _ in 0..p.iterations {
            flow = refine(&e1, &e2, &flow, p);
        }
    }

    let [nx, ny] = grid.dims;
    let r = p.window_radius;
    let disp: Vec<[f64; 2]> = flow
        .iter()
        .enumerate()
        .map(|(idx, d)| {
            let (i, j) = (idx % nx, idx / nx);
            if i < r || j < r || i + r >= nx || j + r >= ny {
                [0.0, 0.0]
            } else {
                [d[0] * grid.spacing[0], d[1] * grid.spacing[1]]
            }
        })
        .collect();
    DirectionField::from_displacements(grid, &disp)
}

/// Frame index pairs used for aggregation: consecutive pairs `stride` apart,
/// with the stride reduced when the movie is shorter than one stride.
pub fn frame_pairs(frame_count: usize, stride: usize) -> Vec<(usize, usize)> {
    let s = stride.min(frame_count.saturating_sub(1)).max(1);
    (0..)
        .map(|k| (k * s, (k + 1) * s))
        .take_while(|&(_, b)| b < frame_count)
        .collect()
}

/// Movement-axis field of a frame sequence.
///
/// Per pixel, pair directions are averaged axially (angles doubled before a
/// magnitude-weighted mean) so opposite strokes of a reciprocating movement
/// reinforce each other. The sign of the resulting axis follows the weighted
/// sum of the raw displacements; the magnitude is the mean pair magnitude.
pub fn aggregate_direction(frames: &[Image2D], p: &FlowParams) -> Result<DirectionField> {
    p.validate()?;
    if frames.len() < 2 {
        return Err(Error::arg(format!(
            "direction aggregation needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let grid: Grid2 = *frames[0].grid();
    if frames.iter().any(|f| *f.grid() != grid) {
        return Err(Error::arg("all frames must share one geometry"));
    }
    let pairs = frame_pairs(frames.len(), p.stride);
    let fields: Vec<DirectionField> = pairs
        .par_iter()
        .map(|&(a, b)| estimate_flow(&frames[a], &frames[b], p))
        .collect::<Result<_>>()?;
    let npairs = fields.len() as f64;
    let disp: Vec<[f64; 2]> = (0..grid.len())
        .map(|idx| {
            let (mut c2, mut s2, mut rx, mut ry, mut msum) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for f in &fields {
                let m = f.magnitudes()[idx];
                if m <= 0.0 {
                    continue;
                }
                let [ux, uy] = f.directions()[idx];
                c2 += m * (ux * ux - uy * uy);
                s2 += m * (2.0 * ux * uy);
                rx += m * ux;
                ry += m * uy;
                msum += m;
            }
            if c2 == 0.0 && s2 == 0.0 {
                return [0.0, 0.0];
            }
            let phi = 0.5 * s2.atan2(c2);
            let (mut ax, mut ay) = (phi.cos(), phi.sin());
            if ax * rx + ay * ry < 0.0 {
                ax = -ax;
                ay = -ay;
            }
            let mag = msum / npairs;
            [ax * mag, ay * mag]
        })
        .collect();
    DirectionField::from_displacements(grid, &disp)
}
