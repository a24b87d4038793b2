//! Compartment segmentation on one slice by region growing over a direction
//! field, with an angular threshold that tightens with distance from the seeds.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::raster::{connected_components, mask_to_contour};
use crate::model::{Contour, DirectionField, Mask2D};

/// Regions smaller than this many pixels are not turned into contours.
pub const MIN_REGION_PIXELS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowParams {
    /// Threshold at the seed, degrees.
    pub a_max: f64,
    /// Threshold at one equivalent-circle radius and beyond, degrees.
    pub a_min: f64,
    /// FDS cross-section area in mm². Taken from the mask when absent.
    pub muscle_area: Option<f64>,
    /// Compare signed directions instead of axes.
    pub directed: bool,
}

impl Default for GrowParams {
    fn default() -> Self {
        Self {
            a_max: 30.0,
            a_min: 5.0,
            muscle_area: None,
            directed: false,
        }
    }
}

impl GrowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_min > 0.0) || !(self.a_max >= self.a_min) || self.a_max > 180.0 {
            return Err(Error::arg(format!(
                "angular bounds must satisfy 0 < a_min <= a_max, got a_min={} a_max={}",
                self.a_min, self.a_max
            )));
        }
        if let Some(a) = self.muscle_area {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::arg("muscle_area must be positive"));
            }
        }
        Ok(())
    }

    /// Linear blend between the bounds for a clamped distance ratio.
    pub fn threshold_for_ratio(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        self.a_max * (1.0 - r) + self.a_min * r
    }
}

/// Seeds per compartment label, in pixel coordinates `(i, j)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedSet(pub BTreeMap<u16, Vec<[usize; 2]>>);

impl SeedSet {
    pub fn get(&self, label: u16) -> Option<&[[usize; 2]]> {
        self.0.get(&label).map(|v| v.as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        for (label, s) in &self.0 {
            if s.is_empty() || s.len() > 2 {
                return Err(Error::arg(format!(
                    "compartment {label} needs 1 or 2 seeds, got {}",
                    s.len()
                )));
            }
        }
        Ok(())
    }
}

/// Angular threshold in degrees at `y` for the nearer of `seeds`, all in mm.
pub fn dynamic_threshold(seeds: &[Point2<f64>], y: &Point2<f64>, area: f64, p: &GrowParams) -> f64 {
    let d = seeds
        .iter()
        .map(|q| (q - y).norm())
        .fold(f64::INFINITY, f64::min);
    let radius = (area / std::f64::consts::PI).sqrt();
    p.threshold_for_ratio(d / radius)
}

/// Running mean direction of the admitted pixels.
struct MeanDirection {
    directed: bool,
    sx: f64,
    sy: f64,
    fallback: [f64; 2],
}

impl MeanDirection {
    fn new(directed: bool, fallback: [f64; 2]) -> Self {
        Self {
            directed,
            sx: 0.0,
            sy: 0.0,
            fallback,
        }
    }

    fn add(&mut self, u: [f64; 2]) {
        if self.directed {
            self.sx += u[0];
            self.sy += u[1];
        } else {
            self.sx += u[0] * u[0] - u[1] * u[1];
            self.sy += 2.0 * u[0] * u[1];
        }
    }

    fn unit(&self) -> [f64; 2] {
        let n = self.sx.hypot(self.sy);
        if n < 1e-12 {
            return self.fallback;
        }
        if self.directed {
            [self.sx / n, self.sy / n]
        } else {
            let phi = 0.5 * self.sy.atan2(self.sx);
            [phi.cos(), phi.sin()]
        }
    }

    /// Angle to `u` in degrees; axial mode folds to [0, 90].
    fn angle_to(&self, u: [f64; 2]) -> f64 {
        let m = self.unit();
        let mut c = m[0] * u[0] + m[1] * u[1];
        if !self.directed {
            c = c.abs();
        }
        c.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Grows one compartment from up to two seeds inside the FDS mask.
///
/// A neighbour is admitted when its direction deviates from the current region
/// mean by less than the distance-dependent threshold. Neighbours are visited
/// from a FIFO frontier in row-major order, and a rejected pixel may still be
/// admitted later from another side once the mean has moved.
pub fn grow_region(
    field: &DirectionField,
    fds_mask: &Mask2D,
    seeds: &[[usize; 2]],
    p: &GrowParams,
) -> Result<Mask2D> {
    p.validate()?;
    let grid = *field.grid();
    let [nx, ny] = grid.dims;
    if fds_mask.dims != grid.dims {
        return Err(Error::arg("FDS mask and direction field differ in size"));
    }
    if seeds.is_empty() || seeds.len() > 2 {
        return Err(Error::arg(format!("expected 1 or 2 seeds, got {}", seeds.len())));
    }
    for &[i, j] in seeds {
        if i >= nx || j >= ny || !fds_mask.get(i, j) {
            return Err(Error::arg(format!("seed ({i}, {j}) lies outside the FDS mask")));
        }
        if field.magnitude(i, j) <= 0.0 {
            return Err(Error::DegenerateSeed { x: i, y: j });
        }
    }
    let area = p
        .muscle_area
        .unwrap_or(fds_mask.count() as f64 * grid.pixel_area());
    let seed_pts: Vec<Point2<f64>> = seeds.iter().map(|&[i, j]| grid.center(i, j)).collect();

    let mut region = Mask2D::empty(grid.dims);
    let mut mean = MeanDirection::new(p.directed, field.direction(seeds[0][0], seeds[0][1]));
    let mut queue = VecDeque::new();
    for &[i, j] in seeds {
        if !region.get(i, j) {
            region.set(i, j, true);
            mean.add(field.direction(i, j));
            queue.push_back([i, j]);
        }
    }
    while let Some([i, j]) = queue.pop_front() {
        for (di, dj) in NEIGHBORS {
            let (ii, jj) = (i as isize + di, j as isize + dj);
            if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                continue;
            }
            let (ii, jj) = (ii as usize, jj as usize);
            if region.get(ii, jj) || !fds_mask.get(ii, jj) || field.magnitude(ii, jj) <= 0.0 {
                continue;
            }
            let n = field.direction(ii, jj);
            let t = dynamic_threshold(&seed_pts, &grid.center(ii, jj), area, p);
            if mean.angle_to(n) < t {
                region.set(ii, jj, true);
                mean.add(n);
                queue.push_back([ii, jj]);
            }
        }
    }
    Ok(region)
}

/// Boundary contour of a grown region in slice mm coordinates.
pub fn region_to_contour(region: &Mask2D, spacing: [f64; 2], slice_z: f64, label: u16) -> Result<Contour> {
    let count = region.count();
    if count == 0 {
        return Err(Error::Topology("region is empty".into()));
    }
    if count < MIN_REGION_PIXELS {
        return Err(Error::Topology(format!(
            "region has {count} pixels, below the minimum of {MIN_REGION_PIXELS}"
        )));
    }
    let (_, n) = connected_components(region, true);
    if n != 1 {
        return Err(Error::Topology(format!("region has {n} connected components")));
    }
    mask_to_contour(region, spacing, [0.0, 0.0], slice_z, label)
}
