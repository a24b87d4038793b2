//! 2D slice rasters: B-mode frames, masks and direction fields.
//!
//! Pixel `(i, j)` has its center at `(i*sx, j*sy)` mm in the slice frame.

use nalgebra::Point2;

use crate::error::{Error, Result};

/// Pixel lattice of a 2D slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
}

impl Grid2 {
    pub fn new(dims: [usize; 2], spacing: [f64; 2]) -> Result<Self> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(Error::arg(format!("image dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::arg(format!(
                "pixel spacing must be positive, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.dims[0] * j
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> [usize; 2] {
        [idx % self.dims[0], idx / self.dims[0]]
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Point2<f64> {
        Point2::new(i as f64 * self.spacing[0], j as f64 * self.spacing[1])
    }

    pub fn pixel_area(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    /// Pixel containing the physical point, if inside the image.
    pub fn pixel_of(&self, p: &Point2<f64>) -> Option<[usize; 2]> {
        let i = (p.x / self.spacing[0]).round();
        let j = (p.y / self.spacing[1]).round();
        (i >= 0.0 && j >= 0.0 && i < self.dims[0] as f64 && j < self.dims[1] as f64)
            .then_some([i as usize, j as usize])
    }
}

/// Scalar image, e.g. one B-mode frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    grid: Grid2,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(grid: Grid2, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::arg(format!(
                "image data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("image contains non-finite values"));
        }
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: Grid2, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let data = (0..grid.len())
            .map(|idx| {
                let [i, j] = grid.ij(idx);
                f(i, j)
            })
            .collect();
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 2] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.index(i, j)]
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    pub dims: [usize; 2],
    pub data: Vec<bool>,
}

impl Mask2D {
    pub fn new(dims: [usize; 2], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] {
            return Err(Error::arg("mask data length does not match dims"));
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: [usize; 2]) -> Self {
        Self {
            dims,
            data: vec![false; dims[0] * dims[1]],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i + self.dims[0] * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i + self.dims[0] * j] = v;
    }

    /// Same as `get` but false outside the raster.
    #[inline]
    pub fn get_signed(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.dims[0]
            && (j as usize) < self.dims[1]
            && self.get(i as usize, j as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask2D) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Sørensen–Dice overlap with another mask of equal dims.
    pub fn dice(&self, other: &Mask2D) -> f64 {
        assert_eq!(self.dims, other.dims, "dice on masks of different dims");
        let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
        for (&x, &y) in self.data.iter().zip(&other.data) {
            a += x as usize;
            b += y as usize;
            inter += (x && y) as usize;
        }
        if a + b == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (a + b) as f64
        }
    }
}

/// Per-pixel tissue displacement stored as unit direction plus magnitude.
///
/// Pixels with zero magnitude carry a zero direction and are treated as having
/// no reliable motion estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    grid: Grid2,
    directions: Vec<[f64; 2]>,
    magnitudes: Vec<f64>,
}

impl DirectionField {
    /// Builds a field from raw displacement vectors (px or mm, caller's choice).
    pub fn from_displacements(grid: Grid2, displacements: &[[f64; 2]]) -> Result<Self> {
        if displacements.len() != grid.len() {
            return Err(Error::arg("displacement count does not match pixel count"));
        }
        let mut directions = Vec::with_capacity(grid.len());
        let mut magnitudes = Vec::with_capacity(grid.len());
        for d in displacements {
            if !d[0].is_finite() || !d[1].is_finite() {
                return Err(Error::arg("non-finite displacement"));
            }
            let m = d[0].hypot(d[1]);
            if m > 0.0 {
                directions.push([d[0] / m, d[1] / m]);
                magnitudes.push(m);
            } else {
                directions.push([0.0, 0.0]);
                magnitudes.push(0.0);
            }
        }
        Ok(Self {
            grid,
            directions,
            magnitudes,
        })
    }

    pub fn zeros(grid: Grid2) -> Self {
        Self {
            directions: vec![[0.0, 0.0]; grid.len()],
            magnitudes: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 2] {
        self.grid.dims
    }

    pub fn directions(&self) -> &[[f64; 2]] {
        &self.directions
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    #[inline]
    pub fn direction(&self, i: usize, j: usize) -> [f64; 2] {
        self.directions[self.grid.index(i, j)]
    }

    #[inline]
    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.magnitudes[self.grid.index(i, j)]
    }

    pub fn displacement(&self, idx: usize) -> [f64; 2] {
        let d = self.directions[idx];
        let m = self.magnitudes[idx];
        [d[0] * m, d[1] * m]
    }

    pub fn displacements(&self) -> Vec<[f64; 2]> {
        (0..self.grid.len()).map(|i| self.displacement(i)).collect()
    }
}
