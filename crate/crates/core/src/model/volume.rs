//! Voxel grids with physical geometry.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i*sx, j*sy, k*sz)` mm. Data is
//! stored with x varying fastest. The z axis runs distal to proximal along the
//! forearm.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of a voxel lattice in physical space (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::arg(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::arg(format!(
                "voxel spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::arg("origin must be finite"));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Physical position of a (possibly fractional) voxel coordinate.
    #[inline]
    pub fn to_physical(&self, v: [f64; 3]) -> Point3<f64> {
        Point3::new(
            self.origin[0] + v[0] * self.spacing[0],
            self.origin[1] + v[1] * self.spacing[1],
            self.origin[2] + v[2] * self.spacing[2],
        )
    }

    /// Fractional voxel coordinate of a physical point.
    #[inline]
    pub fn to_voxel(&self, p: &Point3<f64>) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn center_of(&self, idx: usize) -> Point3<f64> {
        let [i, j, k] = self.ijk(idx);
        self.to_physical([i as f64, j as f64, k as f64])
    }

    /// Index of the voxel whose cell contains `p`, if any.
    pub fn nearest_voxel(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let v = self.to_voxel(p);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = v[a].round();
            if !(r >= 0.0 && r < self.dims[a] as f64) {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    /// Physical extent covered by the voxel cells, as (min corner, max corner).
    pub fn extent(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin[a] - 0.5 * self.spacing[a];
            hi[a] = lo[a] + self.dims[a] as f64 * self.spacing[a];
        }
        (lo, hi)
    }
}

/// Values storable in a [`Volume`].
pub trait VoxelValue: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    fn is_valid(&self) -> bool;
}

impl VoxelValue for f64 {
    fn is_valid(&self) -> bool {
        self.is_finite()
    }
}

impl VoxelValue for u16 {
    fn is_valid(&self) -> bool {
        true
    }
}

/// A 3D voxel grid with physical geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: Grid3,
    data: Vec<T>,
}

/// Anatomical or diffusion-weighted intensities.
pub type ScalarVolume = Volume<f64>;

/// Categorical masks: 0 is background, 1..K are muscle or compartment labels.
pub type LabelVolume = Volume<u16>;

impl<T: VoxelValue> Volume<T> {
    pub fn new(grid: Grid3, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::arg(format!(
                "volume data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_valid()) {
            return Err(Error::arg(format!("non-finite voxel value at index {bad}")));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: Grid3, value: T) -> Self {
        Self {
            data: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid3, mut f: impl FnMut([usize; 3]) -> T) -> Result<Self> {
        let data = (0..grid.len()).map(|idx| f(grid.ijk(idx))).collect();
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    /// Value of the voxel whose cell contains `p`.
    pub fn at_point(&self, p: &Point3<f64>) -> Option<T> {
        self.grid
            .nearest_voxel(p)
            .map(|[i, j, k]| self.get(i, j, k))
    }

    /// Same geometry with different data, without re-validation of values.
    pub(crate) fn with_data<U: VoxelValue>(&self, data: Vec<U>) -> Volume<U> {
        debug_assert_eq!(data.len(), self.grid.len());
        Volume {
            grid: self.grid,
            data,
        }
    }
}

impl LabelVolume {
    pub fn count_label(&self, label: u16) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Labels present in the volume, ascending, excluding background.
    pub fn labels(&self) -> Vec<u16> {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.data {
            if l != 0 {
                seen.insert(l);
            }
        }
        seen.into_iter().collect()
    }

    /// All non-background voxels relabelled to 1.
    pub fn merged(&self) -> LabelVolume {
        self.with_data(self.data.iter().map(|&l| (l != 0) as u16).collect())
    }

    /// Physical centroid of all voxels carrying `label`.
    pub fn label_centroid(&self, label: u16) -> Option<Point3<f64>> {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (idx, &l) in self.data.iter().enumerate() {
            if l == label {
                let c = self.grid.center_of(idx);
                sum[0] += c.x;
                sum[1] += c.y;
                sum[2] += c.z;
                n += 1;
            }
        }
        (n > 0).then(|| {
            let n = n as f64;
            Point3::new(sum[0] / n, sum[1] / n, sum[2] / n)
        })
    }
}

impl ScalarVolume {
    /// Trilinear interpolation at a physical point, clamping to the border voxels.
    pub fn sample_trilinear(&self, p: &Point3<f64>) -> f64 {
        let w = trilinear_weights(&self.grid, p);
        w.iter().map(|&(idx, wt)| wt * self.data[idx]).sum()
    }
}

/// The eight neighbouring voxel indices and weights for trilinear interpolation
/// at `p`, with coordinates clamped to the grid.
pub(crate) fn trilinear_weights(grid: &Grid3, p: &Point3<f64>) -> [(usize, f64); 8] {
    let v = grid.to_voxel(p);
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let n = grid.dims[a];
        let c = v[a].clamp(0.0, (n - 1) as f64);
        let f = c.floor();
        let mut b = f as usize;
        let mut t = c - f;
        if b + 1 >= n {
            b = n.saturating_sub(2);
            t = if n == 1 { 0.0 } else { c - b as f64 };
        }
        base[a] = b;
        frac[a] = t;
    }
    let mut out = [(0usize, 0.0); 8];
    let mut slot = 0;
    for dk in 0..2 {
        for dj in 0..2 {
            for di in 0..2 {
                let wx = if di == 0 { 1.0 - frac[0] } else { frac[0] };
                let wy = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                let wz = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                let i = (base[0] + di).min(grid.dims[0] - 1);
                let j = (base[1] + dj).min(grid.dims[1] - 1);
                let k = (base[2] + dk).min(grid.dims[2] - 1);
                out[slot] = (grid.index(i, j, k), wx * wy * wz);
                slot += 1;
            }
        }
    }
    out
}
