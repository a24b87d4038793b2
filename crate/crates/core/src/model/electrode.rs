//! High-density surface electrode grids.

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One or more electrode grids stacked along their row axis and treated as a
/// single logical map.
///
/// Electrode `(r, c)` sits at `(c * pitch, r * pitch + (r / rows_per_grid) * gap)`
/// in the grid frame, where `gap` is the extra spacing between stacked grids.
/// Channels are numbered row-major over the logical map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeGrid {
    pub rows_per_grid: usize,
    pub cols: usize,
    pub grids: usize,
    pub pitch_mm: f64,
    #[serde(default)]
    pub inter_grid_gap_mm: f64,
    pub pose: GridPose,
}

/// Placement of the grid frame on the forearm surface, in mask coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPose {
    /// Position of electrode (0, 0).
    pub origin: [f64; 3],
    /// Direction of increasing column index.
    pub axis_u: [f64; 3],
    /// Direction of increasing row index.
    pub axis_v: [f64; 3],
}

impl GridPose {
    pub fn axis_aligned(origin: [f64; 3]) -> Self {
        Self {
            origin,
            axis_u: [1.0, 0.0, 0.0],
            axis_v: [0.0, 1.0, 0.0],
        }
    }

    pub fn u(&self) -> Vector3<f64> {
        Vector3::from(self.axis_u)
    }

    pub fn v(&self) -> Vector3<f64> {
        Vector3::from(self.axis_v)
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.u().cross(&self.v())
    }

    pub fn validate(&self) -> Result<()> {
        let (u, v) = (self.u(), self.v());
        let tol = 1e-9;
        if (u.norm() - 1.0).abs() > tol || (v.norm() - 1.0).abs() > tol || u.dot(&v).abs() > tol {
            return Err(Error::arg("grid frame axes must be orthonormal"));
        }
        if self.origin.iter().any(|c| !c.is_finite()) {
            return Err(Error::arg("grid origin must be finite"));
        }
        Ok(())
    }

    /// Grid-frame coordinates of a 3D point projected along the normal.
    pub fn project(&self, p: &Point3<f64>) -> Point2<f64> {
        let d = p - Point3::from(self.origin);
        Point2::new(d.dot(&self.u()), d.dot(&self.v()))
    }

    /// 3D position of a grid-frame point lying on the grid plane.
    pub fn lift(&self, q: &Point2<f64>) -> Point3<f64> {
        Point3::from(self.origin) + self.u() * q.x + self.v() * q.y
    }
}

impl ElectrodeGrid {
    /// Two 5×13 grids at 8 mm pitch stacked without extra gap.
    pub fn dual_5x13(pose: GridPose) -> Self {
        Self {
            rows_per_grid: 5,
            cols: 13,
            grids: 2,
            pitch_mm: 8.0,
            inter_grid_gap_mm: 0.0,
            pose,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows_per_grid == 0 || self.cols == 0 || self.grids == 0 {
            return Err(Error::arg("electrode grid must have at least one electrode"));
        }
        if !(self.pitch_mm > 0.0) || !self.pitch_mm.is_finite() {
            return Err(Error::arg("electrode pitch must be positive"));
        }
        if !(self.inter_grid_gap_mm >= 0.0) {
            return Err(Error::arg("inter-grid gap must be non-negative"));
        }
        self.pose.validate()
    }

    pub fn rows(&self) -> usize {
        self.rows_per_grid * self.grids
    }

    pub fn electrode_count(&self) -> usize {
        self.rows() * self.cols
    }

    /// Grid-frame position (mm) of channel `ch`.
    pub fn position(&self, ch: usize) -> Point2<f64> {
        let r = ch / self.cols;
        let c = ch % self.cols;
        let grid = r / self.rows_per_grid;
        Point2::new(
            c as f64 * self.pitch_mm,
            r as f64 * self.pitch_mm + grid as f64 * self.inter_grid_gap_mm,
        )
    }

    pub fn positions(&self) -> Vec<Point2<f64>> {
        (0..self.electrode_count()).map(|c| self.position(c)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_grid_layout() {
        let g = ElectrodeGrid::dual_5x13(GridPose::axis_aligned([0.0; 3]));
        g.validate().unwrap();
        assert_eq!(g.electrode_count(), 130);
        assert_eq!(g.position(14), Point2::new(8.0, 8.0));
        assert_eq!(g.position(129), Point2::new(96.0, 72.0));
    }

    #[test]
    fn non_orthonormal_frame_rejected() {
        let mut pose = GridPose::axis_aligned([0.0; 3]);
        pose.axis_v = [0.1, 1.0, 0.0];
        assert!(pose.validate().is_err());
    }
}
