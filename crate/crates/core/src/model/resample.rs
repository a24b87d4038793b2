//! Isotropic resampling of scalar and label volumes.

use rayon::prelude::*;

use super::volume::{trilinear_weights, Grid3, Volume, VoxelValue};
use crate::error::{Error, Result};

/// Voxel types that know how to be interpolated onto a new lattice.
pub trait Resample: VoxelValue {
    fn resample_onto(src: &Volume<Self>, target: &Grid3) -> Vec<Self>;
}

impl Resample for f64 {
    fn resample_onto(src: &Volume<Self>, target: &Grid3) -> Vec<Self> {
        (0..target.len())
            .into_par_iter()
            .map(|idx| {
                let p = target.center_of(idx);
                trilinear_weights(src.grid(), &p)
                    .iter()
                    .map(|&(i, w)| w * src.data()[i])
                    .sum()
            })
            .collect()
    }
}

impl Resample for u16 {
    fn resample_onto(src: &Volume<Self>, target: &Grid3) -> Vec<Self> {
        let g = src.grid();
        (0..target.len())
            .into_par_iter()
            .map(|idx| {
                let v = g.to_voxel(&target.center_of(idx));
                let mut ijk = [0usize; 3];
                for a in 0..3 {
                    ijk[a] = v[a].round().clamp(0.0, (g.dims[a] - 1) as f64) as usize;
                }
                src.get(ijk[0], ijk[1], ijk[2])
            })
            .collect()
    }
}

/// Lattice covering the same physical extent at isotropic `spacing`.
pub fn isotropic_grid(grid: &Grid3, spacing: f64) -> Result<Grid3> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::arg(format!(
            "target spacing must be positive, got {spacing}"
        )));
    }
    let (lo, hi) = grid.extent();
    let mut dims = [0usize; 3];
    let mut origin = [0.0; 3];
    for a in 0..3 {
        dims[a] = (((hi[a] - lo[a]) / spacing).round() as usize).max(1);
        origin[a] = lo[a] + 0.5 * spacing;
    }
    Grid3::new(dims, [spacing; 3], origin)
}

/// Resamples to isotropic `target_spacing` mm: trilinear for scalars, nearest
/// neighbour for labels. The physical extent is preserved to within one voxel.
pub fn resample_volume<T: Resample>(v: &Volume<T>, target_spacing: f64) -> Result<Volume<T>> {
    let target = isotropic_grid(v.grid(), target_spacing)?;
    if target == *v.grid() {
        return Ok(v.clone());
    }
    let data = T::resample_onto(v, &target);
    Volume::new(target, data)
}

/// Resamples onto an explicit target lattice.
pub fn resample_onto<T: Resample>(v: &Volume<T>, target: &Grid3) -> Volume<T> {
    if target == v.grid() {
        return v.clone();
    }
    let data = T::resample_onto(v, target);
    Volume::new(*target, data).expect("resampled data matches target lattice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelVolume, ScalarVolume};

    #[test]
    fn constant_volume_stays_constant() {
        let g = Grid3::new([7, 5, 3], [0.7, 1.3, 2.0], [1.0, 2.0, 3.0]).unwrap();
        let v = ScalarVolume::filled(g, 4.25);
        for s in [0.5, 1.0, 1.7] {
            let r = resample_volume(&v, s).unwrap();
            assert!(r.data().iter().all(|&x| (x - 4.25).abs() < 1e-12));
        }
    }

    #[test]
    fn identity_resample_is_bit_identical() {
        let g = Grid3::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let v = ScalarVolume::from_fn(g, |[i, j, k]| (i * 31 + j * 7 + k) as f64 * 0.1).unwrap();
        assert_eq!(resample_volume(&v, 1.0).unwrap(), v);
    }

    #[test]
    fn box_mask_volume_preserved_2mm_to_1mm() {
        // 40x30x20 mm box occupying the interior of a 2 mm grid.
        let g = Grid3::new([30, 25, 20], [2.0; 3], [0.0; 3]).unwrap();
        let inside = |c: f64, lo: f64, hi: f64| c > lo && c < hi;
        let m = LabelVolume::from_fn(g, |[i, j, k]| {
            let p = g.to_physical([i as f64, j as f64, k as f64]);
            (inside(p.x, 9.0, 49.0) && inside(p.y, 9.0, 39.0) && inside(p.z, 9.0, 29.0)) as u16
        })
        .unwrap();
        let r = resample_volume(&m, 1.0).unwrap();
        let vol = r.count_label(1) as f64 * r.grid().voxel_volume();
        let analytic = 40.0 * 30.0 * 20.0;
        assert!((vol - analytic).abs() / analytic < 0.02, "volume {vol}");
        let (lo0, hi0) = m.grid().extent();
        let (lo1, hi1) = r.grid().extent();
        for a in 0..3 {
            assert!((lo0[a] - lo1[a]).abs() <= 1.0 && (hi0[a] - hi1[a]).abs() <= 1.0);
        }
    }

    #[test]
    fn non_positive_spacing_rejected() {
        let g = Grid3::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let v = ScalarVolume::filled(g, 0.0);
        assert!(resample_volume(&v, 0.0).is_err());
        assert!(resample_volume(&v, -1.0).is_err());
    }
}
