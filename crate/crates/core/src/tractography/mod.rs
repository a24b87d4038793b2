//! Diffusion tensor fitting, deterministic streamline tracking, smoothing and
//! uniform subset selection.

mod sampling;
mod smoothing;
mod tracking;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grid3, ScalarVolume};
pub use sampling::{farthest_streamline_sample, streamline_distance, SAMPLING_POINTS};
pub use smoothing::filter_smooth;
pub use tracking::{seed_voxels, track};

/// Diffusion-weighted volumes with their acquisition parameters.
#[derive(Debug, Clone)]
pub struct DwiStack {
    pub volumes: Vec<ScalarVolume>,
    /// s/mm²
    pub bvals: Vec<f64>,
    pub bvecs: Vec<[f64; 3]>,
}

impl DwiStack {
    pub fn validate(&self) -> Result<()> {
        let n = self.volumes.len();
        if self.bvals.len() != n || self.bvecs.len() != n {
            return Err(Error::arg("volume, b-value and b-vector counts differ"));
        }
        if n == 0 {
            return Err(Error::arg("DWI stack is empty"));
        }
        let grid = self.volumes[0].grid();
        if self.volumes.iter().any(|v| v.grid() != grid) {
            return Err(Error::arg("DWI volumes differ in geometry"));
        }
        let mut weighted = 0;
        let mut reference = 0;
        for (b, g) in self.bvals.iter().zip(&self.bvecs) {
            if !(*b >= 0.0) {
                return Err(Error::arg(format!("invalid b-value {b}")));
            }
            if *b == 0.0 {
                reference += 1;
            } else {
                let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::arg(format!("b-vector {g:?} is not unit length")));
                }
                weighted += 1;
            }
        }
        if weighted < 6 || reference < 1 {
            return Err(Error::arg(format!(
                "need at least 6 weighted and 1 reference volume, got {weighted} and {reference}"
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid3 {
        self.volumes[0].grid()
    }
}

/// Tensor components are stored as `[xx, yy, zz, xy, xz, yz]` in mm²/s.
pub type Tensor = [f64; 6];

pub fn tensor_matrix(t: &Tensor) -> Matrix3<f64> {
    Matrix3::new(t[0], t[3], t[4], t[3], t[1], t[5], t[4], t[5], t[2])
}

pub fn tensor_from_matrix(m: &Matrix3<f64>) -> Tensor {
    [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)]]
}

/// Eigenvalues in descending order with the principal eigenvector.
pub fn eigen(t: &Tensor) -> ([f64; 3], Vector3<f64>) {
    let e = SymmetricEigen::new(tensor_matrix(t));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
    let vals = order.map(|i| e.eigenvalues[i]);
    let v = e.eigenvectors.column(order[0]).into_owned();
    (vals, v.normalize())
}

pub fn fractional_anisotropy(l: &[f64; 3]) -> f64 {
    let den = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
    if den <= 0.0 {
        return 0.0;
    }
    let num = (l[0] - l[1]).powi(2) + (l[1] - l[2]).powi(2) + (l[2] - l[0]).powi(2);
    (0.5 * num / den).sqrt().clamp(0.0, 1.0)
}

/// Per-voxel tensors with derived anisotropy and principal direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid3,
    tensors: Vec<Tensor>,
    fa: Vec<f64>,
    principal: Vec<Vector3<f64>>,
}

impl TensorField {
    pub fn new(grid: Grid3, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != grid.len() {
            return Err(Error::arg("tensor count does not match voxel count"));
        }
        if tensors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite tensor component"));
        }
        let (fa, principal) = tensors
            .par_iter()
            .map(|t| {
                let (l, v) = eigen(t);
                (fractional_anisotropy(&l), v)
            })
            .unzip();
        Ok(Self {
            grid,
            tensors,
            fa,
            principal,
        })
    }

    pub fn from_fn(grid: Grid3, f: impl Fn(nalgebra::Point3<f64>) -> Tensor + Sync) -> Result<Self> {
        let tensors = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.center_of(idx)))
            .collect();
        Self::new(grid, tensors)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn fa(&self) -> &[f64] {
        &self.fa
    }

    pub fn principal(&self) -> &[Vector3<f64>] {
        &self.principal
    }

    /// Componentwise trilinear interpolation at a physical point.
    pub fn interpolate(&self, p: &nalgebra::Point3<f64>) -> Tensor {
        let mut out = [0.0; 6];
        for (idx, w) in crate::model::volume::trilinear_weights(&self.grid, p) {
            let t = &self.tensors[idx];
            for c in 0..6 {
                out[c] += w * t[c];
            }
        }
        out
    }
}

/// Smallest signal used before taking logarithms.
const SIGNAL_FLOOR: f64 = 1e-6;

fn design_row(b: f64, g: &[f64; 3]) -> [f64; 7] {
    [
        -b * g[0] * g[0],
        -b * g[1] * g[1],
        -b * g[2] * g[2],
        -2.0 * b * g[0] * g[1],
        -2.0 * b * g[0] * g[2],
        -2.0 * b * g[1] * g[2],
        1.0,
    ]
}

/// Log-linear least-squares tensor fit of `S = S0 exp(-b gᵀ D g)` per voxel.
pub fn fit_tensor(dwi: &DwiStack) -> Result<TensorField> {
    dwi.validate()?;
    let n = dwi.volumes.len();
    let design = DMatrix::from_fn(n, 7, |r, c| design_row(dwi.bvals[r], &dwi.bvecs[r])[c]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    if rank < 7 {
        return Err(Error::arg(format!(
            "gradient directions do not determine a tensor (design rank {rank} < 7)"
        )));
    }
    let pinv = svd
        .pseudo_inverse(1e-10 * smax)
        .map_err(|e| Error::Internal(e.to_string()))?;
    let grid = *dwi.grid();
    let tensors: Vec<Tensor> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let y = DVector::from_fn(n, |r, _| dwi.volumes[r].data()[idx].max(SIGNAL_FLOOR).ln());
            let x = &pinv * y;
            [x[0], x[1], x[2], x[3], x[4], x[5]]
        })
        .collect();
    TensorField::new(grid, tensors)
}

/// Noise-free signal of tensor `d` for one acquisition.
pub fn forward_signal(s0: f64, b: f64, g: &[f64; 3], d: &Tensor) -> f64 {
    let row = design_row(b, g);
    let e: f64 = (0..6).map(|c| row[c] * d[c]).sum();
    s0 * e.exp()
}

/// Roughly uniform unit directions on the upper hemisphere (Fibonacci lattice).
pub fn hemisphere_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    /// Integration step, mm.
    pub step: f64,
    pub fa_min: f64,
    /// Largest direction change per step, degrees.
    pub max_turn: f64,
    /// Shorter streamlines are discarded, mm.
    pub min_length: f64,
    pub target_count: usize,
    pub candidate_count: usize,
    pub poly_order: usize,
    /// Seed of the PRNG that orders candidate seed voxels.
    pub seed: u64,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            step: 1.0,
            fa_min: 0.1,
            max_turn: 20.0,
            min_length: 10.0,
            target_count: 3000,
            candidate_count: 10_000,
            poly_order: 3,
            seed: 0x5eed,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::arg("step must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fa_min) {
            return Err(Error::arg("fa_min must lie in [0, 1]"));
        }
        if !(self.max_turn > 0.0 && self.max_turn < 90.0) {
            return Err(Error::arg("max_turn must lie in (0, 90) degrees"));
        }
        if !(self.min_length >= 0.0) {
            return Err(Error::arg("min_length must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn protocol() -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut bvals = vec![0.0; 4];
        let mut bvecs = vec![[0.0; 3]; 4];
        for g in hemisphere_directions(12) {
            bvals.push(400.0);
            bvecs.push(g);
        }
        (bvals, bvecs)
    }

    fn stack_for(d: &Tensor, noise: f64, seed: u64) -> DwiStack {
        let g = Grid3::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let (bvals, bvecs) = protocol();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let volumes = bvals
            .iter()
            .zip(&bvecs)
            .map(|(&b, gv)| {
                let s = forward_signal(1000.0, b, gv, d);
                ScalarVolume::from_fn(g, |_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    s + noise * 1000.0 * e
                })
                .unwrap()
            })
            .collect();
        DwiStack {
            volumes,
            bvals,
            bvecs,
        }
    }

    #[test]
    fn isotropic_tensor_has_zero_fa() {
        let d = [1e-3, 1e-3, 1e-3, 0.0, 0.0, 0.0];
        let f = fit_tensor(&stack_for(&d, 0.0, 1)).unwrap();
        assert!(f.fa().iter().all(|&a| a.abs() < 1e-6));
    }

    #[test]
    fn recovers_prolate_tensor_exactly() {
        let d = [2e-3, 4e-4, 4e-4, 0.0, 0.0, 0.0];
        let f = fit_tensor(&stack_for(&d, 0.0, 1)).unwrap();
        let (l, v) = eigen(&f.tensors()[13]);
        assert!((l[0] - 2e-3).abs() < 1e-9);
        assert!((l[1] - 4e-4).abs() < 1e-9 && (l[2] - 4e-4).abs() < 1e-9);
        assert!(v.x.abs() > 1.0 - 1e-9);
    }

    #[test]
    fn recovers_arbitrary_spd_tensor() {
        let r = Rotation3::from_euler_angles(0.3, -0.7, 1.2);
        let m = r * Matrix3::from_diagonal(&Vector3::new(1.7e-3, 6e-4, 2e-4)) * r.transpose();
        let d = tensor_from_matrix(&m);
        let f = fit_tensor(&stack_for(&d, 0.0, 1)).unwrap();
        for (a, b) in f.tensors()[0].iter().zip(&d) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_fit_keeps_principal_axis() {
        let d = [2e-3, 4e-4, 4e-4, 0.0, 0.0, 0.0];
        let f = fit_tensor(&stack_for(&d, 0.01, 9)).unwrap();
        for v in f.principal() {
            let ang = v.x.abs().clamp(0.0, 1.0).acos().to_degrees();
            assert!(ang < 5.0, "axis error {ang}°");
        }
    }

    #[test]
    fn residual_is_rotation_equivariant() {
        let d = [1.5e-3, 5e-4, 3e-4, 1e-4, 0.0, -2e-4];
        let base = stack_for(&d, 0.0, 1);
        let r = Rotation3::from_euler_angles(0.4, 0.1, -0.9);
        let dr = tensor_from_matrix(&(r * tensor_matrix(&d) * r.transpose()));
        let rotated = DwiStack {
            bvecs: base
                .bvecs
                .iter()
                .map(|g| {
                    let v = r * Vector3::new(g[0], g[1], g[2]);
                    [v.x, v.y, v.z]
                })
                .collect(),
            ..base.clone()
        };
        // Signals stay the same when both gradients and tensor rotate together.
        for (k, g) in rotated.bvecs.iter().enumerate() {
            let s = forward_signal(1000.0, rotated.bvals[k], g, &dr);
            assert!((s - base.volumes[k].data()[0]).abs() < 1e-9);
        }
        let f = fit_tensor(&rotated).unwrap();
        for (a, b) in f.tensors()[0].iter().zip(&dr) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_gradients_rejected() {
        let mut s = stack_for(&[1e-3, 1e-3, 1e-3, 0.0, 0.0, 0.0], 0.0, 1);
        for g in s.bvecs.iter_mut().skip(4) {
            *g = [1.0, 0.0, 0.0];
        }
        assert!(matches!(fit_tensor(&s), Err(Error::Argument(_))));
    }

    #[test]
    fn protocol_directions_are_unit() {
        for g in hemisphere_directions(12) {
            assert!(((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
