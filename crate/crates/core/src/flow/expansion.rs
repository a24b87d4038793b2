//! Local quadratic polynomial expansion of an image by weighted least squares.
//!
//! Around every pixel the signal is approximated as
//! `f(x + p) ≈ pᵀ A p + bᵀ p + c` with Gaussian applicability over a
//! `(2n+1)²` window. The basis `{1, x, y, x², y², xy}` and the Gaussian weight
//! are both separable, so the six weighted moments are computed with 1D passes
//! and mapped to coefficients through the inverse Gram matrix.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

/// Per-pixel expansion coefficients.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub nx: usize,
    pub ny: usize,
    /// `[b_x, b_y, a_xx, a_yy, a_xy]` with `A = [[a_xx, a_xy], [a_xy, a_yy]]`.
    pub coeffs: Vec<[f64; 5]>,
}

/// Clamped-border separable correlation along x then y.
pub(crate) fn separable(data: &[f64], nx: usize, ny: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0.0; nx * ny];
    tmp.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        let src = &data[j * nx..(j + 1) * nx];
        for (i, out) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, &w) in kx.iter().enumerate() {
                let ii = (i as isize + t as isize - rx).clamp(0, nx as isize - 1) as usize;
                s += w * src[ii];
            }
            *out = s;
        }
    });
    let mut out = vec![0.0; nx * ny];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        for (i, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, &w) in ky.iter().enumerate() {
                let jj = (j as isize + t as isize - ry).clamp(0, ny as isize - 1) as usize;
                s += w * tmp[jj * nx + i];
            }
            *o = s;
        }
    });
    out
}

pub(crate) fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Expands `data` (row-major, x fastest) with window radius `n` and Gaussian
/// applicability `sigma`, both in pixels.
pub fn expand(data: &[f64], nx: usize, ny: usize, n: usize, sigma: f64) -> Expansion {
    let r = n as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let gx: Vec<f64> = (-r..=r).zip(&g).map(|(x, w)| x as f64 * w).collect();
    let gxx: Vec<f64> = (-r..=r).zip(&g).map(|(x, w)| (x * x) as f64 * w).collect();

    // Gram matrix of the weighted basis over the full window.
    let basis = |x: f64, y: f64| Vector6::new(1.0, x, y, x * x, y * y, x * y);
    let mut gram = Matrix6::zeros();
    for (a, &wa) in (-r..=r).zip(&g) {
        for (b, &wb) in (-r..=r).zip(&g) {
            let v = basis(a as f64, b as f64);
            gram += v * v.transpose() * (wa * wb);
        }
    }
    let ginv = gram
        .try_inverse()
        .expect("polynomial expansion Gram matrix is positive definite for n >= 1");

    // Weighted moments Σ w(p) m(p) f(x+p) for m in the basis.
    let moments = [
        separable(data, nx, ny, &g, &g),
        separable(data, nx, ny, &gx, &g),
        separable(data, nx, ny, &g, &gx),
        separable(data, nx, ny, &gxx, &g),
        separable(data, nx, ny, &g, &gxx),
        separable(data, nx, ny, &gx, &gx),
    ];
    let coeffs = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let m = Vector6::from_fn(|k, _| moments[k][idx]);
            let c = ginv * m;
            [c[1], c[2], c[3], c[4], 0.5 * c[5]]
        })
        .collect();
    Expansion { nx, ny, coeffs }
}

impl Expansion {
    /// Bilinear interpolation of coefficients at a fractional pixel position,
    /// clamped to the raster.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 5] {
        let xc = x.clamp(0.0, (self.nx - 1) as f64);
        let yc = y.clamp(0.0, (self.ny - 1) as f64);
        let x0 = (xc.floor() as usize).min(self.nx.saturating_sub(2));
        let y0 = (yc.floor() as usize).min(self.ny.saturating_sub(2));
        let x1 = (x0 + 1).min(self.nx - 1);
        let y1 = (y0 + 1).min(self.ny - 1);
        let tx = xc - x0 as f64;
        let ty = yc - y0 as f64;
        let c00 = &self.coeffs[y0 * self.nx + x0];
        let c10 = &self.coeffs[y0 * self.nx + x1];
        let c01 = &self.coeffs[y1 * self.nx + x0];
        let c11 = &self.coeffs[y1 * self.nx + x1];
        let mut out = [0.0; 5];
        for k in 0..5 {
            out[k] = (1.0 - ty) * ((1.0 - tx) * c00[k] + tx * c10[k])
                + ty * ((1.0 - tx) * c01[k] + tx * c11[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_quadratic() {
        let (nx, ny) = (32, 32);
        let f = |x: f64, y: f64| 0.3 * x * x - 0.2 * y * y + 0.15 * x * y + 1.5 * x - 0.7 * y + 4.0;
        let data: Vec<f64> = (0..nx * ny)
            .map(|k| f((k % nx) as f64, (k / nx) as f64))
            .collect();
        let e = expand(&data, nx, ny, 4, 1.2);
        // At pixel (x0, y0): gradient b = (0.6 x0 + 0.15 y0 + 1.5, -0.4 y0 + 0.15 x0 - 0.7).
        let (x0, y0) = (15.0, 12.0);
        let c = e.coeffs[12 * nx + 15];
        assert!((c[0] - (0.6 * x0 + 0.15 * y0 + 1.5)).abs() < 1e-9);
        assert!((c[1] - (-0.4 * y0 + 0.15 * x0 - 0.7)).abs() < 1e-9);
        assert!((c[2] - 0.3).abs() < 1e-9);
        assert!((c[3] + 0.2).abs() < 1e-9);
        assert!((c[4] - 0.075).abs() < 1e-9);
    }
}
