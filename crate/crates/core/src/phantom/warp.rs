use std::f64::consts::PI;

use nalgebra::{Matrix2, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Contour;

/// Smooth planar deformation from ultrasound to MRI slice coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Warp {
    Identity,
    Affine {
        matrix: [[f64; 2]; 2],
        offset: [f64; 2],
    },
    /// Sinusoidal displacement `a/√2 (sin k(y-cy), sin k(x-cx))` with
    /// `k = π / 2r` and `a = amplitude * r`, followed by a translation.
    Bump {
        center: [f64; 2],
        radius: f64,
        amplitude: f64,
        #[serde(default)]
        offset: [f64; 2],
    },
}

impl Warp {
    pub fn apply(&self, p: &Point2<f64>) -> Point2<f64> {
        match self {
            Warp::Identity => *p,
            Warp::Affine { matrix, offset } => {
                let m = Matrix2::new(matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
                Point2::from(m * p.coords + Vector2::from(*offset))
            }
            Warp::Bump {
                center,
                radius,
                amplitude,
                offset,
            } => {
                let k = PI / (2.0 * radius);
                let a = amplitude * radius / 2f64.sqrt();
                Point2::new(
                    p.x + a * (k * (p.y - center[1])).sin() + offset[0],
                    p.y + a * (k * (p.x - center[0])).sin() + offset[1],
                )
            }
        }
    }

    /// Preimage of `p`. Bumps are inverted by fixed-point iteration, which
    /// converges while the displacement stays contractive.
    pub fn invert(&self, p: &Point2<f64>) -> Point2<f64> {
        match self {
            Warp::Identity => *p,
            Warp::Affine { matrix, offset } => {
                let m = Matrix2::new(matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
                let inv = m.try_inverse().unwrap_or_else(Matrix2::identity);
                Point2::from(inv * (p.coords - Vector2::from(*offset)))
            }
            Warp::Bump { .. } => {
                let mut q = *p;
                for _ in 0..200 {
                    let r = self.apply(&q) - p;
                    q -= r;
                    if r.norm() < 1e-13 {
                        break;
                    }
                }
                q
            }
        }
    }

    /// Jacobian determinant by central differences.
    pub fn jacobian_det(&self, p: &Point2<f64>) -> f64 {
        let h = 1e-4;
        let dx = (self.apply(&(p + Vector2::new(h, 0.0))) - self.apply(&(p - Vector2::new(h, 0.0)))) / (2.0 * h);
        let dy = (self.apply(&(p + Vector2::new(0.0, h))) - self.apply(&(p - Vector2::new(0.0, h)))) / (2.0 * h);
        dx.x * dy.y - dx.y * dy.x
    }

    /// Fails unless the Jacobian determinant is positive on a lattice over
    /// the box `[lo, hi]`.
    pub fn check_diffeomorphic(&self, lo: Point2<f64>, hi: Point2<f64>, step: f64) -> Result<()> {
        let nx = ((hi.x - lo.x) / step).ceil() as usize;
        let ny = ((hi.y - lo.y) / step).ceil() as usize;
        for j in 0..=ny {
            for i in 0..=nx {
                let p = Point2::new(lo.x + i as f64 * step, lo.y + j as f64 * step);
                let det = self.jacobian_det(&p);
                if !(det > 0.0) {
                    return Err(Error::arg(format!(
                        "warp folds at ({:.2}, {:.2}): Jacobian determinant {det:.3}",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply_contour(&self, c: &Contour, max_segment: f64) -> Result<Contour> {
        let pts = c.densified(max_segment).iter().map(|p| self.apply(p)).collect();
        Contour::new(pts, c.slice_z(), c.label())
    }
}

/// Ellipse polygon with `n` vertices.
pub fn ellipse(center: [f64; 2], radii: [f64; 2], n: usize, slice_z: f64, label: u16) -> Result<Contour> {
    let pts = (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            Point2::new(center[0] + radii[0] * t.cos(), center[1] + radii[1] * t.sin())
        })
        .collect();
    Contour::new(pts, slice_z, label)
}

/// The part of an ellipse with `x < cx` (`left`) or `x > cx`, closed along
/// the minor chord.
pub fn half_ellipse(
    center: [f64; 2],
    radii: [f64; 2],
    n: usize,
    slice_z: f64,
    label: u16,
    left: bool,
) -> Result<Contour> {
    let start = if left { PI / 2.0 } else { -PI / 2.0 };
    let mut pts: Vec<Point2<f64>> = (0..=n)
        .map(|k| {
            let t = start + PI * k as f64 / n as f64;
            Point2::new(center[0] + radii[0] * t.cos(), center[1] + radii[1] * t.sin())
        })
        .collect();
    // Intermediate points on the chord keep it well sampled under warps.
    let m = n / 2;
    let (a, b) = (pts[n], pts[0]);
    pts.extend((1..m).map(|k| a + (b - a) * (k as f64 / m as f64)));
    Contour::new(pts, slice_z, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationPairSpec {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    #[serde(default)]
    pub slice_z: f64,
    #[serde(default = "default_vertices")]
    pub vertices: usize,
    pub warp: Warp,
}

fn default_vertices() -> usize {
    128
}

/// Ultrasound-side outline and compartment, the warped MRI-side outline, and
/// the warped compartment as ground truth.
#[derive(Debug, Clone)]
pub struct RegistrationPair {
    pub us_outline: Contour,
    pub us_compartment: Contour,
    pub mri_outline: Contour,
    pub truth_compartment: Contour,
}

/// Elliptic muscle outline whose left half is the compartment.
pub fn make_registration_pair(spec: &RegistrationPairSpec) -> Result<RegistrationPair> {
    let us_outline = ellipse(spec.center, spec.radii, spec.vertices, spec.slice_z, 0)?;
    let us_compartment = half_ellipse(spec.center, spec.radii, spec.vertices / 2, spec.slice_z, 1, true)?;
    let (lo, hi) = us_outline.bounds();
    let margin = 0.1 * spec.radii[0].max(spec.radii[1]);
    let step = spec.radii[0].min(spec.radii[1]) / 50.0;
    spec.warp.check_diffeomorphic(
        lo - Vector2::new(margin, margin),
        hi + Vector2::new(margin, margin),
        step,
    )?;
    let seg = step * 10.0;
    Ok(RegistrationPair {
        mri_outline: spec.warp.apply_contour(&us_outline, seg)?,
        truth_compartment: spec.warp.apply_contour(&us_compartment, seg)?,
        us_outline,
        us_compartment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(warp: Warp) -> RegistrationPairSpec {
        RegistrationPairSpec {
            center: [0.0, 0.0],
            radii: [20.0, 12.0],
            slice_z: 3.0,
            vertices: 96,
            warp,
        }
    }

    #[test]
    fn identity_keeps_both_sides() {
        let p = make_registration_pair(&spec(Warp::Identity)).unwrap();
        assert!((p.us_outline.area() - p.mri_outline.area()).abs() < 1e-9);
        assert!((p.us_compartment.area() - p.truth_compartment.area()).abs() < 1e-9);
        assert!((p.us_compartment.area() - 0.5 * p.us_outline.area()).abs() < 1e-6);
        assert_eq!(p.truth_compartment.slice_z(), 3.0);
    }

    #[test]
    fn affine_truth_is_affine_image() {
        let w = Warp::Affine {
            matrix: [[1.1, 0.2], [-0.1, 0.9]],
            offset: [4.0, -2.0],
        };
        let p = make_registration_pair(&spec(w.clone())).unwrap();
        let det = 1.1 * 0.9 + 0.2 * 0.1;
        assert!((p.mri_outline.area() - det * p.us_outline.area()).abs() < 1e-6);
        let c = p.us_compartment.centroid();
        let mapped = w.apply(&c);
        assert!((p.truth_compartment.centroid() - mapped).norm() < 1e-6);
    }

    #[test]
    fn bump_is_diffeomorphic_and_bounded() {
        let w = Warp::Bump {
            center: [0.0, 0.0],
            radius: 20.0,
            amplitude: 0.1,
            offset: [0.0, 0.0],
        };
        let p = make_registration_pair(&spec(w.clone())).unwrap();
        // Analytic determinant 1 - (a k)^2 cos cos against the numerical one.
        let k = PI / 40.0;
        let a = 2.0 / 2f64.sqrt();
        for q in [Point2::new(3.0, -4.0), Point2::new(-11.0, 7.5), Point2::origin()] {
            let want = 1.0 - (a * k).powi(2) * (k * q.y).cos() * (k * q.x).cos();
            assert!((w.jacobian_det(&q) - want).abs() < 1e-6);
        }
        let max_disp = p
            .us_outline
            .points()
            .iter()
            .map(|q| (w.apply(q) - q).norm())
            .fold(0.0, f64::max);
        assert!(max_disp <= 2.0 + 1e-9);
        assert!(p.mri_outline.len() >= p.us_outline.len());
    }

    #[test]
    fn folding_warp_rejected() {
        let w = Warp::Bump {
            center: [0.0, 0.0],
            radius: 10.0,
            amplitude: 1.5,
            offset: [0.0, 0.0],
        };
        assert!(matches!(make_registration_pair(&spec(w)), Err(Error::Argument(_))));
        let flip = Warp::Affine {
            matrix: [[-1.0, 0.0], [0.0, 1.0]],
            offset: [0.0, 0.0],
        };
        assert!(make_registration_pair(&spec(flip)).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let warps = [
            Warp::Bump {
                center: [1.0, 2.0],
                radius: 14.0,
                amplitude: 0.1,
                offset: [4.0, 3.0],
            },
            Warp::Affine {
                matrix: [[1.1, 0.2], [-0.1, 0.9]],
                offset: [4.0, -2.0],
            },
        ];
        for w in warps {
            for p in [Point2::new(3.0, -4.0), Point2::new(20.0, 16.0)] {
                assert!((w.invert(&w.apply(&p)) - p).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn warp_json_round_trip() {
        let w = Warp::Bump {
            center: [1.0, 2.0],
            radius: 3.0,
            amplitude: 0.1,
            offset: [0.5, 0.0],
        };
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains("\"type\":\"bump\""));
        assert_eq!(serde_json::from_str::<Warp>(&s).unwrap(), w);
    }
}
