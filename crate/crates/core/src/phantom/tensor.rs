use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng;
use crate::architecture::Region;
use crate::error::{Error, Result};
use crate::model::{Grid3, LabelVolume, ScalarVolume};
use crate::tractography::{forward_signal, hemisphere_directions, tensor_from_matrix, DwiStack, Tensor, TensorField};

/// Muscle shape; the long axis is z and voxels are 1 mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Geometry {
    Box { size_mm: [usize; 3] },
    /// Elliptic cylinder of the given semi-axes.
    Cylinder { radii_mm: [f64; 2], length_mm: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FiberModel {
    #[default]
    Axial,
    /// Two mirrored halves (split along x by a one-voxel unlabelled gap) whose
    /// fibers lean `±theta` from z toward the outer faces.
    Pennate { theta_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "split", rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Single,
    /// Consecutive compartments along x, labelled 1.. from low x.
    SplitX { widths_mm: Vec<usize> },
    /// Consecutive compartments along z; they truncate axial fibers.
    SplitZ { lengths_mm: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwiProtocol {
    pub b_value: f64,
    pub directions: usize,
    pub references: usize,
    pub s0: f64,
    /// Gaussian noise standard deviation relative to `s0`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DwiProtocol {
    fn default() -> Self {
        Self {
            b_value: 400.0,
            directions: 12,
            references: 4,
            s0: 1000.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorPhantomSpec {
    pub geometry: Geometry,
    #[serde(default)]
    pub fiber: FiberModel,
    #[serde(default)]
    pub layout: Layout,
    /// Background voxels on every side.
    #[serde(default = "default_margin")]
    pub margin: usize,
    /// Tensor eigenvalues along and across the fibers, mm²/s.
    #[serde(default = "default_eigenvalues")]
    pub eigenvalues: [f64; 3],
    #[serde(default)]
    pub dwi: Option<DwiProtocol>,
}

fn default_margin() -> usize {
    1
}

fn default_eigenvalues() -> [f64; 3] {
    [2.0e-3, 4.0e-4, 4.0e-4]
}

/// Architecture implied by the phantom geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub region: Region,
    pub fl_mm: f64,
    pub pa_deg: f64,
    pub mv_mm3: f64,
    pub pcsa_mm2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ml_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_fraction: Option<f64>,
}

impl RegionTruth {
    fn new(region: Region, fl: f64, pa: f64, mv: f64, ml: Option<f64>, fraction: Option<f64>) -> Self {
        Self {
            region,
            fl_mm: fl,
            pa_deg: pa,
            mv_mm3: mv,
            pcsa_mm2: mv * pa.to_radians().cos() / fl,
            ml_mm: ml,
            volume_fraction: fraction,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorPhantom {
    pub field: TensorField,
    pub mask: LabelVolume,
    pub dwi: Option<DwiStack>,
    /// Whole muscle first, then compartments by label.
    pub truth: Vec<RegionTruth>,
}

/// Cylindrically symmetric tensor with principal direction `e`.
pub fn stick(e: &Vector3<f64>, l: &[f64; 3]) -> Tensor {
    let e = e.normalize();
    let m = Matrix3::identity() * l[1] + e * e.transpose() * (l[0] - l[1]);
    tensor_from_matrix(&m)
}

type PointFn<T> = Box<dyn Fn(&nalgebra::Point3<f64>) -> T + Sync>;

pub fn make_tensor_phantom(spec: &TensorPhantomSpec) -> Result<TensorPhantom> {
    let l = spec.eigenvalues;
    if !(l[0] > l[1] && l[1] > 0.0 && l[2] > 0.0) {
        return Err(Error::arg("eigenvalues must be positive with a dominant first value"));
    }
    let m = spec.margin;
    // Extent in voxels along x, y, z.
    let size: [usize; 3] = match &spec.geometry {
        Geometry::Box { size_mm } => *size_mm,
        Geometry::Cylinder { radii_mm, length_mm } => {
            if !(radii_mm[0] > 0.0 && radii_mm[1] > 0.0) {
                return Err(Error::arg("cylinder radii must be positive"));
            }
            [
                (2.0 * radii_mm[0]).ceil() as usize,
                (2.0 * radii_mm[1]).ceil() as usize,
                *length_mm,
            ]
        }
    };
    if size.contains(&0) {
        return Err(Error::arg("phantom size must be positive"));
    }
    // Voxel m sits at 0.5 mm so the muscle spans [0, size] in each axis.
    let origin = 0.5 - m as f64;
    let grid = Grid3::new(size.map(|s| s + 2 * m), [1.0; 3], [origin; 3])?;
    let inside = |p: &nalgebra::Point3<f64>| -> bool {
        let within = |v: f64, s: usize| v > 0.0 && v < s as f64;
        if !(within(p.x, size[0]) && within(p.y, size[1]) && within(p.z, size[2])) {
            return false;
        }
        match &spec.geometry {
            Geometry::Box { .. } => true,
            Geometry::Cylinder { radii_mm, .. } => {
                let u = (p.x - 0.5 * size[0] as f64) / radii_mm[0];
                let v = (p.y - 0.5 * size[1] as f64) / radii_mm[1];
                u * u + v * v <= 1.0
            }
        }
    };

    let bounds = |parts: &[usize], total: usize, what: &str| -> Result<Vec<usize>> {
        if parts.is_empty() || parts.contains(&0) || parts.iter().sum::<usize>() != total {
            return Err(Error::arg(format!("{what} must be positive and sum to {total}")));
        }
        Ok(parts.iter().scan(0, |acc, &w| {
            *acc += w;
            Some(*acc)
        }).collect())
    };
    let label_of: PointFn<u16> = match &spec.layout {
        Layout::Single => Box::new(|_| 1),
        Layout::SplitX { widths_mm } => {
            let ends = bounds(widths_mm, size[0], "compartment widths")?;
            Box::new(move |p| (ends.iter().position(|&e| p.x < e as f64).unwrap() + 1) as u16)
        }
        Layout::SplitZ { lengths_mm } => {
            let ends = bounds(lengths_mm, size[2], "compartment lengths")?;
            Box::new(move |p| (ends.iter().position(|&e| p.z < e as f64).unwrap() + 1) as u16)
        }
    };

    let half_width = (size[0] as f64 - 1.0) / 2.0;
    let fiber: PointFn<Option<Vector3<f64>>> = match &spec.fiber {
        FiberModel::Axial => Box::new(|_| Some(Vector3::z())),
        FiberModel::Pennate { theta_deg } => {
            if !matches!(spec.geometry, Geometry::Box { .. }) || spec.layout != Layout::Single {
                return Err(Error::arg("pennate fibers need a single-compartment box"));
            }
            if size[0].is_multiple_of(2) || size[0] < 3 {
                return Err(Error::arg("pennate box width must be odd and at least 3"));
            }
            if !(*theta_deg > 0.0 && *theta_deg <= 45.0) {
                return Err(Error::arg("pennation angle must lie in (0, 45] degrees"));
            }
            let th = theta_deg.to_radians();
            if half_width / th.tan() > 0.5 * size[2] as f64 {
                return Err(Error::arg("box too short for full-length pennate fibers"));
            }
            let (s, c) = th.sin_cos();
            Box::new(move |p| {
                if p.x < half_width {
                    Some(Vector3::new(-s, 0.0, c))
                } else if p.x > half_width + 1.0 {
                    Some(Vector3::new(s, 0.0, c))
                } else {
                    None
                }
            })
        }
    };

    let mut labels = vec![0u16; grid.len()];
    let mut tensors = vec![[0.0; 6]; grid.len()];
    for idx in 0..grid.len() {
        let p = grid.center_of(idx);
        if !inside(&p) {
            continue;
        }
        match fiber(&p) {
            Some(e) => {
                labels[idx] = label_of(&p);
                tensors[idx] = stick(&e, &l);
            }
            // Aponeurosis between pennate halves.
            None => tensors[idx] = stick(&Vector3::z(), &l),
        }
    }
    let mask = LabelVolume::new(grid, labels)?;
    let field = TensorField::new(grid, tensors)?;

    let total = mask.data().iter().filter(|&&v| v != 0).count() as f64;
    let len = size[2] as f64;
    let mut truth = Vec::new();
    match &spec.fiber {
        FiberModel::Axial => {
            truth.push(RegionTruth::new(Region::Muscle, len, 0.0, total, Some(len), None));
            for lab in mask.labels() {
                let mv = mask.count_label(lab) as f64;
                let fl = match &spec.layout {
                    Layout::SplitZ { lengths_mm } => lengths_mm[lab as usize - 1] as f64,
                    _ => len,
                };
                let fraction = match &spec.layout {
                    Layout::Single => None,
                    _ => Some(mv / total),
                };
                if fraction.is_some() {
                    truth.push(RegionTruth::new(Region::Compartment(lab), fl, 0.0, mv, None, fraction));
                }
            }
        }
        FiberModel::Pennate { theta_deg } => {
            let fl = half_width / theta_deg.to_radians().sin();
            truth.push(RegionTruth::new(Region::Muscle, fl, *theta_deg, total, Some(len), None));
        }
    }
    let dwi = spec.dwi.as_ref().map(|p| dwi_from_field(&field, p)).transpose()?;
    Ok(TensorPhantom {
        field,
        mask,
        dwi,
        truth,
    })
}

/// Forward-simulated diffusion-weighted volumes for a tensor field.
pub fn dwi_from_field(field: &TensorField, p: &DwiProtocol) -> Result<DwiStack> {
    if p.directions < 6 || p.references < 1 || !(p.b_value > 0.0) || !(p.s0 > 0.0) || !(p.noise >= 0.0) {
        return Err(Error::arg("DWI protocol needs ≥6 directions, ≥1 reference, positive b and s0"));
    }
    let mut bvals = vec![0.0; p.references];
    let mut bvecs = vec![[0.0; 3]; p.references];
    for g in hemisphere_directions(p.directions) {
        bvals.push(p.b_value);
        bvecs.push(g);
    }
    let grid = *field.grid();
    let normal = Normal::new(0.0, p.noise * p.s0).map_err(|e| Error::Internal(e.to_string()))?;
    let volumes = bvals
        .iter()
        .zip(&bvecs)
        .enumerate()
        .map(|(k, (&b, g))| {
            let mut r = rng(p.seed, k as u64);
            let data = field
                .tensors()
                .iter()
                .map(|d| {
                    let s = forward_signal(p.s0, b, g, d);
                    if p.noise > 0.0 {
                        (s + normal.sample(&mut r)).abs()
                    } else {
                        s
                    }
                })
                .collect();
            ScalarVolume::new(grid, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DwiStack { volumes, bvals, bvecs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tractography::fit_tensor;

    fn boxed(size: [usize; 3]) -> TensorPhantomSpec {
        TensorPhantomSpec {
            geometry: Geometry::Box { size_mm: size },
            fiber: FiberModel::Axial,
            layout: Layout::Single,
            margin: 1,
            eigenvalues: default_eigenvalues(),
            dwi: None,
        }
    }

    #[test]
    fn axial_box_truth() {
        let p = make_tensor_phantom(&boxed([20, 10, 60])).unwrap();
        assert_eq!(p.mask.count_label(1), 12000);
        let t = &p.truth[0];
        assert_eq!(t.region, Region::Muscle);
        assert_eq!((t.fl_mm, t.pa_deg, t.mv_mm3, t.pcsa_mm2), (60.0, 0.0, 12000.0, 200.0));
        let idx = p.mask.data().iter().position(|&l| l == 1).unwrap();
        assert!((p.field.principal()[idx].z.abs() - 1.0).abs() < 1e-12);
        // The muscle spans [0, 60] in z.
        let (lo, hi) = p.mask.grid().extent();
        assert!((lo[2] + 1.0).abs() < 1e-12 && (hi[2] - 61.0).abs() < 1e-12);
    }

    #[test]
    fn split_fractions() {
        let mut s = boxed([10, 10, 10]);
        s.layout = Layout::SplitX { widths_mm: vec![6, 4] };
        let p = make_tensor_phantom(&s).unwrap();
        assert_eq!(p.mask.count_label(1), 600);
        assert_eq!(p.mask.count_label(2), 400);
        assert_eq!(p.truth[1].volume_fraction, Some(0.6));
        assert_eq!(p.truth[2].volume_fraction, Some(0.4));
        s.layout = Layout::SplitX { widths_mm: vec![6, 3] };
        assert!(make_tensor_phantom(&s).is_err());
    }

    #[test]
    fn z_split_truncates_fibers() {
        let mut s = boxed([8, 8, 60]);
        s.layout = Layout::SplitZ { lengths_mm: vec![25, 35] };
        let p = make_tensor_phantom(&s).unwrap();
        assert_eq!(p.truth[0].fl_mm, 60.0);
        assert_eq!(p.truth[1].fl_mm, 25.0);
        assert_eq!(p.truth[2].fl_mm, 35.0);
    }

    #[test]
    fn pennate_truth() {
        let mut s = boxed([9, 10, 115]);
        s.fiber = FiberModel::Pennate { theta_deg: 5.0 };
        let p = make_tensor_phantom(&s).unwrap();
        let t = &p.truth[0];
        assert_eq!(t.pa_deg, 5.0);
        assert!((t.fl_mm - 4.0 / 5f64.to_radians().sin()).abs() < 1e-12);
        assert!(((t.fl_mm / t.ml_mm.unwrap()) - 0.4).abs() < 0.01);
        assert_eq!(t.mv_mm3, 8.0 * 10.0 * 115.0);
        s.geometry = Geometry::Box { size_mm: [9, 10, 60] };
        assert!(make_tensor_phantom(&s).is_err());
    }

    #[test]
    fn cylinder_volume_close_to_analytic() {
        let s = TensorPhantomSpec {
            geometry: Geometry::Cylinder {
                radii_mm: [8.0, 5.0],
                length_mm: 30,
            },
            ..boxed([1, 1, 1])
        };
        let p = make_tensor_phantom(&s).unwrap();
        let analytic = std::f64::consts::PI * 8.0 * 5.0 * 30.0;
        assert!((p.truth[0].mv_mm3 - analytic).abs() < 0.03 * analytic);
    }

    #[test]
    fn noiseless_dwi_fits_back() {
        let mut s = boxed([4, 4, 6]);
        s.dwi = Some(DwiProtocol::default());
        let p = make_tensor_phantom(&s).unwrap();
        let dwi = p.dwi.as_ref().unwrap();
        assert_eq!(dwi.volumes.len(), 16);
        let fit = fit_tensor(dwi).unwrap();
        for (a, b) in fit.tensors().iter().zip(p.field.tensors()) {
            for c in 0..6 {
                assert!((a[c] - b[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_noise() {
        let mut s = boxed([3, 3, 3]);
        s.dwi = Some(DwiProtocol {
            noise: 0.02,
            seed: 9,
            ..DwiProtocol::default()
        });
        let a = make_tensor_phantom(&s).unwrap().dwi.unwrap();
        let b = make_tensor_phantom(&s).unwrap().dwi.unwrap();
        for (x, y) in a.volumes.iter().zip(&b.volumes) {
            assert_eq!(x.data(), y.data());
        }
    }
}
