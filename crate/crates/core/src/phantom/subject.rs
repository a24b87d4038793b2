use std::collections::BTreeMap;

use nalgebra::{Point2, Vector3};
use serde::{Deserialize, Serialize};

use super::emg::{make_emg_phantom, EmgPhantom, EmgPhantomSpec};
use super::movie::{render_movie, FlowMovie};
use super::tensor::{dwi_from_field, stick, DwiProtocol};
use super::warp::{ellipse, half_ellipse, Warp};
use crate::architecture::Region;
use crate::error::{Error, Result};
use crate::growing::SeedSet;
use crate::model::{Contour, ElectrodeGrid, Grid2, Grid3, GridPose, LabelVolume, Mask2D};
use crate::phantom::RegionTruth;
use crate::tractography::{DwiStack, TensorField};

/// A tapered elliptic muscle split at its mid-plane into two compartments
/// (label 1 at low x, label 2 at high x), with everything the pipeline ingests:
/// ultrasound movies and seeds per slice, MRI outlines, DWI and EMG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectSpec {
    pub length_mm: f64,
    /// Semi-axes at z = 0.
    pub radii_mm: [f64; 2],
    /// Fractional radius loss from z = 0 to z = length.
    pub taper: f64,
    pub slice_spacing_mm: f64,
    pub us_pixel_mm: f64,
    /// Background pixels around the largest cross-section.
    pub us_margin_px: usize,
    /// Compartment speed, pixels per frame.
    pub velocity_px: f64,
    pub frames: usize,
    pub noise: f64,
    /// Amplitude of the ultrasound-to-MRI bump warp, relative to its radius.
    pub warp_amplitude: f64,
    pub mri_offset_mm: [f64; 2],
    pub dwi: DwiProtocol,
    pub eigenvalues: [f64; 3],
    pub emg_rate_hz: f64,
    pub emg_duration_s: f64,
    pub seed: u64,
}

impl Default for SubjectSpec {
    fn default() -> Self {
        Self {
            length_mm: 40.0,
            radii_mm: [14.0, 10.0],
            taper: 0.2,
            slice_spacing_mm: 8.0,
            us_pixel_mm: 0.2,
            us_margin_px: 20,
            velocity_px: 0.3,
            frames: 31,
            noise: 0.0,
            warp_amplitude: 0.1,
            mri_offset_mm: [4.0, 3.0],
            dwi: DwiProtocol::default(),
            eigenvalues: [2.0e-3, 4.0e-4, 4.0e-4],
            emg_rate_hz: 1024.0,
            emg_duration_s: 3.0,
            seed: 0,
        }
    }
}

/// One ultrasound slice and its paired MRI slice.
#[derive(Debug, Clone)]
pub struct SlicePhantom {
    pub z_mm: f64,
    pub movie: FlowMovie,
    pub fds_mask: Mask2D,
    pub us_outline: Contour,
    pub seeds: SeedSet,
    /// Compartment outlines in ultrasound mm.
    pub us_truth: Vec<Contour>,
    pub mri_outline: Contour,
    /// Compartment outlines in MRI mm.
    pub mri_truth: Vec<Contour>,
}

#[derive(Debug, Clone)]
pub struct SubjectPhantom {
    pub spec: SubjectSpec,
    pub slices: Vec<SlicePhantom>,
    pub warp: Warp,
    /// Grid the lofted masks are built on.
    pub mri_grid: Grid3,
    /// Compartments on the diffusion grid.
    pub truth_masks: LabelVolume,
    pub field: TensorField,
    pub dwi: DwiStack,
    pub emg_grid: ElectrodeGrid,
    /// Trials per finger label.
    pub emg: BTreeMap<u16, EmgPhantom>,
    /// Whole muscle, then compartments.
    pub truth: Vec<RegionTruth>,
}

impl SubjectPhantom {
    /// Trials whose blob sits beside the muscle, over no compartment.
    pub fn emg_negative_control(&self, finger: u16) -> Result<EmgPhantom> {
        let outside = self.emg_grid.position(self.emg_grid.electrode_count() - 1);
        let mut s = EmgPhantomSpec::new(self.emg_grid.clone(), [outside.x - 4.0, 0.5 * outside.y]);
        s.finger = finger;
        s.sample_rate_hz = self.spec.emg_rate_hz;
        s.duration_s = self.spec.emg_duration_s;
        s.seed = self.spec.seed.wrapping_add(999);
        make_emg_phantom(&s)
    }
}

impl SubjectSpec {
    fn validate(&self) -> Result<()> {
        if !(self.length_mm > 0.0 && self.slice_spacing_mm > 0.0) {
            return Err(Error::arg("length and slice spacing must be positive"));
        }
        let n = self.length_mm / self.slice_spacing_mm;
        if (n - n.round()).abs() > 1e-9 || n < 1.0 {
            return Err(Error::arg("length must be a whole number of slice spacings"));
        }
        if self.length_mm.fract() != 0.0 || !(self.length_mm as usize).is_multiple_of(2) {
            return Err(Error::arg("length must be an even number of millimetres"));
        }
        if !(self.radii_mm[0] > 0.0 && self.radii_mm[1] > 0.0 && (0.0..0.9).contains(&self.taper)) {
            return Err(Error::arg("radii must be positive and taper in [0, 0.9)"));
        }
        if !(self.us_pixel_mm > 0.0) || self.frames < 2 || !(self.velocity_px > 0.0) {
            return Err(Error::arg("pixel size, frame count and velocity must be positive"));
        }
        if !(0.0..0.5).contains(&self.warp_amplitude) {
            return Err(Error::arg("warp amplitude must lie in [0, 0.5)"));
        }
        Ok(())
    }

    fn radii_at(&self, z: f64) -> [f64; 2] {
        let s = 1.0 - self.taper * z / self.length_mm;
        [self.radii_mm[0] * s, self.radii_mm[1] * s]
    }
}

pub fn make_subject(spec: &SubjectSpec) -> Result<SubjectPhantom> {
    spec.validate()?;
    let px = spec.us_pixel_mm;
    let half = spec.radii_mm.map(|r| (r / px).ceil() as usize + spec.us_margin_px);
    let us_grid = Grid2::new([2 * half[0] + 1, 2 * half[1] + 1], [px, px])?;
    let center = [half[0] as f64 * px, half[1] as f64 * px];
    let warp = Warp::Bump {
        center,
        radius: spec.radii_mm[0],
        amplitude: spec.warp_amplitude,
        offset: spec.mri_offset_mm,
    };
    let big = ellipse(center, spec.radii_mm, 256, 0.0, 0)?;
    let (lo, hi) = big.bounds();
    let margin = 0.1 * spec.radii_mm[0];
    warp.check_diffeomorphic(
        lo - nalgebra::Vector2::new(margin, margin),
        hi + nalgebra::Vector2::new(margin, margin),
        spec.radii_mm[0].min(spec.radii_mm[1]) / 50.0,
    )?;

    let count = (spec.length_mm / spec.slice_spacing_mm).round() as usize + 1;
    let slices = (0..count)
        .map(|k| make_slice(spec, k, us_grid, center, &warp))
        .collect::<Result<Vec<_>>>()?;

    let (mlo, mhi) = warp.apply_contour(&big, 1.0)?.bounds();
    if mlo.x < 2.0 || mlo.y < 2.0 {
        return Err(Error::arg("MRI offset places the muscle outside the volume"));
    }
    let nx = mhi.x.ceil() as usize + 3;
    let ny = mhi.y.ceil() as usize + 3;
    let nz = spec.length_mm as usize;
    let mri_grid = Grid3::new([nx, ny, nz / 2], [1.0, 1.0, 2.0], [0.5, 0.5, 1.0])?;
    let dwi_grid = Grid3::new([nx, ny, nz], [1.0; 3], [0.5; 3])?;

    let truth_masks = LabelVolume::from_fn(dwi_grid, |ijk| {
        let p = dwi_grid.to_physical(ijk.map(|v| v as f64));
        let q = warp.invert(&Point2::new(p.x, p.y));
        let r = spec.radii_at(p.z);
        let u = (q.x - center[0]) / r[0];
        let v = (q.y - center[1]) / r[1];
        if u * u + v * v > 1.0 {
            0
        } else if q.x < center[0] {
            1
        } else {
            2
        }
    })?;
    let t = stick(&Vector3::z(), &spec.eigenvalues);
    let field = TensorField::new(
        dwi_grid,
        truth_masks.data().iter().map(|&l| if l != 0 { t } else { [0.0; 6] }).collect(),
    )?;
    let dwi = dwi_from_field(&field, &spec.dwi)?;

    let emg_grid = ElectrodeGrid::dual_5x13(GridPose {
        origin: [
            0.5 * (mlo.x + mhi.x) - 48.0,
            mhi.y + 5.0,
            0.5 * spec.length_mm - 36.0,
        ],
        axis_u: [1.0, 0.0, 0.0],
        axis_v: [0.0, 0.0, 1.0],
    });
    let mut emg = BTreeMap::new();
    for label in [1u16, 2] {
        let mut s = EmgPhantomSpec::over_compartment(&truth_masks, emg_grid.clone(), label)?;
        s.sample_rate_hz = spec.emg_rate_hz;
        s.duration_s = spec.emg_duration_s;
        s.seed = spec.seed.wrapping_add(100 + label as u64);
        emg.insert(label, make_emg_phantom(&s)?);
    }

    let total = truth_masks.data().iter().filter(|&&l| l != 0).count() as f64;
    let len = spec.length_mm;
    let mut truth = vec![RegionTruth {
        region: Region::Muscle,
        fl_mm: len,
        pa_deg: 0.0,
        mv_mm3: total,
        pcsa_mm2: total / len,
        ml_mm: Some(len),
        volume_fraction: None,
    }];
    for label in [1u16, 2] {
        let mv = truth_masks.count_label(label) as f64;
        truth.push(RegionTruth {
            region: Region::Compartment(label),
            fl_mm: len,
            pa_deg: 0.0,
            mv_mm3: mv,
            pcsa_mm2: mv / len,
            ml_mm: None,
            volume_fraction: Some(mv / total),
        });
    }
    Ok(SubjectPhantom {
        spec: spec.clone(),
        slices,
        warp,
        mri_grid,
        truth_masks,
        field,
        dwi,
        emg_grid,
        emg,
        truth,
    })
}

fn make_slice(spec: &SubjectSpec, k: usize, grid: Grid2, center: [f64; 2], warp: &Warp) -> Result<SlicePhantom> {
    let z = k as f64 * spec.slice_spacing_mm;
    let r = spec.radii_at(z);
    let inside = |i: usize, j: usize| {
        let p = grid.center(i, j);
        let u = (p.x - center[0]) / r[0];
        let v = (p.y - center[1]) / r[1];
        u * u + v * v <= 1.0
    };
    let v = spec.velocity_px;
    let movie = render_movie(
        grid,
        spec.frames,
        |i, j| inside(i, j).then(|| usize::from(grid.center(i, j).x >= center[0])),
        &[[v, 0.0], [0.0, v]],
        spec.noise,
        spec.seed.wrapping_mul(1_000_003).wrapping_add(k as u64),
    )?;
    let fds_mask = Mask2D::new(
        grid.dims,
        (0..grid.len())
            .map(|idx| {
                let [i, j] = grid.ij(idx);
                inside(i, j)
            })
            .collect(),
    )?;
    let seed_px = |dx: f64| {
        grid.pixel_of(&Point2::new(center[0] + dx, center[1]))
            .ok_or_else(|| Error::Internal("seed outside the image".into()))
    };
    let mut seeds = BTreeMap::new();
    seeds.insert(1u16, vec![seed_px(-0.5 * r[0])?]);
    seeds.insert(2u16, vec![seed_px(0.5 * r[0])?]);

    let us_outline = ellipse(center, r, 128, z, 0)?;
    let us_truth = vec![
        half_ellipse(center, r, 64, z, 1, true)?,
        half_ellipse(center, r, 64, z, 2, false)?,
    ];
    let seg = 0.5;
    let mri_truth = us_truth
        .iter()
        .map(|c| warp.apply_contour(c, seg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SlicePhantom {
        z_mm: z,
        movie,
        fds_mask,
        mri_outline: warp.apply_contour(&us_outline, seg)?,
        us_outline,
        seeds: SeedSet(seeds),
        us_truth,
        mri_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emg::{activation_center, containment_accuracy, preprocess, project_boundaries, EmgParams};

    fn small() -> SubjectSpec {
        SubjectSpec {
            frames: 12,
            emg_rate_hz: 1024.0,
            emg_duration_s: 4.0,
            seed: 5,
            ..SubjectSpec::default()
        }
    }

    #[test]
    fn geometry_and_truth() {
        let s = make_subject(&small()).unwrap();
        assert_eq!(s.slices.len(), 6);
        assert_eq!(s.slices[5].z_mm, 40.0);
        assert_eq!(s.mri_grid.dims[2], 20);
        let t = &s.truth;
        assert!((t[1].volume_fraction.unwrap() - 0.5).abs() < 0.02);
        // Elliptic frustum volume with taper 0.2 over 40 mm.
        let area0 = std::f64::consts::PI * 14.0 * 10.0;
        let analytic = area0 * 40.0 * (1.0 - 0.2 + 0.04 / 3.0);
        assert!((t[0].mv_mm3 - analytic).abs() < 0.03 * analytic, "{} vs {analytic}", t[0].mv_mm3);
        for sl in &s.slices {
            assert!(sl.fds_mask.get(sl.seeds.get(1).unwrap()[0][0], sl.seeds.get(1).unwrap()[0][1]));
            let a: f64 = sl.mri_truth.iter().map(Contour::area).sum();
            assert!((a - sl.mri_outline.area()).abs() < 0.02 * a);
        }
    }

    #[test]
    fn emg_centers_fall_inside_footprints() {
        let s = make_subject(&small()).unwrap();
        let boundaries = project_boundaries(&s.truth_masks, &s.emg_grid).unwrap();
        let p = EmgParams::default();
        let centers: Vec<(u16, Point2<f64>)> = s
            .emg
            .iter()
            .map(|(&l, e)| (l, activation_center(&preprocess(&e.recordings, &p).unwrap(), 0.7).unwrap()))
            .collect();
        assert_eq!(containment_accuracy(&centers, &boundaries).unwrap().accuracy, 1.0);
        let neg = s.emg_negative_control(1).unwrap();
        let c = activation_center(&preprocess(&neg.recordings, &p).unwrap(), 0.7).unwrap();
        assert_eq!(containment_accuracy(&[(1, c)], &boundaries).unwrap().accuracy, 0.0);
    }
}
