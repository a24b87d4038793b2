//! Architectural parameters of muscles and compartments from masks and
//! streamlines, plus descriptive comparisons between measurement methods.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{LabelVolume, Streamline};

/// Track count below which a measurement is flagged as under-sampled.
pub const RECOMMENDED_TRACKS: usize = 3000;

/// Voxel count of `label` times the voxel volume, in mm³.
pub fn muscle_volume(mask: &LabelVolume, label: u16) -> Result<f64> {
    let n = mask.count_label(label);
    if n == 0 {
        return Err(Error::arg(format!("label {label} is absent from the mask")));
    }
    Ok(n as f64 * mask.grid().voxel_volume())
}

/// Polyline arc length in mm.
pub fn fiber_length(points: &[Point3<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::arg("a fiber needs at least two points"));
    }
    Ok(points.windows(2).map(|w| (w[1] - w[0]).norm()).sum())
}

/// Flips `v` into the +z half-space; vectors in the xy plane are oriented by
/// +y, then +x.
fn toward_positive_z(v: Vector3<f64>) -> Vector3<f64> {
    let key = if v.z != 0.0 {
        v.z
    } else if v.y != 0.0 {
        v.y
    } else {
        v.x
    };
    if key < 0.0 {
        -v
    } else {
        v
    }
}

/// Mean track axis and the extent of all track points along it.
///
/// The axis is the principal eigenvector of the summed outer products of the
/// unit end-to-end vectors, oriented toward +z.
pub fn line_of_action(tracks: &[Streamline]) -> Result<(Vector3<f64>, f64)> {
    if tracks.is_empty() {
        return Err(Error::arg("line of action needs at least one track"));
    }
    let mut scatter = Matrix3::zeros();
    for t in tracks {
        let c = t.chord();
        let n = c.norm();
        if n > 0.0 {
            let u = c / n;
            scatter += u * u.transpose();
        }
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if !(eig.eigenvalues[order[0]] > eig.eigenvalues[order[1]] * (1.0 + 1e-12)) {
        return Err(Error::Degenerate("tracks have no net direction".into()));
    }
    let v = eig.eigenvectors.column(order[0]).into_owned();
    let dir = toward_positive_z(v.normalize());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in tracks.iter().flat_map(|t| t.points()) {
        let s = p.coords.dot(&dir);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok((dir, hi - lo))
}

/// Angle in degrees between the track chord and the line of action, folded
/// into [0, 90].
pub fn pennation_angle(s: &Streamline, loa: &Vector3<f64>) -> Result<f64> {
    let c = s.chord();
    let n = c.norm();
    if !(n > 0.0) {
        return Err(Error::Degenerate(format!("track {} has a zero-length chord", s.seed())));
    }
    let cos = (c.dot(loa) / (n * loa.norm())).abs().min(1.0);
    Ok(cos.acos().to_degrees())
}

/// Physiological cross-sectional area `mv * cos(pa) / fl`.
pub fn pcsa(mv: f64, pa_deg: f64, fl: f64) -> Result<f64> {
    if !(fl > 0.0) {
        return Err(Error::arg(format!("fiber length must be positive, got {fl}")));
    }
    Ok(mv * pa_deg.to_radians().cos() / fl)
}

/// Median; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// The part of a mask being measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "label")]
pub enum Region {
    /// Every labelled voxel.
    Muscle,
    Compartment(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureReport {
    pub region: Region,
    pub track_count: usize,
    pub mv_mm3: f64,
    /// Median fiber length.
    pub fl_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ml_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_ml: Option<f64>,
    /// Median pennation angle.
    pub pa_deg: f64,
    pub pcsa_mm2: f64,
    pub line_of_action: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_fraction: Option<f64>,
    pub fl_per_track: Vec<f64>,
    pub pa_per_track: Vec<f64>,
}

/// Measures a muscle or compartment from its mask and tracks.
///
/// Muscle length and the FL/ML ratio are reported for the whole muscle only;
/// the volume fraction (relative to all labelled voxels) for compartments only.
pub fn measure(mask: &LabelVolume, region: Region, tracks: &[Streamline]) -> Result<ArchitectureReport> {
    if tracks.is_empty() {
        return Err(Error::arg("no tracks to measure"));
    }
    if tracks.len() < RECOMMENDED_TRACKS {
        log::warn!(
            "{region:?}: measuring {} tracks, fewer than the recommended {RECOMMENDED_TRACKS}",
            tracks.len()
        );
    }
    let total = mask.data().iter().filter(|&&l| l != 0).count();
    let mv = match region {
        Region::Muscle => {
            if total == 0 {
                return Err(Error::arg("mask has no labelled voxels"));
            }
            total as f64 * mask.grid().voxel_volume()
        }
        Region::Compartment(l) => muscle_volume(mask, l)?,
    };
    let (loa, ml) = line_of_action(tracks)?;
    let fl_per_track: Vec<f64> = tracks.iter().map(|t| t.length()).collect();
    let pa_per_track = tracks
        .iter()
        .map(|t| pennation_angle(t, &loa))
        .collect::<Result<Vec<f64>>>()?;
    let fl = median(&fl_per_track).expect("non-empty");
    let pa = median(&pa_per_track).expect("non-empty");
    let (ml_mm, fl_ml, volume_fraction) = match region {
        Region::Muscle => (Some(ml), Some(fl / ml), None),
        Region::Compartment(l) => (None, None, Some(mask.count_label(l) as f64 / total as f64)),
    };
    Ok(ArchitectureReport {
        region,
        track_count: tracks.len(),
        mv_mm3: mv,
        fl_mm: fl,
        ml_mm,
        fl_ml,
        pa_deg: pa,
        pcsa_mm2: pcsa(mv, pa, fl)?,
        line_of_action: loa.into(),
        volume_fraction,
        fl_per_track,
        pa_per_track,
    })
}

/// Summed volume of labels `a` over summed volume of labels `b`.
pub fn volume_ratio(mask: &LabelVolume, a: &[u16], b: &[u16]) -> Result<f64> {
    let count = |ls: &[u16]| ls.iter().map(|&l| mask.count_label(l)).sum::<usize>();
    let (na, nb) = (count(a), count(b));
    if nb == 0 {
        return Err(Error::arg("denominator labels are absent from the mask"));
    }
    Ok(na as f64 / nb as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanPoint {
    pub mean: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSummary {
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// `mean_diff ∓ 1.96 sd_diff`.
    pub limits_of_agreement: [f64; 2],
    pub points: Vec<BlandAltmanPoint>,
    /// Least-squares slope of difference against mean.
    pub slope: f64,
    pub intercept: f64,
    /// Two-sided p-value of the slope.
    pub p_value: f64,
    pub proportional_bias: bool,
}

const ALPHA: f64 = 0.05;

/// Agreement between paired measurements `(a, b)`, with differences `a - b`.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<BlandAltmanSummary> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::arg(format!("Bland-Altman analysis needs at least 3 pairs, got {n}")));
    }
    let points: Vec<BlandAltmanPoint> = pairs
        .iter()
        .map(|&(a, b)| BlandAltmanPoint {
            mean: 0.5 * (a + b),
            diff: a - b,
        })
        .collect();
    let nf = n as f64;
    let mean_diff = points.iter().map(|p| p.diff).sum::<f64>() / nf;
    let sd_diff = (points.iter().map(|p| (p.diff - mean_diff).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let mean_x = points.iter().map(|p| p.mean).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.mean - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.mean - mean_x) * (p.diff - mean_diff)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = mean_diff - slope * mean_x;
    let sse: f64 = points
        .iter()
        .map(|p| (p.diff - intercept - slope * p.mean).powi(2))
        .sum();
    let se = if sxx > 0.0 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    let p_value = if se > 0.0 {
        let t = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::Internal(e.to_string()))?;
        2.0 * (1.0 - t.cdf((slope / se).abs()))
    } else if slope != 0.0 {
        0.0
    } else {
        1.0
    };
    Ok(BlandAltmanSummary {
        mean_diff,
        sd_diff,
        limits_of_agreement: [mean_diff - 1.96 * sd_diff, mean_diff + 1.96 * sd_diff],
        points,
        slope,
        intercept,
        p_value,
        proportional_bias: p_value < ALPHA,
    })
}

/// Inclusive physiological ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub pa_deg: [f64; 2],
    pub fl_ml: [f64; 2],
}

impl Default for Ranges {
    fn default() -> Self {
        Self {
            pa_deg: [0.0, 10.0],
            fl_ml: [0.2, 0.6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeCheck {
    pub pa: bool,
    /// Absent when the report carries no FL/ML ratio.
    pub fl_ml: Option<bool>,
}

pub fn range_check(report: &ArchitectureReport, ranges: &Ranges) -> RangeCheck {
    let within = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
    RangeCheck {
        pa: within(report.pa_deg, ranges.pa_deg),
        fl_ml: report.fl_ml.map(|v| within(v, ranges.fl_ml)),
    }
}
