//! Surface-EMG activation maps, activation centers and their validation
//! against projected compartment boundaries.

use std::f64::consts::PI;

use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::raster::{largest_component, mask_to_contour};
use crate::model::{Contour, ElectrodeGrid, LabelVolume, Mask2D};

/// One trial of multichannel EMG, `channels[c][t]` in mV.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgRecording {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate_hz: f64,
    pub grid: ElectrodeGrid,
    pub trial: String,
    pub finger: u16,
}

impl EmgRecording {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.channels.len() != self.grid.electrode_count() {
            return Err(Error::arg(format!(
                "trial {}: {} channels for {} electrodes",
                self.trial,
                self.channels.len(),
                self.grid.electrode_count()
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::arg("sample rate must be positive"));
        }
        let n = self.samples();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::arg(format!("trial {}: channels differ in length", self.trial)));
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("trial {}: non-finite sample", self.trial)));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.sample_rate_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmgParams {
    pub trials: usize,
    pub band_hz: [f64; 2],
    /// Butterworth order of each band edge.
    pub order: usize,
    pub line_hz: f64,
    pub notch_q: f64,
    pub trim_s: f64,
    pub min_duration_s: f64,
    pub outlier_sigma: f64,
}

impl Default for EmgParams {
    fn default() -> Self {
        Self {
            trials: 3,
            band_hz: [20.0, 500.0],
            order: 4,
            line_hz: 50.0,
            notch_q: 35.0,
            trim_s: 1.0,
            min_duration_s: 4.0,
            outlier_sigma: 3.0,
        }
    }
}

impl EmgParams {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::arg("at least one trial is required"));
        }
        if !(self.band_hz[0] > 0.0 && self.band_hz[0] < self.band_hz[1]) {
            return Err(Error::arg("band edges must satisfy 0 < low < high"));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(Error::arg("filter order must be even and positive"));
        }
        if !(self.line_hz > 0.0 && self.notch_q > 0.0) {
            return Err(Error::arg("line frequency and notch Q must be positive"));
        }
        if !(self.trim_s >= 0.0 && self.min_duration_s > 2.0 * self.trim_s) {
            return Err(Error::arg("minimum duration must exceed the trimmed segments"));
        }
        if !(self.outlier_sigma > 0.0) {
            return Err(Error::arg("outlier threshold must be positive"));
        }
        Ok(())
    }
}

/// Second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn normalized(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b: b.map(|v| v / a[0]),
            a: [a[1] / a[0], a[2] / a[0]],
        }
    }

    pub fn lowpass(f0: f64, q: f64, fs: f64) -> Self {
        let (c, alpha) = Self::angles(f0, q, fs);
        Self::normalized(
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn highpass(f0: f64, q: f64, fs: f64) -> Self {
        let (c, alpha) = Self::angles(f0, q, fs);
        Self::normalized(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            [1.0 + alpha, -2.0 * c, 1.0 - alpha],
        )
    }

    pub fn notch(f0: f64, q: f64, fs: f64) -> Self {
        let (c, alpha) = Self::angles(f0, q, fs);
        Self::normalized([1.0, -2.0 * c, 1.0], [1.0 + alpha, -2.0 * c, 1.0 - alpha])
    }

    fn angles(f0: f64, q: f64, fs: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * f0 / fs;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    /// Magnitude response at frequency `f`.
    pub fn gain(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * z1.0 + self.b[2] * z2.0,
            self.b[1] * z1.1 + self.b[2] * z2.1,
        );
        let den = (1.0 + self.a[0] * z1.0 + self.a[1] * z2.0, self.a[0] * z1.1 + self.a[1] * z2.1);
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Transposed direct form II, in place.
    fn run(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + s1;
            s1 = self.b[1] * *v - self.a[0] * y + s2;
            s2 = self.b[2] * *v - self.a[1] * y;
            *v = y;
        }
    }
}

/// Q factors of the second-order sections of an even-order Butterworth filter.
pub fn butterworth_q(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).cos()))
        .collect()
}

/// Band-pass (Butterworth high-pass and low-pass) followed by notches at the
/// line frequency and every harmonic below Nyquist.
pub fn filter_chain(p: &EmgParams, fs: f64) -> Vec<Biquad> {
    let qs = butterworth_q(p.order);
    let mut chain: Vec<Biquad> = qs.iter().map(|&q| Biquad::highpass(p.band_hz[0], q, fs)).collect();
    if p.band_hz[1] < fs / 2.0 {
        chain.extend(qs.iter().map(|&q| Biquad::lowpass(p.band_hz[1], q, fs)));
    }
    let mut k = 1;
    while p.line_hz * (k as f64) < fs / 2.0 {
        chain.push(Biquad::notch(p.line_hz * k as f64, p.notch_q, fs));
        k += 1;
    }
    chain
}

pub fn apply_chain(chain: &[Biquad], x: &mut [f64]) {
    for s in chain {
        s.run(x);
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per-channel RMS after filtering and trimming, with outlier channels marked
/// `None`.
pub fn trial_rms(rec: &EmgRecording, p: &EmgParams) -> Result<Vec<Option<f64>>> {
    rec.validate()?;
    if rec.duration_s() < p.min_duration_s {
        return Err(Error::arg(format!(
            "trial {} lasts {:.2} s, at least {} s required",
            rec.trial,
            rec.duration_s(),
            p.min_duration_s
        )));
    }
    let chain = filter_chain(p, rec.sample_rate_hz);
    let trim = (p.trim_s * rec.sample_rate_hz).round() as usize;
    let values: Vec<f64> = rec
        .channels
        .par_iter()
        .map(|c| {
            let mut x = c.clone();
            apply_chain(&chain, &mut x);
            rms(&x[trim..x.len() - trim])
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let band = p.outlier_sigma * sd;
    Ok(values
        .into_iter()
        .map(|v| ((v - mean).abs() <= band).then_some(v))
        .collect())
}

/// Normalized per-electrode activation; `None` marks excluded electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub grid: ElectrodeGrid,
    pub values: Vec<Option<f64>>,
}

impl ActivationMap {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.values.len() != self.grid.electrode_count() {
            return Err(Error::arg("activation map size does not match its grid"));
        }
        if self.values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("activation values must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Activation map from repeated trials: per-trial filtered RMS with outlier
/// rejection, averaged over trials and scaled to a peak of 1. An electrode
/// rejected in any trial stays excluded.
pub fn preprocess(recs: &[EmgRecording], p: &EmgParams) -> Result<ActivationMap> {
    p.validate()?;
    if recs.len() != p.trials {
        return Err(Error::arg(format!("expected {} trials, got {}", p.trials, recs.len())));
    }
    let grid = &recs[0].grid;
    if recs.iter().any(|r| &r.grid != grid) {
        return Err(Error::arg("trials were recorded on different grids"));
    }
    let per_trial = recs
        .iter()
        .map(|r| trial_rms(r, p))
        .collect::<Result<Vec<_>>>()?;
    let avg: Vec<Option<f64>> = (0..grid.electrode_count())
        .map(|c| {
            per_trial
                .iter()
                .map(|t| t[c])
                .sum::<Option<f64>>()
                .map(|s| s / recs.len() as f64)
        })
        .collect();
    let peak = avg.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Degenerate("every electrode was excluded or silent".into()));
    }
    Ok(ActivationMap {
        grid: grid.clone(),
        values: avg.into_iter().map(|v| v.map(|x| x / peak)).collect(),
    })
}

/// Activation-weighted mean electrode position over electrodes whose value
/// exceeds `threshold`, in the grid frame.
pub fn activation_center(map: &ActivationMap, threshold: f64) -> Result<Point2<f64>> {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for (ch, v) in map.values.iter().enumerate() {
        if let Some(w) = *v {
            if w > threshold {
                let q = map.grid.position(ch);
                sx += w * q.x;
                sy += w * q.y;
                sw += w;
            }
        }
    }
    if sw <= 0.0 {
        return Err(Error::EmptyRegion(threshold));
    }
    Ok(Point2::new(sx / sw, sy / sw))
}

/// Raster resolution of projected compartments, in mm.
pub const PROJECTION_RESOLUTION: f64 = 1.0;

/// Outline of each compartment projected along the grid normal onto the grid
/// plane, in grid-frame mm, ordered by label.
pub fn project_boundaries(masks: &LabelVolume, grid: &ElectrodeGrid) -> Result<Vec<Contour>> {
    grid.validate()?;
    let labels = masks.labels();
    if labels.is_empty() {
        return Err(Error::arg("mask has no labelled voxels"));
    }
    labels.par_iter().map(|&l| project_label(masks, grid, l)).collect()
}

fn project_label(masks: &LabelVolume, grid: &ElectrodeGrid, label: u16) -> Result<Contour> {
    let g = masks.grid();
    let pose = &grid.pose;
    // Normal direction in voxel-index units.
    let n = pose.normal();
    let dir = [n.x / g.spacing[0], n.y / g.spacing[1], n.z / g.spacing[2]];
    let voxels: Vec<[usize; 3]> = masks
        .data()
        .iter()
        .enumerate()
        .filter(|&(_idx, &l)| l == label).map(|(idx, &_l)| g.ijk(idx))
        .collect();
    let corners = |v: &[usize; 3]| -> [Point2<f64>; 8] {
        std::array::from_fn(|c| {
            let off = |b: usize| if c >> b & 1 == 1 { 0.5 } else { -0.5 };
            pose.project(&g.to_physical([
                v[0] as f64 + off(0),
                v[1] as f64 + off(1),
                v[2] as f64 + off(2),
            ]))
        })
    };
    let r = PROJECTION_RESOLUTION;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for q in voxels.iter().flat_map(corners) {
        lo = [lo[0].min(q.x), lo[1].min(q.y)];
        hi = [hi[0].max(q.x), hi[1].max(q.y)];
    }
    // Cell (i, j) is centered at origin + (i, j) * r.
    let origin = [(lo[0] / r).floor() * r - r, (lo[1] / r).floor() * r - r];
    let dims = [
        ((hi[0] - origin[0]) / r).ceil() as usize + 2,
        ((hi[1] - origin[1]) / r).ceil() as usize + 2,
    ];
    let mut raster = Mask2D::empty(dims);
    for v in &voxels {
        let (mut a, mut b) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for q in corners(v) {
            a = [a[0].min(q.x), a[1].min(q.y)];
            b = [b[0].max(q.x), b[1].max(q.y)];
        }
        let i0 = ((a[0] - origin[0]) / r).ceil() as usize;
        let i1 = ((b[0] - origin[0]) / r).floor() as usize;
        let j0 = ((a[1] - origin[1]) / r).ceil() as usize;
        let j1 = ((b[1] - origin[1]) / r).floor() as usize;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if raster.get(i, j) {
                    continue;
                }
                let q = Point2::new(origin[0] + i as f64 * r, origin[1] + j as f64 * r);
                let p = g.to_voxel(&pose.lift(&q));
                if line_hits_voxel(p, dir, v) {
                    raster.set(i, j, true);
                }
            }
        }
    }
    if raster.count() == 0 {
        return Err(Error::Degenerate(format!("compartment {label} projects to no raster cell")));
    }
    let kept = largest_component(&raster);
    if kept.count() < raster.count() {
        log::warn!(
            "compartment {label}: projection has several pieces, keeping the largest ({} of {} cells)",
            kept.count(),
            raster.count()
        );
    }
    mask_to_contour(&kept, [r, r], origin, 0.0, label)
}

/// Whether the line `p + s * dir` (voxel-index units) crosses voxel `v`.
fn line_hits_voxel(p: [f64; 3], dir: [f64; 3], v: &[usize; 3]) -> bool {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        let (lo, hi) = (v[a] as f64 - 0.5, v[a] as f64 + 0.5);
        if dir[a].abs() < 1e-15 {
            if p[a] < lo || p[a] > hi {
                return false;
            }
        } else {
            let (u, w) = ((lo - p[a]) / dir[a], (hi - p[a]) / dir[a]);
            t0 = t0.max(u.min(w));
            t1 = t1.min(u.max(w));
        }
    }
    t0 <= t1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterResult {
    pub finger: u16,
    pub center: [f64; 2],
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub accuracy: f64,
    pub inside: usize,
    pub total: usize,
    pub results: Vec<CenterResult>,
}

/// Fraction of activation centers lying inside the projected boundary of the
/// compartment with the same finger label.
pub fn containment_accuracy(centers: &[(u16, Point2<f64>)], boundaries: &[Contour]) -> Result<Containment> {
    if centers.is_empty() {
        return Err(Error::arg("no activation centers"));
    }
    let results = centers
        .iter()
        .map(|&(finger, c)| {
            let b = boundaries
                .iter()
                .find(|b| b.label() == finger)
                .ok_or_else(|| Error::arg(format!("no boundary for finger {finger}")))?;
            Ok(CenterResult {
                finger,
                center: [c.x, c.y],
                inside: b.contains(&c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let inside = results.iter().filter(|r| r.inside).count();
    Ok(Containment {
        accuracy: inside as f64 / results.len() as f64,
        inside,
        total: results.len(),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridPose, Grid3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const FS: f64 = 2048.0;

    fn grid() -> ElectrodeGrid {
        ElectrodeGrid::dual_5x13(GridPose::axis_aligned([0.0; 3]))
    }

    fn recording(channels: Vec<Vec<f64>>) -> EmgRecording {
        EmgRecording {
            channels,
            sample_rate_hz: FS,
            grid: grid(),
            trial: "t".into(),
            finger: 1,
        }
    }

    fn noise(n_ch: usize, n: usize, seed: u64, amp: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        (0..n_ch)
            .map(|c| (0..n).map(|_| amp(c) * d.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn butterworth_sections_match_analytic_response() {
        // Bilinear-transformed Butterworth: |H|² = 1 / (1 + (Ω/Ωc)^2n) with
        // Ω = tan(π f / fs).
        let fc = 500.0;
        for order in [2, 4, 6] {
            let chain: Vec<Biquad> = butterworth_q(order).iter().map(|&q| Biquad::lowpass(fc, q, FS)).collect();
            for f in [5.0, 100.0, 400.0, 500.0, 650.0, 900.0] {
                let got: f64 = chain.iter().map(|s| s.gain(f, FS)).product();
                let r = (PI * f / FS).tan() / (PI * fc / FS).tan();
                let want = 1.0 / (1.0 + r.powi(2 * order as i32)).sqrt();
                assert!((got - want).abs() < 1e-9, "order {order} f {f}: {got} vs {want}");
            }
            let hp: Vec<Biquad> = butterworth_q(order).iter().map(|&q| Biquad::highpass(20.0, q, FS)).collect();
            for f in [5.0, 20.0, 80.0] {
                let got: f64 = hp.iter().map(|s| s.gain(f, FS)).product();
                let r = (PI * 20.0 / FS).tan() / (PI * f / FS).tan();
                let want = 1.0 / (1.0 + r.powi(2 * order as i32)).sqrt();
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn notch_rejects_line_frequency() {
        let p = EmgParams::default();
        let chain = filter_chain(&p, FS);
        // 20 notches below 1024 Hz plus 4 band sections.
        assert_eq!(chain.len(), 4 + 20);
        let n = (5.0 * FS) as usize;
        let trim = FS as usize;
        let sine: Vec<f64> = (0..n).map(|t| (2.0 * PI * 50.0 * t as f64 / FS).sin()).collect();
        let mut y = sine.clone();
        apply_chain(&chain, &mut y);
        let before = rms(&sine[trim..n - trim]);
        let after = rms(&y[trim..n - trim]);
        let db = 20.0 * (before / after).log10();
        assert!(db >= 30.0, "attenuation {db} dB");
        // A 120 Hz tone sits in the pass band between notches.
        let tone: Vec<f64> = (0..n).map(|t| (2.0 * PI * 120.0 * t as f64 / FS).sin()).collect();
        let mut z = tone.clone();
        apply_chain(&chain, &mut z);
        assert!((rms(&z[trim..n - trim]) / rms(&tone[trim..n - trim]) - 1.0).abs() < 0.05);
    }

    #[test]
    fn chain_is_linear() {
        let chain = filter_chain(&EmgParams::default(), FS);
        let x = noise(2, 3000, 1, |_| 1.0);
        let (mut a, mut b) = (x[0].clone(), x[1].clone());
        let mut s: Vec<f64> = x[0].iter().zip(&x[1]).map(|(u, v)| u + v).collect();
        apply_chain(&chain, &mut a);
        apply_chain(&chain, &mut b);
        apply_chain(&chain, &mut s);
        for k in 0..s.len() {
            assert!((s[k] - a[k] - b[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn loud_channel_is_excluded() {
        let n = (4.0 * FS) as usize;
        let rec = recording(noise(130, n, 2, |c| if c == 17 { 10.0 } else { 1.0 }));
        let r = trial_rms(&rec, &EmgParams::default()).unwrap();
        assert_eq!(r[17], None);
        assert_eq!(r.iter().filter(|v| v.is_none()).count(), 1);
    }

    #[test]
    fn identical_trials_average_to_single_map() {
        let n = (4.0 * FS) as usize;
        let rec = recording(noise(130, n, 3, |c| 1.0 + (c % 7) as f64 * 0.1));
        let three = preprocess(&[rec.clone(), rec.clone(), rec.clone()], &EmgParams::default()).unwrap();
        let one = preprocess(&[rec], &EmgParams { trials: 1, ..EmgParams::default() }).unwrap();
        for (a, b) in three.values.iter().zip(&one.values) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("exclusion differs"),
            }
        }
        three.validate().unwrap();
        assert_eq!(three.values.iter().flatten().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn preprocess_argument_errors() {
        let rec = recording(noise(130, (4.0 * FS) as usize, 4, |_| 1.0));
        assert!(preprocess(std::slice::from_ref(&rec), &EmgParams::default()).is_err());
        let short = recording(noise(130, (3.0 * FS) as usize, 4, |_| 1.0));
        let p = EmgParams { trials: 1, ..EmgParams::default() };
        assert!(matches!(preprocess(&[short], &p), Err(Error::Argument(_))));
        let silent = recording(vec![vec![0.0; (4.0 * FS) as usize]; 130]);
        assert!(matches!(preprocess(&[silent], &p), Err(Error::Degenerate(_))));
    }

    fn map_from(f: impl Fn(Point2<f64>) -> f64) -> ActivationMap {
        let g = grid();
        let values = g.positions().into_iter().map(|q| Some(f(q))).collect();
        ActivationMap { grid: g, values }
    }

    #[test]
    fn center_of_single_and_pair() {
        let g = grid();
        let target = g.position(40);
        let m = map_from(|q| if q == target { 1.0 } else { 0.0 });
        assert_eq!(activation_center(&m, 0.8).unwrap(), target);
        let (a, b) = (g.position(40), g.position(42));
        let m = map_from(|q| if q == a || q == b { 0.9 } else { 0.1 });
        let c = activation_center(&m, 0.8).unwrap();
        assert!((c - Point2::from((a.coords + b.coords) / 2.0)).norm() < 1e-12);
        let flat = map_from(|_| 0.5);
        assert!(matches!(activation_center(&flat, 0.8), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn gaussian_blob_center() {
        let g = grid();
        let peak = g.position(5 * 13 + 6);
        let blob = |p: Point2<f64>| (-(p - peak).norm_squared() / (2.0 * 12.0f64.powi(2))).exp();
        let m = map_from(blob);
        let c = activation_center(&m, 0.8).unwrap();
        assert!((c - peak).norm() < 0.5);

        // Off-lattice peak against a brute-force weighted mean.
        let peak = Point2::new(37.3, 41.9);
        let blob = |p: Point2<f64>| (-(p - peak).norm_squared() / (2.0 * 15.0f64.powi(2))).exp();
        let m = map_from(blob);
        let c = activation_center(&m, 0.8).unwrap();
        let (mut num, mut den) = (nalgebra::Vector2::zeros(), 0.0);
        for r in 0..10 {
            for col in 0..13 {
                let q = Point2::new(col as f64 * 8.0, r as f64 * 8.0);
                let w = blob(q);
                if w > 0.8 {
                    num += q.coords * w;
                    den += w;
                }
            }
        }
        assert!((c.coords - num / den).norm() < 1e-9);
        assert!((c - peak).norm() < 4.0);
    }

    #[test]
    fn center_is_scale_invariant() {
        let m = map_from(|q| 0.5 + 0.5 * (q.x / 20.0).sin() * (q.y / 30.0).cos());
        let a = activation_center(&m, 0.8).unwrap();
        let b = activation_center(
            &ActivationMap {
                values: m.values.iter().map(|v| v.map(|x| x * 3.0)).collect(),
                ..m.clone()
            },
            2.4,
        )
        .unwrap();
        assert!((a - b).norm() < 1e-9);
    }

    fn dense_grid() -> Grid3 {
        Grid3::new([60, 60, 60], [1.0; 3], [-30.0, -30.0, -30.0]).unwrap()
    }

    #[test]
    fn box_projects_to_its_footprint() {
        let g = dense_grid();
        // Voxels x∈[-10,9], z∈[-5,14] → edges at x -10.5..9.5, z -5.5..14.5.
        let m = LabelVolume::from_fn(g, |[i, j, k]| {
            ((20..40).contains(&i) && (25..35).contains(&j) && (25..45).contains(&k)) as u16 * 3
        })
        .unwrap();
        // Grid plane above the box, u = x and v = z.
        let pose = GridPose {
            origin: [0.0, 20.0, 0.0],
            axis_u: [1.0, 0.0, 0.0],
            axis_v: [0.0, 0.0, 1.0],
        };
        let eg = ElectrodeGrid::dual_5x13(pose);
        let b = project_boundaries(&m, &eg).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].label(), 3);
        let (lo, hi) = b[0].bounds();
        for (got, want) in [(lo.x, -10.5), (hi.x, 9.5), (lo.y, -5.5), (hi.y, 14.5)] {
            assert!((got - want).abs() <= 1.0, "{got} vs {want}");
        }
    }

    #[test]
    fn tilted_cylinder_projects_to_ellipse() {
        // Cylinder of radius 6 and length 30 whose axis is tilted 30° from the
        // grid normal (z). Its shadow is a stadium: a rectangle 12 × 30 sin30°
        // capped by half-ellipses of semi-axes 6 and 6 cos30°.
        let g = Grid3::new([70, 70, 70], [0.5; 3], [-17.5; 3]).unwrap();
        let th = 30f64.to_radians();
        let axis = nalgebra::Vector3::new(th.sin(), 0.0, th.cos());
        let m = LabelVolume::from_fn(g, |[i, j, k]| {
            let p = g.to_physical([i as f64, j as f64, k as f64]).coords;
            let s = p.dot(&axis);
            let r = (p - axis * s).norm();
            (s.abs() <= 15.0 && r <= 6.0) as u16
        })
        .unwrap();
        let analytic = 12.0 * 30.0 * th.sin() + PI * 6.0 * 6.0 * th.cos();
        // Cell-center sampling depends on where the shadow edges fall within a
        // cell, so average over sub-cell shifts of the grid origin.
        let areas: Vec<f64> = [0.0, 0.25, 0.5, 0.75]
            .iter()
            .map(|&d| {
                let eg = ElectrodeGrid::dual_5x13(GridPose::axis_aligned([d, d, 30.0]));
                project_boundaries(&m, &eg).unwrap()[0].area()
            })
            .collect();
        for a in &areas {
            assert!((a - analytic).abs() <= 0.1 * analytic, "{a} vs {analytic}");
        }
        let mean = areas.iter().sum::<f64>() / areas.len() as f64;
        assert!((mean - analytic).abs() <= 0.05 * analytic, "{mean} vs {analytic}");
    }

    #[test]
    fn disjoint_compartments_keep_labels() {
        let g = dense_grid();
        let m = LabelVolume::from_fn(g, |[i, j, k]| {
            if !(20..40).contains(&j) || !(10..50).contains(&k) {
                0
            } else if (5..20).contains(&i) {
                1
            } else if (35..55).contains(&i) {
                2
            } else {
                0
            }
        })
        .unwrap();
        let eg = ElectrodeGrid::dual_5x13(GridPose {
            origin: [0.0, 30.0, 0.0],
            axis_u: [1.0, 0.0, 0.0],
            axis_v: [0.0, 0.0, 1.0],
        });
        let b = project_boundaries(&m, &eg).unwrap();
        assert_eq!(b.iter().map(|c| c.label()).collect::<Vec<_>>(), vec![1, 2]);
        assert!(b[0].bounds().1.x < b[1].bounds().0.x);
    }

    #[test]
    fn degenerate_pose_rejected() {
        let m = LabelVolume::filled(dense_grid(), 1);
        let mut eg = grid();
        eg.pose.axis_v = [1.0, 0.0, 0.0];
        assert!(matches!(project_boundaries(&m, &eg), Err(Error::Argument(_))));
    }

    fn square(label: u16, x0: f64) -> Contour {
        Contour::new(
            vec![
                Point2::new(x0, 0.0),
                Point2::new(x0 + 10.0, 0.0),
                Point2::new(x0 + 10.0, 10.0),
                Point2::new(x0, 10.0),
            ],
            0.0,
            label,
        )
        .unwrap()
    }

    #[test]
    fn containment_counts() {
        let b = vec![square(1, 0.0), square(2, 20.0)];
        let mut centers = Vec::new();
        for k in 0..38 {
            centers.push(((k % 2 + 1) as u16, Point2::new(5.0 + 20.0 * (k % 2) as f64, 5.0)));
        }
        centers.push((1, Point2::new(25.0, 5.0)));
        centers.push((2, Point2::new(5.0, 5.0)));
        let r = containment_accuracy(&centers, &b).unwrap();
        assert_eq!(r.accuracy, 0.95);
        assert_eq!((r.inside, r.total), (38, 40));
        let all = containment_accuracy(&centers[..38], &b).unwrap();
        assert_eq!(all.accuracy, 1.0);
        assert!(matches!(
            containment_accuracy(&[(4, Point2::origin())], &b),
            Err(Error::Argument(_))
        ));
    }
}
