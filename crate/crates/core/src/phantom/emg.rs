use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng;
use crate::emg::{apply_chain, butterworth_q, project_boundaries, Biquad, EmgRecording};
use crate::error::{Error, Result};
use crate::model::{ElectrodeGrid, LabelVolume};

/// Gaussian activation blob over the electrode grid, recorded as filtered
/// noise with mains interference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgPhantomSpec {
    pub grid: ElectrodeGrid,
    /// Blob center in grid-frame mm.
    pub center: [f64; 2],
    #[serde(default = "default_sigma")]
    pub sigma_mm: f64,
    /// Relative amplitude far from the blob.
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// Peak muscle signal RMS, mV.
    #[serde(default = "default_peak")]
    pub peak_mv: f64,
    /// Mains amplitude, mV.
    #[serde(default = "default_line")]
    pub line_mv: f64,
    #[serde(default = "default_line_hz")]
    pub line_hz: f64,
    #[serde(default = "default_finger")]
    pub finger: u16,
    /// Channels recorded with a bad contact (ten times the signal).
    #[serde(default)]
    pub faulty_channels: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma() -> f64 {
    20.0
}
fn default_floor() -> f64 {
    0.2
}
fn default_trials() -> usize {
    3
}
fn default_duration() -> f64 {
    4.0
}
fn default_rate() -> f64 {
    2048.0
}
fn default_peak() -> f64 {
    0.5
}
fn default_line() -> f64 {
    0.2
}
fn default_line_hz() -> f64 {
    50.0
}
fn default_finger() -> u16 {
    1
}

impl EmgPhantomSpec {
    pub fn new(grid: ElectrodeGrid, center: [f64; 2]) -> Self {
        Self {
            grid,
            center,
            sigma_mm: default_sigma(),
            floor: default_floor(),
            trials: default_trials(),
            duration_s: default_duration(),
            sample_rate_hz: default_rate(),
            peak_mv: default_peak(),
            line_mv: default_line(),
            line_hz: default_line_hz(),
            finger: default_finger(),
            faulty_channels: Vec::new(),
            seed: 0,
        }
    }

    /// Blob centered on the projected footprint of compartment `finger`.
    pub fn over_compartment(masks: &LabelVolume, grid: ElectrodeGrid, finger: u16) -> Result<Self> {
        if masks.count_label(finger) == 0 {
            return Err(Error::arg(format!("label {finger} is absent from the mask")));
        }
        let footprint = project_boundaries(masks, &grid)?
            .into_iter()
            .find(|c| c.label() == finger)
            .ok_or_else(|| Error::Internal(format!("no footprint for label {finger}")))?;
        let c = footprint.centroid();
        let mut spec = Self::new(grid, [c.x, c.y]);
        spec.finger = finger;
        Ok(spec)
    }

    /// Relative signal amplitude at each electrode.
    pub fn amplitudes(&self) -> Vec<f64> {
        self.grid
            .positions()
            .iter()
            .map(|q| {
                let d2 = (q.x - self.center[0]).powi(2) + (q.y - self.center[1]).powi(2);
                self.floor + (1.0 - self.floor) * (-d2 / (2.0 * self.sigma_mm * self.sigma_mm)).exp()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EmgPhantom {
    pub recordings: Vec<EmgRecording>,
    /// Noise-free relative amplitude per electrode.
    pub amplitudes: Vec<f64>,
}

pub fn make_emg_phantom(spec: &EmgPhantomSpec) -> Result<EmgPhantom> {
    spec.grid.validate()?;
    if !(spec.sigma_mm > 0.0 && (0.0..1.0).contains(&spec.floor)) {
        return Err(Error::arg("blob width must be positive and floor in [0, 1)"));
    }
    if spec.trials == 0 || !(spec.duration_s > 0.0) || !(spec.sample_rate_hz > 1000.0) {
        return Err(Error::arg("need at least one trial, positive duration and a rate above 1 kHz"));
    }
    let n_ch = spec.grid.electrode_count();
    if spec.faulty_channels.iter().any(|&c| c >= n_ch) {
        return Err(Error::arg("faulty channel outside the grid"));
    }
    let fs = spec.sample_rate_hz;
    let n = (spec.duration_s * fs).round() as usize;
    let mut amps = spec.amplitudes();
    let truth = amps.clone();
    for &c in &spec.faulty_channels {
        amps[c] *= 10.0;
    }
    let q = butterworth_q(4);
    let mut band: Vec<Biquad> = q.iter().map(|&q| Biquad::highpass(20.0, q, fs)).collect();
    band.extend(q.iter().map(|&q| Biquad::lowpass(450.0, q, fs)));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let recordings = (0..spec.trials)
        .map(|t| {
            let mut r = rng(spec.seed, t as u64);
            let channels = amps
                .iter()
                .map(|&a| {
                    let mut x: Vec<f64> = (0..n).map(|_| normal.sample(&mut r)).collect();
                    apply_chain(&band, &mut x);
                    let phase = 2.0 * PI * normal.sample(&mut r);
                    // Band-passed unit noise has RMS close to sqrt(430 / (fs/2)).
                    let scale = spec.peak_mv * a / (430.0 / (fs / 2.0)).sqrt();
                    x.iter()
                        .enumerate()
                        .map(|(k, v)| {
                            scale * v + spec.line_mv * (2.0 * PI * spec.line_hz * k as f64 / fs + phase).sin()
                        })
                        .collect()
                })
                .collect();
            EmgRecording {
                channels,
                sample_rate_hz: fs,
                grid: spec.grid.clone(),
                trial: format!("trial{}", t + 1),
                finger: spec.finger,
            }
        })
        .collect();
    Ok(EmgPhantom {
        recordings,
        amplitudes: truth,
    })
}
