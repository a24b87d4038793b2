//! Run manifest: inputs of one subject, the slice pairing table and stage
//! parameters.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use compartmenter_core::architecture::Ranges;
use compartmenter_core::emg::EmgParams;
use compartmenter_core::flow::FlowParams;
use compartmenter_core::growing::GrowParams;
use compartmenter_core::io::read_json;
use compartmenter_core::registration::MatchMode;
use compartmenter_core::tractography::TrackParams;
use serde::{Deserialize, Serialize};

use crate::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subject: String,
    /// Output directory; relative paths are taken from the manifest's directory.
    pub out_dir: PathBuf,
    pub slices: Vec<SliceEntry>,
    /// JSON `Grid3` of the MRI volume the masks are lofted onto.
    pub mri_grid: PathBuf,
    /// DWI directory or manifest.
    pub dwi: PathBuf,
    /// EMG directory or manifest.
    pub emg: PathBuf,
    /// Reference compartments on the DWI grid, for Dice reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_masks: Option<PathBuf>,
    #[serde(default)]
    pub params: StageParams,
}

/// One ultrasound slice and its paired MRI slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub name: String,
    pub us_z: f64,
    pub mri_z: f64,
    /// Movie directory or manifest.
    pub movie: PathBuf,
    pub fds_mask: PathBuf,
    pub seeds: PathBuf,
    pub mri_outline: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageParams {
    pub flow: FlowParams,
    pub grow: GrowParams,
    pub sampling: SamplingParams,
    pub track: TrackParams,
    pub emg: EmgParams,
    pub emg_threshold: f64,
    pub ranges: Ranges,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            flow: FlowParams::default(),
            grow: GrowParams::default(),
            sampling: SamplingParams::default(),
            track: TrackParams::default(),
            emg: EmgParams::default(),
            emg_threshold: 0.8,
            ranges: Ranges::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub spacing_mm: f64,
    pub points: usize,
    pub mode: MatchMode,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            spacing_mm: 0.5,
            points: 400,
            mode: MatchMode::default(),
        }
    }
}

impl RunManifest {
    /// Reads a manifest and resolves its paths against the manifest directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: RunManifest =
            read_json(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut m.out_dir);
        fix(&mut m.mri_grid);
        fix(&mut m.dwi);
        fix(&mut m.emg);
        if let Some(t) = &mut m.truth_masks {
            fix(t);
        }
        for s in &mut m.slices {
            fix(&mut s.movie);
            fix(&mut s.fds_mask);
            fix(&mut s.seeds);
            fix(&mut s.mri_outline);
        }
        Ok(m)
    }

    /// Checks the slice table, parameters and that every input exists. Errors
    /// name the stage that consumes the offending input.
    pub fn validate(&self) -> std::result::Result<(), ValidationError> {
        let fail = |stage: &str, msg: String| Err(ValidationError::new(Some(stage), msg));
        if self.slices.is_empty() {
            return fail("flow", "manifest lists no slices".into());
        }
        let names: BTreeSet<&str> = self.slices.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.slices.len() {
            return fail("flow", "slice names must be unique".into());
        }
        for w in self.slices.windows(2) {
            if !(w[1].us_z > w[0].us_z && w[1].mri_z > w[0].mri_z) {
                return fail(
                    "map",
                    format!("slice table is not increasing in z at {} -> {}", w[0].name, w[1].name),
                );
            }
        }
        let p = &self.params;
        let checks: [(&str, compartmenter_core::Result<()>); 4] = [
            ("flow", p.flow.validate()),
            ("grow", p.grow.validate()),
            ("track", p.track.validate()),
            ("emg-map", p.emg.validate()),
        ];
        for (stage, r) in checks {
            if let Err(e) = r {
                return fail(stage, e.to_string());
            }
        }
        if !(p.sampling.spacing_mm > 0.0) || p.sampling.points == 0 {
            return fail("match", "sampling spacing and point count must be positive".into());
        }
        if !(0.0..1.0).contains(&p.emg_threshold) {
            return fail("emg-center", "activation threshold must lie in [0, 1)".into());
        }
        let mut inputs: Vec<(&str, &str, &Path)> = Vec::new();
        for s in &self.slices {
            inputs.push(("flow", "movie", &s.movie));
            inputs.push(("grow", "FDS mask", &s.fds_mask));
            inputs.push(("grow", "seeds file", &s.seeds));
            inputs.push(("match", "MRI outline", &s.mri_outline));
        }
        inputs.push(("loft", "MRI grid", &self.mri_grid));
        inputs.push(("tensor-fit", "DWI", &self.dwi));
        inputs.push(("emg-map", "EMG", &self.emg));
        if let Some(t) = &self.truth_masks {
            inputs.push(("report", "truth masks", t));
        }
        for (stage, what, path) in inputs {
            if !path.exists() {
                return fail(stage, format!("{what} {} does not exist", path.display()));
            }
        }
        Ok(())
    }
}
