//! Stage graph of a full run with checksum-based caching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use compartmenter_core::architecture::{measure, range_check, ArchitectureReport, RangeCheck, Region};
use compartmenter_core::emg::{
    activation_center, containment_accuracy, preprocess, project_boundaries, ActivationMap, Containment,
};
use compartmenter_core::flow::aggregate_direction;
use compartmenter_core::growing::{grow_region, region_to_contour, SeedSet};
use compartmenter_core::io::vvol::{
    read_field, read_header, read_labels, read_mask2d, read_tensors, write_field, write_labels, write_tensors,
};
use compartmenter_core::io::{
    read_contours, read_dwi, read_emg_set, read_json, read_movie, read_streamlines, write_contours, write_json,
    write_streamlines, DwiManifest, EmgManifest, DWI_MANIFEST, EMG_MANIFEST,
};
use compartmenter_core::model::raster::{largest_component, mask_to_contour};
use compartmenter_core::model::{resample_onto, Contour, ElectrodeGrid, Grid3, LabelVolume};
use compartmenter_core::registration::{loft_masks, map_contour, min_weight_match, sample_contour, Matching, Modality};
use compartmenter_core::tractography::{farthest_streamline_sample, filter_smooth, fit_tensor, track};
use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{sha256_bytes, sha256_path, StageLog, StageStatus};
use crate::manifest::{RunManifest, SliceEntry};
use crate::{ValidationError, FORMAT_VERSION, PIPELINE_VERSION};

/// Stages in execution order.
pub const STAGES: [&str; 14] = [
    "flow",
    "grow",
    "match",
    "map",
    "loft",
    "resample",
    "tensor-fit",
    "track",
    "sample",
    "measure",
    "emg-map",
    "emg-center",
    "project",
    "validate",
];

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    /// Stages re-run even when cached.
    pub force: Vec<String>,
}

#[derive(Debug)]
pub enum RunError {
    Validation(ValidationError),
    Stage { stage: String, error: anyhow::Error },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Validation(e) => write!(f, "invalid manifest: {e}"),
            RunError::Stage { stage, error } => write!(f, "stage {stage} failed: {error:#}"),
        }
    }
}

impl std::error::Error for RunError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub report: ArchitectureReport,
    pub ranges: RangeCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterEntry {
    pub finger: u16,
    pub center: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDice {
    pub label: u16,
    pub dice: f64,
}

/// Report bundle summary. It holds no timings, so identical inputs give an
/// identical file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub subject: String,
    pub pipeline_version: String,
    pub format_version: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub architecture: Vec<RegionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub containment: Option<Containment>,
    pub dice: Vec<LabelDice>,
    /// Artifact checksums keyed by path relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<(String, StageStatus)>,
    pub report: Report,
}

struct Runner {
    root: PathBuf,
    base: PathBuf,
    force: BTreeSet<String>,
    statuses: Vec<(String, StageStatus)>,
    artifacts: BTreeMap<String, String>,
}

fn rel(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

impl Runner {
    fn stage(
        &mut self,
        name: &str,
        params: &impl Serialize,
        inputs: &[PathBuf],
        run: impl FnOnce() -> Result<Vec<PathBuf>>,
    ) -> std::result::Result<(), RunError> {
        let wrap = |error: anyhow::Error| RunError::Stage {
            stage: name.to_string(),
            error,
        };
        let params = serde_json::to_value(params).map_err(|e| wrap(e.into()))?;
        let mut input_sums = BTreeMap::new();
        for p in inputs {
            let sum = sha256_path(p).map_err(wrap)?;
            input_sums.insert(rel(&self.base, p), sum);
        }
        let key = sha256_bytes(
            serde_json::to_string(&(PIPELINE_VERSION, name, &params, input_sums.values().collect::<Vec<_>>()))
                .expect("key serializes")
                .as_bytes(),
        );
        let log_path = self.root.join("logs").join(format!("{name}.json"));
        if !self.force.contains(name) {
            if let Ok(prev) = read_json::<StageLog>(&log_path) {
                if prev.status == StageStatus::Ok && prev.key == key && prev.outputs_intact(&self.root) {
                    log::info!("{name}: inputs unchanged, skipped");
                    self.artifacts.extend(prev.outputs);
                    self.statuses.push((name.to_string(), StageStatus::Skipped));
                    return Ok(());
                }
            }
        }
        log::info!("{name}: running");
        let t = Instant::now();
        let result = run();
        let mut entry = StageLog {
            stage: name.to_string(),
            status: StageStatus::Ok,
            key,
            params,
            inputs: input_sums,
            outputs: BTreeMap::new(),
            wall_time_s: 0.0,
            error: None,
        };
        let outcome = result.and_then(|outputs| {
            for p in outputs {
                entry.outputs.insert(rel(&self.root, &p), sha256_path(&p)?);
            }
            Ok(())
        });
        entry.wall_time_s = t.elapsed().as_secs_f64();
        if let Err(e) = &outcome {
            entry.status = StageStatus::Failed;
            entry.error = Some(format!("{e:#}"));
        }
        write_json(&log_path, &entry).map_err(|e| wrap(e.into()))?;
        self.statuses.push((name.to_string(), entry.status));
        outcome.map_err(wrap)?;
        self.artifacts.extend(entry.outputs);
        Ok(())
    }
}

/// Runs every stage of the manifest and writes the report bundle.
pub fn run_pipeline(manifest_path: &Path, opts: &RunOptions) -> std::result::Result<RunSummary, RunError> {
    let m = RunManifest::load(manifest_path)
        .map_err(|e| RunError::Validation(ValidationError::new(None, format!("{e:#}"))))?;
    m.validate().map_err(RunError::Validation)?;
    if let Some(bad) = opts.force.iter().find(|s| !STAGES.contains(&s.as_str())) {
        return Err(RunError::Validation(ValidationError::new(
            None,
            format!("unknown stage {bad:?}; stages are {}", STAGES.join(", ")),
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Validation(ValidationError::new(None, e.to_string())))?;
    let mut runner = Runner {
        root: m.out_dir.clone(),
        base: manifest_path.parent().unwrap_or(Path::new("")).to_path_buf(),
        force: opts.force.iter().cloned().collect(),
        statuses: Vec::new(),
        artifacts: BTreeMap::new(),
    };
    let result = pool.install(|| run_stages(&m, &mut runner));
    let mut report = Report {
        subject: m.subject.clone(),
        pipeline_version: PIPELINE_VERSION.to_string(),
        format_version: FORMAT_VERSION.to_string(),
        status: StageStatus::Ok,
        failed_stage: None,
        error: None,
        architecture: Vec::new(),
        containment: None,
        dice: Vec::new(),
        artifacts: runner.artifacts.clone(),
    };
    match &result {
        Ok(()) => {
            let filled = pool.install(|| fill_report(&m, &mut report));
            if let Err(error) = filled {
                return Err(RunError::Stage {
                    stage: "report".into(),
                    error,
                });
            }
        }
        Err(RunError::Stage { stage, error }) => {
            report.status = StageStatus::Failed;
            report.failed_stage = Some(stage.clone());
            report.error = Some(format!("{error:#}"));
        }
        Err(RunError::Validation(_)) => {}
    }
    write_json(&m.out_dir.join(REPORT_FILE), &report).map_err(|e| RunError::Stage {
        stage: "report".into(),
        error: e.into(),
    })?;
    result?;
    Ok(RunSummary {
        out_dir: m.out_dir.clone(),
        stages: runner.statuses,
        report,
    })
}

fn stage_dir(root: &Path, stage: &str) -> PathBuf {
    root.join(stage)
}

fn manifest_file(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}

fn dwi_grid(path: &Path) -> Result<Grid3> {
    let mp = manifest_file(path, DWI_MANIFEST);
    let dm: DwiManifest = read_json(&mp)?;
    let first = dm.volumes.first().ok_or_else(|| anyhow!("DWI manifest lists no volumes"))?;
    Ok(read_header(&mp.parent().unwrap_or(Path::new("")).join(&first.file))?.grid()?)
}

fn emg_grid(path: &Path) -> Result<ElectrodeGrid> {
    let em: EmgManifest = read_json(&manifest_file(path, EMG_MANIFEST))?;
    Ok(em.grid)
}

/// Whole muscle first, then each compartment, with file stems.
fn regions(mask: &LabelVolume) -> Vec<(Region, String)> {
    std::iter::once((Region::Muscle, "muscle".to_string()))
        .chain(mask.labels().into_iter().map(|l| (Region::Compartment(l), format!("c{l}"))))
        .collect()
}

fn us_outline(s: &SliceEntry) -> Result<Contour> {
    let (fds, g) = read_mask2d(&s.fds_mask)?;
    Ok(mask_to_contour(&largest_component(&fds), g.spacing, [0.0, 0.0], s.us_z, 0)?)
}

fn mri_outline(s: &SliceEntry) -> Result<Contour> {
    let cs = read_contours(&s.mri_outline)?;
    ensure!(
        cs.len() == 1,
        "{}: expected one MRI outline contour, found {}",
        s.mri_outline.display(),
        cs.len()
    );
    Ok(cs[0].clone().with_slice_z(s.mri_z))
}

fn run_stages(m: &RunManifest, r: &mut Runner) -> std::result::Result<(), RunError> {
    let root = m.out_dir.clone();
    let p = &m.params;
    let slices = &m.slices;
    let per_slice = |stage: &str, ext: &str| -> Vec<PathBuf> {
        slices
            .iter()
            .map(|s| stage_dir(&root, stage).join(format!("{}.{ext}", s.name)))
            .collect()
    };
    let fields = per_slice("flow", "vvol");
    let grown = per_slice("grow", "jsonl");
    let matchings = per_slice("match", "json");
    let mapped = stage_dir(&root, "map").join("contours.jsonl");
    let lofted = stage_dir(&root, "loft").join("masks.vvol");
    let resampled = stage_dir(&root, "resample").join("masks.vvol");
    let tensors = stage_dir(&root, "tensor-fit").join("tensors.vvol");
    let centers = stage_dir(&root, "emg-center").join("centers.json");
    let boundaries = stage_dir(&root, "project").join("boundaries.jsonl");
    let accuracy = stage_dir(&root, "validate").join("accuracy.json");
    let reports = stage_dir(&root, "measure").join("reports.json");

    let movies: Vec<PathBuf> = slices.iter().map(|s| s.movie.clone()).collect();
    r.stage("flow", &(p.flow, slices), &movies, || {
        let out: Vec<_> = slices
            .par_iter()
            .map(|s| -> Result<_> {
                let frames = read_movie(&s.movie)?;
                aggregate_direction(&frames, &p.flow).with_context(|| format!("slice {}", s.name))
            })
            .collect::<Result<_>>()?;
        for (f, path) in out.iter().zip(&fields) {
            write_field(path, f)?;
        }
        Ok(fields.clone())
    })?;

    let mut inputs = fields.clone();
    inputs.extend(slices.iter().flat_map(|s| [s.fds_mask.clone(), s.seeds.clone()]));
    r.stage("grow", &(p.grow, slices), &inputs, || {
        let out: Vec<Vec<Contour>> = slices
            .par_iter()
            .zip(&fields)
            .map(|(s, fp)| -> Result<_> {
                let field = read_field(fp)?;
                let (fds, _) = read_mask2d(&s.fds_mask)?;
                ensure!(fds.dims == field.grid().dims, "slice {}: FDS mask and movie differ in size", s.name);
                let seeds: SeedSet = read_json(&s.seeds)?;
                seeds.validate()?;
                seeds
                    .0
                    .iter()
                    .map(|(&label, pts)| {
                        let region = grow_region(&field, &fds, pts, &p.grow)?;
                        region_to_contour(&region, field.grid().spacing, s.us_z, label)
                            .with_context(|| format!("slice {}, label {label}", s.name))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (cs, path) in out.iter().zip(&grown) {
            write_contours(path, cs)?;
        }
        Ok(grown.clone())
    })?;

    let inputs: Vec<PathBuf> = slices.iter().flat_map(|s| [s.fds_mask.clone(), s.mri_outline.clone()]).collect();
    r.stage("match", &(p.sampling, slices), &inputs, || {
        let out: Vec<Matching> = slices
            .par_iter()
            .map(|s| -> Result<_> {
                let us = us_outline(s)?;
                let mri = mri_outline(s)?;
                let sp = &p.sampling;
                let u = sample_contour(&us, sp.spacing_mm, sp.points, Modality::Ultrasound)?;
                let v = sample_contour(&mri, sp.spacing_mm, sp.points, Modality::Mri)?;
                min_weight_match(&u, &v, sp.mode).with_context(|| format!("slice {}", s.name))
            })
            .collect::<Result<_>>()?;
        for (mt, path) in out.iter().zip(&matchings) {
            write_json(path, mt)?;
        }
        Ok(matchings.clone())
    })?;

    let mut inputs = matchings.clone();
    inputs.extend(grown.iter().cloned());
    r.stage("map", &slices, &inputs, || {
        let out: Vec<Vec<Contour>> = slices
            .par_iter()
            .zip(matchings.par_iter().zip(&grown))
            .map(|(s, (mp, gp))| -> Result<_> {
                let matching: Matching = read_json(mp)?;
                read_contours(gp)?
                    .iter()
                    .map(|c| {
                        Ok(map_contour(&matching, c)
                            .with_context(|| format!("slice {}, label {}", s.name, c.label()))?
                            .with_slice_z(s.mri_z))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        write_contours(&mapped, &out.concat())?;
        Ok(vec![mapped.clone()])
    })?;

    r.stage("loft", &(), &[mapped.clone(), m.mri_grid.clone()], || {
        let grid: Grid3 = read_json(&m.mri_grid)?;
        let masks = loft_masks(&read_contours(&mapped)?, &grid)?;
        write_labels(&lofted, &masks)?;
        Ok(vec![lofted.clone()])
    })?;

    r.stage("resample", &(), &[lofted.clone(), m.dwi.clone()], || {
        let target = dwi_grid(&m.dwi)?;
        write_labels(&resampled, &resample_onto(&read_labels(&lofted)?, &target))?;
        Ok(vec![resampled.clone()])
    })?;

    r.stage("tensor-fit", &(), std::slice::from_ref(&m.dwi), || {
        write_tensors(&tensors, &fit_tensor(&read_dwi(&m.dwi)?)?)?;
        Ok(vec![tensors.clone()])
    })?;

    let track_dir = stage_dir(&root, "track");
    r.stage("track", &p.track, &[tensors.clone(), resampled.clone()], || {
        let field = read_tensors(&tensors)?;
        let mask = read_labels(&resampled)?;
        let mut out = Vec::new();
        for (region, stem) in regions(&mask) {
            let tracks = match region {
                Region::Muscle => track(&field, &mask.merged(), 1, &p.track)?,
                Region::Compartment(l) => track(&field, &mask, l, &p.track)?,
            };
            let path = track_dir.join(format!("{stem}.csv"));
            write_streamlines(&path, &tracks)?;
            out.push(path);
        }
        Ok(out)
    })?;

    let sample_dir = stage_dir(&root, "sample");
    let mask_regions = || -> Result<Vec<(Region, String)>> { Ok(regions(&read_labels(&resampled)?)) };
    let track_files = |dir: &Path| -> Vec<PathBuf> {
        mask_regions()
            .map(|rs| rs.iter().map(|(_, s)| dir.join(format!("{s}.csv"))).collect())
            .unwrap_or_default()
    };
    let mut inputs = track_files(&track_dir);
    inputs.push(resampled.clone());
    r.stage("sample", &p.track, &inputs, || {
        let mut out = Vec::new();
        for (_, stem) in mask_regions()? {
            let tracks = read_streamlines(&track_dir.join(format!("{stem}.csv")))?;
            let smooth = filter_smooth(&tracks, &p.track);
            ensure!(!smooth.is_empty(), "{stem}: no streamline survived filtering");
            let n = p.track.target_count.min(smooth.len());
            if n < p.track.target_count {
                log::warn!("{stem}: {} streamlines available, sampling all instead of {}", smooth.len(), p.track.target_count);
            }
            let picked = farthest_streamline_sample(&smooth, n, None)?;
            let path = sample_dir.join(format!("{stem}.csv"));
            write_streamlines(&path, &picked)?;
            out.push(path);
        }
        Ok(out)
    })?;

    let mut inputs = track_files(&sample_dir);
    inputs.push(resampled.clone());
    r.stage("measure", &p.ranges, &inputs, || {
        let mask = read_labels(&resampled)?;
        let out = regions(&mask)
            .into_iter()
            .map(|(region, stem)| -> Result<RegionReport> {
                let tracks = read_streamlines(&sample_dir.join(format!("{stem}.csv")))?;
                let report = measure(&mask, region, &tracks)?;
                let ranges = range_check(&report, &p.ranges);
                Ok(RegionReport { report, ranges })
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(&reports, &out)?;
        Ok(vec![reports.clone()])
    })?;

    let map_dir = stage_dir(&root, "emg-map");
    r.stage("emg-map", &p.emg, std::slice::from_ref(&m.emg), || {
        let mut by_finger: BTreeMap<u16, Vec<_>> = BTreeMap::new();
        for rec in read_emg_set(&m.emg)? {
            by_finger.entry(rec.finger).or_default().push(rec);
        }
        let maps: Vec<(u16, ActivationMap)> = by_finger
            .into_par_iter()
            .map(|(f, recs)| Ok((f, preprocess(&recs, &p.emg).with_context(|| format!("finger {f}"))?)))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        for (f, map) in maps {
            let path = map_dir.join(format!("f{f}.json"));
            write_json(&path, &map)?;
            out.push(path);
        }
        Ok(out)
    })?;

    let map_files: Vec<PathBuf> = r
        .artifacts
        .keys()
        .filter(|k| k.starts_with("emg-map/"))
        .map(|k| root.join(k))
        .collect();
    r.stage("emg-center", &p.emg_threshold, &map_files, || {
        let out = map_files
            .iter()
            .map(|path| -> Result<CenterEntry> {
                let map: ActivationMap = read_json(path)?;
                let finger = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.strip_prefix('f'))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| anyhow!("unexpected map file {}", path.display()))?;
                let c = activation_center(&map, p.emg_threshold)?;
                Ok(CenterEntry {
                    finger,
                    center: [c.x, c.y],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(&centers, &out)?;
        Ok(vec![centers.clone()])
    })?;

    r.stage("project", &(), &[lofted.clone(), m.emg.clone()], || {
        let grid = emg_grid(&m.emg)?;
        write_contours(&boundaries, &project_boundaries(&read_labels(&lofted)?, &grid)?)?;
        Ok(vec![boundaries.clone()])
    })?;

    r.stage("validate", &(), &[centers.clone(), boundaries.clone()], || {
        let cs: Vec<CenterEntry> = read_json(&centers)?;
        let pts: Vec<(u16, Point2<f64>)> = cs.iter().map(|c| (c.finger, Point2::from(c.center))).collect();
        write_json(&accuracy, &containment_accuracy(&pts, &read_contours(&boundaries)?)?)?;
        Ok(vec![accuracy.clone()])
    })?;
    Ok(())
}

fn dice(a: &LabelVolume, b: &LabelVolume, label: u16) -> f64 {
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += (x == label) as usize;
        nb += (y == label) as usize;
        both += (x == label && y == label) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

fn fill_report(m: &RunManifest, report: &mut Report) -> Result<()> {
    let root = &m.out_dir;
    let mut arch: Vec<RegionReport> = read_json(&root.join("measure/reports.json"))?;
    for a in &mut arch {
        a.report.fl_per_track.clear();
        a.report.pa_per_track.clear();
    }
    report.architecture = arch;
    report.containment = Some(read_json(&root.join("validate/accuracy.json"))?);
    if let Some(tp) = &m.truth_masks {
        let truth = read_labels(tp)?;
        let got = read_labels(&root.join("resample/masks.vvol"))?;
        if truth.grid() != got.grid() {
            bail!("truth masks and resampled masks differ in geometry");
        }
        report.dice = truth
            .labels()
            .into_iter()
            .map(|label| LabelDice {
                label,
                dice: dice(&truth, &got, label),
            })
            .collect();
    }
    Ok(())
}
