use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use compartmenter::phantom_io::write_phantom;
use compartmenter::pipeline::{run_pipeline, CenterEntry, RunError, RunOptions, REPORT_FILE};
use compartmenter::{ValidationError, VERSION_LINE};
use compartmenter_core::architecture::{bland_altman, measure, ArchitectureReport, Region};
use compartmenter_core::emg::{
    activation_center, containment_accuracy, preprocess, project_boundaries, ActivationMap, EmgParams, EmgRecording,
};
use compartmenter_core::flow::{aggregate_direction, FlowParams};
use compartmenter_core::growing::{grow_region, region_to_contour, GrowParams, SeedSet};
use compartmenter_core::io::vvol::{
    read_field, read_labels, read_mask2d, read_tensors, write_field, write_labels, write_tensors,
};
use compartmenter_core::io::{
    read_contours, read_dwi, read_emg_csv, read_emg_set, read_json, read_movie, read_streamlines, write_contours,
    write_json, write_streamlines,
};
use compartmenter_core::model::raster::rasterize_contour;
use compartmenter_core::model::{resample_onto, ElectrodeGrid, Grid3};
use compartmenter_core::phantom::PhantomSpec;
use compartmenter_core::registration::{
    loft_masks, map_contour, min_weight_match, sample_contour, MatchMode, Matching, Modality, SampledSet,
};
use compartmenter_core::tractography::{farthest_streamline_sample, filter_smooth, fit_tensor, track, TrackParams};
use nalgebra::Point2;

#[derive(Parser)]
#[command(name = "compartmenter", version = VERSION_LINE, about = "Muscle compartment segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from a manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Re-run this stage (repeatable) even if its cache is valid.
        #[arg(long = "force-stage")]
        force_stage: Vec<String>,
    },
    /// Generate a synthetic phantom.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Direction field from an ultrasound movie.
    Flow {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Grow compartments from seeds over a direction field.
    Grow {
        #[arg(long)]
        field: PathBuf,
        /// FDS mask (.vvol) or outline contour.
        #[arg(long)]
        fds: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Evenly spread samples inside a contour.
    Sample {
        #[arg(long)]
        contour: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        spacing: f64,
        #[arg(long, value_parser = ["us", "mri"], default_value = "us")]
        modality: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match ultrasound samples to MRI samples.
    Match {
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        v: PathBuf,
        #[arg(long, value_parser = ["dense", "sparse"], default_value = "sparse")]
        mode: String,
        #[arg(long, default_value_t = 32)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Carry ultrasound contours into MRI space.
    Map {
        #[arg(long)]
        matching: PathBuf,
        #[arg(long)]
        contour: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate mapped contours into a label volume.
    Loft {
        /// Contour file or directory of contour files.
        #[arg(long)]
        contours: PathBuf,
        /// Grid JSON, or a VVOL volume whose grid is used.
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest-neighbour resampling of a label volume onto another grid.
    Resample {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a diffusion tensor per voxel.
    TensorFit {
        #[arg(long)]
        dwi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Streamline tractography inside a labelled region.
    Track {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Compartment label; the whole muscle when absent.
        #[arg(long)]
        label: Option<u16>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Length filter and polynomial smoothing of streamlines.
    Smooth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Farthest-streamline subsampling.
    SampleStreamlines {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fiber architecture of one region.
    Measure {
        #[arg(long)]
        mask: PathBuf,
        /// Compartment label; the whole muscle when absent.
        #[arg(long)]
        label: Option<u16>,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bland-Altman comparison of reports paired by file name.
    Compare {
        #[arg(long)]
        segmented: PathBuf,
        #[arg(long)]
        nonsegmented: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMS activation map from repeated trials.
    EmgMap {
        /// Trial CSV files, or one EMG set directory.
        #[arg(long, num_args = 1..)]
        trials: Vec<PathBuf>,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value_t = 1)]
        finger: u16,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Activation center of a map.
    EmgCenter {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        thresh: f64,
        #[arg(long, default_value_t = 1)]
        finger: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compartment boundaries projected onto the electrode plane.
    Project {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fraction of activation centers inside their compartment.
    Validate {
        /// Center file or directory of center files.
        #[arg(long)]
        centers: PathBuf,
        #[arg(long)]
        boundaries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn params_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => T::default(),
    })
}

/// Files of a directory in name order, or the path itself.
fn files_in(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.retain(|p| p.is_file());
    out.sort();
    Ok(out)
}

fn is_vvol(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "vvol")
}

fn geometry(path: &Path) -> Result<Grid3> {
    if is_vvol(path) {
        Ok(compartmenter_core::io::vvol::read_header(path)?.grid()?)
    } else {
        Ok(read_json(path)?)
    }
}

fn region(label: Option<u16>) -> Region {
    label.map_or(Region::Muscle, Region::Compartment)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            manifest,
            workers,
            force_stage,
        } => {
            let summary = run_pipeline(
                &manifest,
                &RunOptions {
                    workers,
                    force: force_stage,
                },
            )?;
            for (stage, status) in &summary.stages {
                log::info!("{stage}: {status:?}");
            }
            println!("{}", summary.out_dir.join(REPORT_FILE).display());
        }
        Command::Phantom { spec, out } => {
            let spec: PhantomSpec = read_json(&spec)?;
            println!("{}", write_phantom(&spec, &out)?.display());
        }
        Command::Flow {
            frames,
            out,
            stride,
            params,
        } => {
            let mut p: FlowParams = params_or_default(&params)?;
            if let Some(s) = stride {
                p.stride = s;
            }
            write_field(&out, &aggregate_direction(&read_movie(&frames)?, &p)?)?;
        }
        Command::Grow {
            field,
            fds,
            seeds,
            out,
            params,
        } => {
            let p: GrowParams = params_or_default(&params)?;
            let field = read_field(&field)?;
            let grid = *field.grid();
            let mask = if is_vvol(&fds) {
                let (m, g) = read_mask2d(&fds)?;
                ensure!(g.dims == grid.dims, "FDS mask and direction field differ in size");
                m
            } else {
                let cs = read_contours(&fds)?;
                ensure!(cs.len() == 1, "expected one FDS outline, found {}", cs.len());
                rasterize_contour(&cs[0], grid.dims, grid.spacing)
            };
            let seeds: SeedSet = read_json(&seeds)?;
            seeds.validate()?;
            let contours = seeds
                .0
                .iter()
                .map(|(&label, pts)| {
                    let r = grow_region(&field, &mask, pts, &p)?;
                    Ok(region_to_contour(&r, grid.spacing, 0.0, label)?)
                })
                .collect::<Result<Vec<_>>>()?;
            write_contours(&out, &contours)?;
        }
        Command::Sample {
            contour,
            n,
            spacing,
            modality,
            out,
        } => {
            let cs = read_contours(&contour)?;
            ensure!(cs.len() == 1, "expected one contour, found {}", cs.len());
            let m = if modality == "mri" { Modality::Mri } else { Modality::Ultrasound };
            write_json(&out, &sample_contour(&cs[0], spacing, n, m)?)?;
        }
        Command::Match { u, v, mode, k, out } => {
            let u: SampledSet = read_json(&u)?;
            let v: SampledSet = read_json(&v)?;
            let mode = if mode == "dense" { MatchMode::Dense } else { MatchMode::Sparse { k } };
            write_json(&out, &min_weight_match(&u, &v, mode)?)?;
        }
        Command::Map { matching, contour, out } => {
            let m: Matching = read_json(&matching)?;
            let mapped = read_contours(&contour)?
                .iter()
                .map(|c| Ok(map_contour(&m, c)?.with_slice_z(m.v_slice_z)))
                .collect::<Result<Vec<_>>>()?;
            write_contours(&out, &mapped)?;
        }
        Command::Loft { contours, geometry: g, out } => {
            let mut cs = Vec::new();
            for f in files_in(&contours)? {
                cs.extend(read_contours(&f)?);
            }
            write_labels(&out, &loft_masks(&cs, &geometry(&g)?)?)?;
        }
        Command::Resample { masks, geometry: g, out } => {
            write_labels(&out, &resample_onto(&read_labels(&masks)?, &geometry(&g)?))?;
        }
        Command::TensorFit { dwi, out } => {
            write_tensors(&out, &fit_tensor(&read_dwi(&dwi)?)?)?;
        }
        Command::Track {
            tensors,
            mask,
            label,
            params,
            out,
        } => {
            let p: TrackParams = params_or_default(&params)?;
            let field = read_tensors(&tensors)?;
            let mask = read_labels(&mask)?;
            let tracks = match label {
                Some(l) => track(&field, &mask, l, &p)?,
                None => track(&field, &mask.merged(), 1, &p)?,
            };
            write_streamlines(&out, &tracks)?;
        }
        Command::Smooth { input, params, out } => {
            let p: TrackParams = params_or_default(&params)?;
            write_streamlines(&out, &filter_smooth(&read_streamlines(&input)?, &p))?;
        }
        Command::SampleStreamlines { input, n, out } => {
            let tracks = read_streamlines(&input)?;
            write_streamlines(&out, &farthest_streamline_sample(&tracks, n, None)?)?;
        }
        Command::Measure {
            mask,
            label,
            tracks,
            out,
        } => {
            let mask = read_labels(&mask)?;
            write_json(&out, &measure(&mask, region(label), &read_streamlines(&tracks)?)?)?;
        }
        Command::Compare {
            segmented,
            nonsegmented,
            out,
        } => compare(&segmented, &nonsegmented, &out)?,
        Command::EmgMap {
            trials,
            grid,
            rate,
            finger,
            params,
            out,
        } => {
            let p: EmgParams = params_or_default(&params)?;
            let recs = if trials.len() == 1 && (trials[0].is_dir() || trials[0].extension().is_some_and(|e| e == "json")) {
                let all = read_emg_set(&trials[0])?;
                all.into_iter().filter(|r| r.finger == finger).collect()
            } else {
                let grid: ElectrodeGrid = match &grid {
                    Some(g) => read_json(g)?,
                    None => bail!("--grid is required with CSV trials"),
                };
                let Some(rate) = rate else {
                    bail!("--rate is required with CSV trials");
                };
                trials
                    .iter()
                    .map(|t| {
                        Ok(EmgRecording {
                            channels: read_emg_csv(t)?,
                            sample_rate_hz: rate,
                            grid: grid.clone(),
                            trial: t.display().to_string(),
                            finger,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            write_json(&out, &preprocess(&recs, &p)?)?;
        }
        Command::EmgCenter {
            map,
            thresh,
            finger,
            out,
        } => {
            let map: ActivationMap = read_json(&map)?;
            let c = activation_center(&map, thresh)?;
            write_json(
                &out,
                &CenterEntry {
                    finger,
                    center: [c.x, c.y],
                },
            )?;
        }
        Command::Project { masks, grid, out } => {
            let grid: ElectrodeGrid = read_json(&grid)?;
            write_contours(&out, &project_boundaries(&read_labels(&masks)?, &grid)?)?;
        }
        Command::Validate {
            centers,
            boundaries,
            out,
        } => {
            let mut pts = Vec::new();
            for f in files_in(&centers)? {
                let v: serde_json::Value = read_json(&f)?;
                let entries: Vec<CenterEntry> = if v.is_array() {
                    serde_json::from_value(v)?
                } else {
                    vec![serde_json::from_value(v)?]
                };
                pts.extend(entries.into_iter().map(|c| (c.finger, Point2::from(c.center))));
            }
            write_json(&out, &containment_accuracy(&pts, &read_contours(&boundaries)?)?)?;
        }
    }
    Ok(())
}

type Property = fn(&ArchitectureReport) -> f64;

/// Summaries per property as JSON, with each point list beside it as CSV.
fn compare(segmented: &Path, nonsegmented: &Path, out: &Path) -> Result<()> {
    let load = |dir: &Path| -> Result<BTreeMap<String, ArchitectureReport>> {
        files_in(dir)?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .map(|p| {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                Ok((name, read_json(&p)?))
            })
            .collect()
    };
    let a = load(segmented)?;
    let b = load(nonsegmented)?;
    let paired: Vec<(&ArchitectureReport, &ArchitectureReport)> =
        a.iter().filter_map(|(k, ra)| b.get(k).map(|rb| (ra, rb))).collect();
    ensure!(
        !paired.is_empty(),
        "no report file name appears in both {} and {}",
        segmented.display(),
        nonsegmented.display()
    );
    let props: [(&str, Property); 4] = [
        ("fl_mm", |r| r.fl_mm),
        ("pa_deg", |r| r.pa_deg),
        ("mv_mm3", |r| r.mv_mm3),
        ("pcsa_mm2", |r| r.pcsa_mm2),
    ];
    let mut summary = BTreeMap::new();
    let stem = out.with_extension("");
    for (name, get) in props {
        let pairs: Vec<(f64, f64)> = paired.iter().map(|(x, y)| (get(x), get(y))).collect();
        let s = bland_altman(&pairs)?;
        let csv_path = PathBuf::from(format!("{}_{name}.csv", stem.display()));
        let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
        w.write_record(["mean", "diff"])?;
        for p in &s.points {
            w.write_record([p.mean.to_string(), p.diff.to_string()])?;
        }
        w.flush()?;
        summary.insert(name, s);
    }
    write_json(out, &summary)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use compartmenter_core::Error as E;
    if let Some(r) = err.downcast_ref::<RunError>() {
        return match r {
            RunError::Validation(_) => 2,
            RunError::Stage { .. } => 3,
        };
    }
    if err.downcast_ref::<ValidationError>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Argument(_) | E::Format { .. } => 2,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
