//! Writes phantoms in the formats the pipeline ingests.

use std::path::{Path, PathBuf};

use anyhow::Result;
use compartmenter_core::emg::EmgParams;
use compartmenter_core::io::vvol::{write_field, write_labels, write_mask2d, write_tensors};
use compartmenter_core::io::{write_contours, write_dwi, write_emg_set, write_json, write_movie};
use compartmenter_core::phantom::{
    make_emg_phantom, make_flow_movie, make_registration_pair, make_subject, make_tensor_phantom, PhantomSpec,
    SubjectPhantom,
};
use compartmenter_core::tractography::TrackParams;

use crate::manifest::{RunManifest, SamplingParams, SliceEntry, StageParams};

pub const RUN_MANIFEST: &str = "run.json";
const FRAME_RATE_HZ: f64 = 30.0;

/// Generates the phantom and writes it below `out`, returning the main file
/// (the run manifest for subjects).
pub fn write_phantom(spec: &PhantomSpec, out: &Path) -> Result<PathBuf> {
    write_json(&out.join("spec.json"), spec)?;
    match spec {
        PhantomSpec::FlowMovie(s) => {
            let m = make_flow_movie(s)?;
            write_movie(&out.join("movie"), &m.frames, FRAME_RATE_HZ)?;
            write_field(&out.join("truth_field.vvol"), &m.truth)?;
            for (k, r) in m.regions.iter().enumerate() {
                write_mask2d(&out.join(format!("region_{k}.vvol")), r, s.spacing_mm)?;
            }
            Ok(out.join("movie"))
        }
        PhantomSpec::RegistrationPair(s) => {
            let p = make_registration_pair(s)?;
            write_contours(&out.join("us_outline.jsonl"), &[p.us_outline])?;
            write_contours(&out.join("us_compartment.jsonl"), &[p.us_compartment])?;
            write_contours(&out.join("mri_outline.jsonl"), &[p.mri_outline])?;
            write_contours(&out.join("truth_compartment.jsonl"), &[p.truth_compartment])?;
            Ok(out.join("truth_compartment.jsonl"))
        }
        PhantomSpec::Tensor(s) => {
            let p = make_tensor_phantom(s)?;
            write_tensors(&out.join("tensors.vvol"), &p.field)?;
            write_labels(&out.join("masks.vvol"), &p.mask)?;
            if let Some(dwi) = &p.dwi {
                write_dwi(&out.join("dwi"), dwi)?;
            }
            write_json(&out.join("truth.json"), &p.truth)?;
            Ok(out.join("truth.json"))
        }
        PhantomSpec::Emg(s) => {
            let p = make_emg_phantom(s)?;
            write_emg_set(&out.join("emg"), &p.recordings)?;
            write_json(&out.join("grid.json"), &s.grid)?;
            write_json(&out.join("amplitudes.json"), &p.amplitudes)?;
            Ok(out.join("emg"))
        }
        PhantomSpec::Subject(s) => write_subject(&make_subject(s)?, out),
    }
}

/// Subject layout: `us/<slice>/`, `mri/`, `dwi/`, `emg/`, `truth/` and a run
/// manifest whose paths are relative to `out`.
pub fn write_subject(s: &SubjectPhantom, out: &Path) -> Result<PathBuf> {
    let mut slices = Vec::new();
    for (k, sl) in s.slices.iter().enumerate() {
        let name = format!("s{k:02}");
        let dir = PathBuf::from("us").join(&name);
        write_movie(&out.join(&dir).join("movie"), &sl.movie.frames, FRAME_RATE_HZ)?;
        let spacing = sl.movie.frames[0].grid().spacing;
        write_mask2d(&out.join(&dir).join("fds.vvol"), &sl.fds_mask, spacing)?;
        write_json(&out.join(&dir).join("seeds.json"), &sl.seeds)?;
        let outline = PathBuf::from("mri").join(format!("{name}_outline.jsonl"));
        write_contours(&out.join(&outline), std::slice::from_ref(&sl.mri_outline))?;
        write_contours(&out.join("truth").join(format!("{name}_us.jsonl")), &sl.us_truth)?;
        write_contours(&out.join("truth").join(format!("{name}_mri.jsonl")), &sl.mri_truth)?;
        slices.push(SliceEntry {
            name,
            us_z: sl.z_mm,
            mri_z: sl.z_mm,
            movie: dir.join("movie"),
            fds_mask: dir.join("fds.vvol"),
            seeds: dir.join("seeds.json"),
            mri_outline: outline,
        });
    }
    write_json(&out.join("mri/grid.json"), &s.mri_grid)?;
    write_dwi(&out.join("dwi"), &s.dwi)?;
    let recs: Vec<_> = s.emg.values().flat_map(|e| e.recordings.iter().cloned()).collect();
    write_emg_set(&out.join("emg"), &recs)?;
    write_labels(&out.join("truth/masks.vvol"), &s.truth_masks)?;
    write_json(&out.join("truth/architecture.json"), &s.truth)?;

    let manifest = RunManifest {
        subject: "phantom".into(),
        out_dir: "out".into(),
        slices,
        mri_grid: "mri/grid.json".into(),
        dwi: "dwi".into(),
        emg: "emg".into(),
        truth_masks: Some("truth/masks.vvol".into()),
        params: StageParams {
            track: TrackParams {
                target_count: 300,
                candidate_count: 3000,
                ..TrackParams::default()
            },
            sampling: SamplingParams {
                spacing_mm: 0.25,
                points: 2000,
                ..SamplingParams::default()
            },
            emg: EmgParams {
                min_duration_s: s.spec.emg_duration_s,
                trim_s: (0.25 * s.spec.emg_duration_s).min(1.0),
                ..EmgParams::default()
            },
            ..StageParams::default()
        },
    };
    let path = out.join(RUN_MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}
