//! File formats: VVOL volumes, JSON-lines contours, streamline CSV, JSON
//! documents, B-mode movie and DWI manifests and EMG trial CSV.

pub mod vvol;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::emg::EmgRecording;
use crate::error::{Error, Result};
use crate::model::{Contour, ElectrodeGrid, Image2D, Streamline};
use crate::tractography::DwiStack;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Contour files hold one JSON object per line.
pub fn read_contours(path: &Path) -> Result<Vec<Contour>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Contour = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(c);
    }
    Ok(out)
}

pub fn write_contours(path: &Path, contours: &[Contour]) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = Vec::new();
    for c in contours {
        serde_json::to_writer(&mut buf, c).map_err(|e| Error::format(path, e.to_string()))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamlineRow {
    tract_id: u64,
    point_idx: usize,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
}

/// Streamline CSV: `tract_id, point_idx, x_mm, y_mm, z_mm`. The tract id is the
/// streamline's seed id.
pub fn write_streamlines(path: &Path, tracks: &[Streamline]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for t in tracks {
        for (k, p) in t.points().iter().enumerate() {
            w.serialize(StreamlineRow {
                tract_id: t.seed(),
                point_idx: k,
                x_mm: p.x,
                y_mm: p.y,
                z_mm: p.z,
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_streamlines(path: &Path) -> Result<Vec<Streamline>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::new();
    let mut current: Option<(u64, Vec<Point3<f64>>)> = None;
    for row in r.deserialize::<StreamlineRow>() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let p = Point3::new(row.x_mm, row.y_mm, row.z_mm);
        match &mut current {
            Some((id, pts)) if *id == row.tract_id => {
                if row.point_idx != pts.len() {
                    return Err(Error::format(
                        path,
                        format!("tract {id}: point_idx {} out of order", row.point_idx),
                    ));
                }
                pts.push(p);
            }
            _ => {
                if let Some((id, pts)) = current.take() {
                    out.push(Streamline::new(pts, id)?);
                }
                if row.point_idx != 0 {
                    return Err(Error::format(
                        path,
                        format!("tract {} does not start at point 0", row.tract_id),
                    ));
                }
                current = Some((row.tract_id, vec![p]));
            }
        }
    }
    if let Some((id, pts)) = current {
        out.push(Streamline::new(pts, id)?);
    }
    Ok(out)
}

/// Frame list of a B-mode movie stored as 2D VVOL frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieManifest {
    pub frames: Vec<MovieFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieFrame {
    /// Frame file relative to the manifest.
    pub file: String,
    pub t_s: f64,
}

pub const MOVIE_MANIFEST: &str = "movie.json";

/// Writes frames as `frame_NNNN.vvol` plus `movie.json` into `dir`.
pub fn write_movie(dir: &Path, frames: &[Image2D], frame_rate_hz: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = MovieManifest { frames: Vec::new() };
    for (k, f) in frames.iter().enumerate() {
        let name = format!("frame_{k:04}.vvol");
        vvol::write_image(&dir.join(&name), f, vvol::Dtype::F32)?;
        manifest.frames.push(MovieFrame {
            file: name,
            t_s: k as f64 / frame_rate_hz,
        });
    }
    write_json(&dir.join(MOVIE_MANIFEST), &manifest)
}

/// Reads a movie from its directory or manifest path; frames are ordered by time.
pub fn read_movie(path: &Path) -> Result<Vec<Image2D>> {
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MOVIE_MANIFEST)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut manifest: MovieManifest = read_json(&manifest_path)?;
    manifest.frames.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    manifest
        .frames
        .iter()
        .map(|f| vvol::read_image(&dir.join(&f.file)))
        .collect()
}

fn manifest_dir(path: &Path, default_name: &str) -> (PathBuf, PathBuf) {
    let manifest = if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    };
    let dir = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    (manifest, dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwiManifest {
    pub volumes: Vec<DwiVolume>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwiVolume {
    /// Scalar VVOL relative to the manifest.
    pub file: String,
    pub bval: f64,
    pub bvec: [f64; 3],
}

pub const DWI_MANIFEST: &str = "dwi.json";

/// Writes `dwi_NNN.vvol` volumes plus `dwi.json` into `dir`.
pub fn write_dwi(dir: &Path, dwi: &DwiStack) -> Result<()> {
    dwi.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DwiManifest { volumes: Vec::new() };
    for (k, v) in dwi.volumes.iter().enumerate() {
        let name = format!("dwi_{k:03}.vvol");
        vvol::write_scalar(&dir.join(&name), v, vvol::Dtype::F64)?;
        manifest.volumes.push(DwiVolume {
            file: name,
            bval: dwi.bvals[k],
            bvec: dwi.bvecs[k],
        });
    }
    write_json(&dir.join(DWI_MANIFEST), &manifest)
}

pub fn read_dwi(path: &Path) -> Result<DwiStack> {
    let (manifest_path, dir) = manifest_dir(path, DWI_MANIFEST);
    let m: DwiManifest = read_json(&manifest_path)?;
    let volumes = m
        .volumes
        .iter()
        .map(|v| vvol::read_scalar(&dir.join(&v.file)))
        .collect::<Result<Vec<_>>>()?;
    let dwi = DwiStack {
        volumes,
        bvals: m.volumes.iter().map(|v| v.bval).collect(),
        bvecs: m.volumes.iter().map(|v| v.bvec).collect(),
    };
    dwi.validate()?;
    Ok(dwi)
}

/// EMG trial CSV: header `ch0, ch1, ...`, one row per sample, values in mV
/// with six decimals.
pub fn write_emg_csv(path: &Path, channels: &[Vec<f64>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record((0..channels.len()).map(|c| format!("ch{c}"))).map_err(err)?;
    let n = channels.first().map_or(0, Vec::len);
    let mut row = Vec::with_capacity(channels.len());
    for t in 0..n {
        row.clear();
        row.extend(channels.iter().map(|c| format!("{:.6}", c[t])));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an EMG trial CSV as `channels[c][t]`.
pub fn read_emg_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let width = r.headers().map_err(|e| Error::format(path, e.to_string()))?.len();
    let mut channels = vec![Vec::new(); width];
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: bad sample {field:?}", n + 1)))?;
            channels[c].push(v);
        }
    }
    Ok(channels)
}

/// Trials of one or more fingers recorded on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgManifest {
    pub grid: ElectrodeGrid,
    pub sample_rate_hz: f64,
    pub trials: Vec<EmgTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgTrial {
    pub file: String,
    pub finger: u16,
    pub trial: String,
}

pub const EMG_MANIFEST: &str = "emg.json";

/// Writes each recording as `f<finger>_<trial>.csv` plus `emg.json`.
pub fn write_emg_set(dir: &Path, recs: &[EmgRecording]) -> Result<()> {
    let first = recs.first().ok_or_else(|| Error::arg("no EMG recordings"))?;
    if recs.iter().any(|r| r.grid != first.grid || r.sample_rate_hz != first.sample_rate_hz) {
        return Err(Error::arg("recordings differ in grid or sample rate"));
    }
    let mut m = EmgManifest {
        grid: first.grid.clone(),
        sample_rate_hz: first.sample_rate_hz,
        trials: Vec::new(),
    };
    for r in recs {
        let file = format!("f{}_{}.csv", r.finger, r.trial);
        write_emg_csv(&dir.join(&file), &r.channels)?;
        m.trials.push(EmgTrial {
            file,
            finger: r.finger,
            trial: r.trial.clone(),
        });
    }
    write_json(&dir.join(EMG_MANIFEST), &m)
}

pub fn read_emg_set(path: &Path) -> Result<Vec<EmgRecording>> {
    let (manifest_path, dir) = manifest_dir(path, EMG_MANIFEST);
    let m: EmgManifest = read_json(&manifest_path)?;
    m.trials
        .iter()
        .map(|t| {
            let rec = EmgRecording {
                channels: read_emg_csv(&dir.join(&t.file))?,
                sample_rate_hz: m.sample_rate_hz,
                grid: m.grid.clone(),
                trial: t.trial.clone(),
                finger: t.finger,
            };
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point2;

    #[test]
    fn contour_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Contour::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(2.0, 0.0),
                Point2::new(1.0, 1.5),
            ],
            12.5,
            3,
        )
        .unwrap();
        let p = dir.path().join("c.json");
        write_contours(&p, &[c.clone(), c.clone().with_label(4)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = read_contours(&p).unwrap();
        assert_eq!(back[0], c);
        assert_eq!(back[1].label(), 4);
    }

    #[test]
    fn emg_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t1.csv");
        let ch = vec![vec![0.1, -0.25, 1e-6], vec![2.0, 0.0, -3.5]];
        write_emg_csv(&p, &ch).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("ch0,ch1\n"));
        assert_eq!(read_emg_csv(&p).unwrap(), ch);
    }

    #[test]
    fn streamline_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Streamline::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 1.0)],
            7,
        )
        .unwrap();
        let b = Streamline::new(
            vec![
                Point3::new(1.0, 0.5, 0.0),
                Point3::new(1.0, 0.5, 1.0),
                Point3::new(1.0, 0.5, 2.25),
            ],
            9,
        )
        .unwrap();
        let p = dir.path().join("t.csv");
        write_streamlines(&p, &[a.clone(), b.clone()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("tract_id,point_idx,x_mm,y_mm,z_mm"));
        assert_eq!(read_streamlines(&p).unwrap(), vec![a, b]);
    }
}
