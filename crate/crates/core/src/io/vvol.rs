//! VVOL volumes: a JSON header plus a raw little-endian payload.
//!
//! A volume named `x.vvol` is stored as the payload file `x.vvol` and the header
//! `x.vvol.json`. Either path may be handed to the readers and writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DirectionField, Grid2, Grid3, Image2D, LabelVolume, Mask2D, ScalarVolume};
use crate::tractography::TensorField;

pub const ORDER_X_FASTEST: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    U16,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvolHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: Dtype,
    pub order: String,
    /// Values per voxel, interleaved. Absent means 1.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub components: usize,
    /// Payload file name relative to the header's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

fn one() -> usize {
    1
}

fn is_one(n: &usize) -> bool {
    *n == 1
}

impl VvolHeader {
    pub fn new(grid: &Grid3, dtype: Dtype, components: usize) -> Self {
        Self {
            dims: grid.dims,
            spacing_mm: grid.spacing,
            origin_mm: grid.origin,
            dtype,
            order: ORDER_X_FASTEST.to_string(),
            components,
            payload: None,
        }
    }

    pub fn grid(&self) -> Result<Grid3> {
        Grid3::new(self.dims, self.spacing_mm, self.origin_mm)
    }
}

/// Resolves `(header, payload)` paths for a volume path.
pub fn vvol_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    if let Some(stem) = s.strip_suffix(".json") {
        (path.to_path_buf(), PathBuf::from(stem))
    } else {
        (PathBuf::from(format!("{s}.json")), path.to_path_buf())
    }
}

pub fn read_header(path: &Path) -> Result<VvolHeader> {
    let (hp, _) = vvol_paths(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let h: VvolHeader =
        serde_json::from_str(&text).map_err(|e| Error::format(&hp, e.to_string()))?;
    if h.order != ORDER_X_FASTEST {
        return Err(Error::format(&hp, format!("unsupported order {:?}", h.order)));
    }
    if h.components == 0 {
        return Err(Error::format(&hp, "components must be positive"));
    }
    Ok(h)
}

/// Writes raw values (interleaved components) with the given dtype.
pub fn write_raw(path: &Path, grid: &Grid3, components: usize, data: &[f64], dtype: Dtype) -> Result<()> {
    if data.len() != grid.len() * components {
        return Err(Error::arg("payload length does not match geometry"));
    }
    let (hp, pp) = vvol_paths(path);
    let mut header = VvolHeader::new(grid, dtype, components);
    header.payload = pp.file_name().map(|n| n.to_string_lossy().into_owned());
    let mut bytes = Vec::with_capacity(data.len() * dtype.width());
    for &v in data {
        match dtype {
            Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
            Dtype::U16 => {
                if !(0.0..=u16::MAX as f64).contains(&v) || v.fract() != 0.0 {
                    return Err(Error::arg(format!("value {v} not representable as u16")));
                }
                bytes.extend_from_slice(&(v as u16).to_le_bytes())
            }
        }
    }
    if let Some(dir) = pp.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&pp, bytes).map_err(|e| Error::io(&pp, e))?;
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))
}

/// Reads a volume as `f64` values regardless of stored dtype.
pub fn read_raw(path: &Path) -> Result<(VvolHeader, Vec<f64>)> {
    let header = read_header(path)?;
    let (hp, default_payload) = vvol_paths(path);
    let pp = match &header.payload {
        Some(name) => hp.parent().unwrap_or(Path::new("")).join(name),
        None => default_payload,
    };
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    let grid = header.grid()?;
    let n = grid.len() * header.components;
    let w = header.dtype.width();
    if bytes.len() != n * w {
        return Err(Error::format(
            &pp,
            format!("payload has {} bytes, expected {}", bytes.len(), n * w),
        ));
    }
    let data = bytes
        .chunks_exact(w)
        .map(|c| match header.dtype {
            Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            Dtype::U16 => u16::from_le_bytes(c.try_into().unwrap()) as f64,
        })
        .collect();
    Ok((header, data))
}

pub fn write_scalar(path: &Path, v: &ScalarVolume, dtype: Dtype) -> Result<()> {
    write_raw(path, v.grid(), 1, v.data(), dtype)
}

pub fn read_scalar(path: &Path) -> Result<ScalarVolume> {
    let (h, data) = read_raw(path)?;
    if h.components != 1 {
        return Err(Error::format(path, "expected a single-component volume"));
    }
    ScalarVolume::new(h.grid()?, data)
}

pub fn write_labels(path: &Path, v: &LabelVolume) -> Result<()> {
    let data: Vec<f64> = v.data().iter().map(|&l| l as f64).collect();
    write_raw(path, v.grid(), 1, &data, Dtype::U16)
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let (h, data) = read_raw(path)?;
    if h.dtype != Dtype::U16 || h.components != 1 {
        return Err(Error::format(path, "label volumes must be single-component u16"));
    }
    LabelVolume::new(h.grid()?, data.into_iter().map(|v| v as u16).collect())
}

fn grid_of_2d(g: &Grid2) -> Grid3 {
    Grid3 {
        dims: [g.dims[0], g.dims[1], 1],
        spacing: [g.spacing[0], g.spacing[1], 1.0],
        origin: [0.0; 3],
    }
}

fn grid2_of(h: &VvolHeader, path: &Path) -> Result<Grid2> {
    if h.dims[2] != 1 {
        return Err(Error::format(path, "expected a 2D volume (nz = 1)"));
    }
    Grid2::new([h.dims[0], h.dims[1]], [h.spacing_mm[0], h.spacing_mm[1]])
}

pub fn write_image(path: &Path, img: &Image2D, dtype: Dtype) -> Result<()> {
    write_raw(path, &grid_of_2d(img.grid()), 1, img.data(), dtype)
}

pub fn read_image(path: &Path) -> Result<Image2D> {
    let (h, data) = read_raw(path)?;
    if h.components != 1 {
        return Err(Error::format(path, "expected a single-component image"));
    }
    Image2D::new(grid2_of(&h, path)?, data)
}

/// Binary slice masks are stored as u16 images of 0 and 1.
pub fn write_mask2d(path: &Path, mask: &Mask2D, spacing: [f64; 2]) -> Result<()> {
    let g = Grid2::new(mask.dims, spacing)?;
    let data: Vec<f64> = mask.data.iter().map(|&b| b as u8 as f64).collect();
    write_raw(path, &grid_of_2d(&g), 1, &data, Dtype::U16)
}

pub fn read_mask2d(path: &Path) -> Result<(Mask2D, Grid2)> {
    let (h, data) = read_raw(path)?;
    if h.components != 1 {
        return Err(Error::format(path, "expected a single-component mask"));
    }
    let g = grid2_of(&h, path)?;
    Ok((Mask2D::new(g.dims, data.iter().map(|&v| v != 0.0).collect())?, g))
}

/// Direction fields are stored as two interleaved displacement components.
pub fn write_field(path: &Path, f: &DirectionField) -> Result<()> {
    let data: Vec<f64> = f.displacements().into_iter().flatten().collect();
    write_raw(path, &grid_of_2d(f.grid()), 2, &data, Dtype::F64)
}

pub fn read_field(path: &Path) -> Result<DirectionField> {
    let (h, data) = read_raw(path)?;
    if h.components != 2 {
        return Err(Error::format(path, "direction fields have 2 components"));
    }
    let disp: Vec<[f64; 2]> = data.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    DirectionField::from_displacements(grid2_of(&h, path)?, &disp)
}

/// Tensor volumes hold six f64 components per voxel: xx, yy, zz, xy, xz, yz.
pub fn write_tensors(path: &Path, f: &TensorField) -> Result<()> {
    let data: Vec<f64> = f.tensors().iter().flatten().copied().collect();
    write_raw(path, f.grid(), 6, &data, Dtype::F64)
}

pub fn read_tensors(path: &Path) -> Result<TensorField> {
    let (h, data) = read_raw(path)?;
    if h.components != 6 {
        return Err(Error::format(path, "tensor volumes have 6 components"));
    }
    let tensors = data.chunks_exact(6).map(|c| c.try_into().unwrap()).collect();
    TensorField::new(h.grid()?, tensors)
}
