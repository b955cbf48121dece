//! Volume and field file formats.
//!
//! * RAW: a UTF-8 JSON sidecar (`<stem>.json`) next to a payload of
//!   little-endian `f32` values (`<stem>.raw`), x-fastest. Three-component
//!   fields store the ux block, then uy, then uz.
//! * NIfTI-1 single file (`.nii`), float32, no intensity scaling. Fields use
//!   the 5th dimension for the vector components.
//!
//! The format is chosen from the file extension: `.nii` selects NIfTI,
//! anything else RAW.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid3, VectorField3, Volume3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub components: usize,
}

impl RawHeader {
    pub fn new(grid: &Grid3, components: usize) -> Self {
        Self {
            dims: grid.dims,
            spacing: grid.spacing,
            origin: grid.origin,
            dtype: "f32le".into(),
            order: "x-fastest".into(),
            components,
        }
    }
}

fn is_nifti(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("nii"))
}

/// Header and payload paths for a RAW dataset named by either file or stem.
pub fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("raw"))
}

pub fn write_volume(vol: &Volume3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_nifti(path) {
        write_nifti(path, vol.grid(), &[vol.data()])
    } else {
        write_raw(path, vol.grid(), &[vol.data()])
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let path = path.as_ref();
    let (grid, mut comps) = if is_nifti(path) {
        read_nifti(path)?
    } else {
        read_raw(path)?
    };
    if comps.len() != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} holds {} components, expected a scalar volume",
            path.display(),
            comps.len()
        )));
    }
    Volume3::new(grid, comps.pop().unwrap())
}

pub fn write_field(field: &VectorField3, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let c = field.components();
    let comps = [c[0].as_slice(), c[1].as_slice(), c[2].as_slice()];
    if is_nifti(path) {
        write_nifti(path, field.grid(), &comps)
    } else {
        write_raw(path, field.grid(), &comps)
    }
}

pub fn read_field(path: impl AsRef<Path>) -> Result<VectorField3> {
    let path = path.as_ref();
    let (grid, comps) = if is_nifti(path) {
        read_nifti(path)?
    } else {
        read_raw(path)?
    };
    let Ok([ux, uy, uz]) = <[Vec<f32>; 3]>::try_from(comps) else {
        return Err(Error::UnsupportedFormat(format!(
            "{} is not a 3-component field",
            path.display()
        )));
    };
    VectorField3::new(grid, ux, uy, uz)
}

fn encode_f32(blocks: &[&[f32]]) -> Vec<u8> {
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut bytes = Vec::with_capacity(4 * n);
    for b in blocks {
        for v in b.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn decode_f32(bytes: &[u8], n: usize, components: usize) -> Vec<Vec<f32>> {
    (0..components)
        .map(|c| {
            bytes[4 * n * c..4 * n * (c + 1)]
                .chunks_exact(4)
                .map(|w| f32::from_le_bytes([w[0], w[1], w[2], w[3]]))
                .collect()
        })
        .collect()
}

fn write_raw(path: &Path, grid: &Grid3, blocks: &[&[f32]]) -> Result<()> {
    let (header_path, payload_path) = raw_paths(path);
    let header = RawHeader::new(grid, blocks.len());
    fs::write(&header_path, serde_json::to_vec_pretty(&header)?)?;
    fs::write(&payload_path, encode_f32(blocks))?;
    Ok(())
}

fn read_raw(path: &Path) -> Result<(Grid3, Vec<Vec<f32>>)> {
    let (header_path, payload_path) = raw_paths(path);
    let malformed = |reason: String| Error::MalformedHeader {
        path: header_path.clone(),
        reason,
    };
    let header: RawHeader = serde_json::from_slice(&fs::read(&header_path)?).map_err(|e| malformed(e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(Error::UnsupportedFormat(format!("dtype '{}'", header.dtype)));
    }
    if header.order != "x-fastest" {
        return Err(Error::UnsupportedFormat(format!("order '{}'", header.order)));
    }
    if header.components != 1 && header.components != 3 {
        return Err(malformed(format!("components = {}", header.components)));
    }
    let grid = Grid3::new(header.dims, header.spacing, header.origin).map_err(|e| malformed(e.to_string()))?;
    let bytes = fs::read(&payload_path)?;
    let expected = 4 * grid.len() * header.components;
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            path: payload_path,
            expected,
            actual: bytes.len(),
        });
    }
    Ok((grid, decode_f32(&bytes, grid.len(), header.components)))
}

const NIFTI_HEADER_LEN: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;
const NIFTI_FLOAT32: i16 = 16;
const NIFTI_INTENT_VECTOR: i16 = 1007;

struct HeaderWriter(Vec<u8>);

impl HeaderWriter {
    fn i16(&mut self, at: usize, v: i16) {
        self.0[at..at + 2].copy_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, at: usize, v: i32) {
        self.0[at..at + 4].copy_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, at: usize, v: f32) {
        self.0[at..at + 4].copy_from_slice(&v.to_le_bytes());
    }
}

fn rd_i16(b: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([b[at], b[at + 1]])
}

fn rd_i32(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn rd_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// NIfTI stores spacing and origin as `f32`; values not representable in
/// single precision are rounded.
fn write_nifti(path: &Path, grid: &Grid3, blocks: &[&[f32]]) -> Result<()> {
    let mut h = HeaderWriter(vec![0u8; NIFTI_VOX_OFFSET]);
    h.i32(0, NIFTI_HEADER_LEN as i32);
    h.0[38] = b'r';
    let components = blocks.len();
    let mut dim = [1i16; 8];
    dim[0] = if components == 1 { 3 } else { 5 };
    for a in 0..3 {
        dim[a + 1] = i16::try_from(grid.dims[a])
            .map_err(|_| Error::UnsupportedFormat(format!("dimension {} exceeds NIfTI-1 range", grid.dims[a])))?;
    }
    dim[5] = components as i16;
    for (d, v) in dim.iter().enumerate() {
        h.i16(40 + 2 * d, *v);
    }
    if components == 3 {
        h.i16(68, NIFTI_INTENT_VECTOR);
    }
    h.i16(70, NIFTI_FLOAT32);
    h.i16(72, 32);
    h.f32(76, 1.0); // qfac
    for a in 0..3 {
        h.f32(80 + 4 * a, grid.spacing[a] as f32);
    }
    h.f32(108, NIFTI_VOX_OFFSET as f32);
    h.f32(112, 1.0);
    h.0[123] = 2; // millimetres
    h.i16(252, 1);
    h.i16(254, 1);
    for a in 0..3 {
        h.f32(268 + 4 * a, grid.origin[a] as f32);
        let row = 280 + 16 * a;
        h.f32(row + 4 * a, grid.spacing[a] as f32);
        h.f32(row + 12, grid.origin[a] as f32);
    }
    h.0[344..348].copy_from_slice(b"n+1\0");
    let mut bytes = h.0;
    bytes.extend_from_slice(&encode_f32(blocks));
    fs::write(path, bytes)?;
    Ok(())
}

fn read_nifti(path: &Path) -> Result<(Grid3, Vec<Vec<f32>>)> {
    let bytes = fs::read(path)?;
    let malformed = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < NIFTI_HEADER_LEN {
        return Err(malformed("file shorter than a NIfTI-1 header"));
    }
    if rd_i32(&bytes, 0) != NIFTI_HEADER_LEN as i32 {
        if i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == NIFTI_HEADER_LEN as i32 {
            return Err(Error::UnsupportedFormat("big-endian NIfTI".into()));
        }
        return Err(malformed("sizeof_hdr is not 348"));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(malformed("magic is not 'n+1'"));
    }
    let datatype = rd_i16(&bytes, 70);
    if datatype != NIFTI_FLOAT32 || rd_i16(&bytes, 72) != 32 {
        return Err(Error::UnsupportedFormat(format!("NIfTI datatype code {datatype}")));
    }
    let slope = rd_f32(&bytes, 112);
    let inter = rd_f32(&bytes, 116);
    if !(slope == 0.0 || (slope == 1.0 && inter == 0.0)) {
        return Err(Error::UnsupportedFormat("NIfTI intensity scaling".into()));
    }
    let dim: Vec<i16> = (0..8).map(|d| rd_i16(&bytes, 40 + 2 * d)).collect();
    if !(1..=7).contains(&dim[0]) {
        return Err(malformed("dim[0] out of range"));
    }
    let get_dim = |d: usize| -> Result<usize> {
        if d as i16 > dim[0] {
            return Ok(1);
        }
        usize::try_from(dim[d])
            .ok()
            .filter(|&v| v >= 1)
            .ok_or_else(|| malformed("non-positive dimension"))
    };
    let dims = [get_dim(1)?, get_dim(2)?, get_dim(3)?];
    if get_dim(4)? != 1 || get_dim(6)? != 1 || get_dim(7)? != 1 {
        return Err(Error::UnsupportedFormat("time series or higher-order NIfTI".into()));
    }
    let components = get_dim(5)?;
    if components != 1 && components != 3 {
        return Err(Error::UnsupportedFormat(format!("{components} components")));
    }
    let spacing = [1, 2, 3].map(|a| {
        let s = rd_f32(&bytes, 76 + 4 * a) as f64;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    });
    let origin = if rd_i16(&bytes, 252) > 0 {
        [0, 1, 2].map(|a| rd_f32(&bytes, 268 + 4 * a) as f64)
    } else if rd_i16(&bytes, 254) > 0 {
        [0, 1, 2].map(|a| rd_f32(&bytes, 280 + 16 * a + 12) as f64)
    } else {
        [0.0; 3]
    };
    let grid = Grid3::new(dims, spacing, origin).map_err(|e| malformed(&e.to_string()))?;
    let offset = rd_f32(&bytes, 108) as usize;
    if offset < NIFTI_HEADER_LEN || offset > bytes.len() {
        return Err(malformed("vox_offset outside file"));
    }
    let payload = &bytes[offset..];
    let expected = 4 * grid.len() * components;
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    Ok((grid, decode_f32(payload, grid.len(), components)))
}
