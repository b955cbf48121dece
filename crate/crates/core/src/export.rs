//! 8-bit PGM slice export for visual inspection.
//!
//! Intensities are scaled over the whole volume, not per slice, so slices of
//! one volume are mutually comparable. Coronal and sagittal slices put the
//! superior (high z) end at the top of the image.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume3;

/// Pixel grid of a slice: width, height and the voxel index of each pixel
/// in row-major order, top row first.
fn slice_layout(vol: &Volume3, axis: usize, index: usize) -> Result<(usize, usize, Vec<usize>)> {
    let g = vol.grid();
    if axis > 2 {
        return Err(Error::InvalidParameter(format!("slice axis {axis} must be 0, 1 or 2")));
    }
    if index >= g.dims[axis] {
        return Err(Error::IndexOutOfRange {
            index,
            len: g.dims[axis],
        });
    }
    let [nx, ny, nz] = g.dims;
    let (w, h) = match axis {
        0 => (ny, nz),
        1 => (nx, nz),
        _ => (nx, ny),
    };
    let mut idx = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let v = match axis {
                0 => [index, col, nz - 1 - row],
                1 => [col, index, nz - 1 - row],
                _ => [col, row, index],
            };
            idx.push(g.linear_index(v[0], v[1], v[2]));
        }
    }
    Ok((w, h, idx))
}

fn write_pgm(path: &Path, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    f.write_all(pixels)?;
    f.flush()?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes one slice, min-max scaled over the whole volume. A constant volume
/// maps to all zeros.
pub fn export_slice(vol: &Volume3, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let (w, h, idx) = slice_layout(vol, axis, index)?;
    let (lo, hi) = vol.min_max();
    let (lo, range) = (lo as f64, (hi - lo) as f64);
    let d = vol.data();
    let px: Vec<u8> = idx
        .iter()
        .map(|&i| {
            if range > 0.0 {
                to_byte(255.0 * (d[i] as f64 - lo) / range)
            } else {
                0
            }
        })
        .collect();
    write_pgm(path.as_ref(), w, h, &px)
}

/// Writes one slice of a signed difference volume: zero maps to mid-grey
/// and the largest absolute value over the volume to black or white.
pub fn export_difference_slice(diff: &Volume3, axis: usize, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let (w, h, idx) = slice_layout(diff, axis, index)?;
    let (lo, hi) = diff.min_max();
    let m = (lo.abs().max(hi.abs())) as f64;
    let d = diff.data();
    let px: Vec<u8> = idx
        .iter()
        .map(|&i| {
            let s = if m > 0.0 { d[i] as f64 / m } else { 0.0 };
            to_byte(127.5 * (1.0 + s))
        })
        .collect();
    write_pgm(path.as_ref(), w, h, &px)
}

/// Writes a binary in-plane mask (`w * h` entries, x-fastest) with retained
/// samples white.
pub fn export_mask(mask: &[bool], w: usize, h: usize, path: impl AsRef<Path>) -> Result<()> {
    if mask.len() != w * h {
        return Err(Error::LengthMismatch {
            expected: w * h,
            actual: mask.len(),
        });
    }
    let px: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(path.as_ref(), w, h, &px)
}
