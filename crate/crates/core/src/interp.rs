//! Point sampling and grid resampling.
//!
//! Two modes are supported: trilinear and interpolating cubic B-spline. The
//! cubic mode runs a separable recursive prefilter (mirror boundaries, pole
//! `sqrt(3) - 2`) so that the spline passes through the stored node values.
//! Points outside the grid are clamped to the nearest boundary position.

use serde::{Deserialize, Serialize};

use crate::par::map_voxels;
use crate::volume::{Grid3, Volume3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Trilinear,
    CubicBspline,
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trilinear" | "linear" => Ok(Self::Trilinear),
            "cubic" | "cubic_bspline" | "bspline" => Ok(Self::CubicBspline),
            other => Err(format!("unknown interpolation mode '{other}'")),
        }
    }
}

/// Samples `vol` at a physical point.
pub fn sample(vol: &Volume3, point_mm: [f64; 3], mode: Interpolation) -> f32 {
    let t = vol.grid().mm_to_index(point_mm);
    match mode {
        Interpolation::Trilinear => trilinear_at(vol.grid(), vol.data(), t) as f32,
        Interpolation::CubicBspline => cubic_at(vol.grid(), vol.spline_coefficients(), t) as f32,
    }
}

/// Samples `vol` at the physical position of every voxel of `target`.
pub fn resample_to_grid(vol: &Volume3, target: &Grid3, mode: Interpolation) -> Volume3 {
    let src = *vol.grid();
    let data = match mode {
        Interpolation::Trilinear => {
            let d = vol.data();
            map_voxels(target, |i, j, k| {
                let t = src.mm_to_index(target.voxel_to_mm([i, j, k]));
                trilinear_at(&src, d, t) as f32
            })
        }
        Interpolation::CubicBspline => {
            let c = vol.spline_coefficients();
            map_voxels(target, |i, j, k| {
                let t = src.mm_to_index(target.voxel_to_mm([i, j, k]));
                cubic_at(&src, c, t) as f32
            })
        }
    };
    Volume3::from_parts(*target, data)
}

#[inline]
fn clamp_axis(t: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let t = t.clamp(0.0, (n - 1) as f64);
    let i0 = (t.floor() as usize).min(n - 2);
    (i0, i0 + 1, t - i0 as f64)
}

/// Trilinear interpolation at continuous voxel index `t`, clamped to the grid.
#[inline]
pub(crate) fn trilinear_at(grid: &Grid3, data: &[f32], t: [f64; 3]) -> f64 {
    let [nx, ny, nz] = grid.dims;
    let (x0, x1, fx) = clamp_axis(t[0], nx);
    let (y0, y1, fy) = clamp_axis(t[1], ny);
    let (z0, z1, fz) = clamp_axis(t[2], nz);
    let at = |i: usize, j: usize, k: usize| data[i + nx * (j + ny * k)] as f64;
    let gx = 1.0 - fx;
    let gy = 1.0 - fy;
    let gz = 1.0 - fz;
    let c00 = at(x0, y0, z0) * gx + at(x1, y0, z0) * fx;
    let c10 = at(x0, y1, z0) * gx + at(x1, y1, z0) * fx;
    let c01 = at(x0, y0, z1) * gx + at(x1, y0, z1) * fx;
    let c11 = at(x0, y1, z1) * gx + at(x1, y1, z1) * fx;
    let c0 = c00 * gy + c10 * fy;
    let c1 = c01 * gy + c11 * fy;
    c0 * gz + c1 * fz
}

/// Trilinear lookup of three co-located component arrays at once.
#[inline]
pub(crate) fn trilinear3_at(grid: &Grid3, comps: &[Vec<f32>; 3], t: [f64; 3]) -> [f64; 3] {
    let [nx, ny, nz] = grid.dims;
    let (x0, x1, fx) = clamp_axis(t[0], nx);
    let (y0, y1, fy) = clamp_axis(t[1], ny);
    let (z0, z1, fz) = clamp_axis(t[2], nz);
    let gx = 1.0 - fx;
    let gy = 1.0 - fy;
    let gz = 1.0 - fz;
    let idx = [
        (x0 + nx * (y0 + ny * z0), gx * gy * gz),
        (x1 + nx * (y0 + ny * z0), fx * gy * gz),
        (x0 + nx * (y1 + ny * z0), gx * fy * gz),
        (x1 + nx * (y1 + ny * z0), fx * fy * gz),
        (x0 + nx * (y0 + ny * z1), gx * gy * fz),
        (x1 + nx * (y0 + ny * z1), fx * gy * fz),
        (x0 + nx * (y1 + ny * z1), gx * fy * fz),
        (x1 + nx * (y1 + ny * z1), fx * fy * fz),
    ];
    let mut out = [0.0; 3];
    for (c, comp) in comps.iter().enumerate() {
        let mut acc = 0.0;
        for &(i, w) in &idx {
            acc += comp[i] as f64 * w;
        }
        out[c] = acc;
    }
    out
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

#[inline]
pub(crate) fn cubic_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

#[inline]
fn cubic_axis(t: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let t = t.clamp(0.0, (n - 1) as f64);
    let base = t.floor();
    let w = cubic_weights(t - base);
    let b = base as isize;
    ([mirror(b - 1, n), mirror(b, n), mirror(b + 1, n), mirror(b + 2, n)], w)
}

/// Cubic B-spline evaluation from prefiltered coefficients.
#[inline]
pub(crate) fn cubic_at(grid: &Grid3, coeffs: &[f32], t: [f64; 3]) -> f64 {
    let [nx, ny, nz] = grid.dims;
    let (ix, wx) = cubic_axis(t[0], nx);
    let (iy, wy) = cubic_axis(t[1], ny);
    let (iz, wz) = cubic_axis(t[2], nz);
    let mut acc = 0.0;
    for c in 0..4 {
        let mut plane = 0.0;
        for b in 0..4 {
            let row = nx * (iy[b] + ny * iz[c]);
            let mut line = 0.0;
            for a in 0..4 {
                line += coeffs[ix[a] + row] as f64 * wx[a];
            }
            plane += line * wy[b];
        }
        acc += plane * wz[c];
    }
    acc
}

const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2

/// In-place conversion of samples to cubic B-spline coefficients along one
/// line, mirror-symmetric boundaries.
pub(crate) fn prefilter_line(line: &mut [f64]) {
    let n = line.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    let gain = (1.0 - z) * (1.0 - 1.0 / z);
    for v in line.iter_mut() {
        *v *= gain;
    }
    // causal initialisation, exact for the mirror-extended signal
    let zn = z.powi(n as i32 - 1);
    let mut sum = line[0] + zn * line[n - 1];
    let z2n = zn * zn;
    let mut zk = z;
    let mut zrev = zn * zn / z;
    for v in line.iter().take(n - 1).skip(1) {
        sum += (zk + zrev) * v;
        zk *= z;
        zrev /= z;
    }
    line[0] = sum / (1.0 - z2n);
    for k in 1..n {
        line[k] += z * line[k - 1];
    }
    line[n - 1] = (z / (z * z - 1.0)) * (line[n - 1] + z * line[n - 2]);
    for k in (0..n - 1).rev() {
        line[k] = z * (line[k + 1] - line[k]);
    }
}

/// Separable prefilter over all three axes.
pub(crate) fn bspline_prefilter(grid: &Grid3, data: &[f32]) -> Vec<f32> {
    let mut work: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let [nx, ny, nz] = grid.dims;
    let strides = [1, nx, nx * ny];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = grid.dims[axis];
        if n < 2 {
            continue;
        }
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => ((ny, nx), (nz, nx * ny)),
            1 => ((nx, 1), (nz, nx * ny)),
            _ => ((nx, 1), (ny, nx)),
        };
        for b in 0..o2.0 {
            for a in 0..o1.0 {
                let start = a * o1.1 + b * o2.1;
                line.clear();
                line.extend((0..n).map(|s| work[start + s * stride]));
                prefilter_line(&mut line);
                for (s, &v) in line.iter().enumerate() {
                    work[start + s * stride] = v;
                }
            }
        }
    }
    work.into_iter().map(|v| v as f32).collect()
}
