//! Separable Gaussian smoothing and finite-difference gradients.

use rayon::prelude::*;

use crate::volume::{Grid3, Volume3};

/// Normalised 1D Gaussian taps for a standard deviation in voxels, truncated
/// at `radius` samples.
pub(crate) fn gaussian_taps(sigma_vox: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect()
}

/// Convolves every line along `axis` with symmetric `taps`; taps falling
/// outside the grid are dropped and the remaining weights renormalised.
pub(crate) fn convolve_axis(grid: &Grid3, data: &[f64], axis: usize, taps: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = grid.dims;
    let n = grid.dims[axis];
    let stride = [1, nx, nx * ny][axis];
    let r = (taps.len() / 2) as isize;
    let slab = nx * ny;
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(slab).enumerate().for_each(|(k, dst)| {
        for local in 0..slab {
            let idx = local + k * slab;
            let pos = match axis {
                0 => local % nx,
                1 => local / nx,
                _ => k,
            } as isize;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let q = pos + t as isize - r;
                if q < 0 || q >= n as isize {
                    continue;
                }
                let src = (idx as isize + (q - pos) * stride as isize) as usize;
                acc += w * data[src];
                wsum += w;
            }
            dst[local] = acc / wsum;
        }
    });
    out
}

/// Gaussian smoothing with a physical standard deviation (same in all axes).
/// `sigma_mm <= 0` returns a copy.
pub fn gaussian_smooth(vol: &Volume3, sigma_mm: f64) -> Volume3 {
    if sigma_mm <= 0.0 {
        return vol.clone();
    }
    let grid = *vol.grid();
    let mut work: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    for axis in 0..3 {
        if grid.dims[axis] < 2 {
            continue;
        }
        let s = sigma_mm / grid.spacing[axis];
        let radius = ((3.0 * s).ceil() as usize).max(1);
        let taps = gaussian_taps(s, radius);
        work = convolve_axis(&grid, &work, axis, &taps);
    }
    Volume3::from_parts(grid, work.into_iter().map(|v| v as f32).collect())
}

/// Spatial gradient in intensity per mm: central differences in the
/// interior, one-sided at the boundary, zero along singleton axes.
pub(crate) fn gradient_mm(grid: &Grid3, data: &[f32]) -> [Vec<f32>; 3] {
    crate::par::map_voxels3(grid, |i, j, k| {
        let v = [i, j, k];
        let mut g = [0.0f32; 3];
        for a in 0..3 {
            let n = grid.dims[a];
            if n < 2 {
                continue;
            }
            let (lo, hi) = if v[a] == 0 {
                (0, 1)
            } else if v[a] == n - 1 {
                (n - 2, n - 1)
            } else {
                (v[a] - 1, v[a] + 1)
            };
            let mut a_lo = v;
            let mut a_hi = v;
            a_lo[a] = lo;
            a_hi[a] = hi;
            let f_lo = data[grid.linear_index(a_lo[0], a_lo[1], a_lo[2])] as f64;
            let f_hi = data[grid.linear_index(a_hi[0], a_hi[1], a_hi[2])] as f64;
            g[a] = ((f_hi - f_lo) / ((hi - lo) as f64 * grid.spacing[a])) as f32;
        }
        g
    })
}
