//! Slice-parallel voxel loops. Every output slot is written by exactly one
//! closure call, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::volume::Grid3;

/// Evaluates `f(i, j, k)` for every voxel of `grid`, x-fastest.
pub(crate) fn map_voxels<T, F>(grid: &Grid3, f: F) -> Vec<T>
where
    T: Send + Default + Clone,
    F: Fn(usize, usize, usize) -> T + Sync,
{
    let [nx, ny, _] = grid.dims;
    let mut out = vec![T::default(); grid.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        for j in 0..ny {
            for i in 0..nx {
                slab[i + nx * j] = f(i, j, k);
            }
        }
    });
    out
}

/// Like [`map_voxels`] for three outputs per voxel.
pub(crate) fn map_voxels3<F>(grid: &Grid3, f: F) -> [Vec<f32>; 3]
where
    F: Fn(usize, usize, usize) -> [f32; 3] + Sync,
{
    let packed = map_voxels(grid, f);
    let mut out = [
        Vec::with_capacity(packed.len()),
        Vec::with_capacity(packed.len()),
        Vec::with_capacity(packed.len()),
    ];
    for v in packed {
        out[0].push(v[0]);
        out[1].push(v[1]);
        out[2].push(v[2]);
    }
    out
}

/// Deterministic sum: per-slab partial sums added in slab order.
pub(crate) fn sum_by_slab<F>(grid: &Grid3, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let slab = grid.dims[0] * grid.dims[1];
    let partial: Vec<f64> = (0..grid.dims[2])
        .into_par_iter()
        .map(|k| (k * slab..(k + 1) * slab).map(&f).sum())
        .collect();
    partial.iter().sum()
}
