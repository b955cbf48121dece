//! Windowed (local) cross-correlation and its exact voxelwise derivative.
//!
//! For each voxel `y` with window `W(y)` (a `(2r+1)^3` cube truncated to the
//! grid, `n` voxels):
//!
//! ```text
//! A = sum (I - Ibar)(J - Jbar),  B = sum (I - Ibar)^2,  C = sum (J - Jbar)^2
//! CC(y) = A^2 / (B C)
//! ```
//!
//! and the score is the mean of `CC` over all voxels. Because every voxel `x`
//! belongs to the windows of exactly the voxels in its own window, the
//! derivative of the score with respect to `J(x)` reduces to box sums:
//!
//! ```text
//! dS/dJ(x) = 2/N * [ I(x) sum a - J(x) sum b + sum b Jbar - sum a Ibar ]
//! a = A / (B C),  b = a A / C
//! ```
//!
//! with all sums over `W(x)`. The derivative for `I` is symmetric.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::gradient_mm;
use crate::volume::{Grid3, VectorField3, Volume3};

/// Local variance below which a window's correlation is defined as zero.
pub const VARIANCE_EPSILON: f64 = 1e-12;

pub(crate) struct CcTerms {
    pub score: f64,
    /// dScore / dI(x)
    pub d_fixed: Vec<f64>,
    /// dScore / dJ(x)
    pub d_moving: Vec<f64>,
}

fn window_counts(n: usize, r: usize) -> Vec<f64> {
    (0..n)
        .map(|p| ((p + r).min(n - 1) - p.saturating_sub(r) + 1) as f64)
        .collect()
}

fn box_line(src: &[f64], out: &mut [f64], pre: &mut Vec<f64>, r: usize) {
    let n = src.len();
    pre.clear();
    pre.push(0.0);
    let mut acc = 0.0;
    for &v in src {
        acc += v;
        pre.push(acc);
    }
    for (p, o) in out.iter_mut().enumerate() {
        *o = pre[(p + r + 1).min(n)] - pre[p.saturating_sub(r)];
    }
}

/// Sum of `src` over each voxel's truncated window of half-width `r`.
pub(crate) fn box_sum(grid: &Grid3, src: &[f64], r: usize) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let slab = nx * ny;
    let mut a = vec![0.0; src.len()];
    // x
    a.par_chunks_mut(slab).zip(src.par_chunks(slab)).for_each(|(dst, s)| {
        let mut pre = Vec::with_capacity(nx + 1);
        for (d, l) in dst.chunks_exact_mut(nx).zip(s.chunks_exact(nx)) {
            box_line(l, d, &mut pre, r);
        }
    });
    // y
    let mut b = vec![0.0; src.len()];
    b.par_chunks_mut(slab).zip(a.par_chunks(slab)).for_each(|(dst, s)| {
        let mut pre = Vec::with_capacity(ny + 1);
        let mut line = vec![0.0; ny];
        let mut out = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                line[j] = s[i + nx * j];
            }
            box_line(&line, &mut out, &mut pre, r);
            for j in 0..ny {
                dst[i + nx * j] = out[j];
            }
        }
    });
    // z: running slab prefix, then differences
    let mut pre = vec![0.0; slab * (nz + 1)];
    for k in 0..nz {
        let (done, rest) = pre.split_at_mut(slab * (k + 1));
        let prev = &done[slab * k..];
        for ((p, &q), &v) in rest[..slab].iter_mut().zip(prev).zip(&b[slab * k..slab * (k + 1)]) {
            *p = q + v;
        }
    }
    a.par_chunks_mut(slab).enumerate().for_each(|(k, dst)| {
        let hi = &pre[slab * (k + r + 1).min(nz)..][..slab];
        let lo = &pre[slab * k.saturating_sub(r)..][..slab];
        for ((d, h), l) in dst.iter_mut().zip(hi).zip(lo) {
            *d = h - l;
        }
    });
    a
}

pub(crate) fn cc_terms(grid: &Grid3, fixed: &[f32], moving: &[f32], radius: usize) -> CcTerms {
    let n_vox = grid.len();
    let i_img: Vec<f64> = fixed.iter().map(|&v| v as f64).collect();
    let j_img: Vec<f64> = moving.iter().map(|&v| v as f64).collect();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { i_img.iter().zip(&j_img).map(|(&a, &b)| f(a, b)).collect() };
    let s_i = box_sum(grid, &i_img, radius);
    let s_j = box_sum(grid, &j_img, radius);
    let s_ii = box_sum(grid, &prod(&|a, _| a * a), radius);
    let s_jj = box_sum(grid, &prod(&|_, b| b * b), radius);
    let s_ij = box_sum(grid, &prod(&|a, b| a * b), radius);

    let [cx, cy, cz] = [0, 1, 2].map(|a| window_counts(grid.dims[a], radius));
    let [nx, ny, _] = grid.dims;

    let mut cc = vec![0.0; n_vox];
    let mut alpha = vec![0.0; n_vox];
    let mut beta_i = vec![0.0; n_vox];
    let mut beta_j = vec![0.0; n_vox];
    let mut mean_i = vec![0.0; n_vox];
    let mut mean_j = vec![0.0; n_vox];
    for idx in 0..n_vox {
        let n = cx[idx % nx] * cy[(idx / nx) % ny] * cz[idx / (nx * ny)];
        let mi = s_i[idx] / n;
        let mj = s_j[idx] / n;
        mean_i[idx] = mi;
        mean_j[idx] = mj;
        let a = s_ij[idx] - s_i[idx] * mj;
        let b = s_ii[idx] - s_i[idx] * mi;
        let c = s_jj[idx] - s_j[idx] * mj;
        if b / n < VARIANCE_EPSILON || c / n < VARIANCE_EPSILON {
            continue;
        }
        let al = a / (b * c);
        cc[idx] = al * a;
        alpha[idx] = al;
        beta_j[idx] = al * (a / c);
        beta_i[idx] = al * (a / b);
    }
    let score = cc.iter().sum::<f64>() / n_vox as f64;

    let mul = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a * b).collect() };
    let sum_alpha = box_sum(grid, &alpha, radius);
    let sum_alpha_mi = box_sum(grid, &mul(&alpha, &mean_i), radius);
    let sum_alpha_mj = box_sum(grid, &mul(&alpha, &mean_j), radius);
    let sum_beta_j = box_sum(grid, &beta_j, radius);
    let sum_beta_j_mj = box_sum(grid, &mul(&beta_j, &mean_j), radius);
    let sum_beta_i = box_sum(grid, &beta_i, radius);
    let sum_beta_i_mi = box_sum(grid, &mul(&beta_i, &mean_i), radius);

    let scale = 2.0 / n_vox as f64;
    let mut d_moving = vec![0.0; n_vox];
    let mut d_fixed = vec![0.0; n_vox];
    for idx in 0..n_vox {
        let (iv, jv) = (i_img[idx], j_img[idx]);
        // paired so that identical inputs cancel exactly
        d_moving[idx] =
            scale * ((iv * sum_alpha[idx] - jv * sum_beta_j[idx]) + (sum_beta_j_mj[idx] - sum_alpha_mi[idx]));
        d_fixed[idx] =
            scale * ((jv * sum_alpha[idx] - iv * sum_beta_i[idx]) + (sum_beta_i_mi[idx] - sum_alpha_mj[idx]));
    }
    CcTerms {
        score,
        d_fixed,
        d_moving,
    }
}

/// Multiplies a per-voxel intensity derivative by the image gradient,
/// giving the derivative with respect to the displacement at each voxel.
pub(crate) fn displacement_gradient(grid: &Grid3, image: &[f32], d_intensity: &[f64]) -> VectorField3 {
    let g = gradient_mm(grid, image);
    let comps = g.map(|c| {
        c.iter()
            .zip(d_intensity)
            .map(|(&gc, &d)| (gc as f64 * d) as f32)
            .collect()
    });
    VectorField3::from_parts(*grid, comps)
}

/// Mean squared local correlation between `fixed` and `warped_moving` and
/// its gradient with respect to the moving image's displacement field
/// (ascent direction).
pub fn local_cc(fixed: &Volume3, warped_moving: &Volume3, radius: usize) -> Result<(f64, VectorField3)> {
    if fixed.grid() != warped_moving.grid() {
        return Err(Error::GridMismatch);
    }
    if radius < 1 {
        return Err(Error::InvalidParameter("cc radius must be >= 1".into()));
    }
    let grid = fixed.grid();
    let terms = cc_terms(grid, fixed.data(), warped_moving.data(), radius);
    let gradient = displacement_gradient(grid, warped_moving.data(), &terms.d_moving);
    Ok((terms.score, gradient))
}
