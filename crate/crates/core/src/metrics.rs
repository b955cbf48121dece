//! Image similarity and deformation-field comparison metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_axis, gaussian_taps};
use crate::par::sum_by_slab;
use crate::volume::{Grid3, Mask3, VectorField3, Volume3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub pearson: f64,
    pub error_pct: f64,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldComparisonReport {
    /// Symmetric Hausdorff distance between the deformed voxel clouds.
    pub hausdorff_mm: f64,
    /// Largest per-voxel displacement difference.
    pub sup_error_mm: f64,
    pub error_pct: f64,
}

/// Gaussian-window SSIM settings. `dynamic_range` defaults to the
/// reference's max minus min.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub sigma_vox: f64,
    pub k1: f64,
    pub k2: f64,
    #[serde(default)]
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            sigma_vox: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

impl SsimParams {
    pub fn radius(&self) -> usize {
        ((3.0 * self.sigma_vox).ceil() as usize).max(1)
    }
}

fn widen(d: &[f32]) -> Vec<f64> {
    d.iter().map(|&v| v as f64).collect()
}

/// Global Pearson correlation.
pub fn pearson(a: &Volume3, b: &Volume3) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let g = a.grid();
    let (x, y) = (a.data(), b.data());
    let n = g.len() as f64;
    let mx = sum_by_slab(g, |i| x[i] as f64) / n;
    let my = sum_by_slab(g, |i| y[i] as f64) / n;
    let sxx = sum_by_slab(g, |i| (x[i] as f64 - mx).powi(2));
    let syy = sum_by_slab(g, |i| (y[i] as f64 - my).powi(2));
    let sxy = sum_by_slab(g, |i| (x[i] as f64 - mx) * (y[i] as f64 - my));
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn mse(a: &Volume3, b: &Volume3) -> Result<f64> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    let (x, y) = (a.data(), b.data());
    Ok(sum_by_slab(a.grid(), |i| (x[i] as f64 - y[i] as f64).powi(2)) / a.grid().len() as f64)
}

/// `100 * sum |test - ref| / sum |ref|`.
pub fn image_error_pct(test: &Volume3, reference: &Volume3) -> Result<f64> {
    if test.grid() != reference.grid() {
        return Err(Error::GridMismatch);
    }
    let (t, r) = (test.data(), reference.data());
    let g = reference.grid();
    let den = sum_by_slab(g, |i| (r[i] as f64).abs());
    if den == 0.0 {
        return Err(Error::ZeroDenominator("sum of |reference|"));
    }
    Ok(100.0 * sum_by_slab(g, |i| (t[i] as f64 - r[i] as f64).abs()) / den)
}

fn blur(grid: &Grid3, data: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut w = data.to_vec();
    for axis in 0..3 {
        if grid.dims[axis] > 1 {
            w = convolve_axis(grid, &w, axis, taps);
        }
    }
    w
}

/// Voxelwise SSIM map with a truncated, renormalised Gaussian window.
pub fn ssim_map(test: &Volume3, reference: &Volume3, params: &SsimParams) -> Result<Volume3> {
    if test.grid() != reference.grid() {
        return Err(Error::GridMismatch);
    }
    if !(params.sigma_vox > 0.0) {
        return Err(Error::InvalidParameter("ssim sigma must be positive".into()));
    }
    let grid = *reference.grid();
    let l = params.dynamic_range.unwrap_or_else(|| {
        let (lo, hi) = reference.min_max();
        (hi - lo) as f64
    });
    let l = if l > 0.0 { l } else { 1.0 };
    let c1 = (params.k1 * l).powi(2);
    let c2 = (params.k2 * l).powi(2);
    let taps = gaussian_taps(params.sigma_vox, params.radius());
    let x = widen(test.data());
    let y = widen(reference.data());
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = blur(&grid, &x, &taps);
    let my = blur(&grid, &y, &taps);
    let exx = blur(&grid, &mul(&x, &x), &taps);
    let eyy = blur(&grid, &mul(&y, &y), &taps);
    let exy = blur(&grid, &mul(&x, &y), &taps);
    let data = (0..grid.len())
        .map(|i| {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cxy = exy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            (num / den) as f32
        })
        .collect();
    Ok(Volume3::from_parts(grid, data))
}

pub fn ssim(test: &Volume3, reference: &Volume3, params: &SsimParams) -> Result<f64> {
    let map = ssim_map(test, reference, params)?;
    let d = map.data();
    Ok((sum_by_slab(map.grid(), |i| d[i] as f64) / d.len() as f64).clamp(-1.0, 1.0))
}

/// All four image metrics of `test` against `reference`.
pub fn compare_images(test: &Volume3, reference: &Volume3, params: &SsimParams) -> Result<SimilarityReport> {
    Ok(SimilarityReport {
        pearson: pearson(test, reference)?,
        error_pct: image_error_pct(test, reference)?,
        mse: mse(test, reference)?,
        ssim: ssim(test, reference, params)?,
    })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Uniform bucket grid over a point cloud for exact nearest-neighbour search.
struct Buckets<'a> {
    points: &'a [[f64; 3]],
    lo: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> Buckets<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext = [0, 1, 2].map(|a| (hi[a] - lo[a]).max(0.0));
        let longest = ext.iter().fold(0.0f64, |m, &e| m.max(e));
        let per_axis = (points.len() as f64 / 2.0).cbrt().max(1.0);
        let cell = (longest / per_axis).max(1e-9);
        let dims = ext.map(|e| (e / cell).floor() as usize + 1);
        let mut b = Self {
            points,
            lo,
            cell,
            dims,
            start: Vec::new(),
            order: Vec::new(),
        };
        let ncell = dims.iter().product::<usize>();
        let keys: Vec<usize> = points.iter().map(|p| b.key(b.cell_of(*p))).collect();
        let mut start = vec![0usize; ncell + 1];
        for &k in &keys {
            start[k + 1] += 1;
        }
        for c in 0..ncell {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        b.start = start;
        b.order = order;
        b
    }

    fn cell_of(&self, p: [f64; 3]) -> [isize; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.lo[a]) / self.cell).floor() as isize).clamp(0, self.dims[a] as isize - 1))
    }

    fn key(&self, c: [isize; 3]) -> usize {
        c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize)
    }

    fn scan(&self, c: [isize; 3], q: [f64; 3], best: &mut f64) {
        let k = self.key(c);
        for &i in &self.order[self.start[k]..self.start[k + 1]] {
            let d = dist(q, self.points[i]);
            if d < *best {
                *best = d;
            }
        }
    }

    /// Exact nearest distance from `q`, or early exit once it drops to
    /// `cutoff` or below.
    fn nearest(&self, q: [f64; 3], cutoff: f64) -> f64 {
        let c = self.cell_of(q);
        let mut best = f64::INFINITY;
        let dims = self.dims.map(|d| d as isize);
        let max_ring = (0..3).map(|a| c[a].max(dims[a] - 1 - c[a])).max().unwrap();
        for r in 0..=max_ring {
            for dz in -r..=r {
                let z = c[2] + dz;
                if z < 0 || z >= dims[2] {
                    continue;
                }
                for dy in -r..=r {
                    let y = c[1] + dy;
                    if y < 0 || y >= dims[1] {
                        continue;
                    }
                    let on_shell = dz.abs() == r || dy.abs() == r;
                    let step = if on_shell { 1 } else { (2 * r).max(1) };
                    let mut dx = -r;
                    while dx <= r {
                        let x = c[0] + dx;
                        if x >= 0 && x < dims[0] {
                            self.scan([x, y, z], q, &mut best);
                        }
                        dx += step;
                    }
                }
            }
            if best <= cutoff {
                return best;
            }
            // every unsearched cell is more than r cells away along some axis
            if best <= r as f64 * self.cell {
                return best;
            }
        }
        best
    }
}

/// `max over a of min over b of |a - b|`.
pub fn directed_hausdorff(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    if from.is_empty() || to.is_empty() {
        return f64::INFINITY;
    }
    let buckets = Buckets::new(to);
    from.iter().fold(0.0f64, |h, &p| h.max(buckets.nearest(p, h)))
}

pub fn hausdorff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

/// Deformed positions `x + u(x)` in mm of the selected voxels.
pub fn deformed_points(field: &VectorField3, mask: Option<&Mask3>) -> Vec<[f64; 3]> {
    let g = field.grid();
    (0..g.len())
        .filter(|&i| mask.is_none_or(|m| m.data()[i]))
        .map(|i| {
            let p = g.voxel_to_mm(g.voxel_of(i));
            let u = field.at(i);
            [p[0] + u[0] as f64, p[1] + u[1] as f64, p[2] + u[2] as f64]
        })
        .collect()
}

fn norm_diff(a: [f32; 3], b: [f32; 3]) -> f64 {
    let d = [0, 1, 2].map(|c| a[c] as f64 - b[c] as f64);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn norm(a: [f32; 3]) -> f64 {
    norm_diff(a, [0.0; 3])
}

fn check_field_inputs(test: &VectorField3, reference: &VectorField3, mask: Option<&Mask3>) -> Result<Vec<usize>> {
    if test.grid() != reference.grid() {
        return Err(Error::GridMismatch);
    }
    if let Some(m) = mask {
        if m.grid() != test.grid() {
            return Err(Error::GridMismatch);
        }
    }
    let sel: Vec<usize> = (0..test.grid().len())
        .filter(|&i| mask.is_none_or(|m| m.data()[i]))
        .collect();
    if sel.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(sel)
}

/// Largest `|u_test - u_ref|` over the selected voxels.
pub fn sup_error(test: &VectorField3, reference: &VectorField3, mask: Option<&Mask3>) -> Result<f64> {
    let sel = check_field_inputs(test, reference, mask)?;
    Ok(sel
        .iter()
        .map(|&i| norm_diff(test.at(i), reference.at(i)))
        .fold(0.0, f64::max))
}

/// Field comparison over the voxels of `mask` (all voxels when `None`).
pub fn compare_fields(
    test: &VectorField3,
    reference: &VectorField3,
    mask: Option<&Mask3>,
) -> Result<FieldComparisonReport> {
    let sel = check_field_inputs(test, reference, mask)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut sup = 0.0f64;
    for &i in &sel {
        let d = norm_diff(test.at(i), reference.at(i));
        num += d;
        sup = sup.max(d);
        den += norm(reference.at(i));
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator("sum of |reference displacement|"));
    }
    let hd = hausdorff(&deformed_points(test, mask), &deformed_points(reference, mask));
    Ok(FieldComparisonReport {
        hausdorff_mm: hd,
        sup_error_mm: sup,
        error_pct: 100.0 * num / den,
    })
}
