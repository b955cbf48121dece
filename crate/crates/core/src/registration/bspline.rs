//! Least-squares projection of a displacement field onto a uniform cubic
//! B-spline lattice.
//!
//! The lattice is a tensor product, so the 3D least-squares fit separates
//! into one small 1D fit per axis: `coeffs = (B^T B)^-1 B^T f` applied along
//! x, then y, then z, followed by evaluation `B coeffs` along each axis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::interp::cubic_weights;
use crate::volume::{Grid3, VectorField3};

/// Fit and evaluation operators for one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisProjector {
    n: usize,
    m: usize,
    /// m x n, row-major
    fit: Vec<f64>,
    /// per sample: first control index and its four weights
    eval: Vec<(usize, [f64; 4])>,
}

impl AxisProjector {
    /// `None` when the lattice has at least as many controls as samples, in
    /// which case the least-squares fit interpolates and the projection is
    /// the identity.
    pub(crate) fn new(n: usize, voxel_mm: f64, control_mm: f64) -> Option<Self> {
        let extent = (n.saturating_sub(1)) as f64 * voxel_mm;
        let spans = ((extent / control_mm - 1e-9).ceil() as usize).max(1);
        let m = spans + 3;
        if m >= n {
            return None;
        }
        let eval: Vec<(usize, [f64; 4])> = (0..n)
            .map(|s| {
                let t = s as f64 * voxel_mm / control_mm;
                let span = (t.floor() as usize).min(spans - 1);
                (span, cubic_weights(t - span as f64))
            })
            .collect();
        let mut basis = DMatrix::<f64>::zeros(n, m);
        for (s, &(first, w)) in eval.iter().enumerate() {
            for (q, &wq) in w.iter().enumerate() {
                basis[(s, first + q)] = wq;
            }
        }
        let gram = basis.transpose() * &basis;
        let chol = gram.cholesky()?;
        let fit_mat = chol.solve(&basis.transpose());
        let mut fit = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                fit[r * n + c] = fit_mat[(r, c)];
            }
        }
        Some(Self { n, m, fit, eval })
    }

    fn fit_line(&self, line: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.fit[r * self.n..(r + 1) * self.n];
            *o = row.iter().zip(line).map(|(a, b)| a * b).sum();
        }
    }

    fn eval_line(&self, coeffs: &[f64], out: &mut [f64]) {
        for (o, &(first, w)) in out.iter_mut().zip(&self.eval) {
            *o = w[0] * coeffs[first] + w[1] * coeffs[first + 1] + w[2] * coeffs[first + 2] + w[3] * coeffs[first + 3];
        }
    }
}

/// Applies a per-line map along `axis` of an x-fastest array with `dims`,
/// producing `out_len` samples along that axis.
fn map_axis(
    data: &[f64],
    dims: [usize; 3],
    axis: usize,
    out_len: usize,
    f: impl Fn(&[f64], &mut [f64]),
) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] = out_len;
    let in_strides = [1, dims[0], dims[0] * dims[1]];
    let out_strides = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut out = vec![0.0; out_dims.iter().product()];
    let mut line = vec![0.0; dims[axis]];
    let mut res = vec![0.0; out_len];
    for q in 0..dims[a2] {
        for p in 0..dims[a1] {
            let base_in = p * in_strides[a1] + q * in_strides[a2];
            let base_out = p * out_strides[a1] + q * out_strides[a2];
            for (s, l) in line.iter_mut().enumerate() {
                *l = data[base_in + s * in_strides[axis]];
            }
            f(&line, &mut res);
            for (s, &r) in res.iter().enumerate() {
                out[base_out + s * out_strides[axis]] = r;
            }
        }
    }
    (out, out_dims)
}

/// Reusable smoother for a fixed grid and control spacing.
#[derive(Clone, Debug)]
pub(crate) struct BsplineSmoother {
    dims: [usize; 3],
    axes: [Option<AxisProjector>; 3],
}

impl BsplineSmoother {
    pub(crate) fn new(grid: &Grid3, spacing_mm: f64) -> Result<Self> {
        if !(spacing_mm > 0.0) || spacing_mm < grid.max_spacing() {
            return Err(Error::InvalidParameter(format!(
                "spline spacing {spacing_mm} mm must be positive and at least the voxel spacing {} mm",
                grid.max_spacing()
            )));
        }
        Ok(Self {
            dims: grid.dims,
            axes: [0, 1, 2].map(|a| AxisProjector::new(grid.dims[a], grid.spacing[a], spacing_mm)),
        })
    }

    pub(crate) fn smooth_component(&self, data: &[f32]) -> Vec<f32> {
        let mut work: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        let mut dims = self.dims;
        for a in 0..3 {
            if let Some(p) = &self.axes[a] {
                (work, dims) = map_axis(&work, dims, a, p.m, |l, o| p.fit_line(l, o));
            }
        }
        for a in (0..3).rev() {
            if let Some(p) = &self.axes[a] {
                (work, dims) = map_axis(&work, dims, a, p.n, |l, o| p.eval_line(l, o));
            }
        }
        debug_assert_eq!(dims, self.dims);
        work.into_iter().map(|v| v as f32).collect()
    }

    pub(crate) fn smooth(&self, field: &VectorField3) -> VectorField3 {
        let comps = [0, 1, 2].map(|c| self.smooth_component(field.component(c)));
        VectorField3::from_parts(*field.grid(), comps)
    }
}

/// Replaces each component by its least-squares fit on a cubic B-spline
/// lattice with control points every `spacing_mm`, evaluated back on the
/// voxel grid.
pub fn bspline_smooth(field: &VectorField3, spacing_mm: f64) -> Result<VectorField3> {
    Ok(BsplineSmoother::new(field.grid(), spacing_mm)?.smooth(field))
}
