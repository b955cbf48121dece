//! Composition and fixed-point inversion of pull-back displacement fields.

use crate::error::{Error, Result};
use crate::interp::trilinear3_at;
use crate::par::map_voxels3;
use crate::volume::VectorField3;

/// `result(x) = inner(x + outer(x)) + outer(x)`, so warping by the result
/// equals warping by `inner` and then by `outer`. `inner` is sampled
/// trilinearly and clamped at the boundary.
pub fn compose(outer: &VectorField3, inner: &VectorField3) -> Result<VectorField3> {
    if outer.grid() != inner.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = *outer.grid();
    let sp = grid.spacing;
    let comps = map_voxels3(&grid, |i, j, k| {
        let idx = grid.linear_index(i, j, k);
        let o = outer.at(idx);
        let t = [
            i as f64 + o[0] as f64 / sp[0],
            j as f64 + o[1] as f64 / sp[1],
            k as f64 + o[2] as f64 / sp[2],
        ];
        let v = trilinear3_at(&grid, inner.components(), t);
        [
            (v[0] + o[0] as f64) as f32,
            (v[1] + o[1] as f64) as f32,
            (v[2] + o[2] as f64) as f32,
        ]
    });
    Ok(VectorField3::from_parts(grid, comps))
}

/// Approximate inverse by the iteration `v <- -u(x + v(x))` from `v = 0`.
/// Converges for fields with `max |grad u| < 1`; larger deformations leave a
/// residual that [`compose`] exposes.
pub fn invert(field: &VectorField3, iters: usize) -> VectorField3 {
    let grid = *field.grid();
    let sp = grid.spacing;
    let mut v = VectorField3::zeros(grid);
    for _ in 0..iters {
        let comps = map_voxels3(&grid, |i, j, k| {
            let cur = v.at(grid.linear_index(i, j, k));
            let t = [
                i as f64 + cur[0] as f64 / sp[0],
                j as f64 + cur[1] as f64 / sp[1],
                k as f64 + cur[2] as f64 / sp[2],
            ];
            let u = trilinear3_at(&grid, field.components(), t);
            [-u[0] as f32, -u[1] as f32, -u[2] as f32]
        });
        v = VectorField3::from_parts(grid, comps);
    }
    v
}
