//! Pull-back warping, field resampling and Jacobian determinants.

use crate::interp::{cubic_at, trilinear3_at, trilinear_at, Interpolation};
use crate::par::{map_voxels, map_voxels3};
use crate::volume::{Grid3, VectorField3, Volume3};

/// `output(x) = vol(x + u(x))` at every voxel of `vol`'s grid. A field on a
/// different grid is first resampled onto it.
pub fn apply_deformation(vol: &Volume3, field: &VectorField3, mode: Interpolation) -> Volume3 {
    let grid = *vol.grid();
    let resampled;
    let field = if field.grid() == &grid {
        field
    } else {
        resampled = resample_field(field, &grid);
        &resampled
    };
    let sp = grid.spacing;
    let lookup = |i: usize, j: usize, k: usize| {
        let u = field.at(grid.linear_index(i, j, k));
        [
            i as f64 + u[0] as f64 / sp[0],
            j as f64 + u[1] as f64 / sp[1],
            k as f64 + u[2] as f64 / sp[2],
        ]
    };
    let data = match mode {
        Interpolation::Trilinear => {
            let d = vol.data();
            map_voxels(&grid, |i, j, k| trilinear_at(&grid, d, lookup(i, j, k)) as f32)
        }
        Interpolation::CubicBspline => {
            let c = vol.spline_coefficients();
            map_voxels(&grid, |i, j, k| cubic_at(&grid, c, lookup(i, j, k)) as f32)
        }
    };
    Volume3::from_parts(grid, data)
}

/// Trilinear resampling of every component onto `target`. Displacements are
/// physical, so values carry over unchanged.
pub fn resample_field(field: &VectorField3, target: &Grid3) -> VectorField3 {
    if field.grid() == target {
        return field.clone();
    }
    let src = *field.grid();
    let comps = map_voxels3(target, |i, j, k| {
        let t = src.mm_to_index(target.voxel_to_mm([i, j, k]));
        trilinear3_at(&src, field.components(), t).map(|v| v as f32)
    });
    VectorField3::from_parts(*target, comps)
}

/// `det(I + grad u)` per voxel, derivatives by central differences in mm
/// (one-sided at the boundary, zero along singleton axes).
pub fn jacobian_det(field: &VectorField3) -> Volume3 {
    let grid = *field.grid();
    let grads = field
        .components()
        .clone()
        .map(|c| crate::filter::gradient_mm(&grid, &c));
    let data = map_voxels(&grid, |i, j, k| {
        let idx = grid.linear_index(i, j, k);
        let mut m = [[0.0f64; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = grads[r][c][idx] as f64 + if r == c { 1.0 } else { 0.0 };
            }
        }
        (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])) as f32
    });
    Volume3::from_parts(grid, data)
}
