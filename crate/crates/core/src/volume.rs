//! Volumetric data model: grid geometry, scalar volumes, displacement fields
//! and binary masks.
//!
//! All arrays are stored x-fastest: the linear index of voxel `(i, j, k)` is
//! `i + nx * (j + ny * k)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel lattice with physical spacing and origin, all in millimetres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Self { dims, spacing, origin };
        grid.validate()?;
        Ok(grid)
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims {:?} must be >= 1", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "spacing {:?} must be positive and finite",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid(format!("origin {:?} not finite", self.origin)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_of(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical position of a (possibly fractional) voxel index.
    #[inline]
    pub fn index_to_mm(&self, index: [f64; 3]) -> [f64; 3] {
        [
            self.origin[0] + index[0] * self.spacing[0],
            self.origin[1] + index[1] * self.spacing[1],
            self.origin[2] + index[2] * self.spacing[2],
        ]
    }

    #[inline]
    pub fn voxel_to_mm(&self, voxel: [usize; 3]) -> [f64; 3] {
        self.index_to_mm([voxel[0] as f64, voxel[1] as f64, voxel[2] as f64])
    }

    /// Continuous voxel index of a physical point. Values within 1e-9 of an
    /// integer snap to it so that node positions map back exactly.
    #[inline]
    pub fn mm_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            let t = (p[a] - self.origin[a]) / self.spacing[a];
            let r = t.round();
            out[a] = if (t - r).abs() < 1e-9 { r } else { t };
        }
        out
    }

    /// Nearest voxel to a physical point, if it lies inside the grid.
    pub fn mm_to_voxel(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let t = self.mm_to_index(p);
        let mut v = [0usize; 3];
        for a in 0..3 {
            let r = t[a].round();
            if r < 0.0 || r > (self.dims[a] - 1) as f64 {
                return None;
            }
            v[a] = r as usize;
        }
        Some(v)
    }

    /// Physical extent covered by voxel centres along each axis.
    pub fn extent_mm(&self) -> [f64; 3] {
        [
            (self.dims[0] - 1) as f64 * self.spacing[0],
            (self.dims[1] - 1) as f64 * self.spacing[1],
            (self.dims[2] - 1) as f64 * self.spacing[2],
        ]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }
}

fn check_data(grid: &Grid3, data: &[f32]) -> Result<()> {
    if data.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            actual: data.len(),
        });
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// Scalar 32-bit volume.
#[derive(Clone, Debug)]
pub struct Volume3 {
    grid: Grid3,
    data: Vec<f32>,
    coeffs: OnceLock<Vec<f32>>,
}

impl PartialEq for Volume3 {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.data == other.data
    }
}

impl Volume3 {
    pub fn new(grid: Grid3, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        check_data(&grid, &data)?;
        Ok(Self::from_parts(grid, data))
    }

    /// Copies `data`; later changes to the caller's slice do not reach the volume.
    pub fn from_slice(grid: Grid3, data: &[f32]) -> Result<Self> {
        Self::new(grid, data.to_vec())
    }

    pub(crate) fn from_parts(grid: Grid3, data: Vec<f32>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            grid,
            data,
            coeffs: OnceLock::new(),
        }
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self::from_parts(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: Grid3, value: f32) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    /// Builds a volume by evaluating `f` at each voxel's physical position.
    pub fn from_fn(grid: Grid3, mut f: impl FnMut([f64; 3]) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(grid.voxel_to_mm([i, j, k])) as f32);
                }
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.linear_index(i, j, k)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Cubic B-spline coefficients, computed on first use.
    pub(crate) fn spline_coefficients(&self) -> &[f32] {
        self.coeffs
            .get_or_init(|| crate::interp::bspline_prefilter(&self.grid, &self.data))
    }

    /// Voxelwise difference `self - other`.
    pub fn subtract(&self, other: &Volume3) -> Result<Volume3> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Volume3::new(self.grid, data)
    }
}

/// Per-voxel displacement in millimetres. `u(x)` maps a point `x` of the
/// fixed domain to `x + u(x)` in the moving domain (pull-back convention).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField3 {
    grid: Grid3,
    comps: [Vec<f32>; 3],
}

impl VectorField3 {
    pub fn new(grid: Grid3, ux: Vec<f32>, uy: Vec<f32>, uz: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        for c in [&ux, &uy, &uz] {
            check_data(&grid, c)?;
        }
        Ok(Self {
            grid,
            comps: [ux, uy, uz],
        })
    }

    pub(crate) fn from_parts(grid: Grid3, comps: [Vec<f32>; 3]) -> Self {
        debug_assert!(comps.iter().all(|c| c.len() == grid.len()));
        Self { grid, comps }
    }

    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.len();
        Self::from_parts(grid, [vec![0.0; n], vec![0.0; n], vec![0.0; n]])
    }

    pub fn constant(grid: Grid3, value: [f32; 3]) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value[0]; n], vec![value[1]; n], vec![value[2]; n])
    }

    /// Builds a field by evaluating `f` at each voxel's physical position.
    pub fn from_fn(grid: Grid3, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let n = grid.len();
        let mut comps = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    let u = f(grid.voxel_to_mm([i, j, k]));
                    for c in 0..3 {
                        comps[c].push(u[c] as f32);
                    }
                }
            }
        }
        let [ux, uy, uz] = comps;
        Self::new(grid, ux, uy, uz)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f32] {
        &self.comps[axis]
    }

    pub fn components(&self) -> &[Vec<f32>; 3] {
        &self.comps
    }

    pub fn into_components(self) -> [Vec<f32>; 3] {
        self.comps
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f32; 3] {
        [self.comps[0][idx], self.comps[1][idx], self.comps[2][idx]]
    }

    /// Euclidean displacement length per voxel.
    pub fn magnitude(&self) -> Volume3 {
        let data = (0..self.grid.len())
            .map(|i| {
                let [x, y, z] = self.at(i);
                (x * x + y * y + z * z).sqrt()
            })
            .collect();
        Volume3::from_parts(self.grid, data)
    }

    /// Mean displacement length over the voxels selected by `mask` (all
    /// voxels when `None`).
    pub fn mean_magnitude(&self, mask: Option<&Mask3>) -> f64 {
        let mag = self.magnitude();
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (i, &m) in mag.data().iter().enumerate() {
            if mask.is_none_or(|mk| mk.data()[i]) {
                sum += m as f64;
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn scaled(&self, factor: f32) -> VectorField3 {
        let comps = self.comps.clone().map(|c| c.into_iter().map(|v| v * factor).collect());
        VectorField3::from_parts(self.grid, comps)
    }
}

/// Binary voxel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask3 {
    grid: Grid3,
    data: Vec<bool>,
}

impl Mask3 {
    pub fn new(grid: Grid3, data: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn full(grid: Grid3) -> Self {
        Self {
            grid,
            data: vec![true; grid.len()],
        }
    }

    /// Voxels with value > 0.5 are set.
    pub fn from_volume(vol: &Volume3) -> Self {
        Self {
            grid: *vol.grid(),
            data: vol.data().iter().map(|&v| v > 0.5).collect(),
        }
    }

    pub fn to_volume(&self) -> Volume3 {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Volume3::from_parts(self.grid, data)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
