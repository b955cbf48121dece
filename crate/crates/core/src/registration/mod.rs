//! Symmetric diffeomorphic registration with B-spline regularised updates.
//!
//! Two half-transforms carry the fixed and the moving image toward a common
//! midpoint. Each iteration warps both images to the midpoint, evaluates the
//! local cross-correlation and its gradient with respect to each side, and
//! projects both gradients onto a cubic B-spline lattice. Their half
//! difference is faded out toward the grid faces, projected again, scaled so
//! its largest displacement equals the current step, and composed into the
//! moving half (the fixed half takes the negated update). An update that
//! lowers the metric is rejected and the step halved, so the per-level
//! metric trace never decreases. The full fixed-to-moving field is the
//! inverse fixed half followed by the moving half.

mod bspline;
mod cc;
mod field;

use std::borrow::Cow;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_smooth;
use crate::interp::{resample_to_grid, Interpolation};
use crate::volume::{Grid3, VectorField3, Volume3};
use crate::warp::{apply_deformation, resample_field};

pub use bspline::bspline_smooth;
pub use cc::{local_cc, VARIANCE_EPSILON};
pub use field::{compose, invert};

use bspline::BsplineSmoother;
use cc::{cc_terms, displacement_gradient};

fn default_radius() -> usize {
    4
}
fn default_spline() -> f64 {
    40.0
}
fn default_levels() -> usize {
    3
}
fn default_iterations() -> Vec<usize> {
    vec![100, 70, 40]
}
fn default_window() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-6
}
fn default_inverse_iterations() -> usize {
    20
}

/// Optimiser settings. `step_mm` and `smooth_sigmas_mm` default to values
/// derived from the fixed image grid when left unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    /// Half-width of the correlation window, voxels.
    #[serde(default = "default_radius")]
    pub cc_radius: usize,
    /// Control-point spacing of the update regularisation lattice.
    #[serde(default = "default_spline")]
    pub spline_spacing_mm: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Per-level iteration caps, coarse to fine.
    #[serde(default = "default_iterations")]
    pub iterations: Vec<usize>,
    /// Largest per-iteration displacement; `0.25 * min spacing` if unset.
    #[serde(default)]
    pub step_mm: Option<f64>,
    /// Per-level Gaussian pre-smoothing; `[2s, s, 0]` style with `s` the
    /// largest voxel spacing if unset.
    #[serde(default)]
    pub smooth_sigmas_mm: Option<Vec<f64>>,
    #[serde(default = "default_window")]
    pub converge_window: usize,
    #[serde(default = "default_tol")]
    pub converge_tol: f64,
    /// Fixed-point iterations used when inverting the half-transforms.
    #[serde(default = "default_inverse_iterations")]
    pub inverse_iterations: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self {
            cc_radius: default_radius(),
            spline_spacing_mm: default_spline(),
            levels: default_levels(),
            iterations: default_iterations(),
            step_mm: None,
            smooth_sigmas_mm: None,
            converge_window: default_window(),
            converge_tol: default_tol(),
            inverse_iterations: default_inverse_iterations(),
        }
    }
}

impl RegistrationParams {
    pub fn step_for(&self, grid: &Grid3) -> f64 {
        self.step_mm.unwrap_or(0.25 * grid.min_spacing())
    }

    pub fn sigmas_for(&self, grid: &Grid3) -> Vec<f64> {
        match &self.smooth_sigmas_mm {
            Some(s) => s.clone(),
            None => {
                let s = grid.max_spacing();
                (0..self.levels)
                    .map(|l| ((self.levels - 1 - l) as f64).min(2.0) * s)
                    .collect()
            }
        }
    }

    pub fn validate(&self, grid: &Grid3) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.cc_radius < 1 {
            return bad("cc_radius must be >= 1".into());
        }
        if !(self.spline_spacing_mm > 0.0) || self.spline_spacing_mm < grid.max_spacing() {
            return bad(format!(
                "spline_spacing_mm {} must be >= voxel spacing {}",
                self.spline_spacing_mm,
                grid.max_spacing()
            ));
        }
        if self.levels < 1 {
            return bad("levels must be >= 1".into());
        }
        if self.iterations.len() != self.levels {
            return bad(format!(
                "iterations has {} entries for {} levels",
                self.iterations.len(),
                self.levels
            ));
        }
        if let Some(s) = &self.smooth_sigmas_mm {
            if s.len() != self.levels || s.iter().any(|v| !(*v >= 0.0)) {
                return bad("smooth_sigmas_mm needs one non-negative entry per level".into());
            }
        }
        if let Some(s) = self.step_mm {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("step_mm {s} must be positive"));
            }
        }
        if self.converge_window < 1 || !(self.converge_tol >= 0.0) {
            return bad("converge_window must be >= 1 and converge_tol >= 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub level: usize,
    pub iteration: usize,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    /// Fixed to moving pull-back field on the fixed grid.
    pub field_fwd: VectorField3,
    /// Moving to fixed pull-back field on the fixed grid.
    pub field_inv: VectorField3,
    /// Accepted metric values per level and iteration.
    pub metric_trace: Vec<TracePoint>,
    pub converged: Vec<bool>,
}

impl RegistrationResult {
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_trace_csv(&self.metric_trace, path)
    }
}

pub fn write_trace_csv(trace: &[TracePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "level,iteration,score")?;
    for t in trace {
        writeln!(w, "{},{},{}", t.level, t.iteration, t.score)?;
    }
    w.flush()?;
    Ok(())
}

/// Grid for a pyramid level: same physical extent and origin, roughly
/// `shrink` times fewer samples per axis.
pub fn level_grid(full: &Grid3, shrink: usize) -> Grid3 {
    if shrink <= 1 {
        return *full;
    }
    let mut g = *full;
    for a in 0..3 {
        let n = full.dims[a];
        let m = n.div_ceil(shrink).max(1);
        g.dims[a] = m;
        g.spacing[a] = if m > 1 {
            full.spacing[a] * (n - 1) as f64 / (m - 1) as f64
        } else {
            full.spacing[a] * shrink as f64
        };
    }
    g
}

fn is_constant(v: &Volume3) -> bool {
    let (lo, hi) = v.min_max();
    lo == hi
}

struct Evaluation {
    score: f64,
    /// Smoothed antisymmetric ascent direction: the moving half follows it,
    /// the fixed half moves the opposite way.
    direction: VectorField3,
}

struct Level<'a> {
    fixed: &'a Volume3,
    moving: &'a Volume3,
    radius: usize,
    smoother: BsplineSmoother,
    taper: [Vec<f64>; 3],
}

/// Per-axis weights rising smoothly from 0 on the grid faces to 1 at
/// `width_mm` inside.
fn boundary_taper(grid: &Grid3, width_mm: f64) -> [Vec<f64>; 3] {
    [0, 1, 2].map(|a| {
        let n = grid.dims[a];
        let extent = grid.extent_mm()[a];
        let w = width_mm.min(extent / 4.0);
        (0..n)
            .map(|i| {
                let x = i as f64 * grid.spacing[a];
                let d = x.min(extent - x);
                if n < 4 || w <= 0.0 || d >= w {
                    1.0
                } else {
                    let s = d / w;
                    s * s * (3.0 - 2.0 * s)
                }
            })
            .collect()
    })
}

impl Level<'_> {
    fn evaluate(&self, phi_f: &VectorField3, phi_m: &VectorField3) -> Evaluation {
        let grid = self.fixed.grid();
        let i_mid = apply_deformation(self.fixed, phi_f, Interpolation::Trilinear);
        let j_mid = apply_deformation(self.moving, phi_m, Interpolation::Trilinear);
        let terms = cc_terms(grid, i_mid.data(), j_mid.data(), self.radius);
        let gf = displacement_gradient(grid, i_mid.data(), &terms.d_fixed);
        let gm = displacement_gradient(grid, j_mid.data(), &terms.d_moving);
        let gf = self.smoother.smooth(&gf);
        let gm = self.smoother.smooth(&gm);
        // Half difference of the two sides, faded out toward the faces.
        let [nx, ny, _] = grid.dims;
        let [tx, ty, tz] = &self.taper;
        let comps = [0, 1, 2].map(|c| {
            gm.component(c)
                .iter()
                .zip(gf.component(c))
                .enumerate()
                .map(|(idx, (m, f))| {
                    let w = tx[idx % nx] * ty[(idx / nx) % ny] * tz[idx / (nx * ny)];
                    (0.5 * (m - f) as f64 * w) as f32
                })
                .collect()
        });
        // Back onto the spline lattice.
        let direction = self.smoother.smooth(&VectorField3::from_parts(*grid, comps));
        Evaluation {
            score: terms.score,
            direction,
        }
    }
}

/// Scales `g` so its longest vector has length `step`; `None` for a zero field.
fn scaled_update(g: &VectorField3, step: f64) -> Option<VectorField3> {
    let max = g.magnitude().data().iter().fold(0.0f32, |m, &v| m.max(v)) as f64;
    if !(max > 1e-30) {
        return None;
    }
    Some(g.scaled((step / max) as f32))
}

/// Registers `moving` onto `fixed`. A moving image on another grid is first
/// resampled onto the fixed grid.
pub fn register(fixed: &Volume3, moving: &Volume3, params: &RegistrationParams) -> Result<RegistrationResult> {
    let full = *fixed.grid();
    params.validate(&full)?;
    let moving: Cow<Volume3> = if moving.grid() == &full {
        Cow::Borrowed(moving)
    } else {
        Cow::Owned(resample_to_grid(moving, &full, Interpolation::Trilinear))
    };
    if is_constant(fixed) {
        return Err(Error::Degenerate("fixed volume is constant".into()));
    }
    if is_constant(&moving) {
        return Err(Error::Degenerate("moving volume is constant".into()));
    }

    let step0 = params.step_for(&full);
    let sigmas = params.sigmas_for(&full);
    let mut trace = Vec::new();
    let mut converged = Vec::with_capacity(params.levels);
    let mut phi_f: Option<VectorField3> = None;
    let mut phi_m: Option<VectorField3> = None;

    for level in 0..params.levels {
        let shrink = 1usize << (params.levels - 1 - level);
        let grid = level_grid(&full, shrink);
        let prepare = |v: &Volume3| {
            let s = gaussian_smooth(v, sigmas[level]);
            if grid == full {
                s
            } else {
                resample_to_grid(&s, &grid, Interpolation::Trilinear)
            }
        };
        let f_l = prepare(fixed);
        let m_l = prepare(&moving);
        let mut pf = phi_f
            .take()
            .map_or_else(|| VectorField3::zeros(grid), |p| resample_field(&p, &grid));
        let mut pm = phi_m
            .take()
            .map_or_else(|| VectorField3::zeros(grid), |p| resample_field(&p, &grid));
        let lvl = Level {
            fixed: &f_l,
            moving: &m_l,
            radius: params.cc_radius,
            smoother: BsplineSmoother::new(&grid, params.spline_spacing_mm)?,
            taper: boundary_taper(&grid, 0.5 * params.spline_spacing_mm),
        };

        let mut cur = lvl.evaluate(&pf, &pm);
        trace.push(TracePoint {
            level,
            iteration: 0,
            score: cur.score,
        });
        let mut history = vec![cur.score];
        let mut step = step0;
        let mut done = false;
        for it in 1..params.iterations[level] {
            let Some(delta) = scaled_update(&cur.direction, step) else {
                done = true;
                break;
            };
            let cand_f = compose(&delta.scaled(-1.0), &pf)?;
            let cand_m = compose(&delta, &pm)?;
            let next = lvl.evaluate(&cand_f, &cand_m);
            if next.score >= cur.score {
                pf = cand_f;
                pm = cand_m;
                cur = next;
                trace.push(TracePoint {
                    level,
                    iteration: it,
                    score: cur.score,
                });
                history.push(cur.score);
                let w = params.converge_window;
                if history.len() > w {
                    let last = history[history.len() - 1];
                    let past = history[history.len() - 1 - w];
                    if (last - past) / last.abs().max(f64::MIN_POSITIVE) < params.converge_tol {
                        done = true;
                        break;
                    }
                }
            } else {
                step *= 0.5;
                if step < step0 * 1e-3 {
                    done = true;
                    break;
                }
            }
        }
        log::debug!(
            "level {level}: grid {:?}, score {:.6}, converged {done}",
            grid.dims,
            cur.score
        );
        converged.push(done);
        phi_f = Some(pf);
        phi_m = Some(pm);
    }

    let phi_f = resample_field(&phi_f.unwrap(), &full);
    let phi_m = resample_field(&phi_m.unwrap(), &full);
    let phi_f_inv = invert(&phi_f, params.inverse_iterations);
    let phi_m_inv = invert(&phi_m, params.inverse_iterations);
    Ok(RegistrationResult {
        field_fwd: compose(&phi_f_inv, &phi_m)?,
        field_inv: compose(&phi_m_inv, &phi_f)?,
        metric_trace: trace,
        converged,
    })
}
