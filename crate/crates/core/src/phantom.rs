//! Synthetic two-phase abdominal phantom with a known breathing deformation.
//!
//! Axes: x left-right, y posterior-anterior, z inferior-superior. TP1 is the
//! inhale phase. TP2 (exhale) is TP1 pulled back through a smooth field that
//! lifts the abdomen superiorly and expands it anteriorly. Its profile is
//! `(1 - rho^2)^3` in the body's normalised ellipsoidal radius `rho`: C^2,
//! peaked at the body centre just below the lungs, and exactly zero outside
//! the body.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Interpolation;
use crate::volume::{Grid3, Mask3, VectorField3, Volume3};
use crate::warp::apply_deformation;

/// Largest allowed Frobenius norm of the displacement gradient.
pub const MAX_DISPLACEMENT_GRADIENT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Peak superior shift of TP2 relative to TP1.
    pub amplitude_mm: f64,
    /// Peak anterior-posterior expansion.
    pub ap_amplitude_mm: f64,
    /// Noise standard deviation as a fraction of the clean intensity range.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [96, 96, 48],
            spacing: [2.0, 2.0, 3.0],
            amplitude_mm: 8.0,
            ap_amplitude_mm: 3.0,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhantomPair {
    /// Inhale.
    pub tp1: Volume3,
    /// Exhale.
    pub tp2: Volume3,
    /// Pull-back field from the TP2 domain into TP1.
    pub gt_field: VectorField3,
    pub body_mask: Mask3,
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Geometry shared by the field and the image content.
#[derive(Clone, Copy, Debug)]
struct Layout {
    center: [f64; 3],
    body_axes: [f64; 3],
    extent: [f64; 3],
}

impl Layout {
    fn new(grid: &Grid3) -> Self {
        let extent = grid.extent_mm();
        let center = [0, 1, 2].map(|a| grid.origin[a] + extent[a] / 2.0);
        let body_axes = [0.45 * extent[0], 0.40 * extent[1], 0.47 * extent[2]];
        Self {
            center,
            body_axes,
            extent,
        }
    }

    fn rel(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| p[a] - self.center[a])
    }

    fn body_radius(&self, p: [f64; 3]) -> f64 {
        let d = self.rel(p);
        (0..3).map(|a| (d[a] / self.body_axes[a]).powi(2)).sum::<f64>().sqrt()
    }

    /// Offsets from the centre in units of the body semi-axes.
    fn body_coords(&self, p: [f64; 3]) -> [f64; 3] {
        let d = self.rel(p);
        [0, 1, 2].map(|a| d[a] / self.body_axes[a])
    }
}

/// Displacement and its gradient (rows: components, columns: axes) at
/// normalised body coordinates `t`.
fn field_at(t: [f64; 3], layout: &Layout, amp: f64, ap: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let q = 1.0 - (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
    if q <= 0.0 {
        return ([0.0; 3], [[0.0; 3]; 3]);
    }
    let b = q * q * q;
    let axes = layout.body_axes;
    let db = [0, 1, 2].map(|a| -6.0 * q * q * t[a] / axes[a]);
    let w = t[1];
    let mut jac = [[0.0; 3]; 3];
    for c in 0..3 {
        jac[1][c] = ap * db[c] * w;
        jac[2][c] = -amp * db[c];
    }
    jac[1][1] += ap * b / axes[1];
    ([0.0, ap * b * w, -amp * b], jac)
}

/// Largest Frobenius norm of the analytic displacement gradient, sampled
/// densely over the body's bounding box.
fn max_gradient_norm(layout: &Layout, amp: f64, ap: f64) -> f64 {
    const N: usize = 65;
    let t = |i: usize| -1.0 + 2.0 * i as f64 / (N - 1) as f64;
    let mut best = 0.0f64;
    for k in 0..N {
        for j in 0..N {
            for i in 0..N {
                let (_, jac) = field_at([t(i), t(j), t(k)], layout, amp, ap);
                let f = jac.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                best = best.max(f);
            }
        }
    }
    best
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<Grid3> {
        Grid3::new(self.dims, self.spacing, [0.0; 3])
    }

    /// Largest displacement-gradient norm of the breathing field.
    pub fn max_gradient(&self) -> Result<f64> {
        let layout = Layout::new(&self.grid()?);
        Ok(max_gradient_norm(&layout, self.amplitude_mm, self.ap_amplitude_mm))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 16) {
            return Err(Error::InvalidParameter(format!(
                "phantom dims {:?} must be at least 16 per axis",
                self.dims
            )));
        }
        self.grid()?;
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.amplitude_mm) || !finite_nonneg(self.ap_amplitude_mm) || !finite_nonneg(self.noise_sigma)
        {
            return Err(Error::InvalidParameter(
                "phantom amplitudes and noise must be finite and non-negative".into(),
            ));
        }
        let g = self.max_gradient()?;
        if g >= MAX_DISPLACEMENT_GRADIENT {
            return Err(Error::InvalidParameter(format!(
                "breathing field gradient {g:.3} exceeds {MAX_DISPLACEMENT_GRADIENT}; reduce the amplitudes"
            )));
        }
        Ok(())
    }
}

/// A tube segment for the vessel tree.
#[derive(Clone, Copy, Debug)]
struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

impl Segment {
    fn distance(&self, p: [f64; 3]) -> f64 {
        let ab = [0, 1, 2].map(|i| self.b[i] - self.a[i]);
        let ap = [0, 1, 2].map(|i| p[i] - self.a[i]);
        let len2: f64 = ab.iter().map(|v| v * v).sum();
        let s = if len2 > 0.0 {
            ((0..3).map(|i| ab[i] * ap[i]).sum::<f64>() / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (0..3).map(|i| (ap[i] - s * ab[i]).powi(2)).sum::<f64>().sqrt()
    }
}

struct Anatomy {
    layout: Layout,
    liver_center: [f64; 3],
    liver_axes: [f64; 3],
    lung_centers: [[f64; 3]; 2],
    lung_axes: [f64; 3],
    vessels: Vec<Segment>,
    waves: Vec<([f64; 3], f64)>,
    edge_mm: f64,
}

impl Anatomy {
    fn new(grid: &Grid3, rng: &mut ChaCha8Rng) -> Self {
        let layout = Layout::new(grid);
        let [cx, cy, cz] = layout.center;
        let [ex, ey, ez] = layout.extent;
        let liver_center = [cx - 0.10 * ex, cy, cz - 0.06 * ez];
        let liver_axes = [0.24 * ex, 0.24 * ey, 0.22 * ez];
        let lung_axes = [0.15 * ex, 0.22 * ey, 0.22 * ez];
        let lung_centers = [[cx - 0.2 * ex, cy, cz + 0.30 * ez], [cx + 0.2 * ex, cy, cz + 0.30 * ez]];
        let n_vessels = rng.random_range(3..=6);
        let mut vessels = Vec::with_capacity(n_vessels);
        let hub = [
            liver_center[0] + 0.3 * liver_axes[0],
            liver_center[1],
            liver_center[2] + 0.2 * liver_axes[2],
        ];
        for _ in 0..n_vessels {
            let dir = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
            let reach = rng.random_range(0.5..0.9);
            let end = [0, 1, 2].map(|a| liver_center[a] + reach * dir[a] * liver_axes[a]);
            let radius = rng.random_range(1.2..2.2) * grid.min_spacing();
            vessels.push(Segment { a: hub, b: end, radius });
        }
        let waves = (0..4)
            .map(|_| {
                let k = [0, 1, 2].map(|a| rng.random_range(-1.0..1.0) * 2.0 * PI / (0.3 * layout.extent[a]));
                (k, rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        Self {
            layout,
            liver_center,
            liver_axes,
            lung_centers,
            lung_axes,
            vessels,
            waves,
            edge_mm: 0.75 * grid.min_spacing(),
        }
    }

    fn intensity(&self, p: [f64; 3]) -> f64 {
        let min_body = self.layout.body_axes.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let body = logistic((1.0 - self.layout.body_radius(p)) * min_body / self.edge_mm);
        let texture: f64 = self
            .waves
            .iter()
            .map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
            .sum::<f64>()
            * 0.02;
        let mut v = 0.5 + texture;

        let liver_r = (0..3)
            .map(|a| ((p[a] - self.liver_center[a]) / self.liver_axes[a]).abs().powi(4))
            .sum::<f64>()
            .powf(0.25);
        let min_liver = self.liver_axes.iter().fold(f64::INFINITY, |m, &a| m.min(a));
        let liver = logistic((1.0 - liver_r) * min_liver / self.edge_mm);
        v += 0.25 * liver;

        for c in &self.lung_centers {
            let r = (0..3)
                .map(|a| ((p[a] - c[a]) / self.lung_axes[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            let min_lung = self.lung_axes.iter().fold(f64::INFINITY, |m, &a| m.min(a));
            let lung = logistic((1.0 - r) * min_lung / self.edge_mm);
            v = v * (1.0 - lung) + 0.1 * lung;
        }

        for s in &self.vessels {
            let w = logistic((s.radius - s.distance(p)) / self.edge_mm) * liver;
            v = v * (1.0 - w) + w;
        }
        body * v
    }
}

/// Generates the phantom pair. Equal specs give bit-identical output.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomPair> {
    spec.validate()?;
    let grid = spec.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let anatomy = Anatomy::new(&grid, &mut rng);
    let layout = anatomy.layout;

    let clean = Volume3::from_fn(grid, |p| anatomy.intensity(p))?;
    let gt_field = VectorField3::from_fn(grid, |p| {
        field_at(layout.body_coords(p), &layout, spec.amplitude_mm, spec.ap_amplitude_mm).0
    })?;
    let body_mask = Mask3::new(
        grid,
        (0..grid.len())
            .map(|i| layout.body_radius(grid.voxel_to_mm(grid.voxel_of(i))) <= 1.0)
            .collect(),
    )?;
    let warped = apply_deformation(&clean, &gt_field, Interpolation::CubicBspline);

    let (lo, hi) = clean.min_max();
    let sigma = spec.noise_sigma * (hi - lo) as f64;
    let (tp1, tp2) = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut noisy = |v: &Volume3| {
            let data = v
                .data()
                .iter()
                .map(|&x| (x as f64 + normal.sample(&mut rng)) as f32)
                .collect();
            Volume3::new(grid, data)
        };
        (noisy(&clean)?, noisy(&warped)?)
    } else {
        (clean, warped)
    };
    Ok(PhantomPair {
        tp1,
        tp2,
        gt_field,
        body_mask,
    })
}
