//! Low-resolution acquisition simulation: keep a centred block of every
//! slice's 2D k-space and zero-fill the rest.
//!
//! Shifted (DC-centred) k-space coordinates place the DC bin of an axis with
//! `N` samples at index `N / 2` (integer division). A retained block of `m`
//! samples starts at shifted index `N / 2 - m / 2`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::volume::Volume3;

/// A k-space sampling regime for slices of a given in-plane size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UndersamplingSpec {
    pub fraction: f64,
    pub in_plane_dims: [usize; 2],
    pub mask_dims: [usize; 2],
}

impl UndersamplingSpec {
    pub fn new(fraction: f64, in_plane_dims: [usize; 2]) -> Result<Self> {
        Ok(Self {
            fraction,
            in_plane_dims,
            mask_dims: effective_dims(fraction, in_plane_dims)?,
        })
    }

    /// Start index of the retained block along each axis, shifted coordinates.
    pub fn block_start(&self) -> [usize; 2] {
        [0, 1].map(|a| self.in_plane_dims[a] / 2 - self.mask_dims[a] / 2)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidFraction(fraction))
    }
}

/// Side lengths of the retained k-space block:
/// `clamp(round(sqrt(fraction) * N), 1, N)` per axis, rounding half away from zero.
pub fn effective_dims(fraction: f64, in_plane_dims: [usize; 2]) -> Result<[usize; 2]> {
    check_fraction(fraction)?;
    let s = fraction.sqrt();
    Ok(in_plane_dims.map(|n| ((s * n as f64).round() as usize).clamp(1, n.max(1))))
}

/// Retained-sample mask in shifted coordinates, x-fastest, `nx * ny` entries.
pub fn center_mask(in_plane_dims: [usize; 2], fraction: f64) -> Result<Vec<bool>> {
    let spec = UndersamplingSpec::new(fraction, in_plane_dims)?;
    let [nx, ny] = in_plane_dims;
    let [sx, sy] = spec.block_start();
    let [mx, my] = spec.mask_dims;
    let mut mask = vec![false; nx * ny];
    for j in sy..sy + my {
        for i in sx..sx + mx {
            mask[i + nx * j] = true;
        }
    }
    Ok(mask)
}

/// Per-slice 2D DFT, centred block retained, inverse DFT, real part kept.
/// The output shares the input grid.
pub fn undersample_volume(vol: &Volume3, fraction: f64) -> Result<Volume3> {
    let grid = *vol.grid();
    let [nx, ny, _] = grid.dims;
    let mask = center_mask([nx, ny], fraction)?;
    // unshifted bin k sits at shifted index (k + N/2) mod N
    let keep: Vec<bool> = (0..nx * ny)
        .map(|idx| {
            let (kx, ky) = (idx % nx, idx / nx);
            mask[(kx + nx / 2) % nx + nx * ((ky + ny / 2) % ny)]
        })
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fx = planner.plan_fft_forward(nx);
    let fy = planner.plan_fft_forward(ny);
    let ix = planner.plan_fft_inverse(nx);
    let iy = planner.plan_fft_inverse(ny);
    let scale = 1.0 / (nx * ny) as f64;

    let mut out = vec![0.0f32; grid.len()];
    out.par_chunks_mut(nx * ny)
        .zip(vol.data().par_chunks(nx * ny))
        .for_each(|(dst, src)| {
            let mut buf: Vec<Complex64> = src.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
            let mut col = vec![Complex64::default(); ny];
            fft2(&mut buf, &mut col, nx, ny, fx.as_ref(), fy.as_ref());
            for (b, &k) in buf.iter_mut().zip(&keep) {
                if !k {
                    *b = Complex64::default();
                }
            }
            fft2(&mut buf, &mut col, nx, ny, ix.as_ref(), iy.as_ref());
            for (d, b) in dst.iter_mut().zip(&buf) {
                *d = (b.re * scale) as f32;
            }
        });
    Ok(Volume3::from_parts(grid, out))
}

fn fft2(
    buf: &mut [Complex64],
    col: &mut [Complex64],
    nx: usize,
    ny: usize,
    along_x: &dyn rustfft::Fft<f64>,
    along_y: &dyn rustfft::Fft<f64>,
) {
    for row in buf.chunks_exact_mut(nx) {
        along_x.process(row);
    }
    for i in 0..nx {
        for j in 0..ny {
            col[j] = buf[i + nx * j];
        }
        along_y.process(col);
        for j in 0..ny {
            buf[i + nx * j] = col[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid3;

    const PAPER_FRACTIONS: [f64; 7] = [1.0, 0.5, 0.25, 0.03, 0.02, 0.01, 0.005];

    fn rms(v: &[f32]) -> f64 {
        (v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    fn rel_rms(a: &Volume3, b: &Volume3) -> f64 {
        let diff: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        rms(&diff) / rms(b.data())
    }

    fn textured(grid: Grid3) -> Volume3 {
        Volume3::from_fn(grid, |p| {
            (p[0] * 0.7).sin() + (p[1] * 1.9 + p[2]).cos() * 0.5 + 0.1 * p[0] * p[1]
        })
        .unwrap()
    }

    #[test]
    fn effective_dims_table() {
        let d = [268, 216];
        assert_eq!(effective_dims(0.50, d).unwrap(), [190, 153]);
        assert_eq!(effective_dims(0.25, d).unwrap(), [134, 108]);
        assert_eq!(effective_dims(1.0, d).unwrap(), [268, 216]);
        assert_eq!(effective_dims(0.03, d).unwrap(), [46, 37]);
        assert_eq!(effective_dims(0.02, d).unwrap(), [38, 31]);
        assert_eq!(effective_dims(0.01, d).unwrap(), [27, 22]);
        assert_eq!(effective_dims(0.005, d).unwrap(), [19, 15]);
        assert_eq!(effective_dims(1e-9, d).unwrap(), [1, 1]);
    }

    #[test]
    fn fraction_out_of_range() {
        for f in [0.0, -0.1, 1.0001, f64::NAN] {
            assert!(matches!(effective_dims(f, [8, 8]), Err(Error::InvalidFraction(_))));
            assert!(center_mask([8, 8], f).is_err());
        }
    }

    #[test]
    fn quarter_mask_on_8x8() {
        let m = center_mask([8, 8], 0.25).unwrap();
        // start index 8/2 - 4/2 = 2 on both axes
        for j in 0..8 {
            for i in 0..8 {
                let want = (2..=5).contains(&i) && (2..=5).contains(&j);
                assert_eq!(m[i + 8 * j], want, "({i},{j})");
            }
        }
        assert!(center_mask([8, 8], 1.0).unwrap().iter().all(|&b| b));
    }

    #[test]
    fn mask_cardinality_and_nesting() {
        for dims in [[268, 216], [96, 96], [7, 12], [1, 5]] {
            let mut prev: Option<Vec<bool>> = None;
            for &f in &PAPER_FRACTIONS {
                let m = center_mask(dims, f).unwrap();
                let [mx, my] = effective_dims(f, dims).unwrap();
                assert_eq!(m.iter().filter(|&&b| b).count(), mx * my);
                if let Some(bigger) = &prev {
                    assert!(m.iter().zip(bigger).all(|(&s, &b)| !s || b));
                }
                prev = Some(m);
            }
        }
    }

    #[test]
    fn full_fraction_round_trip() {
        let grid = Grid3::unit([12, 10, 3]).unwrap();
        let v = textured(grid);
        let out = undersample_volume(&v, 1.0).unwrap();
        assert!(rel_rms(&out, &v) < 1e-5);
        assert_eq!(out.grid(), v.grid());
    }

    #[test]
    fn constant_slice_unchanged() {
        let grid = Grid3::unit([9, 8, 2]).unwrap();
        let v = Volume3::constant(grid, 4.25).unwrap();
        for &f in &PAPER_FRACTIONS {
            let out = undersample_volume(&v, f).unwrap();
            assert!(out.data().iter().all(|&x| (x - 4.25).abs() < 1e-5 * 4.25));
        }
    }

    /// Direct O(N^4) DFT used as an independent oracle.
    fn direct_dft(slice: &[f64], n: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); n * n];
        for v in 0..n {
            for u in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..n {
                    for x in 0..n {
                        let ang = -2.0 * std::f64::consts::PI * ((u * x + v * y) as f64) / n as f64;
                        re += slice[x + n * y] * ang.cos();
                        im += slice[x + n * y] * ang.sin();
                    }
                }
                out[u + n * v] = (re, im);
            }
        }
        out
    }

    #[test]
    fn nyquist_checkerboard_removed() {
        let grid = Grid3::unit([8, 8, 1]).unwrap();
        let v = Volume3::from_fn(grid, |p| if (p[0] + p[1]) as i64 % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let slice: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
        let spectrum = direct_dft(&slice, 8);
        // all energy sits in the (4, 4) bin, which is shifted index (0, 0):
        // outside the 4x4 block starting at 2
        for (idx, &(re, im)) in spectrum.iter().enumerate() {
            if idx != 4 + 8 * 4 {
                assert!(re.abs() < 1e-9 && im.abs() < 1e-9);
            }
        }
        let out = undersample_volume(&v, 0.25).unwrap();
        assert!(rms(out.data()) < 1e-5 * rms(v.data()));
    }

    #[test]
    fn energy_never_increases_with_smaller_fraction() {
        let grid = Grid3::unit([16, 12, 2]).unwrap();
        let v = textured(grid);
        let mut last = rms(v.data());
        for &f in &PAPER_FRACTIONS {
            let e = rms(undersample_volume(&v, f).unwrap().data());
            assert!(e <= last * (1.0 + 1e-6), "fraction {f}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn idempotent_for_symmetric_blocks() {
        // odd block sizes are conjugate-symmetric about DC
        let grid = Grid3::unit([16, 16, 2]).unwrap();
        let v = textured(grid);
        for f in [0.66, 0.3164, 0.035] {
            let [mx, my] = effective_dims(f, [16, 16]).unwrap();
            assert!(mx % 2 == 1 && my % 2 == 1);
            let once = undersample_volume(&v, f).unwrap();
            let twice = undersample_volume(&once, f).unwrap();
            assert!(rel_rms(&twice, &once) < 1e-5);
        }
    }

    #[test]
    fn even_block_edge_is_halved_per_pass() {
        // with an even block the lowest-frequency edge row has no conjugate
        // partner, so taking the real part halves it on every pass
        let grid = Grid3::unit([8, 1, 1]).unwrap();
        let k = -2.0 * std::f64::consts::PI * 2.0 / 8.0;
        let v = Volume3::from_fn(grid, |p| (k * p[0]).cos()).unwrap();
        let once = undersample_volume(&v, 0.25).unwrap();
        let twice = undersample_volume(&once, 0.25).unwrap();
        for i in 0..8 {
            let want = 0.5 * v.data()[i];
            assert!((once.data()[i] - want).abs() < 1e-6);
            assert!((twice.data()[i] - 0.5 * want).abs() < 1e-6);
        }
    }

    #[test]
    fn linearity() {
        let grid = Grid3::unit([10, 14, 2]).unwrap();
        let x = textured(grid);
        let y = Volume3::from_fn(grid, |p| (p[0] - p[1]).abs().sqrt()).unwrap();
        let combo = Volume3::new(
            grid,
            x.data().iter().zip(y.data()).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
        )
        .unwrap();
        for f in [0.5, 0.03] {
            let ux = undersample_volume(&x, f).unwrap();
            let uy = undersample_volume(&y, f).unwrap();
            let uc = undersample_volume(&combo, f).unwrap();
            for i in 0..grid.len() {
                let want = 2.0 * ux.data()[i] - 0.5 * uy.data()[i];
                assert!((uc.data()[i] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn slices_are_independent() {
        let grid = Grid3::unit([8, 8, 3]).unwrap();
        let v = textured(grid);
        let out = undersample_volume(&v, 0.25).unwrap();
        let single = Grid3::unit([8, 8, 1]).unwrap();
        let mid = Volume3::from_slice(single, &v.data()[64..128]).unwrap();
        let mid_out = undersample_volume(&mid, 0.25).unwrap();
        assert_eq!(&out.data()[64..128], mid_out.data());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn volume(dims: [usize; 3], seed: u64) -> Volume3 {
            let mut st = seed | 1;
            Volume3::from_fn(Grid3::unit(dims).unwrap(), |_| {
                st ^= st << 13;
                st ^= st >> 7;
                st ^= st << 17;
                (st % 1000) as f64 / 1000.0
            })
            .unwrap()
        }

        fn energy(v: &Volume3) -> f64 {
            v.data().iter().map(|&x| (x as f64).powi(2)).sum()
        }

        proptest! {
            #[test]
            fn masks_nest_and_count(nx in 1usize..40, ny in 1usize..40, a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let small = center_mask([nx, ny], lo).unwrap();
                let big = center_mask([nx, ny], hi).unwrap();
                let [mx, my] = effective_dims(lo, [nx, ny]).unwrap();
                prop_assert_eq!(small.iter().filter(|&&v| v).count(), mx * my);
                prop_assert!(small.iter().zip(&big).all(|(&s, &b)| !s || b));
            }

            #[test]
            fn energy_is_monotone(nx in 2usize..20, ny in 2usize..20, seed: u64, a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let v = volume([nx, ny, 2], seed);
                let e_lo = energy(&undersample_volume(&v, lo).unwrap());
                let e_hi = energy(&undersample_volume(&v, hi).unwrap());
                prop_assert!(e_lo <= e_hi * (1.0 + 1e-6) + 1e-9);
                prop_assert!(e_hi <= energy(&v) * (1.0 + 1e-6) + 1e-9);
            }

            #[test]
            fn linear_in_the_input(nx in 2usize..16, ny in 2usize..16, s1: u64, s2: u64, f in 0.001f64..=1.0, ca in -3.0f64..3.0, cb in -3.0f64..3.0) {
                let x = volume([nx, ny, 1], s1);
                let y = volume([nx, ny, 1], s2);
                let combo = Volume3::new(
                    *x.grid(),
                    x.data().iter().zip(y.data()).map(|(p, q)| (ca * *p as f64 + cb * *q as f64) as f32).collect(),
                ).unwrap();
                let (ux, uy, uc) = (
                    undersample_volume(&x, f).unwrap(),
                    undersample_volume(&y, f).unwrap(),
                    undersample_volume(&combo, f).unwrap(),
                );
                for i in 0..x.grid().len() {
                    let want = ca * ux.data()[i] as f64 + cb * uy.data()[i] as f64;
                    prop_assert!((uc.data()[i] as f64 - want).abs() < 1e-5);
                }
            }
        }
    }
}
