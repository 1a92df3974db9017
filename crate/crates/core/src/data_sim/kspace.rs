//! Cartesian k-space undersampling.
//!
//! Masks are stored in centred (fft-shifted) layout: row `H/2` holds the
//! zero phase-encode frequency.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::volume::Image;

/// Fraction of rows, around the centre of k-space, that is always acquired.
pub const CENTER_FRACTION: f64 = 0.08;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    h: usize,
    w: usize,
    grid: Vec<u8>,
}

impl SamplingMask {
    pub fn from_grid(h: usize, w: usize, grid: Vec<u8>) -> Result<Self> {
        if grid.len() != h * w {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w],
                actual: vec![grid.len()],
            });
        }
        if grid.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask", "entries must be 0 or 1"));
        }
        Ok(Self { h, w, grid })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.h, self.w]
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.grid.iter().filter(|&&v| v == 1).count() as f64 / self.grid.len() as f64
    }

    /// Whether unshifted frequency `(ky, kx)` is acquired.
    #[inline]
    fn sampled(&self, ky: usize, kx: usize) -> bool {
        let r = (ky + self.h / 2) % self.h;
        let c = (kx + self.w / 2) % self.w;
        self.grid[r * self.w + c] == 1
    }
}

fn central_rows(h: usize) -> usize {
    ((CENTER_FRACTION * h as f64).round() as usize).clamp(1, h)
}

/// Fully sampled central band plus uniformly drawn extra rows up to
/// `coverage` of all rows.
pub fn make_mask(shape: [usize; 2], coverage: f64, seed: u64) -> Result<SamplingMask> {
    let [h, w] = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("shape", "mask must be non-empty"));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::invalid(
            "coverage",
            format!("must lie in (0, 1], got {coverage}"),
        ));
    }
    let n_center = central_rows(h);
    let min_cov = n_center as f64 / h as f64;
    if coverage < min_cov {
        return Err(Error::invalid(
            "coverage",
            format!("{coverage} is below the central-band fraction {min_cov:.4}"),
        ));
    }
    let n_rows = ((coverage * h as f64).round() as usize).clamp(n_center, h);
    let start = h / 2 - n_center / 2;
    let mut rows = vec![false; h];
    rows[start..start + n_center].fill(true);
    let mut rest: Vec<usize> = (0..h).filter(|&r| !rows[r]).collect();
    rest.shuffle(&mut rng_from_seed(seed));
    for &r in rest.iter().take(n_rows - n_center) {
        rows[r] = true;
    }
    let grid = rows
        .iter()
        .flat_map(|&on| std::iter::repeat_n(on as u8, w))
        .collect();
    Ok(SamplingMask { h, w, grid })
}

fn fft_2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    if inverse {
        let s = 1.0 / (h * w) as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }
}

/// Unnormalized forward 2D DFT.
pub fn fft2(img: &Image) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = img
        .data()
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect();
    fft_2d(&mut buf, img.h(), img.w(), false);
    buf
}

/// Inverse 2D DFT with `1/(H·W)` normalization.
pub fn ifft2(spectrum: &mut [Complex64], h: usize, w: usize) {
    fft_2d(spectrum, h, w, true);
}

/// `|F⁻¹((F(x) + η) ⊙ H)|` with `η` i.i.d. complex Gaussian whose real and
/// imaginary parts each have standard deviation `sigma_k`.
pub fn undersample_kspace(
    hq: &Image,
    mask: &SamplingMask,
    sigma_k: f64,
    seed: u64,
) -> Result<Image> {
    if hq.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: mask.shape().to_vec(),
            actual: hq.shape().to_vec(),
        });
    }
    if !(sigma_k.is_finite() && sigma_k >= 0.0) {
        return Err(Error::invalid("sigma_k", "must be finite and >= 0"));
    }
    let [h, w] = hq.shape();
    let mut k = fft2(hq);
    if sigma_k > 0.0 {
        let normal = Normal::new(0.0, sigma_k).expect("valid sigma");
        let mut rng = rng_from_seed(seed);
        for v in k.iter_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }
    for ky in 0..h {
        for kx in 0..w {
            if !mask.sampled(ky, kx) {
                k[ky * w + kx] = Complex64::default();
            }
        }
    }
    ifft2(&mut k, h, w);
    Image::new(h, w, k.iter().map(|v| v.norm() as f32).collect())
}
