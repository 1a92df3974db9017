use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kspace::{undersample_kspace, SamplingMask};
use super::{NoiseDomain, NoiseLevel};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::seed::{derive_seed, rng_from_seed};
use crate::volume::{Image, Volume};

/// Calibrated PSNR targets are accepted within this band.
pub const CALIBRATION_TOLERANCE_DB: f64 = 0.25;
const BISECTION_STEPS: usize = 60;
/// Seed for the common random numbers shared by every bisection step.
const CALIBRATION_SEED: u64 = 0x6361_6c69_6272_6174;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelSpec {
    pub level: NoiseLevel,
    pub domain: NoiseDomain,
    pub sigma: f64,
    pub target_psnr_db: Option<f64>,
}

impl NoiseLevelSpec {
    pub fn clean(level: NoiseLevel, domain: NoiseDomain) -> Self {
        Self {
            level,
            domain,
            sigma: 0.0,
            target_psnr_db: None,
        }
    }
}

/// `img + η`, `η ~ N(0, sigma_i²)` i.i.d. Values are not clamped.
pub fn add_image_noise(img: &Image, sigma_i: f64, seed: u64) -> Result<Image> {
    if !(sigma_i.is_finite() && sigma_i >= 0.0) {
        return Err(Error::invalid("sigma_i", "must be finite and >= 0"));
    }
    if sigma_i == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma_i).expect("valid sigma");
    let mut rng = rng_from_seed(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)) as f32)
        .collect();
    Image::new(img.h(), img.w(), data)
}

/// Degrades one slice through the pipeline of `domain`.
///
/// `Kspace` runs the undersampling model and needs a mask; `Image` adds
/// Gaussian noise and ignores it.
pub fn corrupt_slice(
    img: &Image,
    domain: NoiseDomain,
    sigma: f64,
    mask: Option<&SamplingMask>,
    seed: u64,
) -> Result<Image> {
    match domain {
        NoiseDomain::Kspace => {
            let mask = mask.ok_or_else(|| {
                Error::invalid("mask", "k-space corruption needs a sampling mask")
            })?;
            undersample_kspace(img, mask, sigma, seed)
        }
        NoiseDomain::Image => add_image_noise(img, sigma, seed),
    }
}

/// Mean slice PSNR of the corrupted set against its clean reference, using
/// a data range of 1.
pub fn mean_corrupted_psnr(
    clean_set: &[Volume],
    domain: NoiseDomain,
    sigma: f64,
    mask: Option<&SamplingMask>,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (v, vol) in clean_set.iter().enumerate() {
        for d in 0..vol.depth() {
            let clean = vol.slice(d);
            let s = derive_seed(seed, "calibrate", (v * vol.depth() + d) as u64);
            let lq = corrupt_slice(&clean, domain, sigma, mask, s)?;
            let p = psnr(clean.data(), lq.data(), 1.0)?;
            if !p.is_finite() {
                // Identical slices carry no information about sigma.
                continue;
            }
            total += p;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(total / count as f64)
}

/// Bisects `sigma` until the mean corrupted-vs-clean PSNR over `clean_set`
/// matches `target_psnr_db`.
pub fn calibrate_noise(
    clean_set: &[Volume],
    level: NoiseLevel,
    target_psnr_db: f64,
    domain: NoiseDomain,
    mask: Option<&SamplingMask>,
) -> Result<NoiseLevelSpec> {
    if clean_set.is_empty() {
        return Err(Error::invalid(
            "clean_set",
            "must contain at least one volume",
        ));
    }
    if !target_psnr_db.is_finite() {
        return Err(Error::invalid("target_psnr_db", "must be finite"));
    }
    let eval = |sigma: f64| mean_corrupted_psnr(clean_set, domain, sigma, mask, CALIBRATION_SEED);
    let spec = |sigma| NoiseLevelSpec {
        level,
        domain,
        sigma,
        target_psnr_db: Some(target_psnr_db),
    };

    let p0 = eval(0.0)?;
    if (p0 - target_psnr_db).abs() <= CALIBRATION_TOLERANCE_DB {
        return Ok(spec(0.0));
    }
    if p0 < target_psnr_db {
        return Err(Error::NotBracketed {
            target_db: target_psnr_db,
            low_db: f64::NEG_INFINITY,
            high_db: p0,
        });
    }

    let hw = clean_set[0].shape()[1] * clean_set[0].shape()[2];
    let mut hi = match domain {
        NoiseDomain::Kspace => 0.01 * (hw as f64).sqrt(),
        NoiseDomain::Image => 0.01,
    };
    let mut p_hi = eval(hi)?;
    let mut grow = 0;
    while p_hi > target_psnr_db {
        hi *= 2.0;
        p_hi = eval(hi)?;
        grow += 1;
        if grow > 40 {
            return Err(Error::NotBracketed {
                target_db: target_psnr_db,
                low_db: p_hi,
                high_db: p0,
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let p = eval(mid)?;
        if (p - target_psnr_db).abs() < 0.01 {
            return Ok(spec(mid));
        }
        if p > target_psnr_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(spec(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_sim::{make_mask, make_phantom};

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(add_image_noise(&img, 0.0, 5).unwrap(), img);
    }

    #[test]
    fn empirical_std_within_one_percent() {
        let img = Image::zeros(1000, 1000);
        let y = add_image_noise(&img, 0.1, 3).unwrap();
        let n = y.data().len() as f64;
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = y
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!((var.sqrt() / 0.1 - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn seeds_differ_and_values_unclamped() {
        let img = Image::new(4, 4, vec![1.0; 16]).unwrap();
        let a = add_image_noise(&img, 0.5, 1).unwrap();
        assert_ne!(a, add_image_noise(&img, 0.5, 2).unwrap());
        assert!(a.data().iter().any(|&v| v > 1.0));
    }

    fn corpus() -> Vec<Volume> {
        (0..2).map(|s| make_phantom(s, [4, 32, 32]).t1).collect()
    }

    #[test]
    fn calibration_is_monotone_and_reproducible() {
        let vols = corpus();
        let s21 = calibrate_noise(&vols, NoiseLevel::Nl1, 21.0, NoiseDomain::Image, None).unwrap();
        let s14 = calibrate_noise(&vols, NoiseLevel::Nl3, 14.0, NoiseDomain::Image, None).unwrap();
        assert!(s14.sigma > s21.sigma);
        for s in [s21, s14] {
            let p = mean_corrupted_psnr(&vols, NoiseDomain::Image, s.sigma, None, 99).unwrap();
            assert!((p - s.target_psnr_db.unwrap()).abs() < 0.5, "{p}");
        }
    }

    #[test]
    fn target_at_clean_psnr_gives_zero_sigma() {
        let vols = corpus();
        let mask = make_mask([32, 32], 0.3, 0).unwrap();
        let p0 = mean_corrupted_psnr(&vols, NoiseDomain::Kspace, 0.0, Some(&mask), 0).unwrap();
        let s =
            calibrate_noise(&vols, NoiseLevel::Nl0, p0, NoiseDomain::Kspace, Some(&mask)).unwrap();
        assert_eq!(s.sigma, 0.0);
    }

    #[test]
    fn unreachable_target_is_rejected() {
        let vols = corpus();
        let mask = make_mask([32, 32], 0.3, 0).unwrap();
        let p0 = mean_corrupted_psnr(&vols, NoiseDomain::Kspace, 0.0, Some(&mask), 0).unwrap();
        let err = calibrate_noise(
            &vols,
            NoiseLevel::Nl0,
            p0 + 5.0,
            NoiseDomain::Kspace,
            Some(&mask),
        );
        assert!(matches!(err, Err(Error::NotBracketed { .. })));
    }
}
