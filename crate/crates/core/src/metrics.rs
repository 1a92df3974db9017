//! Image-quality metrics and uncertainty analyses.

use serde::{Deserialize, Serialize};

use crate::data_sim::NoiseLevel;
use crate::error::{Error, Result};
use crate::volume::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Absolute-residual threshold for the masked-uncertainty map.
    pub tau: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { tau: 0.17 }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau", "must be > 0"));
        }
        Ok(())
    }
}

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    Ok(())
}

/// `‖a − b‖_F / ‖a‖_F`, with `a` the reference.
pub fn rrmse(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a, b)?;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        num += (x as f64 - y as f64).powi(2);
        den += (x as f64).powi(2);
    }
    if den == 0.0 {
        return Err(Error::Domain("RRMSE reference has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a, b)?;
    if a.is_empty() {
        return Err(Error::invalid("images", "empty"));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10·log10(range² / MSE)` in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &[f32], b: &[f32], data_range: f64) -> Result<f64> {
    if !(data_range.is_finite() && data_range > 0.0) {
        return Err(Error::invalid("data_range", "must be > 0"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-region filtering of an `h×w` field.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// K1 = 0.01, K2 = 0.03, evaluated over the fully-overlapping windows.
pub fn ssim(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let [h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "image",
            format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    if !(data_range.is_finite() && data_range > 0.0) {
        return Err(Error::invalid("data_range", "must be > 0"));
    }
    let k = gaussian_window();
    let av: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&av, h, w, &k);
    let mu_b = filter_valid(&bv, h, w, &k);
    let aa = filter_valid(&prod(&av, &av), h, w, &k);
    let bb = filter_valid(&prod(&bv, &bv), h, w, &k);
    let ab = filter_valid(&prod(&av, &bv), h, w, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Pearson correlation coefficient.
pub fn correlate(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![xs.len()],
            actual: vec![ys.len()],
        });
    }
    if xs.len() < 3 {
        return Err(Error::invalid("scores", "need at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation scores"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain(
            "correlation of a zero-variance series".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `σ̂` where `|residual| > τ`, zero elsewhere.
pub fn masked_uncertainty(
    residual: &[f32],
    sigma: &[f32],
    cfg: &AnalysisConfig,
) -> Result<Vec<f32>> {
    same_len(residual, sigma)?;
    cfg.validate()?;
    Ok(residual
        .iter()
        .zip(sigma)
        .map(|(&r, &s)| if r.abs() > cfg.tau as f32 { s } else { 0.0 })
        .collect())
}

/// Per-noise-level inputs to [`beta_trend`].
#[derive(Clone, Debug, Default)]
pub struct TrendInput {
    pub beta_maps: Vec<Vec<f32>>,
    pub alpha_maps: Vec<Vec<f32>>,
    pub output_psnr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub level: NoiseLevel,
    pub mean_beta: f64,
    pub mean_alpha: f64,
    pub mean_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaTrend {
    pub rows: Vec<TrendRow>,
    /// Mean β̂ strictly decreases from each level to the next.
    pub beta_decreasing: bool,
}

fn mean_of_maps(maps: &[Vec<f32>]) -> f64 {
    let (sum, n) = maps
        .iter()
        .flatten()
        .fold((0.0f64, 0usize), |(s, n), &v| (s + v as f64, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mean β̂, α̂ and output PSNR per noise level, ordered by level.
pub fn beta_trend(per_level: &[(NoiseLevel, TrendInput)]) -> Result<BetaTrend> {
    if per_level.is_empty() {
        return Err(Error::invalid("per_level", "no noise levels given"));
    }
    let mut rows: Vec<TrendRow> = per_level
        .iter()
        .map(|(level, input)| {
            if input.beta_maps.iter().all(Vec::is_empty) {
                return Err(Error::invalid("beta_maps", format!("no maps for {level}")));
            }
            let finite: Vec<f64> = input
                .output_psnr
                .iter()
                .copied()
                .filter(|p| p.is_finite())
                .collect();
            Ok(TrendRow {
                level: *level,
                mean_beta: mean_of_maps(&input.beta_maps),
                mean_alpha: mean_of_maps(&input.alpha_maps),
                mean_psnr: if finite.is_empty() {
                    f64::INFINITY
                } else {
                    finite.iter().sum::<f64>() / finite.len() as f64
                },
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.level);
    let beta_decreasing = rows.windows(2).all(|w| w[1].mean_beta < w[0].mean_beta);
    Ok(BetaTrend {
        rows,
        beta_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(h, w, (0..h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn rrmse_examples() {
        assert_eq!(rrmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rrmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(rrmse(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        let a = random_image(7, 9, 1);
        let b = random_image(7, 9, 2);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..a.data().len() {
            let d = a.data()[i] as f64 - b.data()[i] as f64;
            num += d * d;
            den += (a.data()[i] as f64).powi(2);
        }
        assert!((rrmse(a.data(), b.data()).unwrap() - (num / den).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&[0.5; 4], &[0.5; 4], 1.0).unwrap(), f64::INFINITY);
        // MSE = 1/16 everywhere
        let got = psnr(&[0.5; 8], &[0.75; 8], 1.0).unwrap();
        assert!((got - 10.0 * 16f64.log10()).abs() < 1e-12);
        let a = random_image(5, 5, 3);
        let b = random_image(5, 5, 4);
        let base = psnr(a.data(), b.data(), 1.0).unwrap();
        let scale = |im: &Image| im.data().iter().map(|v| v * 3.0).collect::<Vec<_>>();
        let scaled = psnr(&scale(&a), &scale(&b), 3.0).unwrap();
        assert!((base - scaled).abs() < 1e-6);
        assert!(psnr(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = random_image(16, 20, 5);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let c = Image::new(12, 12, vec![0.4; 144]).unwrap();
        assert!((ssim(&c, &c.clone(), 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Image::zeros(10, 20), &Image::zeros(10, 20), 1.0).is_err());
    }

    /// Direct per-window evaluation of the same statistic.
    fn ssim_brute_force(a: &Image, b: &Image) -> f64 {
        let k = gaussian_window();
        let [h, w] = a.shape();
        let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = k[i] * k[j];
                        let p = a.at(y + i, x + j) as f64;
                        let q = b.at(y + i, x + j) as f64;
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    /// 24×24 gradient ramp versus the same ramp plus a deterministic pattern.
    fn fixture_pair() -> (Image, Image) {
        let (h, w) = (24, 24);
        let a: Vec<f32> = (0..h * w)
            .map(|i| ((i / w) as f32 * 0.03 + (i % w) as f32 * 0.01).min(1.0))
            .collect();
        let b: Vec<f32> = a
            .iter()
            .enumerate()
            .map(|(i, &v)| v + 0.1 * ((i as f32 * 0.37).sin()))
            .collect();
        (Image::new(h, w, a).unwrap(), Image::new(h, w, b).unwrap())
    }

    #[test]
    fn ssim_matches_reference_implementations() {
        let (a, b) = fixture_pair();
        let got = ssim(&a, &b, 1.0).unwrap();
        assert!((got - ssim_brute_force(&a, &b)).abs() < 1e-10);
        // skimage.metrics.structural_similarity(a, b, data_range=1,
        // gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
        // on the same float32 fixture.
        assert!((got - SKIMAGE_FIXTURE_SSIM).abs() < 1e-6, "{got}");
    }

    const SKIMAGE_FIXTURE_SSIM: f64 = 0.520_388_489_609_862_7;

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(15, 17, 7);
        let b = random_image(15, 17, 8);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn correlate_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((correlate(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((correlate(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(correlate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlate_matches_covariance_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random::<f64>()).collect();
        let n = 100.0;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let want = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((correlate(&x, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn masked_uncertainty_examples() {
        let cfg = AnalysisConfig::default();
        let sigma = [0.3, 0.1, 0.7];
        assert_eq!(
            masked_uncertainty(&[0.0; 3], &sigma, &cfg).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(
            masked_uncertainty(&[0.2; 3], &sigma, &cfg).unwrap(),
            sigma.to_vec()
        );
        assert_eq!(
            masked_uncertainty(&[-0.2, 0.17, 0.1], &sigma, &cfg).unwrap(),
            vec![0.3, 0.0, 0.0]
        );
        assert!(masked_uncertainty(&[0.0; 2], &sigma, &cfg).is_err());
    }

    #[test]
    fn beta_trend_examples() {
        let mk = |b: f32| TrendInput {
            beta_maps: vec![vec![b; 16], vec![b; 16]],
            alpha_maps: vec![vec![0.1; 16]],
            output_psnr: vec![20.0, 22.0],
        };
        let levels = [
            NoiseLevel::Nl0,
            NoiseLevel::Nl1,
            NoiseLevel::Nl2,
            NoiseLevel::Nl3,
        ];
        let flat: Vec<_> = levels.iter().map(|&l| (l, mk(1.5))).collect();
        let t = beta_trend(&flat).unwrap();
        assert!(t.rows.iter().all(|r| (r.mean_beta - 1.5).abs() < 1e-12));
        assert!(!t.beta_decreasing);
        let dec: Vec<_> = levels
            .iter()
            .zip([2.0, 1.5, 1.2, 1.0])
            .map(|(&l, b)| (l, mk(b)))
            .collect();
        let t = beta_trend(&dec).unwrap();
        assert!(t.beta_decreasing);
        assert!((t.rows[0].mean_psnr - 21.0).abs() < 1e-12);
        assert!(beta_trend(&[]).is_err());
    }

    #[test]
    fn beta_trend_matches_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let maps: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..50).map(|_| rng.random::<f32>() * 3.0).collect())
            .collect();
        let mut acc = 0.0f64;
        for m in &maps {
            for &v in m {
                acc += v as f64;
            }
        }
        let input = TrendInput {
            beta_maps: maps.clone(),
            alpha_maps: maps,
            output_psnr: vec![1.0],
        };
        let t = beta_trend(&[(NoiseLevel::Nl2, input)]).unwrap();
        assert!((t.rows[0].mean_beta - acc / 150.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rrmse_scale_equivariant(seed in 0u64..500, c in 0.01f32..100.0) {
            let a = random_image(4, 4, seed);
            let b = random_image(4, 4, seed + 1000);
            let sa: Vec<f32> = a.data().iter().map(|v| v * c).collect();
            let sb: Vec<f32> = b.data().iter().map(|v| v * c).collect();
            let r1 = rrmse(a.data(), b.data()).unwrap();
            let r2 = rrmse(&sa, &sb).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-6 * r1.max(1.0));
        }

        #[test]
        fn correlate_affine_invariant(seed in 0u64..500, s in 0.1f64..10.0, o in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.random()).collect();
            let xt: Vec<f64> = x.iter().map(|v| s * v + o).collect();
            prop_assert!((correlate(&x, &y).unwrap() - correlate(&xt, &y).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn masked_never_exceeds_sigma(seed in 0u64..500) {
            let r = random_image(6, 6, seed);
            let s = random_image(6, 6, seed + 77);
            let res: Vec<f32> = r.data().iter().map(|v| v - 0.5).collect();
            let m = masked_uncertainty(&res, s.data(), &AnalysisConfig::default()).unwrap();
            prop_assert!(m.iter().zip(s.data()).all(|(a, b)| a <= b));
        }
    }
}
