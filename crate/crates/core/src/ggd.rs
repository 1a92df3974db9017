//! Generalized Gaussian distribution primitives.
//!
//! Density `β / (2αΓ(1/β)) · exp(−(|ε − μ|/α)^β)`. β = 2 is a Gaussian with
//! variance α²/2, β = 1 a Laplace with variance 2α². These functions are the
//! exact closed forms; the stability clamps used during training live in
//! [`crate::losses`].

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::special::{digamma, ln_gamma};

/// Largest shape accepted by the closed-form layer.
pub const MAX_BETA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgdParams {
    mu: f64,
    alpha: f64,
    beta: f64,
}

impl GgdParams {
    pub fn new(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::NonFinite("GGD location"));
        }
        check_scale_shape(alpha, beta)?;
        Ok(Self { mu, alpha, beta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

fn check_scale_shape(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(
            "alpha",
            format!("must be finite and > 0, got {alpha}"),
        ));
    }
    if !(beta.is_finite() && beta > 0.0 && beta <= MAX_BETA) {
        return Err(Error::invalid(
            "beta",
            format!("must lie in (0, {MAX_BETA}], got {beta}"),
        ));
    }
    Ok(())
}

pub fn ggd_pdf(eps: f64, params: &GgdParams) -> Result<f64> {
    if !eps.is_finite() {
        return Err(Error::NonFinite("GGD density argument"));
    }
    let GgdParams { mu, alpha, beta } = *params;
    let log_norm = (beta / (2.0 * alpha)).ln() - ln_gamma(1.0 / beta);
    Ok((log_norm - ((eps - mu).abs() / alpha).powf(beta)).exp())
}

/// Per-pixel negative log-likelihood `(|x̂−x|/α)^β − log(β/(2α)) + log Γ(1/β)`.
pub fn nll_term(x_hat: f64, x: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_scale_shape(alpha, beta)?;
    if !(x_hat.is_finite() && x.is_finite()) {
        return Err(Error::NonFinite("nll_term inputs"));
    }
    Ok(nll_unchecked((x_hat - x).abs(), alpha, beta))
}

#[inline]
pub(crate) fn nll_unchecked(abs_eps: f64, alpha: f64, beta: f64) -> f64 {
    (abs_eps / alpha).powf(beta) - (beta / (2.0 * alpha)).ln() + ln_gamma(1.0 / beta)
}

/// Partial derivatives of [`nll_term`] with respect to `(x̂, α, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllGrad {
    pub d_xhat: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

pub fn nll_grad(x_hat: f64, x: f64, alpha: f64, beta: f64) -> Result<NllGrad> {
    check_scale_shape(alpha, beta)?;
    if !(x_hat.is_finite() && x.is_finite()) {
        return Err(Error::NonFinite("nll_grad inputs"));
    }
    let eps = x_hat - x;
    if eps == 0.0 && beta < 1.0 {
        return Err(Error::Domain(format!(
            "gradient is singular at zero residual for beta = {beta} < 1"
        )));
    }
    Ok(nll_grad_unchecked(eps, alpha, beta))
}

#[inline]
pub(crate) fn nll_grad_unchecked(eps: f64, alpha: f64, beta: f64) -> NllGrad {
    let ratio = eps.abs() / alpha;
    let (pow_b, pow_bm1, log_ratio) = if ratio > 0.0 {
        (ratio.powf(beta), ratio.powf(beta - 1.0), ratio.ln())
    } else {
        (0.0, 0.0, 0.0)
    };
    let sign = if eps > 0.0 {
        1.0
    } else if eps < 0.0 {
        -1.0
    } else {
        0.0
    };
    let inv_beta = 1.0 / beta;
    NllGrad {
        d_xhat: beta / alpha * sign * pow_bm1,
        d_alpha: (1.0 - beta * pow_b) / alpha,
        d_beta: pow_b * log_ratio - inv_beta - digamma(inv_beta) * inv_beta * inv_beta,
    }
}

/// Variance `α²Γ(3/β)/Γ(1/β)`.
pub fn ggd_variance(alpha: f64, beta: f64) -> Result<f64> {
    check_scale_shape(alpha, beta)?;
    Ok(variance_unchecked(alpha, beta))
}

#[inline]
pub(crate) fn variance_unchecked(alpha: f64, beta: f64) -> f64 {
    alpha * alpha * (ln_gamma(3.0 / beta) - ln_gamma(1.0 / beta)).exp()
}

/// Draws `n` i.i.d. samples via the Gamma-power transform:
/// `G ~ Gamma(1/β, 1)`, `s` a fair random sign, `μ + s·α·G^(1/β)`.
pub fn ggd_sample(params: &GgdParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let GgdParams { mu, alpha, beta } = *params;
    let gamma = Gamma::new(1.0 / beta, 1.0)
        .map_err(|e| Error::invalid("beta", format!("gamma sampler: {e}")))?;
    let inv_beta = 1.0 / beta;
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            let g: f64 = gamma.sample(&mut rng);
            let magnitude = alpha * g.powf(inv_beta);
            if rng.random::<bool>() {
                mu + magnitude
            } else {
                mu - magnitude
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gaussian_nll(x_hat: f64, x: f64, sigma: f64) -> f64 {
        0.5 * ((x_hat - x) / sigma).powi(2) + (sigma * (2.0 * PI).sqrt()).ln()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, m2, m4 / (m2 * m2))
    }

    #[test]
    fn pdf_special_cases() {
        let laplace = GgdParams::new(0.0, 1.0, 1.0).unwrap();
        assert!((ggd_pdf(0.0, &laplace).unwrap() - 0.5).abs() < 1e-15);
        let gauss = GgdParams::new(0.0, 1.0, 2.0).unwrap();
        assert!((ggd_pdf(0.0, &gauss).unwrap() - 1.0 / PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pdf_matches_high_precision_value() {
        // mpmath, 40 digits; the same evaluation integrates to 1 by quadrature.
        let p = GgdParams::new(0.0, 0.7, 1.5).unwrap();
        let got = ggd_pdf(1.3, &p).unwrap();
        assert!((got - 0.062_975_059_655_164_547).abs() < 1e-10);
    }

    #[test]
    fn pdf_integrates_to_one() {
        for &beta in &[0.8, 1.0, 1.5, 2.0, 4.0, 8.0] {
            let p = GgdParams::new(0.3, 0.9, beta).unwrap();
            // Split at the mode where the density has a kink.
            let f = |e: f64| ggd_pdf(e, &p).unwrap();
            let lo = simpson(f, 0.3 - 50.0 * 0.9, 0.3, 400_000);
            let hi = simpson(f, 0.3, 0.3 + 50.0 * 0.9, 400_000);
            assert!((lo + hi - 1.0).abs() < 1e-8, "beta = {beta}: {}", lo + hi);
        }
    }

    #[test]
    fn pdf_rejects_non_finite() {
        let p = GgdParams::new(0.0, 1.0, 2.0).unwrap();
        assert!(ggd_pdf(f64::NAN, &p).is_err());
        assert!(ggd_pdf(f64::INFINITY, &p).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(GgdParams::new(0.0, 0.0, 1.0).is_err());
        assert!(GgdParams::new(0.0, 1.0, 0.0).is_err());
        assert!(GgdParams::new(0.0, 1.0, 8.5).is_err());
        assert!(GgdParams::new(0.0, -1.0, 2.0).is_err());
        assert!(GgdParams::new(0.0, 1.0, 8.0).is_ok());
    }

    #[test]
    fn nll_term_examples() {
        assert!((nll_term(0.4, 0.4, 1.0, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let want = 1.572_364_942_924_700_087;
        assert!((nll_term(1.0, 0.0, 1.0, 2.0).unwrap() - want).abs() < 1e-14);
        assert!(nll_term(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(nll_term(0.0, 0.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn nll_grad_examples() {
        let g = nll_grad(0.0, 0.0, 1.0, 2.0).unwrap();
        assert_eq!(g.d_xhat, 0.0);
        let g = nll_grad(1.0, 0.0, 1.0, 2.0).unwrap();
        assert!((g.d_xhat - 2.0).abs() < 1e-15);
        assert!(matches!(
            nll_grad(0.5, 0.5, 1.0, 0.7),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn variance_special_cases() {
        assert!((ggd_variance(1.0, 2.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((ggd_variance(1.0, 1.0).unwrap() - 2.0).abs() < 1e-13);
        assert!((ggd_variance(0.5, 1.5).unwrap() - 0.184_622_027_905_412_08).abs() < 1e-13);
        assert!(ggd_variance(0.0, 1.0).is_err());
    }

    #[test]
    fn sampler_degenerate_scale() {
        let p = GgdParams::new(5.0, 1e-9, 2.0).unwrap();
        let xs = ggd_sample(&p, 4, 11).unwrap();
        assert!(xs.iter().all(|x| (x - 5.0).abs() < 1e-6));
        assert!(ggd_sample(&p, 0, 11).is_err());
    }

    #[test]
    fn sampler_is_seeded() {
        let p = GgdParams::new(0.0, 1.0, 1.3).unwrap();
        assert_eq!(
            ggd_sample(&p, 64, 3).unwrap(),
            ggd_sample(&p, 64, 3).unwrap()
        );
        assert_ne!(
            ggd_sample(&p, 64, 3).unwrap(),
            ggd_sample(&p, 64, 4).unwrap()
        );
    }

    #[test]
    fn sampler_gaussian_kurtosis_and_laplace_variance() {
        let gauss = GgdParams::new(0.0, 1.0, 2.0).unwrap();
        let (_, _, kurt) = moments(&ggd_sample(&gauss, 1_000_000, 1).unwrap());
        assert!((kurt - 3.0).abs() < 0.05, "kurtosis {kurt}");

        let alpha = 0.8;
        let laplace = GgdParams::new(0.0, alpha, 1.0).unwrap();
        let (_, var, _) = moments(&ggd_sample(&laplace, 1_000_000, 2).unwrap());
        assert!(
            (var / (2.0 * alpha * alpha) - 1.0).abs() < 0.01,
            "variance {var}"
        );
    }

    #[test]
    fn sampler_matches_variance_formula() {
        let p = GgdParams::new(0.0, 0.5, 1.5).unwrap();
        let (_, var, _) = moments(&ggd_sample(&p, 1_000_000, 5).unwrap());
        let want = ggd_variance(0.5, 1.5).unwrap();
        assert!((var / want - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn gaussian_reduction(x_hat in -5.0..5.0f64, x in -5.0..5.0f64, sigma in 0.01..10.0f64) {
            let got = nll_term(x_hat, x, sigma * 2f64.sqrt(), 2.0).unwrap();
            let want = gaussian_nll(x_hat, x, sigma);
            prop_assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn laplace_reduction(x_hat in -5.0..5.0f64, x in -5.0..5.0f64, alpha in 0.01..10.0f64) {
            let got = nll_term(x_hat, x, alpha, 1.0).unwrap();
            let want = (x_hat - x).abs() / alpha + (2.0 * alpha).ln();
            prop_assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn gradient_matches_central_differences(
            eps in 0.1..2.0f64, alpha in 0.5..2.0f64, beta in 0.8..4.0f64, neg in any::<bool>()
        ) {
            let eps = if neg { -eps } else { eps };
            let h = 1e-6;
            let f = |e: f64, a: f64, b: f64| nll_term(e, 0.0, a, b).unwrap();
            let g = nll_grad(eps, 0.0, alpha, beta).unwrap();
            let fd = [
                (f(eps + h, alpha, beta) - f(eps - h, alpha, beta)) / (2.0 * h),
                (f(eps, alpha + h, beta) - f(eps, alpha - h, beta)) / (2.0 * h),
                (f(eps, alpha, beta + h) - f(eps, alpha, beta - h)) / (2.0 * h),
            ];
            for (an, fd) in [g.d_xhat, g.d_alpha, g.d_beta].into_iter().zip(fd) {
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
                prop_assert!(rel <= 1e-5, "analytic {} vs fd {}", an, fd);
            }
        }
    }
}
