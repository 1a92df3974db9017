//! Monte Carlo dropout prediction and 2.5D slab merging.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_sim::{extract_slabs, SlabBatch};
use crate::error::{Error, Result};
use crate::ggd::variance_unchecked;
use crate::io::{write_pgm, write_volume, ManifestExtras};
use crate::networks::Generator;
use crate::nn::Tensor;
use crate::seed::rng_from_seed;
use crate::volume::Volume;

/// How the aleatoric variance is formed from the `R` passes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AleatoricMode {
    /// Variance formula applied to the pass-averaged `α̂`, `β̂`.
    #[default]
    MeanParams,
    /// Diagnostic: average of the per-pass variances.
    MeanOfPassVariances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub mc_passes: usize,
    pub dropout_active: bool,
    pub seed: u64,
    pub aleatoric: AleatoricMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mc_passes: 50,
            dropout_active: true,
            seed: 0,
            aleatoric: AleatoricMode::MeanParams,
        }
    }
}

impl InferenceConfig {
    /// One pass with dropout off.
    pub fn deterministic() -> Self {
        Self {
            mc_passes: 1,
            dropout_active: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_passes == 0 {
            return Err(Error::invalid("mc_passes", "need at least one pass"));
        }
        Ok(())
    }
}

/// Standard deviations, all the same shape as the prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMaps {
    pub sigma_aleatoric: Vec<f64>,
    pub sigma_epistemic: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl UncertaintyMaps {
    pub fn from_variances(aleatoric: &[f64], epistemic: &[f64]) -> Self {
        Self {
            sigma_aleatoric: aleatoric.iter().map(|v| v.sqrt()).collect(),
            sigma_epistemic: epistemic.iter().map(|v| v.sqrt()).collect(),
            sigma: aleatoric
                .iter()
                .zip(epistemic)
                .map(|(a, e)| (a + e).sqrt())
                .collect(),
        }
    }
}

/// Pass-averaged parameter maps, `N×C×H×W` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct McPrediction {
    pub shape: [usize; 4],
    pub x_hat: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub var_aleatoric: Vec<f64>,
    pub var_epistemic: Vec<f64>,
}

impl McPrediction {
    pub fn uncertainty(&self) -> UncertaintyMaps {
        UncertaintyMaps::from_variances(&self.var_aleatoric, &self.var_epistemic)
    }
}

/// Runs `R` forward passes, pass `r` drawing its dropout masks from seed
/// `seed + r`.
pub fn mc_predict(gen: &Generator, input: &Tensor, cfg: &InferenceConfig) -> Result<McPrediction> {
    cfg.validate()?;
    let r_passes = cfg.mc_passes;
    let n = input.len();
    let mut passes: Vec<Vec<f32>> = Vec::with_capacity(r_passes);
    let mut sum_a = vec![0.0f64; n];
    let mut sum_b = vec![0.0f64; n];
    let mut sum_var = vec![0.0f64; n];
    let mut shape = [0; 4];
    for r in 0..r_passes {
        let mut rng = rng_from_seed(cfg.seed.wrapping_add(r as u64));
        let maps = gen.predict(input, cfg.dropout_active.then_some(&mut rng))?;
        shape = maps.shape();
        for (i, (&a, &b)) in maps.alpha.data().iter().zip(maps.beta.data()).enumerate() {
            sum_a[i] += a as f64;
            sum_b[i] += b as f64;
            if cfg.aleatoric == AleatoricMode::MeanOfPassVariances {
                sum_var[i] += variance_unchecked(a as f64, b as f64);
            }
        }
        passes.push(maps.x_hat.into_vec());
    }
    let inv_r = 1.0 / r_passes as f64;
    let mut x_hat = vec![0.0f64; n];
    for p in &passes {
        for (m, &v) in x_hat.iter_mut().zip(p) {
            *m += v as f64;
        }
    }
    x_hat.iter_mut().for_each(|m| *m *= inv_r);
    let mut var_epistemic = vec![0.0f64; n];
    for p in &passes {
        for ((acc, &m), &v) in var_epistemic.iter_mut().zip(&x_hat).zip(p) {
            *acc += (v as f64 - m).powi(2);
        }
    }
    var_epistemic.iter_mut().for_each(|v| *v *= inv_r);
    let alpha: Vec<f64> = sum_a.iter().map(|s| s * inv_r).collect();
    let beta: Vec<f64> = sum_b.iter().map(|s| s * inv_r).collect();
    let var_aleatoric = match cfg.aleatoric {
        AleatoricMode::MeanParams => alpha
            .iter()
            .zip(&beta)
            .map(|(&a, &b)| variance_unchecked(a, b))
            .collect(),
        AleatoricMode::MeanOfPassVariances => sum_var.iter().map(|s| s * inv_r).collect(),
    };
    Ok(McPrediction {
        shape,
        x_hat,
        alpha,
        beta,
        var_aleatoric,
        var_epistemic,
    })
}

/// One slab's output: `span.1 - span.0` slices of `H×W` values.
#[derive(Clone, Copy, Debug)]
pub struct SlabOutput<'a> {
    pub span: (usize, usize),
    pub data: &'a [f64],
}

/// Moving-window average: each voxel is the mean of every slab covering it.
pub fn merge_slabs(parts: &[SlabOutput<'_>], shape: [usize; 3]) -> Result<Vec<f64>> {
    let [d, h, w] = shape;
    let plane = h * w;
    let mut acc = vec![0.0f64; d * plane];
    let mut count = vec![0u32; d];
    for p in parts {
        let (s, e) = p.span;
        if s >= e || e > d {
            return Err(Error::invalid(
                "span",
                format!("({s}, {e}) outside depth {d}"),
            ));
        }
        if p.data.len() != (e - s) * plane {
            return Err(Error::ShapeMismatch {
                expected: vec![e - s, h, w],
                actual: vec![p.data.len()],
            });
        }
        for (a, v) in acc[s * plane..e * plane].iter_mut().zip(p.data) {
            *a += v;
        }
        count[s..e].iter_mut().for_each(|c| *c += 1);
    }
    let gaps: Vec<usize> = (0..d).filter(|&z| count[z] == 0).collect();
    if !gaps.is_empty() {
        return Err(Error::UncoveredSlices(gaps));
    }
    for (z, c) in count.iter().enumerate() {
        let k = *c as f64;
        acc[z * plane..(z + 1) * plane]
            .iter_mut()
            .for_each(|a| *a /= k);
    }
    Ok(acc)
}

/// Merged per-volume outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumePrediction {
    pub x_hat: Volume,
    pub alpha: Volume,
    pub beta: Volume,
    pub sigma_aleatoric: Volume,
    pub sigma_epistemic: Volume,
    pub sigma: Volume,
}

impl VolumePrediction {
    pub fn fields(&self) -> [(&'static str, &Volume); 6] {
        [
            ("prediction", &self.x_hat),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("sigma_aleatoric", &self.sigma_aleatoric),
            ("sigma_epistemic", &self.sigma_epistemic),
            ("sigma", &self.sigma),
        ]
    }
}

/// Stacks slabs into an `N×C×H×W` batch.
pub fn slab_tensor(slabs: &[SlabBatch], h: usize, w: usize) -> Result<Tensor> {
    let c = slabs
        .first()
        .map(|s| s.span.1 - s.span.0)
        .ok_or_else(|| Error::invalid("slabs", "empty slab list"))?;
    let data: Vec<f32> = slabs.iter().flat_map(|s| s.data.iter().copied()).collect();
    Tensor::from_vec([slabs.len(), c, h, w], data)
}

/// Predicts every slab of `input` (stride 1) and merges the results.
///
/// Variances are merged and square-rooted afterwards, so the merged maps
/// keep `σ̂² = σ̂²_aleatoric + σ̂²_epistemic`.
pub fn predict_volume(
    gen: &Generator,
    input: &Volume,
    cfg: &InferenceConfig,
) -> Result<VolumePrediction> {
    let [d, h, w] = input.shape();
    let c = gen.config().in_channels;
    let slabs = extract_slabs(input, c, 1)?;
    let batch = slab_tensor(&slabs, h, w)?;
    let mc = mc_predict(gen, &batch, cfg)?;
    let per_slab = c * h * w;
    let merge = |field: &[f64]| -> Result<Vec<f64>> {
        let parts: Vec<SlabOutput<'_>> = slabs
            .iter()
            .enumerate()
            .map(|(k, s)| SlabOutput {
                span: s.span,
                data: &field[k * per_slab..(k + 1) * per_slab],
            })
            .collect();
        merge_slabs(&parts, [d, h, w])
    };
    let va = merge(&mc.var_aleatoric)?;
    let ve = merge(&mc.var_epistemic)?;
    let sig = UncertaintyMaps::from_variances(&va, &ve);
    let vol = |data: &[f64]| {
        Volume::new(
            [d, h, w],
            input.spacing(),
            data.iter().map(|&v| v as f32).collect(),
        )
    };
    Ok(VolumePrediction {
        x_hat: vol(&merge(&mc.x_hat)?)?,
        alpha: vol(&merge(&mc.alpha)?)?,
        beta: vol(&merge(&mc.beta)?)?,
        sigma_aleatoric: vol(&sig.sigma_aleatoric)?,
        sigma_epistemic: vol(&sig.sigma_epistemic)?,
        sigma: vol(&sig.sigma)?,
    })
}

/// Writes the six maps as raw volumes, plus per-slice PGM previews of the
/// prediction and `σ̂` when `previews` is set.
pub fn write_bundle(dir: &Path, pred: &VolumePrediction, previews: bool) -> Result<()> {
    for (name, vol) in pred.fields() {
        write_volume(&dir.join(name), vol, ManifestExtras::default())?;
    }
    if previews {
        let pdir = dir.join("previews");
        std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let smax = pred.sigma.data().iter().fold(0.0f32, |m, &v| m.max(v));
        for z in 0..pred.x_hat.depth() {
            write_pgm(
                &pdir.join(format!("prediction_{z:03}.pgm")),
                &pred.x_hat.slice(z),
                0.0,
                1.0,
            )?;
            write_pgm(
                &pdir.join(format!("sigma_{z:03}.pgm")),
                &pred.sigma.slice(z),
                0.0,
                smax,
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::GeneratorConfig;
    use crate::nn::normal_tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_gen(dropout: f64) -> Generator {
        let cfg = GeneratorConfig {
            base_width: 4,
            dropout_rate: dropout,
            ..GeneratorConfig::default()
        };
        Generator::new(cfg, 5).unwrap()
    }

    fn input() -> Tensor {
        normal_tensor([2, 3, 8, 8], 0.5, 0.3, &mut ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn no_dropout_means_no_epistemic_variance() {
        let cfg = InferenceConfig {
            mc_passes: 4,
            ..InferenceConfig::default()
        };
        let p = mc_predict(&small_gen(0.0), &input(), &cfg).unwrap();
        assert!(p.var_epistemic.iter().all(|&v| v == 0.0));
        assert_eq!(p.uncertainty().sigma, p.uncertainty().sigma_aleatoric);
        let p1 = mc_predict(
            &small_gen(0.2),
            &input(),
            &InferenceConfig {
                mc_passes: 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(p1.var_epistemic.iter().all(|&v| v == 0.0));
        assert!(mc_predict(
            &small_gen(0.2),
            &input(),
            &InferenceConfig {
                mc_passes: 0,
                ..cfg
            }
        )
        .is_err());
    }

    #[test]
    fn quadrature_sum() {
        let u = UncertaintyMaps::from_variances(&[9.0], &[16.0]);
        assert_eq!(u.sigma, vec![5.0]);
    }

    #[test]
    fn matches_independent_pass_loop() {
        let gen = small_gen(0.3);
        let x = input();
        let cfg = InferenceConfig {
            mc_passes: 6,
            seed: 40,
            ..InferenceConfig::default()
        };
        let got = mc_predict(&gen, &x, &cfg).unwrap();
        let runs: Vec<_> = (0..6)
            .map(|r| {
                let mut rng = rng_from_seed(40 + r);
                gen.predict(&x, Some(&mut rng)).unwrap()
            })
            .collect();
        for i in 0..got.x_hat.len() {
            let xs: Vec<f64> = runs.iter().map(|m| m.x_hat.data()[i] as f64).collect();
            let mean = xs.iter().sum::<f64>() / 6.0;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            let a = runs.iter().map(|m| m.alpha.data()[i] as f64).sum::<f64>() / 6.0;
            let b = runs.iter().map(|m| m.beta.data()[i] as f64).sum::<f64>() / 6.0;
            let va = a * a * crate::special::gamma(3.0 / b) / crate::special::gamma(1.0 / b);
            assert!((got.x_hat[i] - mean).abs() < 1e-10);
            assert!((got.var_epistemic[i] - var).abs() < 1e-10);
            assert!((got.alpha[i] - a).abs() < 1e-10);
            assert!((got.beta[i] - b).abs() < 1e-10);
            assert!((got.var_aleatoric[i] - va).abs() < 1e-10 * va.max(1.0));
        }
        assert!(got.var_epistemic.iter().any(|&v| v > 0.0));
        assert_eq!(got, mc_predict(&gen, &x, &cfg).unwrap());
    }

    #[test]
    fn aleatoric_is_seed_invariant_without_dropout() {
        let gen = small_gen(0.0);
        let a = mc_predict(
            &gen,
            &input(),
            &InferenceConfig {
                mc_passes: 2,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let b = mc_predict(
            &gen,
            &input(),
            &InferenceConfig {
                mc_passes: 2,
                seed: 9,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.var_aleatoric, b.var_aleatoric);
    }

    #[test]
    fn diagnostic_mode_differs_only_in_aleatoric() {
        let gen = small_gen(0.3);
        let cfg = InferenceConfig {
            mc_passes: 3,
            ..InferenceConfig::default()
        };
        let a = mc_predict(&gen, &input(), &cfg).unwrap();
        let b = mc_predict(
            &gen,
            &input(),
            &InferenceConfig {
                aleatoric: AleatoricMode::MeanOfPassVariances,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.var_epistemic, b.var_epistemic);
        assert_ne!(a.var_aleatoric, b.var_aleatoric);
    }

    #[test]
    fn merge_examples() {
        let whole: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let one = merge_slabs(
            &[SlabOutput {
                span: (0, 3),
                data: &whole,
            }],
            [3, 2, 2],
        )
        .unwrap();
        assert_eq!(one, whole);

        let zeros = vec![0.0; 8];
        let ones = vec![1.0; 8];
        let m = merge_slabs(
            &[
                SlabOutput {
                    span: (0, 2),
                    data: &zeros,
                },
                SlabOutput {
                    span: (1, 3),
                    data: &ones,
                },
            ],
            [3, 2, 2],
        )
        .unwrap();
        assert_eq!(&m[0..4], &[0.0; 4]);
        assert_eq!(&m[4..8], &[0.5; 4]);
        assert_eq!(&m[8..12], &[1.0; 4]);

        let err = merge_slabs(
            &[SlabOutput {
                span: (0, 2),
                data: &zeros,
            }],
            [4, 2, 2],
        );
        assert!(matches!(err, Err(Error::UncoveredSlices(g)) if g == vec![2, 3]));
    }

    #[test]
    fn merge_matches_brute_force_and_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d, h, w, c) = (9, 2, 3, 3);
        let spans: Vec<(usize, usize)> = (0..=d - c).map(|s| (s, s + c)).collect();
        let data: Vec<Vec<f64>> = spans
            .iter()
            .map(|_| (0..c * h * w).map(|_| rng.random()).collect())
            .collect();
        let mut parts: Vec<SlabOutput<'_>> = spans
            .iter()
            .zip(&data)
            .map(|(&span, d)| SlabOutput { span, data: d })
            .collect();
        let got = merge_slabs(&parts, [d, h, w]).unwrap();
        for z in 0..d {
            for p in 0..h * w {
                let mut sum = 0.0;
                let mut n = 0.0;
                for (k, &(s, e)) in spans.iter().enumerate() {
                    if (s..e).contains(&z) {
                        sum += data[k][(z - s) * h * w + p];
                        n += 1.0;
                    }
                }
                assert_eq!(got[z * h * w + p], sum / n);
            }
        }
        parts.reverse();
        let rev = merge_slabs(&parts, [d, h, w]).unwrap();
        for (a, b) in got.iter().zip(&rev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn volume_prediction_keeps_shape_and_quadrature() {
        let gen = small_gen(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vol = Volume::new(
            [5, 8, 8],
            [1.0; 3],
            (0..320).map(|_| rng.random()).collect(),
        )
        .unwrap();
        let cfg = InferenceConfig {
            mc_passes: 3,
            ..InferenceConfig::default()
        };
        let p = predict_volume(&gen, &vol, &cfg).unwrap();
        for (_, v) in p.fields() {
            assert_eq!(v.shape(), vol.shape());
        }
        for i in 0..vol.data().len() {
            let (s, a, e) = (
                p.sigma.data()[i] as f64,
                p.sigma_aleatoric.data()[i] as f64,
                p.sigma_epistemic.data()[i] as f64,
            );
            assert!((s * s - a * a - e * e).abs() < 1e-6 * (s * s).max(1.0));
            assert!(s >= a.max(e) * (1.0 - 1e-6));
        }
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &p, true).unwrap();
        assert!(dir.path().join("sigma.f32").exists());
        assert!(dir.path().join("previews/prediction_004.pgm").exists());
    }
}
