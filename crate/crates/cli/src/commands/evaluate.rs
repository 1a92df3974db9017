use std::path::Path;

use ggdgan::data_sim::NoiseLevel;
use ggdgan::io::{read_volume, write_json, write_volume, ManifestExtras, Pairing};
use ggdgan::metrics::{
    beta_trend, correlate, masked_uncertainty, psnr, rrmse, ssim, BetaTrend, TrendInput,
};
use ggdgan::volume::Volume;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{list_dirs, Dataset, Split};
use crate::error::{CliError, CliResult};
use crate::output::{prepare_output, write_config_echo};

pub const REPORT_CSV: &str = "evaluation.csv";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// One evaluated slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub volume_id: String,
    pub slice: usize,
    #[serde(rename = "NL")]
    pub level: NoiseLevel,
    pub ssim: f64,
    /// `inf` for a perfect prediction.
    pub psnr: f64,
    /// NaN when the reference slice is all zero.
    pub rrmse: f64,
    pub mean_sigma: f64,
    pub mean_beta: f64,
    pub mean_alpha: f64,
    pub mean_abs_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ScatterRow {
    #[serde(rename = "NL")]
    level: NoiseLevel,
    mean_abs_residual: f64,
    mean_sigma: f64,
    mean_beta: f64,
}

/// Mean and population std over the finite values of a column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_finite: usize,
    pub n: usize,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let all: Vec<f64> = values.collect();
        let finite: Vec<f64> = all.iter().copied().filter(|v| v.is_finite()).collect();
        let (mean, std) = if finite.is_empty() {
            (None, None)
        } else {
            let m = finite.iter().sum::<f64>() / finite.len() as f64;
            let v = finite.iter().map(|x| (x - m).powi(2)).sum::<f64>() / finite.len() as f64;
            (Some(m), Some(v.sqrt()))
        };
        Self {
            mean,
            std,
            n_finite: finite.len(),
            n: all.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: NoiseLevel,
    pub slices: usize,
    pub ssim: Stat,
    pub psnr: Stat,
    pub rrmse: Stat,
    pub mean_sigma: Stat,
    pub mean_beta: Stat,
    pub mean_alpha: Stat,
}

/// Masked-uncertainty concentration on one lesion volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSummary {
    pub volume_id: String,
    pub support_fraction: f64,
    /// Share of masked-σ̂ mass inside the lesion; `None` when nothing survives the mask.
    pub mass_fraction_inside: Option<f64>,
    pub masked_voxels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub levels: Vec<LevelSummary>,
    /// Pearson r of per-slice mean |residual| against mean σ̂, all levels pooled.
    pub r_residual_sigma: Option<f64>,
    /// Same against mean β̂.
    pub r_residual_beta: Option<f64>,
    pub beta_trend: BetaTrend,
    pub tau: f64,
    pub lesions: Vec<LesionSummary>,
}

fn mean(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64
}

struct Bundle {
    prediction: Volume,
    sigma: Volume,
    alpha: Volume,
    beta: Volume,
}

impl Bundle {
    fn read(dir: &Path, shape: [usize; 3]) -> CliResult<Self> {
        let load = |name: &str| -> CliResult<Volume> {
            let (v, _) = read_volume(&dir.join(name))?;
            if v.shape() != shape {
                return Err(ggdgan::Error::ShapeMismatch {
                    expected: shape.to_vec(),
                    actual: v.shape().to_vec(),
                }
                .into());
            }
            Ok(v)
        };
        Ok(Self {
            prediction: load("prediction")?,
            sigma: load("sigma")?,
            alpha: load("alpha")?,
            beta: load("beta")?,
        })
    }
}

/// Prediction ids under `dir` must equal `expected` exactly.
fn matched_ids(dir: &Path, expected: &[String]) -> CliResult<()> {
    let found = list_dirs(dir)?;
    let mut unmatched: Vec<String> = expected
        .iter()
        .filter(|id| !found.contains(id))
        .map(|id| format!("{}: missing prediction for {id}", dir.display()))
        .collect();
    unmatched.extend(
        found
            .iter()
            .filter(|id| !expected.contains(id))
            .map(|id| format!("{}: no reference for {id}", dir.display())),
    );
    if unmatched.is_empty() {
        Ok(())
    } else {
        Err(CliError::Unmatched(unmatched))
    }
}

fn evaluate_level(
    ds: &Dataset,
    pred_root: &Path,
    level: NoiseLevel,
    rows: &mut Vec<ReportRow>,
) -> CliResult<TrendInput> {
    let split = Split::Test(level);
    let ids = split.ids(&ds.manifest);
    let dir = pred_root.join(split.dir());
    matched_ids(&dir, ids)?;
    let mut trend = TrendInput::default();
    for id in ids {
        let target = ds.read(split, id, "target")?;
        let b = Bundle::read(&dir.join(id), target.shape())?;
        for z in 0..target.depth() {
            let t = target.slice_data(z);
            let p = b.prediction.slice_data(z);
            let residual: f64 = t
                .iter()
                .zip(p)
                .map(|(&a, &c)| (a as f64 - c as f64).abs())
                .sum::<f64>()
                / t.len() as f64;
            rows.push(ReportRow {
                volume_id: id.clone(),
                slice: z,
                level,
                ssim: ssim(&target.slice(z), &b.prediction.slice(z), 1.0)?,
                psnr: psnr(t, p, 1.0)?,
                rrmse: rrmse(t, p).unwrap_or(f64::NAN),
                mean_sigma: mean(b.sigma.slice_data(z)),
                mean_beta: mean(b.beta.slice_data(z)),
                mean_alpha: mean(b.alpha.slice_data(z)),
                mean_abs_residual: residual,
            });
            trend
                .output_psnr
                .push(rows.last().map_or(f64::NAN, |r| r.psnr));
        }
        trend.beta_maps.push(b.beta.data().to_vec());
        trend.alpha_maps.push(b.alpha.data().to_vec());
    }
    Ok(trend)
}

fn evaluate_lesions(
    cfg: &RunConfig,
    ds: &Dataset,
    pred_root: &Path,
    out: &Path,
) -> CliResult<Vec<LesionSummary>> {
    let split = Split::Lesion;
    let ids = split.ids(&ds.manifest);
    let dir = pred_root.join(split.dir());
    if ids.is_empty() || !dir.is_dir() {
        return Ok(Vec::new());
    }
    matched_ids(&dir, ids)?;
    let mut out_rows = Vec::with_capacity(ids.len());
    for id in ids {
        let target = ds.read(split, id, "target")?;
        let support = ds.read(split, id, "lesion")?;
        let b = Bundle::read(&dir.join(id), target.shape())?;
        let residual: Vec<f32> = target
            .data()
            .iter()
            .zip(b.prediction.data())
            .map(|(&t, &p)| t - p)
            .collect();
        let masked = masked_uncertainty(&residual, b.sigma.data(), &cfg.analysis)?;
        let (mut inside, mut total) = (0.0f64, 0.0f64);
        for (&m, &s) in masked.iter().zip(support.data()) {
            total += m as f64;
            if s > 0.5 {
                inside += m as f64;
            }
        }
        let n_support = support.data().iter().filter(|&&s| s > 0.5).count();
        out_rows.push(LesionSummary {
            volume_id: id.clone(),
            support_fraction: n_support as f64 / support.data().len() as f64,
            mass_fraction_inside: (total > 0.0).then(|| inside / total),
            masked_voxels: masked.iter().filter(|&&m| m > 0.0).count(),
        });
        let vol = Volume::new(target.shape(), target.spacing(), masked)?;
        write_volume(
            &out.join("lesion").join(format!("{id}_masked_sigma")),
            &vol,
            ManifestExtras {
                pairing: Some(Pairing {
                    role: "masked_sigma".into(),
                    partner: Some(format!("{id}_lesion")),
                }),
                ..ManifestExtras::default()
            },
        )?;
    }
    Ok(out_rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Scores every prediction under `cfg.paths.predictions` against the
/// dataset references and writes the report set to `cfg.paths.reports`.
pub fn cmd_evaluate(cfg: &RunConfig, force: bool) -> CliResult<EvaluationSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let pred_root = &cfg.paths.predictions;
    let levels: Vec<NoiseLevel> = NoiseLevel::ALL
        .into_iter()
        .filter(|&l| pred_root.join(Split::Test(l).dir()).is_dir())
        .collect();
    if levels.is_empty() {
        return Err(CliError::Config(format!(
            "no test predictions under {}",
            pred_root.display()
        )));
    }
    let out = &cfg.paths.reports;
    prepare_output(out, force)?;

    let mut rows = Vec::new();
    let mut trends = Vec::with_capacity(levels.len());
    for &level in &levels {
        trends.push((level, evaluate_level(&ds, pred_root, level, &mut rows)?));
    }
    let lesions = evaluate_lesions(cfg, &ds, pred_root, out)?;

    let res: Vec<f64> = rows.iter().map(|r| r.mean_abs_residual).collect();
    let sig: Vec<f64> = rows.iter().map(|r| r.mean_sigma).collect();
    let beta: Vec<f64> = rows.iter().map(|r| r.mean_beta).collect();
    let summary = EvaluationSummary {
        levels: levels
            .iter()
            .map(|&level| {
                let sel: Vec<&ReportRow> = rows.iter().filter(|r| r.level == level).collect();
                let col = |f: fn(&ReportRow) -> f64| Stat::of(sel.iter().map(|r| f(r)));
                LevelSummary {
                    level,
                    slices: sel.len(),
                    ssim: col(|r| r.ssim),
                    psnr: col(|r| r.psnr),
                    rrmse: col(|r| r.rrmse),
                    mean_sigma: col(|r| r.mean_sigma),
                    mean_beta: col(|r| r.mean_beta),
                    mean_alpha: col(|r| r.mean_alpha),
                }
            })
            .collect(),
        r_residual_sigma: correlate(&res, &sig).ok(),
        r_residual_beta: correlate(&res, &beta).ok(),
        beta_trend: beta_trend(&trends)?,
        tau: cfg.analysis.tau,
        lesions,
    };

    write_csv(&out.join(REPORT_CSV), &rows)?;
    let scatter: Vec<ScatterRow> = rows
        .iter()
        .map(|r| ScatterRow {
            level: r.level,
            mean_abs_residual: r.mean_abs_residual,
            mean_sigma: r.mean_sigma,
            mean_beta: r.mean_beta,
        })
        .collect();
    write_csv(&out.join(SCATTER_CSV), &scatter)?;
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    write_config_echo(out, cfg)?;
    Ok(summary)
}
