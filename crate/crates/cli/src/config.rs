//! Run configuration, loaded from TOML with task-dependent defaults.

use std::fs;
use std::path::{Path, PathBuf};

use ggdgan::inference::InferenceConfig;
use ggdgan::metrics::AnalysisConfig;
use ggdgan::networks::{DiscriminatorConfig, GeneratorConfig};
use ggdgan::training::{Task, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub predictions: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let root = PathBuf::from("runs");
        Self {
            dataset: root.join("dataset"),
            checkpoints: root.join("checkpoints"),
            predictions: root.join("predictions"),
            reports: root.join("reports"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionConfig {
    pub radius: f64,
    pub t1_delta: f32,
    pub t2_delta: f32,
}

impl Default for LesionConfig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            t1_delta: -0.30,
            t2_delta: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `[D, H, W]` of every phantom.
    pub shape: [usize; 3],
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Fraction of k-space rows acquired (QE).
    pub coverage: f64,
    pub lesion: LesionConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            shape: [16, 64, 64],
            n_train: 20,
            n_val: 4,
            n_test: 6,
            coverage: 0.3,
            lesion: LesionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Mean input PSNR targets for NL0..NL3.
    pub targets_db: [f64; 4],
    /// NL0 is the noise-free pipeline instead of a calibrated level.
    pub clean_nl0: bool,
    /// Fixed NL0 sigma, bypassing calibration.
    pub nl0_sigma: Option<f64>,
}

impl NoiseConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            targets_db: [21.0, 18.0, 16.0, 14.0],
            clean_nl0: task == Task::Mp,
            nl0_sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Root of every derived random stream.
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            seed: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            noise: NoiseConfig::for_task(task),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            train: TrainConfig::for_task(task),
            inference: InferenceConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    /// Parses TOML, filling every absent key from the defaults of the
    /// file's `task` (QE when absent).
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let file: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let task = match file.get("task") {
            Some(v) => v
                .clone()
                .try_into::<Task>()
                .map_err(|e| CliError::Config(format!("task: {e}")))?,
            None => Task::Qe,
        };
        let mut merged = toml::Table::try_from(Self::for_task(task))
            .map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut merged, file);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies the root seed to the per-module configs.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.inference.seed = seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        let wrap = |r: ggdgan::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        wrap(self.generator.validate())?;
        wrap(self.discriminator.validate())?;
        wrap(self.train.validate())?;
        wrap(self.inference.validate())?;
        wrap(self.analysis.validate())?;
        if self.train.task != self.task {
            return Err(CliError::Config("train.task must equal task".into()));
        }
        if self.discriminator.in_channels != self.generator.in_channels {
            return Err(CliError::Config(
                "discriminator.in_channels must equal generator.in_channels".into(),
            ));
        }
        let [d, h, w] = self.data.shape;
        let m = 1usize << self.generator.depth;
        if h % m != 0 || w % m != 0 {
            return Err(CliError::Config(format!(
                "data.shape {h}x{w} must be divisible by {m}"
            )));
        }
        if self.generator.in_channels > d {
            return Err(CliError::Config(
                "generator.in_channels exceeds the volume depth".into(),
            ));
        }
        if h.min(w) < self.discriminator.min_input_size() {
            return Err(CliError::Config(
                "slices are smaller than the discriminator minimum".into(),
            ));
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(CliError::Config(
                "n_train and n_test must be positive".into(),
            ));
        }
        if !(self.data.coverage > 0.0 && self.data.coverage <= 1.0) {
            return Err(CliError::Config("data.coverage must lie in (0, 1]".into()));
        }
        let t = self.noise.targets_db;
        if t.windows(2).any(|p| p[1] >= p[0]) {
            return Err(CliError::Config(
                "noise.targets_db must strictly decrease".into(),
            ));
        }
        if self
            .noise
            .nl0_sigma
            .is_some_and(|s| !(s.is_finite() && s >= 0.0))
        {
            return Err(CliError::Config("noise.nl0_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for task in [Task::Qe, Task::Mp] {
            let cfg = RunConfig::for_task(task);
            let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn task_selects_defaults() {
        let cfg = RunConfig::from_toml("task = \"MP\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.train.lambda_adv, 7e-4);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 8);
        assert!(cfg.noise.clean_nl0);
        assert!(!RunConfig::from_toml("").unwrap().noise.clean_nl0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nbatch_size = 0").is_err());
        assert!(RunConfig::from_toml("[data]\nshape = [4, 30, 32]").is_err());
        assert!(RunConfig::from_toml("[noise]\ntargets_db = [14.0, 16.0, 18.0, 21.0]").is_err());
    }
}
