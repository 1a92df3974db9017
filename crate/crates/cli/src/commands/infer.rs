use std::path::{Path, PathBuf};

use ggdgan::checkpoint::Checkpoint;
use ggdgan::inference::{predict_volume, write_bundle, InferenceConfig};
use ggdgan::io::write_json;
use ggdgan::seed::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{CliError, CliResult};
use crate::output::{prepare_output, write_config_echo};

/// Provenance written next to every prediction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferRecord {
    pub checkpoint: PathBuf,
    pub checkpoint_step: u64,
    pub split: String,
    pub volume_ids: Vec<String>,
    pub inference: InferenceConfig,
}

/// Predicts every volume of `split`; returns the bundle directories.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: Split,
    previews: bool,
    force: bool,
) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let ck = Checkpoint::load(checkpoint)?;
    if ck.generator.config() != &cfg.generator {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained with a different generator config",
            checkpoint.display()
        )));
    }
    let ids = split.ids(&ds.manifest).to_vec();
    let out = cfg.paths.predictions.join(split.dir());
    let inputs = ids
        .iter()
        .map(|id| ds.read(split, id, "input"))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(v) = inputs.first() {
        let [d, h, w] = v.shape();
        ck.generator
            .check_input([1, ck.generator.config().in_channels, h, w])?;
        if ck.generator.config().in_channels > d {
            return Err(ggdgan::Error::ShapeMismatch {
                expected: vec![ck.generator.config().in_channels],
                actual: vec![d],
            }
            .into());
        }
    }
    prepare_output(&out, force)?;
    write_config_echo(&out, cfg)?;
    let mut dirs = Vec::with_capacity(ids.len());
    for (k, (id, input)) in ids.iter().zip(&inputs).enumerate() {
        let icfg = InferenceConfig {
            seed: derive_seed(cfg.inference.seed, "infer", k as u64),
            ..cfg.inference.clone()
        };
        let pred = predict_volume(&ck.generator, input, &icfg)?;
        let dir = out.join(id);
        write_bundle(&dir, &pred, previews)?;
        dirs.push(dir);
    }
    write_json(
        &out.join("infer.json"),
        &InferRecord {
            checkpoint: checkpoint.to_path_buf(),
            checkpoint_step: ck.step,
            split: split.dir().to_string_lossy().into_owned(),
            volume_ids: ids,
            inference: cfg.inference.clone(),
        },
    )?;
    Ok(dirs)
}
