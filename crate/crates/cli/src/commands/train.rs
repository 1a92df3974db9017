use std::fs::File;
use std::io::BufWriter;

use ggdgan::networks::{Discriminator, Generator};
use ggdgan::seed::derive_seed;
use ggdgan::training::{Trainer, TrainingLog};
use ggdgan::Error;

use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{CliError, CliResult};
use crate::output::{prepare_output, write_config_echo};

pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const DIVERGENCE_DUMP: &str = "divergence.json";

pub fn cmd_train(cfg: &RunConfig, force: bool) -> CliResult<TrainingLog> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.paths.dataset)?;
    if ds.manifest.task != cfg.task {
        return Err(CliError::Config(format!(
            "dataset was simulated for {:?}, config asks for {:?}",
            ds.manifest.task, cfg.task
        )));
    }
    let train = ds.pairs(Split::Train)?;
    let val = ds.pairs(Split::Val)?;
    let out = &cfg.paths.checkpoints;
    prepare_output(out, force)?;
    write_config_echo(out, cfg)?;

    let gen = Generator::new(cfg.generator.clone(), derive_seed(cfg.seed, "generator", 0))?;
    let disc = Discriminator::new(
        cfg.discriminator.clone(),
        derive_seed(cfg.seed, "discriminator", 0),
    )?;
    let mut trainer = Trainer::new(cfg.train.clone(), gen, disc)?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let echo = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    match trainer.fit(&train, &val, Some(&mut log)) {
        Ok(history) => {
            trainer.checkpoint(echo).save(&out.join(CHECKPOINT))?;
            Ok(history)
        }
        Err(err) => {
            if let Error::Diverged {
                epoch,
                step,
                detail,
            } = &err
            {
                let dump = serde_json::json!({
                    "epoch": epoch,
                    "step": step,
                    "state": serde_json::from_str::<serde_json::Value>(detail).unwrap_or_else(|_| detail.clone().into()),
                });
                ggdgan::io::write_json(&out.join(DIVERGENCE_DUMP), &dump)?;
            }
            Err(err.into())
        }
    }
}
