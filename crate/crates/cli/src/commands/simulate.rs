use crate::config::RunConfig;
use crate::dataset::{simulate, DatasetManifest};
use crate::error::CliResult;

pub fn cmd_simulate(cfg: &RunConfig, force: bool) -> CliResult<DatasetManifest> {
    simulate(cfg, force)
}
