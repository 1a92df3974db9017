use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CONFIG_ECHO: &str = "config.toml";

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set,
/// in which case its previous contents are removed.
pub fn prepare_output(dir: &Path, force: bool) -> CliResult<()> {
    let non_empty = dir.is_dir()
        && fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .next()
            .is_some();
    if non_empty {
        if !force {
            return Err(CliError::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_config_echo(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.to_toml()?).map_err(|e| CliError::io(path, e))
}
