use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ggdgan::data_sim::NoiseLevel;

use crate::commands::{cmd_evaluate, cmd_infer, cmd_simulate, cmd_train, CHECKPOINT};
use crate::config::RunConfig;
use crate::dataset::Split;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "ggdgan", version, about = "Uncertainty-aware GGD-GAN pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; task defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, overriding the command's configured path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    Lesion,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantom pairs and calibrated noise levels.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Fraction of k-space rows kept.
        #[arg(long)]
        coverage: Option<f64>,
        /// Fixed NL0 noise sigma.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train generator and discriminator on the train split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// MC-dropout inference over a dataset split.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Defaults to model.ckpt under the checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Noise levels for the test split (0-3); all when omitted.
        #[arg(long, value_delimiter = ',')]
        nl: Vec<usize>,
        /// Write PGM previews of prediction and sigma.
        #[arg(long)]
        previews: bool,
    },
    /// Score predictions against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::for_task(ggdgan::training::Task::Qe),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn levels(nl: &[usize]) -> CliResult<Vec<NoiseLevel>> {
    if nl.is_empty() {
        return Ok(NoiseLevel::ALL.to_vec());
    }
    nl.iter()
        .map(|&k| {
            NoiseLevel::ALL
                .get(k)
                .copied()
                .ok_or_else(|| crate::error::CliError::Config(format!("--nl {k} is not in 0..=3")))
        })
        .collect()
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            common,
            coverage,
            sigma,
        } => {
            let mut cfg = load(&common)?;
            if let Some(c) = coverage {
                cfg.data.coverage = c;
            }
            if let Some(s) = sigma {
                cfg.noise.nl0_sigma = Some(s);
            }
            if let Some(o) = common.out {
                cfg.paths.dataset = o;
            }
            let m = cmd_simulate(&cfg, common.force)?;
            let sigmas: Vec<String> = m
                .noise_levels
                .iter()
                .map(|s| format!("{}={:.4}", s.level, s.sigma))
                .collect();
            println!(
                "dataset {} ({})",
                cfg.paths.dataset.display(),
                sigmas.join(" ")
            );
        }
        Command::Train { common } => {
            let mut cfg = load(&common)?;
            if let Some(o) = common.out {
                cfg.paths.checkpoints = o;
            }
            let log = cmd_train(&cfg, common.force)?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "epoch {} loss_u {:.4} val_ssim {:?}",
                    last.epoch, last.loss_u, last.val_ssim
                );
            }
        }
        Command::Infer {
            common,
            checkpoint,
            split,
            nl,
            previews,
        } => {
            let mut cfg = load(&common)?;
            if let Some(o) = common.out {
                cfg.paths.predictions = o;
            }
            let ck = checkpoint.unwrap_or_else(|| cfg.paths.checkpoints.join(CHECKPOINT));
            let splits = match split {
                SplitArg::Train => vec![Split::Train],
                SplitArg::Val => vec![Split::Val],
                SplitArg::Lesion => vec![Split::Lesion],
                SplitArg::Test => levels(&nl)?.into_iter().map(Split::Test).collect(),
            };
            for s in splits {
                let dirs = cmd_infer(&cfg, &ck, s, previews, common.force)?;
                println!("{}: {} volumes", s.dir().display(), dirs.len());
            }
        }
        Command::Evaluate { common } => {
            let mut cfg = load(&common)?;
            if let Some(o) = common.out {
                cfg.paths.reports = o;
            }
            let s = cmd_evaluate(&cfg, common.force)?;
            for l in &s.levels {
                println!("{}: ssim {:?} psnr {:?}", l.level, l.ssim.mean, l.psnr.mean);
            }
            println!(
                "r(residual, sigma) {:?} r(residual, beta) {:?}",
                s.r_residual_sigma, s.r_residual_beta
            );
        }
    }
    Ok(())
}
