//! `fmrigan`: phantom generation, α-GAN training, synthesis and evaluation
//! from one JSON run config.

mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use fmrigan_core::eval::AugmentArm;
use fmrigan_core::nets::TemporalKind;

use commands::{existing, existing_stem, Invocation};
use config::{Override, RunConfig};
use manifest::{DirLock, Manifest};

/// Bad input or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "fmrigan",
    version,
    about = "Alpha-GAN synthesis and evaluation of 4D fMRI-like sequences"
)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; omitted fields take the profile defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.gan_epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<Override>,
}

#[derive(Args)]
struct Common {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; every file the run writes goes here.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the ground-truth phantom dataset, schedule and parcellation.
    Phantom {
        #[command(flatten)]
        common: Common,
    },
    /// Split a dataset into train, validation and test subjects.
    Split {
        #[command(flatten)]
        common: Common,
        /// Directory of .vseq sequences.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Pretrain the encoder and generator as an autoencoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// split.json; training uses its train subjects.
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        /// Checkpoint stem to continue from.
        #[arg(long, value_name = "STEM")]
        resume: Option<PathBuf>,
    },
    /// Run the adversarial stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        /// Pretrained checkpoint stem to start from.
        #[arg(long, value_name = "STEM", conflicts_with = "resume")]
        init: Option<PathBuf>,
        /// Checkpoint stem to continue from; the history CSV next to it is
        /// extended.
        #[arg(long, value_name = "STEM")]
        resume: Option<PathBuf>,
    },
    /// Sample labeled synthetic sequences from a trained generator.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "STEM")]
        checkpoint: Option<PathBuf>,
        /// Sequences per class; defaults to eval.n_synthetic_per_class.
        #[arg(long, value_name = "N")]
        n_per_class: Option<usize>,
    },
    /// BIO versus SCRAM z-score contrast and t-tests per region.
    EvalRoi {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        schedule: Option<PathBuf>,
        /// Parcellation stem.
        #[arg(long, value_name = "STEM")]
        parcellation: Option<PathBuf>,
    },
    /// PCA and 3D t-SNE projection of real and synthetic sequences.
    EvalEmbed {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Directory of synthetic sequences.
        #[arg(long, value_name = "DIR")]
        synthetic: Option<PathBuf>,
    },
    /// Downstream classification with each augmentation arm.
    EvalClf {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        split: Option<PathBuf>,
        /// Comma-separated arms: none, gaussian or a temporal kind.
        #[arg(long, value_delimiter = ',', value_name = "ARMS")]
        arms: Option<Vec<AugmentArm>>,
        /// Generator checkpoint for one kind, e.g. `conv1d=runs/t1/model`.
        #[arg(long = "generator", value_name = "KIND=STEM")]
        generators: Vec<String>,
    },
    /// Collect the CSV outputs of finished runs into one report.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories holding a manifest.json.
        #[arg(required = true, value_name = "RUN")]
        runs: Vec<PathBuf>,
    },
    /// Replay a run from its manifest into a new output directory.
    Rerun {
        /// manifest.json or the run directory holding it.
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print the normalized run config.
    CheckConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print version information.
    Version,
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    if let Some(p) = &args.config {
        existing(p, "--config")?;
    }
    Ok(config::load(args.config.as_deref(), &args.set)?)
}

/// Flag value, else config fallback, else a usage error naming both.
fn input(
    flag: Option<PathBuf>,
    fallback: Option<&PathBuf>,
    name: &str,
    key: &str,
) -> Result<PathBuf> {
    flag.or_else(|| fallback.cloned()).ok_or_else(|| {
        UsageError(format!("missing input: pass --{name} or set paths.{key}")).into()
    })
}

fn opt_dir(p: Option<PathBuf>, what: &str) -> Result<Option<PathBuf>> {
    p.map(|p| existing(&p, what)).transpose()
}

fn opt_stem(p: Option<PathBuf>, what: &str) -> Result<Option<PathBuf>> {
    p.map(|p| existing_stem(&p, what)).transpose()
}

fn run_invocation(inv: Invocation, cfg: RunConfig, out: &Path) -> Result<()> {
    let _lock = DirLock::acquire(out)?;
    let resolved = serde_json::to_string_pretty(&cfg).expect("config serializes");
    std::fs::write(out.join("config.json"), resolved + "\n")?;
    commands::execute(&inv, &cfg, out)?;
    let m = Manifest::new(inv, cfg).finish(out)?;
    println!(
        "{}: wrote {} files to {}",
        m.invocation.name(),
        m.outputs.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    let (inv, cfg, out) = match command {
        Command::Version => {
            println!(
                "fmrigan {} (fmrigan-core {}, file format version {})",
                env!("CARGO_PKG_VERSION"),
                fmrigan_core::VERSION,
                fmrigan_core::seqvol::io::FORMAT_VERSION
            );
            return Ok(());
        }
        Command::CheckConfig { config } => {
            let cfg = load_config(&config)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("config serializes")
            );
            return Ok(());
        }
        Command::Rerun { manifest, out } => {
            let m = Manifest::read(&existing(&manifest, "--manifest")?)?;
            m.config.validate()?;
            return run_invocation(m.invocation, m.config, &out);
        }
        Command::Phantom { common } => (
            Invocation::Phantom,
            load_config(&common.config)?,
            common.out,
        ),
        Command::Split { common, data } => {
            let cfg = load_config(&common.config)?;
            let data = existing(
                &input(data, cfg.paths.data_dir.as_ref(), "data", "data_dir")?,
                "--data",
            )?;
            (Invocation::Split { data }, cfg, common.out)
        }
        Command::Pretrain {
            common,
            data,
            split,
            resume,
        } => {
            let cfg = load_config(&common.config)?;
            let data = existing(
                &input(data, cfg.paths.data_dir.as_ref(), "data", "data_dir")?,
                "--data",
            )?;
            let split = opt_dir(split.or_else(|| cfg.paths.split.clone()), "--split")?;
            let resume = opt_stem(resume, "--resume")?;
            (
                Invocation::Pretrain {
                    data,
                    split,
                    resume,
                },
                cfg,
                common.out,
            )
        }
        Command::Train {
            common,
            data,
            split,
            init,
            resume,
        } => {
            let cfg = load_config(&common.config)?;
            let data = existing(
                &input(data, cfg.paths.data_dir.as_ref(), "data", "data_dir")?,
                "--data",
            )?;
            let split = opt_dir(split.or_else(|| cfg.paths.split.clone()), "--split")?;
            let init = opt_stem(
                init.or_else(|| {
                    if resume.is_none() {
                        cfg.paths.checkpoint.clone()
                    } else {
                        None
                    }
                }),
                "--init",
            )?;
            let resume = opt_stem(resume, "--resume")?;
            (
                Invocation::Train {
                    data,
                    split,
                    init,
                    resume,
                },
                cfg,
                common.out,
            )
        }
        Command::Generate {
            common,
            checkpoint,
            n_per_class,
        } => {
            let cfg = load_config(&common.config)?;
            let ckpt = input(
                checkpoint,
                cfg.paths.checkpoint.as_ref(),
                "checkpoint",
                "checkpoint",
            )?;
            let checkpoint = existing_stem(&ckpt, "--checkpoint")?;
            let n_per_class = n_per_class.unwrap_or(cfg.eval.n_synthetic_per_class);
            (
                Invocation::Generate {
                    checkpoint,
                    n_per_class,
                },
                cfg,
                common.out,
            )
        }
        Command::EvalRoi {
            common,
            data,
            schedule,
            parcellation,
        } => {
            let cfg = load_config(&common.config)?;
            let data = existing(
                &input(data, cfg.paths.data_dir.as_ref(), "data", "data_dir")?,
                "--data",
            )?;
            let schedule = existing(
                &input(
                    schedule,
                    cfg.paths.schedule.as_ref(),
                    "schedule",
                    "schedule",
                )?,
                "--schedule",
            )?;
            let parc = input(
                parcellation,
                cfg.paths.parcellation.as_ref(),
                "parcellation",
                "parcellation",
            )?;
            let parcellation = existing_stem(&parc, "--parcellation")?;
            (
                Invocation::EvalRoi {
                    data,
                    schedule,
                    parcellation,
                },
                cfg,
                common.out,
            )
        }
        Command::EvalEmbed {
            common,
            data,
            synthetic,
        } => {
            let cfg = load_config(&common.config)?;
            let data = existing(
                &input(data, cfg.paths.data_dir.as_ref(), "data", "data_dir")?,
                "--data",
            )?;
            let synthetic = opt_dir(
                synthetic.or_else(|| cfg.paths.synthetic_dir.clone()),
                "--synthetic",
            )?;
            (Invocation::EvalEmbed { data, synthetic }, cfg, common.out)
        }
        Command::EvalClf {
            common,
            data,
            split,
            arms,
            generators,
        } => {
            let cfg = load_config(&common.config)?;
            let data = existing(
                &input(data, cfg.paths.data_dir.as_ref(), "data", "data_dir")?,
                "--data",
            )?;
            let split = existing(
                &input(split, cfg.paths.split.as_ref(), "split", "split")?,
                "--split",
            )?;
            let arms = arms.unwrap_or_else(|| cfg.eval.arms.clone());
            let mut stems = BTreeMap::new();
            for (slug, stem) in &cfg.paths.generators {
                stems.insert(slug.clone(), stem.clone());
            }
            for g in generators {
                let (kind, stem) = g.split_once('=').ok_or_else(|| {
                    UsageError(format!("--generator expects KIND=STEM, got {g:?}"))
                })?;
                let kind: TemporalKind = kind.parse().map_err(|_| {
                    UsageError(format!("--generator: unknown temporal kind {kind:?}"))
                })?;
                stems.insert(kind.slug().to_string(), PathBuf::from(stem));
            }
            let generators = stems
                .into_iter()
                .map(|(k, s)| Ok((k, existing_stem(&s, "--generator")?)))
                .collect::<Result<_>>()?;
            (
                Invocation::EvalClf {
                    data,
                    split,
                    arms,
                    generators,
                },
                cfg,
                common.out,
            )
        }
        Command::Report { common, runs } => {
            let cfg = load_config(&common.config)?;
            let runs = runs
                .iter()
                .map(|r| existing(r, "run directory"))
                .collect::<Result<_>>()?;
            (Invocation::Report { runs }, cfg, common.out)
        }
    };
    run_invocation(inv, cfg, &out)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let user = err.downcast_ref::<UsageError>().is_some()
        || err
            .downcast_ref::<fmrigan_core::Error>()
            .is_some_and(|e| e.is_user_error());
    if user {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
