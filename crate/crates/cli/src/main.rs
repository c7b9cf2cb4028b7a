use std::path::PathBuf;
use std::process::ExitCode;

use arm_cli::commands::{self, num, SweepParam};
use arm_cli::config::parse_toggle;
use arm_cli::{CliError, ExperimentConfig, Overrides, Toggle};
use clap::{Args, Parser, Subcommand};

/// Modality valuation and asymmetric reinforcement experiments.
#[derive(Parser)]
#[command(name = "arm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the synthetic dataset and of the train/test split.
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args)]
struct TrainFlags {
    /// Training seeds, comma separated.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Strategy switch, e.g. `dff=off`; repeat or comma separate.
    #[arg(long = "toggle", value_delimiter = ',', value_parser = parse_toggle)]
    toggles: Vec<(Toggle, bool)>,
    /// Resample slope (negative).
    #[arg(long, allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset to <out>/data.csv.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one run per seed; writes history and checkpoint per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint on the configured train and test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Vary one hyperparameter; writes mean and std over seeds per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
    },
    /// Per-epoch CSV series from one or more history files.
    Report {
        #[arg(required = true)]
        histories: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn resolve(common: &Common, flags: Option<&TrainFlags>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    let mut o = Overrides {
        out: common.out.clone(),
        data_seed: common.data_seed,
        ..Overrides::default()
    };
    if let Some(f) = flags {
        o.seeds = f.seeds.clone();
        o.toggles = f.toggles.clone();
        o.slope = f.k;
        o.lambda1 = f.lambda1;
        o.lambda2 = f.lambda2;
    }
    cfg.apply(&o);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = resolve(&common, None)?;
            let s = commands::gen_data(&cfg)?;
            println!(
                "wrote {}: n={} m={} dims={:?}",
                s.path.display(),
                s.samples,
                s.modalities,
                s.dims
            );
        }
        Command::Train { common, flags } => {
            let cfg = resolve(&common, Some(&flags))?;
            for r in commands::train_seeds(&cfg)? {
                let last = r.history.last();
                println!(
                    "seed {}: epochs {} test_accuracy {} gap {} probe_accuracy [{}] -> {}",
                    r.seed,
                    r.history.records.len(),
                    num(r.test.fused_accuracy),
                    num(last.map_or(0.0, |l| l.gap)),
                    r.test
                        .probe_accuracy
                        .iter()
                        .map(|&v| num(v))
                        .collect::<Vec<_>>()
                        .join(", "),
                    r.dir.display()
                );
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = resolve(&common, None)?;
            let metrics = commands::eval_checkpoint(&cfg, &checkpoint)?;
            let m = metrics[0].1.probe_accuracy.len();
            let mut header = vec![
                "split",
                "samples",
                "fused_accuracy",
                "ce",
                "gap",
                "phi_cmi_joint",
                "phi_mi_joint",
            ]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
            header.extend((0..m).map(|i| format!("probe_accuracy_{i}")));
            println!("{}", header.join(","));
            for (split, e) in metrics {
                let mut row = vec![
                    split.to_string(),
                    e.samples.to_string(),
                    num(e.fused_accuracy),
                    num(e.ce),
                    num(e.contribution.gap),
                    num(e.contribution.phi_cmi_joint_mean),
                    num(e.contribution.phi_mi_joint_mean),
                ];
                row.extend(e.probe_accuracy.iter().map(|&v| num(v)));
                println!("{}", row.join(","));
            }
        }
        Command::Sweep {
            common,
            flags,
            param,
            values,
        } => {
            let cfg = resolve(&common, Some(&flags))?;
            let (path, rows) = commands::sweep(&cfg, param, &values)?;
            for r in &rows {
                println!(
                    "{}={}: test_accuracy {} ± {} gap {} ± {}",
                    param.name(),
                    num(r.value),
                    num(r.test_accuracy.0),
                    num(r.test_accuracy.1),
                    num(r.gap.0),
                    num(r.gap.1)
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Report { histories, out } => {
            for p in commands::report(&histories, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
