use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lungseg::cli::{self, RunConfig, SweepGrid, EXIT_CONFIG};
use lungseg::data::{synth_dataset, write_dataset};
use lungseg::{Error, Result};

#[derive(Parser)]
#[command(name = "lungseg", version, about = "Lung segmentation and classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Compute device; only `cpu` is available.
    #[arg(long, default_value = "cpu")]
    device: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: runs/<dataset>_<model>_<loss>_s<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from <out>/checkpoint when it exists.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Re-evaluate a finished run on its test split.
    Eval {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Config to use instead of <out>/config.txt.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Merge run directories into one table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for report.md and report.csv (default: print markdown).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of configurations.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset to disk.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })
}

fn check_device(common: &Common) -> Result<()> {
    if common.device != "cpu" {
        return Err(Error::InvalidArgument(format!(
            "device `{}` is not supported (only `cpu`)",
            common.device
        )));
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            resume,
            common,
        } => {
            check_device(&common)?;
            let mut cfg = RunConfig::parse(&read(&config)?)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let out = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(format!(
                    "{}_{}_{}_s{}",
                    cfg.dataset.name(),
                    cfg.model_label(),
                    cfg.train.loss.name(),
                    cfg.train.seed
                ))
            });
            let outcome = cli::run(&cfg, &out, resume)?;
            println!(
                "{}: DS {:.4}  HD {:.4}{}",
                out.display(),
                outcome.report.ds,
                outcome.report.hd,
                outcome
                    .report
                    .classification
                    .map(|c| format!("  ACC {:.4}", c.accuracy))
                    .unwrap_or_default()
            );
        }
        Command::Eval { out, config, common } => {
            check_device(&common)?;
            let cfg = config.map(|p| read(&p).and_then(|t| RunConfig::parse(&t))).transpose()?;
            let report = cli::evaluate_run(&out, cfg.as_ref())?;
            println!("{}: DS {:.4}  HD {:.4}", out.display(), report.ds, report.hd);
        }
        Command::Report { runs, out } => {
            let table = cli::report(&runs)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    for (name, text) in [("report.md", table.to_markdown()), ("report.csv", table.to_csv())] {
                        let path = dir.join(name);
                        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                    }
                }
                None => print!("{}", table.to_markdown()),
            }
        }
        Command::Sweep { config, out, common } => {
            check_device(&common)?;
            let grid = SweepGrid::parse(&read(&config)?)?;
            let outcome = cli::sweep(&grid, &out)?;
            println!(
                "{} completed, {} skipped, {} failed",
                outcome.completed.len(),
                outcome.skipped.len(),
                outcome.failed.len()
            );
            if !outcome.failed.is_empty() {
                return Err(Error::Data(format!(
                    "{} runs failed, see failures.txt",
                    outcome.failed.len()
                )));
            }
        }
        Command::Synth {
            out,
            count,
            seed,
            size,
        } => {
            let ds = synth_dataset(count, seed, size)?;
            write_dataset(&ds, &out)?;
            println!("{} samples written to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
