use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use systraj::config::{ExperimentConfig, ExperimentId};
use systraj::experiment::{run, write_artifacts};
use systraj::Error;

#[derive(Parser)]
#[command(name = "systraj", version, about = "Learn dynamical systems from a single trajectory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    Fig1a,
    Fig1b,
    Fig1c,
    Fig2,
    Table1,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory of the configured plant.
    Simulate(Common),
    /// Run gradient descent on one trajectory.
    Identify(Common),
    /// Empirically check the stability, OPC, concentration and truncation properties.
    Verify(Common),
    /// Run one of the figure or table experiments.
    Experiment {
        #[arg(long, value_enum)]
        name: Figure,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common, id: ExperimentId) -> systraj::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::ConfigField {
                field: "config".into(),
                message: format!("{}: {io}", p.display()),
            },
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(id);
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::ConfigField { .. } | Error::InvalidInput(_) | Error::DimensionMismatch { .. } => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, id) = match &cli.command {
        Command::Simulate(c) => (c, ExperimentId::Simulate),
        Command::Identify(c) => (c, ExperimentId::Identify),
        Command::Verify(c) => (c, ExperimentId::Verify),
        Command::Experiment { name, common } => (
            common,
            match name {
                Figure::Fig1a => ExperimentId::Fig1a,
                Figure::Fig1b => ExperimentId::Fig1b,
                Figure::Fig1c => ExperimentId::Fig1c,
                Figure::Fig2 => ExperimentId::Fig2,
                Figure::Table1 => ExperimentId::Table1,
            },
        ),
    };
    let result = load(common, id).and_then(|cfg| {
        let artifacts = run(&cfg)?;
        write_artifacts(&cfg, &artifacts, &cfg.out)
    });
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
