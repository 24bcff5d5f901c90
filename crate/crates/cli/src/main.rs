mod commands;
mod config;
mod output;
mod svg;

use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use config::{Cli, Command, RunConfig};
use output::Stage;

/// Exit status for unreadable input and invalid configuration.
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(t) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} worker threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }

    let data = match cfg.command {
        Command::Weights | Command::Aggregate => {
            let path = cfg.data.as_ref().expect("required by config");
            let response = cfg.response.as_deref().expect("required by config");
            match dprob::dataset::load_csv(path, response) {
                Ok(ds) => Some(ds),
                Err(e) => {
                    eprintln!("error: cannot load {}: {e}", path.display());
                    return ExitCode::from(EXIT_USAGE);
                }
            }
        }
        Command::Ozone => Some(dprob::dataset::ozone()),
        Command::Sim => None,
    };

    match run(&cfg, data.as_ref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cfg: &RunConfig, data: Option<&dprob::dataset::Dataset>) -> anyhow::Result<()> {
    let stage = Stage::new(&cfg.out)?;
    stage.json("run_config.json", cfg)?;
    match cfg.command {
        Command::Weights => commands::weights(cfg, data.context("dataset")?, &stage)?,
        Command::Aggregate => commands::splits(cfg, data.context("dataset")?, &stage)?,
        Command::Ozone => {
            let ds = data.context("dataset")?;
            commands::weights(cfg, ds, &stage)?;
            commands::splits(cfg, ds, &stage)?;
        }
        Command::Sim => commands::sim(cfg, &stage)?,
    }
    stage.commit()?;
    eprintln!("results written to {}", cfg.out.display());
    Ok(())
}
