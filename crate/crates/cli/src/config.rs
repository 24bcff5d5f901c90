use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use dprob::candidate::PriorMode;
use dprob::hyper::{EbOptions, McmcOptions};
use dprob::pipeline::AnalysisConfig;
use dprob::sim::MeanFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Weights of every covariate subset on one dataset
    Weights,
    /// Simulated one-covariate scenarios
    Sim,
    /// Repeated train/test splits with weighted-aggregate prediction
    Aggregate,
    /// Full analysis of the bundled ozone data
    Ozone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Kl1,
    Kl2,
    Both,
}

impl Estimator {
    pub fn first(self) -> bool {
        matches!(self, Estimator::Kl1 | Estimator::Both)
    }

    pub fn second(self) -> bool {
        matches!(self, Estimator::Kl2 | Estimator::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    Flat,
    Gprior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperMode {
    Eb,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// The 20-point curvature grid
    Curvature,
    Case1,
    Case2,
    Case3,
    Case4,
}

#[derive(Debug, Parser)]
#[command(name = "dprob", version, about = "Absolute model weights for linear regression against a Gaussian-process reference")]
pub struct Cli {
    #[arg(long, value_enum)]
    pub command: Command,

    /// CSV file with a header row
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Response column; every other column is a covariate
    #[arg(long)]
    pub response: Option<String>,

    #[arg(long, value_enum, default_value = "both")]
    pub estimator: Estimator,

    /// Coefficient prior of the candidate models inside the divergence weights
    #[arg(long, value_enum, default_value = "flat")]
    pub prior: Prior,

    /// g for the g-prior: `n` for the sample size or a positive number
    #[arg(long, allow_hyphen_values = true)]
    pub g: Option<String>,

    #[arg(long, value_enum, default_value = "eb")]
    pub hyper: HyperMode,

    /// Empirical-Bayes restarts
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,

    #[arg(long)]
    pub mcmc_draws: Option<usize>,

    #[arg(long)]
    pub burn_in: Option<usize>,

    #[arg(long)]
    pub seed: u64,

    /// Fraction of rows used for training in each split
    #[arg(long)]
    pub train_frac: Option<f64>,

    /// Replications (sim) or splits (aggregate, ozone)
    #[arg(long)]
    pub reps: Option<usize>,

    /// Worker threads; defaults to the machine's parallelism
    #[arg(long)]
    pub threads: Option<usize>,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,

    /// Simulated scenario
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,

    /// Training sample size of simulated data
    #[arg(long)]
    pub sample_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GSetting {
    SampleSize,
    Value { g: f64 },
}

/// Fully resolved run configuration, written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub estimator: Estimator,
    pub prior: Prior,
    pub g: Option<GSetting>,
    pub hyper: HyperMode,
    pub restarts: usize,
    pub mcmc_draws: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub train_frac: Option<f64>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
    /// Left out of the sidecar so identical runs produce identical files.
    #[serde(skip)]
    pub out: PathBuf,
    pub scenario: Option<Scenario>,
    pub sample_size: Option<usize>,
    pub test_size: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

fn reject(cond: bool, msg: &str) -> Result<(), ConfigError> {
    if cond {
        Err(ConfigError(msg.to_string()))
    } else {
        Ok(())
    }
}

pub const DEFAULT_SPLITS: usize = 100;
pub const DEFAULT_SIM_REPS: usize = 100;
pub const DEFAULT_SAMPLE_SIZE: usize = 100;
pub const TEST_SIZE: usize = 100;

impl RunConfig {
    pub fn resolve(cli: Cli) -> Result<Self, ConfigError> {
        let cmd = cli.command;
        let uses_splits = matches!(cmd, Command::Aggregate | Command::Ozone);

        reject(cli.restarts == 0, "--restarts must be at least 1")?;
        reject(cli.threads == Some(0), "--threads must be at least 1")?;
        reject(
            cli.g.is_some() && cli.prior == Prior::Flat,
            "--g only applies with --prior gprior",
        )?;
        let g = match (cli.prior, cli.g.as_deref()) {
            (Prior::Flat, _) => None,
            (Prior::Gprior, None | Some("n")) => Some(GSetting::SampleSize),
            (Prior::Gprior, Some("hyper")) => {
                return Err(ConfigError(
                    "--g hyper is not available for divergence weights (they need a fixed g); \
                     hyper-g probabilities are always reported among the baselines"
                        .into(),
                ))
            }
            (Prior::Gprior, Some(v)) => match v.parse::<f64>() {
                Ok(g) if g > 0.0 && g.is_finite() => Some(GSetting::Value { g }),
                _ => return Err(ConfigError(format!("--g must be `n` or a positive number, got `{v}`"))),
            },
        };

        reject(
            cli.hyper == HyperMode::Eb && (cli.mcmc_draws.is_some() || cli.burn_in.is_some()),
            "--mcmc-draws and --burn-in require --hyper mcmc",
        )?;
        let (mcmc_draws, burn_in) = match cli.hyper {
            HyperMode::Eb => (None, None),
            HyperMode::Mcmc => {
                let defaults = McmcOptions::default();
                let d = cli.mcmc_draws.unwrap_or(defaults.draws);
                reject(d == 0, "--mcmc-draws must be at least 1")?;
                (Some(d), Some(cli.burn_in.unwrap_or(defaults.burn_in)))
            }
        };

        match cmd {
            Command::Weights | Command::Aggregate => {
                reject(cli.data.is_none(), "--data is required for this command")?;
                reject(cli.response.is_none(), "--response is required for this command")?;
            }
            Command::Sim | Command::Ozone => {
                reject(cli.data.is_some(), "--data is not used by this command")?;
                reject(cli.response.is_some(), "--response is not used by this command")?;
            }
        }
        let is_sim = cmd == Command::Sim;
        reject(!is_sim && cli.scenario.is_some(), "--scenario only applies to --command sim")?;
        reject(!is_sim && cli.sample_size.is_some(), "--sample-size only applies to --command sim")?;
        reject(!uses_splits && cli.train_frac.is_some(), "--train-frac only applies to aggregate and ozone")?;
        reject(cmd == Command::Weights && cli.reps.is_some(), "--reps does not apply to weights")?;

        let train_frac = if uses_splits {
            let f = cli.train_frac.unwrap_or(0.5);
            reject(!(f > 0.0 && f < 1.0), "--train-frac must lie strictly between 0 and 1")?;
            Some(f)
        } else {
            None
        };
        let reps = match cmd {
            Command::Weights => None,
            Command::Sim => Some(cli.reps.unwrap_or(DEFAULT_SIM_REPS)),
            Command::Aggregate | Command::Ozone => Some(cli.reps.unwrap_or(DEFAULT_SPLITS)),
        };
        reject(reps == Some(0), "--reps must be at least 1")?;
        let (scenario, sample_size, test_size) = if is_sim {
            let n = cli.sample_size.unwrap_or(DEFAULT_SAMPLE_SIZE);
            reject(n < 5, "--sample-size must be at least 5")?;
            (Some(cli.scenario.unwrap_or(Scenario::Curvature)), Some(n), Some(TEST_SIZE))
        } else {
            (None, None, None)
        };

        Ok(RunConfig {
            command: cmd,
            data: cli.data,
            response: cli.response,
            estimator: cli.estimator,
            prior: cli.prior,
            g,
            hyper: cli.hyper,
            restarts: cli.restarts,
            mcmc_draws,
            burn_in,
            seed: cli.seed,
            train_frac,
            reps,
            threads: cli.threads,
            out: cli.out,
            scenario,
            sample_size,
            test_size,
        })
    }

    /// Candidate prior for a training set of `n` rows.
    pub fn prior_mode(&self, n: usize) -> PriorMode {
        match self.g {
            None => PriorMode::Flat,
            Some(GSetting::SampleSize) => PriorMode::GPrior { g: n as f64 },
            Some(GSetting::Value { g }) => PriorMode::GPrior { g },
        }
    }

    pub fn analysis(&self, n: usize) -> AnalysisConfig {
        AnalysisConfig {
            prior: self.prior_mode(n),
            eb: EbOptions {
                restarts: self.restarts,
                seed: self.seed,
                ..Default::default()
            },
            mcmc: self.mcmc_draws.map(|draws| McmcOptions {
                draws,
                burn_in: self.burn_in.expect("resolved with the draw count"),
                seed: self.seed,
                ..Default::default()
            }),
        }
    }

    pub fn scenarios(&self) -> Vec<MeanFn> {
        match self.scenario {
            None => vec![],
            Some(Scenario::Curvature) => dprob::sim::curvature_grid(20)
                .into_iter()
                .map(|gamma| MeanFn::Curvature { gamma })
                .collect(),
            Some(Scenario::Case1) => vec![MeanFn::Case1],
            Some(Scenario::Case2) => vec![MeanFn::Case2],
            Some(Scenario::Case3) => vec![MeanFn::Case3],
            Some(Scenario::Case4) => vec![MeanFn::Case4],
        }
    }
}
