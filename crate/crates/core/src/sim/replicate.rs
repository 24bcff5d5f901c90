use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate_with_rng, SimScenario};
use crate::dprob::KlEstimate;
use crate::error::{Error, Result};
use crate::pipeline::{analyze, evaluate, AnalysisConfig, TestOutcome, SCHEMES};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub reps: usize,
    pub n_test: usize,
    pub seed: u64,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    /// Per model, in enumeration order (intercept-only first).
    pub kl: Vec<KlEstimate>,
    pub log_pi1: Vec<f64>,
    pub log_pi2: Vec<f64>,
    pub outcome: TestOutcome,
}

/// Runs `reps` independent train/test draws. Replication `r` uses seed
/// `seed + r` for its data and its hyperparameter search; any failure
/// aborts the run and names the replication.
pub fn run_replications(
    scn: &SimScenario,
    cfg: &ReplicationConfig,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Vec<ReplicationRecord>> {
    scn.validate()?;
    if cfg.reps == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if cfg.n_test == 0 {
        return Err(Error::InvalidArgument("test set must be non-empty".into()));
    }
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = cfg.seed.wrapping_add(rep as u64);
            let run = || -> Result<ReplicationRecord> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let train = generate_with_rng(scn, scn.n, &mut rng)?;
                let test = generate_with_rng(scn, cfg.n_test, &mut rng)?;
                let mut analysis_cfg = cfg.analysis.clone();
                analysis_cfg.eb.seed = seed;
                if let Some(m) = analysis_cfg.mcmc.as_mut() {
                    m.seed = seed;
                }
                let analysis = analyze(&train, &analysis_cfg)?;
                let outcome = evaluate(&analysis, &train, &test)?;
                let rows = &analysis.report.rows;
                Ok(ReplicationRecord {
                    rep,
                    seed,
                    kl: rows.iter().map(|r| r.kl).collect(),
                    log_pi1: rows.iter().map(|r| r.log_pi1).collect(),
                    log_pi2: rows.iter().map(|r| r.log_pi2).collect(),
                    outcome,
                })
            };
            let record = run().map_err(|e| e.at_replication(rep));
            progress(rep);
            record
        })
        .collect()
}

/// Averages over replications for one weighting scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    /// Mean inclusion probability of the (single) covariate, which equals
    /// the conditional weight of the full model.
    pub mean_full_weight: f64,
    pub mean_rmse_top: f64,
    pub mean_rmse_aggregate: f64,
    pub mean_effective_models: f64,
}

pub fn summarize(records: &[ReplicationRecord]) -> Vec<SchemeSummary> {
    let r = records.len() as f64;
    SCHEMES
        .iter()
        .filter_map(|name| {
            let outs: Vec<_> = records.iter().filter_map(|rec| rec.outcome.scheme(name)).collect();
            if outs.is_empty() {
                return None;
            }
            let mean = |f: &dyn Fn(&crate::pipeline::SchemeOutcome) -> f64| outs.iter().map(|o| f(o)).sum::<f64>() / r;
            Some(SchemeSummary {
                scheme: name.to_string(),
                mean_full_weight: mean(&|o| o.inclusion[0]),
                mean_rmse_top: mean(&|o| o.rmse_top),
                mean_rmse_aggregate: mean(&|o| o.rmse_aggregate),
                mean_effective_models: mean(&|o| o.effective_models),
            })
        })
        .collect()
}
