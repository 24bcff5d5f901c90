//! End-to-end analysis of one dataset: hyperparameters, candidate weights
//! under every scheme, and out-of-sample evaluation on held-out rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, effective_models, predict_all, predict_reference, rmse, top_model, PredictionSet};
use crate::baselines::{all_baselines, BaselineWeights};
use crate::candidate::{enumerate_subsets, fit_all, CandidateModel, PriorMode};
use crate::dataset::{split, Dataset};
use crate::dprob::{inclusion_probabilities, kl_estimate, make_report, KlEstimate, WeightReport};
use crate::error::{Error, Result};
use crate::hyper::{average_over_trace, optimize_eb, sample_mcmc, EbOptions, EbResult, McmcOptions};
use crate::kernel::{fit_reference, KernelConfig, ReferenceFit};

/// Names of the weighting schemes in reporting order.
pub const SCHEMES: [&str; 6] = ["d1", "d2", "unit_info", "hyper_g", "bic", "ew"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Prior of the candidate models inside the divergence weights.
    pub prior: PriorMode,
    pub eb: EbOptions,
    /// When set, KL estimates are averaged over posterior draws of the
    /// kernel hyperparameters, with the chain started at the EB optimum.
    pub mcmc: Option<McmcOptions>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            prior: PriorMode::Flat,
            eb: EbOptions::default(),
            mcmc: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSummary {
    pub draws: usize,
    pub acceptance_rate: f64,
    pub final_step: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub models: Vec<CandidateModel>,
    pub eb: EbResult,
    pub chain: Option<ChainSummary>,
    /// Reference fit at the EB optimum.
    pub reference: ReferenceFit,
    pub report: WeightReport,
    pub baselines: Vec<BaselineWeights>,
    /// Noise variance used by exponential weighting.
    pub sigma0_sq: f64,
}

impl Analysis {
    /// Conditional weights per scheme, in [`SCHEMES`] order.
    pub fn scheme_weights(&self) -> Vec<(&'static str, Vec<f64>)> {
        let mut out = vec![("d1", self.report.cond1()), ("d2", self.report.cond2())];
        for b in &self.baselines {
            let name = SCHEMES
                .iter()
                .find(|s| **s == b.method.as_str())
                .expect("baseline methods are listed in SCHEMES");
            out.push((name, b.probs.clone()));
        }
        out
    }
}

fn kl_estimates_at(ds: &Dataset, models: &[CandidateModel], cfg: &KernelConfig) -> Result<Vec<KlEstimate>> {
    let reference = fit_reference(ds.x(), ds.y(), cfg)?;
    let scalars = reference.scalars();
    fit_all(ds, models, &reference)?
        .iter()
        .map(|f| kl_estimate(f, &scalars))
        .collect()
}

fn flatten(kls: &[KlEstimate]) -> Vec<f64> {
    kls.iter().flat_map(|k| [k.kl1, k.kl2, k.g1, k.p1, k.g2, k.p2]).collect()
}

fn unflatten(v: &[f64]) -> Vec<KlEstimate> {
    v.chunks_exact(6)
        .map(|c| KlEstimate {
            kl1: c[0],
            kl2: c[1],
            g1: c[2],
            p1: c[3],
            g2: c[4],
            p2: c[5],
        })
        .collect()
}

pub fn analyze(ds: &Dataset, cfg: &AnalysisConfig) -> Result<Analysis> {
    let models = enumerate_subsets(ds.p(), cfg.prior)?;
    let eb = optimize_eb(ds.x(), ds.y(), &cfg.eb)?;
    let reference = fit_reference(ds.x(), ds.y(), &eb.cfg)?;
    let scalars = reference.scalars();

    let (kls, chain) = match &cfg.mcmc {
        None => {
            let fits = fit_all(ds, &models, &reference)?;
            let kls = fits.iter().map(|f| kl_estimate(f, &scalars)).collect::<Result<Vec<_>>>()?;
            (kls, None)
        }
        Some(opts) => {
            let opts = McmcOptions {
                start: opts.start.clone().or_else(|| Some(eb.cfg.clone())),
                ..opts.clone()
            };
            let trace = sample_mcmc(ds.x(), ds.y(), &opts)?;
            let mean = average_over_trace(&trace, |c| kl_estimates_at(ds, &models, c).map(|k| flatten(&k)))?;
            let summary = ChainSummary {
                draws: trace.draws.len(),
                acceptance_rate: trace.acceptance_rate,
                final_step: trace.final_step,
            };
            (unflatten(&mean), Some(summary))
        }
    };

    let report = make_report(&models, ds.names(), &kls, ds.n())?;
    let sigma0_sq = reference.sigma0_sq_mean();
    let baselines = all_baselines(ds, &models, sigma0_sq)?;
    Ok(Analysis {
        models,
        eb,
        chain,
        reference,
        report,
        baselines,
        sigma0_sq,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub scheme: String,
    pub inclusion: Vec<f64>,
    pub top: usize,
    pub top_label: String,
    pub top_weight: f64,
    /// Test RMSE of the highest-weight model.
    pub rmse_top: f64,
    /// Test RMSE of the weighted average over all models.
    pub rmse_aggregate: f64,
    pub effective_models: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestOutcome {
    pub reference_rmse: f64,
    pub schemes: Vec<SchemeOutcome>,
}

impl TestOutcome {
    pub fn scheme(&self, name: &str) -> Option<&SchemeOutcome> {
        self.schemes.iter().find(|s| s.scheme == name)
    }
}

/// Scores the analysis of `train` on the rows of `test`.
pub fn evaluate(analysis: &Analysis, train: &Dataset, test: &Dataset) -> Result<TestOutcome> {
    let preds = PredictionSet {
        models: predict_all(train, &analysis.models, test.x())?,
        reference: predict_reference(&analysis.reference, train.x(), train.y(), test.x())?,
    };
    let truth = test.y();
    let reference_rmse = rmse(&preds.reference, truth)?;
    let schemes = analysis
        .scheme_weights()
        .into_iter()
        .map(|(name, w)| {
            let top = top_model(&w, &analysis.models);
            let top_pred = preds.models.row(top).transpose();
            Ok(SchemeOutcome {
                scheme: name.to_string(),
                inclusion: inclusion_probabilities(&analysis.models, &w, train.p()),
                top,
                top_label: analysis.models[top].label(train.names()),
                top_weight: w[top],
                rmse_top: rmse(&top_pred, truth)?,
                rmse_aggregate: rmse(&aggregate(&preds, &w)?, truth)?,
                effective_models: effective_models(&w),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestOutcome {
        reference_rmse,
        schemes,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitStudyConfig {
    pub splits: usize,
    pub train_frac: f64,
    pub seed: u64,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub seed: u64,
    pub cfg: KernelConfig,
    pub logml: f64,
    pub outcome: TestOutcome,
}

/// Repeated random train/test splits. Split `i` uses seed `seed + i` for
/// both the partition and the hyperparameter search, which is re-run on
/// every training half.
pub fn split_study(
    ds: &Dataset,
    cfg: &SplitStudyConfig,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Vec<SplitRecord>> {
    if cfg.splits == 0 {
        return Err(Error::InvalidArgument("at least one split is required".into()));
    }
    (0..cfg.splits)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let run = || -> Result<SplitRecord> {
                let (train, test) = split(ds, cfg.train_frac, seed)?.apply(ds);
                let mut analysis_cfg = cfg.analysis.clone();
                analysis_cfg.eb.seed = seed;
                if let Some(m) = analysis_cfg.mcmc.as_mut() {
                    m.seed = seed;
                }
                let analysis = analyze(&train, &analysis_cfg)?;
                let outcome = evaluate(&analysis, &train, &test)?;
                Ok(SplitRecord {
                    index: i,
                    seed,
                    cfg: analysis.eb.cfg.clone(),
                    logml: analysis.eb.logml,
                    outcome,
                })
            };
            let record = run().map_err(|e| e.at_replication(i));
            progress(i);
            record
        })
        .collect()
}
