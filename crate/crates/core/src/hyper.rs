//! Kernel hyperparameter selection: empirical Bayes (multi-start Nelder-Mead
//! on the log marginal likelihood) or random-walk Metropolis draws averaged
//! through the KL estimators.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{log_marginal, log_marginal_chol, KernelConfig};
use crate::optim::{nelder_mead, NelderMeadOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
    pub ftol: f64,
    /// Range for log-uniform starting bandwidths (covariates on `[0, 1]`).
    pub lambda_range: (f64, f64),
    /// Range for log-uniform starting amplitudes (relative to the noise sd).
    pub tau_range: (f64, f64),
}

impl Default for EbOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            max_evals: 2000,
            ftol: 1e-8,
            lambda_range: (0.05, 5.0),
            tau_range: (0.1, 10.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start: Vec<f64>,
    pub logml: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbResult {
    pub cfg: KernelConfig,
    pub logml: f64,
    pub n_restarts_used: usize,
    pub converged: Vec<bool>,
    pub restarts: Vec<RestartSummary>,
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo.ln()..hi.ln())
}

/// Maximises the log marginal likelihood over `(log lambda, log tau)`.
///
/// Restart `r` draws its starting point from a generator seeded with
/// `seed + r`; the result does not depend on how restarts are scheduled.
pub fn optimize_eb(x: &DMatrix<f64>, y: &DVector<f64>, opts: &EbOptions) -> Result<EbResult> {
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let p = x.ncols();
    let nm = NelderMeadOptions {
        ftol: opts.ftol,
        max_evals: opts.max_evals,
        initial_step: 0.5,
    };
    let objective = |theta: &[f64]| -> f64 {
        match KernelConfig::from_log_params(theta) {
            Ok(cfg) => log_marginal_chol(x, y, &cfg).map(|v| -v).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };

    let runs: Vec<(Vec<f64>, crate::optim::Minimum)> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            let mut start: Vec<f64> = (0..p).map(|_| log_uniform(&mut rng, opts.lambda_range)).collect();
            start.push(log_uniform(&mut rng, opts.tau_range));
            let m = nelder_mead(objective, &start, &nm);
            (start, m)
        })
        .collect();

    let restarts: Vec<RestartSummary> = runs
        .iter()
        .map(|(start, m)| RestartSummary {
            start: start.clone(),
            logml: -m.f,
            evals: m.evals,
            converged: m.converged,
        })
        .collect();

    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (_, m))| m.f.is_finite())
        .min_by(|a, b| a.1 .1.f.total_cmp(&b.1 .1.f).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(Error::OptimizationFailed {
            restarts: opts.restarts,
            trace: restarts.iter().map(|r| r.logml).collect(),
        });
    };
    let cfg = KernelConfig::from_log_params(&runs[best].1.x)?;
    let logml = log_marginal(x, y, &cfg)?;
    Ok(EbResult {
        cfg,
        logml,
        n_restarts_used: opts.restarts,
        converged: restarts.iter().map(|r| r.converged).collect(),
        restarts,
    })
}

/// Independent gamma priors on each bandwidth and on the amplitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 2.0, rate: 1.0 }
    }
}

impl GammaPrior {
    /// Log density of `log v` when `v` has this prior (Jacobian included),
    /// up to a constant.
    fn log_density_of_log(&self, theta: f64) -> f64 {
        self.shape * theta - self.rate * theta.exp()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcOptions {
    pub draws: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub step: f64,
    pub target_acceptance: f64,
    pub prior: GammaPrior,
    /// Starting point; unit bandwidths and amplitude when absent.
    pub start: Option<KernelConfig>,
    /// Set to false to sample the prior alone.
    pub use_likelihood: bool,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            draws: 2000,
            burn_in: 1000,
            seed: 0,
            step: 0.15,
            target_acceptance: 0.3,
            prior: GammaPrior::default(),
            start: None,
            use_likelihood: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcTrace {
    pub draws: Vec<KernelConfig>,
    /// Fraction of accepted proposals after burn-in.
    pub acceptance_rate: f64,
    /// Proposal scale in effect after burn-in adaptation.
    pub final_step: f64,
    pub seed: u64,
}

const ADAPT_BATCH: usize = 50;

/// Random-walk Metropolis on `(log lambda, log tau)`.
///
/// The proposal is isotropic Gaussian. During burn-in its scale is adapted
/// after every batch of 50 proposals toward the target acceptance rate;
/// after burn-in it is frozen.
pub fn sample_mcmc(x: &DMatrix<f64>, y: &DVector<f64>, opts: &McmcOptions) -> Result<McmcTrace> {
    if opts.draws == 0 {
        return Err(Error::InvalidArgument("at least one draw is required".into()));
    }
    let p = x.ncols();
    let log_target = |theta: &[f64]| -> f64 {
        let prior: f64 = theta.iter().map(|t| opts.prior.log_density_of_log(*t)).sum();
        if !opts.use_likelihood {
            return prior;
        }
        match KernelConfig::from_log_params(theta).and_then(|cfg| log_marginal_chol(x, y, &cfg)) {
            Ok(lm) => lm + prior,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut theta = match &opts.start {
        Some(cfg) => {
            cfg.validate()?;
            if cfg.lambda.len() != p {
                return Err(Error::InvalidKernel("start has wrong dimension".into()));
            }
            cfg.to_log_params()
        }
        None => vec![0.0; p + 1],
    };
    let mut current = log_target(&theta);
    if !current.is_finite() {
        return Err(Error::NonFiniteTarget);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut step = opts.step;
    let mut batch_accepts = 0usize;
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(opts.draws);
    let total = opts.burn_in + opts.draws;

    for it in 0..total {
        let proposal: Vec<f64> = theta
            .iter()
            .map(|t| t + step * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cand = log_target(&proposal);
        let u: f64 = rng.gen();
        let accept = cand.is_finite() && u.ln() < cand - current;
        if accept {
            theta = proposal;
            current = cand;
        }

        if it < opts.burn_in {
            batch_accepts += accept as usize;
            if (it + 1) % ADAPT_BATCH == 0 {
                let rate = batch_accepts as f64 / ADAPT_BATCH as f64;
                step *= (rate - opts.target_acceptance).exp();
                batch_accepts = 0;
            }
        } else {
            accepted += accept as usize;
            draws.push(KernelConfig::from_log_params(&theta)?);
        }
    }

    Ok(McmcTrace {
        draws,
        acceptance_rate: accepted as f64 / opts.draws as f64,
        final_step: step,
        seed: opts.seed,
    })
}

/// Arithmetic mean of a per-draw KL evaluator over a trace.
pub fn average_kl_over_trace<F>(trace: &McmcTrace, kl_eval: F) -> Result<f64>
where
    F: Fn(&KernelConfig) -> Result<f64> + Sync,
{
    let per_model = average_over_trace(trace, |cfg| kl_eval(cfg).map(|v| vec![v]))?;
    Ok(per_model[0])
}

/// Element-wise mean of a vector-valued evaluator over a trace. Draws are
/// evaluated in parallel and summed in draw order.
pub fn average_over_trace<F>(trace: &McmcTrace, eval: F) -> Result<Vec<f64>>
where
    F: Fn(&KernelConfig) -> Result<Vec<f64>> + Sync,
{
    if trace.draws.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let values: Vec<Vec<f64>> = trace
        .draws
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| eval(cfg).map_err(|e| e.at_draw(i)))
        .collect::<Result<_>>()?;
    // Deviations from the first draw are summed so that a trace of
    // identical draws averages to that draw exactly.
    let first = &values[0];
    let mut dev = vec![0.0; first.len()];
    for (i, v) in values.iter().enumerate() {
        if v.len() != first.len() {
            return Err(Error::LengthMismatch { left: v.len(), right: first.len() }.at_draw(i));
        }
        for ((d, x), f) in dev.iter_mut().zip(v).zip(first) {
            *d += x - f;
        }
    }
    let j = values.len() as f64;
    Ok(first.iter().zip(dev).map(|(f, d)| f + d / j).collect())
}
