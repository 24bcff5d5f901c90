//! Classical model weights for comparison: Zellner g-prior Bayes factors
//! (unit information and hyper-g), BIC and exponential weighting.
//!
//! The g-prior here follows the usual Bayes-factor convention: covariates
//! are centred and the intercept carries a flat prior, so only `R²` and the
//! subset size matter. This is not the convention of [`crate::candidate`],
//! whose g-prior shrinks the intercept as well.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateModel, PriorMode, Projector};
use crate::dataset::Dataset;
use crate::dprob::normalize_log_weights;
use crate::error::{Error, Result};
use crate::quadrature::Rule;

/// Number of Gauss-Legendre nodes for the hyper-g integral.
pub const HYPER_G_NODES: usize = 201;

/// `RSS <= PERFECT_FIT_TOL · TSS` counts as an exact fit.
const PERFECT_FIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    UnitInfo,
    HyperG,
    Bic,
    Ew,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::UnitInfo, Method::HyperG, Method::Bic, Method::Ew];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::UnitInfo => "unit_info",
            Method::HyperG => "hyper_g",
            Method::Bic => "bic",
            Method::Ew => "ew",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    UnitInfo,
    HyperG,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineWeights {
    pub method: Method,
    pub log_scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl BaselineWeights {
    fn from_scores(method: Method, log_scores: Vec<f64>) -> Result<Self> {
        let probs = normalize_log_weights(&log_scores)?;
        Ok(Self {
            method,
            log_scores,
            probs,
        })
    }
}

/// Least-squares fit summary shared by all baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsFit {
    pub p_j: usize,
    pub rss: f64,
    pub tss: f64,
}

impl LsFit {
    pub fn r_squared(&self) -> f64 {
        1.0 - self.rss / self.tss
    }
}

pub fn least_squares(ds: &Dataset, model: &CandidateModel) -> Result<LsFit> {
    let flat = CandidateModel {
        subset: model.subset.clone(),
        prior: PriorMode::Flat,
    };
    let proj = Projector::new(ds.x(), &flat, ds.names())?;
    let y = ds.y();
    let fitted = proj.apply(y);
    let rss = (y - fitted).norm_squared();
    let mean = y.mean();
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    if !(tss > 0.0) {
        return Err(Error::InvalidData("response is constant".into()));
    }
    Ok(LsFit {
        p_j: model.size(),
        rss,
        tss,
    })
}

pub fn least_squares_all(ds: &Dataset, models: &[CandidateModel]) -> Result<Vec<LsFit>> {
    models.par_iter().map(|m| least_squares(ds, m)).collect()
}

/// Log Bayes factor of a model against the intercept-only model for fixed `g`.
pub fn log_bf_fixed_g(n: usize, p_j: usize, r2: f64, g: f64) -> f64 {
    let n1 = n as f64 - 1.0;
    0.5 * (n1 - p_j as f64) * g.ln_1p() - 0.5 * n1 * (g * (1.0 - r2)).ln_1p()
}

fn check_fit(n: usize, fit: &LsFit) -> Result<f64> {
    if n <= fit.p_j + 2 {
        return Err(Error::InvalidArgument(format!(
            "n = {n} too small for {} covariates",
            fit.p_j
        )));
    }
    if fit.rss <= PERFECT_FIT_TOL * fit.tss {
        return Err(Error::PerfectFit(fit.r_squared()));
    }
    Ok(fit.r_squared())
}

/// Hyper-g log Bayes factor: the fixed-g factor integrated against
/// `g/(1+g) ~ Beta(1, 1/2)`.
///
/// With `u = g/(1+g)` and `v = √(1-u)` the prior density and Jacobian
/// cancel exactly, leaving `∫₀¹ BF(g(v)) dv` with `g = (1-v²)/v²`. The
/// integrand is smooth on the closed interval, so Gauss-Legendre converges
/// quickly.
pub fn log_bf_hyper_g(n: usize, p_j: usize, r2: f64) -> f64 {
    let rule = Rule::new(HYPER_G_NODES, 0.0, 1.0);
    let terms: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&v, &w)| {
            let g = (1.0 - v * v) / (v * v);
            log_bf_fixed_g(n, p_j, r2, g) + w.ln()
        })
        .collect();
    log_sum_exp(&terms)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log marginal likelihood relative to the intercept-only model.
pub fn gprior_log_marginal(ds: &Dataset, model: &CandidateModel, mode: GMode) -> Result<f64> {
    if model.subset.is_empty() {
        return Ok(0.0);
    }
    let fit = least_squares(ds, model)?;
    gprior_score(ds.n(), &fit, mode)
}

fn gprior_score(n: usize, fit: &LsFit, mode: GMode) -> Result<f64> {
    if fit.p_j == 0 {
        return Ok(0.0);
    }
    let r2 = check_fit(n, fit)?;
    Ok(match mode {
        GMode::UnitInfo => log_bf_fixed_g(n, fit.p_j, r2, n as f64),
        GMode::HyperG => log_bf_hyper_g(n, fit.p_j, r2),
    })
}

/// `-BIC/2` with the intercept and variance counted as parameters.
pub fn bic_score(n: usize, fit: &LsFit) -> Result<f64> {
    if !(fit.rss > 0.0) {
        return Err(Error::ZeroResidual);
    }
    let nf = n as f64;
    let bic = nf * (fit.rss / nf).ln() + (fit.p_j as f64 + 2.0) * nf.ln();
    Ok(-0.5 * bic)
}

/// Exponential-weighting log score from an unbiased risk estimate.
pub fn ew_score(n: usize, fit: &LsFit, sigma0_sq: f64) -> f64 {
    -fit.rss / (4.0 * sigma0_sq) - (fit.p_j as f64 + 1.0) / 2.0 + n as f64 / 4.0
}

pub fn bic_weight_scores(ds: &Dataset, models: &[CandidateModel]) -> Result<BaselineWeights> {
    let fits = least_squares_all(ds, models)?;
    weights_from_fits(Method::Bic, ds.n(), &fits, None)
}

pub fn exponential_weights(ds: &Dataset, models: &[CandidateModel], sigma0_sq: f64) -> Result<BaselineWeights> {
    let fits = least_squares_all(ds, models)?;
    weights_from_fits(Method::Ew, ds.n(), &fits, Some(sigma0_sq))
}

/// Weights for one method from precomputed least-squares fits. `sigma0_sq`
/// is required for [`Method::Ew`] and ignored otherwise.
pub fn weights_from_fits(method: Method, n: usize, fits: &[LsFit], sigma0_sq: Option<f64>) -> Result<BaselineWeights> {
    if fits.is_empty() {
        return Err(Error::InvalidArgument("empty model list".into()));
    }
    let scores: Vec<f64> = match method {
        Method::UnitInfo => fits.iter().map(|f| gprior_score(n, f, GMode::UnitInfo)).collect::<Result<_>>()?,
        Method::HyperG => fits.par_iter().map(|f| gprior_score(n, f, GMode::HyperG)).collect::<Result<_>>()?,
        Method::Bic => fits.iter().map(|f| bic_score(n, f)).collect::<Result<_>>()?,
        Method::Ew => {
            let s2 = sigma0_sq.ok_or_else(|| Error::InvalidArgument("exponential weights need sigma0_sq".into()))?;
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::InvalidArgument(format!("sigma0_sq must be positive, got {s2}")));
            }
            fits.iter().map(|f| ew_score(n, f, s2)).collect()
        }
    };
    BaselineWeights::from_scores(method, scores)
}

/// All four baselines over the same model list.
pub fn all_baselines(ds: &Dataset, models: &[CandidateModel], sigma0_sq: f64) -> Result<Vec<BaselineWeights>> {
    let fits = least_squares_all(ds, models)?;
    Method::ALL
        .iter()
        .map(|&m| weights_from_fits(m, ds.n(), &fits, Some(sigma0_sq)))
        .collect()
}
