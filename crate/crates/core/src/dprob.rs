//! Analytic KL estimators between the reference and each candidate, the
//! resulting absolute and conditional weights, and evidence labels.

use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateModel, ModelFit};
use crate::error::{Error, Result};

/// Estimates within this distance below zero are rounding noise and clamp to zero.
pub const KL_CLAMP_TOL: f64 = 1e-10;

/// Reference-model scalars needed by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScalars {
    pub n: usize,
    pub tr_h: f64,
    pub logdet_i_plus_h: f64,
    pub rss0: f64,
}

/// Per-observation KL estimates with their fit/penalty split:
/// `kl_t = (g_t + p_t) / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub kl1: f64,
    pub kl2: f64,
    pub g1: f64,
    pub p1: f64,
    pub g2: f64,
    pub p2: f64,
}

fn check_inputs(fit: &ModelFit, r: &ReferenceScalars) -> Result<()> {
    if r.n <= 2 {
        return Err(Error::InvalidArgument(format!("need n > 2, got {}", r.n)));
    }
    if !(r.rss0 > 0.0) {
        return Err(Error::InvalidArgument(format!("reference residual sum of squares is {}", r.rss0)));
    }
    if !(fit.rssj > 0.0) {
        return Err(Error::ZeroResidual);
    }
    Ok(())
}

/// Posterior-mean estimator: returns `(g1, p1)`.
pub fn kl1_analytic(fit: &ModelFit, r: &ReferenceScalars) -> Result<(f64, f64)> {
    check_inputs(fit, r)?;
    let n = r.n as f64;
    let ratio = r.rss0 / fit.rssj;
    let g = 0.5 * n * (fit.qform_diff / fit.rssj + (r.tr_h + n) * ratio / (n - 2.0) - ratio.ln() - 1.0);
    Ok((g, 0.5 * fit.tr_hj))
}

/// Posterior-predictive estimator: returns `(g2, p2)`.
///
/// The reference log-determinant enters once, halved, as in the expectation
/// of the Gaussian KL between the two predictive densities.
pub fn kl2_analytic(fit: &ModelFit, r: &ReferenceScalars) -> Result<(f64, f64)> {
    check_inputs(fit, r)?;
    let n = r.n as f64;
    let ratio = r.rss0 / fit.rssj;
    let g = 0.5 * n * (fit.qform_pred / fit.rssj + ratio * fit.trace_pred / (n - 2.0) - ratio.ln() - 1.0)
        - 0.5 * r.logdet_i_plus_h;
    Ok((g, 0.5 * fit.logdet_i_plus_hj))
}

fn clamp_kl(v: f64) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::InvalidArgument("KL estimate is NaN".into()));
    }
    if v < -KL_CLAMP_TOL {
        return Err(Error::NegativeKl(v));
    }
    Ok(v.max(0.0))
}

pub fn kl_estimate(fit: &ModelFit, r: &ReferenceScalars) -> Result<KlEstimate> {
    let (g1, p1) = kl1_analytic(fit, r)?;
    let (g2, p2) = kl2_analytic(fit, r)?;
    let n = r.n as f64;
    Ok(KlEstimate {
        kl1: clamp_kl((g1 + p1) / n)?,
        kl2: clamp_kl((g2 + p2) / n)?,
        g1,
        p1,
        g2,
        p2,
    })
}

/// Strength of the evidence of a lack of fit carried by an absolute weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    VeryStrong,
    Strong,
    Positive,
    BareMention,
}

impl Evidence {
    pub fn from_log_weight(log_w: f64) -> Self {
        if log_w < -(150f64.ln()) {
            Evidence::VeryStrong
        } else if log_w < -(20f64.ln()) {
            Evidence::Strong
        } else if log_w < -(3f64.ln()) {
            Evidence::Positive
        } else {
            Evidence::BareMention
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Evidence::VeryStrong => "very strong",
            Evidence::Strong => "strong",
            Evidence::Positive => "positive",
            Evidence::BareMention => "bare mention",
        }
    }
}

impl std::fmt::Display for Evidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normalises log weights with the log-sum-exp shift.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.is_empty() {
        return Err(Error::InvalidArgument("no weights to normalise".into()));
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidArgument(format!("largest log weight is {max}")));
    }
    let exps: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let w: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::WeightSum(sum));
    }
    Ok(w)
}

/// `Σ_{models containing c} w` for each covariate `c`.
pub fn inclusion_probabilities(models: &[CandidateModel], weights: &[f64], p: usize) -> Vec<f64> {
    let mut inc = vec![0.0; p];
    for (m, w) in models.iter().zip(weights) {
        for &c in &m.subset {
            inc[c] += w;
        }
    }
    inc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightRow {
    pub model: String,
    pub subset: Vec<usize>,
    pub kl: KlEstimate,
    /// `-n · kl1`, the natural log of the absolute weight.
    pub log_pi1: f64,
    pub log_pi2: f64,
    pub cond_pi1: f64,
    pub cond_pi2: f64,
    pub evidence1: Evidence,
    pub evidence2: Evidence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightReport {
    pub n: usize,
    pub covariates: Vec<String>,
    pub rows: Vec<WeightRow>,
    pub inclusion1: Vec<f64>,
    pub inclusion2: Vec<f64>,
}

impl WeightReport {
    pub fn cond1(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cond_pi1).collect()
    }

    pub fn cond2(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cond_pi2).collect()
    }

    /// Row indices sorted by decreasing weight under `key`, ties to the
    /// smaller model and then to enumeration order.
    pub fn ranked_by(&self, key: impl Fn(&WeightRow) -> f64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| {
            key(&self.rows[b])
                .total_cmp(&key(&self.rows[a]))
                .then(self.rows[a].subset.len().cmp(&self.rows[b].subset.len()))
                .then(a.cmp(&b))
        });
        idx
    }
}

pub fn make_report(
    models: &[CandidateModel],
    names: &[String],
    kls: &[KlEstimate],
    n: usize,
) -> Result<WeightReport> {
    if kls.is_empty() {
        return Err(Error::InvalidArgument("empty model list".into()));
    }
    if models.len() != kls.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: kls.len(),
        });
    }
    let log1: Vec<f64> = kls.iter().map(|k| -(k.g1 + k.p1)).collect();
    let log2: Vec<f64> = kls.iter().map(|k| -(k.g2 + k.p2)).collect();
    let cond1 = normalize_log_weights(&log1)?;
    let cond2 = normalize_log_weights(&log2)?;
    let rows = models
        .iter()
        .enumerate()
        .map(|(i, m)| WeightRow {
            model: m.label(names),
            subset: m.subset.clone(),
            kl: kls[i],
            log_pi1: log1[i],
            log_pi2: log2[i],
            cond_pi1: cond1[i],
            cond_pi2: cond2[i],
            evidence1: Evidence::from_log_weight(log1[i]),
            evidence2: Evidence::from_log_weight(log2[i]),
        })
        .collect();
    Ok(WeightReport {
        n,
        covariates: names.to_vec(),
        rows,
        inclusion1: inclusion_probabilities(models, &cond1, names.len()),
        inclusion2: inclusion_probabilities(models, &cond2, names.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::{enumerate_subsets, fit_all, fit_with_hat, PriorMode};
    use crate::dataset::Dataset;
    use crate::kernel::{fit_reference, KernelConfig, ReferenceFit};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn problem(n: usize, p: usize, signal: f64, seed: u64) -> (Dataset, ReferenceFit) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>());
        let y = DVector::from_fn(n, |i, _| {
            5.0 + signal * (x[(i, 0)] + (3.0 * x[(i, 0)]).sin()) + noise.sample(&mut rng)
        });
        let names = (0..p).map(|c| format!("x{c}")).collect();
        let ds = Dataset::from_unit(names, x, y).unwrap();
        let lam = rng.gen_range(0.2..2.0);
        let tau = rng.gen_range(0.3..5.0);
        let fit = fit_reference(ds.x(), ds.y(), &KernelConfig::new(vec![lam; p], tau).unwrap()).unwrap();
        (ds, fit)
    }

    fn estimates(ds: &Dataset, r: &ReferenceFit, prior: PriorMode) -> (Vec<CandidateModel>, Vec<KlEstimate>) {
        let models = enumerate_subsets(ds.p(), prior).unwrap();
        let fits = fit_all(ds, &models, r).unwrap();
        let kls = fits.iter().map(|f| kl_estimate(f, &r.scalars()).unwrap()).collect();
        (models, kls)
    }

    #[test]
    fn reference_as_candidate_collapses() {
        let (ds, r) = problem(40, 2, 2.0, 1);
        let fit = fit_with_hat(&r.hat, ds.y(), &r, 0).unwrap();
        let scalars = ReferenceScalars { tr_h: fit.tr_hj, ..r.scalars() };
        let (g1, p1) = kl1_analytic(&fit, &scalars).unwrap();
        let n = 40.0;
        assert_relative_eq!(g1, 0.5 * n * (fit.tr_hj + 2.0) / (n - 2.0), max_relative = 1e-10);
        assert_relative_eq!(p1, fit.tr_hj / 2.0);
    }

    #[test]
    fn decomposition_and_flat_penalties() {
        let (ds, r) = problem(30, 3, 1.0, 2);
        let (models, kls) = estimates(&ds, &r, PriorMode::Flat);
        for (m, k) in models.iter().zip(&kls) {
            let q = (m.size() + 1) as f64;
            assert!((k.kl1 * 30.0 - (k.g1 + k.p1)).abs() < 1e-10);
            assert!((k.kl2 * 30.0 - (k.g2 + k.p2)).abs() < 1e-10);
            assert_relative_eq!(k.p1, q / 2.0, epsilon = 1e-12);
            assert_relative_eq!(k.p2, q * 2f64.ln() / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_residual_is_an_error() {
        let (ds, r) = problem(10, 1, 1.0, 3);
        let mut fit = crate::candidate::fit_candidate(
            &ds,
            &CandidateModel::new(vec![0], PriorMode::Flat, 1).unwrap(),
            &r,
        )
        .unwrap();
        fit.rssj = 0.0;
        assert!(matches!(kl1_analytic(&fit, &r.scalars()), Err(Error::ZeroResidual)));
        assert!(matches!(kl2_analytic(&fit, &r.scalars()), Err(Error::ZeroResidual)));
    }

    #[test]
    fn clamping() {
        assert_eq!(clamp_kl(-5e-11).unwrap(), 0.0);
        assert!(matches!(clamp_kl(-1e-9), Err(Error::NegativeKl(_))));
    }

    #[test]
    fn evidence_thresholds() {
        assert_eq!(Evidence::from_log_weight(1e-22f64.ln()), Evidence::VeryStrong);
        assert_eq!(Evidence::from_log_weight((1.0f64 / 150.0).ln()), Evidence::Strong);
        assert_eq!(Evidence::from_log_weight(0.01f64.ln()), Evidence::Strong);
        assert_eq!(Evidence::from_log_weight(0.05f64.ln()), Evidence::Positive);
        assert_eq!(Evidence::from_log_weight(0.2f64.ln()), Evidence::Positive);
        assert_eq!(Evidence::from_log_weight((1.0f64 / 3.0).ln()), Evidence::BareMention);
        assert_eq!(Evidence::from_log_weight(0.0), Evidence::BareMention);
    }

    #[test]
    fn normalisation_edge_cases() {
        assert_eq!(normalize_log_weights(&[-1e4]).unwrap(), vec![1.0]);
        assert_eq!(normalize_log_weights(&[-3.0, -3.0]).unwrap(), vec![0.5, 0.5]);
        assert!(normalize_log_weights(&[]).is_err());
        let w = normalize_log_weights(&[-800.0, -801.0]).unwrap();
        assert_relative_eq!(w[0] / w[1], 1f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn report_inclusion_and_ranking() {
        let (ds, r) = problem(40, 3, 3.0, 4);
        let (models, kls) = estimates(&ds, &r, PriorMode::Flat);
        let report = make_report(&models, ds.names(), &kls, 40).unwrap();
        for c in 0..3 {
            let manual: f64 = report.rows.iter().filter(|row| row.subset.contains(&c)).map(|row| row.cond_pi1).sum();
            assert_relative_eq!(report.inclusion1[c], manual, epsilon = 1e-15);
        }
        let ranked = report.ranked_by(|row| row.cond_pi1);
        assert!(ranked.windows(2).all(|w| report.rows[w[0]].cond_pi1 >= report.rows[w[1]].cond_pi1));
        assert!(make_report(&models[..1], ds.names(), &kls, 40).is_err());
    }

    #[test]
    fn nested_penalty_gaps_on_noise() {
        let (ds, r) = problem(50, 3, 0.0, 6);
        let (models, kls) = estimates(&ds, &r, PriorMode::Flat);
        for (a, ma) in models.iter().enumerate() {
            for (b, mb) in models.iter().enumerate() {
                if ma.subset.iter().all(|c| mb.contains(*c)) {
                    let gap = mb.size() as f64 - ma.size() as f64;
                    assert_eq!(kls[a].p1 - kls[b].p1, -gap / 2.0);
                    assert_relative_eq!(kls[a].p2 - kls[b].p2, -2f64.ln() * gap / 2.0, epsilon = 1e-14);
                }
            }
        }
    }

    /// Samples the posterior of both models and averages the conditional
    /// KL between their Gaussian sampling densities.
    #[test]
    fn kl1_agrees_with_posterior_sampling() {
        use rand_distr::Gamma;
        let (ds, r) = problem(30, 1, 1.0, 11);
        let n = 30usize;
        let nf = n as f64;
        let model = CandidateModel::new(vec![0], PriorMode::Flat, 1).unwrap();
        let proj = crate::candidate::Projector::new(ds.x(), &model, ds.names()).unwrap();
        let fit = crate::candidate::fit_projector(&proj, ds.y(), &r, 1);
        let (g1, p1) = kl1_analytic(&fit, &r.scalars()).unwrap();
        let analytic = (g1 + p1) / nf;

        let hj_y = proj.apply(ds.y());
        let sqrt_h = r.hat_eigvals().map(|v| v.max(0.0).sqrt());
        let inv_gamma = Gamma::new(nf / 2.0, 1.0).unwrap();
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 40_000;
        let mut acc = Vec::with_capacity(draws);
        for _ in 0..draws {
            let s0 = r.rss0 / 2.0 / inv_gamma.sample(&mut rng);
            let sj = fit.rssj / 2.0 / inv_gamma.sample(&mut rng);
            let e0 = DVector::from_fn(n, |i, _| sqrt_h[i] * z.sample(&mut rng));
            let mu0 = &r.hy + &r.eigen.eigvecs * e0 * s0.sqrt();
            let ej = DVector::from_fn(2, |_, _| z.sample(&mut rng));
            let muj = &hj_y + &proj.q * ej * sj.sqrt();
            let d2 = (muj - mu0).norm_squared();
            acc.push(0.5 * (s0 / sj + d2 / (nf * sj) - 1.0 + (sj / s0).ln()));
        }
        let mean = acc.iter().sum::<f64>() / draws as f64;
        let sd = (acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let se = sd / (draws as f64).sqrt();
        assert!((mean - analytic).abs() < 3.0 * se, "mc {mean} ± {se}, analytic {analytic}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn estimates_are_nonnegative_and_ordered(seed in 0u64..100_000, signal in 0.0f64..6.0, g in prop::option::of(0.5f64..200.0)) {
            let (ds, r) = problem(35, 3, signal, seed);
            let prior = g.map_or(PriorMode::Flat, |g| PriorMode::GPrior { g });
            let (models, kls) = estimates(&ds, &r, prior);
            for k in &kls {
                prop_assert!(k.kl1 >= 0.0 && k.kl2 >= 0.0);
                prop_assert!(k.kl2 <= k.kl1 + 1e-12, "{k:?}");
            }
            let report = make_report(&models, ds.names(), &kls, 35).unwrap();
            let s1: f64 = report.cond1().iter().sum();
            let s2: f64 = report.cond2().iter().sum();
            prop_assert!((s1 - 1.0).abs() <= 1e-12 && (s2 - 1.0).abs() <= 1e-12);
            prop_assert!(report.cond1().iter().all(|w| (0.0..=1.0).contains(w)));
        }

        #[test]
        fn shift_invariance_is_exact(shift in -50.0f64..50.0) {
            let logs = [-12.5, -3.25, -7.0, -0.5, -40.0];
            let shifted: Vec<f64> = logs.iter().map(|l| l + shift.round()).collect();
            prop_assert_eq!(normalize_log_weights(&logs).unwrap(), normalize_log_weights(&shifted).unwrap());
        }
    }
}
