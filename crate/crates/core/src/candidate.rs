//! Candidate linear models: covariate subsets with an implicit intercept,
//! their hat matrices and the per-model scalars used by the KL estimators.
//!
//! Under the flat prior the hat matrix is the orthogonal projector `QQ'`
//! onto the span of `[1, X_S]`. Under the g-prior with `Σ⁻¹ = X'X / g`
//! applied to the whole coefficient vector (intercept included) it is the
//! same projector scaled by `g / (1 + g)`. Every candidate is therefore a
//! scaled projector, which keeps all traces and inverses in closed form.

use nalgebra::{DMatrix, DVector, LU};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::ReferenceFit;

/// Largest covariate count accepted by [`enumerate_subsets`].
pub const MAX_COVARIATES: usize = 20;

/// Relative size of a QR pivot below which a column counts as collinear.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PriorMode {
    Flat,
    GPrior { g: f64 },
}

impl PriorMode {
    /// Factor multiplying the projector: 1 for the flat prior, `g/(1+g)` otherwise.
    pub fn shrinkage(&self) -> Result<f64> {
        match *self {
            PriorMode::Flat => Ok(1.0),
            PriorMode::GPrior { g } if g > 0.0 && g.is_finite() => Ok(g / (1.0 + g)),
            PriorMode::GPrior { g } => Err(Error::InvalidArgument(format!("g must be positive and finite, got {g}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    /// Zero-based covariate indices in increasing order. Empty is the
    /// intercept-only model.
    pub subset: Vec<usize>,
    pub prior: PriorMode,
}

impl CandidateModel {
    pub fn new(subset: Vec<usize>, prior: PriorMode, p: usize) -> Result<Self> {
        let mut sorted = subset.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != subset.len() {
            return Err(Error::InvalidArgument("duplicate covariate index in subset".into()));
        }
        if let Some(&bad) = sorted.iter().find(|&&c| c >= p) {
            return Err(Error::InvalidArgument(format!("covariate index {bad} out of range for p = {p}")));
        }
        Ok(Self { subset: sorted, prior })
    }

    pub fn size(&self) -> usize {
        self.subset.len()
    }

    pub fn contains(&self, covariate: usize) -> bool {
        self.subset.binary_search(&covariate).is_ok()
    }

    /// Comma-joined covariate names; the intercept-only model is `"(null)"`.
    pub fn label(&self, names: &[String]) -> String {
        if self.subset.is_empty() {
            return "(null)".to_string();
        }
        self.subset.iter().map(|&c| names[c].as_str()).collect::<Vec<_>>().join(",")
    }
}

/// All `2^p` subsets, model `k` containing covariate `c` iff bit `c` of `k` is set.
pub fn enumerate_subsets(p: usize, prior: PriorMode) -> Result<Vec<CandidateModel>> {
    if p == 0 {
        return Err(Error::InvalidArgument("no covariates to enumerate".into()));
    }
    if p > MAX_COVARIATES {
        return Err(Error::TooManyCovariates { p, cap: MAX_COVARIATES });
    }
    prior.shrinkage()?;
    Ok((0..1usize << p)
        .map(|k| CandidateModel {
            subset: (0..p).filter(|c| k >> c & 1 == 1).collect(),
            prior,
        })
        .collect())
}

/// Thin QR of the design `[1, X_S]` plus the prior's shrinkage factor.
#[derive(Debug, Clone)]
pub struct Projector {
    /// Orthonormal basis of the design's column span, `n x (p_j + 1)`.
    pub q: DMatrix<f64>,
    /// Upper-triangular factor with `design = Q R`.
    pub r: DMatrix<f64>,
    pub shrink: f64,
}

pub fn design_matrix(x: &DMatrix<f64>, subset: &[usize]) -> DMatrix<f64> {
    let mut d = DMatrix::from_element(x.nrows(), subset.len() + 1, 1.0);
    for (k, &c) in subset.iter().enumerate() {
        d.set_column(k + 1, &x.column(c));
    }
    d
}

impl Projector {
    pub fn new(x: &DMatrix<f64>, model: &CandidateModel, names: &[String]) -> Result<Self> {
        let shrink = model.prior.shrinkage()?;
        let design = design_matrix(x, &model.subset);
        if design.nrows() < design.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{} rows cannot support {} coefficients",
                design.nrows(),
                design.ncols()
            )));
        }
        let qr = design.clone().qr();
        let r = qr.r();
        for k in 0..design.ncols() {
            let scale = design.column(k).norm();
            if r[(k, k)].abs() <= RANK_TOL * scale.max(f64::MIN_POSITIVE) {
                let column = if k == 0 {
                    "(intercept)".to_string()
                } else {
                    names.get(model.subset[k - 1]).cloned().unwrap_or_else(|| format!("#{}", model.subset[k - 1]))
                };
                return Err(Error::RankDeficient { column });
            }
        }
        Ok(Self { q: qr.q(), r, shrink })
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// `H_j v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (&self.q * self.q.tr_mul(v)) * self.shrink
    }

    /// Posterior mean of the coefficient vector `(intercept, β_S)`.
    pub fn coefficients(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.tr_mul(y) * self.shrink;
        self.r
            .solve_upper_triangular(&qty)
            .expect("pivots were checked when the projector was built")
    }

    /// Dense `H_j`, for tests and small problems.
    pub fn dense(&self) -> DMatrix<f64> {
        (&self.q * self.q.transpose()) * self.shrink
    }
}

/// Scalars of one candidate model entering the KL estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub p_j: usize,
    /// `tr(H_j)`.
    pub tr_hj: f64,
    /// `log det(I + H_j)`.
    pub logdet_i_plus_hj: f64,
    /// `y'(I - H_j) y`.
    pub rssj: f64,
    /// `y'(H_j - H)²y`.
    pub qform_diff: f64,
    /// `y'(H_j - H)'(I + H_j)⁻¹(H_j - H)y`.
    pub qform_pred: f64,
    /// `tr{(I + H_j)⁻¹(I + H)}`.
    pub trace_pred: f64,
}

/// Fits one candidate against a reference fit on the same rows.
pub fn fit_candidate(ds: &Dataset, model: &CandidateModel, reference: &ReferenceFit) -> Result<ModelFit> {
    let proj = Projector::new(ds.x(), model, ds.names())?;
    Ok(fit_projector(&proj, ds.y(), reference, model.size()))
}

pub fn fit_projector(proj: &Projector, y: &DVector<f64>, reference: &ReferenceFit, p_j: usize) -> ModelFit {
    let n = y.len() as f64;
    let s = proj.shrink;
    let rank = proj.rank() as f64;
    let c = s / (1.0 + s);

    let qty = proj.q.tr_mul(y);
    let resid = y - &proj.q * &qty;
    let rssj = resid.norm_squared() + (1.0 - s) * qty.norm_squared();

    let diff = &proj.q * &qty * s - &reference.hy;
    let qform_diff = diff.norm_squared();
    let qform_pred = (qform_diff - c * proj.q.tr_mul(&diff).norm_squared()).max(0.0);

    let hq = &reference.hat * &proj.q;
    let tr_qhq = proj.q.component_mul(&hq).sum();
    let trace_pred = n + reference.tr_h - c * (rank + tr_qhq);

    ModelFit {
        p_j,
        tr_hj: s * rank,
        logdet_i_plus_hj: rank * s.ln_1p(),
        rssj,
        qform_diff,
        qform_pred,
        trace_pred,
    }
}

/// Fits every model in parallel; output order matches `models`.
pub fn fit_all(ds: &Dataset, models: &[CandidateModel], reference: &ReferenceFit) -> Result<Vec<ModelFit>> {
    models.par_iter().map(|m| fit_candidate(ds, m, reference)).collect()
}

/// Computes the six scalars from an arbitrary dense candidate hat matrix
/// with direct inverses. Quadratic in memory and cubic in time; intended as
/// an independent check and for injecting special candidates.
pub fn fit_with_hat(hat_j: &DMatrix<f64>, y: &DVector<f64>, reference: &ReferenceFit, p_j: usize) -> Result<ModelFit> {
    let n = y.len();
    if hat_j.nrows() != n || hat_j.ncols() != n {
        return Err(Error::LengthMismatch { left: hat_j.nrows(), right: n });
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let i_plus_hj = &eye + hat_j;
    let lu = LU::new(i_plus_hj.clone());
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Factorization("I + H_j is singular".into()))?;
    let det = LU::new(i_plus_hj).determinant();
    let diff = (hat_j - &reference.hat) * y;
    let resid = (&eye - hat_j) * y;
    Ok(ModelFit {
        p_j,
        tr_hj: hat_j.trace(),
        logdet_i_plus_hj: det.ln(),
        rssj: y.dot(&resid),
        qform_diff: diff.norm_squared(),
        qform_pred: diff.dot(&(&inv * &diff)),
        trace_pred: (&inv * (&eye + &reference.hat)).trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{fit_reference, KernelConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, p: usize, seed: u64) -> (Dataset, ReferenceFit) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>());
        let y = DVector::from_fn(n, |i, _| 2.0 + 3.0 * x[(i, 0)] + rng.gen::<f64>() - 0.5);
        let names = (0..p).map(|c| format!("x{c}")).collect();
        let ds = Dataset::from_unit(names, x, y).unwrap();
        let cfg = KernelConfig::new(vec![0.7; p], 2.0).unwrap();
        let fit = fit_reference(ds.x(), ds.y(), &cfg).unwrap();
        (ds, fit)
    }

    #[test]
    fn enumeration_order_and_sizes() {
        let models = enumerate_subsets(8, PriorMode::Flat).unwrap();
        assert_eq!(models.len(), 256);
        assert!(models[0].subset.is_empty());
        assert_eq!(models[5].subset, vec![0, 2]);
        assert_eq!(models[255].subset, (0..8).collect::<Vec<_>>());
        let one = enumerate_subsets(1, PriorMode::Flat).unwrap();
        assert_eq!(one.len(), 2);
        assert!(enumerate_subsets(0, PriorMode::Flat).is_err());
        assert!(matches!(
            enumerate_subsets(21, PriorMode::Flat),
            Err(Error::TooManyCovariates { p: 21, cap: 20 })
        ));
    }

    #[test]
    fn model_validation_and_labels() {
        assert!(CandidateModel::new(vec![1, 1], PriorMode::Flat, 3).is_err());
        assert!(CandidateModel::new(vec![3], PriorMode::Flat, 3).is_err());
        let m = CandidateModel::new(vec![2, 0], PriorMode::Flat, 3).unwrap();
        assert_eq!(m.subset, vec![0, 2]);
        let names: Vec<String> = ["vh", "wind", "temp"].iter().map(|s| s.to_string()).collect();
        assert_eq!(m.label(&names), "vh,temp");
        assert!(PriorMode::GPrior { g: 0.0 }.shrinkage().is_err());
    }

    #[test]
    fn null_model_is_the_mean() {
        let (ds, reference) = problem(12, 2, 1);
        let null = CandidateModel::new(vec![], PriorMode::Flat, 2).unwrap();
        let fit = fit_candidate(&ds, &null, &reference).unwrap();
        let mean = ds.y().mean();
        let tss: f64 = ds.y().iter().map(|v| (v - mean).powi(2)).sum();
        assert_relative_eq!(fit.rssj, tss, max_relative = 1e-12);
        let proj = Projector::new(ds.x(), &null, ds.names()).unwrap();
        let h = proj.dense();
        assert!(h.iter().all(|v| (v - 1.0 / 12.0).abs() < 1e-14));
    }

    #[test]
    fn matches_dense_oracle() {
        let (ds, reference) = problem(6, 3, 9);
        for prior in [PriorMode::Flat, PriorMode::GPrior { g: 4.0 }] {
            for model in enumerate_subsets(3, prior).unwrap().into_iter().filter(|m| m.size() <= 3) {
                let fast = fit_candidate(&ds, &model, &reference).unwrap();
                // H_j = X (X'X + Σ⁻¹)⁻¹ X' with Σ⁻¹ built from the prior
                let xd = design_matrix(ds.x(), &model.subset);
                let xtx = xd.transpose() * &xd;
                let precision = match prior {
                    PriorMode::Flat => DMatrix::zeros(xtx.nrows(), xtx.ncols()),
                    PriorMode::GPrior { g } => &xtx / g,
                };
                let hat_j = &xd * (&xtx + precision).try_inverse().unwrap() * xd.transpose();
                let slow = fit_with_hat(&hat_j, ds.y(), &reference, model.size()).unwrap();
                for (a, b) in [
                    (fast.tr_hj, slow.tr_hj),
                    (fast.logdet_i_plus_hj, slow.logdet_i_plus_hj),
                    (fast.rssj, slow.rssj),
                    (fast.qform_diff, slow.qform_diff),
                    (fast.qform_pred, slow.qform_pred),
                    (fast.trace_pred, slow.trace_pred),
                ] {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{model:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn large_g_approaches_flat() {
        let (ds, _) = problem(20, 3, 3);
        let flat = CandidateModel::new(vec![0, 2], PriorMode::Flat, 3).unwrap();
        let big = CandidateModel::new(vec![0, 2], PriorMode::GPrior { g: 1e10 }, 3).unwrap();
        let a = Projector::new(ds.x(), &flat, ds.names()).unwrap().dense();
        let b = Projector::new(ds.x(), &big, ds.names()).unwrap().dense();
        assert!((a - b).amax() < 1e-5);
    }

    #[test]
    fn reference_injected_as_candidate_has_zero_gap() {
        let (ds, reference) = problem(15, 2, 5);
        let fit = fit_with_hat(&reference.hat, ds.y(), &reference, 2).unwrap();
        assert!(fit.qform_diff.abs() < 1e-20);
        assert!(fit.qform_pred.abs() < 1e-20);
    }

    #[test]
    fn collinear_column_is_named() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 0.25, 0.5, 0.5, 1.0, 0.75, 1.5, 1.0, 2.0]);
        let names = vec!["a".to_string(), "b".to_string()];
        let m = CandidateModel::new(vec![0, 1], PriorMode::Flat, 2).unwrap();
        match Projector::new(&x, &m, &names) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, "b"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn flat_projector_is_idempotent_with_exact_penalties(seed in 0u64..10_000, p in 1usize..6) {
            let (ds, reference) = problem(30, p, seed);
            for model in enumerate_subsets(p, PriorMode::Flat).unwrap() {
                let proj = Projector::new(ds.x(), &model, ds.names()).unwrap();
                let h = proj.dense();
                prop_assert!((&h * &h - &h).amax() <= 1e-10);
                let fit = fit_projector(&proj, ds.y(), &reference, model.size());
                let r = (model.size() + 1) as f64;
                prop_assert!((fit.tr_hj - r).abs() <= 1e-8);
                prop_assert!((fit.logdet_i_plus_hj - r * 2f64.ln()).abs() <= 1e-8);
                prop_assert!(fit.rssj >= 0.0 && fit.qform_diff >= 0.0 && fit.qform_pred >= 0.0);
            }
        }

        #[test]
        fn nested_subsets_never_increase_rss(seed in 0u64..10_000) {
            let (ds, reference) = problem(25, 4, seed);
            let models = enumerate_subsets(4, PriorMode::Flat).unwrap();
            let fits = fit_all(&ds, &models, &reference).unwrap();
            for (a, ma) in models.iter().enumerate() {
                for (b, mb) in models.iter().enumerate() {
                    if ma.subset.iter().all(|c| mb.contains(*c)) {
                        prop_assert!(fits[b].rssj <= fits[a].rssj * (1.0 + 1e-12) + 1e-12);
                    }
                }
            }
        }
    }
}
