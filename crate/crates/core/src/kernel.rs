//! Squared-exponential kernel, the Gaussian-process reference fit and the
//! log marginal likelihood of the kernel hyperparameters.
//!
//! The reference model places `mu ~ N(0, sigma0^2 K)` on the mean vector and
//! observes `y ~ N(mu, sigma0^2 I)`. Its hat matrix is `H = K (K + I)^-1`.
//! Everything downstream (traces, log-determinants, quadratic forms) is read
//! off one symmetric eigendecomposition `K = V diag(e) V'`, so `H` has
//! eigenvalues `e / (1 + e)` in `[0, 1)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for negative kernel eigenvalues, scaled by `tau^2`.
pub const JITTER_REL_TOL: f64 = 1e-8;

/// Per-covariate bandwidths and amplitude of the squared-exponential kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub lambda: Vec<f64>,
    pub tau: f64,
}

impl KernelConfig {
    pub fn new(lambda: Vec<f64>, tau: f64) -> Result<Self> {
        let cfg = Self { lambda, tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_empty() {
            return Err(Error::InvalidKernel("empty bandwidth vector".into()));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidKernel(format!("bandwidth {l} must be positive and finite")));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "amplitude {} must be positive and finite",
                self.tau
            )));
        }
        Ok(())
    }

    /// `(log lambda_1, .., log lambda_p, log tau)`.
    pub fn to_log_params(&self) -> Vec<f64> {
        self.lambda
            .iter()
            .map(|l| l.ln())
            .chain(std::iter::once(self.tau.ln()))
            .collect()
    }

    pub fn from_log_params(theta: &[f64]) -> Result<Self> {
        let (tau, lambda) = theta
            .split_last()
            .ok_or_else(|| Error::InvalidKernel("empty parameter vector".into()))?;
        Self::new(lambda.iter().map(|t| t.exp()).collect(), tau.exp())
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if self.lambda.len() != p {
            return Err(Error::InvalidKernel(format!(
                "{} bandwidths for {p} covariates",
                self.lambda.len()
            )));
        }
        Ok(())
    }
}

/// Cross-kernel `k(a_i, b_j)` between the rows of `a` and `b`.
pub fn cross_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    cfg.check_dim(a.ncols())?;
    cfg.check_dim(b.ncols())?;
    let inv: Vec<f64> = cfg.lambda.iter().map(|l| 0.5 / (l * l)).collect();
    let tau2 = cfg.tau * cfg.tau;
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut d = 0.0;
        for (c, w) in inv.iter().enumerate() {
            let diff = a[(i, c)] - b[(j, c)];
            d += diff * diff * w;
        }
        tau2 * (-d).exp()
    }))
}

/// The `n x n` kernel matrix; symmetric by construction with `tau^2` on the diagonal.
pub fn build_kernel(x: &DMatrix<f64>, cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    cfg.check_dim(x.ncols())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite covariate".into()));
    }
    let n = x.nrows();
    let inv: Vec<f64> = cfg.lambda.iter().map(|l| 0.5 / (l * l)).collect();
    let tau2 = cfg.tau * cfg.tau;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = tau2;
        for j in 0..i {
            let mut d = 0.0;
            for (c, w) in inv.iter().enumerate() {
                let diff = x[(i, c)] - x[(j, c)];
                d += diff * diff * w;
            }
            let v = tau2 * (-d).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Clamped eigendecomposition of a kernel matrix.
#[derive(Debug, Clone)]
pub struct KernelEigen {
    pub eigvals: DVector<f64>,
    pub eigvecs: DMatrix<f64>,
}

impl KernelEigen {
    pub fn new(k: DMatrix<f64>, tau: f64) -> Result<Self> {
        let n = k.nrows();
        let eig = SymmetricEigen::try_new(k, f64::EPSILON, 100 * n.max(10))
            .ok_or_else(|| Error::Factorization("symmetric eigendecomposition did not converge".into()))?;
        let tol = JITTER_REL_TOL * tau * tau;
        let mut eigvals = eig.eigenvalues;
        for e in eigvals.iter_mut() {
            if !e.is_finite() {
                return Err(Error::Factorization("non-finite eigenvalue".into()));
            }
            if *e < -tol {
                return Err(Error::NotPsd {
                    eigenvalue: *e,
                    tolerance: tol,
                });
            }
            *e = e.max(0.0);
        }
        Ok(Self {
            eigvals,
            eigvecs: eig.eigenvectors,
        })
    }

    /// `y'(K + I)^-1 y` and `log |K + I|`.
    fn marginal_terms(&self, y: &DVector<f64>) -> (f64, f64) {
        let proj = self.eigvecs.tr_mul(y);
        let quad = proj
            .iter()
            .zip(self.eigvals.iter())
            .map(|(a, e)| a * a / (1.0 + e))
            .sum();
        let logdet = self.eigvals.iter().map(|e| e.ln_1p()).sum();
        (quad, logdet)
    }
}

/// Reference-model quantities derived from the eigendecomposition of `K`.
#[derive(Debug, Clone)]
pub struct ReferenceFit {
    pub cfg: KernelConfig,
    pub eigen: KernelEigen,
    /// Dense `H = V diag(e / (1 + e)) V'`.
    pub hat: DMatrix<f64>,
    /// `H y`, the posterior mean of the reference mean vector.
    pub hy: DVector<f64>,
    pub tr_h: f64,
    pub logdet_i_plus_h: f64,
    /// `y'(I - H) y`, clamped at zero.
    pub rss0: f64,
    pub n: usize,
}

impl ReferenceFit {
    /// Eigenvalues of `H`.
    pub fn hat_eigvals(&self) -> DVector<f64> {
        self.eigen.eigvals.map(|e| e / (1.0 + e))
    }

    /// Posterior mean of the reference noise variance, `rss0 / (n - 2)`.
    pub fn sigma0_sq_mean(&self) -> f64 {
        self.rss0 / (self.n as f64 - 2.0)
    }

    pub fn scalars(&self) -> crate::dprob::ReferenceScalars {
        crate::dprob::ReferenceScalars {
            n: self.n,
            tr_h: self.tr_h,
            logdet_i_plus_h: self.logdet_i_plus_h,
            rss0: self.rss0,
        }
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    Ok(())
}

pub fn fit_reference(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &KernelConfig) -> Result<ReferenceFit> {
    check_xy(x, y)?;
    let k = build_kernel(x, cfg)?;
    let eigen = KernelEigen::new(k, cfg.tau)?;
    Ok(reference_from_eigen(cfg.clone(), eigen, y))
}

pub(crate) fn reference_from_eigen(cfg: KernelConfig, eigen: KernelEigen, y: &DVector<f64>) -> ReferenceFit {
    let n = y.len();
    let shrink = eigen.eigvals.map(|e| e / (1.0 + e));
    let v = &eigen.eigvecs;
    let proj = v.tr_mul(y);

    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= shrink[j];
    }
    let hat = &scaled * v.transpose();
    let hy = v * proj.component_mul(&shrink);

    let tr_h = shrink.sum();
    let logdet_i_plus_h = shrink.iter().map(|s| s.ln_1p()).sum();
    let rss0 = proj
        .iter()
        .zip(eigen.eigvals.iter())
        .map(|(a, e)| a * a / (1.0 + e))
        .sum::<f64>()
        .max(0.0);
    ReferenceFit {
        cfg,
        eigen,
        hat,
        hy,
        tr_h,
        logdet_i_plus_h,
        rss0,
        n,
    }
}

/// `-1/2 log|K + I| - (n/2) log(y'(K + I)^-1 y)`, from the eigendecomposition.
///
/// The additive constant of the log marginal likelihood is omitted; only
/// differences and maximisers are used.
pub fn log_marginal(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &KernelConfig) -> Result<f64> {
    check_xy(x, y)?;
    let eigen = KernelEigen::new(build_kernel(x, cfg)?, cfg.tau)?;
    let (quad, logdet) = eigen.marginal_terms(y);
    finish_marginal(quad, logdet, y.len())
}

/// Same value as [`log_marginal`] via a Cholesky factor of `K + I`.
///
/// `K + I` has every eigenvalue at least one, so the factorisation is always
/// well conditioned. This is the path used inside the optimiser and sampler.
pub fn log_marginal_chol(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &KernelConfig) -> Result<f64> {
    check_xy(x, y)?;
    let mut k = build_kernel(x, cfg)?;
    for i in 0..k.nrows() {
        k[(i, i)] += 1.0;
    }
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Factorization("K + I is not numerically positive definite".into()))?;
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let z = l
        .solve_lower_triangular(y)
        .ok_or_else(|| Error::Factorization("singular Cholesky factor".into()))?;
    finish_marginal(z.norm_squared(), logdet, y.len())
}

fn finish_marginal(quad: f64, logdet: f64, n: usize) -> Result<f64> {
    if !(quad > 0.0) || !quad.is_finite() {
        return Err(Error::DegenerateQuadForm(quad));
    }
    Ok(-0.5 * logdet - 0.5 * n as f64 * quad.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>());
        let y = DVector::from_fn(n, |i, _| 3.0 * x[(i, 0)] + rng.gen::<f64>());
        (x, y)
    }

    // Naive double loop, written independently of `build_kernel`.
    fn naive_kernel(x: &DMatrix<f64>, lambda: &[f64], tau: f64) -> DMatrix<f64> {
        let n = x.nrows();
        let mut k = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (0..x.ncols())
                    .map(|j| (x[(a, j)] - x[(b, j)]).powi(2) / (2.0 * lambda[j].powi(2)))
                    .sum();
                k[(a, b)] = tau.powi(2) * (-s).exp();
            }
        }
        k
    }

    #[test]
    fn kernel_diagonal_and_pair() {
        let cfg = KernelConfig::new(vec![0.7], 1.0).unwrap();
        let x = DMatrix::from_column_slice(2, 1, &[0.1, 0.6]);
        let k = build_kernel(&x, &cfg).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert_relative_eq!(k[(0, 1)], (-(0.5f64.powi(2)) / (2.0 * 0.49)).exp(), epsilon = 1e-15);
        let cfg = KernelConfig::new(vec![0.7], 2.5).unwrap();
        assert_eq!(build_kernel(&x, &cfg).unwrap()[(1, 1)], 6.25);
    }

    #[test]
    fn kernel_matches_naive_loop() {
        let (x, _) = random_problem(5, 2, 1);
        let cfg = KernelConfig::new(vec![0.3, 1.7], 1.3).unwrap();
        let k = build_kernel(&x, &cfg).unwrap();
        let oracle = naive_kernel(&x, &cfg.lambda, cfg.tau);
        assert!((k - oracle).amax() <= 1e-14);
    }

    #[test]
    fn invalid_configs() {
        assert!(KernelConfig::new(vec![0.0], 1.0).is_err());
        assert!(KernelConfig::new(vec![1.0], f64::NAN).is_err());
        assert!(KernelConfig::new(vec![], 1.0).is_err());
        let (x, y) = random_problem(5, 2, 1);
        let cfg = KernelConfig::new(vec![1.0], 1.0).unwrap();
        assert!(fit_reference(&x, &y, &cfg).is_err());
    }

    #[test]
    fn hat_matches_direct_inverse() {
        let (x, y) = random_problem(4, 2, 3);
        let cfg = KernelConfig::new(vec![0.4, 0.9], 1.5).unwrap();
        let fit = fit_reference(&x, &y, &cfg).unwrap();
        let k = naive_kernel(&x, &cfg.lambda, cfg.tau);
        let kpi = &k + DMatrix::identity(4, 4);
        let direct = &k * kpi.try_inverse().unwrap();
        assert!((&fit.hat - &direct).amax() <= 1e-10);
        let rss0 = (y.transpose() * (DMatrix::identity(4, 4) - &direct) * &y)[0];
        assert_relative_eq!(fit.rss0, rss0, epsilon = 1e-10);
        assert_relative_eq!(fit.tr_h, direct.trace(), epsilon = 1e-10);
        let ld = (DMatrix::identity(4, 4) + &direct).determinant().ln();
        assert_relative_eq!(fit.logdet_i_plus_h, ld, epsilon = 1e-10);
    }

    #[test]
    fn null_kernel_limit() {
        let (x, y) = random_problem(6, 1, 5);
        let cfg = KernelConfig::new(vec![1.0], 1e-12).unwrap();
        let fit = fit_reference(&x, &y, &cfg).unwrap();
        assert!(fit.tr_h < 1e-20);
        assert!(fit.logdet_i_plus_h < 1e-20);
        assert_relative_eq!(fit.rss0, y.norm_squared(), max_relative = 1e-14);
        let lm = log_marginal(&x, &y, &cfg).unwrap();
        assert_relative_eq!(lm, -3.0 * y.norm_squared().ln(), max_relative = 1e-12);
    }

    #[test]
    fn identity_kernel_gives_half_trace() {
        // Far-apart points with a tiny bandwidth make K = I.
        let x = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.5, 0.0]);
        let cfg = KernelConfig::new(vec![1e-3], 1.0).unwrap();
        let fit = fit_reference(&x, &y, &cfg).unwrap();
        assert_relative_eq!(fit.tr_h, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn log_marginal_matches_dense_formula() {
        let (x, y) = random_problem(5, 2, 11);
        let cfg = KernelConfig::new(vec![0.5, 0.8], 2.0).unwrap();
        let k = naive_kernel(&x, &cfg.lambda, cfg.tau);
        let kpi = &k + DMatrix::identity(5, 5);
        let quad = (y.transpose() * kpi.clone().try_inverse().unwrap() * &y)[0];
        let dense = -0.5 * kpi.determinant().ln() - 2.5 * quad.ln();
        assert_relative_eq!(log_marginal(&x, &y, &cfg).unwrap(), dense, epsilon = 1e-10);
        assert_relative_eq!(log_marginal_chol(&x, &y, &cfg).unwrap(), dense, epsilon = 1e-10);
    }

    #[test]
    fn log_marginal_permutation_invariant() {
        let (x, y) = random_problem(12, 2, 4);
        let cfg = KernelConfig::new(vec![0.3, 0.6], 1.2).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let xp = x.select_rows(&perm);
        let yp = y.select_rows(&perm);
        let a = log_marginal(&x, &y, &cfg).unwrap();
        let b = log_marginal(&xp, &yp, &cfg).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-9);
        let doubled = KernelConfig::new(cfg.lambda.clone(), 2.4).unwrap();
        assert!((log_marginal(&x, &y, &doubled).unwrap() - a).abs() > 1e-6);
    }

    #[test]
    fn hat_spectrum_and_monotonicity_in_tau() {
        let (x, y) = random_problem(25, 2, 9);
        let mut last = (0.0, 0.0);
        for tau in [0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let cfg = KernelConfig::new(vec![0.3, 0.5], tau).unwrap();
            let fit = fit_reference(&x, &y, &cfg).unwrap();
            let h = fit.hat_eigvals();
            assert!(h.iter().all(|&s| (0.0..1.0).contains(&s)));
            assert!((&fit.hat - fit.hat.transpose()).amax() < 1e-12);
            assert!(fit.tr_h >= last.0 && fit.logdet_i_plus_h >= last.1);
            last = (fit.tr_h, fit.logdet_i_plus_h);
        }
    }
}
