use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::quadrature::Rule;

/// Total squared deviation budget of the curvature family: the null
/// model's divergence is `ln(1 + BUDGET) / 2 = 0.05`.
fn budget() -> f64 {
    0.1f64.exp_m1()
}

/// Largest admissible curvature, where the linear slope reaches zero.
pub fn max_curvature() -> f64 {
    2.0 * budget().sqrt()
}

/// `points` equally spaced curvatures from 0 to [`max_curvature`].
pub fn curvature_grid(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| max_curvature() * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFn {
    /// `10 + slope(γ)·x + γ·ln x` with the slope chosen so the total
    /// variance of the mean stays fixed as `γ` moves.
    Curvature { gamma: f64 },
    /// `10 + 10x`
    Case1,
    /// `10`
    Case2,
    /// `10 + sin(30πx)`
    Case3,
    /// `10x⁵`
    Case4,
}

impl MeanFn {
    pub fn validate(&self) -> Result<()> {
        if let MeanFn::Curvature { gamma } = *self {
            // tolerate rounding at the top of the grid
            if !(0.0..=max_curvature() * (1.0 + 1e-12)).contains(&gamma) {
                return Err(Error::InvalidArgument(format!(
                    "curvature {gamma} outside [0, {}]",
                    max_curvature()
                )));
            }
        }
        Ok(())
    }

    fn slope(gamma: f64) -> f64 {
        (12.0 * (budget() - gamma * gamma / 4.0)).max(0.0).sqrt() - 3.0 * gamma
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            MeanFn::Curvature { gamma } => {
                let log_term = if gamma == 0.0 { 0.0 } else { gamma * x.ln() };
                10.0 + Self::slope(gamma) * x + log_term
            }
            MeanFn::Case1 => 10.0 + 10.0 * x,
            MeanFn::Case2 => 10.0,
            MeanFn::Case3 => 10.0 + (30.0 * std::f64::consts::PI * x).sin(),
            MeanFn::Case4 => 10.0 * x.powi(5),
        }
    }

    pub fn name(&self) -> String {
        match self {
            MeanFn::Curvature { gamma } => format!("curvature({gamma:.6})"),
            MeanFn::Case1 => "case1".into(),
            MeanFn::Case2 => "case2".into(),
            MeanFn::Case3 => "case3".into(),
            MeanFn::Case4 => "case4".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub mean: MeanFn,
    pub sigma: f64,
    pub n: usize,
}

impl SimScenario {
    pub fn new(mean: MeanFn, n: usize) -> Self {
        Self { mean, sigma: 1.0, n }
    }

    pub fn validate(&self) -> Result<()> {
        self.mean.validate()?;
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise sd must be positive, got {}", self.sigma)));
        }
        if self.n < 3 {
            return Err(Error::InvalidArgument(format!("sample size {} is below 3", self.n)));
        }
        Ok(())
    }
}

/// Draws `n` rows with `x ~ U(0, 1)` and Gaussian noise around the mean.
pub fn generate_with_rng<R: Rng>(scn: &SimScenario, n: usize, rng: &mut R) -> Result<Dataset> {
    scn.validate()?;
    let xs: Vec<f64> = (0..n).map(|_| rng.sample(Open01)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| scn.mean.eval(x) + scn.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::from_unit(vec!["x".into()], DMatrix::from_vec(n, 1, xs), DVector::from_vec(ys))
}

pub fn generate(scn: &SimScenario, seed: u64) -> Result<Dataset> {
    generate_with_rng(scn, scn.n, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaOracle {
    pub subset: Vec<usize>,
    pub delta: f64,
    /// Mean squared distance from the true mean to its best approximation
    /// within the model.
    pub residual_variance: f64,
}

const ORACLE_NODES: usize = 501;

/// Smallest attainable KL divergence from the truth to a Gaussian linear
/// model on the given subset of the single covariate.
///
/// The needed moments of the mean function under `U(0, 1)` are integrated
/// with Gauss-Legendre after the substitution `x = u⁴`, which tames the
/// logarithmic singularity at the origin.
pub fn delta_oracle(scn: &SimScenario, subset: &[usize]) -> Result<DeltaOracle> {
    scn.validate()?;
    if subset.iter().any(|&c| c != 0) || subset.len() > 1 {
        return Err(Error::InvalidArgument(format!("subset {subset:?} is not a subset of the single covariate")));
    }
    let rule = Rule::new(ORACLE_NODES, 0.0, 1.0);
    let moment = |f: &dyn Fn(f64) -> f64| rule.integrate(|u| {
        let x = u.powi(4);
        4.0 * u.powi(3) * f(x)
    });
    let m = |x: f64| scn.mean.eval(x);
    let e_mu = moment(&m);
    let var_mu = moment(&|x| (m(x) - e_mu).powi(2));
    if !var_mu.is_finite() {
        return Err(Error::InvalidArgument("quadrature did not produce finite moments".into()));
    }
    let residual_variance = if subset.is_empty() {
        var_mu
    } else {
        let cov = moment(&|x| (x - 0.5) * (m(x) - e_mu));
        (var_mu - cov * cov * 12.0).max(0.0)
    };
    let delta = 0.5 * (residual_variance / (scn.sigma * scn.sigma)).ln_1p();
    Ok(DeltaOracle {
        subset: subset.to_vec(),
        delta,
        residual_variance,
    })
}
