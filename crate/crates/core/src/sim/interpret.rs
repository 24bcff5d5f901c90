use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Per-observation log ratio of multinomial probabilities of the expected
/// counts `n·a` under `b` and under `a`, computed exactly through
/// log-gamma, paired with `KL(a, b)`. For large `n` the first is close to
/// minus the second.
pub fn boltzmann_check(a: &[f64], b: &[f64], n: u64) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() || n == 0 {
        return Err(Error::InvalidArgument("need at least one cell and one draw".into()));
    }
    for v in [a, b] {
        if v.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidArgument("cell probabilities must be positive".into()));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSum(s));
        }
    }
    let nf = n as f64;
    let counts: Vec<f64> = a.iter().map(|p| p * nf).collect();
    for &c in &counts {
        if (c - c.round()).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("expected count {c} is not an integer")));
        }
    }
    let counts: Vec<f64> = counts.iter().map(|c| c.round()).collect();
    let log_mult = |probs: &[f64]| -> f64 {
        ln_gamma(nf + 1.0)
            + counts
                .iter()
                .zip(probs)
                .map(|(&c, &p)| c * p.ln() - ln_gamma(c + 1.0))
                .sum::<f64>()
    };
    let ratio = (log_mult(b) - log_mult(a)) / nf;
    let kl = a.iter().zip(b).map(|(p, q)| p * (p / q).ln()).sum();
    Ok((ratio, kl))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `KL(f, g)` between two univariate Gaussians.
pub fn gaussian_kl(f: &Gaussian, g: &Gaussian) -> f64 {
    let r = f.sd / g.sd;
    0.5 * (r * r + ((f.mean - g.mean) / g.sd).powi(2) - 1.0) - r.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRuleResult {
    /// Log of the geometric mean of the `m` likelihood ratios.
    pub log_r: f64,
    /// `-n · KL(f*, f_j)`.
    pub log_target: f64,
}

impl DecisionRuleResult {
    pub fn geometric_mean(&self) -> f64 {
        self.log_r.exp()
    }

    pub fn target(&self) -> f64 {
        self.log_target.exp()
    }
}

/// Simulates `m` experiments of `n` draws from `f_star` and returns the
/// geometric mean of the likelihood ratios `Π f_j(x) / f_star(x)` next to
/// its almost-sure limit `exp(-n KL(f*, f_j))`.
pub fn decision_rule_check(f_star: &Gaussian, f_j: &Gaussian, n: usize, m: usize, seed: u64) -> Result<DecisionRuleResult> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be at least 1".into()));
    }
    if !(f_star.sd > 0.0 && f_j.sd > 0.0) {
        return Err(Error::InvalidArgument("standard deviations must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..m {
        for _ in 0..n {
            let x = f_star.mean + f_star.sd * rng.sample::<f64, _>(StandardNormal);
            total += f_j.log_pdf(x) - f_star.log_pdf(x);
        }
    }
    Ok(DecisionRuleResult {
        log_r: total / m as f64,
        log_target: -(n as f64) * gaussian_kl(f_star, f_j),
    })
}
