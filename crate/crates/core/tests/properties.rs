//! Randomized invariants of the weighting engine, runnable on their own
//! with `cargo test --test properties`.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dprob::candidate::{enumerate_subsets, fit_all, fit_candidate, CandidateModel, PriorMode};
use dprob::dataset::Dataset;
use dprob::dprob::{kl_estimate, make_report, normalize_log_weights, KlEstimate};
use dprob::kernel::{fit_reference, KernelConfig, ReferenceFit};

fn problem(n: usize, p: usize, seed: u64, lambda: f64, tau: f64) -> (Dataset, ReferenceFit) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>());
    let y = DVector::from_fn(n, |i, _| (3.0 * x[(i, 0)]).sin() * 2.0 + x[(i, p - 1)] + rng.gen_range(-1.0..1.0));
    let ds = Dataset::from_unit((0..p).map(|c| format!("x{c}")).collect(), x, y).unwrap();
    let reference = fit_reference(ds.x(), ds.y(), &KernelConfig::new(vec![lambda; p], tau).unwrap()).unwrap();
    (ds, reference)
}

fn estimates(ds: &Dataset, reference: &ReferenceFit, models: &[CandidateModel]) -> Vec<KlEstimate> {
    fit_all(ds, models, reference)
        .unwrap()
        .iter()
        .map(|f| kl_estimate(f, &reference.scalars()).unwrap())
        .collect()
}

fn prior(use_g: bool, n: usize) -> PriorMode {
    if use_g {
        PriorMode::GPrior { g: n as f64 }
    } else {
        PriorMode::Flat
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conditional_weights_sum_to_one(
        seed in 0u64..10_000, p in 1usize..5, n in 15usize..60,
        lambda in 0.2f64..3.0, tau in 0.2f64..5.0, use_g in any::<bool>(),
    ) {
        let (ds, reference) = problem(n, p, seed, lambda, tau);
        let models = enumerate_subsets(p, prior(use_g, n)).unwrap();
        let report = make_report(&models, ds.names(), &estimates(&ds, &reference, &models), n).unwrap();
        prop_assert!((report.cond1().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((report.cond2().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn divergences_are_nonnegative_and_ordered(
        seed in 0u64..10_000, p in 1usize..5, n in 15usize..60,
        lambda in 0.2f64..3.0, tau in 0.2f64..5.0, use_g in any::<bool>(),
    ) {
        let (ds, reference) = problem(n, p, seed, lambda, tau);
        let models = enumerate_subsets(p, prior(use_g, n)).unwrap();
        for k in estimates(&ds, &reference, &models) {
            prop_assert!(k.kl1 >= 0.0 && k.kl2 >= 0.0);
            prop_assert!(k.kl2 <= k.kl1 + 1e-12, "kl2 {} > kl1 {}", k.kl2, k.kl1);
        }
    }

    #[test]
    fn normalisation_ignores_a_common_shift(
        raw in prop::collection::vec(-6400i32..0, 1..40),
        shift in -500i32..500,
    ) {
        // eighths keep every shifted value exactly representable, so any
        // difference would come from the normalisation itself
        let logs: Vec<f64> = raw.iter().map(|&r| r as f64 / 8.0).collect();
        let shifted: Vec<f64> = logs.iter().map(|l| l + shift as f64).collect();
        prop_assert_eq!(normalize_log_weights(&logs).unwrap(), normalize_log_weights(&shifted).unwrap());
    }

    #[test]
    fn residuals_shrink_along_nested_subsets(
        seed in 0u64..10_000, p in 2usize..6, n in 12usize..50, mask in 0usize..64,
    ) {
        let (ds, reference) = problem(n, p, seed, 1.0, 1.0);
        let big: Vec<usize> = (0..p).filter(|c| mask >> c & 1 == 1).collect();
        let mut chain = vec![vec![]];
        for c in &big {
            let mut next = chain.last().unwrap().clone();
            next.push(*c);
            chain.push(next);
        }
        let rss: Vec<f64> = chain
            .iter()
            .map(|s| fit_candidate(&ds, &CandidateModel::new(s.clone(), PriorMode::Flat, p).unwrap(), &reference).unwrap().rssj)
            .collect();
        for w in rss.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }
}
