//! Out-of-sample prediction: per-model and reference predictive means,
//! weighted aggregation, RMSE and the effective number of models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::candidate::{design_matrix, CandidateModel, Projector};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, ReferenceFit};

/// Posterior predictive mean of a linear candidate at the rows of `x_test`.
pub fn predict_linear(train: &Dataset, model: &CandidateModel, x_test: &DMatrix<f64>) -> Result<DVector<f64>> {
    let proj = Projector::new(train.x(), model, train.names())?;
    Ok(predict_with(&proj, train.y(), model, x_test))
}

fn predict_with(proj: &Projector, y: &DVector<f64>, model: &CandidateModel, x_test: &DMatrix<f64>) -> DVector<f64> {
    design_matrix(x_test, &model.subset) * proj.coefficients(y)
}

/// Predictions of every model on the test rows, one row per model.
pub fn predict_all(train: &Dataset, models: &[CandidateModel], x_test: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(models.len(), x_test.nrows());
    for (i, m) in models.iter().enumerate() {
        let proj = Projector::new(train.x(), m, train.names())?;
        out.set_row(i, &predict_with(&proj, train.y(), m, x_test).transpose());
    }
    Ok(out)
}

/// GP conditional mean `k(x_test, X) (K + I)⁻¹ y` using the reference's
/// eigendecomposition.
pub fn predict_reference(
    reference: &ReferenceFit,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_test: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if x_train.nrows() != y_train.len() {
        return Err(Error::LengthMismatch {
            left: x_train.nrows(),
            right: y_train.len(),
        });
    }
    let v = &reference.eigen.eigvecs;
    let coef = v.tr_mul(y_train).zip_map(&reference.eigen.eigvals, |a, e| a / (1.0 + e));
    let alpha = v * coef;
    Ok(cross_kernel(x_test, x_train, &reference.cfg)? * alpha)
}

pub fn rmse(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty vector".into()));
    }
    Ok(((pred - truth).norm_squared() / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSet {
    /// `models x test points`.
    pub models: DMatrix<f64>,
    pub reference: DVector<f64>,
}

/// `Σ_j w_j · prediction_j`.
pub fn aggregate(preds: &PredictionSet, weights: &[f64]) -> Result<DVector<f64>> {
    if weights.len() != preds.models.nrows() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: preds.models.nrows(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-10 {
        return Err(Error::WeightSum(sum));
    }
    let w = DVector::from_column_slice(weights);
    Ok(preds.models.tr_mul(&w))
}

/// Inverse participation ratio `1 / Σ w²`.
pub fn effective_models(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Index of the largest weight; ties go to the smaller model, then to the
/// earlier one in enumeration order.
pub fn top_model(weights: &[f64], models: &[CandidateModel]) -> usize {
    (0..weights.len())
        .min_by(|&a, &b| {
            weights[b]
                .total_cmp(&weights[a])
                .then(models[a].size().cmp(&models[b].size()))
                .then(models[a].subset.cmp(&models[b].subset))
        })
        .expect("non-empty weights")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::{enumerate_subsets, PriorMode};
    use crate::kernel::{fit_reference, KernelConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>());
        let y = DVector::from_fn(n, |i, _| 1.0 + 4.0 * x[(i, 0)] - x[(i, p - 1)] + rng.gen::<f64>());
        Dataset::from_unit((0..p).map(|c| format!("x{c}")).collect(), x, y).unwrap()
    }

    #[test]
    fn linear_prediction_matches_normal_equations() {
        let ds = data(10, 3, 2);
        let model = CandidateModel::new(vec![0, 2], PriorMode::Flat, 3).unwrap();
        let xt = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 0.9, 0.5, 0.05]);
        let pred = predict_linear(&ds, &model, &xt).unwrap();
        let d = design_matrix(ds.x(), &model.subset);
        let beta = (d.transpose() * &d).try_inverse().unwrap() * d.transpose() * ds.y();
        let oracle = design_matrix(&xt, &model.subset) * beta;
        assert!((pred - oracle).amax() < 1e-10);
    }

    #[test]
    fn null_model_predicts_the_mean() {
        let ds = data(10, 2, 3);
        let null = CandidateModel::new(vec![], PriorMode::Flat, 2).unwrap();
        let pred = predict_linear(&ds, &null, &DMatrix::from_element(3, 2, 0.4)).unwrap();
        assert!(pred.iter().all(|v| (v - ds.y().mean()).abs() < 1e-12));
    }

    #[test]
    fn saturated_design_reproduces_training_values() {
        let x = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.2, 0.0, 0.3, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, -2.0]);
        let ds = Dataset::from_unit(vec!["a".into(), "b".into()], x.clone(), y.clone()).unwrap();
        let m = CandidateModel::new(vec![0, 1], PriorMode::Flat, 2).unwrap();
        let pred = predict_linear(&ds, &m, &x).unwrap();
        assert!((pred - y).amax() < 1e-12);
    }

    #[test]
    fn reference_prediction_on_training_rows_is_hy() {
        let ds = data(25, 2, 4);
        let fit = fit_reference(ds.x(), ds.y(), &KernelConfig::new(vec![0.5, 0.8], 2.0).unwrap()).unwrap();
        let pred = predict_reference(&fit, ds.x(), ds.y(), ds.x()).unwrap();
        assert!((pred - &fit.hy).amax() < 1e-10);
        let tiny = fit_reference(ds.x(), ds.y(), &KernelConfig::new(vec![0.5, 0.8], 1e-12).unwrap()).unwrap();
        let zero = predict_reference(&tiny, ds.x(), ds.y(), &DMatrix::from_element(4, 2, 0.3)).unwrap();
        assert!(zero.amax() < 1e-12);
    }

    #[test]
    fn rmse_cases() {
        let a = DVector::from_vec(vec![0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(rmse(&a, &b).unwrap(), (12.5f64).sqrt());
        assert_eq!(rmse(&b, &b).unwrap(), 0.0);
        assert_relative_eq!(rmse(&b, &b.add_scalar(-1.5)).unwrap(), 1.5);
        assert!(rmse(&a, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn aggregation_cases() {
        let preds = PredictionSet {
            models: DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            reference: DVector::zeros(2),
        };
        assert_eq!(aggregate(&preds, &[0.0, 1.0, 0.0]).unwrap(), DVector::from_vec(vec![3.0, 4.0]));
        assert!(matches!(aggregate(&preds, &[0.5, 0.6, 0.0]), Err(Error::WeightSum(_))));
        let same = PredictionSet {
            models: DMatrix::from_element(3, 2, 7.0),
            reference: DVector::zeros(2),
        };
        let out = aggregate(&same, &[1.0 / 3.0; 3]).unwrap();
        assert!(out.iter().all(|v| (v - 7.0).abs() < 1e-14));
    }

    #[test]
    fn effective_models_and_ties() {
        assert_eq!(effective_models(&[0.0, 1.0, 0.0]), 1.0);
        assert_relative_eq!(effective_models(&[0.25; 4]), 4.0);
        let models = enumerate_subsets(2, PriorMode::Flat).unwrap();
        assert_eq!(top_model(&[0.1, 0.3, 0.3, 0.3], &models), 1);
        assert_eq!(top_model(&[0.1, 0.2, 0.3, 0.4], &models), 3);
    }

    #[test]
    fn predict_all_rows_match_single_predictions() {
        let ds = data(15, 2, 8);
        let models = enumerate_subsets(2, PriorMode::GPrior { g: 15.0 }).unwrap();
        let xt = DMatrix::from_element(3, 2, 0.6);
        let all = predict_all(&ds, &models, &xt).unwrap();
        for (i, m) in models.iter().enumerate() {
            let one = predict_linear(&ds, m, &xt).unwrap();
            assert!((all.row(i).transpose() - one).amax() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn effective_models_bounds(raw in prop::collection::vec(0.0f64..1.0, 1..50)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let e = effective_models(&w);
            prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 + 1e-9);
        }

        #[test]
        fn aggregation_is_linear_in_weights(alpha in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let preds = PredictionSet {
                models: DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 4.0, 0.25, 8.0]),
                reference: DVector::zeros(3),
            };
            let w = [a, 1.0 - a];
            let v = [b, 1.0 - b];
            let mix: Vec<f64> = w.iter().zip(&v).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
            let lhs = aggregate(&preds, &mix).unwrap();
            let rhs = aggregate(&preds, &w).unwrap() * alpha + aggregate(&preds, &v).unwrap() * (1.0 - alpha);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
