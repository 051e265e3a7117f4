//! Graph-agnostic reference models. Ridge regression is closed-form via the
//! normal equations with an appended, unpenalized intercept column; the MLP
//! baseline is the depth-0 network trained through the shared loop.

use pnf_core::linalg::{self, LinalgError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RidgeError {
    #[error("design matrix is empty")]
    EmptyDesign,
    #[error("ridge penalty must be >= 0, got {0}")]
    NegativePenalty(f64),
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedDesign {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("singular system: X'X is not invertible at lambda = 0")]
    SingularSystem,
}

/// Ridge weights: slope coefficients followed by the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

/// Solve (X'X + lambda I) w = X'y with an intercept column appended and
/// excluded from the penalty.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel, RidgeError> {
    if lambda < 0.0 {
        return Err(RidgeError::NegativePenalty(lambda));
    }
    if x.is_empty() || y.len() != x.len() {
        return Err(RidgeError::EmptyDesign);
    }
    let f = x[0].len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != f {
            return Err(RidgeError::RaggedDesign {
                row,
                got: r.len(),
                expected: f,
            });
        }
    }
    let k = f + 1; // intercept appended
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    for (row, &target) in x.iter().zip(y) {
        let aug = |i: usize| if i < f { row[i] } else { 1.0 };
        for a in 0..k {
            let va = aug(a);
            for b in 0..k {
                xtx[a * k + b] += va * aug(b);
            }
            xty[a] += va * target;
        }
    }
    for d in 0..f {
        xtx[d * k + d] += lambda;
    }
    let w = linalg::solve_linear(&xtx, &xty, k).map_err(|e| match e {
        LinalgError::Singular => RidgeError::SingularSystem,
        LinalgError::DimensionMismatch(_) => RidgeError::EmptyDesign,
    })?;
    Ok(RidgeModel {
        weights: w[..f].to_vec(),
        intercept: w[f],
        lambda,
    })
}

pub fn ridge_predict(model: &RidgeModel, x: &[Vec<f64>]) -> Vec<f64> {
    x.iter()
        .map(|row| {
            model.intercept
                + row
                    .iter()
                    .zip(&model.weights)
                    .map(|(&v, &w)| v * w)
                    .sum::<f64>()
        })
        .collect()
}

/// Pick the penalty with the lowest validation RMSE from a fixed grid.
pub fn ridge_fit_tuned(
    x_train: &[Vec<f64>],
    y_train: &[f64],
    x_val: &[Vec<f64>],
    y_val: &[f64],
    grid: &[f64],
) -> Result<RidgeModel, RidgeError> {
    let mut best: Option<(f64, RidgeModel)> = None;
    for &lambda in grid {
        let model = match ridge_fit(x_train, y_train, lambda) {
            Ok(m) => m,
            Err(RidgeError::SingularSystem) => continue,
            Err(e) => return Err(e),
        };
        let preds = ridge_predict(&model, x_val);
        let rmse = (preds
            .iter()
            .zip(y_val)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<f64>()
            / y_val.len().max(1) as f64)
            .sqrt();
        if best.as_ref().map(|(b, _)| rmse < *b).unwrap_or(true) {
            best = Some((rmse, model));
        }
    }
    best.map(|(_, m)| m).ok_or(RidgeError::SingularSystem)
}

/// Default penalty grid.
pub const RIDGE_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[cfg(test)]
mod tests {
    use super::*;
    use pnf_core::rng::StreamRng;

    #[test]
    fn interpolates_exact_linear_data_at_zero_penalty() {
        let mut rng = StreamRng::from_seed(3).stream("ridge");
        let truth = [2.0, -1.5, 0.25];
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 0.7 + r.iter().zip(&truth).map(|(&v, &w)| v * w).sum::<f64>())
            .collect();
        let model = ridge_fit(&x, &y, 0.0).unwrap();
        for (w, t) in model.weights.iter().zip(&truth) {
            assert!((w - t).abs() < 1e-9, "{w} vs {t}");
        }
        assert!((model.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn huge_penalty_shrinks_slopes_to_zero() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = vec![2.0, 4.0, 6.0, 8.0];
        let model = ridge_fit(&x, &y, 1e12).unwrap();
        assert!(model.weights[0].abs() < 1e-6);
        // Prediction collapses to the target mean through the intercept.
        let p = ridge_predict(&model, &[vec![10.0]]);
        assert!((p[0] - 5.0).abs() < 1e-3);
    }

    #[test]
    fn singular_system_reported_at_zero_penalty() {
        // Duplicate column makes X'X singular.
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let y = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            ridge_fit(&x, &y, 0.0),
            Err(RidgeError::SingularSystem)
        ));
        // A positive penalty regularizes it.
        assert!(ridge_fit(&x, &y, 1e-3).is_ok());
    }

    #[test]
    fn predictions_are_affine_in_inputs() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.5, 2.0]];
        let y = vec![1.0, 2.0, 3.0, 2.5];
        let model = ridge_fit(&x, &y, 0.01).unwrap();
        let a = ridge_predict(&model, &[vec![0.2, 0.3]])[0];
        let b = ridge_predict(&model, &[vec![0.4, 0.1]])[0];
        let mid = ridge_predict(&model, &[vec![0.3, 0.2]])[0];
        assert!((mid - 0.5 * (a + b)).abs() < 1e-12);
    }

    #[test]
    fn fitted_solution_minimizes_penalized_objective() {
        let mut rng = StreamRng::from_seed(11).stream("obj");
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() + rng.uniform_in(-0.1, 0.1)).collect();
        let lambda = 0.3;
        let model = ridge_fit(&x, &y, lambda).unwrap();
        let objective = |w: &[f64], b: f64| -> f64 {
            let fit: f64 = x
                .iter()
                .zip(&y)
                .map(|(r, &t)| {
                    let p = b + r.iter().zip(w).map(|(&v, &wi)| v * wi).sum::<f64>();
                    (t - p) * (t - p)
                })
                .sum();
            fit + lambda * w.iter().map(|&wi| wi * wi).sum::<f64>()
        };
        let base = objective(&model.weights, model.intercept);
        for trial in 0..50 {
            let mut rng2 = StreamRng::from_seed(trial).stream("perturb");
            let w2: Vec<f64> = model
                .weights
                .iter()
                .map(|&w| w + rng2.uniform_in(-0.05, 0.05))
                .collect();
            let b2 = model.intercept + rng2.uniform_in(-0.05, 0.05);
            assert!(objective(&w2, b2) >= base - 1e-9);
        }
    }
}
