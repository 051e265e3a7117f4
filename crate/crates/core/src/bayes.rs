//! Online resource-efficiency belief updates.
//!
//! Two mechanisms: a moment-mixing exponential update with constant,
//! sample-average or adaptive learning rate, and the linear-Gaussian Kalman
//! filter for direct efficiency observations. The exponential variance rule
//! mixes moments rather than performing a conjugate update; it is a
//! moment-matching heuristic, not a posterior, and is implemented verbatim.

use crate::linalg::{self, LinalgError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("batch variance must be >= 0, got {0}")]
    NegativeBatchVariance(f64),
    #[error("learning rate must lie in [0, 1], got {0}")]
    InvalidLearningRate(f64),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("covariance is not symmetric positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Variance floor; updates that would cross it are clamped and counted.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "alpha")]
pub enum UpdateRule {
    /// Exponential smoothing with fixed alpha.
    Constant(f64),
    /// alpha_t = 1 / (t + 1): running arithmetic mean.
    SampleAverage,
    /// alpha_t = var / (var + obs_noise / n): observation-reliability weighting.
    Adaptive,
}

/// Per-resource efficiency belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourcePosterior {
    pub mean: f64,
    pub variance: f64,
    /// Observation noise used by the adaptive rule.
    pub obs_noise: f64,
    pub rule: UpdateRule,
    /// Number of updates applied so far (the t in the learning-rate rules).
    pub updates: u64,
    /// How many times the variance floor fired.
    pub floored: u64,
}

impl ResourcePosterior {
    pub fn new(mean: f64, variance: f64, obs_noise: f64, rule: UpdateRule) -> Self {
        ResourcePosterior {
            mean,
            variance,
            obs_noise,
            rule,
            updates: 0,
            floored: 0,
        }
    }
}

/// One exponential update from a batch of observations:
/// mean <- (1 - a) mean + a * batch_mean; var <- (1 - a) var + a * batch_var.
pub fn exp_update(
    post: &ResourcePosterior,
    batch_mean: f64,
    batch_var: f64,
    n_obs: usize,
) -> Result<ResourcePosterior, BayesError> {
    if batch_var < 0.0 {
        return Err(BayesError::NegativeBatchVariance(batch_var));
    }
    let alpha = match post.rule {
        UpdateRule::Constant(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(BayesError::InvalidLearningRate(a));
            }
            a
        }
        UpdateRule::SampleAverage => 1.0 / (post.updates as f64 + 1.0),
        UpdateRule::Adaptive => {
            let n = n_obs.max(1) as f64;
            post.variance / (post.variance + post.obs_noise / n)
        }
    };
    let mut out = *post;
    out.mean = (1.0 - alpha) * post.mean + alpha * batch_mean;
    let var = (1.0 - alpha) * post.variance + alpha * batch_var;
    if var < VARIANCE_FLOOR {
        out.variance = VARIANCE_FLOOR;
        out.floored += 1;
    } else {
        out.variance = var;
    }
    out.updates += 1;
    Ok(out)
}

/// Linear-Gaussian filter state. `obs_matrix` is m x d row-major, `obs_noise`
/// is m x m, mean is length d and `cov` is d x d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub obs_matrix: Vec<f64>,
    pub obs_noise: Vec<f64>,
}

impl KalmanState {
    /// Scalar state observed directly (H = 1).
    pub fn scalar(mean: f64, variance: f64, obs_noise: f64) -> Self {
        KalmanState {
            mean: vec![mean],
            cov: vec![variance],
            obs_matrix: vec![1.0],
            obs_noise: vec![obs_noise],
        }
    }

    pub fn dims(&self) -> Result<(usize, usize), BayesError> {
        let d = self.mean.len();
        if self.cov.len() != d * d {
            return Err(BayesError::DimensionMismatch(format!(
                "cov has {} entries for state dim {d}",
                self.cov.len()
            )));
        }
        if self.obs_matrix.len() % d != 0 {
            return Err(BayesError::DimensionMismatch(
                "obs matrix width must equal state dim".into(),
            ));
        }
        let m = self.obs_matrix.len() / d;
        if self.obs_noise.len() != m * m {
            return Err(BayesError::DimensionMismatch(format!(
                "obs noise has {} entries for obs dim {m}",
                self.obs_noise.len()
            )));
        }
        Ok((d, m))
    }

    /// Symmetry + positive semidefiniteness check via Cholesky of cov + eps I.
    pub fn validate(&self) -> Result<(), BayesError> {
        let (d, _) = self.dims()?;
        for i in 0..d {
            for j in 0..i {
                if (self.cov[i * d + j] - self.cov[j * d + i]).abs()
                    > 1e-9 * (1.0 + self.cov[i * d + i].abs())
                {
                    return Err(BayesError::NotPositiveSemidefinite);
                }
            }
        }
        let mut shifted = self.cov.clone();
        for i in 0..d {
            shifted[i * d + i] += 1e-12;
        }
        linalg::cholesky_factor(&shifted, d).map_err(|_| BayesError::NotPositiveSemidefinite)?;
        Ok(())
    }
}

/// One measurement update: K = S H' (H S H' + R)^-1, mean += K (y - H mean),
/// S <- (I - K H) S, re-symmetrized as (S + S') / 2.
pub fn kalman_update(state: &KalmanState, y: &[f64]) -> Result<KalmanState, BayesError> {
    let (d, m) = state.dims()?;
    if y.len() != m {
        return Err(BayesError::DimensionMismatch(format!(
            "observation has {} entries for obs dim {m}",
            y.len()
        )));
    }
    let h = &state.obs_matrix;
    let cov = &state.cov;

    // HS (m x d), then S_inn = HS H' + R (m x m).
    let mut hs = vec![0.0; m * d];
    for r in 0..m {
        for c in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += h[r * d + k] * cov[k * d + c];
            }
            hs[r * d + c] = acc;
        }
    }
    let mut innovation = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            let mut acc = state.obs_noise[r * m + c];
            for k in 0..d {
                acc += hs[r * d + k] * h[c * d + k];
            }
            innovation[r * m + c] = acc;
        }
    }
    // Gain K (d x m): solve innovation * X = HS for X (m x d), K = X'.
    let mut gain = vec![0.0; d * m];
    for c in 0..d {
        let rhs: Vec<f64> = (0..m).map(|r| hs[r * d + c]).collect();
        let col = linalg::solve_linear(&innovation, &rhs, m).map_err(|e| match e {
            LinalgError::Singular => BayesError::SingularInnovation,
            LinalgError::DimensionMismatch(s) => BayesError::DimensionMismatch(s),
        })?;
        for r in 0..m {
            gain[c * m + r] = col[r];
        }
    }

    // Residual and mean update.
    let mut mean = state.mean.clone();
    let mut resid = vec![0.0; m];
    for r in 0..m {
        let mut acc = y[r];
        for k in 0..d {
            acc -= h[r * d + k] * state.mean[k];
        }
        resid[r] = acc;
    }
    for i in 0..d {
        for r in 0..m {
            mean[i] += gain[i * m + r] * resid[r];
        }
    }

    // Covariance update (I - K H) S, then re-symmetrize.
    let mut kh = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for r in 0..m {
                acc += gain[i * m + r] * h[r * d + j];
            }
            kh[i * d + j] = acc;
        }
    }
    let mut new_cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = cov[i * d + j];
            for k in 0..d {
                acc -= kh[i * d + k] * cov[k * d + j];
            }
            new_cov[i * d + j] = acc;
        }
    }
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (new_cov[i * d + j] + new_cov[j * d + i]);
            new_cov[i * d + j] = s;
            new_cov[j * d + i] = s;
        }
    }
    Ok(KalmanState {
        mean,
        cov: new_cov,
        obs_matrix: state.obs_matrix.clone(),
        obs_noise: state.obs_noise.clone(),
    })
}
