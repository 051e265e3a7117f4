//! Accuracy, ranking and calibration metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("predicted standard deviations must be positive")]
    NonPositiveSigma,
}

/// MAPE division guard.
pub const MAPE_EPS: f64 = 1e-8;
/// 90% two-sided gaussian interval half-width in standard deviations.
pub const PI90_Z: f64 = 1.645;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
    /// None when target variance is degenerate.
    pub r2: Option<f64>,
    /// None when either rank vector is constant.
    pub spearman: Option<f64>,
}

pub fn accuracy_metrics(y: &[f64], y_hat: &[f64]) -> Result<AccuracyMetrics, MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::TooFewSamples { needed: 1, got: 0 });
    }
    let n = y.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ape_sum = 0.0;
    for (&t, &p) in y.iter().zip(y_hat) {
        let e = t - p;
        abs_sum += e.abs();
        sq_sum += e * e;
        ape_sum += e.abs() / (t.abs() + MAPE_EPS);
    }
    let mae = abs_sum / n;
    let rmse = (sq_sum / n).sqrt();
    let mape_pct = 100.0 * ape_sum / n;

    let r2 = if y.len() >= 2 {
        let mean = y.iter().sum::<f64>() / n;
        let ss_tot: f64 = y.iter().map(|&t| (t - mean) * (t - mean)).sum();
        if ss_tot > 0.0 {
            Some(1.0 - sq_sum / ss_tot)
        } else {
            None
        }
    } else {
        None
    };
    let spearman = if y.len() >= 2 {
        spearman_rho(y, y_hat)
    } else {
        None
    };
    Ok(AccuracyMetrics {
        mae,
        rmse,
        mape_pct,
        r2,
        spearman,
    })
}

/// Average ranks with ties, 1-based.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation via Pearson on average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    /// Percent-scale expected calibration error: the sigma-vs-RMSE gap is in
    /// target units and is normalized by mean |y| for the percent reading.
    pub ece_pct: f64,
    /// Same gap left in target units.
    pub ece_units: f64,
    pub pi90_coverage_pct: f64,
    pub mean_interval_width: f64,
}

/// Equal-frequency calibration binning by predicted sigma. Ties at a bin
/// boundary join the lower bin; remainder samples go to the last bin.
pub fn calibration_metrics(
    y_hat: &[f64],
    sigma_hat: &[f64],
    y: &[f64],
    bins: usize,
) -> Result<CalibrationMetrics, MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), y_hat.len()));
    }
    if sigma_hat.len() != y.len() {
        return Err(MetricsError::LengthMismatch(y.len(), sigma_hat.len()));
    }
    let n = y.len();
    let bins = bins.max(1);
    if n < bins {
        return Err(MetricsError::TooFewSamples { needed: bins, got: n });
    }
    if sigma_hat.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(MetricsError::NonPositiveSigma);
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        sigma_hat[a]
            .partial_cmp(&sigma_hat[b])
            .expect("finite sigma")
            .then(a.cmp(&b))
    });

    let base = n / bins;
    let mut ece_units = 0.0;
    let mut start = 0usize;
    for b in 0..bins {
        if start >= n {
            break;
        }
        let mut end = if b + 1 == bins { n } else { (start + base).min(n) };
        // Ties spanning the boundary belong to the lower bin.
        while end < n && end > 0 && sigma_hat[idx[end]] == sigma_hat[idx[end - 1]] {
            end += 1;
        }
        if b + 1 == bins {
            end = n;
        }
        if end <= start {
            continue;
        }
        let members = &idx[start..end];
        let mean_sigma: f64 =
            members.iter().map(|&i| sigma_hat[i]).sum::<f64>() / members.len() as f64;
        let mse: f64 = members
            .iter()
            .map(|&i| (y[i] - y_hat[i]) * (y[i] - y_hat[i]))
            .sum::<f64>()
            / members.len() as f64;
        ece_units += members.len() as f64 / n as f64 * (mean_sigma - mse.sqrt()).abs();
        start = end;
    }

    let mut covered = 0usize;
    let mut width_sum = 0.0;
    for i in 0..n {
        let half = PI90_Z * sigma_hat[i];
        if (y[i] - y_hat[i]).abs() <= half {
            covered += 1;
        }
        width_sum += 2.0 * half;
    }
    let mean_abs_y = y.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    Ok(CalibrationMetrics {
        ece_pct: 100.0 * ece_units / mean_abs_y.max(1e-12),
        ece_units,
        pi90_coverage_pct: 100.0 * covered as f64 / n as f64,
        mean_interval_width: width_sum / n as f64,
    })
}
