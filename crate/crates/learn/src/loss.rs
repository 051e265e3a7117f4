//! Heteroscedastic losses and the hierarchical composite objective.
//!
//! The activity term is the Gaussian negative log-likelihood, averaged over
//! labeled activities so the scale does not depend on the labeling budget.
//! The project term compares the summed predicted cost (plus overhead) with
//! the true total and adds a soft critical-path penalty: a temperature
//! log-sum-exp over predicted finish times, whose limit as tau grows is the
//! true makespan. Summing over explicit paths would blow up combinatorially;
//! finish times give the same limit with linear work.

use crate::gnn::ForwardOutput;
use crate::prep::{GraphTensors, REL_PREC_IN};
use crate::tensor::{Matrix, Reduce, Tape, TensorError, TensorId};
use serde::{Deserialize, Serialize};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("every activity is masked out of the loss")]
    MaskAllEmpty,
    #[error("mask length {got} does not match {expected} predictions")]
    MaskMismatch { got: usize, expected: usize },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_act: f64,
    pub lambda_proj: f64,
    /// Explicit L2 term weight; zero by default because weight decay is
    /// applied inside the optimizer instead (avoiding double regularization).
    pub lambda_reg: f64,
    /// Project-level cost consistency weight.
    pub alpha_cost: f64,
    /// Project-level soft critical-path weight.
    pub alpha_cp: f64,
    /// Soft-max temperature.
    pub tau: f64,
    /// Duration/cost weights inside the activity term.
    pub lambda_t: f64,
    pub lambda_c: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_act: 1.0,
            lambda_proj: 0.1,
            lambda_reg: 0.0,
            alpha_cost: 0.1,
            alpha_cp: 0.1,
            tau: 10.0,
            lambda_t: 0.5,
            lambda_c: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.tau <= 0.0 {
            return Err(LossError::NonPositiveTemperature(self.tau));
        }
        Ok(())
    }
}

/// Gaussian NLL per head, masked mean over labeled rows:
/// mean_labeled[ (y - mu)^2 / (2 sigma^2) + log(sigma^2) / 2 ], weighted
/// by (lambda_t, lambda_c) across the two heads.
pub fn nll_activity(
    tape: &mut Tape,
    preds: &ForwardOutput,
    t_true: &[f64],
    c_true: &[f64],
    mask: &[bool],
    config: &LossConfig,
) -> Result<TensorId, LossError> {
    let n = tape.shape(preds.mu_t).0;
    if mask.len() != n || t_true.len() != n || c_true.len() != n {
        return Err(LossError::MaskMismatch {
            got: mask.len().min(t_true.len()).min(c_true.len()),
            expected: n,
        });
    }
    let labeled = mask.iter().filter(|&&b| b).count();
    if labeled == 0 {
        return Err(LossError::MaskAllEmpty);
    }
    let w = 1.0 / labeled as f64;
    let weights: Vec<f64> = mask.iter().map(|&b| if b { w } else { 0.0 }).collect();
    let weights = tape.leaf(Matrix::column(&weights));

    let mut head = |mu: TensorId, logvar: TensorId, y: &[f64]| -> Result<TensorId, LossError> {
        let y = tape.leaf(Matrix::column(y));
        let resid = tape.sub(y, mu)?;
        let sq = tape.square(resid);
        let neg_logvar = tape.scale(logvar, -1.0);
        let inv_var = tape.exp(neg_logvar);
        let fit = tape.mul(sq, inv_var)?;
        let fit = tape.scale(fit, 0.5);
        let pen = tape.scale(logvar, 0.5);
        let per_node = tape.add(fit, pen)?;
        let weighted = tape.mul(per_node, weights)?;
        Ok(tape.sum(weighted))
    };
    let loss_t = head(preds.mu_t, preds.logvar_t, t_true)?;
    let loss_c = head(preds.mu_c, preds.logvar_c, c_true)?;
    let lt = tape.scale(loss_t, config.lambda_t);
    let lc = tape.scale(loss_c, config.lambda_c);
    Ok(tape.add(lt, lc)?)
}

/// Differentiable earliest starts from predicted durations: processed level
/// by level so each max only sees already-finished predecessors. Returns the
/// earliest-start column tensor (one row per activity).
fn earliest_starts(
    tape: &mut Tape,
    mu_t: TensorId,
    tensors: &GraphTensors,
) -> Result<TensorId, LossError> {
    let n = tensors.n_act;
    let mut es = tape.leaf(Matrix::zeros(n, 1));
    for level in tensors.depth_levels.iter().skip(1) {
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for &v in level {
            for &u in &tensors.neighbors[REL_PREC_IN][v] {
                src.push(u);
                dst.push(v);
            }
        }
        let es_u = tape.gather_rows(es, Rc::new(src.clone()))?;
        let mu_u = tape.gather_rows(mu_t, Rc::new(src))?;
        let finish_u = tape.add(es_u, mu_u)?;
        let pooled = tape.scatter_rows(finish_u, Rc::new(dst), n, Reduce::Max)?;
        let mask: Vec<f64> = {
            let mut m = vec![0.0; n];
            for &v in level {
                m[v] = 1.0;
            }
            m
        };
        let mask = tape.leaf(Matrix::column(&mask));
        let masked = tape.mul(pooled, mask)?;
        es = tape.add(es, masked)?;
    }
    Ok(es)
}

/// Soft makespan on the tape: LSE_tau over predicted finish times, where
/// finish = earliest start (from predicted durations) + predicted duration.
pub fn soft_makespan_tensor(
    tape: &mut Tape,
    mu_t: TensorId,
    tensors: &GraphTensors,
    tau: f64,
) -> Result<TensorId, LossError> {
    if tau <= 0.0 {
        return Err(LossError::NonPositiveTemperature(tau));
    }
    let es = earliest_starts(tape, mu_t, tensors)?;
    let finish = tape.add(es, mu_t)?;
    Ok(tape.logsumexp_tau(finish, tau)?)
}

/// Value-level soft makespan for plain duration vectors.
pub fn soft_makespan(durations: &[f64], tensors: &GraphTensors, tau: f64) -> Result<f64, LossError> {
    if tau <= 0.0 {
        return Err(LossError::NonPositiveTemperature(tau));
    }
    let n = tensors.n_act;
    let mut es = vec![0.0f64; n];
    for level in tensors.depth_levels.iter().skip(1) {
        for &v in level {
            let mut best = 0.0f64;
            for &u in &tensors.neighbors[REL_PREC_IN][v] {
                best = best.max(es[u] + durations[u]);
            }
            es[v] = best;
        }
    }
    let finish: Vec<f64> = (0..n).map(|i| es[i] + durations[i]).collect();
    let max = finish.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = finish.iter().map(|&f| (tau * (f - max)).exp()).sum();
    Ok(max + z.ln() / tau)
}

/// Hard makespan from a duration vector (the tau -> infinity limit).
pub fn hard_makespan(durations: &[f64], tensors: &GraphTensors) -> f64 {
    let n = tensors.n_act;
    let mut es = vec![0.0f64; n];
    for level in tensors.depth_levels.iter().skip(1) {
        for &v in level {
            let mut best = 0.0f64;
            for &u in &tensors.neighbors[REL_PREC_IN][v] {
                best = best.max(es[u] + durations[u]);
            }
            es[v] = best;
        }
    }
    (0..n)
        .map(|i| es[i] + durations[i])
        .fold(0.0f64, f64::max)
}

/// Squared gap between the soft makespan and the true project duration.
pub fn soft_cp_loss(
    tape: &mut Tape,
    mu_t: TensorId,
    tensors: &GraphTensors,
    tau: f64,
    t_proj_true: f64,
) -> Result<TensorId, LossError> {
    let sm = soft_makespan_tensor(tape, mu_t, tensors, tau)?;
    let target = tape.leaf(Matrix::scalar(t_proj_true));
    let diff = tape.sub(sm, target)?;
    Ok(tape.square(diff))
}

/// Component values of a composite loss evaluation; the weighted pieces sum
/// to the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub act: f64,
    pub proj_cost: f64,
    pub proj_cp: f64,
    pub reg: f64,
    pub total: f64,
}

pub struct LossTerms {
    pub total: TensorId,
    pub breakdown: LossBreakdown,
}

/// Full composite objective over a whole instance:
/// lambda_act * L_act
///   + lambda_proj * (alpha_cost (C_hat - C_true)^2 + alpha_cp CP_soft)
///   + lambda_reg * sum of squared weight tensors.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    preds: &ForwardOutput,
    tensors: &GraphTensors,
    t_true: &[f64],
    c_true: &[f64],
    mask: &[bool],
    true_makespan: f64,
    true_total_cost: f64,
    overhead: f64,
    config: &LossConfig,
    reg_weights: &[TensorId],
) -> Result<LossTerms, LossError> {
    config.validate()?;
    let act = nll_activity(tape, preds, t_true, c_true, mask, config)?;

    let cost_sum = tape.sum(preds.mu_c);
    let c_hat = tape.add_scalar(cost_sum, overhead);
    let c_target = tape.leaf(Matrix::scalar(true_total_cost));
    let c_diff = tape.sub(c_hat, c_target)?;
    let proj_cost = tape.square(c_diff);
    let proj_cp = soft_cp_loss(tape, preds.mu_t, tensors, config.tau, true_makespan)?;

    let mut reg: Option<TensorId> = None;
    if config.lambda_reg > 0.0 {
        for &w in reg_weights {
            let sq = tape.square(w);
            let s = tape.sum(sq);
            reg = Some(match reg {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
    }

    let act_w = tape.scale(act, config.lambda_act);
    let cost_w = tape.scale(proj_cost, config.lambda_proj * config.alpha_cost);
    let cp_w = tape.scale(proj_cp, config.lambda_proj * config.alpha_cp);
    let mut total = tape.add(act_w, cost_w)?;
    total = tape.add(total, cp_w)?;
    let mut reg_value = 0.0;
    if let Some(r) = reg {
        let r_w = tape.scale(r, config.lambda_reg);
        reg_value = tape.value(r_w).scalar_value();
        total = tape.add(total, r_w)?;
    }

    let breakdown = LossBreakdown {
        act: tape.value(act_w).scalar_value(),
        proj_cost: tape.value(cost_w).scalar_value(),
        proj_cp: tape.value(cp_w).scalar_value(),
        reg: reg_value,
        total: tape.value(total).scalar_value(),
    };
    Ok(LossTerms { total, breakdown })
}
