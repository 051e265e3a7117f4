//! Rolling-execution protocol: activities complete in true earliest-finish
//! order in fixed-size batches; after each batch the adaptive pipeline
//! reveals actuals, back-solves per-resource efficiency observations
//! (plan over actual, attributed fully to each assigned resource), updates
//! the per-instance posteriors, refreshes completion-status and resource
//! features (completed activities carry their actual duration as the
//! estimate), warm-retrains, and predicts the remaining activities. Static
//! variants keep the initial model and features.

use crate::gnn::{ModelConfig, PredictionSet};
use crate::prep::{fit_pipeline, NodeState, PreparedInstance, PrepError};
use crate::train::{fine_tune, predict_instance, train_model, TrainConfig, TrainError};
use pnf_core::bayes::{exp_update, BayesError, ResourcePosterior, UpdateRule};
use pnf_core::graph::compute_schedule;
use pnf_core::instance::ProjectInstance;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemporalError {
    #[error("completion step must lie in (0, 1], got {0}")]
    BadStep(f64),
    #[error("instances need true targets for the rolling protocol")]
    MissingTargets,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Graph(#[from] pnf_core::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVariant {
    StaticMlp,
    StaticGnn,
    Adaptive,
}

impl TemporalVariant {
    pub fn name(&self) -> &'static str {
        match self {
            TemporalVariant::StaticMlp => "static-mlp",
            TemporalVariant::StaticGnn => "static-gnn",
            TemporalVariant::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfigRun {
    /// Fraction of each instance's activities completed per step.
    pub step: f64,
    /// Warm-retrain epochs per step (adaptive variant).
    pub retrain_epochs: usize,
    /// Observation noise fed to the adaptive posterior update.
    pub obs_noise: f64,
    /// Retrain from scratch instead of warm-starting.
    pub cold_retrain: bool,
}

impl Default for TemporalConfigRun {
    fn default() -> Self {
        TemporalConfigRun {
            step: 0.2,
            retrain_epochs: 12,
            obs_noise: 0.05,
            cold_retrain: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalPoint {
    pub completion_pct: f64,
    pub rmse_remaining: f64,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCurve {
    pub variant: String,
    pub seed: u64,
    pub points: Vec<TemporalPoint>,
    /// Final per-resource posterior means per instance (adaptive only).
    pub posterior_means: Vec<Vec<f64>>,
}

impl TemporalCurve {
    pub fn csv_header() -> &'static str {
        "variant,seed,completion_pct,rmse\n"
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{:.1},{}\n",
                self.variant, self.seed, p.completion_pct, p.rmse_remaining
            ));
        }
        out
    }
}

/// Per-instance execution record.
struct Execution {
    /// Activities in true earliest-finish order (ties by id).
    order: Vec<usize>,
    /// Earliest finish per activity under the true schedule.
    finish: Vec<f64>,
    completed: Vec<bool>,
    revealed: usize,
    posteriors: Vec<ResourcePosterior>,
    true_makespan: f64,
}

fn execution_plan(inst: &ProjectInstance, obs_noise: f64) -> Result<Execution, TemporalError> {
    let durations = inst.true_durations().ok_or(TemporalError::MissingTargets)?;
    let schedule = compute_schedule(&inst.graph, &durations)?;
    let ids = inst.graph.activity_ids();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        schedule.earliest_finish[&ids[a]]
            .partial_cmp(&schedule.earliest_finish[&ids[b]])
            .expect("finite finish times")
            .then(ids[a].cmp(&ids[b]))
    });
    let finish: Vec<f64> = ids.iter().map(|id| schedule.earliest_finish[id]).collect();
    Ok(Execution {
        order,
        finish,
        completed: vec![false; ids.len()],
        revealed: 0,
        posteriors: vec![
            ResourcePosterior::new(
                crate::prep::PRIOR_MEAN,
                crate::prep::PRIOR_VAR,
                obs_noise,
                UpdateRule::Adaptive,
            );
            inst.n_resources()
        ],
        true_makespan: schedule.makespan,
    })
}

/// Reveal the next ceil(step * n) activities; returns the newly completed.
fn reveal_step(exec: &mut Execution, step: f64) -> Vec<usize> {
    let n = exec.order.len();
    let batch = ((step * n as f64 - 1e-9).ceil() as usize).max(1);
    let target = (exec.revealed + batch).min(n);
    let newly: Vec<usize> = exec.order[exec.revealed..target].to_vec();
    for &a in &newly {
        debug_assert!(!exec.completed[a], "no actual is revealed twice");
        exec.completed[a] = true;
    }
    exec.revealed = target;
    newly
}

/// Efficiency observations from a completed batch: plan / actual per
/// activity, attributed fully to every assigned resource.
fn update_posteriors(
    inst: &ProjectInstance,
    exec: &mut Execution,
    newly: &[usize],
) -> Result<(), TemporalError> {
    let t_true = inst.t_true.as_ref().expect("targets checked");
    let p = inst.n_resources();
    for k in 0..p {
        let mut obs = Vec::new();
        for &a in newly {
            if inst.demands[a][k] <= 0.0 {
                continue;
            }
            if t_true[a] <= 0.0 || inst.t_est[a] <= 0.0 {
                continue;
            }
            obs.push(inst.t_est[a] / t_true[a]);
        }
        if obs.is_empty() {
            continue;
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = if obs.len() < 2 {
            0.0
        } else {
            obs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (obs.len() - 1) as f64
        };
        exec.posteriors[k] = exp_update(&exec.posteriors[k], mean, var, obs.len())?;
    }
    Ok(())
}

/// Instance copy with execution state folded into the features: completed
/// activities switch status and carry their actual duration as the estimate.
fn refreshed_instance(inst: &ProjectInstance, exec: &Execution) -> (ProjectInstance, NodeState) {
    let mut updated = inst.clone();
    let t_true = inst.t_true.as_ref().expect("targets checked");
    let c_true = inst.c_true.as_ref().expect("targets checked");
    for (a, &done) in exec.completed.iter().enumerate() {
        if done {
            updated.t_est[a] = t_true[a];
            updated.c_est[a] = c_true[a];
        }
    }
    let n = exec.completed.len();
    let done = exec.completed.iter().filter(|&&b| b).count();
    let elapsed = exec
        .completed
        .iter()
        .enumerate()
        .filter(|&(_, &b)| b)
        .map(|(a, _)| exec.finish[a])
        .fold(0.0f64, f64::max);
    let state = NodeState {
        completed: Some(exec.completed.clone()),
        pct_complete: done as f64 / n.max(1) as f64,
        elapsed: if exec.true_makespan > 0.0 {
            elapsed / exec.true_makespan
        } else {
            0.0
        },
        posterior: Some(
            exec.posteriors
                .iter()
                .map(|p| (p.mean, p.variance))
                .collect(),
        ),
    };
    (updated, state)
}

/// Pooled RMSE over both heads on remaining (not completed) activities.
fn rmse_remaining(
    prepared: &[PreparedInstance],
    execs: &[Execution],
    preds: &[PredictionSet],
) -> (f64, usize) {
    let mut sq = 0.0;
    let mut n = 0usize;
    let mut remaining = 0usize;
    for ((inst, exec), p) in prepared.iter().zip(execs).zip(preds) {
        for i in 0..inst.n_act() {
            if exec.completed[i] {
                continue;
            }
            remaining += 1;
            let et = inst.t_true[i] - p.mu_t[i];
            let ec = inst.c_true[i] - p.mu_c[i];
            sq += et * et + ec * ec;
            n += 2;
        }
    }
    let rmse = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
    (rmse, remaining)
}

/// Execution fixture with persistent resource efficiencies: every resource
/// draws a hidden efficiency multiplier and realized durations/costs become
/// plan values divided by the demand-weighted efficiency of their assigned
/// resources. Estimates keep the original plan, so early completions carry
/// real information about later activities through the shared efficiencies;
/// this is what the Bayesian refresh is built to recover.
pub fn apply_efficiency_drift(
    inst: &ProjectInstance,
    range: (f64, f64),
    seed: u64,
) -> ProjectInstance {
    let mut rng = pnf_core::rng::StreamRng::from_seed(seed).stream("efficiency-drift");
    let p = inst.n_resources();
    let eta: Vec<f64> = (0..p).map(|_| rng.uniform_in(range.0, range.1)).collect();
    let mut out = inst.clone();
    let weighted = |i: usize| -> f64 {
        let total: f64 = inst.demands[i].iter().sum();
        if total <= 0.0 || p == 0 {
            return 1.0;
        }
        inst.demands[i]
            .iter()
            .zip(&eta)
            .map(|(&d, &e)| d * e)
            .sum::<f64>()
            / total
    };
    if let Some(t) = out.t_true.as_mut() {
        for (i, v) in t.iter_mut().enumerate() {
            *v /= weighted(i).max(1e-6);
        }
    }
    if let Some(c) = out.c_true.as_mut() {
        for (i, v) in c.iter_mut().enumerate() {
            *v /= weighted(i).max(1e-6);
        }
    }
    out.provenance = Some(serde_json::json!({
        "base": inst.provenance,
        "efficiency_drift": { "range": range, "seed": seed, "eta": eta },
    }));
    out
}

/// Rolling-origin snapshots of a fully labeled instance: the execution is
/// simulated on its own true schedule and a prepared snapshot is captured
/// at every completion state, so a model trained on them has seen the
/// completed-status feature semantics it will face at refresh time.
fn augmented_snapshots(
    pipeline: &crate::prep::FeaturePipeline,
    inst: &ProjectInstance,
    step: f64,
    obs_noise: f64,
) -> Result<Vec<PreparedInstance>, TemporalError> {
    let mut exec = execution_plan(inst, obs_noise)?;
    let mut out = vec![pipeline.prepare(inst)?];
    let steps = (1.0 / step).ceil() as usize;
    for _ in 0..steps.saturating_sub(1) {
        let newly = reveal_step(&mut exec, step);
        update_posteriors(inst, &mut exec, &newly)?;
        let (updated, state) = refreshed_instance(inst, &exec);
        out.push(pipeline.prepare_with(&updated, &state)?);
    }
    Ok(out)
}

/// Run one variant of the rolling-execution experiment.
///
/// `train_pool` fits the feature pipeline and the initial model; `eval_pool`
/// executes progressively. The adaptive variant trains on rolling-origin
/// snapshots of the training pool (all completion states), so refreshed
/// features stay in distribution. The curve starts at 0% completion and
/// adds one point after each completion step while activities remain.
pub fn run_temporal(
    train_pool: &[ProjectInstance],
    eval_pool: &[ProjectInstance],
    variant: TemporalVariant,
    base_model: &ModelConfig,
    train_cfg: &TrainConfig,
    run_cfg: &TemporalConfigRun,
    seed: u64,
) -> Result<TemporalCurve, TemporalError> {
    if !(run_cfg.step > 0.0 && run_cfg.step <= 1.0) {
        return Err(TemporalError::BadStep(run_cfg.step));
    }
    let model_cfg = match variant {
        TemporalVariant::StaticMlp => ModelConfig {
            layers: 0,
            ..base_model.clone()
        },
        _ => base_model.clone(),
    };

    let refs: Vec<&ProjectInstance> = train_pool.iter().collect();
    let pipeline = fit_pipeline(&refs, true)?;
    let adaptive = matches!(variant, TemporalVariant::Adaptive);
    // Static variants learn from the untouched (0% completion) pool; the
    // adaptive variant learns from every completion state it will meet.
    let prep_train: Vec<PreparedInstance> = if adaptive {
        let mut all = Vec::new();
        for inst in train_pool {
            all.extend(augmented_snapshots(
                &pipeline,
                inst,
                run_cfg.step,
                run_cfg.obs_noise,
            )?);
        }
        all
    } else {
        train_pool
            .iter()
            .map(|i| pipeline.prepare(i))
            .collect::<Result<_, _>>()?
    };
    let mut prep_eval: Vec<PreparedInstance> = eval_pool
        .iter()
        .map(|i| pipeline.prepare(i))
        .collect::<Result<_, _>>()?;

    let (initial_params, _) =
        train_model(&prep_train, &prep_train, &model_cfg, train_cfg, seed, None)?;
    let mut params = initial_params.clone();

    // State-indexed training snapshots for drift-free per-step refreshes.
    let snapshots_per_instance = (1.0 / run_cfg.step).ceil() as usize;

    let mut execs: Vec<Execution> = eval_pool
        .iter()
        .map(|i| execution_plan(i, run_cfg.obs_noise))
        .collect::<Result<_, _>>()?;

    let mut curve = TemporalCurve {
        variant: variant.name().to_string(),
        seed,
        points: Vec::new(),
        posterior_means: Vec::new(),
    };

    // 0% point: initial model over the untouched evaluation pool.
    let preds: Vec<PredictionSet> = prep_eval
        .iter()
        .map(|p| predict_instance(&params, p))
        .collect::<Result<_, _>>()?;
    let (rmse, remaining) = rmse_remaining(&prep_eval, &execs, &preds);
    curve.points.push(TemporalPoint {
        completion_pct: 0.0,
        rmse_remaining: rmse,
        remaining,
    });

    let steps = (1.0 / run_cfg.step).ceil() as usize;
    for step_idx in 0..steps {
        // Reveal the next completion batch everywhere.
        let mut any_remaining = false;
        for (inst, exec) in eval_pool.iter().zip(execs.iter_mut()) {
            let newly = reveal_step(exec, run_cfg.step);
            if matches!(variant, TemporalVariant::Adaptive) {
                update_posteriors(inst, exec, &newly)?;
            }
            if exec.revealed < exec.order.len() {
                any_remaining = true;
            }
        }
        let completion_pct = 100.0
            * execs.iter().map(|e| e.revealed).sum::<usize>() as f64
            / execs.iter().map(|e| e.order.len()).sum::<usize>() as f64;
        if !any_remaining {
            // Nothing left to predict; the curve ends.
            break;
        }

        if matches!(variant, TemporalVariant::Adaptive) {
            // Refresh features and warm-retrain on the revealed labels.
            prep_eval = eval_pool
                .iter()
                .zip(&execs)
                .map(|(inst, exec)| {
                    let (updated, state) = refreshed_instance(inst, exec);
                    let mut prepared = pipeline.prepare_with(&updated, &state)?;
                    prepared.labeled = exec.completed.clone();
                    // The completion-status feature must agree with the
                    // revealed set.
                    debug_assert_eq!(
                        prepared.labeled.iter().filter(|&&b| b).count(),
                        exec.revealed
                    );
                    Ok::<_, TemporalError>(prepared)
                })
                .collect::<Result<_, _>>()?;
            let labeled_any = prep_eval.iter().any(|p| p.labeled_count() > 0);
            if labeled_any {
                // Refresh set: eval instances with revealed labels plus the
                // training snapshots at the matching completion state, so
                // fine-tuning cannot drift off the not-started distribution.
                let mut refresh: Vec<PreparedInstance> = prep_eval.clone();
                let state = (step_idx + 1).min(snapshots_per_instance - 1);
                for chunk in prep_train.chunks(snapshots_per_instance) {
                    if let Some(snapshot) = chunk.get(state) {
                        refresh.push(snapshot.clone());
                    }
                    if let Some(snapshot) = chunk.first() {
                        refresh.push(snapshot.clone());
                    }
                }
                let warm = if run_cfg.cold_retrain {
                    train_model(
                        &prep_train,
                        &prep_train,
                        &model_cfg,
                        train_cfg,
                        seed ^ 0x7E3,
                        None,
                    )?
                    .0
                } else {
                    params
                };
                params = fine_tune(
                    warm,
                    &refresh,
                    run_cfg.retrain_epochs,
                    train_cfg,
                    seed ^ ((step_idx as u64 + 1) << 16),
                )?;
            }
        }

        let preds: Vec<PredictionSet> = prep_eval
            .iter()
            .map(|p| predict_instance(&params, p))
            .collect::<Result<_, _>>()?;
        let (rmse, remaining) = rmse_remaining(&prep_eval, &execs, &preds);
        curve.points.push(TemporalPoint {
            completion_pct,
            rmse_remaining: rmse,
            remaining,
        });
    }

    curve.posterior_means = execs
        .iter()
        .map(|e| e.posteriors.iter().map(|p| p.mean).collect())
        .collect();
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pnf_core::synthgen::{generate_project, GenConfig};

    #[test]
    fn completion_order_follows_true_earliest_finish() {
        let inst = generate_project(&GenConfig::new(15, 0.2, 3)).unwrap();
        let exec = execution_plan(&inst, 0.05).unwrap();
        for w in exec.order.windows(2) {
            assert!(exec.finish[w[0]] <= exec.finish[w[1]] + 1e-12);
        }
    }

    #[test]
    fn reveal_steps_are_monotone_and_exact() {
        let inst = generate_project(&GenConfig::new(10, 0.2, 5)).unwrap();
        let mut exec = execution_plan(&inst, 0.05).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        let mut total = 0;
        for _ in 0..5 {
            let newly = reveal_step(&mut exec, 0.2);
            assert_eq!(newly.len(), 2);
            for a in newly {
                assert!(seen.insert(a), "activity revealed twice");
            }
            total += 2;
            assert_eq!(exec.revealed, total);
        }
        assert!(exec.completed.iter().all(|&b| b));
    }

    #[test]
    fn degenerate_full_step_reveals_everything_at_once() {
        let inst = generate_project(&GenConfig::new(8, 0.2, 7)).unwrap();
        let mut exec = execution_plan(&inst, 0.05).unwrap();
        let newly = reveal_step(&mut exec, 1.0);
        assert_eq!(newly.len(), 8);
    }

    #[test]
    fn single_resource_attribution_converges_to_true_efficiency() {
        // Activities each demand exactly one resource; actual durations are
        // plan / efficiency, so observations equal the true efficiency.
        let mut inst = generate_project(&GenConfig::new(40, 0.1, 11)).unwrap();
        let p = inst.n_resources();
        let efficiencies: Vec<f64> = (0..p).map(|k| 0.8 + 0.1 * k as f64).collect();
        let n = inst.n_activities();
        for a in 0..n {
            let k = a % p;
            for kk in 0..p {
                inst.demands[a][kk] = if kk == k { 1.0 } else { 0.0 };
            }
            let t = inst.t_true.as_mut().unwrap();
            // plan (estimate) = actual * efficiency.
            inst.t_est[a] = t[a] * efficiencies[k];
        }
        let mut exec = execution_plan(&inst, 1e-6).unwrap();
        for _ in 0..5 {
            let newly = reveal_step(&mut exec, 0.2);
            update_posteriors(&inst, &mut exec, &newly).unwrap();
        }
        for (k, post) in exec.posteriors.iter().enumerate() {
            assert!(
                (post.mean - efficiencies[k]).abs() < 0.05,
                "resource {k}: posterior {} vs true {}",
                post.mean,
                efficiencies[k]
            );
        }
    }
}
