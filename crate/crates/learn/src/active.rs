//! Measurement-allocation scoring and the iterative active-learning loop.
//!
//! The priority of an activity multiplies its predicted-variance mass by a
//! topological criticality weight (betweenness, critical-path membership
//! under the current predicted durations, and degree). The loop pools
//! activities across instances: starting from a seeded random labeled set,
//! each round scores the unlabeled pool under the chosen strategy, reveals
//! the top slice, warm-retrains, and records RMSE on what remains.

use crate::gnn::{ModelConfig, ModelParams, PredictionSet};
use crate::prep::{fit_pipeline, PreparedInstance, PrepError};
use crate::train::{fine_tune, predict_instance, train_model, TrainConfig, TrainError};
use pnf_core::graph::{betweenness_centrality, compute_schedule, ProjectGraph, Schedule};
use pnf_core::instance::ProjectInstance;
use pnf_core::rng::StreamRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("budget fractions must lie in (0, 1], got initial {initial}, increment {increment}")]
    BudgetExhausted { initial: f64, increment: f64 },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Graph(#[from] pnf_core::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Uncertainty,
    Topology,
    Hybrid,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Uncertainty => "uncertainty",
            Strategy::Topology => "topology",
            Strategy::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveConfig {
    pub w_t: f64,
    pub w_c: f64,
    /// Centrality weights: betweenness, critical-path membership, degree.
    pub gamma_betweenness: f64,
    pub gamma_critical: f64,
    pub gamma_degree: f64,
    pub strategy: Strategy,
    /// Initial labeled fraction of the pooled activities.
    pub initial_budget: f64,
    /// Fraction revealed per round.
    pub increment: f64,
    /// Maximum rounds after the initial fit (0 = run to exhaustion).
    pub rounds: usize,
    /// Warm-retrain epochs per round.
    pub retrain_epochs: usize,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            w_t: 1.0,
            w_c: 1.0,
            gamma_betweenness: 1.0,
            gamma_critical: 1.0,
            gamma_degree: 0.1,
            strategy: Strategy::Hybrid,
            initial_budget: 0.2,
            increment: 0.1,
            rounds: 0,
            retrain_epochs: 15,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<(), ActiveError> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.initial_budget) || !ok(self.increment) {
            return Err(ActiveError::BudgetExhausted {
                initial: self.initial_budget,
                increment: self.increment,
            });
        }
        Ok(())
    }
}

/// Hybrid priority per activity:
/// (w_t var_t + w_c var_c) * (g1 betweenness + g2 critical + g3 degree).
///
/// Betweenness and degree are normalized by their per-graph maxima so the
/// default centrality weights contribute on comparable scales (raw
/// betweenness grows quadratically with graph size and average degree grows
/// with density; unnormalized either would drown the other terms).
/// Deterministic: the returned map is ordered by activity id.
pub fn priority_scores(
    preds: &PredictionSet,
    graph: &ProjectGraph,
    schedule: &Schedule,
    config: &ActiveConfig,
) -> BTreeMap<String, f64> {
    let betweenness = betweenness_centrality(graph);
    let max_betweenness = betweenness
        .values()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let max_degree = (0..graph.n_activities())
        .map(|i| graph.preds(i).len() + graph.succs(i).len())
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut out = BTreeMap::new();
    for (i, id) in graph.activity_ids().iter().enumerate() {
        let uncertainty = config.w_t * preds.var_t(i) + config.w_c * preds.var_c(i);
        let critical = if schedule.critical_activities.contains(id) {
            1.0
        } else {
            0.0
        };
        let degree = (graph.preds(i).len() + graph.succs(i).len()) as f64 / max_degree;
        let omega = config.gamma_betweenness * betweenness[id] / max_betweenness
            + config.gamma_critical * critical
            + config.gamma_degree * degree;
        out.insert(id.clone(), uncertainty * omega);
    }
    out
}

/// Topology-only weight (uncertainty factor dropped).
fn topology_scores(
    preds: &PredictionSet,
    graph: &ProjectGraph,
    schedule: &Schedule,
    config: &ActiveConfig,
) -> BTreeMap<String, f64> {
    let uniform = ActiveConfig {
        w_t: 1.0,
        w_c: 0.0,
        ..*config
    };
    let mut scores = priority_scores(preds, graph, schedule, &uniform);
    for (i, id) in graph.activity_ids().iter().enumerate() {
        let v = preds.var_t(i).max(1e-300);
        if let Some(s) = scores.get_mut(id) {
            *s /= v; // leaves the pure omega term
        }
    }
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivePoint {
    pub budget_pct: f64,
    pub rmse_unlabeled: f64,
    pub labeled: usize,
    /// Per-instance RMSE over that instance's remaining unlabeled
    /// activities (NaN-free: instances with nothing left are omitted by
    /// index via the parallel `instances_with_remaining` list).
    #[serde(skip)]
    pub per_instance_rmse: Vec<f64>,
    #[serde(skip)]
    pub instances_with_remaining: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveCurve {
    pub strategy: String,
    pub seed: u64,
    pub points: Vec<ActivePoint>,
}

impl ActiveCurve {
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{:.4},{}\n",
                self.strategy, self.seed, p.budget_pct, p.rmse_unlabeled
            ));
        }
        out
    }

    pub fn csv_header() -> &'static str {
        "strategy,seed,budget_pct,rmse\n"
    }
}

/// Pooled RMSE over both heads on the unlabeled activities, plus the
/// per-instance decomposition for paired statistics.
fn rmse_unlabeled(
    prepared: &[PreparedInstance],
    preds: &[PredictionSet],
) -> (f64, Vec<f64>, Vec<usize>) {
    let mut sq = 0.0;
    let mut n = 0usize;
    let mut per_instance = Vec::new();
    let mut with_remaining = Vec::new();
    for (ii, (inst, p)) in prepared.iter().zip(preds).enumerate() {
        let mut isq = 0.0;
        let mut in_count = 0usize;
        for i in 0..inst.n_act() {
            if inst.labeled[i] {
                continue;
            }
            let et = inst.t_true[i] - p.mu_t[i];
            let ec = inst.c_true[i] - p.mu_c[i];
            isq += et * et + ec * ec;
            in_count += 2;
        }
        if in_count > 0 {
            per_instance.push((isq / in_count as f64).sqrt());
            with_remaining.push(ii);
        }
        sq += isq;
        n += in_count;
    }
    let pooled = if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };
    (pooled, per_instance, with_remaining)
}

/// Run the active-measurement loop for one strategy and seed.
///
/// Labels are revealed over a pooled (instance, activity) universe; the
/// initial random labeled set depends only on the seed, so strategies are
/// compared from identical starting conditions. Returns one curve point per
/// budget level, the first at the initial budget before any selection.
pub fn run_active_loop(
    instances: &[ProjectInstance],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    config: &ActiveConfig,
    seed: u64,
) -> Result<ActiveCurve, ActiveError> {
    config.validate()?;
    let refs: Vec<&ProjectInstance> = instances.iter().collect();
    let pipeline = fit_pipeline(&refs, false)?;
    let mut prepared: Vec<PreparedInstance> = instances
        .iter()
        .map(|inst| pipeline.prepare(inst))
        .collect::<Result<_, _>>()?;

    // Pooled activity universe.
    let universe: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(ii, p)| (0..p.n_act()).map(move |a| (ii, a)))
        .collect();
    let total = universe.len();
    let root = StreamRng::from_seed(seed).stream("active");

    // Initial labeled set: seeded uniform, identical across strategies.
    for p in prepared.iter_mut() {
        p.labeled = vec![false; p.n_act()];
    }
    let mut order: Vec<usize> = (0..total).collect();
    root.stream("initial").shuffle(&mut order);
    let initial = ((config.initial_budget * total as f64).ceil() as usize).min(total);
    for &u in order.iter().take(initial) {
        let (ii, a) = universe[u];
        prepared[ii].labeled[a] = true;
    }

    let mut labeled_count = initial;
    let mut params: Option<ModelParams> = None;
    let mut curve = ActiveCurve {
        strategy: config.strategy.name().to_string(),
        seed,
        points: Vec::new(),
    };
    let mut round = 0usize;
    loop {
        // (Re)train: fresh fit on the first round, warm afterwards.
        let trained = match params.take() {
            None => {
                let (p, _) = train_model(&prepared, &prepared, model_cfg, train_cfg, seed, None)?;
                p
            }
            Some(existing) => fine_tune(
                existing,
                &prepared,
                config.retrain_epochs,
                train_cfg,
                seed ^ (round as u64) << 8,
            )?,
        };

        let preds: Vec<PredictionSet> = prepared
            .iter()
            .map(|p| predict_instance(&trained, p))
            .collect::<Result<_, _>>()?;
        let (pooled, per_instance_rmse, instances_with_remaining) =
            rmse_unlabeled(&prepared, &preds);
        curve.points.push(ActivePoint {
            budget_pct: 100.0 * labeled_count as f64 / total as f64,
            rmse_unlabeled: pooled,
            labeled: labeled_count,
            per_instance_rmse,
            instances_with_remaining,
        });

        let remaining: Vec<(usize, usize)> = universe
            .iter()
            .copied()
            .filter(|&(ii, a)| !prepared[ii].labeled[a])
            .collect();
        if remaining.is_empty() || (config.rounds > 0 && round >= config.rounds) {
            params = Some(trained);
            break;
        }
        let take = ((config.increment * total as f64).ceil() as usize)
            .min(remaining.len())
            .max(1);

        let chosen: Vec<(usize, usize)> = match config.strategy {
            Strategy::Random => {
                let mut rng = root.stream("select").substream(round as u64);
                let picks = rng.sample_without_replacement(remaining.len(), take);
                picks.into_iter().map(|k| remaining[k]).collect()
            }
            _ => {
                // Fresh predictions feed every informed strategy.
                let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(remaining.len());
                for (ii, inst) in instances.iter().enumerate() {
                    let p = &preds[ii];
                    let clamped: BTreeMap<String, f64> = inst
                        .graph
                        .activity_ids()
                        .iter()
                        .enumerate()
                        .map(|(i, id)| (id.clone(), p.mu_t[i].max(0.0)))
                        .collect();
                    let schedule = compute_schedule(&inst.graph, &clamped)?;
                    let scores = match config.strategy {
                        Strategy::Uncertainty => inst
                            .graph
                            .activity_ids()
                            .iter()
                            .enumerate()
                            .map(|(i, id)| {
                                (
                                    id.clone(),
                                    config.w_t * p.var_t(i) + config.w_c * p.var_c(i),
                                )
                            })
                            .collect(),
                        Strategy::Topology => topology_scores(p, &inst.graph, &schedule, config),
                        Strategy::Hybrid => priority_scores(p, &inst.graph, &schedule, config),
                        Strategy::Random => unreachable!(),
                    };
                    for (a, id) in inst.graph.activity_ids().iter().enumerate() {
                        if !prepared[ii].labeled[a] {
                            scored.push((scores[id], ii, a));
                        }
                    }
                }
                scored.sort_by(|x, y| {
                    y.0.partial_cmp(&x.0)
                        .expect("finite scores")
                        .then(x.1.cmp(&y.1))
                        .then(x.2.cmp(&y.2))
                });
                scored.into_iter().take(take).map(|(_, ii, a)| (ii, a)).collect()
            }
        };
        for (ii, a) in chosen {
            debug_assert!(!prepared[ii].labeled[a], "activities are revealed once");
            prepared[ii].labeled[a] = true;
            labeled_count += 1;
        }
        params = Some(trained);
        round += 1;
    }
    let _ = params;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pnf_core::graph::{Edge, Relation};

    fn tiny_graph() -> ProjectGraph {
        ProjectGraph::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![],
            vec![
                Edge::new("A", "B", Relation::Precedence),
                Edge::new("B", "C", Relation::Precedence),
            ],
        )
        .unwrap()
    }

    fn preds(vars_t: &[f64], vars_c: &[f64]) -> PredictionSet {
        PredictionSet {
            mu_t: vec![1.0; vars_t.len()],
            logvar_t: vars_t.iter().map(|v| v.ln()).collect(),
            mu_c: vec![1.0; vars_c.len()],
            logvar_c: vars_c.iter().map(|v| v.ln()).collect(),
        }
    }

    #[test]
    fn plug_in_score_matches_formula() {
        // Single activity with var_t = 2, var_c = 3 and omega = 0.5.
        let g = ProjectGraph::new(vec!["A".into()], vec![], vec![]).unwrap();
        let schedule = compute_schedule(&g, &[("A".to_string(), 1.0)].into_iter().collect()).unwrap();
        let cfg = ActiveConfig {
            w_t: 1.0,
            w_c: 1.0,
            gamma_betweenness: 0.0,
            gamma_critical: 0.5,
            gamma_degree: 0.0,
            ..ActiveConfig::default()
        };
        let p = preds(&[2.0], &[3.0]);
        let scores = priority_scores(&p, &g, &schedule, &cfg);
        assert!((scores["A"] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_centrality_weights_zero_all_scores() {
        let g = tiny_graph();
        let schedule = compute_schedule(
            &g,
            &g.activity_ids()
                .iter()
                .map(|id| (id.clone(), 1.0))
                .collect(),
        )
        .unwrap();
        let cfg = ActiveConfig {
            gamma_betweenness: 0.0,
            gamma_critical: 0.0,
            gamma_degree: 0.0,
            ..ActiveConfig::default()
        };
        let p = preds(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]);
        let scores = priority_scores(&p, &g, &schedule, &cfg);
        assert!(scores.values().all(|&s| s == 0.0));
    }

    #[test]
    fn scaling_variances_preserves_ranking() {
        let g = tiny_graph();
        let schedule = compute_schedule(
            &g,
            &g.activity_ids()
                .iter()
                .map(|id| (id.clone(), 1.0))
                .collect(),
        )
        .unwrap();
        let cfg = ActiveConfig::default();
        let base = preds(&[1.0, 4.0, 2.0], &[0.5, 0.5, 0.5]);
        let scaled = preds(&[3.0, 12.0, 6.0], &[1.5, 1.5, 1.5]);
        let s1 = priority_scores(&base, &g, &schedule, &cfg);
        let s2 = priority_scores(&scaled, &g, &schedule, &cfg);
        let rank = |s: &BTreeMap<String, f64>| {
            let mut ids: Vec<&String> = s.keys().collect();
            ids.sort_by(|a, b| s[*b].partial_cmp(&s[*a]).unwrap().then(a.cmp(b)));
            ids.into_iter().cloned().collect::<Vec<_>>()
        };
        assert_eq!(rank(&s1), rank(&s2));
        for id in s1.keys() {
            assert!((s2[id] - 3.0 * s1[id]).abs() < 1e-9);
        }
    }
}
