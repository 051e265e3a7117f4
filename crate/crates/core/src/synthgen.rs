//! Synthetic project instance generation.
//!
//! Precedence DAGs are sampled over a random topological permutation with a
//! reachability backbone: whenever no directed path connects consecutive
//! permutation slots, the direct edge is added. Resource demands are
//! log-normal (log-space parameters) clipped to [0.1, 10]; duration targets
//! combine own demand, predecessor demand and in-degree; cost targets combine
//! duration, demand and a skill multiplier. Planner estimates multiply the
//! targets by a uniform band. Every draw comes from a labeled substream of
//! the run seed, so results are independent of internal loop refactoring.

use crate::graph::{Edge, ProjectGraph, Relation};
use crate::instance::{InstanceMeta, ProjectInstance};
use crate::rng::StreamRng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("perturbation rate must lie in [0, 1], got {0}")]
    RateOutOfRange(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    /// Activity count (n >= 2).
    pub n: usize,
    /// Edge probability per ordered pair in the topological order.
    pub density: f64,
    /// Resource count.
    pub p: usize,
    /// Duration coefficients (own demand, predecessor demand, in-degree).
    pub alpha: [f64; 3],
    /// Cost coefficients (duration, own demand, skill).
    pub beta: [f64; 3],
    /// Additive noise standard deviations for duration and cost.
    pub noise_t: f64,
    pub noise_c: f64,
    /// Multiplicative estimate band (low, high).
    pub est_band: (f64, f64),
    pub seed: u64,
}

impl GenConfig {
    pub fn new(n: usize, density: f64, seed: u64) -> Self {
        GenConfig {
            n,
            density,
            p: 5,
            alpha: [0.7, 0.2, 0.1],
            beta: [0.6, 0.3, 0.1],
            noise_t: 0.5,
            noise_c: 0.5,
            est_band: (0.8, 1.2),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n < 2 {
            return Err(SynthError::InvalidConfig(format!(
                "need at least 2 activities, got {}",
                self.n
            )));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return Err(SynthError::InvalidConfig(format!(
                "density must lie in (0, 1), got {}",
                self.density
            )));
        }
        if self.p == 0 {
            return Err(SynthError::InvalidConfig("need at least 1 resource".into()));
        }
        if self.noise_t < 0.0 || self.noise_c < 0.0 {
            return Err(SynthError::InvalidConfig("noise must be >= 0".into()));
        }
        if self.est_band.0 > self.est_band.1 || self.est_band.0 <= 0.0 {
            return Err(SynthError::InvalidConfig(format!(
                "estimate band must satisfy 0 < low <= high, got {:?}",
                self.est_band
            )));
        }
        Ok(())
    }
}

/// Duration target floor.
pub const T_FLOOR: f64 = 0.5;
/// Cost target floor.
pub const C_FLOOR: f64 = 0.1;
/// Demand clip range.
pub const DEMAND_RANGE: (f64, f64) = (0.1, 10.0);

pub fn activity_id(i: usize, n: usize) -> String {
    let width = (n.max(2) - 1).to_string().len();
    format!("a{i:0width$}")
}

pub fn resource_id(k: usize, p: usize) -> String {
    let width = (p.max(2) - 1).to_string().len();
    format!("r{k:0width$}")
}

/// Directed reachability via DFS on an adjacency list.
fn reachable(adj: &[Vec<usize>], from: usize, to: usize) -> bool {
    if from == to {
        return true;
    }
    let mut stack = vec![from];
    let mut seen = vec![false; adj.len()];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if w == to {
                return true;
            }
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    false
}

pub fn generate_project(config: &GenConfig) -> Result<ProjectInstance, SynthError> {
    config.validate()?;
    let n = config.n;
    let p = config.p;
    let root = StreamRng::from_seed(config.seed).stream("synthgen");

    // Topological permutation: position s in the order holds activity pi[s].
    let mut pi: Vec<usize> = (0..n).collect();
    root.stream("permutation").shuffle(&mut pi);

    // Random pair edges over positions (s, t) with s < t.
    let mut edge_rng = root.stream("edges");
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for s in 0..n.saturating_sub(1) {
        for t in (s + 1)..n {
            if edge_rng.uniform() < config.density {
                pairs.push((pi[s], pi[t]));
                adj[pi[s]].push(pi[t]);
            }
        }
    }
    let random_edges = pairs.len();

    // Backbone: connect consecutive positions when unreachable.
    let mut backbone: Vec<(usize, usize)> = Vec::new();
    for s in 0..n.saturating_sub(1) {
        if !reachable(&adj, pi[s], pi[s + 1]) {
            backbone.push((pi[s], pi[s + 1]));
            adj[pi[s]].push(pi[s + 1]);
        }
    }

    // Demand matrix: per-resource log-space means, shared noise scale.
    let mut mean_rng = root.stream("demand-means");
    let log_means: Vec<f64> = (0..p).map(|_| mean_rng.uniform_in(0.5, 1.5)).collect();
    let mut demand_rng = root.stream("demands");
    let mut demands = vec![vec![0.0f64; p]; n];
    for row in demands.iter_mut() {
        for (k, cell) in row.iter_mut().enumerate() {
            let dist = LogNormal::new(log_means[k], 0.5).expect("valid lognormal");
            *cell = dist
                .sample(&mut demand_rng)
                .clamp(DEMAND_RANGE.0, DEMAND_RANGE.1);
        }
    }

    let mut skill_rng = root.stream("skill");
    let skill: Vec<f64> = (0..n).map(|_| skill_rng.uniform_in(0.8, 1.2)).collect();

    // Predecessor demand sums and in-degrees from the sampled structure.
    let mut pred_demand = vec![0.0f64; n];
    let mut indeg = vec![0usize; n];
    for (&(u, v), _) in pairs.iter().map(|e| (e, ())).chain(backbone.iter().map(|e| (e, ()))) {
        pred_demand[v] += demands[u].iter().sum::<f64>();
        indeg[v] += 1;
    }

    let mut noise_rng = root.stream("noise");
    let normal_t = Normal::new(0.0, config.noise_t.max(1e-300)).expect("valid normal");
    let normal_c = Normal::new(0.0, config.noise_c.max(1e-300)).expect("valid normal");
    let mut t_true = vec![0.0f64; n];
    let mut c_true = vec![0.0f64; n];
    for i in 0..n {
        let own: f64 = demands[i].iter().sum();
        let eps_t = if config.noise_t > 0.0 {
            normal_t.sample(&mut noise_rng)
        } else {
            0.0
        };
        let eps_c = if config.noise_c > 0.0 {
            normal_c.sample(&mut noise_rng)
        } else {
            0.0
        };
        let t = config.alpha[0] * own
            + config.alpha[1] * pred_demand[i]
            + config.alpha[2] * indeg[i] as f64
            + eps_t;
        t_true[i] = t.max(T_FLOOR);
        let c = config.beta[0] * t_true[i] + config.beta[1] * own + config.beta[2] * skill[i] + eps_c;
        c_true[i] = c.max(C_FLOOR);
    }

    let mut est_rng = root.stream("estimates");
    let (lo, hi) = config.est_band;
    let t_est: Vec<f64> = t_true.iter().map(|&t| t * est_rng.uniform_in(lo, hi)).collect();
    let c_est: Vec<f64> = c_true.iter().map(|&c| c * est_rng.uniform_in(lo, hi)).collect();

    // Assemble the typed graph: precedence, then assignment (with demand as
    // the work-quantity edge feature), then resource collaboration.
    let act_ids: Vec<String> = (0..n).map(|i| activity_id(i, n)).collect();
    let res_ids: Vec<String> = (0..p).map(|k| resource_id(k, p)).collect();
    let mut edges = Vec::new();
    for &(u, v) in pairs.iter().chain(backbone.iter()) {
        edges.push(Edge::new(act_ids[u].clone(), act_ids[v].clone(), Relation::Precedence));
    }
    for i in 0..n {
        for k in 0..p {
            edges.push(
                Edge::new(act_ids[i].clone(), res_ids[k].clone(), Relation::Assignment)
                    .with_features(vec![demands[i][k]]),
            );
        }
    }
    for k in 0..p {
        for l in (k + 1)..p {
            edges.push(Edge::new(res_ids[k].clone(), res_ids[l].clone(), Relation::Collaboration));
        }
    }
    let graph = ProjectGraph::new(act_ids.clone(), res_ids, edges)
        .expect("generated graph is structurally valid");
    debug_assert!(graph.topo_order().is_ok());

    let provenance = serde_json::json!({
        "config": config,
        "random_edges": random_edges,
        "backbone_edges": backbone.len(),
    });
    Ok(ProjectInstance {
        graph,
        demands,
        demand_mask: None,
        skill: Some(skill),
        activity_type: None,
        type_vocab: Vec::new(),
        t_est,
        c_est,
        t_true: Some(t_true),
        c_true: Some(c_true),
        extra_feature_names: Vec::new(),
        extra_features: vec![Vec::new(); n],
        cat_feature_names: Vec::new(),
        cat_features: vec![Vec::new(); n],
        resource_feature_names: Vec::new(),
        resource_features: vec![Vec::new(); p],
        overhead: 0.0,
        meta: InstanceMeta {
            name: format!("synthetic-n{}-s{}", n, config.seed),
            seed: config.seed,
            source: "synthetic".into(),
        },
        provenance: Some(provenance),
        protected_edges: backbone
            .iter()
            .map(|&(u, v)| (act_ids[u].clone(), act_ids[v].clone()))
            .collect(),
    })
}

/// Controlled dataset perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Perturbation {
    /// Add gaussian noise N(0, scale * column std) to each demand entry.
    FeatureNoise { scale: f64 },
    /// Mask each demand entry with the given probability.
    Missingness { rate: f64 },
    /// Remove non-backbone precedence edges with the given probability.
    EdgeDrop { rate: f64 },
    /// Insert round(rate * |E_prec|) order-respecting precedence edges.
    EdgeAdd { rate: f64 },
}

pub fn perturb(
    instance: &ProjectInstance,
    kind: Perturbation,
    seed: u64,
) -> Result<ProjectInstance, SynthError> {
    let rate = match kind {
        Perturbation::FeatureNoise { scale } => scale,
        Perturbation::Missingness { rate }
        | Perturbation::EdgeDrop { rate }
        | Perturbation::EdgeAdd { rate } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(SynthError::RateOutOfRange(rate));
            }
            rate
        }
    };
    if rate < 0.0 {
        return Err(SynthError::RateOutOfRange(rate));
    }
    let mut out = instance.clone();
    let root = StreamRng::from_seed(seed).stream("perturb");
    match kind {
        Perturbation::FeatureNoise { scale } => {
            if scale == 0.0 {
                return Ok(out);
            }
            let n = out.demands.len();
            let p = out.demands.first().map(|r| r.len()).unwrap_or(0);
            let mut rng = root.stream("feature-noise");
            for k in 0..p {
                let col: Vec<f64> = (0..n).map(|i| out.demands[i][k]).collect();
                let mean = col.iter().sum::<f64>() / n.max(1) as f64;
                let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>()
                    / (n.saturating_sub(1)).max(1) as f64;
                let std = var.sqrt();
                if std == 0.0 {
                    continue;
                }
                let dist = Normal::new(0.0, scale * std).expect("valid normal");
                for i in 0..n {
                    out.demands[i][k] = (out.demands[i][k] + dist.sample(&mut rng))
                        .clamp(DEMAND_RANGE.0, DEMAND_RANGE.1);
                }
            }
        }
        Perturbation::Missingness { rate } => {
            if rate == 0.0 {
                return Ok(out);
            }
            let mut rng = root.stream("missingness");
            let mut mask: Vec<Vec<bool>> = out
                .demands
                .iter()
                .map(|row| row.iter().map(|_| true).collect())
                .collect();
            let mut any = false;
            for row in mask.iter_mut() {
                for cell in row.iter_mut() {
                    if rng.uniform() < rate {
                        *cell = false;
                        any = true;
                    }
                }
            }
            if any {
                out.demand_mask = Some(mask);
            }
        }
        Perturbation::EdgeDrop { rate } => {
            if rate == 0.0 {
                return Ok(out);
            }
            let mut rng = root.stream("edge-drop");
            let protected: std::collections::HashSet<(String, String)> =
                out.protected_edges.iter().cloned().collect();
            let kept: Vec<Edge> = out
                .graph
                .edges()
                .iter()
                .filter(|e| {
                    if e.relation != Relation::Precedence {
                        return true;
                    }
                    if protected.contains(&(e.src.clone(), e.dst.clone())) {
                        return true;
                    }
                    rng.uniform() >= rate
                })
                .cloned()
                .collect();
            out.graph = ProjectGraph::new(
                out.graph.activity_ids().to_vec(),
                out.graph.resource_ids().to_vec(),
                kept,
            )
            .expect("edge removal preserves validity");
        }
        Perturbation::EdgeAdd { rate } => {
            if rate == 0.0 {
                return Ok(out);
            }
            let mut rng = root.stream("edge-add");
            let graph = &out.graph;
            let order = graph.topo_order().expect("instance graphs are DAGs");
            let mut pos = vec![0usize; graph.n_activities()];
            for (s, &i) in order.iter().enumerate() {
                pos[i] = s;
            }
            let existing: std::collections::HashSet<(usize, usize)> = (0..graph.n_activities())
                .flat_map(|i| graph.succs(i).iter().map(move |&j| (i, j)))
                .collect();
            let mut candidates: Vec<(usize, usize)> = Vec::new();
            for i in 0..graph.n_activities() {
                for j in 0..graph.n_activities() {
                    if pos[i] < pos[j] && !existing.contains(&(i, j)) {
                        candidates.push((i, j));
                    }
                }
            }
            let n_prec = existing.len();
            let n_add = ((rate * n_prec as f64).round() as usize).min(candidates.len());
            let chosen = rng.sample_without_replacement(candidates.len(), n_add);
            let mut edges = graph.edges().to_vec();
            for c in chosen {
                let (i, j) = candidates[c];
                edges.push(Edge::new(
                    graph.activity_ids()[i].clone(),
                    graph.activity_ids()[j].clone(),
                    Relation::Precedence,
                ));
            }
            out.graph = ProjectGraph::new(
                graph.activity_ids().to_vec(),
                graph.resource_ids().to_vec(),
                edges,
            )
            .expect("order-respecting additions preserve validity");
            debug_assert!(out.graph.topo_order().is_ok());
        }
    }
    Ok(out)
}
