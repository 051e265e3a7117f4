//! Model-side preparation: turns raw instances into standardized feature
//! matrices plus per-relation adjacency indices.
//!
//! Stored features (demands, skill, estimates, drivers) go through the
//! ingest preprocessing fitted on the training split; graph-derived columns
//! (degrees, betweenness, assignment counts) are z-scored with their own
//! train statistics here. Optional temporal columns carry execution state:
//! completion status one-hot, percent complete, and normalized elapsed time.

use crate::tensor::Matrix;
use pnf_core::graph::{activity_features, compute_schedule, GraphError, ProjectGraph};
use pnf_core::ingest::{apply_preprocess, fit_preprocess, IngestError, PreprocessStats};
use pnf_core::instance::ProjectInstance;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("instance has no targets: {0}")]
    NoLabels(String),
    #[error("inconsistent execution state: {0}")]
    BadState(String),
}

/// Fixed relation order used everywhere messages are concatenated:
/// precedence-in, precedence-out, assignment, collaboration.
pub const N_RELATIONS: usize = 4;
pub const REL_PREC_IN: usize = 0;
pub const REL_PREC_OUT: usize = 1;
pub const REL_ASSIGN: usize = 2;
pub const REL_COLLAB: usize = 3;

/// Default efficiency belief used for resource features before any
/// observations arrive.
pub const PRIOR_MEAN: f64 = 1.0;
pub const PRIOR_VAR: f64 = 0.25;

/// Node-indexed adjacency: activities come first, then resources.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    pub n_act: usize,
    pub n_res: usize,
    /// neighbors[r][v] = message sources u for node v under relation r,
    /// in adjacency order.
    pub neighbors: Vec<Vec<Vec<usize>>>,
    /// Flattened (src, dst) pairs per relation, grouped by dst ascending,
    /// sources in adjacency order within each dst.
    pub edge_src: Vec<Vec<usize>>,
    pub edge_dst: Vec<Vec<usize>>,
    /// Activities grouped by longest-path depth from the sources; every
    /// predecessor of a node sits in a strictly earlier level.
    pub depth_levels: Vec<Vec<usize>>,
}

impl GraphTensors {
    pub fn build(graph: &ProjectGraph) -> Self {
        let n_act = graph.n_activities();
        let n_res = graph.n_resources();
        let n = n_act + n_res;
        let mut neighbors = vec![vec![Vec::new(); n]; N_RELATIONS];
        for v in 0..n_act {
            neighbors[REL_PREC_IN][v] = graph.preds(v).to_vec();
            neighbors[REL_PREC_OUT][v] = graph.succs(v).to_vec();
            neighbors[REL_ASSIGN][v] = graph
                .assigned_resources(v)
                .iter()
                .map(|&r| n_act + r)
                .collect();
        }
        for r in 0..n_res {
            neighbors[REL_ASSIGN][n_act + r] = graph.resource_activities(r).to_vec();
            neighbors[REL_COLLAB][n_act + r] = graph
                .collaborators(r)
                .iter()
                .map(|&k| n_act + k)
                .collect();
        }
        let mut edge_src = vec![Vec::new(); N_RELATIONS];
        let mut edge_dst = vec![Vec::new(); N_RELATIONS];
        for rel in 0..N_RELATIONS {
            for v in 0..n {
                for &u in &neighbors[rel][v] {
                    edge_src[rel].push(u);
                    edge_dst[rel].push(v);
                }
            }
        }

        // Longest-path depth per activity (graphs are validated DAGs).
        let order = graph.topo_order().expect("prepared graphs are acyclic");
        let mut depth = vec![0usize; n_act];
        let mut max_depth = 0;
        for &v in &order {
            let d = graph
                .preds(v)
                .iter()
                .map(|&u| depth[u] + 1)
                .max()
                .unwrap_or(0);
            depth[v] = d;
            max_depth = max_depth.max(d);
        }
        let mut depth_levels: Vec<Vec<usize>> = vec![Vec::new(); max_depth + 1];
        for v in 0..n_act {
            depth_levels[depth[v]].push(v);
        }
        if n_act == 0 {
            depth_levels.clear();
        }

        GraphTensors {
            n_act,
            n_res,
            neighbors,
            edge_src,
            edge_dst,
            depth_levels,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_act + self.n_res
    }

    /// Largest neighbor-list length over all relations and nodes.
    pub fn max_degree(&self) -> usize {
        self.neighbors
            .iter()
            .flat_map(|per_node| per_node.iter().map(|l| l.len()))
            .max()
            .unwrap_or(0)
    }
}

/// Execution state injected into temporal feature columns.
#[derive(Debug, Clone, Default)]
pub struct NodeState {
    /// Completed flag per activity; `None` means nothing has executed.
    pub completed: Option<Vec<bool>>,
    pub pct_complete: f64,
    /// Elapsed time, normalized by the estimated makespan upstream.
    pub elapsed: f64,
    /// Per-resource posterior (mean, variance); `None` keeps the prior.
    pub posterior: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub name: String,
    pub activity_ids: Vec<String>,
    pub tensors: GraphTensors,
    pub act_features: Matrix,
    pub res_features: Matrix,
    pub t_true: Vec<f64>,
    pub c_true: Vec<f64>,
    pub labeled: Vec<bool>,
    pub overhead: f64,
    pub true_makespan: f64,
    pub true_total_cost: f64,
}

impl PreparedInstance {
    pub fn n_act(&self) -> usize {
        self.tensors.n_act
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub stats: PreprocessStats,
    /// (name, mean, std) per graph-derived column.
    pub derived_stats: Vec<(String, f64, f64)>,
    pub act_feature_names: Vec<String>,
    pub res_feature_names: Vec<String>,
    pub temporal_features: bool,
}

const DERIVED: [&str; 4] = ["deg_in", "deg_out", "betweenness", "n_assigned"];

fn derived_columns(inst: &ProjectInstance) -> Result<(Vec<String>, Vec<Vec<f64>>), PrepError> {
    let fm = activity_features(&inst.graph, &inst.feature_context())?;
    Ok((fm.names, fm.rows))
}

/// Fit the full feature pipeline on training instances.
pub fn fit_pipeline(
    train: &[&ProjectInstance],
    temporal_features: bool,
) -> Result<FeaturePipeline, PrepError> {
    let stats = fit_preprocess(train)?;
    // Gather derived-column values across the processed training instances.
    let mut sums: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0); DERIVED.len()];
    let mut names_ref: Option<Vec<String>> = None;
    for inst in train {
        let processed = apply_preprocess(&stats, inst)?;
        let (names, rows) = derived_columns(&processed)?;
        for (d, dname) in DERIVED.iter().enumerate() {
            let col = names
                .iter()
                .position(|n| n == dname)
                .expect("derived column present");
            for row in &rows {
                let v = row[col];
                sums[d].0 += v;
                sums[d].1 += v * v;
                sums[d].2 += 1.0;
            }
        }
        if names_ref.is_none() {
            names_ref = Some(names);
        }
    }
    let derived_stats: Vec<(String, f64, f64)> = DERIVED
        .iter()
        .zip(&sums)
        .map(|(name, &(s, s2, n))| {
            let mean = s / n.max(1.0);
            let var = (s2 / n.max(1.0) - mean * mean).max(0.0);
            let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            (name.to_string(), mean, std)
        })
        .collect();

    let mut act_feature_names = names_ref.unwrap_or_default();
    // Stored scalar extras appended after the documented layout.
    let sample = train[0];
    if sample.skill.is_some() {
        act_feature_names.push("skill".into());
    }
    let processed0 = apply_preprocess(&stats, sample)?;
    for name in &processed0.extra_feature_names {
        act_feature_names.push(name.clone());
    }
    if temporal_features {
        for name in [
            "status_not_started",
            "status_in_progress",
            "status_completed",
            "pct_complete",
            "elapsed",
        ] {
            act_feature_names.push(name.into());
        }
    }
    let mut res_feature_names = vec![
        "posterior_mean".to_string(),
        "posterior_var".to_string(),
        "demand_mean".to_string(),
        "demand_std".to_string(),
    ];
    for name in &sample.resource_feature_names {
        res_feature_names.push(name.clone());
    }
    Ok(FeaturePipeline {
        stats,
        derived_stats,
        act_feature_names,
        res_feature_names,
        temporal_features,
    })
}

impl FeaturePipeline {
    pub fn prepare(&self, inst: &ProjectInstance) -> Result<PreparedInstance, PrepError> {
        self.prepare_with(inst, &NodeState::default())
    }

    pub fn prepare_with(
        &self,
        inst: &ProjectInstance,
        state: &NodeState,
    ) -> Result<PreparedInstance, PrepError> {
        let t_true = inst
            .t_true
            .clone()
            .ok_or_else(|| PrepError::NoLabels(inst.meta.name.clone()))?;
        let c_true = inst
            .c_true
            .clone()
            .ok_or_else(|| PrepError::NoLabels(inst.meta.name.clone()))?;

        let processed = apply_preprocess(&self.stats, inst)?;
        let (names, mut rows) = derived_columns(&processed)?;
        // Standardize graph-derived columns with train statistics.
        for (dname, mean, std) in &self.derived_stats {
            if let Some(col) = names.iter().position(|n| n == dname) {
                for row in rows.iter_mut() {
                    row[col] = (row[col] - mean) / std;
                }
            }
        }
        let n = inst.n_activities();
        if let Some(completed) = &state.completed {
            if completed.len() != n {
                return Err(PrepError::BadState(format!(
                    "completed flags: {} for {} activities",
                    completed.len(),
                    n
                )));
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            if let Some(skill) = &processed.skill {
                row.push(skill[i]);
            }
            row.extend(processed.extra_features[i].iter().copied());
            if self.temporal_features {
                let done = state
                    .completed
                    .as_ref()
                    .map(|cs| cs[i])
                    .unwrap_or(false);
                row.push(if done { 0.0 } else { 1.0 });
                row.push(0.0); // in-progress granularity is not simulated
                row.push(if done { 1.0 } else { 0.0 });
                row.push(state.pct_complete);
                row.push(state.elapsed);
            }
        }
        let act_features = Matrix::from_rows(rows);

        let p = inst.n_resources();
        let mut res_rows = Vec::with_capacity(p);
        for k in 0..p {
            let (mean, var) = state
                .posterior
                .as_ref()
                .map(|ps| ps[k])
                .unwrap_or((PRIOR_MEAN, PRIOR_VAR));
            let col: Vec<f64> = (0..n).map(|i| processed.demands[i][k]).collect();
            let dmean = col.iter().sum::<f64>() / n.max(1) as f64;
            let dvar =
                col.iter().map(|&x| (x - dmean) * (x - dmean)).sum::<f64>() / n.max(1) as f64;
            let mut row = vec![mean, var, dmean, dvar.sqrt()];
            row.extend(processed.resource_features[k].iter().copied());
            res_rows.push(row);
        }
        let res_features = if p == 0 {
            Matrix::zeros(0, self.res_feature_names.len())
        } else {
            Matrix::from_rows(res_rows)
        };

        let durations = inst
            .true_durations()
            .expect("targets checked above");
        let true_makespan = compute_schedule(&inst.graph, &durations)?.makespan;
        let true_total_cost = c_true.iter().sum::<f64>() + inst.overhead;

        Ok(PreparedInstance {
            name: inst.meta.name.clone(),
            activity_ids: inst.graph.activity_ids().to_vec(),
            tensors: GraphTensors::build(&inst.graph),
            act_features,
            res_features,
            t_true,
            c_true,
            labeled: vec![true; n],
            overhead: inst.overhead,
            true_makespan,
            true_total_cost,
        })
    }
}
