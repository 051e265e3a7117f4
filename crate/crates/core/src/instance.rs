//! The dataset unit: a project graph plus features, estimates and targets.

use crate::graph::{FeatureContext, ProjectGraph};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub name: String,
    pub seed: u64,
    pub source: String,
}

/// One project: graph, per-activity demand matrix, estimates, and
/// (optionally) realized targets. `demand_mask[i][k] == false` marks a
/// missing demand entry awaiting imputation; no NaN sentinels are used.
#[derive(Debug, Clone)]
pub struct ProjectInstance {
    pub graph: ProjectGraph,
    /// n_activities x n_resources demand matrix.
    pub demands: Vec<Vec<f64>>,
    /// Presence flags for `demands`; `None` means fully observed.
    pub demand_mask: Option<Vec<Vec<bool>>>,
    pub skill: Option<Vec<f64>>,
    pub activity_type: Option<Vec<usize>>,
    pub type_vocab: Vec<String>,
    pub t_est: Vec<f64>,
    pub c_est: Vec<f64>,
    pub t_true: Option<Vec<f64>>,
    pub c_true: Option<Vec<f64>>,
    /// Extra named continuous activity features (row per activity).
    pub extra_feature_names: Vec<String>,
    pub extra_features: Vec<Vec<f64>>,
    /// Extra named categorical activity features (row per activity).
    pub cat_feature_names: Vec<String>,
    pub cat_features: Vec<Vec<String>>,
    /// Named per-resource features (row per resource).
    pub resource_feature_names: Vec<String>,
    pub resource_features: Vec<Vec<f64>>,
    /// Fixed project overhead added to total cost.
    pub overhead: f64,
    pub meta: InstanceMeta,
    /// Full generating configuration, for reproducibility audits.
    pub provenance: Option<serde_json::Value>,
    /// Precedence edges that structural perturbations must never remove
    /// (the generator's connectivity backbone).
    pub protected_edges: Vec<(String, String)>,
}

impl ProjectInstance {
    /// Empty shell over a graph; callers fill the data fields they have.
    pub fn bare(graph: ProjectGraph, meta: InstanceMeta) -> Self {
        let n = graph.n_activities();
        let p = graph.n_resources();
        ProjectInstance {
            demands: vec![vec![0.0; p]; n],
            demand_mask: None,
            skill: None,
            activity_type: None,
            type_vocab: Vec::new(),
            t_est: vec![0.0; n],
            c_est: vec![0.0; n],
            t_true: None,
            c_true: None,
            extra_feature_names: Vec::new(),
            extra_features: vec![Vec::new(); n],
            cat_feature_names: Vec::new(),
            cat_features: vec![Vec::new(); n],
            resource_feature_names: Vec::new(),
            resource_features: vec![Vec::new(); p],
            overhead: 0.0,
            meta,
            provenance: None,
            protected_edges: Vec::new(),
            graph,
        }
    }

    pub fn n_activities(&self) -> usize {
        self.graph.n_activities()
    }

    pub fn n_resources(&self) -> usize {
        self.graph.n_resources()
    }

    pub fn has_targets(&self) -> bool {
        self.t_true.is_some() && self.c_true.is_some()
    }

    /// Feature context over this instance's (fully observed) data.
    pub fn feature_context(&self) -> FeatureContext<'_> {
        FeatureContext {
            demands: &self.demands,
            t_est: &self.t_est,
            c_est: &self.c_est,
            activity_type: self.activity_type.as_deref(),
            n_types: self.type_vocab.len(),
        }
    }

    /// True durations keyed by activity id, when targets are present.
    pub fn true_durations(&self) -> Option<BTreeMap<String, f64>> {
        self.t_true.as_ref().map(|ts| {
            self.graph
                .activity_ids()
                .iter()
                .zip(ts)
                .map(|(id, &t)| (id.clone(), t))
                .collect()
        })
    }

    /// Is any demand entry masked out?
    pub fn has_missing(&self) -> bool {
        self.demand_mask
            .as_ref()
            .map(|m| m.iter().any(|row| row.iter().any(|&b| !b)))
            .unwrap_or(false)
    }
}
