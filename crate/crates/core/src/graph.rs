//! Project DAG representation and structural algorithms.
//!
//! Activities and resources are nodes; edges carry one of three relations:
//! precedence (activity -> activity), assignment (activity -> resource) and
//! collaboration (resource -> resource). The precedence subgraph must be a
//! DAG. All outputs are deterministic; ties are broken by ascending node id.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Precedence,
    Assignment,
    Collaboration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub relation: Relation,
    /// Edge feature vector; stored even when empty.
    #[serde(default)]
    pub features: Vec<f64>,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, relation: Relation) -> Self {
        Edge {
            src: src.into(),
            dst: dst.into(),
            relation,
            features: Vec::new(),
        }
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = features;
        self
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cycle detected in precedence graph at edge {src} -> {dst}")]
    CycleDetected { src: String, dst: String },
    #[error("duplicate node id {0}")]
    DuplicateId(String),
    #[error("unknown node id {0} referenced by an edge")]
    UnknownNode(String),
    #[error("invalid {relation:?} edge {src} -> {dst}: {reason}")]
    InvalidEdge {
        src: String,
        dst: String,
        relation: Relation,
        reason: String,
    },
    #[error("duplicate edge {src} -> {dst} ({relation:?})")]
    DuplicateEdge {
        src: String,
        dst: String,
        relation: Relation,
    },
    #[error("missing duration for activity {0}")]
    MissingDuration(String),
    #[error("negative duration for activity {0}")]
    NegativeDuration(String),
    #[error("path budget exceeded: more than {budget} source->sink paths (count {count})")]
    PathBudgetExceeded { count: u128, budget: usize },
    #[error("missing feature {name} for activity {id}")]
    MissingFeature { id: String, name: String },
}

/// Typed project graph with per-relation adjacency precomputed in both
/// directions. Immutable after construction; all methods are pure.
#[derive(Debug, Clone)]
pub struct ProjectGraph {
    activity_ids: Vec<String>,
    resource_ids: Vec<String>,
    edges: Vec<Edge>,
    /// Rank of each activity under ascending-id order (tie-break key).
    act_rank: Vec<usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    act_resources: Vec<Vec<usize>>,
    res_activities: Vec<Vec<usize>>,
    res_collab: Vec<Vec<usize>>,
    act_index: HashMap<String, usize>,
    res_index: HashMap<String, usize>,
}

impl ProjectGraph {
    pub fn new(
        activity_ids: Vec<String>,
        resource_ids: Vec<String>,
        edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        let mut act_index = HashMap::new();
        for (i, id) in activity_ids.iter().enumerate() {
            if act_index.insert(id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId(id.clone()));
            }
        }
        let mut res_index = HashMap::new();
        for (j, id) in resource_ids.iter().enumerate() {
            if act_index.contains_key(id) {
                return Err(GraphError::DuplicateId(id.clone()));
            }
            if res_index.insert(id.clone(), j).is_some() {
                return Err(GraphError::DuplicateId(id.clone()));
            }
        }

        let n = activity_ids.len();
        let p = resource_ids.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        let mut act_resources = vec![Vec::new(); n];
        let mut res_activities = vec![Vec::new(); p];
        let mut res_collab = vec![Vec::new(); p];
        let mut seen: HashSet<(usize, usize, Relation)> = HashSet::new();

        let mut canonical_edges = Vec::with_capacity(edges.len());
        for edge in edges {
            let edge = canonicalize(edge, &act_index, &res_index)?;
            let (s, d) = (
                node_key(&edge.src, &act_index, &res_index)?,
                node_key(&edge.dst, &act_index, &res_index)?,
            );
            if !seen.insert((s, d, edge.relation)) {
                return Err(GraphError::DuplicateEdge {
                    src: edge.src,
                    dst: edge.dst,
                    relation: edge.relation,
                });
            }
            match edge.relation {
                Relation::Precedence => {
                    let (a, b) = (act_index[&edge.src], act_index[&edge.dst]);
                    succs[a].push(b);
                    preds[b].push(a);
                }
                Relation::Assignment => {
                    let (a, r) = (act_index[&edge.src], res_index[&edge.dst]);
                    act_resources[a].push(r);
                    res_activities[r].push(a);
                }
                Relation::Collaboration => {
                    let (r1, r2) = (res_index[&edge.src], res_index[&edge.dst]);
                    res_collab[r1].push(r2);
                    res_collab[r2].push(r1);
                }
            }
            canonical_edges.push(edge);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| activity_ids[a].cmp(&activity_ids[b]));
        let mut act_rank = vec![0usize; n];
        for (rank, &i) in order.iter().enumerate() {
            act_rank[i] = rank;
        }

        Ok(ProjectGraph {
            activity_ids,
            resource_ids,
            edges: canonical_edges,
            act_rank,
            preds,
            succs,
            act_resources,
            res_activities,
            res_collab,
            act_index,
            res_index,
        })
    }

    pub fn n_activities(&self) -> usize {
        self.activity_ids.len()
    }

    pub fn n_resources(&self) -> usize {
        self.resource_ids.len()
    }

    pub fn activity_ids(&self) -> &[String] {
        &self.activity_ids
    }

    pub fn resource_ids(&self) -> &[String] {
        &self.resource_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn activity_index(&self, id: &str) -> Option<usize> {
        self.act_index.get(id).copied()
    }

    pub fn resource_index(&self, id: &str) -> Option<usize> {
        self.res_index.get(id).copied()
    }

    /// Precedence in-neighbors (predecessors) of activity `i`.
    pub fn preds(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    /// Precedence out-neighbors (successors) of activity `i`.
    pub fn succs(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    /// Resources assigned to activity `i`.
    pub fn assigned_resources(&self, i: usize) -> &[usize] {
        &self.act_resources[i]
    }

    /// Activities a resource works on.
    pub fn resource_activities(&self, j: usize) -> &[usize] {
        &self.res_activities[j]
    }

    /// Collaboration partners of resource `j` (symmetric).
    pub fn collaborators(&self, j: usize) -> &[usize] {
        &self.res_collab[j]
    }

    /// Topological order of activity indices. Ties broken by ascending id.
    pub fn topo_order(&self) -> Result<Vec<usize>, GraphError> {
        let n = self.n_activities();
        let mut indegree: Vec<usize> = (0..n).map(|i| self.preds[i].len()).collect();
        // Min-heap keyed by id rank.
        let mut ready: BTreeSet<(usize, usize)> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| (self.act_rank[i], i))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&(rank, i)) = ready.iter().next() {
            ready.remove(&(rank, i));
            order.push(i);
            for &j in &self.succs[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.insert((self.act_rank[j], j));
                }
            }
        }
        if order.len() < n {
            // Report one edge inside the residual cycle, smallest ids first.
            let stuck: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] > 0).collect();
            let mut witness: Option<(usize, usize)> = None;
            for &i in &stuck {
                for &j in &self.succs[i] {
                    if stuck.contains(&j) {
                        let cand = (self.act_rank[i], self.act_rank[j]);
                        let better = match witness {
                            None => true,
                            Some((wi, wj)) => cand < (self.act_rank[wi], self.act_rank[wj]),
                        };
                        if better {
                            witness = Some((i, j));
                        }
                    }
                }
            }
            let (i, j) = witness.expect("residual nodes must contain a cycle edge");
            return Err(GraphError::CycleDetected {
                src: self.activity_ids[i].clone(),
                dst: self.activity_ids[j].clone(),
            });
        }
        Ok(order)
    }
}

fn node_key(
    id: &str,
    act: &HashMap<String, usize>,
    res: &HashMap<String, usize>,
) -> Result<usize, GraphError> {
    if let Some(&i) = act.get(id) {
        Ok(i)
    } else if let Some(&j) = res.get(id) {
        Ok(act.len() + j)
    } else {
        Err(GraphError::UnknownNode(id.to_string()))
    }
}

fn canonicalize(
    edge: Edge,
    act: &HashMap<String, usize>,
    res: &HashMap<String, usize>,
) -> Result<Edge, GraphError> {
    let src_is_act = act.contains_key(&edge.src);
    let src_is_res = res.contains_key(&edge.src);
    let dst_is_act = act.contains_key(&edge.dst);
    let dst_is_res = res.contains_key(&edge.dst);
    if !src_is_act && !src_is_res {
        return Err(GraphError::UnknownNode(edge.src));
    }
    if !dst_is_act && !dst_is_res {
        return Err(GraphError::UnknownNode(edge.dst));
    }
    let invalid = |edge: &Edge, reason: &str| GraphError::InvalidEdge {
        src: edge.src.clone(),
        dst: edge.dst.clone(),
        relation: edge.relation,
        reason: reason.to_string(),
    };
    match edge.relation {
        Relation::Precedence => {
            if !(src_is_act && dst_is_act) {
                return Err(invalid(&edge, "both endpoints must be activities"));
            }
            if edge.src == edge.dst {
                return Err(invalid(&edge, "self-loop"));
            }
            Ok(edge)
        }
        Relation::Assignment => {
            if src_is_act && dst_is_res {
                Ok(edge)
            } else if src_is_res && dst_is_act {
                // Canonical direction is activity -> resource.
                Ok(Edge {
                    src: edge.dst.clone(),
                    dst: edge.src.clone(),
                    ..edge
                })
            } else {
                Err(invalid(
                    &edge,
                    "must connect exactly one activity and one resource",
                ))
            }
        }
        Relation::Collaboration => {
            if !(src_is_res && dst_is_res) {
                return Err(invalid(&edge, "both endpoints must be resources"));
            }
            if edge.src == edge.dst {
                return Err(invalid(&edge, "self-loop"));
            }
            Ok(edge)
        }
    }
}

/// Deterministic topological order of activity ids.
pub fn topological_sort(graph: &ProjectGraph) -> Result<Vec<String>, GraphError> {
    Ok(graph
        .topo_order()?
        .into_iter()
        .map(|i| graph.activity_ids()[i].clone())
        .collect())
}

/// Earliest-start schedule of a project DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub earliest_start: BTreeMap<String, f64>,
    pub earliest_finish: BTreeMap<String, f64>,
    pub makespan: f64,
    /// Activities with zero total float.
    pub critical_activities: BTreeSet<String>,
}

/// CPM earliest-start schedule. Makespan equals the longest source->sink
/// path length under the given durations.
pub fn compute_schedule(
    graph: &ProjectGraph,
    durations: &BTreeMap<String, f64>,
) -> Result<Schedule, GraphError> {
    let n = graph.n_activities();
    let mut dur = vec![0.0f64; n];
    for (i, id) in graph.activity_ids().iter().enumerate() {
        let d = *durations
            .get(id)
            .ok_or_else(|| GraphError::MissingDuration(id.clone()))?;
        if d < 0.0 || !d.is_finite() {
            return Err(GraphError::NegativeDuration(id.clone()));
        }
        dur[i] = d;
    }
    let order = graph.topo_order()?;
    let mut es = vec![0.0f64; n];
    let mut ef = vec![0.0f64; n];
    for &i in &order {
        let start = graph
            .preds(i)
            .iter()
            .map(|&j| ef[j])
            .fold(0.0f64, f64::max);
        es[i] = start;
        ef[i] = start + dur[i];
    }
    let makespan = ef.iter().copied().fold(0.0f64, f64::max);

    // Backward pass for total float; critical set = zero float.
    let mut lf = vec![makespan; n];
    for &i in order.iter().rev() {
        if !graph.succs(i).is_empty() {
            lf[i] = graph
                .succs(i)
                .iter()
                .map(|&j| lf[j] - dur[j])
                .fold(f64::INFINITY, f64::min);
        }
    }
    let tol = 1e-9 * makespan.max(1.0);
    let mut critical = BTreeSet::new();
    let mut earliest_start = BTreeMap::new();
    let mut earliest_finish = BTreeMap::new();
    for (i, id) in graph.activity_ids().iter().enumerate() {
        earliest_start.insert(id.clone(), es[i]);
        earliest_finish.insert(id.clone(), ef[i]);
        let float = (lf[i] - dur[i]) - es[i];
        if float.abs() <= tol {
            critical.insert(id.clone());
        }
    }
    Ok(Schedule {
        earliest_start,
        earliest_finish,
        makespan,
        critical_activities: critical,
    })
}

/// Number of source->sink paths in the precedence DAG (saturating).
pub fn count_paths(graph: &ProjectGraph) -> Result<u128, GraphError> {
    let order = graph.topo_order()?;
    let n = graph.n_activities();
    let mut counts = vec![0u128; n];
    let mut total: u128 = 0;
    for &i in order.iter().rev() {
        counts[i] = if graph.succs(i).is_empty() {
            1
        } else {
            graph
                .succs(i)
                .iter()
                .fold(0u128, |acc, &j| acc.saturating_add(counts[j]))
        };
        if graph.preds(i).is_empty() {
            total = total.saturating_add(counts[i]);
        }
    }
    Ok(total)
}

/// Exhaustive source->sink path enumeration; the brute-force oracle behind
/// the CPM makespan. Intended for small graphs; errors out when the path
/// count exceeds `max_paths`.
pub fn enumerate_paths(
    graph: &ProjectGraph,
    max_paths: usize,
) -> Result<Vec<Vec<String>>, GraphError> {
    let count = count_paths(graph)?;
    if count > max_paths as u128 {
        return Err(GraphError::PathBudgetExceeded {
            count,
            budget: max_paths,
        });
    }
    let n = graph.n_activities();
    let mut sources: Vec<usize> = (0..n).filter(|&i| graph.preds(i).is_empty()).collect();
    sources.sort_by_key(|&i| graph.act_rank[i]);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for s in sources {
        dfs_paths(graph, s, &mut stack, &mut out);
    }
    Ok(out)
}

fn dfs_paths(
    graph: &ProjectGraph,
    node: usize,
    stack: &mut Vec<usize>,
    out: &mut Vec<Vec<String>>,
) {
    stack.push(node);
    if graph.succs(node).is_empty() {
        out.push(
            stack
                .iter()
                .map(|&i| graph.activity_ids()[i].clone())
                .collect(),
        );
    } else {
        let mut next: Vec<usize> = graph.succs(node).to_vec();
        next.sort_by_key(|&i| graph.act_rank[i]);
        for j in next {
            dfs_paths(graph, j, stack, out);
        }
    }
    stack.pop();
}

/// Directed betweenness centrality on the precedence subgraph: unit edge
/// weights, ordered pairs (s, t) with s != t, endpoints excluded,
/// unnormalized counts. Brandes' accumulation.
pub fn betweenness_centrality(graph: &ProjectGraph) -> BTreeMap<String, f64> {
    let n = graph.n_activities();
    let mut score = vec![0.0f64; n];
    for s in 0..n {
        // BFS from s recording shortest-path counts and predecessor lists.
        let mut sigma = vec![0.0f64; n];
        let mut dist = vec![usize::MAX; n];
        let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut stack_order = Vec::new();
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack_order.push(v);
            for &w in graph.succs(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    parents[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0f64; n];
        for &w in stack_order.iter().rev() {
            for &v in &parents[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                score[w] += delta[w];
            }
        }
    }
    graph
        .activity_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), score[i]))
        .collect()
}

/// Per-activity inputs that come from the instance rather than the graph.
#[derive(Debug, Clone)]
pub struct FeatureContext<'a> {
    /// Resource demand rows, one per activity, each of length p.
    pub demands: &'a [Vec<f64>],
    pub t_est: &'a [f64],
    pub c_est: &'a [f64],
    /// Optional activity category index per activity.
    pub activity_type: Option<&'a [usize]>,
    /// Width of the type one-hot block (0 disables it).
    pub n_types: usize,
}

/// Dense per-activity feature matrix with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Builds the documented per-activity feature layout:
/// `[demand_0 .. demand_{p-1}, t_est, c_est, deg_in, deg_out, betweenness,
///   n_assigned, type_0 .. type_{k-1}]`.
pub fn activity_features(
    graph: &ProjectGraph,
    ctx: &FeatureContext,
) -> Result<FeatureMatrix, GraphError> {
    let n = graph.n_activities();
    let p = graph.n_resources();
    let missing = |i: usize, name: &str| GraphError::MissingFeature {
        id: graph.activity_ids()[i].clone(),
        name: name.to_string(),
    };
    if ctx.demands.len() != n {
        return Err(missing(ctx.demands.len().min(n.saturating_sub(1)), "demands"));
    }
    if ctx.t_est.len() != n {
        return Err(missing(ctx.t_est.len().min(n.saturating_sub(1)), "t_est"));
    }
    if ctx.c_est.len() != n {
        return Err(missing(ctx.c_est.len().min(n.saturating_sub(1)), "c_est"));
    }

    let betweenness = betweenness_centrality(graph);
    let mut names = Vec::new();
    for k in 0..p {
        names.push(format!("demand_{k}"));
    }
    names.push("t_est".into());
    names.push("c_est".into());
    names.push("deg_in".into());
    names.push("deg_out".into());
    names.push("betweenness".into());
    names.push("n_assigned".into());
    for t in 0..ctx.n_types {
        names.push(format!("type_{t}"));
    }

    let mut rows = Vec::with_capacity(n);
    for (i, id) in graph.activity_ids().iter().enumerate() {
        let demand_row = &ctx.demands[i];
        if demand_row.len() != p {
            return Err(missing(i, "demands"));
        }
        let mut row = Vec::with_capacity(names.len());
        for &d in demand_row {
            if !d.is_finite() {
                return Err(missing(i, "demands"));
            }
            row.push(d);
        }
        row.push(ctx.t_est[i]);
        row.push(ctx.c_est[i]);
        row.push(graph.preds(i).len() as f64);
        row.push(graph.succs(i).len() as f64);
        row.push(betweenness[id]);
        row.push(graph.assigned_resources(i).len() as f64);
        if ctx.n_types > 0 {
            let ty = ctx
                .activity_type
                .and_then(|ts| ts.get(i).copied())
                .ok_or_else(|| missing(i, "activity_type"))?;
            for t in 0..ctx.n_types {
                row.push(if t == ty { 1.0 } else { 0.0 });
            }
        }
        rows.push(row);
    }
    Ok(FeatureMatrix { names, rows })
}
