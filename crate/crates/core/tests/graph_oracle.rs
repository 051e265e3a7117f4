//! Randomized structural oracles: CPM against exhaustive path enumeration,
//! makespan monotonicity, and betweenness against the brute-force
//! shortest-path-counting definition.

use pnf_core::graph::{
    betweenness_centrality, compute_schedule, enumerate_paths, topological_sort, Edge,
    ProjectGraph, Relation,
};
use pnf_core::rng::StreamRng;
use proptest::prelude::*;
use std::collections::BTreeMap;

/// Random DAG over `n` nodes: each forward pair (by a hidden permutation)
/// becomes an edge with probability `density`. No connectivity backbone.
fn random_dag(n: usize, density: f64, seed: u64) -> ProjectGraph {
    let mut rng = StreamRng::from_seed(seed).stream("test-dag");
    let mut perm: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut perm);
    let ids: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    let mut edges = Vec::new();
    for s in 0..n {
        for t in (s + 1)..n {
            if rng.uniform() < density {
                edges.push(Edge::new(
                    ids[perm[s]].clone(),
                    ids[perm[t]].clone(),
                    Relation::Precedence,
                ));
            }
        }
    }
    ProjectGraph::new(ids, vec![], edges).unwrap()
}

fn random_durations(graph: &ProjectGraph, seed: u64) -> BTreeMap<String, f64> {
    let mut rng = StreamRng::from_seed(seed).stream("durations");
    graph
        .activity_ids()
        .iter()
        .map(|id| (id.clone(), rng.uniform_in(0.0, 10.0)))
        .collect()
}

fn path_sum_makespan(graph: &ProjectGraph, durations: &BTreeMap<String, f64>) -> f64 {
    enumerate_paths(graph, 1_000_000)
        .unwrap()
        .iter()
        .map(|p| p.iter().map(|id| durations[id]).sum::<f64>())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cpm_makespan_equals_max_path_sum(
        n in 2usize..13,
        density in 0.05f64..0.9,
        seed in any::<u64>(),
    ) {
        let graph = random_dag(n, density, seed);
        let durations = random_durations(&graph, seed ^ 0xABCD);
        let schedule = compute_schedule(&graph, &durations).unwrap();
        let oracle = path_sum_makespan(&graph, &durations);
        prop_assert!((schedule.makespan - oracle).abs() <= 1e-12 * oracle.max(1.0));
        prop_assert!(!schedule.critical_activities.is_empty());
    }

    #[test]
    fn increasing_a_duration_never_shrinks_makespan(
        n in 2usize..13,
        density in 0.05f64..0.9,
        seed in any::<u64>(),
        bump in 0.001f64..5.0,
        which in any::<prop::sample::Index>(),
    ) {
        let graph = random_dag(n, density, seed);
        let mut durations = random_durations(&graph, seed ^ 0x1234);
        let before = compute_schedule(&graph, &durations).unwrap().makespan;
        let id = graph.activity_ids()[which.index(n)].clone();
        *durations.get_mut(&id).unwrap() += bump;
        let after = compute_schedule(&graph, &durations).unwrap().makespan;
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn betweenness_invariant_under_relabeling(
        n in 2usize..10,
        density in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let graph = random_dag(n, density, seed);
        let base = betweenness_centrality(&graph);

        // Relabel node ids by reversing their names; structure unchanged.
        let rename = |id: &str| format!("z{}", id.chars().rev().collect::<String>());
        let ids: Vec<String> = graph.activity_ids().iter().map(|s| rename(s)).collect();
        let edges: Vec<Edge> = graph
            .edges()
            .iter()
            .map(|e| Edge::new(rename(&e.src), rename(&e.dst), e.relation))
            .collect();
        let relabeled = ProjectGraph::new(ids, vec![], edges).unwrap();
        let mapped = betweenness_centrality(&relabeled);
        for (id, v) in &base {
            prop_assert!((mapped[&rename(id)] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn betweenness_matches_brute_force(
        n in 2usize..9,
        density in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let graph = random_dag(n, density, seed);
        let fast = betweenness_centrality(&graph);
        let slow = brute_force_betweenness(&graph);
        for id in graph.activity_ids() {
            prop_assert!(
                (fast[id] - slow[id]).abs() < 1e-9,
                "node {}: brandes {} vs brute force {}", id, fast[id], slow[id]
            );
        }
    }

    #[test]
    fn topological_sort_respects_all_edges(
        n in 2usize..13,
        density in 0.05f64..0.9,
        seed in any::<u64>(),
    ) {
        let graph = random_dag(n, density, seed);
        let order = topological_sort(&graph).unwrap();
        let pos: BTreeMap<&str, usize> = order
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        prop_assert_eq!(order.len(), n);
        for e in graph.edges() {
            prop_assert!(pos[e.src.as_str()] < pos[e.dst.as_str()]);
        }
    }
}

/// Textbook definition: for every ordered pair (s, t), count shortest
/// directed paths and the share passing through each interior node.
fn brute_force_betweenness(graph: &ProjectGraph) -> BTreeMap<String, f64> {
    let n = graph.n_activities();
    let mut score: BTreeMap<String, f64> = graph
        .activity_ids()
        .iter()
        .map(|id| (id.clone(), 0.0))
        .collect();
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            // All simple paths s -> t via DFS; keep the shortest ones.
            let mut all: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![(s, vec![s])];
            while let Some((v, path)) = stack.pop() {
                if v == t {
                    all.push(path);
                    continue;
                }
                for &w in graph.succs(v) {
                    if !path.contains(&w) {
                        let mut next = path.clone();
                        next.push(w);
                        stack.push((w, next));
                    }
                }
            }
            if all.is_empty() {
                continue;
            }
            let min_len = all.iter().map(|p| p.len()).min().unwrap();
            let shortest: Vec<&Vec<usize>> = all.iter().filter(|p| p.len() == min_len).collect();
            let sigma = shortest.len() as f64;
            for path in shortest {
                for &v in &path[1..path.len() - 1] {
                    *score.get_mut(&graph.activity_ids()[v]).unwrap() += 1.0 / sigma;
                }
            }
        }
    }
    score
}

#[test]
fn dense_graph_exceeds_path_budget() {
    // A 30-node DAG with high density has astronomically many paths; the DP
    // count must trip the budget without enumerating anything.
    let graph = random_dag(30, 0.5, 7);
    let count = pnf_core::graph::count_paths(&graph).unwrap();
    assert!(count > 10_000, "fixture too sparse: {count} paths");
    match enumerate_paths(&graph, 10_000) {
        Err(pnf_core::graph::GraphError::PathBudgetExceeded { budget, .. }) => {
            assert_eq!(budget, 10_000)
        }
        other => panic!("expected budget error, got {other:?}"),
    }
}
