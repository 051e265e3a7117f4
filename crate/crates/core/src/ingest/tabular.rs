//! Tabular CSV ingestion with surrogate graph construction.
//!
//! Each row is one project. Effort is split across a surrogate phase chain
//! (or module graph) and every driver column is broadcast to all nodes.
//! COCOMO-style ordinal ratings map to VL=1 .. XH=6; unparseable values
//! become categorical features handled by the preprocessing one-hot stage.

use super::IngestError;
use crate::graph::{Edge, ProjectGraph, Relation};
use crate::instance::{InstanceMeta, ProjectInstance};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateStrategy {
    /// Analysis -> Design -> Coding -> Testing, equal effort split.
    Chain4,
    /// Six lifecycle phases with documented weights, renormalized to one.
    Phase6,
    /// Module graph from explicit `modules` / `module_deps` columns;
    /// degrades to Phase6 with a warning when those columns are absent.
    Module,
}

const CHAIN4: [(&str, f64); 4] = [
    ("analysis", 0.25),
    ("design", 0.25),
    ("coding", 0.25),
    ("testing", 0.25),
];

/// Raw phase weights (.15, .20, .20, .35, .20, .10) sum to 1.2 and are
/// renormalized so phase targets conserve row effort.
const PHASE6: [(&str, f64); 6] = [
    ("requirements", 0.15),
    ("prelim_design", 0.20),
    ("detailed_design", 0.20),
    ("code_unit_test", 0.35),
    ("integration", 0.20),
    ("system_test", 0.10),
];

fn ordinal_rating(value: &str) -> Option<f64> {
    match value.trim().to_ascii_uppercase().as_str() {
        "VL" => Some(1.0),
        "L" => Some(2.0),
        "N" => Some(3.0),
        "H" => Some(4.0),
        "VH" => Some(5.0),
        "XH" => Some(6.0),
        _ => None,
    }
}

enum DriverValue {
    Continuous(f64),
    Categorical(String),
}

fn classify(value: &str) -> DriverValue {
    let trimmed = value.trim();
    if let Ok(v) = trimmed.parse::<f64>() {
        return DriverValue::Continuous(v);
    }
    if let Some(v) = ordinal_rating(trimmed) {
        return DriverValue::Continuous(v);
    }
    DriverValue::Categorical(trimmed.to_string())
}

struct PhasePlan {
    names: Vec<String>,
    weights: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

fn chain_plan(entries: &[(&str, f64)]) -> PhasePlan {
    let total: f64 = entries.iter().map(|&(_, w)| w).sum();
    let names = entries
        .iter()
        .enumerate()
        .map(|(i, (n, _))| format!("ph{i}_{n}"))
        .collect();
    let weights = entries.iter().map(|&(_, w)| w / total).collect();
    let edges = (0..entries.len().saturating_sub(1))
        .map(|i| (i, i + 1))
        .collect();
    PhasePlan {
        names,
        weights,
        edges,
    }
}

fn module_plan(
    modules: &str,
    deps: &str,
    row: usize,
) -> Result<PhasePlan, IngestError> {
    let names: Vec<String> = modules
        .split(';')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        return Err(IngestError::SchemaViolation {
            path: format!("row {row}"),
            reason: "modules column is empty".into(),
        });
    }
    let index: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut edges = Vec::new();
    for spec in deps.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (src, dst) = spec.split_once('>').ok_or_else(|| IngestError::SchemaViolation {
            path: format!("row {row}"),
            reason: format!("dependency {spec:?} must be 'src>dst'"),
        })?;
        let s = *index
            .get(src.trim())
            .ok_or_else(|| IngestError::SchemaViolation {
                path: format!("row {row}"),
                reason: format!("unknown module {src:?} in dependency"),
            })?;
        let d = *index
            .get(dst.trim())
            .ok_or_else(|| IngestError::SchemaViolation {
                path: format!("row {row}"),
                reason: format!("unknown module {dst:?} in dependency"),
            })?;
        edges.push((s, d));
    }
    let w = 1.0 / names.len() as f64;
    Ok(PhasePlan {
        weights: vec![w; names.len()],
        names,
        edges,
    })
}

/// Build one surrogate project per CSV row. Requires an `effort` column;
/// all other columns broadcast to every node as driver features.
pub fn build_surrogate_graph(
    csv_text: &str,
    strategy: SurrogateStrategy,
) -> Result<Vec<ProjectInstance>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let effort_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("effort"))
        .ok_or_else(|| IngestError::MissingColumn("effort".into()))?;
    let modules_col = headers.iter().position(|h| h.eq_ignore_ascii_case("modules"));
    let deps_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("module_deps"));

    let mut effective = strategy;
    if strategy == SurrogateStrategy::Module && (modules_col.is_none() || deps_col.is_none()) {
        eprintln!(
            "warning: module strategy requires 'modules' and 'module_deps' columns; \
             falling back to phase6"
        );
        effective = SurrogateStrategy::Phase6;
    }

    let driver_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != effort_col && Some(i) != modules_col && Some(i) != deps_col)
        .collect();

    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let effort: f64 = record
            .get(effort_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| IngestError::SchemaViolation {
                path: format!("row {row_idx}"),
                reason: "effort must be numeric".into(),
            })?;

        let plan = match effective {
            SurrogateStrategy::Chain4 => chain_plan(&CHAIN4),
            SurrogateStrategy::Phase6 => chain_plan(&PHASE6),
            SurrogateStrategy::Module => module_plan(
                record.get(modules_col.unwrap()).unwrap_or(""),
                record.get(deps_col.unwrap()).unwrap_or(""),
                row_idx,
            )?,
        };
        let n = plan.names.len();

        let mut extra_names = Vec::new();
        let mut extra_vals = Vec::new();
        let mut cat_names = Vec::new();
        let mut cat_vals = Vec::new();
        for &col in &driver_cols {
            let raw = record.get(col).unwrap_or("");
            match classify(raw) {
                DriverValue::Continuous(v) => {
                    extra_names.push(format!("driver:{}", headers[col]));
                    extra_vals.push(v);
                }
                DriverValue::Categorical(v) => {
                    cat_names.push(format!("driver:{}", headers[col]));
                    cat_vals.push(v);
                }
            }
        }

        let edges: Vec<Edge> = plan
            .edges
            .iter()
            .map(|&(s, d)| {
                Edge::new(
                    plan.names[s].clone(),
                    plan.names[d].clone(),
                    Relation::Precedence,
                )
            })
            .collect();
        let graph = ProjectGraph::new(plan.names.clone(), Vec::new(), edges).map_err(|e| {
            IngestError::SchemaViolation {
                path: format!("row {row_idx}"),
                reason: e.to_string(),
            }
        })?;
        graph.topo_order().map_err(|e| IngestError::SchemaViolation {
            path: format!("row {row_idx}"),
            reason: format!("module dependencies must be acyclic: {e}"),
        })?;

        let targets: Vec<f64> = plan.weights.iter().map(|w| w * effort).collect();
        let mut inst = ProjectInstance::bare(
            graph,
            InstanceMeta {
                name: format!("tabular-row{row_idx}"),
                seed: row_idx as u64,
                source: "tabular".into(),
            },
        );
        inst.activity_type = Some((0..n).collect());
        inst.type_vocab = plan.names.clone();
        inst.t_est = targets.clone();
        inst.c_est = targets.clone();
        inst.t_true = Some(targets.clone());
        inst.c_true = Some(targets);
        inst.extra_feature_names = extra_names;
        inst.extra_features = vec![extra_vals; n];
        inst.cat_feature_names = cat_names;
        inst.cat_features = vec![cat_vals; n];
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain4_splits_effort_equally() {
        let csv = "effort,kloc\n100,12.5\n";
        let out = build_surrogate_graph(csv, SurrogateStrategy::Chain4).unwrap();
        assert_eq!(out.len(), 1);
        let inst = &out[0];
        assert_eq!(inst.n_activities(), 4);
        for &t in inst.t_true.as_ref().unwrap() {
            assert!((t - 25.0).abs() < 1e-12);
        }
        // Chain edges only.
        assert_eq!(inst.graph.edges().len(), 3);
        assert_eq!(inst.extra_feature_names, vec!["driver:kloc".to_string()]);
        assert_eq!(inst.extra_features[2], vec![12.5]);
    }

    #[test]
    fn phase6_conserves_effort() {
        let csv = "effort\n60\n";
        let out = build_surrogate_graph(csv, SurrogateStrategy::Phase6).unwrap();
        let total: f64 = out[0].t_true.as_ref().unwrap().iter().sum();
        assert!((total - 60.0).abs() < 1e-9);
        assert_eq!(out[0].n_activities(), 6);
    }

    #[test]
    fn ordinal_ratings_encode() {
        let csv = "effort,rely\n10,VH\n";
        let out = build_surrogate_graph(csv, SurrogateStrategy::Chain4).unwrap();
        assert_eq!(out[0].extra_features[0], vec![5.0]);
        assert_eq!(ordinal_rating("vl"), Some(1.0));
        assert_eq!(ordinal_rating("XH"), Some(6.0));
    }

    #[test]
    fn categorical_drivers_are_kept_as_strings() {
        let csv = "effort,language\n10,Cobol\n";
        let out = build_surrogate_graph(csv, SurrogateStrategy::Chain4).unwrap();
        assert_eq!(out[0].cat_feature_names, vec!["driver:language".to_string()]);
        assert_eq!(out[0].cat_features[0], vec!["Cobol".to_string()]);
    }

    #[test]
    fn missing_effort_column_errors() {
        let csv = "size\n10\n";
        assert!(matches!(
            build_surrogate_graph(csv, SurrogateStrategy::Chain4),
            Err(IngestError::MissingColumn(c)) if c == "effort"
        ));
    }

    #[test]
    fn module_strategy_builds_dependency_graph() {
        let csv = "effort,modules,module_deps\n30,core;ui;db,core>ui;core>db\n";
        let out = build_surrogate_graph(csv, SurrogateStrategy::Module).unwrap();
        let inst = &out[0];
        assert_eq!(inst.n_activities(), 3);
        assert_eq!(inst.graph.edges().len(), 2);
        for &t in inst.t_true.as_ref().unwrap() {
            assert!((t - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn module_strategy_degrades_without_columns() {
        let csv = "effort\n30\n";
        let out = build_surrogate_graph(csv, SurrogateStrategy::Module).unwrap();
        assert_eq!(out[0].n_activities(), 6);
    }
}
