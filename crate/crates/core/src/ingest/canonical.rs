//! Canonical JSON project format (schema tag "pnf-1").
//!
//! Field order is fixed by the struct definitions and all maps are sorted,
//! so write -> read -> write is byte-stable. Masked demand entries are
//! simply absent from the activity feature map; feature_schema names every
//! feature key in use.

use super::IngestError;
use crate::graph::{Edge, ProjectGraph, Relation};
use crate::instance::{InstanceMeta, ProjectInstance};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const CANONICAL_SCHEMA: &str = "pnf-1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaDoc {
    name: String,
    seed: u64,
    source: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    overhead: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    protected_edges: Vec<(String, String)>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivityDoc {
    id: String,
    features: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    categoricals: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activity_type: Option<String>,
    t_est: f64,
    c_est: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResourceDoc {
    id: String,
    features: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeDoc {
    src: String,
    dst: String,
    relation: Relation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    features: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureDef {
    name: String,
    kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureSchemaDoc {
    activity: Vec<FeatureDef>,
    resource: Vec<FeatureDef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    activity_types: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CanonicalProject {
    schema: String,
    meta: MetaDoc,
    activities: Vec<ActivityDoc>,
    resources: Vec<ResourceDoc>,
    edges: Vec<EdgeDoc>,
    feature_schema: FeatureSchemaDoc,
}

fn demand_key(resource_id: &str) -> String {
    format!("demand:{resource_id}")
}

pub fn write_canonical(instance: &ProjectInstance) -> Result<Vec<u8>, IngestError> {
    let g = &instance.graph;
    let mut activities = Vec::with_capacity(g.n_activities());
    for (i, id) in g.activity_ids().iter().enumerate() {
        let mut features = BTreeMap::new();
        for (k, rid) in g.resource_ids().iter().enumerate() {
            let present = instance
                .demand_mask
                .as_ref()
                .map(|m| m[i][k])
                .unwrap_or(true);
            if present {
                features.insert(demand_key(rid), instance.demands[i][k]);
            }
        }
        if let Some(skill) = &instance.skill {
            features.insert("skill".into(), skill[i]);
        }
        for (j, name) in instance.extra_feature_names.iter().enumerate() {
            features.insert(name.clone(), instance.extra_features[i][j]);
        }
        let mut categoricals = BTreeMap::new();
        for (j, name) in instance.cat_feature_names.iter().enumerate() {
            categoricals.insert(name.clone(), instance.cat_features[i][j].clone());
        }
        activities.push(ActivityDoc {
            id: id.clone(),
            features,
            categoricals,
            activity_type: instance
                .activity_type
                .as_ref()
                .map(|ts| instance.type_vocab[ts[i]].clone()),
            t_est: instance.t_est[i],
            c_est: instance.c_est[i],
            t: instance.t_true.as_ref().map(|v| v[i]),
            c: instance.c_true.as_ref().map(|v| v[i]),
        });
    }

    let resources = g
        .resource_ids()
        .iter()
        .enumerate()
        .map(|(k, id)| ResourceDoc {
            id: id.clone(),
            features: instance
                .resource_feature_names
                .iter()
                .enumerate()
                .map(|(j, n)| (n.clone(), instance.resource_features[k][j]))
                .collect(),
        })
        .collect();

    let edges = g
        .edges()
        .iter()
        .map(|e| EdgeDoc {
            src: e.src.clone(),
            dst: e.dst.clone(),
            relation: e.relation,
            features: e.features.clone(),
        })
        .collect();

    let mut activity_schema = Vec::new();
    for rid in g.resource_ids() {
        activity_schema.push(FeatureDef {
            name: demand_key(rid),
            kind: "continuous".into(),
        });
    }
    if instance.skill.is_some() {
        activity_schema.push(FeatureDef {
            name: "skill".into(),
            kind: "continuous".into(),
        });
    }
    for name in &instance.extra_feature_names {
        activity_schema.push(FeatureDef {
            name: name.clone(),
            kind: "continuous".into(),
        });
    }
    for name in &instance.cat_feature_names {
        activity_schema.push(FeatureDef {
            name: name.clone(),
            kind: "categorical".into(),
        });
    }
    let resource_schema = instance
        .resource_feature_names
        .iter()
        .map(|n| FeatureDef {
            name: n.clone(),
            kind: "continuous".into(),
        })
        .collect();

    let doc = CanonicalProject {
        schema: CANONICAL_SCHEMA.into(),
        meta: MetaDoc {
            name: instance.meta.name.clone(),
            seed: instance.meta.seed,
            source: instance.meta.source.clone(),
            overhead: instance.overhead,
            provenance: instance.provenance.clone(),
            protected_edges: instance.protected_edges.clone(),
        },
        activities,
        resources,
        edges,
        feature_schema: FeatureSchemaDoc {
            activity: activity_schema,
            resource: resource_schema,
            activity_types: instance.type_vocab.clone(),
        },
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn read_canonical(bytes: &[u8]) -> Result<ProjectInstance, IngestError> {
    let doc: CanonicalProject = serde_json::from_slice(bytes)?;
    if doc.schema != CANONICAL_SCHEMA {
        return Err(IngestError::VersionMismatch {
            found: doc.schema,
            expected: CANONICAL_SCHEMA.into(),
        });
    }
    let violation = |path: &str, reason: String| IngestError::SchemaViolation {
        path: path.to_string(),
        reason,
    };

    let activity_ids: Vec<String> = doc.activities.iter().map(|a| a.id.clone()).collect();
    let resource_ids: Vec<String> = doc.resources.iter().map(|r| r.id.clone()).collect();
    let edges: Vec<Edge> = doc
        .edges
        .iter()
        .map(|e| Edge {
            src: e.src.clone(),
            dst: e.dst.clone(),
            relation: e.relation,
            features: e.features.clone(),
        })
        .collect();
    let graph = ProjectGraph::new(activity_ids, resource_ids, edges)
        .map_err(|e| violation("edges", e.to_string()))?;

    // Schema must cover every feature key used.
    let known_continuous: std::collections::BTreeSet<&str> = doc
        .feature_schema
        .activity
        .iter()
        .filter(|d| d.kind == "continuous")
        .map(|d| d.name.as_str())
        .collect();
    let known_categorical: std::collections::BTreeSet<&str> = doc
        .feature_schema
        .activity
        .iter()
        .filter(|d| d.kind == "categorical")
        .map(|d| d.name.as_str())
        .collect();

    let n = graph.n_activities();
    let p = graph.n_resources();
    let has_skill = known_continuous.contains("skill");
    let extra_feature_names: Vec<String> = doc
        .feature_schema
        .activity
        .iter()
        .filter(|d| {
            d.kind == "continuous" && d.name != "skill" && !d.name.starts_with("demand:")
        })
        .map(|d| d.name.clone())
        .collect();
    let cat_feature_names: Vec<String> = doc
        .feature_schema
        .activity
        .iter()
        .filter(|d| d.kind == "categorical")
        .map(|d| d.name.clone())
        .collect();

    let mut demands = vec![vec![0.0f64; p]; n];
    let mut mask = vec![vec![true; p]; n];
    let mut any_masked = false;
    let mut skill = if has_skill { Some(vec![0.0f64; n]) } else { None };
    let mut extra_features = vec![vec![0.0f64; extra_feature_names.len()]; n];
    let mut cat_features = vec![vec![String::new(); cat_feature_names.len()]; n];
    let mut t_est = vec![0.0f64; n];
    let mut c_est = vec![0.0f64; n];
    let mut t_true = Vec::new();
    let mut c_true = Vec::new();
    let mut activity_type = Vec::new();

    for (i, a) in doc.activities.iter().enumerate() {
        let path = format!("activities[{i}]");
        for key in a.features.keys() {
            if !known_continuous.contains(key.as_str()) {
                return Err(violation(
                    &path,
                    format!("feature {key:?} not covered by feature_schema"),
                ));
            }
        }
        for key in a.categoricals.keys() {
            if !known_categorical.contains(key.as_str()) {
                return Err(violation(
                    &path,
                    format!("categorical {key:?} not covered by feature_schema"),
                ));
            }
        }
        for (k, rid) in graph.resource_ids().iter().enumerate() {
            match a.features.get(&demand_key(rid)) {
                Some(&v) => demands[i][k] = v,
                None => {
                    mask[i][k] = false;
                    any_masked = true;
                }
            }
        }
        if let Some(s) = &mut skill {
            s[i] = *a
                .features
                .get("skill")
                .ok_or_else(|| violation(&path, "missing skill feature".into()))?;
        }
        for (j, name) in extra_feature_names.iter().enumerate() {
            extra_features[i][j] = *a
                .features
                .get(name)
                .ok_or_else(|| violation(&path, format!("missing feature {name:?}")))?;
        }
        for (j, name) in cat_feature_names.iter().enumerate() {
            cat_features[i][j] = a
                .categoricals
                .get(name)
                .ok_or_else(|| violation(&path, format!("missing categorical {name:?}")))?
                .clone();
        }
        t_est[i] = a.t_est;
        c_est[i] = a.c_est;
        if let Some(t) = a.t {
            t_true.push(t);
        }
        if let Some(c) = a.c {
            c_true.push(c);
        }
        if let Some(ty) = &a.activity_type {
            let idx = doc
                .feature_schema
                .activity_types
                .iter()
                .position(|v| v == ty)
                .ok_or_else(|| violation(&path, format!("unknown activity type {ty:?}")))?;
            activity_type.push(idx);
        }
    }
    if !t_true.is_empty() && t_true.len() != n {
        return Err(violation(
            "activities",
            "t targets must be present for all activities or none".into(),
        ));
    }
    if !c_true.is_empty() && c_true.len() != n {
        return Err(violation(
            "activities",
            "c targets must be present for all activities or none".into(),
        ));
    }
    if !activity_type.is_empty() && activity_type.len() != n {
        return Err(violation(
            "activities",
            "activity_type must be present for all activities or none".into(),
        ));
    }

    let resource_feature_names: Vec<String> = doc
        .feature_schema
        .resource
        .iter()
        .map(|d| d.name.clone())
        .collect();
    let mut resource_features = vec![vec![0.0f64; resource_feature_names.len()]; p];
    for (k, r) in doc.resources.iter().enumerate() {
        for (j, name) in resource_feature_names.iter().enumerate() {
            resource_features[k][j] = *r.features.get(name).ok_or_else(|| {
                violation(
                    &format!("resources[{k}]"),
                    format!("missing feature {name:?}"),
                )
            })?;
        }
    }

    Ok(ProjectInstance {
        graph,
        demands,
        demand_mask: if any_masked { Some(mask) } else { None },
        skill,
        activity_type: if activity_type.is_empty() {
            None
        } else {
            Some(activity_type)
        },
        type_vocab: doc.feature_schema.activity_types,
        t_est,
        c_est,
        t_true: if t_true.is_empty() { None } else { Some(t_true) },
        c_true: if c_true.is_empty() { None } else { Some(c_true) },
        extra_feature_names,
        extra_features,
        cat_feature_names,
        cat_features,
        resource_feature_names,
        resource_features,
        overhead: doc.meta.overhead,
        meta: InstanceMeta {
            name: doc.meta.name,
            seed: doc.meta.seed,
            source: doc.meta.source,
        },
        provenance: doc.meta.provenance,
        protected_edges: doc.meta.protected_edges,
    })
}
