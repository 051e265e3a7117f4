//! Train-split preprocessing.
//!
//! Statistics (medians, winsorization cut points, means/stds, categorical
//! vocabularies) are fitted on training instances only and applied unchanged
//! everywhere else. Per feature: impute missing values with the train median,
//! clamp to the train 1st/99th percentile, then z-score. Categoricals one-hot
//! encode against the train vocabulary with a dedicated UNK slot. Targets are
//! never read while fitting and never transformed. Imputation and
//! winsorization are idempotent; the z-score stage is not.

use super::IngestError;
use crate::instance::ProjectInstance;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub median: f64,
    pub lo_cut: f64,
    pub hi_cut: f64,
    /// Mean/std of the winsorized training values; std 1.0 when degenerate.
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalStats {
    /// Training vocabulary in first-seen order; UNK handled separately.
    pub vocab: Vec<String>,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub continuous: BTreeMap<String, ContinuousStats>,
    pub categorical: BTreeMap<String, CategoricalStats>,
    pub resource_continuous: BTreeMap<String, ContinuousStats>,
}

pub const UNK: &str = "UNK";

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn fit_continuous(values: &mut Vec<f64>) -> ContinuousStats {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite feature values"));
    let median = percentile(values, 0.5);
    let lo_cut = percentile(values, 0.01);
    let hi_cut = percentile(values, 0.99);
    let wins: Vec<f64> = values.iter().map(|&v| v.clamp(lo_cut, hi_cut)).collect();
    let n = wins.len().max(1) as f64;
    let mean = wins.iter().sum::<f64>() / n;
    let var = wins.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    ContinuousStats {
        median,
        lo_cut,
        hi_cut,
        mean,
        std,
    }
}

/// Per-activity continuous feature columns of an instance, keyed the same
/// way the canonical format names them.
fn continuous_columns(inst: &ProjectInstance) -> Vec<(String, Vec<Option<f64>>)> {
    let n = inst.n_activities();
    let mut cols = Vec::new();
    for (k, rid) in inst.graph.resource_ids().iter().enumerate() {
        let mut col = Vec::with_capacity(n);
        for i in 0..n {
            let present = inst.demand_mask.as_ref().map(|m| m[i][k]).unwrap_or(true);
            col.push(present.then_some(inst.demands[i][k]));
        }
        cols.push((format!("demand:{rid}"), col));
    }
    if let Some(skill) = &inst.skill {
        cols.push(("skill".into(), skill.iter().map(|&v| Some(v)).collect()));
    }
    for (j, name) in inst.extra_feature_names.iter().enumerate() {
        cols.push((
            name.clone(),
            (0..n).map(|i| Some(inst.extra_features[i][j])).collect(),
        ));
    }
    cols.push(("t_est".into(), inst.t_est.iter().map(|&v| Some(v)).collect()));
    cols.push(("c_est".into(), inst.c_est.iter().map(|&v| Some(v)).collect()));
    cols
}

/// Fit preprocessing statistics on training instances only.
pub fn fit_preprocess(train: &[&ProjectInstance]) -> Result<PreprocessStats, IngestError> {
    if train.is_empty() {
        return Err(IngestError::EmptyTrainingSet);
    }
    let mut cont: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cat: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut res_cont: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for inst in train {
        for (name, col) in continuous_columns(inst) {
            cont.entry(name).or_default().extend(col.into_iter().flatten());
        }
        for (j, name) in inst.cat_feature_names.iter().enumerate() {
            let bucket = cat.entry(name.clone()).or_default();
            for row in &inst.cat_features {
                bucket.push(row[j].clone());
            }
        }
        for (j, name) in inst.resource_feature_names.iter().enumerate() {
            let bucket = res_cont.entry(name.clone()).or_default();
            for row in &inst.resource_features {
                bucket.push(row[j]);
            }
        }
    }

    let continuous = cont
        .into_iter()
        .map(|(name, mut values)| (name, fit_continuous(&mut values)))
        .collect();
    let resource_continuous = res_cont
        .into_iter()
        .map(|(name, mut values)| (name, fit_continuous(&mut values)))
        .collect();
    let categorical = cat
        .into_iter()
        .map(|(name, values)| {
            let mut vocab: Vec<String> = Vec::new();
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for v in &values {
                if !vocab.iter().any(|x| x == v) {
                    vocab.push(v.clone());
                }
                *counts.entry(v.as_str()).or_default() += 1;
            }
            let mode = counts
                .iter()
                .max_by_key(|&(_, &c)| c)
                .map(|(&v, _)| v.to_string())
                .unwrap_or_else(|| UNK.to_string());
            (name, CategoricalStats { vocab, mode })
        })
        .collect();
    Ok(PreprocessStats {
        continuous,
        categorical,
        resource_continuous,
    })
}

fn transform(stats: &ContinuousStats, value: f64) -> f64 {
    (value.clamp(stats.lo_cut, stats.hi_cut) - stats.mean) / stats.std
}

/// Apply fitted statistics to one instance. Demands, skill, extras and
/// estimate features are imputed/winsorized/z-scored; categorical extras are
/// replaced by one-hot columns (train vocabulary plus UNK); the missing mask
/// is cleared; targets are untouched.
pub fn apply_preprocess(
    stats: &PreprocessStats,
    inst: &ProjectInstance,
) -> Result<ProjectInstance, IngestError> {
    let mut out = inst.clone();
    let n = inst.n_activities();
    let missing_stats = |name: &str| IngestError::SchemaViolation {
        path: name.to_string(),
        reason: "feature not seen at fit time".into(),
    };

    for (k, rid) in inst.graph.resource_ids().iter().enumerate() {
        let key = format!("demand:{rid}");
        let st = stats.continuous.get(&key).ok_or_else(|| missing_stats(&key))?;
        for i in 0..n {
            let present = inst.demand_mask.as_ref().map(|m| m[i][k]).unwrap_or(true);
            let raw = if present { inst.demands[i][k] } else { st.median };
            out.demands[i][k] = transform(st, raw);
        }
    }
    out.demand_mask = None;

    if let Some(skill) = &inst.skill {
        let st = stats.continuous.get("skill").ok_or_else(|| missing_stats("skill"))?;
        out.skill = Some(skill.iter().map(|&v| transform(st, v)).collect());
    }
    for (j, name) in inst.extra_feature_names.iter().enumerate() {
        let st = stats.continuous.get(name).ok_or_else(|| missing_stats(name))?;
        for i in 0..n {
            out.extra_features[i][j] = transform(st, inst.extra_features[i][j]);
        }
    }
    {
        let st = stats.continuous.get("t_est").ok_or_else(|| missing_stats("t_est"))?;
        out.t_est = inst.t_est.iter().map(|&v| transform(st, v)).collect();
        let st = stats.continuous.get("c_est").ok_or_else(|| missing_stats("c_est"))?;
        out.c_est = inst.c_est.iter().map(|&v| transform(st, v)).collect();
    }

    // One-hot encode categoricals into extra continuous columns.
    for (j, name) in inst.cat_feature_names.iter().enumerate() {
        let st = stats.categorical.get(name).ok_or_else(|| missing_stats(name))?;
        for value in st.vocab.iter().chain(std::iter::once(&UNK.to_string())) {
            out.extra_feature_names.push(format!("{name}={value}"));
            for i in 0..n {
                let raw = &inst.cat_features[i][j];
                let hit = if st.vocab.iter().any(|v| v == raw) {
                    raw == value
                } else {
                    value == UNK
                };
                out.extra_features[i].push(if hit { 1.0 } else { 0.0 });
            }
        }
    }
    out.cat_feature_names = Vec::new();
    out.cat_features = vec![Vec::new(); n];

    for (j, name) in inst.resource_feature_names.iter().enumerate() {
        let st = stats
            .resource_continuous
            .get(name)
            .ok_or_else(|| missing_stats(name))?;
        for (k, row) in out.resource_features.iter_mut().enumerate() {
            row[j] = transform(st, inst.resource_features[k][j]);
        }
    }
    Ok(out)
}
