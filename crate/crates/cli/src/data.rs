//! Dataset and checkpoint I/O for the command-line tool.

use pnf_core::ingest::{read_canonical, write_canonical, IngestError};
use pnf_core::instance::ProjectInstance;
use pnf_core::rng::StreamRng;
use pnf_learn::baselines::RidgeModel;
use pnf_learn::gnn::ModelParams;
use pnf_learn::prep::FeaturePipeline;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

/// Load every canonical JSON instance in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<(String, ProjectInstance)>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::runtime(format!("reading {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
        .filter(|p| {
            p.file_name()
                .map(|n| n != "manifest.json")
                .unwrap_or(true)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::usage(format!(
            "no instance .json files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
        let inst = read_canonical(&bytes)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        out.push((path.display().to_string(), inst));
    }
    Ok(out)
}

pub fn save_instance(path: &Path, inst: &ProjectInstance) -> Result<(), CliError> {
    let bytes = write_canonical(inst).map_err(CliError::from_ingest)?;
    std::fs::write(path, bytes)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

/// Deterministic train/val/test split over instance indices.
pub fn split_indices(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    StreamRng::from_seed(seed).stream("split").shuffle(&mut order);
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n);
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
    let train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    // Degenerate datasets: reuse the training split rather than fail.
    if val.is_empty() {
        val = train.clone();
    }
    if test.is_empty() {
        test = val.clone();
    }
    (train, val, test)
}

/// Trained model artifact: the feature pipeline plus the learned state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Checkpoint {
    Graphsage {
        pipeline: FeaturePipeline,
        params: ModelParams,
        seed: u64,
    },
    Tgn {
        pipeline: FeaturePipeline,
        params: ModelParams,
        seed: u64,
    },
    Mlp {
        pipeline: FeaturePipeline,
        params: ModelParams,
        seed: u64,
    },
    Ridge {
        pipeline: FeaturePipeline,
        duration: RidgeModel,
        cost: RidgeModel,
        /// Train-residual standard deviations (duration, cost) backing the
        /// constant predictive interval of the linear baseline.
        residual_std: (f64, f64),
        seed: u64,
    },
}

impl Checkpoint {
    pub fn pipeline(&self) -> &FeaturePipeline {
        match self {
            Checkpoint::Graphsage { pipeline, .. }
            | Checkpoint::Tgn { pipeline, .. }
            | Checkpoint::Mlp { pipeline, .. }
            | Checkpoint::Ridge { pipeline, .. } => pipeline,
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            Checkpoint::Graphsage { .. } => "graphsage",
            Checkpoint::Tgn { .. } => "tgn",
            Checkpoint::Mlp { .. } => "mlp",
            Checkpoint::Ridge { .. } => "ridge",
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| CliError::runtime(format!("serializing checkpoint: {e}")))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
    }
}

/// Every run writes a manifest with the resolved configuration and seed so
/// outputs can be reproduced bit-exactly.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
}

pub fn write_manifest(dir_or_file: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let path = if dir_or_file.is_dir() {
        dir_or_file.join("manifest.json")
    } else {
        let mut name = dir_or_file
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "output".to_string());
        name.push_str(".manifest.json");
        dir_or_file.with_file_name(name)
    };
    let mut bytes = serde_json::to_vec_pretty(manifest)
        .map_err(|e| CliError::runtime(format!("serializing manifest: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

impl CliError {
    pub fn from_ingest(e: IngestError) -> Self {
        CliError::runtime(e.to_string())
    }
}
