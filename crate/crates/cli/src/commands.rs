//! Subcommand implementations.

use crate::data::{
    load_dir, save_instance, split_indices, write_manifest, Checkpoint, Manifest,
};
use crate::CliError;
use pnf_core::graph::compute_schedule;
use pnf_core::ingest::{build_surrogate_graph, parse_psplib as parse_sm, SurrogateStrategy};
use pnf_core::instance::ProjectInstance;
use pnf_core::rbm::{
    frontier_cost, monte_carlo_project, solve_cost_frontier, ActivityWorkSpec, CrashParams,
    DistributionFamily, EfficiencyDistribution, ResourceUse,
};
use pnf_core::rng::StreamRng;
use pnf_core::synthgen::{generate_project, GenConfig};
use pnf_learn::active::{run_active_loop, ActiveConfig, ActiveCurve, Strategy};
use pnf_learn::baselines::{ridge_fit_tuned, ridge_predict, RIDGE_GRID};
use pnf_learn::gnn::{ModelConfig, PredictionSet, TemporalConfig};
use pnf_learn::loss::LossConfig;
use pnf_learn::prep::{fit_pipeline, FeaturePipeline, PreparedInstance};
use pnf_learn::temporal::{run_temporal, TemporalConfigRun, TemporalCurve, TemporalVariant};
use pnf_learn::train::{
    evaluate_predictions, predict_instance, train_model, train_temporal, EvalReport, TrainConfig,
};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("creating {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

pub fn generate(
    size: usize,
    density: f64,
    samples: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::usage("--samples must be at least 1"));
    }
    ensure_dir(out)?;
    GenConfig::new(size, density, seed)
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let root = StreamRng::from_seed(seed).stream("generate");
    let width = (samples.max(2) - 1).to_string().len();
    // Instances are independent (one derived sub-seed each), so generation
    // parallelizes across --jobs without changing any output byte.
    use rayon::prelude::*;
    (0..samples).into_par_iter().try_for_each(|k| {
        let sub_seed = root.clone().substream(k as u64).next();
        let config = GenConfig::new(size, density, sub_seed);
        let inst = generate_project(&config).map_err(|e| CliError::runtime(e.to_string()))?;
        let path = out.join(format!("instance_{k:0width$}.json"));
        save_instance(&path, &inst)
    })?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "generate",
            seed,
            config: serde_json::json!({
                "size": size,
                "density": density,
                "samples": samples,
            }),
            inputs: vec![],
        },
    )
}

pub fn parse_psplib(
    input: &Path,
    out: &Path,
    min_activities: usize,
    max_activities: usize,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::usage(format!("reading {}: {e}", input.display())))?;
    let inst = parse_sm(&text).map_err(|e| CliError::runtime(e.to_string()))?;
    let n = inst.n_activities();
    if n < min_activities || n > max_activities {
        return Err(CliError::usage(format!(
            "instance has {n} activities, outside the accepted range [{min_activities}, {max_activities}]"
        )));
    }
    save_instance(out, &inst)?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "parse-psplib",
            seed: 0,
            config: serde_json::json!({
                "min_activities": min_activities,
                "max_activities": max_activities,
            }),
            inputs: vec![input.display().to_string()],
        },
    )
}

pub fn ingest_csv(input: &Path, strategy: &str, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| CliError::usage(format!("reading {}: {e}", input.display())))?;
    let strat = match strategy {
        "chain4" => SurrogateStrategy::Chain4,
        "phase6" => SurrogateStrategy::Phase6,
        "module" => SurrogateStrategy::Module,
        other => return Err(CliError::usage(format!("unknown strategy {other}"))),
    };
    let instances = build_surrogate_graph(&text, strat).map_err(|e| match e {
        pnf_core::ingest::IngestError::MissingColumn(_) => CliError::usage(e.to_string()),
        other => CliError::runtime(other.to_string()),
    })?;
    ensure_dir(out)?;
    let width = (instances.len().max(2) - 1).to_string().len();
    for (k, inst) in instances.iter().enumerate() {
        save_instance(&out.join(format!("row_{k:0width$}.json")), inst)?;
    }
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "ingest-csv",
            seed: 0,
            config: serde_json::json!({ "strategy": strategy }),
            inputs: vec![input.display().to_string()],
        },
    )
}

/// Optional training configuration file.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TrainFileConfig {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    split: SplitConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct SplitConfig {
    train: f64,
    val: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.7,
            val: 0.15,
        }
    }
}

fn read_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::usage(format!("reading {}: {e}", p.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn default_model_config(model: &str) -> ModelConfig {
    match model {
        "mlp" => ModelConfig {
            layers: 0,
            head_hidden: vec![256, 128],
            ..ModelConfig::default()
        },
        "tgn" => ModelConfig {
            layers: 0,
            temporal: Some(TemporalConfig::default()),
            ..ModelConfig::default()
        },
        _ => ModelConfig::default(),
    }
}

struct PreparedDataset {
    pipeline: FeaturePipeline,
    train: Vec<PreparedInstance>,
    val: Vec<PreparedInstance>,
    test: Vec<PreparedInstance>,
}

fn prepare_splits(
    instances: &[(String, ProjectInstance)],
    split: &SplitConfig,
    temporal_features: bool,
    seed: u64,
) -> Result<PreparedDataset, CliError> {
    let (train_idx, val_idx, test_idx) =
        split_indices(instances.len(), split.train, split.val, seed);
    let train_refs: Vec<&ProjectInstance> = train_idx.iter().map(|&i| &instances[i].1).collect();
    let pipeline = fit_pipeline(&train_refs, temporal_features)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let prepare_all = |idx: &[usize]| -> Result<Vec<PreparedInstance>, CliError> {
        idx.iter()
            .map(|&i| {
                pipeline
                    .prepare(&instances[i].1)
                    .map_err(|e| CliError::runtime(format!("{}: {e}", instances[i].0)))
            })
            .collect()
    };
    Ok(PreparedDataset {
        train: prepare_all(&train_idx)?,
        val: prepare_all(&val_idx)?,
        test: prepare_all(&test_idx)?,
        pipeline,
    })
}

pub fn train(
    model: &str,
    data: &Path,
    config_path: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let file_cfg: TrainFileConfig = read_json_config(config_path)?;
    let instances = load_dir(data)?;
    for (name, inst) in &instances {
        if !inst.has_targets() {
            return Err(CliError::usage(format!("{name} has no true targets")));
        }
    }
    let model_cfg = file_cfg
        .model
        .clone()
        .unwrap_or_else(|| default_model_config(model));
    let train_cfg = file_cfg.train.clone().unwrap_or_default();
    let dataset = prepare_splits(&instances, &file_cfg.split, model == "tgn", seed)?;
    ensure_dir(out)?;

    let run_err = |e: pnf_learn::train::TrainError| CliError::runtime(e.to_string());
    let checkpoint = match model {
        "ridge" => {
            let rows = |set: &[PreparedInstance]| -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
                let mut x = Vec::new();
                let mut t = Vec::new();
                let mut c = Vec::new();
                for inst in set {
                    for i in 0..inst.n_act() {
                        x.push(inst.act_features.row(i).to_vec());
                        t.push(inst.t_true[i]);
                        c.push(inst.c_true[i]);
                    }
                }
                (x, t, c)
            };
            let (x_train, t_train, c_train) = rows(&dataset.train);
            let (x_val, t_val, c_val) = rows(&dataset.val);
            let duration = ridge_fit_tuned(&x_train, &t_train, &x_val, &t_val, &RIDGE_GRID)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let cost = ridge_fit_tuned(&x_train, &c_train, &x_val, &c_val, &RIDGE_GRID)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let resid_std = |model: &pnf_learn::baselines::RidgeModel,
                             x: &[Vec<f64>],
                             y: &[f64]| {
                let preds = ridge_predict(model, x);
                (preds
                    .iter()
                    .zip(y)
                    .map(|(&p, &t)| (p - t) * (p - t))
                    .sum::<f64>()
                    / y.len().max(1) as f64)
                    .sqrt()
                    .max(1e-9)
            };
            let residual_std = (
                resid_std(&duration, &x_train, &t_train),
                resid_std(&cost, &x_train, &c_train),
            );
            Checkpoint::Ridge {
                pipeline: dataset.pipeline.clone(),
                duration,
                cost,
                residual_std,
                seed,
            }
        }
        "tgn" => {
            let (params, history) = train_temporal(
                &dataset.train,
                &dataset.val,
                &model_cfg,
                &train_cfg,
                seed,
                None,
            )
            .map_err(run_err)?;
            write_file(&out.join("history.csv"), history.to_csv().as_bytes())?;
            Checkpoint::Tgn {
                pipeline: dataset.pipeline.clone(),
                params,
                seed,
            }
        }
        name @ ("graphsage" | "mlp") => {
            let effective_cfg = if name == "mlp" && file_cfg.model.is_none() {
                default_model_config("mlp")
            } else {
                model_cfg.clone()
            };
            let (params, history) = train_model(
                &dataset.train,
                &dataset.val,
                &effective_cfg,
                &train_cfg,
                seed,
                None,
            )
            .map_err(run_err)?;
            write_file(&out.join("history.csv"), history.to_csv().as_bytes())?;
            if name == "mlp" {
                Checkpoint::Mlp {
                    pipeline: dataset.pipeline.clone(),
                    params,
                    seed,
                }
            } else {
                Checkpoint::Graphsage {
                    pipeline: dataset.pipeline.clone(),
                    params,
                    seed,
                }
            }
        }
        other => return Err(CliError::usage(format!("unknown model {other}"))),
    };
    checkpoint.save(&out.join("checkpoint.json"))?;

    // Held-out metrics for quick inspection.
    let report = eval_checkpoint(&checkpoint, &dataset.test)?;
    write_file(
        &out.join("test_metrics.csv"),
        metrics_csv(checkpoint.model_name(), &data.display().to_string(), seed, &report).as_bytes(),
    )?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "train",
            seed,
            config: serde_json::json!({
                "model": model,
                "model_config": model_cfg,
                "train_config": train_cfg,
                "split": { "train": file_cfg.split.train, "val": file_cfg.split.val },
            }),
            inputs: vec![data.display().to_string()],
        },
    )
}

/// Predictions for every instance under a checkpoint.
fn checkpoint_predictions(
    ckpt: &Checkpoint,
    prepared: &[PreparedInstance],
) -> Result<Vec<PredictionSet>, CliError> {
    match ckpt {
        Checkpoint::Graphsage { params, .. }
        | Checkpoint::Tgn { params, .. }
        | Checkpoint::Mlp { params, .. } => prepared
            .iter()
            .map(|p| predict_instance(params, p).map_err(|e| CliError::runtime(e.to_string())))
            .collect(),
        Checkpoint::Ridge {
            duration,
            cost,
            residual_std,
            ..
        } => Ok(prepared
            .iter()
            .map(|inst| {
                let rows: Vec<Vec<f64>> =
                    (0..inst.n_act()).map(|i| inst.act_features.row(i).to_vec()).collect();
                let mu_t = ridge_predict(duration, &rows);
                let mu_c = ridge_predict(cost, &rows);
                let n = mu_t.len();
                PredictionSet {
                    mu_t,
                    mu_c,
                    logvar_t: vec![(residual_std.0 * residual_std.0).ln(); n],
                    logvar_c: vec![(residual_std.1 * residual_std.1).ln(); n],
                }
            })
            .collect()),
    }
}

fn eval_checkpoint(
    ckpt: &Checkpoint,
    prepared: &[PreparedInstance],
) -> Result<EvalReport, CliError> {
    let preds = checkpoint_predictions(ckpt, prepared)?;
    evaluate_predictions(prepared, &preds).map_err(|e| CliError::runtime(e.to_string()))
}

fn metrics_csv(model: &str, dataset: &str, seed: u64, report: &EvalReport) -> String {
    let mut out = String::from(
        "model,dataset,seed,head,n,mae,rmse,mape_pct,r2,spearman,ece_pct,pi90_coverage_pct,mean_interval_width\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut row = |head: &str, n: usize, acc: &pnf_core::metrics::AccuracyMetrics, cal: Option<&pnf_core::metrics::CalibrationMetrics>| {
        out.push_str(&format!(
            "{model},{dataset},{seed},{head},{n},{},{},{},{},{},{},{},{}\n",
            acc.mae,
            acc.rmse,
            acc.mape_pct,
            opt(acc.r2),
            opt(acc.spearman),
            opt(cal.map(|c| c.ece_pct)),
            opt(cal.map(|c| c.pi90_coverage_pct)),
            opt(cal.map(|c| c.mean_interval_width)),
        ));
    };
    row(
        "duration",
        report.n_activities,
        &report.duration.accuracy,
        report.duration.calibration.as_ref(),
    );
    row(
        "cost",
        report.n_activities,
        &report.cost.accuracy,
        report.cost.calibration.as_ref(),
    );
    row("makespan", report.n_instances, &report.makespan, None);
    row("total_cost", report.n_instances, &report.total_cost, None);
    out
}

pub fn eval(checkpoint: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let instances = load_dir(data)?;
    let prepared: Vec<PreparedInstance> = instances
        .iter()
        .map(|(name, inst)| {
            ckpt.pipeline()
                .prepare(inst)
                .map_err(|e| CliError::runtime(format!("{name}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let report = eval_checkpoint(&ckpt, &prepared)?;
    let seed = match &ckpt {
        Checkpoint::Graphsage { seed, .. }
        | Checkpoint::Tgn { seed, .. }
        | Checkpoint::Mlp { seed, .. }
        | Checkpoint::Ridge { seed, .. } => *seed,
    };
    write_file(
        out,
        metrics_csv(ckpt.model_name(), &data.display().to_string(), seed, &report).as_bytes(),
    )?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "eval",
            seed,
            config: serde_json::json!({ "checkpoint": checkpoint.display().to_string() }),
            inputs: vec![data.display().to_string()],
        },
    )
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ActiveFileConfig {
    active: ActiveConfig,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    seeds: Vec<u64>,
}

pub fn active(
    strategy: &str,
    data: &Path,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg: ActiveFileConfig = read_json_config(config_path)?;
    cfg.active.strategy = match strategy {
        "random" => Strategy::Random,
        "uncertainty" => Strategy::Uncertainty,
        "topology" => Strategy::Topology,
        "hybrid" => Strategy::Hybrid,
        other => return Err(CliError::usage(format!("unknown strategy {other}"))),
    };
    let seeds = if cfg.seeds.is_empty() { vec![13] } else { cfg.seeds.clone() };
    let model_cfg = cfg.model.clone().unwrap_or_else(|| ModelConfig {
        layers: 2,
        hidden: 32,
        dropout: 0.0,
        layer_norm: false,
        head_hidden: vec![32],
        ..ModelConfig::default()
    });
    let train_cfg = cfg.train.clone().unwrap_or_else(|| TrainConfig {
        max_epochs: 40,
        patience: 10,
        sampled: false,
        loss: LossConfig {
            lambda_proj: 0.0,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    });
    let instances: Vec<ProjectInstance> =
        load_dir(data)?.into_iter().map(|(_, inst)| inst).collect();

    let mut csv = String::from(ActiveCurve::csv_header());
    for &seed in &seeds {
        let curve = run_active_loop(&instances, &model_cfg, &train_cfg, &cfg.active, seed)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        csv.push_str(&curve.csv_rows());
    }
    write_file(out, csv.as_bytes())?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "active",
            seed: seeds[0],
            config: serde_json::json!({
                "strategy": strategy,
                "active": cfg.active,
                "model": model_cfg,
                "train": train_cfg,
                "seeds": seeds,
            }),
            inputs: vec![data.display().to_string()],
        },
    )
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TemporalFileConfig {
    temporal: TemporalConfigRun,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    seeds: Vec<u64>,
    /// Fraction of instances executed progressively (the rest train the
    /// initial model).
    eval_fraction: f64,
}

pub fn temporal(
    variant: &str,
    data: &Path,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg: TemporalFileConfig = read_json_config(config_path)?;
    let variant = match variant {
        "static-mlp" => TemporalVariant::StaticMlp,
        "static-gnn" => TemporalVariant::StaticGnn,
        "adaptive" => TemporalVariant::Adaptive,
        other => return Err(CliError::usage(format!("unknown variant {other}"))),
    };
    let seeds = if cfg.seeds.is_empty() { vec![13] } else { cfg.seeds.clone() };
    let eval_fraction = if cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0 {
        cfg.eval_fraction
    } else {
        0.3
    };
    let model_cfg = cfg.model.clone().unwrap_or_else(|| ModelConfig {
        layers: 2,
        hidden: 32,
        dropout: 0.0,
        layer_norm: false,
        head_hidden: vec![32],
        ..ModelConfig::default()
    });
    let train_cfg = cfg.train.clone().unwrap_or_else(|| TrainConfig {
        max_epochs: 40,
        patience: 10,
        sampled: false,
        loss: LossConfig {
            lambda_proj: 0.0,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    });
    let instances: Vec<ProjectInstance> =
        load_dir(data)?.into_iter().map(|(_, inst)| inst).collect();

    let mut csv = String::from(TemporalCurve::csv_header());
    for &seed in &seeds {
        let mut order: Vec<usize> = (0..instances.len()).collect();
        StreamRng::from_seed(seed).stream("temporal-split").shuffle(&mut order);
        let n_eval = ((eval_fraction * instances.len() as f64).round() as usize)
            .clamp(1, instances.len().saturating_sub(1).max(1));
        let eval_pool: Vec<ProjectInstance> =
            order[..n_eval].iter().map(|&i| instances[i].clone()).collect();
        let train_pool: Vec<ProjectInstance> = if order.len() > n_eval {
            order[n_eval..].iter().map(|&i| instances[i].clone()).collect()
        } else {
            eval_pool.clone()
        };
        let curve = run_temporal(
            &train_pool,
            &eval_pool,
            variant,
            &model_cfg,
            &train_cfg,
            &cfg.temporal,
            seed,
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
        csv.push_str(&curve.csv_rows());
    }
    write_file(out, csv.as_bytes())?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "temporal",
            seed: seeds[0],
            config: serde_json::json!({
                "variant": variant.name(),
                "temporal": cfg.temporal,
                "model": model_cfg,
                "train": train_cfg,
                "seeds": seeds,
                "eval_fraction": eval_fraction,
            }),
            inputs: vec![data.display().to_string()],
        },
    )
}

fn load_single_instance(path: &Path) -> Result<ProjectInstance, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))?;
    pnf_core::ingest::read_canonical(&bytes)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Default crash profile when none is supplied: normal duration from the
/// planner estimate, minimum cost from the cost estimate, moderate convexity.
fn default_crash_params(inst: &ProjectInstance) -> BTreeMap<String, CrashParams> {
    inst.graph
        .activity_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let normal = inst.t_est[i].max(1e-6);
            (
                id.clone(),
                CrashParams {
                    normal_duration: normal,
                    min_cost: inst.c_est[i].max(0.0),
                    a: 0.25 * inst.c_est[i].abs().max(1e-3),
                    b: std::f64::consts::LN_2 / (0.4 * normal),
                },
            )
        })
        .collect()
}

pub fn frontier(
    data: &Path,
    tmax: f64,
    crash_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    if tmax <= 0.0 {
        return Err(CliError::usage("--tmax must be positive"));
    }
    let inst = load_single_instance(data)?;
    let crash: BTreeMap<String, CrashParams> = match crash_path {
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| CliError::usage(format!("reading {}: {e}", p.display())))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => default_crash_params(&inst),
    };
    let durations =
        solve_cost_frontier(&inst.graph, &crash, tmax).map_err(|e| CliError::runtime(e.to_string()))?;
    let makespan = compute_schedule(&inst.graph, &durations)
        .map_err(|e| CliError::runtime(e.to_string()))?
        .makespan;
    let total_cost =
        frontier_cost(&crash, &durations).map_err(|e| CliError::runtime(e.to_string()))?;
    let doc = serde_json::json!({
        "t_max": tmax,
        "makespan": makespan,
        "total_crash_cost": total_cost,
        "durations": durations,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)
        .map_err(|e| CliError::runtime(format!("serializing output: {e}")))?;
    bytes.push(b'\n');
    write_file(out, &bytes)?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "frontier",
            seed: 0,
            config: serde_json::json!({
                "t_max": tmax,
                "crash_file": crash_path.map(|p| p.display().to_string()),
            }),
            inputs: vec![data.display().to_string()],
        },
    )
}

pub fn monte_carlo(
    data: &Path,
    samples: usize,
    seed: u64,
    sigma2: f64,
    out: &Path,
) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::usage("--samples must be at least 1"));
    }
    if sigma2 <= 0.0 {
        return Err(CliError::usage("--sigma2 must be positive"));
    }
    let inst = load_single_instance(data)?;
    // Standard rollout profile: work = demand at unit productivity and unit
    // cost rate, serial aggregation, log-normal efficiencies centered on 1.
    let mut specs = Vec::with_capacity(inst.n_activities());
    let mut dists = Vec::with_capacity(inst.n_activities());
    for i in 0..inst.n_activities() {
        let uses: Vec<ResourceUse> = inst.demands[i]
            .iter()
            .filter(|&&q| q > 0.0)
            .map(|&q| ResourceUse {
                work: q,
                productivity: 1.0,
                cost_rate: 1.0,
            })
            .collect();
        let arity = uses.len();
        specs.push(ActivityWorkSpec {
            uses,
            parallelism: 1.0,
            crash: None,
        });
        dists.push(EfficiencyDistribution {
            family: DistributionFamily::LogNormal,
            means: vec![0.0; arity],
            variances: vec![sigma2; arity],
            correlation: 0.0,
            bounds: None,
        });
    }
    let summary = monte_carlo_project(&inst.graph, &specs, &dists, samples, seed, inst.overhead)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let mut bytes = serde_json::to_vec_pretty(&summary)
        .map_err(|e| CliError::runtime(format!("serializing summary: {e}")))?;
    bytes.push(b'\n');
    write_file(out, &bytes)?;
    write_manifest(
        out,
        &Manifest {
            tool: "pnf",
            version: env!("CARGO_PKG_VERSION"),
            command: "mc",
            seed,
            config: serde_json::json!({ "samples": samples, "sigma2": sigma2 }),
            inputs: vec![data.display().to_string()],
        },
    )
}
