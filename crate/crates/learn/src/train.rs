//! Optimization loop: Adam with decoupled weight decay, global-norm
//! gradient clipping, linear warmup into cosine decay, early stopping on
//! validation NLL, and mini-batching with per-node neighbor sampling or
//! whole-instance batches. Single-threaded and bit-reproducible per seed.

use crate::gnn::{
    bind_params, extract_predictions, forward_full, forward_sampled, init_model, neighbor_sample,
    GnnError, Mode, ModelConfig, ModelParams, PredictionSet, TargetScale,
};
use crate::loss::{nll_activity, soft_cp_loss, LossConfig, LossError};
use crate::prep::PreparedInstance;
use crate::tensor::{Matrix, Tape, TensorId};
use pnf_core::metrics::{
    accuracy_metrics, calibration_metrics, AccuracyMetrics, CalibrationMetrics, MetricsError,
};
use pnf_core::rng::StreamRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("validation loss diverged at epoch {0}")]
    DivergedLoss(usize),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no labeled activities available")]
    NoLabels,
    #[error("fanout length {got} must equal model depth {expected}")]
    FanoutMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub fanout: Vec<usize>,
    pub patience: usize,
    /// Neighbor-sampled node batches when true; whole-instance batches
    /// (full receptive field) when false.
    pub sampled: bool,
    /// Whiten targets with train-split statistics during optimization;
    /// predictions are reported in original units either way.
    pub standardize_targets: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            warmup_epochs: 5,
            max_epochs: 200,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            batch: 32,
            fanout: vec![15, 10, 5],
            patience: 20,
            sampled: true,
            standardize_targets: true,
            loss: LossConfig::default(),
        }
    }
}

/// Linear warmup to lr0, then cosine decay to zero at max_epochs.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    if config.warmup_epochs > 0 && epoch < config.warmup_epochs {
        return config.lr0 * epoch as f64 / config.warmup_epochs as f64;
    }
    let span = (config.max_epochs.saturating_sub(config.warmup_epochs)).max(1) as f64;
    let progress = ((epoch - config.warmup_epochs) as f64 / span).clamp(0.0, 1.0);
    config.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Per-parameter first/second moment accumulators.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub m: BTreeMap<String, Matrix>,
    pub v: BTreeMap<String, Matrix>,
    pub step: u64,
}

/// One Adam update: clip the global gradient norm, apply decoupled weight
/// decay to weight tensors (biases and norm gains excluded), then the
/// bias-corrected moment update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Matrix>,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
    clip_norm: f64,
) -> Result<(), TrainError> {
    let mut norm_sq = 0.0;
    for (name, g) in grads {
        if !ModelParams::is_trainable(name) {
            continue;
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(name.clone()));
        }
        norm_sq += g.frobenius_sq();
    }
    let norm = norm_sq.sqrt();
    let clip_factor = if clip_norm > 0.0 && norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);

    let names: Vec<String> = params.tensors.keys().cloned().collect();
    for name in names {
        if !ModelParams::is_trainable(&name) {
            continue;
        }
        let Some(g) = grads.get(&name) else { continue };
        let theta = params.tensors.get_mut(&name).expect("known tensor");
        let decayed = weight_decay > 0.0 && !name.ends_with(".b") && !name.ends_with(".bias") && !name.ends_with(".gain");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(theta.rows(), theta.cols()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(theta.rows(), theta.cols()));
        for k in 0..theta.data().len() {
            let gk = g.data()[k] * clip_factor;
            let mk = ADAM_BETA1 * m.data()[k] + (1.0 - ADAM_BETA1) * gk;
            let vk = ADAM_BETA2 * v.data()[k] + (1.0 - ADAM_BETA2) * gk * gk;
            m.data_mut()[k] = mk;
            v.data_mut()[k] = vk;
            let update = lr * (mk / bc1) / ((vk / bc2).sqrt() + ADAM_EPS);
            let mut value = theta.data()[k];
            if decayed {
                value -= lr * weight_decay * value;
            }
            theta.data_mut()[k] = value - update;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.lr, e.train_loss, e.val_loss
            ));
        }
        out
    }
}

fn collect_grads(
    tape: &Tape,
    bound: &BTreeMap<String, TensorId>,
    loss: TensorId,
    acc: &mut BTreeMap<String, Matrix>,
) -> Result<(), TrainError> {
    let grads = tape.backward(loss).map_err(GnnError::from)?;
    for (name, &id) in bound {
        if !ModelParams::is_trainable(name) {
            continue;
        }
        let (r, c) = tape.shape(id);
        let g = grads.get_or_zeros(id, r, c);
        match acc.get_mut(name) {
            Some(existing) => existing.add_assign(&g),
            None => {
                acc.insert(name.clone(), g);
            }
        }
    }
    Ok(())
}

/// Mean validation NLL over labeled activities (eval mode, full graphs).
pub fn validation_nll(
    params: &ModelParams,
    instances: &[PreparedInstance],
    loss_cfg: &LossConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    let scale = params.target_scale.unwrap_or_else(TargetScale::identity);
    for inst in instances {
        if inst.labeled_count() == 0 {
            continue;
        }
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params);
        let out = forward_full(&mut tape, &bound, params, inst, &mut Mode::Eval)?;
        let t: Vec<f64> = inst.t_true.iter().map(|&y| scale.whiten_t(y)).collect();
        let c: Vec<f64> = inst.c_true.iter().map(|&y| scale.whiten_c(y)).collect();
        let nll = nll_activity(&mut tape, &out, &t, &c, &inst.labeled, loss_cfg)?;
        total += tape.value(nll).scalar_value();
        count += 1;
    }
    if count == 0 {
        return Err(TrainError::NoLabels);
    }
    Ok(total / count as f64)
}

/// Train a model, returning the best-validation checkpoint and the history.
/// `warm_start` continues from existing parameters instead of initializing.
pub fn train_model(
    train: &[PreparedInstance],
    val: &[PreparedInstance],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    warm_start: Option<ModelParams>,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if train_cfg.sampled && model_cfg.layers > 0 && train_cfg.fanout.len() != model_cfg.layers {
        return Err(TrainError::FanoutMismatch {
            got: train_cfg.fanout.len(),
            expected: model_cfg.layers,
        });
    }
    let mut params = match warm_start {
        Some(p) => p,
        None => {
            let mut fresh = init_model(
                model_cfg,
                train[0].act_features.cols(),
                train[0].res_features.cols(),
                seed,
            )?;
            if train_cfg.standardize_targets {
                fresh.target_scale = Some(TargetScale::fit(train.iter().flat_map(|inst| {
                    (0..inst.n_act())
                        .filter(|&i| inst.labeled[i])
                        .map(|i| (inst.t_true[i], inst.c_true[i]))
                        .collect::<Vec<_>>()
                })));
            }
            fresh
        }
    };
    let mut opt = OptimizerState::default();
    let root = StreamRng::from_seed(seed).stream("train");

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stall = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let lr = lr_at(epoch, train_cfg);
        let epoch_rng = root.stream("epochs").substream(epoch as u64);

        // Shuffle instances, then labeled nodes within each instance.
        let mut inst_order: Vec<usize> = (0..train.len()).collect();
        epoch_rng.stream("instance-order").shuffle(&mut inst_order);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut batch_counter = 0u64;
        for &ii in &inst_order {
            let inst = &train[ii];
            let labeled: Vec<usize> = (0..inst.n_act()).filter(|&i| inst.labeled[i]).collect();
            if labeled.is_empty() {
                continue;
            }
            let mut nodes = labeled;
            epoch_rng
                .stream("node-order")
                .substream(ii as u64)
                .shuffle(&mut nodes);
            let chunk = if train_cfg.sampled {
                train_cfg.batch.max(1)
            } else {
                nodes.len()
            };
            for batch in nodes.chunks(chunk) {
                let loss_value = train_step(
                    &mut params,
                    &mut opt,
                    inst,
                    batch,
                    train_cfg,
                    lr,
                    &epoch_rng,
                    batch_counter,
                )?;
                epoch_loss += loss_value;
                batches += 1;
                batch_counter += 1;
            }
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        let val_loss = validation_nll(&params, val, &train_cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss(epoch));
        }
        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        });

        let improved = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
        if improved {
            best = Some((val_loss, epoch, params.clone()));
            stall = 0;
        } else {
            stall += 1;
            if stall >= train_cfg.patience {
                break;
            }
        }
    }

    let (best_val, best_epoch, best_params) = best.expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    history.best_val_loss = best_val;
    Ok((best_params, history))
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    inst: &PreparedInstance,
    batch: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    epoch_rng: &StreamRng,
    batch_counter: u64,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let mut dropout_rng = epoch_rng.stream("dropout").substream(batch_counter);
    let loss_cfg = &cfg.loss;
    let scale = params.target_scale.unwrap_or_else(TargetScale::identity);

    // Activity NLL on the batch (whitened target space).
    let batch_t: Vec<f64> = batch.iter().map(|&i| scale.whiten_t(inst.t_true[i])).collect();
    let batch_c: Vec<f64> = batch.iter().map(|&i| scale.whiten_c(inst.c_true[i])).collect();
    let batch_mask = vec![true; batch.len()];
    let act_term = if cfg.sampled && params.config.layers > 0 {
        let mut sample_rng = epoch_rng.stream("sample").substream(batch_counter);
        let sub = neighbor_sample(&inst.tensors, batch, &cfg.fanout, &mut sample_rng);
        let mut mode = Mode::Train {
            dropout_rng: &mut dropout_rng,
        };
        let out = forward_sampled(&mut tape, &bound, params, inst, &sub, &mut mode)?;
        nll_activity(&mut tape, &out, &batch_t, &batch_c, &batch_mask, loss_cfg)?
    } else if cfg.sampled {
        // Depth-0 model: the "sampled" batch is just the feature rows.
        let sub = neighbor_sample(
            &inst.tensors,
            batch,
            &[],
            &mut epoch_rng.stream("sample").substream(batch_counter),
        );
        let mut mode = Mode::Train {
            dropout_rng: &mut dropout_rng,
        };
        let out = forward_sampled(&mut tape, &bound, params, inst, &sub, &mut mode)?;
        nll_activity(&mut tape, &out, &batch_t, &batch_c, &batch_mask, loss_cfg)?
    } else {
        let mut mode = Mode::Train {
            dropout_rng: &mut dropout_rng,
        };
        let out = forward_full(&mut tape, &bound, params, inst, &mut mode)?;
        // Whole-instance batch: mask restricted to this batch's nodes.
        let mut mask = vec![false; inst.n_act()];
        for &i in batch {
            mask[i] = true;
        }
        let t: Vec<f64> = inst.t_true.iter().map(|&y| scale.whiten_t(y)).collect();
        let c: Vec<f64> = inst.c_true.iter().map(|&y| scale.whiten_c(y)).collect();
        nll_activity(&mut tape, &out, &t, &c, &mask, loss_cfg)?
    };
    let mut total = tape.scale(act_term, loss_cfg.lambda_act);

    // Project-level terms on the full graph of the touched instance, in
    // original target units (durations feed a real schedule).
    if loss_cfg.lambda_proj > 0.0 {
        let mut mode = Mode::Train {
            dropout_rng: &mut dropout_rng,
        };
        let full = forward_full(&mut tape, &bound, params, inst, &mut mode)?;
        let mu_c_orig = {
            let scaled = tape.scale(full.mu_c, scale.c_std);
            tape.add_scalar(scaled, scale.c_mean)
        };
        let mu_t_orig = {
            let scaled = tape.scale(full.mu_t, scale.t_std);
            tape.add_scalar(scaled, scale.t_mean)
        };
        let cost_sum = tape.sum(mu_c_orig);
        let c_hat = tape.add_scalar(cost_sum, inst.overhead);
        let c_target = tape.leaf(Matrix::scalar(inst.true_total_cost));
        let c_diff = tape.sub(c_hat, c_target).map_err(GnnError::from)?;
        let cost_term = tape.square(c_diff);
        let cp_term = soft_cp_loss(
            &mut tape,
            mu_t_orig,
            &inst.tensors,
            loss_cfg.tau,
            inst.true_makespan,
        )?;
        let cost_w = tape.scale(cost_term, loss_cfg.lambda_proj * loss_cfg.alpha_cost);
        let cp_w = tape.scale(cp_term, loss_cfg.lambda_proj * loss_cfg.alpha_cp);
        total = tape.add(total, cost_w).map_err(GnnError::from)?;
        total = tape.add(total, cp_w).map_err(GnnError::from)?;
    }
    if loss_cfg.lambda_reg > 0.0 {
        let mut reg: Option<TensorId> = None;
        for (name, &id) in &bound.ids {
            if !ModelParams::is_trainable(name)
                || name.ends_with(".b")
                || name.ends_with(".bias")
                || name.ends_with(".gain")
            {
                continue;
            }
            let sq = tape.square(id);
            let s = tape.sum(sq);
            reg = Some(match reg {
                Some(acc) => tape.add(acc, s).map_err(GnnError::from)?,
                None => s,
            });
        }
        if let Some(r) = reg {
            let r_w = tape.scale(r, loss_cfg.lambda_reg);
            total = tape.add(total, r_w).map_err(GnnError::from)?;
        }
    }

    let loss_value = tape.value(total).scalar_value();
    let mut grads = BTreeMap::new();
    collect_grads(&tape, &bound.ids, total, &mut grads)?;
    adam_step(params, &grads, opt, lr, cfg.weight_decay, cfg.clip_norm)?;
    Ok(loss_value)
}

/// Completion events of an instance in true earliest-finish order
/// (ties by activity index), with finish times as timestamps.
fn completion_events(inst: &PreparedInstance) -> Vec<crate::gnn::CompletionEvent> {
    let gt = &inst.tensors;
    let n = gt.n_act;
    let mut es = vec![0.0f64; n];
    for level in gt.depth_levels.iter().skip(1) {
        for &v in level {
            let mut best = 0.0f64;
            for &u in &gt.neighbors[crate::prep::REL_PREC_IN][v] {
                best = best.max(es[u] + inst.t_true[u]);
            }
            es[v] = best;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (es[a] + inst.t_true[a])
            .partial_cmp(&(es[b] + inst.t_true[b]))
            .expect("finite durations")
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .map(|a| crate::gnn::CompletionEvent {
            activity: a,
            timestamp: es[a] + inst.t_true[a],
        })
        .collect()
}

/// Replay an instance's completion events through the memory, accumulating
/// NLL on each event's affected activities. Gradients are truncated at
/// event boundaries (the incoming memory is a constant leaf per step).
fn temporal_replay_loss(
    params: &ModelParams,
    inst: &PreparedInstance,
    train_mode: bool,
    grads: Option<&mut BTreeMap<String, Matrix>>,
) -> Result<f64, TrainError> {
    let tc = params
        .config
        .temporal
        .expect("temporal config present for replay");
    let events = completion_events(inst);
    let mut memory = crate::gnn::MemoryState::zeros(inst.tensors.n_nodes(), tc.memory_dim);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut acc = grads;
    for event in &events {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params);
        let trace =
            crate::gnn::temporal_step_traced(&mut tape, &bound, params, inst, &memory, event)?;
        // Loss over affected, labeled activities.
        let labeled: Vec<bool> = trace
            .affected_activities
            .iter()
            .map(|&a| inst.labeled[a])
            .collect();
        if labeled.iter().any(|&b| b) {
            let scale = params.target_scale.unwrap_or_else(TargetScale::identity);
            let t: Vec<f64> = trace
                .affected_activities
                .iter()
                .map(|&a| scale.whiten_t(inst.t_true[a]))
                .collect();
            let c: Vec<f64> = trace
                .affected_activities
                .iter()
                .map(|&a| scale.whiten_c(inst.c_true[a]))
                .collect();
            let nll = nll_activity(&mut tape, &trace.output, &t, &c, &labeled, &LossConfig::default())?;
            total += tape.value(nll).scalar_value();
            count += 1;
            if train_mode {
                if let Some(acc) = acc.as_deref_mut() {
                    collect_grads(&tape, &bound.ids, nll, acc)?;
                }
            }
        }
        // Fold the new memory rows back in (value level).
        let rows = tape.value(trace.new_memory_rows).clone();
        for (r, &v) in trace.affected_nodes.iter().enumerate() {
            memory.memory.row_mut(v).copy_from_slice(rows.row(r));
            memory.last_update[v] = event.timestamp;
        }
        memory.last_event_time = event.timestamp;
    }
    Ok(total / count.max(1) as f64)
}

/// Train a GRU-memory temporal model by replaying completion events.
/// One optimizer step per instance per epoch, gradients summed over its
/// event stream; validation replays the validation instances.
pub fn train_temporal(
    train: &[PreparedInstance],
    val: &[PreparedInstance],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    warm_start: Option<ModelParams>,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    if model_cfg.temporal.is_none() {
        return Err(TrainError::Gnn(GnnError::InvalidConfig(
            "temporal training needs a temporal model config".into(),
        )));
    }
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut params = match warm_start {
        Some(p) => p,
        None => {
            let mut fresh = init_model(
                model_cfg,
                train[0].act_features.cols(),
                train[0].res_features.cols(),
                seed,
            )?;
            if train_cfg.standardize_targets {
                fresh.target_scale = Some(TargetScale::fit(train.iter().flat_map(|inst| {
                    (0..inst.n_act())
                        .filter(|&i| inst.labeled[i])
                        .map(|i| (inst.t_true[i], inst.c_true[i]))
                        .collect::<Vec<_>>()
                })));
            }
            fresh
        }
    };
    let mut opt = OptimizerState::default();
    let root = StreamRng::from_seed(seed).stream("train-temporal");
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stall = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let lr = lr_at(epoch, train_cfg);
        let mut inst_order: Vec<usize> = (0..train.len()).collect();
        root.stream("epochs")
            .substream(epoch as u64)
            .stream("instance-order")
            .shuffle(&mut inst_order);
        let mut epoch_loss = 0.0;
        for &ii in &inst_order {
            let mut grads = BTreeMap::new();
            let loss = temporal_replay_loss(&params, &train[ii], true, Some(&mut grads))?;
            epoch_loss += loss;
            adam_step(
                &mut params,
                &grads,
                &mut opt,
                lr,
                train_cfg.weight_decay,
                train_cfg.clip_norm,
            )?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let mut val_loss = 0.0;
        for inst in val {
            val_loss += temporal_replay_loss(&params, inst, false, None)?;
        }
        val_loss /= val.len() as f64;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss(epoch));
        }
        history.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        let improved = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
        if improved {
            best = Some((val_loss, epoch, params.clone()));
            stall = 0;
        } else {
            stall += 1;
            if stall >= train_cfg.patience {
                break;
            }
        }
    }
    let (best_val, best_epoch, best_params) = best.expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    history.best_val_loss = best_val;
    Ok((best_params, history))
}

/// Fixed-epoch warm training without validation tracking; returns the final
/// parameters. Experiment loops use this for cheap per-round refreshes.
pub fn fine_tune(
    mut params: ModelParams,
    train: &[PreparedInstance],
    epochs: usize,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let mut opt = OptimizerState::default();
    let root = StreamRng::from_seed(seed).stream("fine-tune");
    for epoch in 0..epochs {
        // Local cosine decay from the configured peak down to zero across
        // the fine-tune window; full-rate updates on a converged model can
        // undo earlier rounds.
        let lr = train_cfg.lr0 * 0.5
            * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos());
        let epoch_rng = root.stream("epochs").substream(epoch as u64);
        let mut inst_order: Vec<usize> = (0..train.len()).collect();
        epoch_rng.stream("instance-order").shuffle(&mut inst_order);
        let mut batch_counter = 0u64;
        for &ii in &inst_order {
            let inst = &train[ii];
            let labeled: Vec<usize> = (0..inst.n_act()).filter(|&i| inst.labeled[i]).collect();
            if labeled.is_empty() {
                continue;
            }
            let mut nodes = labeled;
            epoch_rng
                .stream("node-order")
                .substream(ii as u64)
                .shuffle(&mut nodes);
            let chunk = if train_cfg.sampled {
                train_cfg.batch.max(1)
            } else {
                nodes.len()
            };
            for batch in nodes.chunks(chunk) {
                train_step(
                    &mut params,
                    &mut opt,
                    inst,
                    batch,
                    train_cfg,
                    lr,
                    &epoch_rng,
                    batch_counter,
                )?;
                batch_counter += 1;
            }
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub accuracy: AccuracyMetrics,
    pub calibration: Option<CalibrationMetrics>,
}

/// Metrics bundle over a labeled instance set: pooled activity-level heads
/// plus project-level makespan and total cost across instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub duration: HeadMetrics,
    pub cost: HeadMetrics,
    pub makespan: AccuracyMetrics,
    pub total_cost: AccuracyMetrics,
    pub n_activities: usize,
    pub n_instances: usize,
}

/// Eval-mode predictions for one instance.
pub fn predict_instance(
    params: &ModelParams,
    inst: &PreparedInstance,
) -> Result<PredictionSet, TrainError> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let out = forward_full(&mut tape, &bound, params, inst, &mut Mode::Eval)?;
    Ok(extract_predictions(&tape, &out, params))
}

/// Evaluate on labeled instances: activity metrics pooled over labeled
/// activities, project metrics across instances (makespan from CPM over
/// nonnegative-clamped predicted durations; total cost as summed means plus
/// overhead).
pub fn evaluate(params: &ModelParams, instances: &[PreparedInstance]) -> Result<EvalReport, TrainError> {
    let preds = instances
        .iter()
        .map(|inst| predict_instance(params, inst))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_predictions(instances, &preds)
}

/// Metrics over externally produced predictions (one set per instance).
pub fn evaluate_predictions(
    instances: &[PreparedInstance],
    predictions: &[PredictionSet],
) -> Result<EvalReport, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut y_t = Vec::new();
    let mut p_t = Vec::new();
    let mut s_t = Vec::new();
    let mut y_c = Vec::new();
    let mut p_c = Vec::new();
    let mut s_c = Vec::new();
    let mut ms_true = Vec::new();
    let mut ms_pred = Vec::new();
    let mut tc_true = Vec::new();
    let mut tc_pred = Vec::new();
    for (inst, preds) in instances.iter().zip(predictions) {
        for i in 0..inst.n_act() {
            if !inst.labeled[i] {
                continue;
            }
            y_t.push(inst.t_true[i]);
            p_t.push(preds.mu_t[i]);
            s_t.push(preds.var_t(i).sqrt());
            y_c.push(inst.c_true[i]);
            p_c.push(preds.mu_c[i]);
            s_c.push(preds.var_c(i).sqrt());
        }
        let clamped: Vec<f64> = preds.mu_t.iter().map(|&m| m.max(0.0)).collect();
        ms_pred.push(crate::loss::hard_makespan(&clamped, &inst.tensors));
        ms_true.push(inst.true_makespan);
        tc_pred.push(preds.mu_c.iter().sum::<f64>() + inst.overhead);
        tc_true.push(inst.true_total_cost);
    }
    if y_t.is_empty() {
        return Err(TrainError::NoLabels);
    }
    let calibrate = |y_hat: &[f64], sigma: &[f64], y: &[f64]| {
        if y.len() >= 10 {
            calibration_metrics(y_hat, sigma, y, 10).ok()
        } else {
            None
        }
    };
    Ok(EvalReport {
        duration: HeadMetrics {
            accuracy: accuracy_metrics(&y_t, &p_t)?,
            calibration: calibrate(&p_t, &s_t, &y_t),
        },
        cost: HeadMetrics {
            accuracy: accuracy_metrics(&y_c, &p_c)?,
            calibration: calibrate(&p_c, &s_c, &y_c),
        },
        makespan: accuracy_metrics(&ms_true, &ms_pred)?,
        total_cost: accuracy_metrics(&tc_true, &tc_pred)?,
        n_activities: y_t.len(),
        n_instances: instances.len(),
    })
}
