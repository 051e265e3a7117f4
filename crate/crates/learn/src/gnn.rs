//! Relation-typed message-passing network with heteroscedastic heads.
//!
//! Activities and resources are projected into a shared hidden dimension by
//! type-specific input layers. Each layer transforms node states per
//! relation (W_r h + b_r), aggregates over in-neighbors (zero message for
//! empty neighborhoods), concatenates the node's own state with the four
//! relation messages in fixed order (precedence-in, precedence-out,
//! assignment, collaboration), and applies a shared combine layer. Two MLP
//! heads read activity embeddings into (mean, log-variance) pairs for
//! duration and cost; log-variance is smoothly bounded so the exponent
//! cannot overflow. K = 0 degrades to an MLP on raw activity features.
//! A GRU-memory temporal variant updates node memories on completion events.

use crate::prep::{GraphTensors, PreparedInstance, N_RELATIONS};
use crate::tensor::{Matrix, Reduce, Tape, TensorError, TensorId};
use pnf_core::rng::StreamRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension mismatch for {what}: expected {expected}, got {got}")]
    FeatureDimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown activity {0}")]
    UnknownActivity(String),
    #[error("event timestamps must be nondecreasing: last {last}, got {got}")]
    TimestampRegression { last: f64, got: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Max,
    /// Elementwise max over activation-transformed messages.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu,
    /// tanh approximation of GELU.
    GeluApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub memory_dim: usize,
    /// Sinusoidal time-encoding width (even).
    pub time_dim: usize,
    pub time_scale: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig {
            memory_dim: 64,
            time_dim: 16,
            time_scale: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Message-passing depth K; 0 means heads on raw features (MLP).
    pub layers: usize,
    pub hidden: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    pub dropout: f64,
    pub residual: bool,
    pub layer_norm: bool,
    /// Hidden widths of each prediction head MLP.
    pub head_hidden: Vec<usize>,
    #[serde(default)]
    pub temporal: Option<TemporalConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            hidden: 128,
            aggregator: Aggregator::Mean,
            activation: Activation::Relu,
            dropout: 0.2,
            residual: true,
            layer_norm: true,
            head_hidden: vec![128, 64],
            temporal: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers > 0 && self.hidden == 0 {
            return Err(GnnError::InvalidConfig("hidden dim must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GnnError::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.head_hidden.iter().any(|&h| h == 0) {
            return Err(GnnError::InvalidConfig("head widths must be > 0".into()));
        }
        if let Some(t) = &self.temporal {
            if t.memory_dim == 0 || t.time_dim == 0 || t.time_dim % 2 != 0 {
                return Err(GnnError::InvalidConfig(
                    "temporal dims must be positive with an even time encoding".into(),
                ));
            }
        }
        Ok(())
    }

    /// Input dimension seen by the prediction heads.
    fn head_input_dim(&self, act_in: usize) -> usize {
        if self.temporal.is_some() || self.layers > 0 {
            self.hidden
        } else {
            act_in
        }
    }
}

/// Affine map between original target units and the whitened space the
/// model is optimized in. Predictions are always reported unwhitened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub t_mean: f64,
    pub t_std: f64,
    pub c_mean: f64,
    pub c_std: f64,
}

impl TargetScale {
    pub fn identity() -> Self {
        TargetScale {
            t_mean: 0.0,
            t_std: 1.0,
            c_mean: 0.0,
            c_std: 1.0,
        }
    }

    /// Fit means/stds over the labeled targets of a training set.
    pub fn fit(targets: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut n = 0.0;
        let (mut st, mut st2, mut sc, mut sc2) = (0.0, 0.0, 0.0, 0.0);
        for (t, c) in targets {
            n += 1.0;
            st += t;
            st2 += t * t;
            sc += c;
            sc2 += c * c;
        }
        if n < 1.0 {
            return TargetScale::identity();
        }
        let t_mean = st / n;
        let c_mean = sc / n;
        let t_std = ((st2 / n - t_mean * t_mean).max(0.0)).sqrt().max(1e-9);
        let c_std = ((sc2 / n - c_mean * c_mean).max(0.0)).sqrt().max(1e-9);
        TargetScale {
            t_mean,
            t_std,
            c_mean,
            c_std,
        }
    }

    pub fn whiten_t(&self, y: f64) -> f64 {
        (y - self.t_mean) / self.t_std
    }

    pub fn whiten_c(&self, y: f64) -> f64 {
        (y - self.c_mean) / self.c_std
    }
}

/// All learnable tensors plus the fixed config and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub act_in_dim: usize,
    pub res_in_dim: usize,
    /// Target whitening applied during optimization; `None` means raw.
    #[serde(default)]
    pub target_scale: Option<TargetScale>,
    pub tensors: BTreeMap<String, Matrix>,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> &Matrix {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor {name}"))
    }

    /// Frequencies and other fixed buffers are excluded from optimization.
    pub fn is_trainable(name: &str) -> bool {
        !name.ends_with(".freq")
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| Self::is_trainable(n))
            .map(|(_, m)| m.data().len())
            .sum()
    }
}

fn xavier(rng: &mut StreamRng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect(),
    )
}

/// Deterministic initialization: every weight draws from its own labeled
/// stream, so adding or reordering tensors never shifts other draws.
pub fn init_model(
    config: &ModelConfig,
    act_in_dim: usize,
    res_in_dim: usize,
    seed: u64,
) -> Result<ModelParams, GnnError> {
    config.validate()?;
    if act_in_dim == 0 {
        return Err(GnnError::InvalidConfig("no activity features".into()));
    }
    let root = StreamRng::from_seed(seed).stream("model-init");
    let mut tensors = BTreeMap::new();
    let weight = |name: &str, rows: usize, cols: usize, tensors: &mut BTreeMap<String, Matrix>| {
        let mut rng = root.stream(name);
        tensors.insert(name.to_string(), xavier(&mut rng, rows, cols));
    };
    let zero = |name: &str, rows: usize, cols: usize, tensors: &mut BTreeMap<String, Matrix>| {
        tensors.insert(name.to_string(), Matrix::zeros(rows, cols));
    };

    let d = config.hidden;
    let needs_embed = config.layers > 0 || config.temporal.is_some();
    if needs_embed {
        weight("embed.act.w", act_in_dim, d, &mut tensors);
        zero("embed.act.b", 1, d, &mut tensors);
        if res_in_dim > 0 {
            weight("embed.res.w", res_in_dim, d, &mut tensors);
            zero("embed.res.b", 1, d, &mut tensors);
        }
    }
    for l in 0..config.layers {
        for r in 0..N_RELATIONS {
            weight(&format!("layer{l}.rel{r}.w"), d, d, &mut tensors);
            zero(&format!("layer{l}.rel{r}.b"), 1, d, &mut tensors);
        }
        weight(
            &format!("layer{l}.combine.w"),
            (1 + N_RELATIONS) * d,
            d,
            &mut tensors,
        );
        zero(&format!("layer{l}.combine.b"), 1, d, &mut tensors);
        if config.layer_norm {
            tensors.insert(
                format!("layer{l}.norm.gain"),
                Matrix::from_vec(1, d, vec![1.0; d]),
            );
            zero(&format!("layer{l}.norm.bias"), 1, d, &mut tensors);
        }
    }
    if let Some(t) = &config.temporal {
        let m = t.memory_dim;
        let msg = d + t.time_dim;
        for gate in ["r", "z", "n"] {
            weight(&format!("temporal.gru.w{gate}"), msg, m, &mut tensors);
            weight(&format!("temporal.gru.u{gate}"), m, m, &mut tensors);
            zero(&format!("temporal.gru.b{gate}"), 1, m, &mut tensors);
        }
        weight("temporal.readout.w", m + act_in_dim, d, &mut tensors);
        zero("temporal.readout.b", 1, d, &mut tensors);
        let half = t.time_dim / 2;
        let freqs: Vec<f64> = (0..half)
            .map(|k| 1.0 / t.time_scale.powf(2.0 * k as f64 / t.time_dim as f64))
            .collect();
        tensors.insert("temporal.freq".to_string(), Matrix::from_vec(1, half, freqs));
    }

    let head_in = config.head_input_dim(act_in_dim);
    for head in ["t", "c"] {
        let mut prev = head_in;
        for (i, &width) in config.head_hidden.iter().enumerate() {
            weight(&format!("head.{head}.h{i}.w"), prev, width, &mut tensors);
            zero(&format!("head.{head}.h{i}.b"), 1, width, &mut tensors);
            prev = width;
        }
        weight(&format!("head.{head}.out.w"), prev, 2, &mut tensors);
        zero(&format!("head.{head}.out.b"), 1, 2, &mut tensors);
    }

    Ok(ModelParams {
        config: config.clone(),
        seed,
        act_in_dim,
        res_in_dim,
        target_scale: None,
        tensors,
    })
}

/// Tape bindings of every parameter tensor, leaf order = name order.
pub struct BoundParams {
    pub ids: BTreeMap<String, TensorId>,
}

pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    let ids = params
        .tensors
        .iter()
        .map(|(name, m)| (name.clone(), tape.leaf(m.clone())))
        .collect();
    BoundParams { ids }
}

impl BoundParams {
    fn get(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("missing bound parameter {name}"))
    }
}

/// Forward execution mode. Training mode draws inverted-scaling dropout
/// masks from the given stream; eval mode is a pure function.
pub enum Mode<'a> {
    Eval,
    Train { dropout_rng: &'a mut StreamRng },
}

/// Tensor ids of the four heteroscedastic outputs, rows = seed activities.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub mu_t: TensorId,
    pub logvar_t: TensorId,
    pub mu_c: TensorId,
    pub logvar_c: TensorId,
    /// Embedding rows the heads consumed.
    pub head_input: TensorId,
    /// Leaf holding the activity feature matrix (saliency hooks onto it).
    pub features_leaf: TensorId,
}

/// Per-activity predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub mu_t: Vec<f64>,
    pub logvar_t: Vec<f64>,
    pub mu_c: Vec<f64>,
    pub logvar_c: Vec<f64>,
}

impl PredictionSet {
    pub fn var_t(&self, i: usize) -> f64 {
        self.logvar_t[i].exp()
    }

    pub fn var_c(&self, i: usize) -> f64 {
        self.logvar_c[i].exp()
    }

    pub fn len(&self) -> usize {
        self.mu_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_t.is_empty()
    }
}

/// Log-variance soft bound: logvar = B * tanh(raw / B). Keeps exp() finite
/// while staying smooth and near-identity on the useful range.
const LOGVAR_BOUND: f64 = 15.0;

fn activation(tape: &mut Tape, x: TensorId, kind: Activation) -> Result<TensorId, TensorError> {
    Ok(match kind {
        Activation::Relu => tape.relu(x),
        Activation::Elu => tape.elu(x, 1.0),
        Activation::GeluApprox => {
            // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
            let sq = tape.square(x);
            let x3 = tape.mul(sq, x)?;
            let x3s = tape.scale(x3, 0.044715);
            let inner = tape.add(x, x3s)?;
            let scaled = tape.scale(inner, 0.797_884_560_802_865_4);
            let t = tape.tanh(scaled);
            let one_plus = tape.add_scalar(t, 1.0);
            let half_x = tape.scale(x, 0.5);
            tape.mul(half_x, one_plus)?
        }
    })
}

fn layer_norm(
    tape: &mut Tape,
    z: TensorId,
    gain: TensorId,
    bias: TensorId,
) -> Result<TensorId, TensorError> {
    let (rows, cols) = tape.shape(z);
    let inv_d = tape.leaf(Matrix::from_vec(cols, 1, vec![1.0 / cols as f64; cols]));
    let ones_row = tape.leaf(Matrix::from_vec(1, cols, vec![1.0; cols]));
    let ones_col = tape.leaf(Matrix::from_vec(rows, 1, vec![1.0; rows]));
    let mean = tape.matmul(z, inv_d)?;
    let mean_b = tape.matmul(mean, ones_row)?;
    let centered = tape.sub(z, mean_b)?;
    let sq = tape.square(centered);
    let var = tape.matmul(sq, inv_d)?;
    let var_eps = tape.add_scalar(var, 1e-5);
    let log_var = tape.log(var_eps);
    let neg_half = tape.scale(log_var, -0.5);
    let inv_std = tape.exp(neg_half);
    let inv_std_b = tape.matmul(inv_std, ones_row)?;
    let normed = tape.mul(centered, inv_std_b)?;
    let gain_b = tape.matmul(ones_col, gain)?;
    let scaled = tape.mul(normed, gain_b)?;
    tape.broadcast_add_row(scaled, bias)
}

fn dropout_mask(tape: &mut Tape, rows: usize, cols: usize, rate: f64, rng: &mut StreamRng) -> TensorId {
    let keep = 1.0 - rate;
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    tape.leaf(Matrix::from_vec(rows, cols, data))
}

fn maybe_dropout(
    tape: &mut Tape,
    h: TensorId,
    rate: f64,
    mode: &mut Mode,
) -> Result<TensorId, TensorError> {
    if rate <= 0.0 {
        return Ok(h);
    }
    match mode {
        Mode::Eval => Ok(h),
        Mode::Train { dropout_rng } => {
            let (r, c) = tape.shape(h);
            let mask = dropout_mask(tape, r, c, rate, dropout_rng);
            tape.mul(h, mask)
        }
    }
}

/// Apply one prediction head; returns (mu, bounded logvar).
fn run_head(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    head: &str,
    input: TensorId,
) -> Result<(TensorId, TensorId), GnnError> {
    let mut x = input;
    for i in 0..config.head_hidden.len() {
        let w = bound.get(&format!("head.{head}.h{i}.w"));
        let b = bound.get(&format!("head.{head}.h{i}.b"));
        let z = tape.matmul(x, w)?;
        let z = tape.broadcast_add_row(z, b)?;
        x = activation(tape, z, config.activation)?;
    }
    let w = bound.get(&format!("head.{head}.out.w"));
    let b = bound.get(&format!("head.{head}.out.b"));
    let out = tape.matmul(x, w)?;
    let out = tape.broadcast_add_row(out, b)?;
    let mu = tape.slice_cols(out, 0, 1)?;
    let raw_lv = tape.slice_cols(out, 1, 1)?;
    let shrunk = tape.scale(raw_lv, 1.0 / LOGVAR_BOUND);
    let t = tape.tanh(shrunk);
    let logvar = tape.scale(t, LOGVAR_BOUND);
    Ok((mu, logvar))
}

fn heads(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    input: TensorId,
    features_leaf: TensorId,
) -> Result<ForwardOutput, GnnError> {
    let (mu_t, logvar_t) = run_head(tape, bound, config, "t", input)?;
    let (mu_c, logvar_c) = run_head(tape, bound, config, "c", input)?;
    Ok(ForwardOutput {
        mu_t,
        logvar_t,
        mu_c,
        logvar_c,
        head_input: input,
        features_leaf,
    })
}

fn check_dims(params: &ModelParams, prepared: &PreparedInstance) -> Result<(), GnnError> {
    if prepared.act_features.cols() != params.act_in_dim {
        return Err(GnnError::FeatureDimMismatch {
            what: "activity features",
            expected: params.act_in_dim,
            got: prepared.act_features.cols(),
        });
    }
    if prepared.tensors.n_res > 0 && prepared.res_features.cols() != params.res_in_dim {
        return Err(GnnError::FeatureDimMismatch {
            what: "resource features",
            expected: params.res_in_dim,
            got: prepared.res_features.cols(),
        });
    }
    Ok(())
}

/// Type-specific input projections stacked into one node matrix
/// (activities first, then resources).
fn embed_nodes(
    tape: &mut Tape,
    bound: &BoundParams,
    act_x: TensorId,
    res_x: Option<TensorId>,
    n_act: usize,
    n_res: usize,
) -> Result<TensorId, GnnError> {
    let w = bound.get("embed.act.w");
    let b = bound.get("embed.act.b");
    let ea = tape.matmul(act_x, w)?;
    let ea = tape.broadcast_add_row(ea, b)?;
    let n = n_act + n_res;
    if n_res == 0 {
        return Ok(ea);
    }
    let act_idx = Rc::new((0..n_act).collect::<Vec<usize>>());
    let stacked_a = tape.scatter_rows(ea, act_idx, n, Reduce::Sum)?;
    let w = bound.get("embed.res.w");
    let b = bound.get("embed.res.b");
    let er = tape.matmul(res_x.expect("resource features present"), w)?;
    let er = tape.broadcast_add_row(er, b)?;
    let res_idx = Rc::new((n_act..n).collect::<Vec<usize>>());
    let stacked_r = tape.scatter_rows(er, res_idx, n, Reduce::Sum)?;
    Ok(tape.add(stacked_a, stacked_r)?)
}

/// Relation message block: transform all rows, gather sources, reduce onto
/// destinations. Empty relations contribute a zero block.
#[allow(clippy::too_many_arguments)]
fn relation_message(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    layer: usize,
    rel: usize,
    h: TensorId,
    src: &[usize],
    dst: &[usize],
    out_rows: usize,
) -> Result<TensorId, GnnError> {
    let d = config.hidden;
    if src.is_empty() {
        return Ok(tape.leaf(Matrix::zeros(out_rows, d)));
    }
    let w = bound.get(&format!("layer{layer}.rel{rel}.w"));
    let b = bound.get(&format!("layer{layer}.rel{rel}.b"));
    let z = tape.matmul(h, w)?;
    let z = tape.broadcast_add_row(z, b)?;
    let gathered = tape.gather_rows(z, Rc::new(src.to_vec()))?;
    let (payload, reduce) = match config.aggregator {
        Aggregator::Mean => (gathered, Reduce::Mean),
        Aggregator::Max => (gathered, Reduce::Max),
        Aggregator::Pool => (activation(tape, gathered, config.activation)?, Reduce::Max),
    };
    Ok(tape.scatter_rows(payload, Rc::new(dst.to_vec()), out_rows, reduce)?)
}

#[allow(clippy::too_many_arguments)]
fn combine_layer(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &ModelConfig,
    layer: usize,
    h: TensorId,
    messages: [TensorId; N_RELATIONS],
    mode: &mut Mode,
) -> Result<TensorId, GnnError> {
    let cat = tape.concat_cols(&[h, messages[0], messages[1], messages[2], messages[3]])?;
    let w = bound.get(&format!("layer{layer}.combine.w"));
    let b = bound.get(&format!("layer{layer}.combine.b"));
    let z = tape.matmul(cat, w)?;
    let mut z = tape.broadcast_add_row(z, b)?;
    if config.layer_norm {
        let gain = bound.get(&format!("layer{layer}.norm.gain"));
        let bias = bound.get(&format!("layer{layer}.norm.bias"));
        z = layer_norm(tape, z, gain, bias)?;
    }
    let mut out = activation(tape, z, config.activation)?;
    if config.residual {
        out = tape.add(out, h)?;
    }
    Ok(maybe_dropout(tape, out, config.dropout, mode)?)
}

/// Full-graph forward pass. Returns output tensor ids over all activities
/// in index order.
pub fn forward_full(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &ModelParams,
    prepared: &PreparedInstance,
    mode: &mut Mode,
) -> Result<ForwardOutput, GnnError> {
    check_dims(params, prepared)?;
    let config = &params.config;
    let gt = &prepared.tensors;
    let act_x = tape.leaf(prepared.act_features.clone());

    if let Some(tc) = &config.temporal {
        // Temporal model before any event: readout over zero memory.
        let zeros = tape.leaf(Matrix::zeros(gt.n_act, tc.memory_dim));
        let cat = tape.concat_cols(&[zeros, act_x])?;
        let w = bound.get("temporal.readout.w");
        let b = bound.get("temporal.readout.b");
        let z = tape.matmul(cat, w)?;
        let z = tape.broadcast_add_row(z, b)?;
        let h = activation(tape, z, config.activation)?;
        let h = maybe_dropout(tape, h, config.dropout, mode)?;
        return heads(tape, bound, config, h, act_x);
    }
    if config.layers == 0 {
        let input = maybe_dropout(tape, act_x, config.dropout, mode)?;
        return heads(tape, bound, config, input, act_x);
    }

    let res_x = if gt.n_res > 0 {
        Some(tape.leaf(prepared.res_features.clone()))
    } else {
        None
    };
    let mut h = embed_nodes(tape, bound, act_x, res_x, gt.n_act, gt.n_res)?;
    let n = gt.n_nodes();
    for l in 0..config.layers {
        let mut messages = [h; N_RELATIONS];
        for rel in 0..N_RELATIONS {
            messages[rel] = relation_message(
                tape,
                bound,
                config,
                l,
                rel,
                h,
                &gt.edge_src[rel],
                &gt.edge_dst[rel],
                n,
            )?;
        }
        h = combine_layer(tape, bound, config, l, h, messages, mode)?;
    }
    let act_rows = tape.gather_rows(h, Rc::new((0..gt.n_act).collect()))?;
    heads(tape, bound, config, act_rows, act_x)
}

/// Layered computation tree from neighbor sampling. Layer 0 holds the seed
/// activities; deeper layers hold (possibly repeated) sampled neighbors.
#[derive(Debug, Clone)]
pub struct LayeredSubgraph {
    /// Global node index per row, per layer.
    pub layer_nodes: Vec<Vec<usize>>,
    /// For hop t: per relation, child row (in layer t+1) -> parent row (in t).
    pub child_src: Vec<Vec<Vec<usize>>>,
    pub child_dst: Vec<Vec<Vec<usize>>>,
}

impl LayeredSubgraph {
    pub fn seed_count(&self) -> usize {
        self.layer_nodes.first().map(|l| l.len()).unwrap_or(0)
    }

    pub fn total_rows(&self) -> usize {
        self.layer_nodes.iter().map(|l| l.len()).sum()
    }
}

/// Uniform without-replacement neighbor sampling. Layer t keeps at most
/// fanout[t] in-neighbors per relation per node; when the cap covers the
/// whole list the adjacency order is preserved, making the sampled forward
/// bit-identical to the full one.
pub fn neighbor_sample(
    tensors: &GraphTensors,
    seeds: &[usize],
    fanout: &[usize],
    rng: &mut StreamRng,
) -> LayeredSubgraph {
    let mut layer_nodes = vec![seeds.to_vec()];
    let mut child_src = Vec::new();
    let mut child_dst = Vec::new();
    for &cap in fanout {
        let parents = layer_nodes.last().unwrap().clone();
        let mut next = Vec::new();
        let mut srcs = vec![Vec::new(); N_RELATIONS];
        let mut dsts = vec![Vec::new(); N_RELATIONS];
        for (pos, &node) in parents.iter().enumerate() {
            for rel in 0..N_RELATIONS {
                let neigh = &tensors.neighbors[rel][node];
                if neigh.is_empty() {
                    continue;
                }
                for k in rng.sample_without_replacement(neigh.len(), cap) {
                    let row = next.len();
                    next.push(neigh[k]);
                    srcs[rel].push(row);
                    dsts[rel].push(pos);
                }
            }
        }
        layer_nodes.push(next);
        child_src.push(srcs);
        child_dst.push(dsts);
    }
    LayeredSubgraph {
        layer_nodes,
        child_src,
        child_dst,
    }
}

/// Forward over a sampled computation tree; outputs rows align with the
/// seed order of the subgraph.
pub fn forward_sampled(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &ModelParams,
    prepared: &PreparedInstance,
    sub: &LayeredSubgraph,
    mode: &mut Mode,
) -> Result<ForwardOutput, GnnError> {
    check_dims(params, prepared)?;
    let config = &params.config;
    let k = config.layers;
    if sub.layer_nodes.len() != k + 1 {
        return Err(GnnError::InvalidConfig(format!(
            "subgraph has {} layers for a depth-{k} model",
            sub.layer_nodes.len() - 1
        )));
    }
    let gt = &prepared.tensors;
    let act_x = tape.leaf(prepared.act_features.clone());

    if k == 0 {
        let rows = tape.gather_rows(act_x, Rc::new(sub.layer_nodes[0].clone()))?;
        let input = maybe_dropout(tape, rows, config.dropout, mode)?;
        return heads(tape, bound, config, input, act_x);
    }
    let res_x = if gt.n_res > 0 {
        Some(tape.leaf(prepared.res_features.clone()))
    } else {
        None
    };

    // Embed every tree layer's rows.
    let mut states: Vec<Vec<Option<TensorId>>> = vec![vec![None; k + 1]; k + 1];
    for (t, nodes) in sub.layer_nodes.iter().enumerate() {
        states[t][0] = Some(embed_tree_rows(
            tape, bound, act_x, res_x, nodes, gt.n_act,
        )?);
    }
    for l in 1..=k {
        for t in 0..=(k - l) {
            let h_self = states[t][l - 1].expect("filled in previous sweep");
            let h_children = states[t + 1][l - 1].expect("filled in previous sweep");
            let rows = sub.layer_nodes[t].len();
            let mut messages = [h_self; N_RELATIONS];
            for rel in 0..N_RELATIONS {
                messages[rel] = relation_message(
                    tape,
                    bound,
                    config,
                    l - 1,
                    rel,
                    h_children,
                    &sub.child_src[t][rel],
                    &sub.child_dst[t][rel],
                    rows,
                )?;
            }
            states[t][l] = Some(combine_layer(
                tape, bound, config, l - 1, h_self, messages, mode,
            )?);
        }
    }
    let top = states[0][k].expect("seed layer filled");
    heads(tape, bound, config, top, act_x)
}

/// Embed a multiset of tree rows (activities and resources interleaved).
fn embed_tree_rows(
    tape: &mut Tape,
    bound: &BoundParams,
    act_x: TensorId,
    res_x: Option<TensorId>,
    nodes: &[usize],
    n_act: usize,
) -> Result<TensorId, GnnError> {
    let rows = nodes.len();
    let d = tape.shape(bound.get("embed.act.w")).1;
    if rows == 0 {
        return Ok(tape.leaf(Matrix::zeros(0, d)));
    }
    let mut act_global = Vec::new();
    let mut act_pos = Vec::new();
    let mut res_global = Vec::new();
    let mut res_pos = Vec::new();
    for (pos, &node) in nodes.iter().enumerate() {
        if node < n_act {
            act_global.push(node);
            act_pos.push(pos);
        } else {
            res_global.push(node - n_act);
            res_pos.push(pos);
        }
    }
    let mut parts = Vec::new();
    if !act_global.is_empty() {
        let xa = tape.gather_rows(act_x, Rc::new(act_global))?;
        let w = bound.get("embed.act.w");
        let b = bound.get("embed.act.b");
        let ea = tape.matmul(xa, w)?;
        let ea = tape.broadcast_add_row(ea, b)?;
        parts.push(tape.scatter_rows(ea, Rc::new(act_pos), rows, Reduce::Sum)?);
    }
    if !res_global.is_empty() {
        let xr = tape.gather_rows(res_x.expect("resource rows need features"), Rc::new(res_global))?;
        let w = bound.get("embed.res.w");
        let b = bound.get("embed.res.b");
        let er = tape.matmul(xr, w)?;
        let er = tape.broadcast_add_row(er, b)?;
        parts.push(tape.scatter_rows(er, Rc::new(res_pos), rows, Reduce::Sum)?);
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

/// Eval-mode prediction over all activities of an instance.
pub fn predict(params: &ModelParams, prepared: &PreparedInstance) -> Result<PredictionSet, GnnError> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let out = forward_full(&mut tape, &bound, params, prepared, &mut Mode::Eval)?;
    Ok(extract_predictions(&tape, &out, params))
}

/// Read raw (whitened-space) outputs off the tape.
pub fn extract_raw_predictions(tape: &Tape, out: &ForwardOutput) -> PredictionSet {
    PredictionSet {
        mu_t: tape.value(out.mu_t).data().to_vec(),
        logvar_t: tape.value(out.logvar_t).data().to_vec(),
        mu_c: tape.value(out.mu_c).data().to_vec(),
        logvar_c: tape.value(out.logvar_c).data().to_vec(),
    }
}

/// Read outputs off the tape in original target units, inverting the
/// model's target whitening when present.
pub fn extract_predictions(tape: &Tape, out: &ForwardOutput, params: &ModelParams) -> PredictionSet {
    let mut preds = extract_raw_predictions(tape, out);
    if let Some(scale) = &params.target_scale {
        let lv_t = (scale.t_std * scale.t_std).ln();
        let lv_c = (scale.c_std * scale.c_std).ln();
        for v in preds.mu_t.iter_mut() {
            *v = *v * scale.t_std + scale.t_mean;
        }
        for v in preds.logvar_t.iter_mut() {
            *v += lv_t;
        }
        for v in preds.mu_c.iter_mut() {
            *v = *v * scale.c_std + scale.c_mean;
        }
        for v in preds.logvar_c.iter_mut() {
            *v += lv_c;
        }
    }
    preds
}

/// Gradient-based saliency: mean |d mu_target / d x| per input feature over
/// the K-hop receptive field (activity rows only).
pub fn saliency(
    params: &ModelParams,
    prepared: &PreparedInstance,
    activity: &str,
    target_duration: bool,
) -> Result<Vec<f64>, GnnError> {
    let idx = prepared
        .activity_ids
        .iter()
        .position(|id| id == activity)
        .ok_or_else(|| GnnError::UnknownActivity(activity.to_string()))?;
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let out = forward_full(&mut tape, &bound, params, prepared, &mut Mode::Eval)?;
    let target = if target_duration { out.mu_t } else { out.mu_c };
    let scalar = tape.gather_rows(target, Rc::new(vec![idx]))?;
    let scalar = tape.sum(scalar);
    let grads = tape.backward(scalar)?;
    let feat_shape = prepared.act_features.shape();
    let mut grad = grads.get_or_zeros(out.features_leaf, feat_shape.0, feat_shape.1);
    if let Some(scale) = &params.target_scale {
        let factor = if target_duration { scale.t_std } else { scale.c_std };
        grad.scale_assign(factor);
    }

    // Receptive field: nodes whose messages can reach `idx` within K hops.
    let mut frontier = vec![idx];
    let mut seen: std::collections::BTreeSet<usize> = frontier.iter().copied().collect();
    for _ in 0..params.config.layers {
        let mut next = Vec::new();
        for &v in &frontier {
            for rel in 0..N_RELATIONS {
                for &u in &prepared.tensors.neighbors[rel][v] {
                    if seen.insert(u) {
                        next.push(u);
                    }
                }
            }
        }
        frontier = next;
    }
    let field: Vec<usize> = seen
        .into_iter()
        .filter(|&v| v < prepared.tensors.n_act)
        .collect();
    let cols = feat_shape.1;
    let mut out_vec = vec![0.0; cols];
    for c in 0..cols {
        let mut acc = 0.0;
        for &v in &field {
            acc += grad.get(v, c).abs();
        }
        out_vec[c] = acc / field.len().max(1) as f64;
    }
    Ok(out_vec)
}

/// Memory of the temporal variant: one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub memory: Matrix,
    pub last_update: Vec<f64>,
    pub last_event_time: f64,
}

impl MemoryState {
    pub fn zeros(n_nodes: usize, memory_dim: usize) -> Self {
        MemoryState {
            memory: Matrix::zeros(n_nodes, memory_dim),
            last_update: vec![0.0; n_nodes],
            last_event_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionEvent {
    pub activity: usize,
    pub timestamp: f64,
}

/// Tape-level temporal step: updates memories of the event activity and its
/// neighbors via mean messages [embed(x_u) || time_encoding] through a GRU,
/// and predicts the affected activities from sigma(W [s || x]). Returns the
/// new memory rows tensor, the affected node list, and the affected
/// activities (row-aligned with the prediction outputs).
pub struct TemporalStepTrace {
    pub new_memory_rows: TensorId,
    pub affected_nodes: Vec<usize>,
    pub affected_activities: Vec<usize>,
    pub output: ForwardOutput,
}

pub fn temporal_step_traced(
    tape: &mut Tape,
    bound: &BoundParams,
    params: &ModelParams,
    prepared: &PreparedInstance,
    memory: &MemoryState,
    event: &CompletionEvent,
) -> Result<TemporalStepTrace, GnnError> {
    let tc = params
        .config
        .temporal
        .as_ref()
        .ok_or_else(|| GnnError::InvalidConfig("model has no temporal config".into()))?;
    if event.timestamp < memory.last_event_time {
        return Err(GnnError::TimestampRegression {
            last: memory.last_event_time,
            got: event.timestamp,
        });
    }
    check_dims(params, prepared)?;
    let gt = &prepared.tensors;
    if event.activity >= gt.n_act {
        return Err(GnnError::UnknownActivity(format!(
            "activity index {}",
            event.activity
        )));
    }

    // Affected set: the event activity plus all of its neighbors.
    let mut affected: Vec<usize> = vec![event.activity];
    for rel in 0..N_RELATIONS {
        affected.extend(gt.neighbors[rel][event.activity].iter().copied());
    }
    affected.sort_unstable();
    affected.dedup();
    let affected_activities: Vec<usize> =
        affected.iter().copied().filter(|&v| v < gt.n_act).collect();

    let act_x = tape.leaf(prepared.act_features.clone());
    let res_x = if gt.n_res > 0 {
        Some(tape.leaf(prepared.res_features.clone()))
    } else {
        None
    };

    // Mean neighbor embedding per affected node.
    let mut msg_nodes = Vec::new();
    let mut msg_dst = Vec::new();
    for (pos, &v) in affected.iter().enumerate() {
        for rel in 0..N_RELATIONS {
            for &u in &gt.neighbors[rel][v] {
                msg_nodes.push(u);
                msg_dst.push(pos);
            }
        }
    }
    let d = params.config.hidden;
    let mean_h = if msg_nodes.is_empty() {
        tape.leaf(Matrix::zeros(affected.len(), d))
    } else {
        let h_src = embed_tree_rows(tape, bound, act_x, res_x, &msg_nodes, gt.n_act)?;
        tape.scatter_rows(h_src, Rc::new(msg_dst), affected.len(), Reduce::Mean)?
    };

    // Sinusoidal time encoding of Delta t since each node's last update.
    let freq = params.get("temporal.freq");
    let mut enc = Matrix::zeros(affected.len(), tc.time_dim);
    for (row, &v) in affected.iter().enumerate() {
        let dt = event.timestamp - memory.last_update[v];
        for (k, &w) in freq.data().iter().enumerate() {
            enc.set(row, 2 * k, (w * dt).sin());
            enc.set(row, 2 * k + 1, (w * dt).cos());
        }
    }
    let enc = tape.leaf(enc);
    let msg = tape.concat_cols(&[mean_h, enc])?;

    // GRU update on the affected memory rows (previous memory is a
    // constant leaf: training truncates backpropagation at event steps).
    let s_prev_mat = {
        let mut rows = Vec::with_capacity(affected.len());
        for &v in &affected {
            rows.push(memory.memory.row(v).to_vec());
        }
        Matrix::from_rows(rows)
    };
    let s_prev = tape.leaf(s_prev_mat);
    let gate = |tape: &mut Tape, which: &str, msg: TensorId, s: TensorId| -> Result<TensorId, GnnError> {
        let w = bound.get(&format!("temporal.gru.w{which}"));
        let u = bound.get(&format!("temporal.gru.u{which}"));
        let b = bound.get(&format!("temporal.gru.b{which}"));
        let zm = tape.matmul(msg, w)?;
        let zs = tape.matmul(s, u)?;
        let z = tape.add(zm, zs)?;
        Ok(tape.broadcast_add_row(z, b)?)
    };
    let r_pre = gate(tape, "r", msg, s_prev)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, "z", msg, s_prev)?;
    let z = tape.sigmoid(z_pre);
    let rs = tape.mul(r, s_prev)?;
    let n_pre = gate(tape, "n", msg, rs)?;
    let n_hat = tape.tanh(n_pre);
    let zs = tape.mul(z, s_prev)?;
    let s_minus = tape.sub(s_prev, zs)?;
    let zn = tape.mul(z, n_hat)?;
    let s_new = tape.add(s_minus, zn)?;

    // Readout for affected activities: act(W [s || x] + b) -> shared heads.
    let act_positions: Vec<usize> = affected
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v < gt.n_act)
        .map(|(pos, _)| pos)
        .collect();
    let s_act = tape.gather_rows(s_new, Rc::new(act_positions))?;
    let x_act = tape.gather_rows(act_x, Rc::new(affected_activities.clone()))?;
    let cat = tape.concat_cols(&[s_act, x_act])?;
    let w = bound.get("temporal.readout.w");
    let b = bound.get("temporal.readout.b");
    let zc = tape.matmul(cat, w)?;
    let zc = tape.broadcast_add_row(zc, b)?;
    let h = activation(tape, zc, params.config.activation)?;
    let output = heads(tape, bound, &params.config, h, act_x)?;

    Ok(TemporalStepTrace {
        new_memory_rows: s_new,
        affected_nodes: affected,
        affected_activities,
        output,
    })
}

/// Value-level temporal step: returns the updated memory plus predictions
/// for the affected activities.
pub fn temporal_step(
    params: &ModelParams,
    prepared: &PreparedInstance,
    memory: &MemoryState,
    event: &CompletionEvent,
) -> Result<(MemoryState, PredictionSet, Vec<usize>), GnnError> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params);
    let trace = temporal_step_traced(&mut tape, &bound, params, prepared, memory, event)?;
    let mut next = memory.clone();
    let rows = tape.value(trace.new_memory_rows);
    for (r, &v) in trace.affected_nodes.iter().enumerate() {
        next.memory.row_mut(v).copy_from_slice(rows.row(r));
        next.last_update[v] = event.timestamp;
    }
    next.last_event_time = event.timestamp;
    let preds = extract_predictions(&tape, &trace.output, params);
    Ok((next, preds, trace.affected_activities))
}

/// Serialize params to canonical JSON (shape-tagged flat arrays).
pub fn save_checkpoint(params: &ModelParams) -> serde_json::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(params)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_checkpoint(bytes: &[u8]) -> serde_json::Result<ModelParams> {
    serde_json::from_slice(bytes)
}
