//! Network-level invariants: deterministic initialization with a checkable
//! parameter count, zero-weight traces, permutation invariance of the mean
//! aggregator, eval purity, full-vs-sampled consistency, end-to-end gradient
//! integrity, saliency oracles, and temporal-memory behavior.

use pnf_core::graph::{Edge, ProjectGraph, Relation};
use pnf_core::instance::ProjectInstance;
use pnf_core::rng::StreamRng;
use pnf_core::synthgen::{generate_project, GenConfig};
use pnf_learn::gnn::{
    bind_params, extract_predictions, forward_full, forward_sampled, init_model, load_checkpoint,
    neighbor_sample, predict, saliency, save_checkpoint, temporal_step, Activation, Aggregator,
    CompletionEvent, GnnError, MemoryState, Mode, ModelConfig, TemporalConfig,
};
use pnf_learn::loss::{nll_activity, LossConfig};
use pnf_learn::prep::{fit_pipeline, FeaturePipeline, PreparedInstance};
use pnf_learn::tensor::{Matrix, Tape};

fn small_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 8,
        aggregator: Aggregator::Mean,
        activation: Activation::Elu,
        dropout: 0.0,
        residual: false,
        layer_norm: false,
        head_hidden: vec![8],
        temporal: None,
    }
}

fn prepared_fixture(seed: u64) -> (FeaturePipeline, PreparedInstance, ProjectInstance) {
    let inst = generate_project(&GenConfig::new(12, 0.2, seed)).unwrap();
    let pipeline = fit_pipeline(&[&inst], false).unwrap();
    let prepared = pipeline.prepare(&inst).unwrap();
    (pipeline, prepared, inst)
}

#[test]
fn init_is_deterministic_and_biases_zero() {
    let cfg = small_config();
    let a = init_model(&cfg, 13, 4, 42).unwrap();
    let b = init_model(&cfg, 13, 4, 42).unwrap();
    for (name, m) in &a.tensors {
        assert_eq!(m.data(), b.tensors[name].data(), "{name}");
        if name.ends_with(".b") || name.ends_with(".bias") {
            assert!(m.data().iter().all(|&v| v == 0.0), "{name} must start at zero");
        }
    }
    let c = init_model(&cfg, 13, 4, 43).unwrap();
    assert_ne!(a.get("embed.act.w").data(), c.get("embed.act.w").data());
}

#[test]
fn parameter_count_matches_shape_formula() {
    // K = 3, d = 128, 4 relations + combine per layer, input 15/6, heads [128, 64].
    let cfg = ModelConfig {
        layers: 3,
        hidden: 128,
        head_hidden: vec![128, 64],
        layer_norm: false,
        ..small_config()
    };
    let params = init_model(&cfg, 15, 6, 1).unwrap();
    let d = 128usize;
    let embed = 15 * d + d + 6 * d + d;
    let per_layer = 4 * (d * d + d) + (5 * d) * d + d;
    let head = |input: usize| input * 128 + 128 + 128 * 64 + 64 + 64 * 2 + 2;
    let expected = embed + 3 * per_layer + 2 * head(d);
    assert_eq!(params.parameter_count(), expected);
}

#[test]
fn zero_weights_predict_head_biases() {
    let cfg = small_config();
    let (_, prepared, _) = prepared_fixture(3);
    let mut params = init_model(&cfg, prepared.act_features.cols(), prepared.res_features.cols(), 7).unwrap();
    for (name, tensor) in params.tensors.iter_mut() {
        for v in tensor.data_mut() {
            *v = 0.0;
        }
        if name == "head.t.out.b" {
            tensor.data_mut()[0] = 2.5; // mu bias
            tensor.data_mut()[1] = -0.7; // log-variance bias
        }
    }
    let preds = predict(&params, &prepared).unwrap();
    for i in 0..prepared.n_act() {
        assert!((preds.mu_t[i] - 2.5).abs() < 1e-12);
        // Bounded identity map keeps small biases nearly exact.
        assert!((preds.logvar_t[i] - 15.0 * (-0.7f64 / 15.0).tanh()).abs() < 1e-12);
        assert_eq!(preds.mu_c[i], 0.0);
    }
}

#[test]
fn eval_forward_is_pure() {
    let (_, prepared, _) = prepared_fixture(5);
    let params = init_model(&small_config(), prepared.act_features.cols(), prepared.res_features.cols(), 11).unwrap();
    let a = predict(&params, &prepared).unwrap();
    let b = predict(&params, &prepared).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.mu_t), bits(&b.mu_t));
    assert_eq!(bits(&a.logvar_c), bits(&b.logvar_c));
}

/// Relabeling node ids permutes predictions without changing values.
#[test]
fn mean_aggregator_is_permutation_invariant() {
    let inst = generate_project(&GenConfig::new(10, 0.25, 17)).unwrap();
    let pipeline = fit_pipeline(&[&inst], false).unwrap();
    let prepared = pipeline.prepare(&inst).unwrap();
    let params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        23,
    )
    .unwrap();
    let base = predict(&params, &prepared).unwrap();

    // Rename activities in reverse alphabetical order; graph structure,
    // features and targets move with them.
    let ids = inst.graph.activity_ids();
    let renamed: Vec<String> = (0..ids.len())
        .map(|i| format!("z{:02}", ids.len() - 1 - i))
        .collect();
    let rename = |id: &str| -> String {
        let pos = ids.iter().position(|x| x == id).unwrap();
        renamed[pos].clone()
    };
    let edges: Vec<Edge> = inst
        .graph
        .edges()
        .iter()
        .map(|e| {
            let src = if inst.graph.activity_index(&e.src).is_some() {
                rename(&e.src)
            } else {
                e.src.clone()
            };
            let dst = if inst.graph.activity_index(&e.dst).is_some() {
                rename(&e.dst)
            } else {
                e.dst.clone()
            };
            Edge {
                src,
                dst,
                relation: e.relation,
                features: e.features.clone(),
            }
        })
        .collect();
    let graph2 = ProjectGraph::new(
        renamed.clone(),
        inst.graph.resource_ids().to_vec(),
        edges,
    )
    .unwrap();
    let mut inst2 = inst.clone();
    inst2.graph = graph2;
    let prepared2 = pipeline.prepare(&inst2).unwrap();
    let permuted = predict(&params, &prepared2).unwrap();
    // Same node index carries the same data in both graphs, so predictions
    // must agree entrywise bitwise.
    for i in 0..prepared.n_act() {
        assert_eq!(base.mu_t[i].to_bits(), permuted.mu_t[i].to_bits(), "row {i}");
        assert_eq!(base.mu_c[i].to_bits(), permuted.mu_c[i].to_bits(), "row {i}");
    }
}

#[test]
fn sampled_forward_matches_full_when_fanout_covers_degrees() {
    let (_, prepared, _) = prepared_fixture(29);
    let params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        31,
    )
    .unwrap();
    let max_deg = prepared.tensors.max_degree();
    let fanout = vec![max_deg, max_deg];
    let seeds: Vec<usize> = (0..prepared.n_act()).collect();
    let mut rng = StreamRng::from_seed(1).stream("sample");
    let sub = neighbor_sample(&prepared.tensors, &seeds, &fanout, &mut rng);

    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, &params);
    let sampled = forward_sampled(&mut tape, &bound, &params, &prepared, &sub, &mut Mode::Eval).unwrap();
    let sampled_preds = extract_predictions(&tape, &sampled, &params);
    let full_preds = predict(&params, &prepared).unwrap();
    for i in 0..prepared.n_act() {
        assert_eq!(full_preds.mu_t[i].to_bits(), sampled_preds.mu_t[i].to_bits());
        assert_eq!(full_preds.logvar_c[i].to_bits(), sampled_preds.logvar_c[i].to_bits());
    }
}

/// Gradients of the full pipeline (forward + NLL) agree between the sampled
/// tree (fanout >= max degree) and the full-graph computation.
#[test]
fn sampled_gradients_match_full_graph() {
    let (_, prepared, _) = prepared_fixture(37);
    let params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        41,
    )
    .unwrap();
    let loss_cfg = LossConfig::default();
    let mask = vec![true; prepared.n_act()];

    let grads_full = {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &params);
        let out = forward_full(&mut tape, &bound, &params, &prepared, &mut Mode::Eval).unwrap();
        let loss = nll_activity(&mut tape, &out, &prepared.t_true, &prepared.c_true, &mask, &loss_cfg).unwrap();
        let grads = tape.backward(loss).unwrap();
        bound
            .ids
            .iter()
            .map(|(name, &id)| {
                let (r, c) = tape.shape(id);
                (name.clone(), grads.get_or_zeros(id, r, c))
            })
            .collect::<std::collections::BTreeMap<_, _>>()
    };
    let grads_sampled = {
        let max_deg = prepared.tensors.max_degree();
        let seeds: Vec<usize> = (0..prepared.n_act()).collect();
        let mut rng = StreamRng::from_seed(2).stream("sample");
        let sub = neighbor_sample(&prepared.tensors, &seeds, &[max_deg, max_deg], &mut rng);
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &params);
        let out = forward_sampled(&mut tape, &bound, &params, &prepared, &sub, &mut Mode::Eval).unwrap();
        let loss = nll_activity(&mut tape, &out, &prepared.t_true, &prepared.c_true, &mask, &loss_cfg).unwrap();
        let grads = tape.backward(loss).unwrap();
        bound
            .ids
            .iter()
            .map(|(name, &id)| {
                let (r, c) = tape.shape(id);
                (name.clone(), grads.get_or_zeros(id, r, c))
            })
            .collect::<std::collections::BTreeMap<_, _>>()
    };
    for (name, gf) in &grads_full {
        let gs = &grads_sampled[name];
        for (a, b) in gf.data().iter().zip(gs.data()) {
            let rel = (a - b).abs() / (a.abs() + b.abs() + 1e-12);
            assert!(rel < 1e-9, "{name}: {a} vs {b}");
        }
    }
}

/// End-to-end gradient integrity with smooth activations: forward + NLL
/// against central differences over every parameter.
#[test]
fn full_pipeline_gradient_check() {
    let inst = generate_project(&GenConfig::new(6, 0.3, 43)).unwrap();
    let pipeline = fit_pipeline(&[&inst], false).unwrap();
    let mut prepared = pipeline.prepare(&inst).unwrap();
    // Standardize targets so the loss is O(1); otherwise central differences
    // on a large loss value drown small per-parameter gradients in rounding
    // noise regardless of the analytic gradient's correctness.
    let standardize = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64)
            .sqrt()
            .max(1e-9);
        for x in v.iter_mut() {
            *x = (*x - mean) / std;
        }
    };
    standardize(&mut prepared.t_true);
    standardize(&mut prepared.c_true);
    // GELU is smooth everywhere; ELU's second derivative jumps at zero,
    // which costs central differences an order of accuracy near kinks.
    let cfg = ModelConfig {
        layers: 1,
        hidden: 4,
        head_hidden: vec![4],
        activation: Activation::GeluApprox,
        ..small_config()
    };
    let params = init_model(&cfg, prepared.act_features.cols(), prepared.res_features.cols(), 47).unwrap();
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let tensors: Vec<Matrix> = names.iter().map(|n| params.get(n).clone()).collect();
    let loss_cfg = LossConfig::default();
    let mask = vec![true; prepared.n_act()];
    let err = pnf_learn::tensor::gradient_check(
        |tape, leaves| {
            // Forward reads parameter values through the bound name -> leaf
            // map, so pointing it at the probe leaves evaluates the network
            // at the perturbed parameters.
            let bound = pnf_learn::gnn::BoundParams {
                ids: names.iter().cloned().zip(leaves.iter().copied()).collect(),
            };
            let out = forward_full(tape, &bound, &params, &prepared, &mut Mode::Eval)
                .map_err(|_| pnf_learn::tensor::TensorError::UnknownTensor(0))?;
            nll_activity(tape, &out, &prepared.t_true, &prepared.c_true, &mask, &loss_cfg)
                .map_err(|_| pnf_learn::tensor::TensorError::UnknownTensor(0))
        },
        &tensors,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn saliency_oracles() {
    // Zero weights: zero saliency everywhere.
    let (_, prepared, _) = prepared_fixture(53);
    let mut params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        59,
    )
    .unwrap();
    for tensor in params.tensors.values_mut() {
        for v in tensor.data_mut() {
            *v = 0.0;
        }
    }
    let s = saliency(&params, &prepared, &prepared.activity_ids[0], true).unwrap();
    assert!(s.iter().all(|&v| v == 0.0));

    // A model computing mu_t = 3 * x_1 exactly: depth 0, identity-ish head.
    let n_features = prepared.act_features.cols();
    let cfg = ModelConfig {
        layers: 0,
        hidden: 0,
        head_hidden: vec![],
        dropout: 0.0,
        ..small_config()
    };
    let mut linear = init_model(&cfg, n_features, prepared.res_features.cols(), 61).unwrap();
    for (name, tensor) in linear.tensors.iter_mut() {
        for v in tensor.data_mut() {
            *v = 0.0;
        }
        if name == "head.t.out.w" {
            tensor.set(1, 0, 3.0); // mu_t = 3 * feature 1
        }
    }
    let s = saliency(&linear, &prepared, &prepared.activity_ids[2], true).unwrap();
    assert!((s[1] - 3.0).abs() < 1e-12);
    for (j, &v) in s.iter().enumerate() {
        if j != 1 {
            assert!(v.abs() < 1e-12, "feature {j}");
        }
    }
}

#[test]
fn saliency_matches_finite_differences() {
    let (pipeline, prepared, inst) = prepared_fixture(67);
    let params = init_model(
        &ModelConfig {
            activation: Activation::Elu,
            ..small_config()
        },
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        71,
    )
    .unwrap();
    let target = prepared.activity_ids[4].clone();
    let s = saliency(&params, &prepared, &target, true).unwrap();

    // Finite differences through the raw feature matrix: perturb one entry
    // of one in-field activity and average |delta mu / eps| like the
    // analytic path does.
    let eps = 1e-6;
    let feature_col = 0usize;
    let mut acc = 0.0;
    let mut field = Vec::new();
    {
        // Receptive field from the adjacency (activities only).
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(4usize);
        let mut frontier = vec![4usize];
        for _ in 0..params.config.layers {
            let mut next = Vec::new();
            for &v in &frontier {
                for rel in 0..4 {
                    for &u in &prepared.tensors.neighbors[rel][v] {
                        if seen.insert(u) {
                            next.push(u);
                        }
                    }
                }
            }
            frontier = next;
        }
        field.extend(seen.into_iter().filter(|&v| v < prepared.n_act()));
    }
    for &v in &field {
        let mut plus = prepared.clone();
        plus.act_features.set(v, feature_col, plus.act_features.get(v, feature_col) + eps);
        let mut minus = prepared.clone();
        minus
            .act_features
            .set(v, feature_col, minus.act_features.get(v, feature_col) - eps);
        let up = predict(&params, &plus).unwrap().mu_t[4];
        let down = predict(&params, &minus).unwrap().mu_t[4];
        acc += ((up - down) / (2.0 * eps)).abs();
    }
    let fd = acc / field.len() as f64;
    assert!(
        (s[feature_col] - fd).abs() < 1e-4,
        "saliency {} vs finite difference {fd}",
        s[feature_col]
    );
    let _ = (pipeline, inst);
}

#[test]
fn unknown_activity_is_an_error() {
    let (_, prepared, _) = prepared_fixture(73);
    let params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        79,
    )
    .unwrap();
    assert!(matches!(
        saliency(&params, &prepared, "ghost", true),
        Err(GnnError::UnknownActivity(_))
    ));
}

fn temporal_params(prepared: &PreparedInstance, seed: u64) -> pnf_learn::ModelParams {
    let cfg = ModelConfig {
        layers: 0,
        hidden: 8,
        temporal: Some(TemporalConfig {
            memory_dim: 6,
            time_dim: 4,
            time_scale: 1000.0,
        }),
        head_hidden: vec![8],
        dropout: 0.0,
        layer_norm: false,
        residual: false,
        aggregator: Aggregator::Mean,
        activation: Activation::Elu,
    };
    init_model(&cfg, prepared.act_features.cols(), prepared.res_features.cols(), seed).unwrap()
}

#[test]
fn zero_gru_keeps_zero_memory_fixed() {
    let (_, prepared, _) = prepared_fixture(83);
    let mut params = temporal_params(&prepared, 89);
    for (name, tensor) in params.tensors.iter_mut() {
        if name.starts_with("temporal.gru") {
            for v in tensor.data_mut() {
                *v = 0.0;
            }
        }
    }
    let memory = MemoryState::zeros(prepared.tensors.n_nodes(), 6);
    let (next, _, _) = temporal_step(
        &params,
        &prepared,
        &memory,
        &CompletionEvent {
            activity: 0,
            timestamp: 1.0,
        },
    )
    .unwrap();
    assert!(next.memory.data().iter().all(|&v| v == 0.0));
}

#[test]
fn time_encoding_at_zero_is_alternating() {
    let (_, prepared, _) = prepared_fixture(97);
    let params = temporal_params(&prepared, 101);
    // Delta t = 0 for a fresh memory at timestamp 0: encoding rows are
    // [sin 0, cos 0, ...] = [0, 1, 0, 1]. Verify through a zero-weight GRU
    // readout is opaque, so check the helper directly via freq buffer.
    let freq = params.get("temporal.freq");
    for &w in freq.data() {
        assert!(((w * 0.0f64).sin()).abs() < 1e-15);
        assert!(((w * 0.0f64).cos() - 1.0).abs() < 1e-15);
    }
}

#[test]
fn replaying_events_is_deterministic() {
    let (_, prepared, _) = prepared_fixture(103);
    let params = temporal_params(&prepared, 107);
    let events: Vec<CompletionEvent> = (0..5)
        .map(|i| CompletionEvent {
            activity: i,
            timestamp: i as f64 + 1.0,
        })
        .collect();
    let run = || {
        let mut memory = MemoryState::zeros(prepared.tensors.n_nodes(), 6);
        for e in &events {
            let (next, _, _) = temporal_step(&params, &prepared, &memory, e).unwrap();
            memory = next;
        }
        memory
    };
    let a = run();
    let b = run();
    let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.memory), bits(&b.memory));
    assert!(a.memory.data().iter().any(|&v| v != 0.0));
}

#[test]
fn timestamps_must_not_regress() {
    let (_, prepared, _) = prepared_fixture(109);
    let params = temporal_params(&prepared, 113);
    let memory = {
        let m0 = MemoryState::zeros(prepared.tensors.n_nodes(), 6);
        let (m1, _, _) = temporal_step(
            &params,
            &prepared,
            &m0,
            &CompletionEvent {
                activity: 0,
                timestamp: 5.0,
            },
        )
        .unwrap();
        m1
    };
    assert!(matches!(
        temporal_step(
            &params,
            &prepared,
            &memory,
            &CompletionEvent {
                activity: 1,
                timestamp: 4.0
            }
        ),
        Err(GnnError::TimestampRegression { .. })
    ));
}

#[test]
fn checkpoints_roundtrip_bitwise() {
    let (_, prepared, _) = prepared_fixture(127);
    let params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        131,
    )
    .unwrap();
    let bytes = save_checkpoint(&params).unwrap();
    let back = load_checkpoint(&bytes).unwrap();
    assert_eq!(back.seed, params.seed);
    for (name, m) in &params.tensors {
        assert_eq!(m.data(), back.tensors[name].data(), "{name}");
    }
    let again = save_checkpoint(&back).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn max_and_pool_aggregators_run_and_differentiate() {
    let (_, prepared, _) = prepared_fixture(151);
    for aggregator in [Aggregator::Max, Aggregator::Pool] {
        let cfg = ModelConfig {
            aggregator,
            activation: Activation::GeluApprox,
            ..small_config()
        };
        let params = init_model(
            &cfg,
            prepared.act_features.cols(),
            prepared.res_features.cols(),
            157,
        )
        .unwrap();
        let preds = predict(&params, &prepared).unwrap();
        assert!(preds.mu_t.iter().all(|v| v.is_finite()));
        // Variances stay positive by construction.
        for i in 0..preds.len() {
            assert!(preds.var_t(i) > 0.0);
            assert!(preds.var_c(i) > 0.0);
        }
        // Gradients flow end to end (no dead routing through the max).
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &params);
        let out = forward_full(&mut tape, &bound, &params, &prepared, &mut Mode::Eval).unwrap();
        let loss = nll_activity(
            &mut tape,
            &out,
            &prepared.t_true,
            &prepared.c_true,
            &vec![true; prepared.n_act()],
            &LossConfig::default(),
        )
        .unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads
            .get(*bound.ids.get("layer0.rel0.w").unwrap())
            .expect("relation weights receive gradient");
        assert!(g.max_abs() > 0.0, "{aggregator:?}");
    }
}

#[test]
fn temporal_training_reduces_replay_loss() {
    use pnf_learn::train::{train_temporal, TrainConfig};
    let instances: Vec<_> = (0..3)
        .map(|s| generate_project(&GenConfig::new(8, 0.25, 700 + s)).unwrap())
        .collect();
    let refs: Vec<&ProjectInstance> = instances.iter().collect();
    let pipeline = fit_pipeline(&refs, false).unwrap();
    let prepared: Vec<_> = instances.iter().map(|i| pipeline.prepare(i).unwrap()).collect();
    let cfg = ModelConfig {
        layers: 0,
        hidden: 8,
        temporal: Some(TemporalConfig {
            memory_dim: 6,
            time_dim: 4,
            time_scale: 1000.0,
        }),
        head_hidden: vec![8],
        dropout: 0.0,
        layer_norm: false,
        residual: false,
        aggregator: Aggregator::Mean,
        activation: Activation::Elu,
    };
    let train_cfg = TrainConfig {
        max_epochs: 12,
        warmup_epochs: 2,
        patience: 20,
        sampled: false,
        ..TrainConfig::default()
    };
    let (params, history) =
        train_temporal(&prepared, &prepared, &cfg, &train_cfg, 5, None).unwrap();
    assert!(params.config.temporal.is_some());
    let first = history.epochs.first().unwrap().val_loss;
    let best = history.best_val_loss;
    assert!(
        best < first,
        "replay training should improve: first {first}, best {best}"
    );
}

#[test]
fn cost_head_saliency_runs() {
    let (_, prepared, _) = prepared_fixture(163);
    let params = init_model(
        &small_config(),
        prepared.act_features.cols(),
        prepared.res_features.cols(),
        167,
    )
    .unwrap();
    let s = saliency(&params, &prepared, &prepared.activity_ids[1], false).unwrap();
    assert_eq!(s.len(), prepared.act_features.cols());
    assert!(s.iter().all(|&v| v >= 0.0));
}

/// An isolated node and the same node with a zero-feature neighbor can only
/// differ through the relation transform's bias path: with all biases zero
/// the zero neighbor contributes a zero message (same as no neighbor), and
/// with a nonzero relation bias the two diverge.
#[test]
fn zero_feature_neighbor_differs_only_through_bias_path() {
    use pnf_core::instance::InstanceMeta;

    let build = |with_neighbor: bool| -> ProjectInstance {
        let (ids, edges) = if with_neighbor {
            (
                vec!["A".to_string(), "B".to_string()],
                vec![Edge::new("B", "A", Relation::Precedence)],
            )
        } else {
            (vec!["A".to_string(), "B".to_string()], vec![])
        };
        let graph = ProjectGraph::new(ids, vec![], edges).unwrap();
        let mut inst = ProjectInstance::bare(
            graph,
            InstanceMeta {
                name: "trace".into(),
                seed: 0,
                source: "fixture".into(),
            },
        );
        inst.t_est = vec![1.0, 0.0];
        inst.c_est = vec![1.0, 0.0];
        inst.t_true = Some(vec![1.0, 1.0]);
        inst.c_true = Some(vec![1.0, 1.0]);
        inst
    };
    let isolated = build(false);
    let with_neighbor = build(true);
    // One shared pipeline so feature standardization is identical; fit on
    // the edgeless variant (stored features match between the two).
    let pipeline = fit_pipeline(&[&isolated, &with_neighbor], false).unwrap();
    let prep_isolated = pipeline.prepare(&isolated).unwrap();
    let prep_neighbor = pipeline.prepare(&with_neighbor).unwrap();

    let cfg = ModelConfig {
        layers: 1,
        hidden: 4,
        dropout: 0.0,
        residual: false,
        layer_norm: false,
        head_hidden: vec![4],
        ..small_config()
    };
    let mut params = init_model(&cfg, prep_isolated.act_features.cols(), 0, 3).unwrap();

    // Stored graph features (degree, betweenness) differ between the two
    // fixtures; zero those feature weights so only message passing can
    // distinguish them.
    let names = ["deg_in", "deg_out", "betweenness"];
    let cols: Vec<usize> = pipeline
        .act_feature_names
        .iter()
        .enumerate()
        .filter(|(_, n)| names.contains(&n.as_str()))
        .map(|(i, _)| i)
        .collect();
    let embed = params.tensors.get_mut("embed.act.w").unwrap();
    for &c in &cols {
        for j in 0..embed.cols() {
            embed.set(c, j, 0.0);
        }
    }
    // Equalize the feature rows themselves (degree-derived standardization
    // differences) by zeroing those columns in both feature matrices.
    let mut prep_isolated = prep_isolated;
    let mut prep_neighbor = prep_neighbor;
    for &c in &cols {
        for i in 0..2 {
            prep_isolated.act_features.set(i, c, 0.0);
            prep_neighbor.act_features.set(i, c, 0.0);
        }
    }
    // Zero-feature neighbor: wipe B's feature row in the neighbor variant.
    for c in 0..prep_neighbor.act_features.cols() {
        prep_neighbor.act_features.set(1, c, 0.0);
    }

    // Case 1: all biases zero. A zero-feature neighbor embeds to zero, its
    // message is zero, and both fixtures predict identically for A.
    for (name, tensor) in params.tensors.iter_mut() {
        if name.ends_with(".b") {
            for v in tensor.data_mut() {
                *v = 0.0;
            }
        }
    }
    let a = predict(&params, &prep_isolated).unwrap();
    let b = predict(&params, &prep_neighbor).unwrap();
    assert_eq!(a.mu_t[0].to_bits(), b.mu_t[0].to_bits());

    // Case 2: a nonzero precedence-relation bias flows only through the
    // existing edge, so the predictions for A diverge.
    params
        .tensors
        .get_mut("layer0.rel0.b")
        .unwrap()
        .data_mut()[0] = 0.5;
    let a = predict(&params, &prep_isolated).unwrap();
    let b = predict(&params, &prep_neighbor).unwrap();
    assert_ne!(a.mu_t[0].to_bits(), b.mu_t[0].to_bits());
}
