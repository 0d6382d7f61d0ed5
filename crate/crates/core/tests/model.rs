mod common;

use clahi::conversation::{Event, Label, Post, StructureVariant};
use clahi::encoder::TokenRef;
use clahi::model::{softmax, AttentionTrace, Gnn, Model, ModelConfig, PostAttention, PreparedEvent};
use clahi::seed;
use clahi::tensor::{Session, Tensor};
use common::*;
use rand::rngs::mock::StepRng;

fn model(config: ModelConfig, seed_value: u64) -> Model {
    Model::new(config, table(5, seed_value), seed_value).unwrap()
}

fn set(model: &mut Model, name: &str, f: impl Fn(usize, usize) -> f64) {
    let t = model.store.by_name(name).unwrap();
    let (r, c) = (t.rows(), t.cols());
    let data = (0..r * c).map(|k| f(k / c, k % c)).collect();
    model.store.set(name, Tensor::matrix(r, c, data).unwrap()).unwrap();
}

fn matrix(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn hand_event(n: usize, mask: Vec<bool>) -> PreparedEvent {
    PreparedEvent {
        event_id: "hand".into(),
        target: 0,
        node_ids: (0..n).map(|i| format!("n{i}")).collect(),
        tokens: vec![vec![TokenRef::Unknown]; n],
        mask,
    }
}

fn gate_model(width: usize) -> Model {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        hidden: 2,
        lstm_hidden: width,
        classes: 2,
        ..ModelConfig::default()
    };
    model(cfg, 1)
}

#[test]
fn zero_gate_weights_average_node_and_claim() {
    let mut m = gate_model(1);
    for name in ["gat.0.gate.w", "gat.0.gate.u", "gat.0.gate.bias"] {
        set(&mut m, name, |_, _| 0.0);
    }
    let mut s = Session::new(&m.store, false);
    let h = s.tape.constant(matrix(&[&[0.4, -1.0], &[2.0, 3.0]]));
    let (gate, aware) = m.claim_gate(&mut s, 0, h).unwrap();
    assert!(s.tape.value(gate).data().iter().all(|&g| g == 0.5));
    assert!(max_abs_diff(s.tape.value(aware).data(), &[0.4, -1.0, 1.2, 1.0]) < 1e-15);
}

#[test]
fn gate_fixed_point_and_scalar_case() {
    let mut m = gate_model(1);
    set(&mut m, "gat.0.gate.w", |_, _| 0.0);
    set(&mut m, "gat.0.gate.u", |_, _| 0.0);
    // sigmoid(ln 4) = 0.8
    set(&mut m, "gat.0.gate.bias", |_, _| 4f64.ln());
    let mut s = Session::new(&m.store, false);
    let h = s.tape.constant(matrix(&[&[0.0, 0.7], &[1.0, 0.7]]));
    let (gate, aware) = m.claim_gate(&mut s, 0, h).unwrap();
    assert!((s.tape.value(gate).get(1, 0) - 0.8).abs() < 1e-15);
    let out = s.tape.value(aware);
    assert!((out.get(1, 0) - 0.8).abs() < 1e-15);
    assert_eq!(out.get(1, 1), 0.7);
}

#[test]
fn saturated_gate_matches_plain_features() {
    // The gate saturates to 1 under a large positive bias, so the claim-aware
    // state equals the node's own state.
    let mut m = gate_model(3);
    set(&mut m, "gat.0.gate.bias", |_, _| 30.0);
    let mut s = Session::new(&m.store, false);
    let h = s.tape.constant(matrix(&[&[0.1, 0.2, -0.3, 0.5, 0.9, -0.1], &[-0.4, 0.8, 0.6, 0.2, -0.7, 0.3]]));
    let (gate, aware) = m.claim_gate(&mut s, 0, h).unwrap();
    let max_gap = s.tape.value(gate).data().iter().map(|g| (g - 1.0).abs()).fold(0.0, f64::max);
    assert!(max_gap < 1e-6, "{max_gap}");
    let diff = max_abs_diff(s.tape.value(aware).data(), s.tape.value(h).data());
    assert!(diff < 1e-5, "{diff}");
}

#[test]
fn gate_on_and_off_differ_on_generic_parameters() {
    let mut rng = seed::rng(3, "events");
    let event = random_event(&mut rng, "e", 5, Label::FalseRumor);
    let on = model(small_config(4), 3);
    let off = Model::new(
        ModelConfig {
            post_attention: PostAttention::Off,
            ..small_config(4)
        },
        on.table.clone(),
        3,
    )
    .unwrap();
    let (p_on, _) = on.predict(&on.prepare(&event).unwrap()).unwrap();
    let (p_off, _) = off.predict(&off.prepare(&event).unwrap()).unwrap();
    assert!(max_abs_diff(&p_on, &p_off) > 1e-6);
}

#[test]
fn attention_rows_on_hand_graphs() {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        hidden: 1,
        lstm_hidden: 1,
        classes: 2,
        post_attention: PostAttention::Off,
        ..ModelConfig::default()
    };
    let m = model(cfg, 2);
    let head = m.layers[0].heads[0];
    let mut s = Session::new(&m.store, false);

    let lone = s.tape.constant(matrix(&[&[0.3]]));
    let a = m.head_attention(&mut s, &head, lone, &[true]).unwrap();
    assert_eq!(s.tape.value(a).data(), &[1.0]);

    let same = s.tape.constant(matrix(&[&[0.5], &[0.5], &[0.5]]));
    let a = m.head_attention(&mut s, &head, same, &[true; 9]).unwrap();
    for &w in s.tape.value(a).data() {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn two_node_attention_matches_closed_form() {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        hidden: 1,
        lstm_hidden: 1,
        classes: 2,
        leaky_slope: 0.2,
        post_attention: PostAttention::Off,
        ..ModelConfig::default()
    };
    let mut m = model(cfg, 2);
    set(&mut m, "gat.0.head.0.a_src", |_, _| 1.5);
    set(&mut m, "gat.0.head.0.a_dst", |_, _| -0.5);
    let head = m.layers[0].heads[0];
    let mut s = Session::new(&m.store, false);
    let p = s.tape.constant(matrix(&[&[2.0], &[-1.0]]));
    let a = m.head_attention(&mut s, &head, p, &[true; 4]).unwrap();
    // row 0: e00 = 3 - 1 = 2, e01 = 3 + 0.5 = 3.5
    // row 1: e10 = leaky(-1.5 - 1) = -0.5, e11 = leaky(-1.5 + 0.5) = -0.2
    let row0 = [1.0 / (1.0 + 1.5f64.exp()), 1.0 / (1.0 + (-1.5f64).exp())];
    let row1 = [1.0 / (1.0 + 0.3f64.exp()), 1.0 / (1.0 + (-0.3f64).exp())];
    let got = s.tape.value(a).data().to_vec();
    assert!(max_abs_diff(&got, &[row0[0], row0[1], row1[0], row1[1]]) < 1e-10);
}

#[test]
fn identity_transform_with_self_attention_is_relu() {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        hidden: 2,
        lstm_hidden: 1,
        classes: 2,
        post_attention: PostAttention::Off,
        ..ModelConfig::default()
    };
    let mut m = model(cfg, 4);
    set(&mut m, "gat.0.head.0.w", |r, c| if r == c { 1.0 } else { 0.0 });
    let event = hand_event(3, vec![true, false, false, false, true, false, false, false, true]);
    let mut s = Session::new(&m.store, false);
    let h = s.tape.constant(matrix(&[&[0.5, -2.0], &[-0.1, 0.3], &[1.0, 0.0]]));
    let mut trace = AttentionTrace::new(event.node_ids.clone(), event.mask.clone());
    let out = m
        .graph_layer(&mut s, 0, h, &event, false, &mut StepRng::new(0, 0), &mut trace)
        .unwrap();
    assert_eq!(s.tape.value(out).data(), &[0.5, 0.0, 0.0, 0.3, 1.0, 0.0]);
}

#[test]
fn identical_nodes_give_identical_rows() {
    let m = model(small_config(2), 5);
    let mask = vec![true, true, false, true, true, true, false, true, true];
    let event = hand_event(3, mask);
    let mut s = Session::new(&m.store, false);
    let row = [0.2, -0.4, 0.9, 0.1, 0.0, 0.3];
    let h = s.tape.constant(matrix(&[&row, &row, &row]));
    let mut trace = AttentionTrace::new(event.node_ids.clone(), event.mask.clone());
    let out = m
        .graph_layer(&mut s, 0, h, &event, false, &mut StepRng::new(0, 0), &mut trace)
        .unwrap();
    let v = s.tape.value(out);
    assert_eq!(v.row(0), v.row(1));
    assert_eq!(v.row(0), v.row(2));
}

#[test]
fn matching_features_and_event_weights() {
    let mut m = model(small_config(2), 6);
    set(&mut m, "event.match.w", |_, _| 0.0);
    set(&mut m, "event.match.bias", |_, c| 0.1 * c as f64);
    let mut s = Session::new(&m.store, false);
    let h = s.tape.constant(matrix(&[&[1.0; 6], &[0.5; 6], &[-2.0; 6]]));
    let matched = m.nli_match(&mut s, h).unwrap();
    for r in 0..3 {
        for c in 0..6 {
            assert_eq!(s.tape.value(matched).get(r, c), (0.1 * c as f64).tanh());
        }
    }
    // zero matching weights give every node the same score
    let (beta, summary) = m.event_attention(&mut s, h).unwrap();
    for &b in s.tape.value(beta).data() {
        assert!((b - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((s.tape.value(summary).get(0, 0) - (-0.5 / 3.0)).abs() < 1e-15);

    let single = s.tape.constant(matrix(&[&[0.3, 0.1, 0.0, 0.2, 0.5, 0.7]]));
    let (beta, summary) = m.event_attention(&mut s, single).unwrap();
    assert_eq!(s.tape.value(beta).data(), &[1.0]);
    assert_eq!(s.tape.value(summary).data(), s.tape.value(single).data());
}

#[test]
fn zero_classifier_is_uniform() {
    let mut m = model(small_config(4), 7);
    set(&mut m, "classifier.w", |_, _| 0.0);
    let mut rng = seed::rng(7, "events");
    let event = random_event(&mut rng, "e", 6, Label::TrueRumor);
    let (probs, _) = m.predict(&m.prepare(&event).unwrap()).unwrap();
    assert_eq!(probs, vec![0.25; 4]);
}

#[test]
fn four_class_softmax_matches_hand_values() {
    let probs = softmax(&[1.0, 2.0, 0.0, -1.0]);
    let z: f64 = [1.0f64, 2.0, 0.0, -1.0].iter().map(|v| v.exp()).sum();
    let want: Vec<f64> = [1.0f64, 2.0, 0.0, -1.0].iter().map(|v| v.exp() / z).collect();
    assert!(max_abs_diff(&probs, &want) < 1e-15);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn claim_only_event_runs_end_to_end() {
    let m = model(small_config(4), 8);
    let event = Event::new("c", Label::NonRumor, vec![Post::new("r", None, 0, "really fake")]).unwrap();
    let (probs, trace) = m.predict(&m.prepare(&event).unwrap()).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(trace.beta, Some(vec![1.0]));
    assert_eq!(trace.beta_tsv().unwrap(), "node_id\tbeta\nr\t1\n");
}

#[test]
fn evaluation_is_deterministic() {
    let m = model(small_config(4), 9);
    let mut rng = seed::rng(9, "events");
    let event = m.prepare(&random_event(&mut rng, "e", 7, Label::Unverified)).unwrap();
    let (a, ta) = m.predict(&event).unwrap();
    let (b, tb) = m.predict(&event).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.layers, tb.layers);
}

fn configs() -> Vec<ModelConfig> {
    let base = small_config(4);
    let mut out = vec![base.clone()];
    for pa in [PostAttention::Off, PostAttention::SimpleConcat] {
        out.push(ModelConfig {
            post_attention: pa,
            ..base.clone()
        });
    }
    out.push(ModelConfig {
        event_attention: false,
        ..base.clone()
    });
    out.push(ModelConfig {
        gnn: Gnn::Gcn,
        ..base.clone()
    });
    out.push(ModelConfig {
        layers: 3,
        heads: 3,
        fine_tune_embeddings: true,
        structure: StructureVariant::DirectedTreeWithSibling(clahi::conversation::Direction::BottomUp),
        ..base
    });
    out
}

#[test]
fn production_forward_matches_dense_oracle_for_every_variant() {
    let mut rng = seed::rng(10, "events");
    for (v, cfg) in configs().into_iter().enumerate() {
        let m = model(cfg, 10 + v as u64);
        for e in 0..5 {
            let n = 1 + e * 2;
            let event = m.prepare(&random_event(&mut rng, "e", n, Label::FalseRumor)).unwrap();
            let (probs, trace) = m.predict(&event).unwrap();
            let dense = dense_forward(&m, &event);
            assert!(max_abs_diff(&probs, &dense.probs) < 1e-10, "variant {v}");
            assert_eq!(trace.layers.len(), dense.attention.len());
            for (got, want) in trace.layers.iter().zip(&dense.attention) {
                for (g, w) in got.iter().zip(want) {
                    assert!(max_abs_diff(g.data(), &w.concat()) < 1e-12);
                }
            }
            match (&trace.beta, &dense.beta) {
                (Some(g), Some(w)) => assert!(max_abs_diff(g, w) < 1e-12),
                (None, None) => {}
                _ => panic!("event attention presence differs"),
            }
        }
    }
}

#[test]
fn relabeling_responses_permutes_the_trace() {
    let m = model(small_config(4), 11);
    let posts = vec![
        Post::new("c", None, 0, "news source"),
        Post::new("a", Some("c"), 10, "fake hoax"),
        Post::new("b", Some("c"), 20, "why really"),
        Post::new("d", Some("a"), 30, "agree"),
        Post::new("e", Some("b"), 40, "true news zzunseen"),
    ];
    let first = Event::new("x", Label::FalseRumor, posts.clone()).unwrap();
    // new timestamps reverse the response order
    let mut reordered = posts;
    for (p, t) in reordered[1..].iter_mut().zip([40, 30, 20, 10]) {
        p.timestamp = t;
    }
    let second = Event::new("x", Label::FalseRumor, reordered).unwrap();
    let (pa, ta) = m.predict(&m.prepare(&first).unwrap()).unwrap();
    let (pb, tb) = m.predict(&m.prepare(&second).unwrap()).unwrap();
    assert!(max_abs_diff(&pa, &pb) < 1e-10);
    let pos = |ids: &[String], id: &str| ids.iter().position(|x| x == id).unwrap();
    for (la, lb) in ta.layers.iter().zip(&tb.layers) {
        for (ha, hb) in la.iter().zip(lb) {
            for (i, id_i) in ta.node_ids.iter().enumerate() {
                for (j, id_j) in ta.node_ids.iter().enumerate() {
                    let other = hb.get(pos(&tb.node_ids, id_i), pos(&tb.node_ids, id_j));
                    assert!((ha.get(i, j) - other).abs() < 1e-10);
                }
            }
        }
    }
    let (ba, bb) = (ta.beta.unwrap(), tb.beta.unwrap());
    for (i, id) in ta.node_ids.iter().enumerate() {
        assert!((ba[i] - bb[pos(&tb.node_ids, id)]).abs() < 1e-10);
    }
}

fn node_states(m: &Model, event: &PreparedEvent) -> Tensor {
    let mut s = m.session(false);
    let mut trace = AttentionTrace::new(event.node_ids.clone(), event.mask.clone());
    let mut h = m.encode(&mut s, event).unwrap();
    for l in 0..m.config.layers {
        h = m
            .graph_layer(&mut s, l, h, event, false, &mut StepRng::new(0, 0), &mut trace)
            .unwrap();
    }
    s.tape.value(h).clone()
}

#[test]
fn receptive_field_is_bounded_by_depth() {
    let cfg = ModelConfig {
        structure: StructureVariant::UndirectedNoSibling,
        ..small_config(4)
    };
    let m = model(cfg, 12);
    let chain = |last: &str| {
        let mut posts = vec![Post::new("p0", None, 0, "news")];
        for i in 1..7 {
            let text = if i == 6 { last } else { "why really" };
            posts.push(Post::new(&format!("p{i}"), Some(&format!("p{}", i - 1)), i as u64, text));
        }
        Event::new("chain", Label::TrueRumor, posts).unwrap()
    };
    let a = node_states(&m, &m.prepare(&chain("fake hoax")).unwrap());
    let b = node_states(&m, &m.prepare(&chain("agree true source")).unwrap());
    // two layers: p6 reaches p4..p6 and never the claim, so p0..p3 are unchanged
    for r in 0..4 {
        assert_eq!(a.row(r), b.row(r), "row {r}");
    }
    assert_ne!(a.row(4), b.row(4));
}

#[test]
fn gcn_weights_are_symmetric_normalized() {
    let event = hand_event(3, vec![true, true, true, true, true, false, true, false, true]);
    let a = event.normalized_adjacency();
    let third = 1.0 / 3.0;
    let cross = 1.0 / 6f64.sqrt();
    assert_eq!(a.data(), &[third, cross, cross, cross, 0.5, 0.0, cross, 0.0, 0.5]);
}
