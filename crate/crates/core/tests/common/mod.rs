//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the tape; everything is nested `Vec` arithmetic.
#![allow(dead_code)]

use std::collections::BTreeSet;

use clahi::conversation::{Direction, Event, Label, Post, StructureVariant};
use clahi::encoder::{EmbeddingTable, TokenRef};
use clahi::model::{Gnn, Model, ModelConfig, PostAttention, PreparedEvent};
use rand::seq::SliceRandom;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub const WORDS: [&str; 8] = ["true", "fake", "why", "agree", "source", "hoax", "really", "news"];

pub fn vocab() -> BTreeSet<String> {
    WORDS.iter().map(|w| w.to_string()).collect()
}

pub fn table(dim: usize, seed: u64) -> EmbeddingTable {
    EmbeddingTable::random(&vocab(), dim, seed)
}

/// Small configuration exercising every path.
pub fn small_config(classes: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 6,
        lstm_hidden: 3,
        classes,
        dropout: 0.2,
        ..ModelConfig::default()
    }
}

/// Random reply tree with `n` posts. Texts mix known words and one
/// out-of-vocabulary word so the UNK path is exercised.
pub fn random_event<R: Rng>(rng: &mut R, id: &str, n: usize, label: Label) -> Event {
    let mut posts = Vec::with_capacity(n);
    for i in 0..n {
        let parent = (i > 0).then(|| format!("p{}", rng.gen_range(0..i)));
        let len = rng.gen_range(1..5);
        let text: Vec<&str> = (0..len)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    "zzunseen"
                } else {
                    WORDS[rng.gen_range(0..WORDS.len())]
                }
            })
            .collect();
        let t = if i == 0 { 0 } else { rng.gen_range(1..1000) };
        posts.push(Post::new(&format!("p{i}"), parent.as_deref(), t, &text.join(" ")));
    }
    posts[1..].shuffle(rng);
    Event::new(id, label, posts).unwrap()
}

fn param(model: &Model, name: &str) -> Mat {
    let t = model.store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn vecmat(x: &[f64], m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m[0].len()];
    for (xi, row) in x.iter().zip(m) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// One LSTM direction over a sequence of input vectors, gates ordered
/// input, forget, cell, output.
pub fn lstm(inputs: &[Vec<f64>], w_ih: &Mat, w_hh: &Mat, bias: &[f64]) -> Vec<f64> {
    let h_dim = w_hh.len();
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    for x in inputs {
        let z = add(&add(&vecmat(x, w_ih), &vecmat(&h, w_hh)), bias);
        for u in 0..h_dim {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[h_dim + u]);
            let g = z[2 * h_dim + u].tanh();
            c[u] = f * c[u] + i * g;
        }
        for u in 0..h_dim {
            let o = sigmoid(z[3 * h_dim + u]);
            h[u] = o * c[u].tanh();
        }
    }
    h
}

pub struct DenseOutput {
    pub probs: Vec<f64>,
    /// Per layer, per head, the n × n attention matrix.
    pub attention: Vec<Vec<Mat>>,
    pub beta: Option<Vec<f64>>,
    pub node_states: Mat,
}

/// Evaluation-mode forward pass written straight from the model equations.
pub fn dense_forward(model: &Model, event: &PreparedEvent) -> DenseOutput {
    let c = &model.config;
    let n = event.len();
    let unk = param(model, "encoder.unk")[0].clone();
    let tuned = model.store.by_name("encoder.table").is_some().then(|| param(model, "encoder.table"));
    let embed = |t: &TokenRef| match t {
        TokenRef::Known(r) => match &tuned {
            Some(m) => m[*r].clone(),
            None => model.table.row(*r).to_vec(),
        },
        TokenRef::Unknown => unk.clone(),
    };
    let dir = |name: &str, seq: &[Vec<f64>]| {
        lstm(
            seq,
            &param(model, &format!("encoder.{name}.w_ih")),
            &param(model, &format!("encoder.{name}.w_hh")),
            &param(model, &format!("encoder.{name}.bias"))[0],
        )
    };
    let mut h: Mat = event
        .tokens
        .iter()
        .map(|post| {
            let xs: Vec<Vec<f64>> = post.iter().map(embed).collect();
            let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
            let mut v = dir("fwd", &xs);
            v.extend(dir("bwd", &rev));
            v
        })
        .collect();

    let mut attention = Vec::new();
    for l in 0..c.layers {
        let claim = h[0].clone();
        let refined: Mat = match (c.gnn, c.post_attention) {
            (Gnn::Gat, PostAttention::On) => {
                let wg = param(model, &format!("gat.{l}.gate.w"));
                let ug = param(model, &format!("gat.{l}.gate.u"));
                let bg = param(model, &format!("gat.{l}.gate.bias"))[0].clone();
                let from_claim = vecmat(&claim, &ug);
                h.iter()
                    .map(|x| {
                        let z = add(&add(&vecmat(x, &wg), &from_claim), &bg);
                        let mut row: Vec<f64> = (0..x.len())
                            .map(|k| {
                                let g = sigmoid(z[k]);
                                g * x[k] + (1.0 - g) * claim[k]
                            })
                            .collect();
                        row.extend_from_slice(x);
                        row
                    })
                    .collect()
            }
            (Gnn::Gat, PostAttention::SimpleConcat) => h
                .iter()
                .map(|x| {
                    let mut row = claim.clone();
                    row.extend_from_slice(x);
                    row
                })
                .collect(),
            _ => h.clone(),
        };
        let mut outs: Vec<Mat> = Vec::new();
        let mut layer_att = Vec::new();
        for k in 0..c.heads {
            let w = param(model, &format!("gat.{l}.head.{k}.w"));
            let p: Mat = refined.iter().map(|x| vecmat(x, &w)).collect();
            let alpha: Mat = match c.gnn {
                Gnn::Gat => {
                    let a_src: Vec<f64> = param(model, &format!("gat.{l}.head.{k}.a_src")).iter().map(|r| r[0]).collect();
                    let a_dst: Vec<f64> = param(model, &format!("gat.{l}.head.{k}.a_dst")).iter().map(|r| r[0]).collect();
                    (0..n)
                        .map(|i| {
                            let members: Vec<usize> = (0..n).filter(|&j| event.mask[i * n + j]).collect();
                            let logits: Vec<f64> = members
                                .iter()
                                .map(|&j| {
                                    let e = dot(&p[i], &a_src) + dot(&p[j], &a_dst);
                                    if e > 0.0 {
                                        e
                                    } else {
                                        c.leaky_slope * e
                                    }
                                })
                                .collect();
                            let weights = softmax(&logits);
                            let mut row = vec![0.0; n];
                            for (&j, w) in members.iter().zip(weights) {
                                row[j] = w;
                            }
                            row
                        })
                        .collect()
                }
                Gnn::Gcn => {
                    let deg: Vec<f64> = (0..n)
                        .map(|i| (0..n).filter(|&j| event.mask[i * n + j]).count() as f64)
                        .collect();
                    (0..n)
                        .map(|i| {
                            (0..n)
                                .map(|j| if event.mask[i * n + j] { 1.0 / (deg[i] * deg[j]).sqrt() } else { 0.0 })
                                .collect()
                        })
                        .collect()
                }
            };
            let m: Mat = (0..n)
                .map(|i| {
                    let mut row = vec![0.0; p[0].len()];
                    for j in 0..n {
                        for (r, v) in row.iter_mut().zip(&p[j]) {
                            *r += alpha[i][j] * v;
                        }
                    }
                    row
                })
                .collect();
            outs.push(m);
            layer_att.push(alpha);
        }
        if c.gnn == Gnn::Gat {
            attention.push(layer_att);
        }
        h = if l + 1 == c.layers {
            (0..n)
                .map(|i| {
                    let width = outs[0][i].len();
                    (0..width)
                        .map(|u| (outs.iter().map(|o| o[i][u]).sum::<f64>() / c.heads as f64).max(0.0))
                        .collect()
                })
                .collect()
        } else {
            (0..n)
                .map(|i| outs.iter().flat_map(|o| o[i].iter().map(|v| v.max(0.0))).collect())
                .collect()
        };
    }

    let d = h[0].len();
    let pooled: Vec<f64> = (0..d).map(|u| h.iter().map(|r| r[u]).sum::<f64>() / n as f64).collect();
    let (logits, beta) = if c.event_attention {
        let wm = param(model, "event.match.w");
        let bm = param(model, "event.match.bias")[0].clone();
        let ws: Vec<f64> = param(model, "event.score.w").iter().map(|r| r[0]).collect();
        let bs = param(model, "event.score.bias")[0][0];
        let hc = &h[0];
        let scores: Vec<f64> = h
            .iter()
            .map(|x| {
                let mut feat = hc.clone();
                feat.extend_from_slice(x);
                feat.extend(hc.iter().zip(x).map(|(a, b)| a * b));
                feat.extend(hc.iter().zip(x).map(|(a, b)| (a - b).abs()));
                let m: Vec<f64> = add(&vecmat(&feat, &wm), &bm).iter().map(|v| v.tanh()).collect();
                (dot(&m, &ws) + bs).tanh()
            })
            .collect();
        let beta = softmax(&scores);
        let mut joined: Vec<f64> = (0..d).map(|u| (0..n).map(|i| beta[i] * h[i][u]).sum()).collect();
        joined.extend_from_slice(&pooled);
        let logits = add(&vecmat(&joined, &param(model, "classifier.w")), &param(model, "classifier.bias")[0]);
        (logits, Some(beta))
    } else {
        let logits = add(
            &vecmat(&pooled, &param(model, "classifier_pooled.w")),
            &param(model, "classifier_pooled.bias")[0],
        );
        (logits, None)
    };
    DenseOutput {
        probs: softmax(&logits),
        attention,
        beta,
        node_states: h,
    }
}

/// Adjacency by enumerating every ordered pair of posts against the
/// parent-child and sibling rules, indexed in the event's node order.
pub fn brute_force_adjacency(event: &Event, variant: StructureVariant) -> Vec<bool> {
    let posts: Vec<&Post> = event.posts().collect();
    let n = posts.len();
    let parent_of = |p: &Post| p.parent_id.clone();
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (posts[i], posts[j]);
            let a_child_of_b = parent_of(a).as_deref() == Some(b.post_id.as_str());
            let b_child_of_a = parent_of(b).as_deref() == Some(a.post_id.as_str());
            let siblings = a.parent_id.is_some() && a.parent_id == b.parent_id;
            adj[i * n + j] = match variant {
                StructureVariant::UndirectedFull => a_child_of_b || b_child_of_a || siblings,
                StructureVariant::UndirectedNoSibling => a_child_of_b || b_child_of_a,
                StructureVariant::DirectedTree(Direction::BottomUp) => a_child_of_b,
                StructureVariant::DirectedTree(Direction::TopDown) => b_child_of_a,
                StructureVariant::DirectedTreeWithSibling(Direction::BottomUp) => a_child_of_b || siblings,
                StructureVariant::DirectedTreeWithSibling(Direction::TopDown) => b_child_of_a || siblings,
            };
        }
    }
    adj
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
