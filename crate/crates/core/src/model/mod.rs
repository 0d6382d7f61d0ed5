//! Claim-guided hierarchical graph attention.
//!
//! Post vectors from the encoder pass through stacked graph layers whose
//! attention sees each node's claim-gated representation next to its own.
//! The final node states are summarized twice, by a plain mean and by an
//! attention weighted through claim/post matching features, and both
//! summaries feed the classifier.

mod checkpoint;
mod config;
mod trace;

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{Gnn, ModelConfig, PostAttention};
pub use trace::{parse_attention_tsv, parse_beta_tsv, AttentionTrace};

use rand::{Rng, RngCore};

use crate::conversation::{build_graph, Event};
use crate::encoder::{resolve, tokenize, BiLstmEncoder, EmbeddingTable, TokenRef};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{ParamId, ParamStore, Session, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct Head {
    /// Node transform, `refined_input × head_width`.
    pub w: ParamId,
    /// Attention vector halves for the attending and the attended node.
    pub a_src: ParamId,
    pub a_dst: ParamId,
}

#[derive(Clone, Debug)]
pub struct GraphLayer {
    pub heads: Vec<Head>,
    /// Gate weights on the node itself and on the claim, plus a bias.
    pub gate_w: ParamId,
    pub gate_u: ParamId,
    pub gate_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub table: EmbeddingTable,
    pub encoder: BiLstmEncoder,
    pub layers: Vec<GraphLayer>,
    /// Claim/post matching projection, `4·hidden → hidden`.
    pub matching: Linear,
    /// Event attention score, `hidden → 1`.
    pub scoring: Linear,
    /// Classifier over both summaries, `2·hidden → classes`.
    pub classifier: Linear,
    /// Classifier over the mean summary alone, used without event attention.
    pub pooled_classifier: Linear,
}

/// An event reduced to what the forward pass needs.
#[derive(Clone, Debug)]
pub struct PreparedEvent {
    pub event_id: String,
    pub target: usize,
    pub node_ids: Vec<String>,
    pub tokens: Vec<Vec<TokenRef>>,
    /// Row-major `n × n`; entry (i, j) is set when j is in node i's neighborhood.
    pub mask: Vec<bool>,
}

impl PreparedEvent {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Weights `1/√(deg_i·deg_j)` over neighborhoods, self included.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.len();
        let deg: Vec<f64> = (0..n)
            .map(|i| self.mask[i * n..(i + 1) * n].iter().filter(|&&m| m).count() as f64)
            .collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if self.mask[i * n + j] {
                    data[i * n + j] = 1.0 / (deg[i] * deg[j]).sqrt();
                }
            }
        }
        Tensor::matrix(n, n, data).expect("square")
    }
}

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    pub trace: AttentionTrace,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn linear<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Linear {
    Linear {
        w: store.register(format!("{name}.w"), glorot(fan_in, fan_out, rng), true),
        bias: store.register(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]), false),
    }
}

impl Model {
    /// Builds a model with freshly initialized parameters. Every parameter
    /// group is allocated whatever the ablation switches say; groups a
    /// configuration does not use simply never reach the tape.
    pub fn new(config: ModelConfig, table: EmbeddingTable, seed_value: u64) -> Result<Model> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = BiLstmEncoder::register(
            &mut store,
            &table,
            config.lstm_hidden,
            config.fine_tune_embeddings,
            &mut seed::rng(seed_value, "init/encoder"),
        );
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut rng = seed::rng(seed_value, &format!("init/layer/{l}"));
            let (d_in, refined, width) = (config.layer_input(l), config.refined_input(l), config.head_width(l));
            let heads = (0..config.heads)
                .map(|k| {
                    let prefix = format!("gat.{l}.head.{k}");
                    Head {
                        w: store.register(format!("{prefix}.w"), glorot(refined, width, &mut rng), true),
                        a_src: store.register(format!("{prefix}.a_src"), glorot(width, 1, &mut rng), true),
                        a_dst: store.register(format!("{prefix}.a_dst"), glorot(width, 1, &mut rng), true),
                    }
                })
                .collect();
            let gate_w = store.register(format!("gat.{l}.gate.w"), glorot(d_in, d_in, &mut rng), true);
            let gate_u = store.register(format!("gat.{l}.gate.u"), glorot(d_in, d_in, &mut rng), true);
            let gate_bias = store.register(format!("gat.{l}.gate.bias"), Tensor::zeros(&[1, d_in]), false);
            layers.push(GraphLayer {
                heads,
                gate_w,
                gate_u,
                gate_bias,
            });
        }
        let d = config.hidden;
        let mut rng = seed::rng(seed_value, "init/event");
        let matching = linear(&mut store, "event.match", 4 * d, d, &mut rng);
        let scoring = linear(&mut store, "event.score", d, 1, &mut rng);
        let mut rng = seed::rng(seed_value, "init/classifier");
        let classifier = linear(&mut store, "classifier", 2 * d, config.classes, &mut rng);
        let pooled_classifier = linear(&mut store, "classifier_pooled", d, config.classes, &mut rng);
        Ok(Model {
            config,
            store,
            table,
            encoder,
            layers,
            matching,
            scoring,
            classifier,
            pooled_classifier,
        })
    }

    /// Parameters the current configuration reads during a forward pass.
    pub fn active_params(&self) -> Vec<ParamId> {
        let c = &self.config;
        let e = &self.encoder;
        let mut ids = vec![
            e.forward.w_ih,
            e.forward.w_hh,
            e.forward.bias,
            e.backward.w_ih,
            e.backward.w_hh,
            e.backward.bias,
            e.unk,
        ];
        ids.extend(e.table);
        for layer in &self.layers {
            for h in &layer.heads {
                ids.push(h.w);
                if c.gnn == Gnn::Gat {
                    ids.extend([h.a_src, h.a_dst]);
                }
            }
            if c.uses_gate() {
                ids.extend([layer.gate_w, layer.gate_u, layer.gate_bias]);
            }
        }
        if c.event_attention {
            ids.extend([
                self.matching.w,
                self.matching.bias,
                self.scoring.w,
                self.scoring.bias,
                self.classifier.w,
                self.classifier.bias,
            ]);
        } else {
            ids.extend([self.pooled_classifier.w, self.pooled_classifier.bias]);
        }
        ids
    }

    /// Opens a session with every active parameter already bound, so the
    /// tape can be rewound between events without losing their gradients.
    pub fn session(&self, trainable: bool) -> Session<'_> {
        let mut s = Session::new(&self.store, trainable);
        for id in self.active_params() {
            s.param(id);
        }
        s
    }

    pub fn prepare(&self, event: &Event) -> Result<PreparedEvent> {
        let target = event.label().class_index();
        if target >= self.config.classes || event.label().scheme().num_classes() != self.config.classes {
            return Err(Error::Contract(format!(
                "event {} has label {} but the model has {} classes",
                event.id(),
                event.label(),
                self.config.classes
            )));
        }
        let graph = build_graph(event, self.config.structure);
        let tokens = event
            .posts()
            .map(|p| resolve(&tokenize(&p.text, self.config.max_tokens), &self.table))
            .collect();
        Ok(PreparedEvent {
            event_id: event.id().to_string(),
            target,
            node_ids: graph.node_order().to_vec(),
            tokens,
            mask: graph.neighborhood_mask(),
        })
    }

    /// Post vectors, one row per node.
    pub fn encode(&self, s: &mut Session, event: &PreparedEvent) -> Result<Var> {
        self.encoder.encode(s, &event.tokens, &self.table)
    }

    /// Claim gate for every node of `h` against row 0. Returns the gate and
    /// the claim-aware states `h_c + g ⊙ (h − h_c)`.
    pub fn claim_gate(&self, s: &mut Session, layer: usize, h: Var) -> Result<(Var, Var)> {
        let p = &self.layers[layer];
        let (w, u, b) = (s.param(p.gate_w), s.param(p.gate_u), s.param(p.gate_bias));
        let claim = s.tape.select_rows(h, &[0])?;
        let own = s.tape.matmul(h, w)?;
        let from_claim = s.tape.matmul(claim, u)?;
        let z = s.tape.add(own, from_claim)?;
        let z = s.tape.add(z, b)?;
        let gate = s.tape.sigmoid(z);
        let diff = s.tape.sub(h, claim)?;
        let moved = s.tape.mul(gate, diff)?;
        let aware = s.tape.add(moved, claim)?;
        Ok((gate, aware))
    }

    /// Node features fed to the heads of `layer`.
    pub fn refined_input(&self, s: &mut Session, layer: usize, h: Var) -> Result<Var> {
        match (self.config.gnn, self.config.post_attention) {
            (Gnn::Gat, PostAttention::On) => {
                let (_, aware) = self.claim_gate(s, layer, h)?;
                s.tape.concat(&[aware, h], 1)
            }
            (Gnn::Gat, PostAttention::SimpleConcat) => {
                let n = s.tape.value(h).rows();
                let claim = s.tape.select_rows(h, &[0])?;
                let claims = s.tape.broadcast_rows(claim, n)?;
                s.tape.concat(&[claims, h], 1)
            }
            _ => Ok(h),
        }
    }

    /// Attention of one head over neighborhoods given transformed features.
    pub fn head_attention(&self, s: &mut Session, head: &Head, projected: Var, mask: &[bool]) -> Result<Var> {
        let (a_src, a_dst) = (s.param(head.a_src), s.param(head.a_dst));
        let src = s.tape.matmul(projected, a_src)?;
        let dst = s.tape.matmul(projected, a_dst)?;
        let logits = s.tape.pairwise_sum(src, dst)?;
        let logits = s.tape.leaky_relu(logits, self.config.leaky_slope);
        s.tape.masked_softmax(logits, mask)
    }

    /// One graph layer. Head outputs are joined, or averaged on the final
    /// layer, before the ReLU.
    #[allow(clippy::too_many_arguments)]
    pub fn graph_layer(
        &self,
        s: &mut Session,
        layer: usize,
        h: Var,
        event: &PreparedEvent,
        training: bool,
        rng: &mut dyn RngCore,
        trace: &mut AttentionTrace,
    ) -> Result<Var> {
        let c = &self.config;
        let h = s.tape.dropout(h, c.dropout, training, rng)?;
        let refined = self.refined_input(s, layer, h)?;
        let fixed = (c.gnn == Gnn::Gcn).then(|| s.tape.constant(event.normalized_adjacency()));
        let mut heads = Vec::with_capacity(c.heads);
        let mut weights = Vec::new();
        for head in &self.layers[layer].heads {
            let w = s.param(head.w);
            let projected = s.tape.matmul(refined, w)?;
            let attention = match fixed {
                Some(a) => a,
                None => {
                    let alpha = self.head_attention(s, head, projected, &event.mask)?;
                    weights.push(s.tape.value(alpha).clone());
                    s.tape.dropout(alpha, c.dropout, training, rng)?
                }
            };
            heads.push(s.tape.matmul(attention, projected)?);
        }
        if !weights.is_empty() {
            trace.layers.push(weights);
        }
        if c.is_final(layer) {
            let mut total = heads[0];
            for &m in &heads[1..] {
                total = s.tape.add(total, m)?;
            }
            let mean = s.tape.scale(total, 1.0 / c.heads as f64);
            Ok(s.tape.relu(mean))
        } else {
            let activated: Vec<Var> = heads.into_iter().map(|m| s.tape.relu(m)).collect();
            s.tape.concat(&activated, 1)
        }
    }

    /// Matching features of every node against the claim (row 0).
    pub fn nli_match(&self, s: &mut Session, h: Var) -> Result<Var> {
        let n = s.tape.value(h).rows();
        let claim = s.tape.select_rows(h, &[0])?;
        let claims = s.tape.broadcast_rows(claim, n)?;
        let prod = s.tape.mul(claims, h)?;
        let diff = s.tape.sub(claims, h)?;
        let diff = s.tape.abs(diff);
        let joined = s.tape.concat(&[claims, h, prod, diff], 1)?;
        let (w, b) = (s.param(self.matching.w), s.param(self.matching.bias));
        let z = s.tape.matmul(joined, w)?;
        let z = s.tape.add(z, b)?;
        Ok(s.tape.tanh(z))
    }

    /// Event-level weights `β` (`1 × n`) and the weighted summary (`1 × d`).
    pub fn event_attention(&self, s: &mut Session, h: Var) -> Result<(Var, Var)> {
        let n = s.tape.value(h).rows();
        let matched = self.nli_match(s, h)?;
        let (w, b) = (s.param(self.scoring.w), s.param(self.scoring.bias));
        let score = s.tape.matmul(matched, w)?;
        let score = s.tape.add(score, b)?;
        let score = s.tape.tanh(score);
        let score = s.tape.reshape(score, &[1, n])?;
        let beta = s.tape.softmax(score)?;
        let summary = s.tape.matmul(beta, h)?;
        Ok((beta, summary))
    }

    /// Classifier logits (pre-softmax) from the summaries.
    pub fn classify(&self, s: &mut Session, weighted: Option<Var>, pooled: Var) -> Result<Var> {
        let (head, input) = match weighted {
            Some(w) => (self.classifier, s.tape.concat(&[w, pooled], 1)?),
            None => (self.pooled_classifier, pooled),
        };
        let (w, b) = (s.param(head.w), s.param(head.bias));
        let z = s.tape.matmul(input, w)?;
        s.tape.add(z, b)
    }

    pub fn forward(
        &self,
        s: &mut Session,
        event: &PreparedEvent,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Forward> {
        let mut trace = AttentionTrace::new(event.node_ids.clone(), event.mask.clone());
        let mut h = self.encode(s, event)?;
        for l in 0..self.config.layers {
            h = self.graph_layer(s, l, h, event, training, rng, &mut trace)?;
        }
        let pooled = s.tape.mean(h, Some(0))?;
        let weighted = if self.config.event_attention {
            let (beta, summary) = self.event_attention(s, h)?;
            trace.beta = Some(s.tape.value(beta).data().to_vec());
            Some(summary)
        } else {
            None
        };
        let logits = self.classify(s, weighted, pooled)?;
        Ok(Forward { logits, trace })
    }

    /// Cross-entropy of one event plus `l2` times the squared norm of every
    /// bound weight matrix.
    pub fn loss(
        &self,
        s: &mut Session,
        event: &PreparedEvent,
        l2: f64,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let f = self.forward(s, event, training, rng)?;
        let decayed = s.decayed();
        s.tape.cross_entropy_with_l2(f.logits, event.target, &decayed, l2)
    }

    /// Class probabilities and trace for one event, in evaluation mode.
    pub fn predict(&self, event: &PreparedEvent) -> Result<(Vec<f64>, AttentionTrace)> {
        let mut s = self.session(false);
        self.predict_in(&mut s, event)
    }

    /// Like [`Model::predict`] on a session from [`Model::session`]; the
    /// session's tape is restored afterwards.
    pub fn predict_in(&self, s: &mut Session, event: &PreparedEvent) -> Result<(Vec<f64>, AttentionTrace)> {
        let mark = s.mark();
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        let f = self.forward(s, event, false, &mut unused)?;
        let probs = softmax(s.tape.value(f.logits).data());
        s.rewind(mark);
        Ok((probs, f.trace))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
