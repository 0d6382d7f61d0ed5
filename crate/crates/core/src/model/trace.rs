use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Attention weights recorded by a forward pass (before any dropout).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub node_ids: Vec<String>,
    /// Row-major neighborhood mask, `n × n`.
    pub mask: Vec<bool>,
    /// Per graph layer, one `n × n` weight matrix per head. Empty for the
    /// fixed-weight convolution ablation.
    pub layers: Vec<Vec<Tensor>>,
    /// Event-level weights, when event attention is on.
    pub beta: Option<Vec<f64>>,
}

pub const ATTENTION_HEADER: &str = "node_id\tlayer\tneighbor_id\tweight";
pub const BETA_HEADER: &str = "node_id\tbeta";

impl AttentionTrace {
    pub fn new(node_ids: Vec<String>, mask: Vec<bool>) -> Self {
        AttentionTrace {
            node_ids,
            mask,
            layers: Vec::new(),
            beta: None,
        }
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Head-averaged weights of `layer`.
    pub fn head_mean(&self, layer: usize) -> Tensor {
        let heads = &self.layers[layer];
        let n = self.len();
        let mut data = vec![0.0; n * n];
        for h in heads {
            for (acc, v) in data.iter_mut().zip(h.data()) {
                *acc += v;
            }
        }
        let k = heads.len() as f64;
        data.iter_mut().for_each(|v| *v /= k);
        Tensor::matrix(n, n, data).expect("square")
    }

    /// Head-averaged neighbor weights of every layer, one row per
    /// (node, layer, neighbor) inside the neighborhood. Layers count from 1.
    pub fn attention_tsv(&self) -> String {
        let n = self.len();
        let mut out = format!("{ATTENTION_HEADER}\n");
        for l in 0..self.layers.len() {
            let mean = self.head_mean(l);
            for i in 0..n {
                for j in 0..n {
                    if self.mask[i * n + j] {
                        out.push_str(&format!(
                            "{}\t{}\t{}\t{}\n",
                            self.node_ids[i],
                            l + 1,
                            self.node_ids[j],
                            mean.get(i, j)
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn beta_tsv(&self) -> Option<String> {
        let beta = self.beta.as_ref()?;
        let mut out = format!("{BETA_HEADER}\n");
        for (id, b) in self.node_ids.iter().zip(beta) {
            out.push_str(&format!("{id}\t{b}\n"));
        }
        Some(out)
    }
}

/// Reads a `beta_tsv` export back into (node_id, beta) pairs.
pub fn parse_beta_tsv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == BETA_HEADER || line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let (id, value) = line.split_once('\t').ok_or_else(|| bad("expected two fields"))?;
        let value = value.parse::<f64>().map_err(|_| bad("bad weight"))?;
        out.push((id.to_string(), value));
    }
    Ok(out)
}

/// Reads an `attention_tsv` export into (node_id, layer, neighbor_id, weight).
pub fn parse_attention_tsv(text: &str) -> Result<Vec<(String, usize, String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line == ATTENTION_HEADER || line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected four fields"));
        }
        let layer = f[1].parse().map_err(|_| bad("bad layer"))?;
        let weight = f[3].parse().map_err(|_| bad("bad weight"))?;
        out.push((f[0].to_string(), layer, f[2].to_string(), weight));
    }
    Ok(out)
}
