//! Post encoder: tokens → word vectors → single-layer bidirectional LSTM.
//! A post's vector is the forward LSTM's last hidden state joined with the
//! backward LSTM's last hidden state (after reading the post reversed).

mod embeddings;
mod tokenize;

pub use embeddings::EmbeddingTable;
pub use tokenize::{tokenize, EMPTY, MAX_TOKENS, MENTION, URL};

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::conversation::Event;
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Session, Tensor, Var};

/// A token resolved against an embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenRef {
    Known(usize),
    Unknown,
}

pub fn resolve(tokens: &[String], table: &EmbeddingTable) -> Vec<TokenRef> {
    tokens
        .iter()
        .map(|t| table.index(t).map_or(TokenRef::Unknown, TokenRef::Known))
        .collect()
}

/// Every token appearing in `events`, for building an embedding table.
pub fn vocabulary<'a>(events: impl IntoIterator<Item = &'a Event>, max_tokens: usize) -> BTreeSet<String> {
    events
        .into_iter()
        .flat_map(|e| e.posts())
        .flat_map(|p| tokenize(&p.text, max_tokens))
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    /// input → gates, `dim × 4h`, gate blocks ordered input, forget, cell, output
    pub w_ih: ParamId,
    /// hidden → gates, `h × 4h`
    pub w_hh: ParamId,
    /// `1 × 4h`
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmEncoder {
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// Trainable out-of-vocabulary vector, `1 × dim`.
    pub unk: ParamId,
    /// Present when word vectors are fine-tuned rather than frozen.
    pub table: Option<ParamId>,
    pub hidden: usize,
    pub input_dim: usize,
}

impl BiLstmEncoder {
    /// Registers encoder parameters: weights uniform in ±1/√hidden, forget
    /// gate bias 1.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        table: &EmbeddingTable,
        hidden: usize,
        fine_tune: bool,
        rng: &mut R,
    ) -> Self {
        let dim = table.dim();
        let bound = 1.0 / (hidden as f64).sqrt();
        let uniform = |rows: usize, cols: usize, rng: &mut R| {
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, cols, data).expect("shape")
        };
        let direction = |store: &mut ParamStore, name: &str, rng: &mut R| {
            let w_ih = store.register(format!("encoder.{name}.w_ih"), uniform(dim, 4 * hidden, rng), true);
            let w_hh = store.register(format!("encoder.{name}.w_hh"), uniform(hidden, 4 * hidden, rng), true);
            let mut b = uniform(1, 4 * hidden, rng);
            b.data_mut()[hidden..2 * hidden].fill(1.0);
            let bias = store.register(format!("encoder.{name}.bias"), b, false);
            LstmParams { w_ih, w_hh, bias }
        };
        let forward = direction(store, "fwd", rng);
        let backward = direction(store, "bwd", rng);
        let unk = store.register(
            "encoder.unk",
            Tensor::matrix(1, dim, table.unk().to_vec()).expect("shape"),
            false,
        );
        let table = fine_tune.then(|| store.register("encoder.table", table.matrix().clone(), false));
        BiLstmEncoder {
            forward,
            backward,
            unk,
            table,
            hidden,
            input_dim: dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Encodes every post of an event; row i of the result is post i.
    /// Each post must have at least one token.
    pub fn encode(&self, s: &mut Session, posts: &[Vec<TokenRef>], table: &EmbeddingTable) -> Result<Var> {
        // project each distinct token once per event
        let mut slots: BTreeMap<TokenRef, usize> = BTreeMap::new();
        for t in posts.iter().flatten() {
            let next = slots.len();
            slots.entry(*t).or_insert(next);
        }
        let mut ordered: Vec<(TokenRef, usize)> = slots.iter().map(|(t, i)| (*t, *i)).collect();
        ordered.sort_by_key(|&(_, i)| i);

        let known: Vec<usize> = ordered
            .iter()
            .filter_map(|(t, _)| match t {
                TokenRef::Known(r) => Some(*r),
                TokenRef::Unknown => None,
            })
            .collect();
        let mut blocks = Vec::new();
        if !known.is_empty() {
            let rows = match self.table {
                Some(id) => {
                    let t = s.param(id);
                    s.tape.select_rows(t, &known)?
                }
                None => {
                    let rows: Vec<&[f64]> = known.iter().map(|&r| table.row(r)).collect();
                    s.tape.constant(Tensor::from_rows(&rows)?)
                }
            };
            blocks.push(rows);
        }
        let has_unk = slots.contains_key(&TokenRef::Unknown);
        if has_unk {
            let u = s.param(self.unk);
            blocks.push(u);
        }
        // final row layout: known tokens in slot order, then UNK
        let mut row_of: BTreeMap<TokenRef, usize> = BTreeMap::new();
        let mut next = 0;
        for (t, _) in &ordered {
            if let TokenRef::Known(_) = t {
                row_of.insert(*t, next);
                next += 1;
            }
        }
        if has_unk {
            row_of.insert(TokenRef::Unknown, next);
        }
        let inputs = if blocks.len() == 1 {
            blocks[0]
        } else {
            s.tape.concat(&blocks, 0)?
        };

        let fwd_proj = self.project(s, inputs, &self.forward)?;
        let bwd_proj = self.project(s, inputs, &self.backward)?;
        let mut rows = Vec::with_capacity(posts.len());
        for post in posts {
            let idx: Vec<usize> = post.iter().map(|t| row_of[t]).collect();
            let hf = self.run(s, fwd_proj, &self.forward, idx.iter().copied())?;
            let hb = self.run(s, bwd_proj, &self.backward, idx.iter().rev().copied())?;
            rows.push(s.tape.concat(&[hf, hb], 1)?);
        }
        s.tape.concat(&rows, 0)
    }

    fn project(&self, s: &mut Session, inputs: Var, p: &LstmParams) -> Result<Var> {
        let w = s.param(p.w_ih);
        let b = s.param(p.bias);
        let xw = s.tape.matmul(inputs, w)?;
        s.tape.add(xw, b)
    }

    /// Runs one direction over pre-projected token rows; returns the last
    /// hidden state (`1 × h`).
    fn run(
        &self,
        s: &mut Session,
        proj: Var,
        p: &LstmParams,
        steps: impl Iterator<Item = usize>,
    ) -> Result<Var> {
        let h = self.hidden;
        let w_hh = s.param(p.w_hh);
        let mut state: Option<(Var, Var)> = None;
        for row in steps {
            let mut z = s.tape.select_rows(proj, &[row])?;
            if let Some((hidden, _)) = state {
                let rec = s.tape.matmul(hidden, w_hh)?;
                z = s.tape.add(z, rec)?;
            }
            let zi = s.tape.slice_cols(z, 0, h)?;
            let zf = s.tape.slice_cols(z, h, h)?;
            let zg = s.tape.slice_cols(z, 2 * h, h)?;
            let zo = s.tape.slice_cols(z, 3 * h, h)?;
            let i = s.tape.sigmoid(zi);
            let g = s.tape.tanh(zg);
            let o = s.tape.sigmoid(zo);
            let ig = s.tape.mul(i, g)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let f = s.tape.sigmoid(zf);
                    let fc = s.tape.mul(f, c_prev)?;
                    s.tape.add(fc, ig)?
                }
                None => ig,
            };
            let tc = s.tape.tanh(c);
            let hidden = s.tape.mul(o, tc)?;
            state = Some((hidden, c));
        }
        match state {
            Some((hidden, _)) => Ok(hidden),
            None => Ok(s.tape.constant(Tensor::zeros(&[1, h]))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(hidden: usize, dim: usize) -> (ParamStore, BiLstmEncoder, EmbeddingTable) {
        let vocab: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let table = EmbeddingTable::random(&vocab, dim, 5);
        let mut store = ParamStore::new();
        let enc = BiLstmEncoder::register(&mut store, &table, hidden, false, &mut ChaCha8Rng::seed_from_u64(1));
        (store, enc, table)
    }

    fn encode(store: &ParamStore, enc: &BiLstmEncoder, table: &EmbeddingTable, posts: &[&[&str]]) -> Tensor {
        let posts: Vec<Vec<TokenRef>> = posts
            .iter()
            .map(|p| resolve(&p.iter().map(|s| s.to_string()).collect::<Vec<_>>(), table))
            .collect();
        let mut s = Session::new(store, false);
        let x = enc.encode(&mut s, &posts, table).unwrap();
        s.tape.value(x).clone()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (mut store, enc, table) = toy(4, 6);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&shape);
        }
        let x = encode(&store, &enc, &table, &[&["a", "b"], &["zzz"]]);
        assert_eq!(x.shape(), &[2, 8]);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_independent_and_deterministic() {
        let (store, enc, table) = toy(3, 5);
        let together = encode(&store, &enc, &table, &[&["a", "c"], &["b", "zzz", "a"]]);
        let alone = encode(&store, &enc, &table, &[&["b", "zzz", "a"]]);
        assert_eq!(together.row(1), alone.row(0));
        let again = encode(&store, &enc, &table, &[&["a", "c"], &["b", "zzz", "a"]]);
        assert_eq!(together, again);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (store, enc, _) = toy(3, 5);
        let b = store.get(enc.forward.bias);
        assert_eq!(&b.data()[3..6], &[1.0, 1.0, 1.0]);
    }
}
