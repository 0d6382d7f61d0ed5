use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Frozen word vectors for a vocabulary, plus the initial out-of-vocabulary
/// vector.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    matrix: Tensor,
    unk: Vec<f64>,
}

fn unk_vector(dim: usize, seed_value: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_value, "unk");
    (0..dim).map(|_| rng.gen_range(-0.05..0.05)).collect()
}

impl EmbeddingTable {
    fn from_rows(tokens: Vec<String>, rows: Vec<f64>, dim: usize, seed_value: u64) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let matrix = Tensor::matrix(tokens.len(), dim, rows).expect("rows match dim");
        EmbeddingTable {
            index,
            tokens,
            matrix,
            unk: unk_vector(dim, seed_value),
        }
    }

    /// Table over `tokens` with one matrix row each.
    pub fn from_matrix(tokens: Vec<String>, matrix: Tensor, seed_value: u64) -> Result<Self> {
        if matrix.rank() != 2 || matrix.rows() != tokens.len() {
            return Err(Error::shape("embedding table", matrix.shape(), &[tokens.len()]));
        }
        let unique: std::collections::HashSet<&String> = tokens.iter().collect();
        if unique.len() != tokens.len() {
            return Err(Error::Contract("duplicate token in embedding table".into()));
        }
        let dim = matrix.cols();
        Ok(Self::from_rows(tokens, matrix.into_data(), dim, seed_value))
    }

    /// Deterministic random vectors: each token's row depends only on
    /// `(seed, token)`, so two tables over different vocabularies agree on
    /// their shared tokens.
    pub fn random(vocab: &BTreeSet<String>, dim: usize, seed_value: u64) -> Self {
        let mut rows = Vec::with_capacity(vocab.len() * dim);
        for tok in vocab {
            let mut rng = seed::rng(seed_value, &format!("embedding/{tok}"));
            rows.extend((0..dim).map(|_| rng.gen_range(-0.5..0.5)));
        }
        Self::from_rows(vocab.iter().cloned().collect(), rows, dim, seed_value)
    }

    /// Reads the plain-text format (`token v1 … v_dim` per line), keeping
    /// rows for tokens in `vocab`. An optional word2vec-style `count dim`
    /// header line is skipped. Every line is validated.
    pub fn read<R: Read>(
        reader: R,
        vocab: &BTreeSet<String>,
        dim: usize,
        seed_value: u64,
    ) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut rows = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if line_no == 1
                && values.len() == 1
                && token.parse::<usize>().is_ok()
                && values[0].parse::<usize>().is_ok()
            {
                continue;
            }
            if values.len() != dim {
                return Err(Error::Dimension {
                    line: line_no,
                    expected: dim,
                    found: values.len(),
                });
            }
            let parsed: Vec<f64> = values
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            msg: format!("bad value `{v}` for token `{token}`"),
                        })
                })
                .collect::<Result<_>>()?;
            if vocab.contains(token) && seen.insert(token.to_string()) {
                tokens.push(token.to_string());
                rows.extend(parsed);
            }
        }
        Ok(Self::from_rows(tokens, rows, dim, seed_value))
    }

    pub fn load(
        path: impl AsRef<Path>,
        vocab: &BTreeSet<String>,
        dim: usize,
        seed_value: u64,
    ) -> Result<Self> {
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        Self::read(file, vocab, dim, seed_value)
    }

    /// Writes the table in the same text format `read` accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in self.matrix.row(i) {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn unk(&self) -> &[f64] {
        &self.unk
    }

    /// Vector for `token`, falling back to the UNK vector.
    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.index(token) {
            Some(i) => self.row(i),
            None => &self.unk,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn reads_rows_and_falls_back_to_unk() {
        let text = "fake 0.1 0.2 0.3\ntrue -1 0 1\nother 1 1 1\n";
        let t = EmbeddingTable::read(text.as_bytes(), &vocab(&["fake", "true", "absent"]), 3, 1)
            .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup("true"), &[-1.0, 0.0, 1.0]);
        assert_eq!(t.lookup("absent"), t.unk());
        assert!(t.unk().iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn header_is_skipped() {
        let t = EmbeddingTable::read("2 3\nfake 0 0 1\n".as_bytes(), &vocab(&["fake"]), 3, 1).unwrap();
        assert_eq!(t.lookup("fake"), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn malformed_and_wrong_width_lines() {
        let v = vocab(&["a"]);
        assert!(matches!(
            EmbeddingTable::read("a 1 2\nb 1 x 3\n".as_bytes(), &v, 2, 0),
            Err(Error::Dimension { line: 2, expected: 2, found: 3 })
        ));
        assert!(matches!(
            EmbeddingTable::read("a 1 2\nb 1 x\n".as_bytes(), &v, 2, 0),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn text_round_trip_is_bit_identical() {
        let v = vocab(&["a", "b", "c"]);
        let t = EmbeddingTable::random(&v, 7, 42);
        let back = EmbeddingTable::read(t.to_text().as_bytes(), &v, 7, 42).unwrap();
        for w in &v {
            let (x, y) = (t.lookup(w), back.lookup(w));
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn random_rows_depend_only_on_seed_and_token() {
        let small = EmbeddingTable::random(&vocab(&["a"]), 4, 9);
        let big = EmbeddingTable::random(&vocab(&["a", "b"]), 4, 9);
        assert_eq!(small.lookup("a"), big.lookup("a"));
        assert_ne!(big.lookup("a"), big.lookup("b"));
    }
}
