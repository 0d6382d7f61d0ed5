mod common;

use clahi::encoder::{resolve, tokenize, BiLstmEncoder, EmbeddingTable, TokenRef, MAX_TOKENS};
use clahi::tensor::{ParamId, ParamStore, Session, Tensor};
use common::{lstm, table, Mat, WORDS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(dim: usize, hidden: usize, fine_tune: bool, seed: u64) -> (ParamStore, BiLstmEncoder, EmbeddingTable) {
    let table = table(dim, seed);
    let mut store = ParamStore::new();
    let enc = BiLstmEncoder::register(&mut store, &table, hidden, fine_tune, &mut ChaCha8Rng::seed_from_u64(seed));
    // move biases off their initial values so every gate block is exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for id in [enc.forward.bias, enc.backward.bias] {
        for v in store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    (store, enc, table)
}

fn posts(texts: &[&str], table: &EmbeddingTable) -> Vec<Vec<TokenRef>> {
    texts.iter().map(|t| resolve(&tokenize(t, MAX_TOKENS), table)).collect()
}

fn encode(store: &ParamStore, enc: &BiLstmEncoder, table: &EmbeddingTable, posts: &[Vec<TokenRef>]) -> Tensor {
    let mut s = Session::new(store, false);
    let x = enc.encode(&mut s, posts, table).unwrap();
    s.tape.value(x).clone()
}

fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[test]
fn two_unit_recurrence_matches_the_oracle() {
    let (store, enc, table) = setup(5, 2, false, 4);
    let texts = ["true", "fake news really", "why zzunseen source hoax agree", "zzunseen"];
    let refs = posts(&texts, &table);
    let got = encode(&store, &enc, &table, &refs);
    assert_eq!(got.shape(), &[4, 4]);
    let unk = store.get(enc.unk).row(0).to_vec();
    for (i, post) in refs.iter().enumerate() {
        let xs: Vec<Vec<f64>> = post
            .iter()
            .map(|t| match t {
                TokenRef::Known(r) => table.row(*r).to_vec(),
                TokenRef::Unknown => unk.clone(),
            })
            .collect();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let dir = |p: &clahi::encoder::LstmParams, seq: &[Vec<f64>]| {
            lstm(seq, &mat(store.get(p.w_ih)), &mat(store.get(p.w_hh)), store.get(p.bias).row(0))
        };
        let want: Vec<f64> = [dir(&enc.forward, &xs), dir(&enc.backward, &rev)].concat();
        for (a, b) in got.row(i).iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "post {i}: {a} vs {b}");
        }
    }
}

#[test]
fn gradients_through_the_encoder_match_finite_differences() {
    let (store, enc, table) = setup(4, 3, true, 9);
    let refs = posts(&["true fake", "zzunseen why true", "news"], &table);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probe: Vec<f64> = (0..3 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let probe = Tensor::matrix(3, 6, probe).unwrap();
    let build = |s: &mut Session| {
        let x = enc.encode(s, &refs, &table).unwrap();
        let r = s.tape.constant(probe.clone());
        let y = s.tape.mul(x, r).unwrap();
        s.tape.sum(y, None).unwrap()
    };
    let objective = |store: &ParamStore| {
        let mut s = Session::new(store, true);
        let l = build(&mut s);
        s.tape.value(l).item()
    };
    let mut s = Session::new(&store, true);
    let l = build(&mut s);
    s.tape.backward(l).unwrap();
    let grads = s.gradients();
    let ids: Vec<ParamId> = store.ids().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in ids {
        for e in 0..store.get(id).numel() {
            let nudge = |delta: f64| {
                let mut moved = store.clone();
                moved.get_mut(id).data_mut()[e] += delta;
                objective(&moved)
            };
            let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
            let exact = grads[id.index()].data()[e];
            worst = worst.max((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6));
        }
    }
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn output_width_ignores_post_length() {
    let (store, enc, table) = setup(6, 5, false, 2);
    let long = vec![WORDS.join(" "); 8].join(" ");
    let x = encode(&store, &enc, &table, &posts(&["a", &long, "true"], &table));
    assert_eq!(x.shape(), &[3, enc.output_dim()]);
    assert_eq!(enc.output_dim(), 10);
}

#[test]
fn tokenizer_examples() {
    let cases = [
        ("RT @user: Is this REAL?? http://t.co/x", vec!["rt", "<mention>", "is", "this", "real", "?", "?", "<url>"]),
        ("   ", vec!["<empty>"]),
        ("don't", vec!["don", "'", "t"]),
        ("@", vec!["@"]),
        ("Really?!", vec!["really", "?", "!"]),
        ("", vec!["<empty>"]),
        ("see https://x.co", vec!["see", "<url>"]),
    ];
    for (text, want) in cases {
        assert_eq!(tokenize(text, MAX_TOKENS), want, "{text:?}");
    }
    assert_eq!(tokenize("a b c d", 2), ["a", "b"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn each_row_depends_only_on_its_post(seed in any::<u64>(), n in 1usize..6) {
        let (store, enc, table) = setup(4, 3, seed % 2 == 0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texts: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..6);
                (0..len).map(|_| if rng.gen_bool(0.2) { "zzunseen" } else { WORDS[rng.gen_range(0..8)] }).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let refs: Vec<Vec<TokenRef>> = texts.iter().map(|t| resolve(&tokenize(t, MAX_TOKENS), &table)).collect();
        let all = encode(&store, &enc, &table, &refs);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let shuffled: Vec<Vec<TokenRef>> = order.iter().map(|&i| refs[i].clone()).collect();
        let again = encode(&store, &enc, &table, &shuffled);
        for (k, &i) in order.iter().enumerate() {
            let alone = encode(&store, &enc, &table, &refs[i..=i]);
            prop_assert_eq!(all.row(i), alone.row(0));
            prop_assert_eq!(all.row(i), again.row(k));
        }
    }

    #[test]
    fn tokens_respect_the_cap(text in "\\PC{0,200}", cap in 1usize..20) {
        let tokens = tokenize(&text, cap);
        prop_assert!(!tokens.is_empty() && tokens.len() <= cap);
        prop_assert!(tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
    }
}
