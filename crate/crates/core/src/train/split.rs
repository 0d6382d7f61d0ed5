use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Index sets into the corpus: a holdout set and `k` disjoint folds that
/// together cover everything else.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub holdout: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl Split {
    /// Every index outside fold `i` and the holdout, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Splits `labels.len()` items. With `stratified`, items are ordered class by
/// class (each class shuffled), the holdout is taken at evenly spaced
/// positions of that order and the rest are dealt round-robin, so every
/// part keeps the class mix within one item per class.
pub fn split_folds(
    labels: &[usize],
    k: usize,
    holdout_fraction: f64,
    seed_value: u64,
    stratified: bool,
) -> Result<Split> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::Config(format!("holdout fraction {holdout_fraction} outside [0, 1)")));
    }
    let held = (holdout_fraction * n as f64).round() as usize;
    if n - held < k {
        return Err(Error::Config(format!(
            "{} events left after the holdout cannot fill {k} folds",
            n - held
        )));
    }
    let mut rng = seed::rng(seed_value, "split");
    let order: Vec<usize> = if stratified {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut out = Vec::with_capacity(n);
        for c in 0..classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if !members.is_empty() && members.len() < k {
                return Err(Error::Config(format!(
                    "class {c} has {} events, fewer than {k} folds",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            out.extend(members);
        }
        out
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };

    let mut is_held = vec![false; n];
    if stratified {
        for i in 0..held {
            let pos = ((2 * i + 1) * n) / (2 * held);
            is_held[pos] = true;
        }
    } else {
        is_held[..held].fill(true);
    }
    let mut holdout = Vec::with_capacity(held);
    let mut folds = vec![Vec::new(); k];
    let mut dealt = 0;
    for (pos, &item) in order.iter().enumerate() {
        if is_held[pos] {
            holdout.push(item);
        } else {
            folds[dealt % k].push(item);
            dealt += 1;
        }
    }
    holdout.sort_unstable();
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(Split { holdout, folds })
}
