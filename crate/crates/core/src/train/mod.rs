//! Mini-batch Adam with early stopping, k-fold cross-validation, metrics and
//! early-detection curves.

mod metrics;
mod split;

pub use metrics::MetricsReport;
pub use split::{split_folds, Split};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conversation::{truncate, Cutoff, Event, LabelScheme};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{argmax, Model, ModelConfig, PreparedEvent};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub folds: usize,
    pub holdout: f64,
    pub stratified: bool,
    /// Train folds on separate threads. Results are still reported in fold
    /// order.
    pub parallel_folds: bool,
    /// Early detection: retrain on truncated data at every checkpoint
    /// instead of evaluating one full-data model on truncations.
    pub retrain_per_checkpoint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: AdamConfig::default().lr,
            batch_size: 128,
            l2: 1e-4,
            max_epochs: 200,
            patience: 10,
            folds: 5,
            holdout: 0.1,
            stratified: true,
            parallel_folds: false,
            retrain_per_checkpoint: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch size and max epochs must be positive".into());
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return fail(format!("L2 coefficient {} must be non-negative", self.l2));
        }
        if self.folds < 2 {
            return fail(format!("need at least 2 folds, got {}", self.folds));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return fail(format!("holdout fraction {} outside [0, 1)", self.holdout));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub stopped_early: bool,
}

/// One optimization step over `batch`; returns the summed per-event loss.
/// Dropout draws come from `rng`, in batch order.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &[&PreparedEvent],
    l2: f64,
    rng: &mut dyn rand::RngCore,
) -> Result<f64> {
    let grads = {
        let mut s = model.session(true);
        let mark = s.mark();
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for event in batch {
            let loss = model.loss(&mut s, event, l2, true, rng)?;
            let value = s.tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch: 0,
                    batch: 0,
                    loss: value,
                });
            }
            total += value;
            let scaled = s.tape.scale(loss, scale);
            s.tape.backward(scaled)?;
            s.rewind(mark);
        }
        let grads = s.gradients();
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Contract(format!(
                "non-finite gradient for {}",
                model.store.name(model.store.ids().nth(bad).expect("id"))
            )));
        }
        (grads, total)
    };
    adam.step(&mut model.store, &grads.0)?;
    Ok(grads.1)
}

/// Trains `model` in place. After the last epoch the parameters from the
/// best validation epoch are restored.
pub fn train_fold(
    model: &mut Model,
    train: &[PreparedEvent],
    valid: &[PreparedEvent],
    cfg: &TrainConfig,
    seed_value: u64,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut adam = AdamState::new(&model.store, cfg.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut epochs = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut seed::rng(seed_value, &format!("shuffle/{epoch}")));
        let mut dropout = seed::rng(seed_value, &format!("dropout/{epoch}"));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedEvent> = chunk.iter().map(|&i| &train[i]).collect();
            loss_sum += train_step(model, &mut adam, &batch, cfg.l2, &mut dropout).map_err(|e| match e {
                Error::NonFinite { loss, .. } => Error::NonFinite {
                    epoch,
                    batch: b + 1,
                    loss,
                },
                other => other,
            })?;
        }
        let valid_accuracy = accuracy(model, valid)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            valid_accuracy,
        });
        if best.as_ref().is_none_or(|b| valid_accuracy > b.1) {
            best = Some((epoch, valid_accuracy, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_valid_accuracy, store) = best.expect("at least one epoch");
    model.store = store;
    Ok(History {
        epochs,
        best_epoch,
        best_valid_accuracy,
        stopped_early,
    })
}

/// Probabilities per event, in input order.
pub fn predict_all(model: &Model, events: &[PreparedEvent]) -> Result<Vec<Vec<f64>>> {
    let mut s = model.session(false);
    events.iter().map(|e| model.predict_in(&mut s, e).map(|p| p.0)).collect()
}

pub fn evaluate(model: &Model, events: &[PreparedEvent], classes: Vec<String>) -> Result<MetricsReport> {
    let probs = predict_all(model, events)?;
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truth: Vec<usize> = events.iter().map(|e| e.target).collect();
    Ok(MetricsReport::from_predictions(classes, &truth, &predicted))
}

pub fn accuracy(model: &Model, events: &[PreparedEvent]) -> Result<f64> {
    let names = (0..model.config.classes).map(|c| c.to_string()).collect();
    Ok(evaluate(model, events, names)?.accuracy)
}

pub fn prepare_all(model: &Model, events: &[&Event]) -> Result<Vec<PreparedEvent>> {
    events.iter().map(|e| model.prepare(e)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_events: usize,
    pub test_events: usize,
    pub history: History,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub split: Split,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_f1: Vec<f64>,
}

/// Everything a run needs besides the data.
#[derive(Clone, Debug)]
pub struct Setup<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub table: &'a EmbeddingTable,
    pub scheme: LabelScheme,
    pub seed: u64,
}

impl Setup<'_> {
    pub fn fresh_model(&self) -> Result<Model> {
        let mut config = self.model.clone();
        config.classes = self.scheme.num_classes();
        Model::new(config, self.table.clone(), seed::derive(self.seed, "init"))
    }
}

/// Holdout first, then `k`-fold cross-validation on the rest. The holdout
/// set drives early stopping in every fold; when it is empty, each fold
/// stops on its own training accuracy.
pub fn cross_validate(events: &[Event], setup: &Setup) -> Result<CvReport> {
    setup.train.validate()?;
    let labels: Vec<usize> = events.iter().map(|e| e.label().class_index()).collect();
    let split = split_folds(
        &labels,
        setup.train.folds,
        setup.train.holdout,
        seed::derive(setup.seed, "split"),
        setup.train.stratified,
    )?;
    let run_fold = |i: usize| -> Result<FoldReport> {
        let mut model = setup.fresh_model()?;
        let pick = |idx: &[usize]| -> Result<Vec<PreparedEvent>> {
            idx.iter().map(|&j| model.prepare(&events[j])).collect()
        };
        let train = pick(&split.train_indices(i))?;
        let test = pick(&split.folds[i])?;
        let holdout = pick(&split.holdout)?;
        let valid = if holdout.is_empty() { &train } else { &holdout };
        let history = train_fold(
            &mut model,
            &train,
            valid,
            setup.train,
            seed::derive(setup.seed, &format!("train/fold/{i}")),
        )?;
        let metrics = evaluate(&model, &test, setup.scheme.class_names())?;
        Ok(FoldReport {
            fold: i + 1,
            train_events: train.len(),
            test_events: test.len(),
            history,
            metrics,
        })
    };
    let k = setup.train.folds;
    let folds: Vec<FoldReport> = if setup.train.parallel_folds {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..k).map(|i| scope.spawn(move || run_fold(i))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold thread panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        (0..k).map(run_fold).collect::<Result<_>>()?
    };
    let mean_accuracy = folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / k as f64;
    let classes = setup.scheme.num_classes();
    let mean_f1 = (0..classes)
        .map(|c| folds.iter().map(|f| f.metrics.f1[c]).sum::<f64>() / k as f64)
        .collect();
    Ok(CvReport {
        split,
        folds,
        mean_accuracy,
        mean_f1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub checkpoint: String,
    pub accuracy: f64,
    pub metrics: MetricsReport,
}

pub fn check_ascending(cutoffs: &[Cutoff]) -> Result<()> {
    for w in cutoffs.windows(2) {
        if !w[0].precedes(w[1]) {
            return Err(Error::Config(format!(
                "checkpoints must ascend within one mode: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Evaluates `model` on every test event truncated at each checkpoint.
pub fn early_detection_curve(model: &Model, events: &[Event], cutoffs: &[Cutoff]) -> Result<Vec<CurvePoint>> {
    check_ascending(cutoffs)?;
    let names: Vec<String> = (0..model.config.classes)
        .map(|c| {
            events
                .first()
                .and_then(|e| e.label().scheme().label(c))
                .map_or(c.to_string(), |l| l.to_string())
        })
        .collect();
    cutoffs
        .iter()
        .map(|&cut| {
            let prepared = events
                .iter()
                .map(|e| model.prepare(&truncate(e, cut)))
                .collect::<Result<Vec<_>>>()?;
            let metrics = evaluate(model, &prepared, names.clone())?;
            Ok(CurvePoint {
                checkpoint: cut.to_string(),
                accuracy: metrics.accuracy,
                metrics,
            })
        })
        .collect()
}
