use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{Command, EvalArgs, RunArgs, RunConfig, Subset, SynthArgs, OUT_DIR_ENV};
use crate::conversation::{parse_events, twitter, write_events, Corpus, Cutoff, Direction, Event, StructureVariant};
use crate::encoder::{vocabulary, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Gnn, Model, PostAttention, PreparedEvent};
use crate::synth::{generate, sibling_task, SynthSpec};
use crate::train::{
    check_ascending, cross_validate, early_detection_curve, evaluate, split_folds, train_fold, CvReport, Setup,
};
use crate::seed;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Validate { data } => validate(&data, out),
        Command::Synth(args) => synth(&args, out),
        Command::Train(args) => train(&RunConfig::resolve(&args, env_out())?, out).map(|_| ()),
        Command::Eval(args) => eval(&args, out),
        Command::Cv(args) => cv(&RunConfig::resolve(&args, env_out())?, out),
        Command::Ablate { run, variants } => ablate(&RunConfig::resolve(&run, env_out())?, &variants, out),
        Command::Early {
            run,
            checkpoints,
            checkpoint,
            subset,
            retrain,
        } => early(&run, &checkpoints, checkpoint.as_deref(), subset, retrain, out),
        Command::ExportAttention {
            checkpoint,
            data,
            event_id,
            out: dir,
        } => export_attention(&checkpoint, &data, &event_id, dir, out),
        Command::ConvertTwitter { dir, out: dest } => convert_twitter(&dir, &dest, out),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::new(parse_events(path)?)
}

fn histogram(values: impl Iterator<Item = usize>) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_default() += 1;
    }
    h
}

fn validate(data: &Path, out: &mut dyn Write) -> Result<()> {
    let corpus = load_corpus(data)?;
    let events = &corpus.events;
    let nodes: usize = events.iter().map(Event::len).sum();
    let mut text = String::new();
    let _ = writeln!(text, "events (claims)\t{}", events.len());
    let _ = writeln!(text, "tree nodes\t{nodes}");
    let _ = writeln!(text, "avg posts per tree\t{:.2}", nodes as f64 / events.len() as f64);
    let _ = writeln!(text, "label scheme\t{:?}", corpus.scheme);
    for (name, count) in corpus.scheme.class_names().iter().zip(corpus.class_counts()) {
        let _ = writeln!(text, "class {name}\t{count}");
    }
    let depths: Vec<usize> = events.iter().map(Event::max_depth).collect();
    let shallow = depths.iter().filter(|&&d| d <= 3).count();
    let _ = writeln!(text, "shallow (depth <= 3)\t{shallow}");
    let _ = writeln!(text, "deep (depth >= 4)\t{}", depths.len() - shallow);
    let _ = writeln!(text, "depth histogram");
    for (d, c) in histogram(depths.into_iter()) {
        let _ = writeln!(text, "  depth {d}\t{c}");
    }
    let _ = writeln!(text, "post-count histogram");
    for (n, c) in histogram(events.iter().map(Event::len)) {
        let _ = writeln!(text, "  posts {n}\t{c}");
    }
    say(out, &text)
}

fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = args.events {
        spec.events = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(r) = args.rule {
        spec.rule = r;
    }
    let (events, ceiling) = if args.sibling_task {
        let c = sibling_task(&spec)?;
        (c.events, Some(c.path_ceiling))
    } else {
        (generate(&spec)?, None)
    };
    write_events(&args.out, &events)?;
    let corpus = Corpus::new(events)?;
    let mut text = format!("wrote {} events to {}\n", corpus.events.len(), args.out.display());
    for (name, count) in corpus.scheme.class_names().iter().zip(corpus.class_counts()) {
        let _ = writeln!(text, "class {name}\t{count}");
    }
    if let Some(c) = ceiling {
        let _ = writeln!(text, "path-only ceiling\t{c}");
    }
    say(out, &text)
}

fn embedding_table(cfg: &RunConfig, events: &[Event]) -> Result<EmbeddingTable> {
    let vocab = vocabulary(events, cfg.model.max_tokens);
    let seed_value = cfg.embedding_seed();
    match &cfg.embeddings.path {
        Some(p) => EmbeddingTable::load(p, &vocab, cfg.embeddings.dim, seed_value),
        None => Ok(EmbeddingTable::random(&vocab, cfg.embeddings.dim, seed_value)),
    }
}

/// Loads data and embeddings and fixes the class count from the data.
fn prepare_run(cfg: &RunConfig) -> Result<(RunConfig, Corpus, EmbeddingTable)> {
    let corpus = load_corpus(cfg.data_path()?)?;
    let table = embedding_table(cfg, &corpus.events)?;
    let mut cfg = cfg.clone();
    cfg.model.classes = corpus.scheme.num_classes();
    Ok((cfg, corpus, table))
}

fn snapshot(cfg: &RunConfig) -> Result<()> {
    write_file(&cfg.out.join("config.toml"), &cfg.to_toml()?)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub struct Trained {
    pub model: Model,
    pub valid: Vec<usize>,
    pub best_valid_accuracy: f64,
}

/// Holdout split for `train` and `early`: the holdout validates, the rest trains.
fn train_on(cfg: &RunConfig, corpus: &Corpus, table: &EmbeddingTable, events: &[Event]) -> Result<(Trained, crate::train::History)> {
    let labels: Vec<usize> = events.iter().map(|e| e.label().class_index()).collect();
    let split = split_folds(
        &labels,
        cfg.train.folds,
        cfg.train.holdout,
        seed::derive(cfg.seed, "split"),
        cfg.train.stratified,
    )?;
    if split.holdout.is_empty() {
        return Err(Error::Config("training needs a non-empty holdout (--holdout)".into()));
    }
    let mut train_idx: Vec<usize> = split.folds.concat();
    train_idx.sort_unstable();
    let setup = Setup {
        model: &cfg.model,
        train: &cfg.train,
        table,
        scheme: corpus.scheme,
        seed: cfg.seed,
    };
    let mut model = setup.fresh_model()?;
    let prep = |idx: &[usize], m: &Model| -> Result<Vec<PreparedEvent>> { idx.iter().map(|&i| m.prepare(&events[i])).collect() };
    let train = prep(&train_idx, &model)?;
    let valid = prep(&split.holdout, &model)?;
    let history = train_fold(&mut model, &train, &valid, &cfg.train, seed::derive(cfg.seed, "train"))?;
    Ok((
        Trained {
            model,
            best_valid_accuracy: history.best_valid_accuracy,
            valid: split.holdout,
        },
        history,
    ))
}

fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<Trained> {
    let (cfg, corpus, table) = prepare_run(cfg)?;
    let (trained, history) = train_on(&cfg, &corpus, &table, &corpus.events)?;
    let valid_ids: Vec<&str> = trained.valid.iter().map(|&i| corpus.events[i].id()).collect();
    let meta = json!({
        "run": cfg,
        "scheme": corpus.scheme,
        "valid_event_ids": valid_ids,
        "best_epoch": history.best_epoch,
        "best_valid_accuracy": trained.best_valid_accuracy,
    });
    let ckpt = Checkpoint::from_model(&trained.model, seed::derive(cfg.seed, "init"), meta);
    write_file(&cfg.out.join("checkpoint.json"), &ckpt.to_json()?)?;
    let valid: Vec<PreparedEvent> = trained
        .valid
        .iter()
        .map(|&i| trained.model.prepare(&corpus.events[i]))
        .collect::<Result<_>>()?;
    let metrics = evaluate(&trained.model, &valid, corpus.scheme.class_names())?;
    write_file(&cfg.out.join("metrics.json"), &to_json(&json!({ "valid": metrics, "history": history }))?)?;
    let mut tsv = String::from("epoch\ttrain_loss\tvalid_accuracy\n");
    for e in &history.epochs {
        let _ = writeln!(tsv, "{}\t{}\t{}", e.epoch, e.train_loss, e.valid_accuracy);
    }
    write_file(&cfg.out.join("history.tsv"), &tsv)?;
    snapshot(&cfg)?;
    say(
        out,
        &format!(
            "best epoch {} of {}\nvalidation {}checkpoint {}\n",
            history.best_epoch,
            history.epochs.len(),
            metrics.summary(),
            cfg.out.join("checkpoint.json").display()
        ),
    )?;
    Ok(trained)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Model)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.to_model()?;
    Ok((ckpt, model))
}

/// Events of `corpus` selected by `subset` against the checkpoint record.
fn select(ckpt: &Checkpoint, corpus: &Corpus, subset: Subset) -> Result<Vec<Event>> {
    match subset {
        Subset::All => Ok(corpus.events.clone()),
        Subset::Valid => {
            let ids: HashSet<&str> = ckpt.meta["valid_event_ids"]
                .as_array()
                .ok_or_else(|| Error::Contract("checkpoint records no validation events".into()))?
                .iter()
                .filter_map(|v| v.as_str())
                .collect();
            let picked: Vec<Event> = corpus.events.iter().filter(|e| ids.contains(e.id())).cloned().collect();
            if picked.len() != ids.len() {
                return Err(Error::Contract(format!(
                    "data holds {} of the {} recorded validation events",
                    picked.len(),
                    ids.len()
                )));
            }
            Ok(picked)
        }
    }
}

fn checkpoint_data(ckpt: &Checkpoint, data: Option<&Path>) -> Result<PathBuf> {
    match data {
        Some(p) => Ok(p.to_path_buf()),
        None => ckpt.meta["run"]["data"]
            .as_str()
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("no --data given and none recorded in the checkpoint".into())),
    }
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (ckpt, model) = load_checkpoint(&args.checkpoint)?;
    let corpus = load_corpus(&checkpoint_data(&ckpt, args.data.as_deref())?)?;
    let events = select(&ckpt, &corpus, args.subset)?;
    let prepared: Vec<PreparedEvent> = events.iter().map(|e| model.prepare(e)).collect::<Result<_>>()?;
    let metrics = evaluate(&model, &prepared, corpus.scheme.class_names())?;
    if let Some(dir) = args.out.clone().or_else(env_out) {
        write_file(&dir.join("eval_metrics.json"), &to_json(&metrics)?)?;
    }
    say(out, &metrics.summary())
}

fn cv_table(report: &CvReport) -> String {
    let mut tsv = String::from("fold\ttrain_events\ttest_events\tbest_epoch\taccuracy");
    for name in &report.folds[0].metrics.classes {
        let _ = write!(tsv, "\tF1_{name}");
    }
    tsv.push('\n');
    for f in &report.folds {
        let _ = write!(
            tsv,
            "{}\t{}\t{}\t{}\t{}",
            f.fold, f.train_events, f.test_events, f.history.best_epoch, f.metrics.accuracy
        );
        for v in &f.metrics.f1 {
            let _ = write!(tsv, "\t{v}");
        }
        tsv.push('\n');
    }
    let _ = write!(tsv, "mean\t\t\t\t{}", report.mean_accuracy);
    for v in &report.mean_f1 {
        let _ = write!(tsv, "\t{v}");
    }
    tsv.push('\n');
    tsv
}

fn run_cv(cfg: &RunConfig, corpus: &Corpus, table: &EmbeddingTable) -> Result<CvReport> {
    let setup = Setup {
        model: &cfg.model,
        train: &cfg.train,
        table,
        scheme: corpus.scheme,
        seed: cfg.seed,
    };
    cross_validate(&corpus.events, &setup)
}

fn cv(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (cfg, corpus, table) = prepare_run(cfg)?;
    let report = run_cv(&cfg, &corpus, &table)?;
    write_file(&cfg.out.join("cv_report.json"), &to_json(&report)?)?;
    let table_text = cv_table(&report);
    write_file(&cfg.out.join("cv_folds.tsv"), &table_text)?;
    snapshot(&cfg)?;
    say(out, &table_text)
}

/// The ten named variants: the six component ablations and the four graph
/// structures.
pub fn ablation_registry() -> [&'static str; 10] {
    [
        "clahi-gat/dt",
        "gat+ea+sc",
        "w/o-ea",
        "w/o-pa",
        "gat",
        "gcn",
        "dt",
        "dts",
        "ud",
        "full",
    ]
}

/// Applies a registry variant on top of the full model.
pub fn apply_variant(base: &RunConfig, name: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    let m = &mut c.model;
    m.post_attention = PostAttention::On;
    m.event_attention = true;
    m.gnn = Gnn::Gat;
    m.structure = StructureVariant::UndirectedFull;
    match name {
        "clahi-gat/dt" | "dt" => m.structure = StructureVariant::DirectedTree(Direction::BottomUp),
        "dts" => m.structure = StructureVariant::DirectedTreeWithSibling(Direction::BottomUp),
        "ud" => m.structure = StructureVariant::UndirectedNoSibling,
        "full" => {}
        "gat+ea+sc" => m.post_attention = PostAttention::SimpleConcat,
        "w/o-ea" => m.event_attention = false,
        "w/o-pa" => m.post_attention = PostAttention::Off,
        "gat" => {
            m.post_attention = PostAttention::Off;
            m.event_attention = false;
        }
        "gcn" => {
            m.gnn = Gnn::Gcn;
            m.post_attention = PostAttention::Off;
            m.event_attention = false;
        }
        _ => {
            return Err(Error::Unknown {
                kind: "variant",
                name: name.to_string(),
            })
        }
    }
    Ok(c)
}

fn ablate(cfg: &RunConfig, variants: &[String], out: &mut dyn Write) -> Result<()> {
    let names: Vec<String> = if variants.is_empty() {
        ablation_registry().iter().map(|s| s.to_string()).collect()
    } else {
        variants.to_vec()
    };
    let configs: Vec<RunConfig> = names.iter().map(|n| apply_variant(cfg, n)).collect::<Result<_>>()?;
    let (cfg, corpus, table) = prepare_run(cfg)?;
    let mut tsv = String::from("variant\taccuracy");
    for name in corpus.scheme.class_names() {
        let _ = write!(tsv, "\tF1_{name}");
    }
    tsv.push('\n');
    let mut reports = BTreeMap::new();
    for (name, mut vc) in names.iter().zip(configs) {
        vc.model.classes = cfg.model.classes;
        let report = run_cv(&vc, &corpus, &table)?;
        let _ = write!(tsv, "{name}\t{}", report.mean_accuracy);
        for v in &report.mean_f1 {
            let _ = write!(tsv, "\t{v}");
        }
        tsv.push('\n');
        reports.insert(name.clone(), report);
    }
    write_file(&cfg.out.join("ablation.tsv"), &tsv)?;
    write_file(&cfg.out.join("ablation.json"), &to_json(&reports)?)?;
    snapshot(&cfg)?;
    say(out, &tsv)
}

fn parse_cutoffs(list: &[String]) -> Result<Vec<Cutoff>> {
    let cutoffs: Vec<Cutoff> = list.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    check_ascending(&cutoffs)?;
    Ok(cutoffs)
}

fn curve_tsv(points: &[(String, f64)]) -> String {
    let mut tsv = String::from("checkpoint\taccuracy\n");
    for (c, a) in points {
        let _ = writeln!(tsv, "{c}\t{a}");
    }
    tsv
}

fn early(
    args: &RunArgs,
    checkpoints: &[String],
    checkpoint: Option<&Path>,
    subset: Subset,
    retrain: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let cutoffs = parse_cutoffs(checkpoints)?;
    let (points, dir) = match checkpoint {
        Some(path) => {
            if retrain {
                return Err(Error::Config("--retrain trains its own models; drop --checkpoint".into()));
            }
            let (ckpt, model) = load_checkpoint(path)?;
            let corpus = load_corpus(&checkpoint_data(&ckpt, args.data.as_deref())?)?;
            let events = select(&ckpt, &corpus, subset)?;
            let curve = early_detection_curve(&model, &events, &cutoffs)?;
            let dir = args.out.clone().or_else(env_out).unwrap_or_else(|| PathBuf::from("runs"));
            (curve.into_iter().map(|p| (p.checkpoint, p.accuracy)).collect::<Vec<_>>(), dir)
        }
        None => {
            let cfg = RunConfig::resolve(args, env_out())?;
            let (mut cfg, corpus, table) = prepare_run(&cfg)?;
            cfg.train.retrain_per_checkpoint = retrain;
            let points = if retrain {
                let mut points = Vec::new();
                for &cut in &cutoffs {
                    let truncated: Vec<Event> = corpus.events.iter().map(|e| crate::conversation::truncate(e, cut)).collect();
                    let (trained, _) = train_on(&cfg, &corpus, &table, &truncated)?;
                    points.push((cut.to_string(), trained.best_valid_accuracy));
                }
                points
            } else {
                let (trained, _) = train_on(&cfg, &corpus, &table, &corpus.events)?;
                let valid: Vec<Event> = trained.valid.iter().map(|&i| corpus.events[i].clone()).collect();
                early_detection_curve(&trained.model, &valid, &cutoffs)?
                    .into_iter()
                    .map(|p| (p.checkpoint, p.accuracy))
                    .collect()
            };
            snapshot(&cfg)?;
            (points, cfg.out.clone())
        }
    };
    let tsv = curve_tsv(&points);
    write_file(&dir.join("early.tsv"), &tsv)?;
    say(out, &tsv)
}

fn export_attention(checkpoint: &Path, data: &Path, event_id: &str, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let (_, model) = load_checkpoint(checkpoint)?;
    let corpus = load_corpus(data)?;
    let event = corpus.events.iter().find(|e| e.id() == event_id).ok_or_else(|| Error::Unknown {
        kind: "event",
        name: event_id.to_string(),
    })?;
    let (probs, trace) = model.predict(&model.prepare(event)?)?;
    let dir = dir.or_else(env_out).unwrap_or_else(|| PathBuf::from("runs"));
    let attention = dir.join(format!("{event_id}.attention.tsv"));
    write_file(&attention, &trace.attention_tsv())?;
    let mut text = format!("wrote {}\n", attention.display());
    if let Some(beta) = trace.beta_tsv() {
        let path = dir.join(format!("{event_id}.beta.tsv"));
        write_file(&path, &beta)?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    let _ = writeln!(text, "probabilities {probs:?}");
    say(out, &text)
}

fn convert_twitter(dir: &Path, dest: &Path, out: &mut dyn Write) -> Result<()> {
    let read = |p: PathBuf| std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e));
    let labels = twitter::parse_labels(&read(dir.join("label.txt"))?)?;
    let sources = twitter::parse_source_tweets(&read(dir.join("source_tweets.txt"))?);
    let mut events = Vec::with_capacity(labels.len());
    let mut skipped = 0;
    for (id, label) in labels {
        let tree_path = dir.join("tree").join(format!("{id}.txt"));
        if !tree_path.is_file() {
            skipped += 1;
            continue;
        }
        let text = sources.get(&id).map_or("", String::as_str);
        events.push(twitter::convert_tree(&id, label, text, &read(tree_path)?)?);
    }
    write_events(dest, &events)?;
    say(
        out,
        &format!("wrote {} events to {} ({skipped} without a tree file)\n", events.len(), dest.display()),
    )
}
