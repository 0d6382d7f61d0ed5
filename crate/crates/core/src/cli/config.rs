use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunArgs;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::seed;
use crate::train::TrainConfig;

pub const OUT_DIR_ENV: &str = "CLAHI_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Text-format vector file; random vectors when absent.
    pub path: Option<PathBuf>,
    pub dim: usize,
    /// Seed for random vectors and the initial UNK vector; derived from the
    /// run seed when absent.
    pub seed: Option<u64>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            path: None,
            dim: 300,
            seed: None,
        }
    }
}

/// Everything one run depends on. A snapshot of the resolved value is
/// written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub embeddings: EmbeddingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            out: PathBuf::from("runs"),
            embeddings: EmbeddingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_random_spec(spec: &str, emb: &mut EmbeddingConfig) -> Result<()> {
    for part in spec.split([',', ' ']).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value in `{part}`")))?;
        let bad = || Error::Config(format!("bad value in `{part}`"));
        match key {
            "dim" => emb.dim = value.parse().map_err(|_| bad())?,
            "seed" => emb.seed = Some(value.parse().map_err(|_| bad())?),
            _ => {
                return Err(Error::Unknown {
                    kind: "random-embeddings key",
                    name: key.to_string(),
                })
            }
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    /// Resolves defaults, the config file, the environment override and
    /// then flags, in that order.
    pub fn resolve(args: &RunArgs, env_out: Option<PathBuf>) -> Result<Self> {
        let mut c = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(out) = env_out {
            c.out = out;
        }
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag.clone() {
                    c.$($field)+ = v;
                }
            };
        }
        set!(args.seed => seed);
        if args.data.is_some() {
            c.data = args.data.clone();
        }
        set!(args.out => out);
        if args.embeddings.is_some() {
            c.embeddings.path = args.embeddings.clone();
        }
        if let Some(spec) = &args.random_embeddings {
            c.embeddings.path = None;
            parse_random_spec(spec, &mut c.embeddings)?;
        }
        set!(args.embedding_dim => embeddings.dim);
        set!(args.structure => model.structure);
        set!(args.gnn => model.gnn);
        set!(args.post_attention => model.post_attention);
        set!(args.event_attention => model.event_attention);
        set!(args.layers => model.layers);
        set!(args.heads => model.heads);
        set!(args.hidden => model.hidden);
        set!(args.dropout => model.dropout);
        set!(args.lr => train.lr);
        set!(args.l2 => train.l2);
        set!(args.batch => train.batch_size);
        set!(args.max_epochs => train.max_epochs);
        set!(args.folds => train.folds);
        set!(args.holdout => train.holdout);
        set!(args.patience => train.patience);
        if args.parallel_folds {
            c.train.parallel_folds = true;
        }
        c.validate()?;
        Ok(c)
    }

    /// Checks settings and that input files exist, before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let mut model = self.model.clone();
        model.classes = model.classes.max(2);
        model.validate()?;
        if self.embeddings.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed {} above {}", self.seed, i64::MAX)));
        }
        for p in self.data.iter().chain(&self.embeddings.path) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} is not a readable file", p.display())));
            }
        }
        Ok(())
    }

    pub fn embedding_seed(&self) -> u64 {
        self.embeddings
            .seed
            .unwrap_or_else(|| seed::derive(self.seed, "embeddings"))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no data file given (--data)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "seed = 5\nout = \"from-file\"\n[model]\nlayers = 3\n[train]\nlr = 0.01\n").unwrap();
        let args = RunArgs {
            config: Some(cfg),
            lr: Some(0.02),
            ..Default::default()
        };
        let c = RunConfig::resolve(&args, Some(PathBuf::from("from-env"))).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.model.layers, 3);
        assert_eq!(c.model.heads, 4);
        assert_eq!(c.train.lr, 0.02);
        assert_eq!(c.out, PathBuf::from("from-env"));
        let flagged = RunArgs {
            out: Some(PathBuf::from("flag")),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flagged, Some(PathBuf::from("from-env"))).unwrap();
        assert_eq!(c.out, PathBuf::from("flag"));
    }

    #[test]
    fn random_spec_and_snapshot_round_trip() {
        let args = RunArgs {
            random_embeddings: Some("dim=16,seed=9".into()),
            ..Default::default()
        };
        let c = RunConfig::resolve(&args, None).unwrap();
        assert_eq!((c.embeddings.dim, c.embeddings.seed), (16, Some(9)));
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_files_fail_before_training() {
        let args = RunArgs {
            data: Some(PathBuf::from("/nonexistent/events.jsonl")),
            ..Default::default()
        };
        assert!(matches!(RunConfig::resolve(&args, None), Err(Error::Config(_))));
    }
}
