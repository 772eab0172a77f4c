//! `key = value` experiment files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are errors. Relative paths resolve against the
//! directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mlgib::label_embed::EmbedConfig;
use mlgib::model::{AibMode, PseudoActivation};
use mlgib::synthetic::SyntheticGraphSpec;
use mlgib::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    None,
    Jaccard,
    Degree,
    Label,
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(GroupBy::None),
            "jaccard" => Ok(GroupBy::Jaccard),
            "degree" => Ok(GroupBy::Degree),
            "label" => Ok(GroupBy::Label),
            _ => Err(format!("expected none, jaccard, degree or label, got {s:?}")),
        }
    }
}

/// Which node set `eval` and `perturb-eval` score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Val,
    Test,
    All,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::Test => "test",
            EvalSplit::All => "all",
        }
    }
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            _ => Err(format!("expected train, val, test or all, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed; every stage without its own seed key derives from it.
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Defaults to the config file's directory.
    pub out: PathBuf,
    /// Defaults to `<out>/labels.emb`.
    pub labels: Option<PathBuf>,
    /// Defaults to `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub split_ratios: [f64; 3],
    pub split_seed: Option<u64>,
    pub embed: EmbedConfig,
    pub train: TrainConfig,
    /// Train the label dictionary first when `train` finds none.
    pub embed_if_missing: bool,
    /// Evaluate the best checkpoint after training.
    pub evaluate_after_train: bool,
    pub eval_split: EvalSplit,
    pub group_by: GroupBy,
    pub jaccard_buckets: Vec<f64>,
    pub degree_buckets: Option<Vec<f64>>,
    pub perturb_proportions: Vec<f64>,
    pub perturb_seed: Option<u64>,
    pub trials: usize,
    pub synthetic: SyntheticGraphSpec,
    pub synthetic_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: None,
            out: PathBuf::from("."),
            labels: None,
            checkpoint: None,
            split_ratios: [0.6, 0.2, 0.2],
            split_seed: None,
            embed: EmbedConfig::default(),
            train: TrainConfig::default(),
            embed_if_missing: false,
            evaluate_after_train: true,
            eval_split: EvalSplit::Test,
            group_by: GroupBy::None,
            jaccard_buckets: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            degree_buckets: None,
            perturb_proportions: vec![0.0, 0.5, 1.0],
            perturb_seed: None,
            trials: 500,
            synthetic: SyntheticGraphSpec::default(),
            synthetic_seed: None,
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

fn parse_optional(v: &str) -> Result<Option<usize>, String> {
    if v == "none" || v == "all" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths in it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&text, &base).map_err(|(line, msg)| CliError::Config(format!("{}:{line}: {msg}", path.display())))
    }

    /// Parses config text. Errors carry the 1-based line number.
    pub fn parse(text: &str, base: &Path) -> Result<Self, (usize, String)> {
        let mut cfg = ExperimentConfig::default();
        if !base.as_os_str().is_empty() {
            cfg.out = base.to_path_buf();
        }
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| (i + 1, format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err((i + 1, format!("key {key:?} set twice")));
            }
            cfg.set(key, value, base).map_err(|m| (i + 1, format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), String> {
        let path = |v: &str| base.join(v);
        let t = &mut self.train;
        let s = &mut self.synthetic;
        match key {
            "seed" => self.seed = parse(v)?,
            "dataset" => self.dataset = Some(path(v)),
            "out" => self.out = path(v),
            "labels" => self.labels = Some(path(v)),
            "checkpoint" => self.checkpoint = Some(path(v)),
            "split_ratios" => {
                let r: Vec<f64> = parse_list(v)?;
                self.split_ratios = r.try_into().map_err(|_| "expected three ratios".to_string())?;
            }
            "split_seed" => self.split_seed = Some(parse(v)?),

            "embed_dim" => self.embed.dim = parse(v)?,
            "embed_epochs" => self.embed.epochs = parse(v)?,
            "embed_lr" => self.embed.lr = parse(v)?,
            "embed_negatives" => self.embed.negatives = parse(v)?,
            "embed_batch_size" => self.embed.batch_size = parse(v)?,
            "embed_if_missing" => self.embed_if_missing = parse_bool(v)?,

            "layers" => t.layers = parse(v)?,
            "hidden" => t.hidden = parse(v)?,
            "message_dim" => t.message_dim = parse(v)?,
            "beta" => t.beta = parse(v)?,
            "lr" => t.lr = parse(v)?,
            "epochs" => t.epochs = parse(v)?,
            "batch_size" => t.batch_size = parse(v)?,
            "fanout" => t.fanout = parse(v)?,
            "path_budget" => t.path_budget = parse_optional(v)?,
            "eval_seed" => t.eval_seed = parse(v)?,
            "disable_aib" => t.disable_aib = parse_bool(v)?,
            "disable_hib" => t.disable_hib = parse_bool(v)?,
            "finetune_labels" => t.finetune_labels = parse_bool(v)?,
            "aib_mode" => {
                t.aib_mode = match v {
                    "verbatim" => AibMode::Verbatim,
                    "kl" => AibMode::Kl,
                    _ => return Err(format!("expected verbatim or kl, got {v:?}")),
                }
            }
            "pseudo_label_activation" => {
                t.pseudo_label_activation = match v {
                    "none" => PseudoActivation::None,
                    "sigmoid" => PseudoActivation::Sigmoid,
                    "softmax" => PseudoActivation::Softmax,
                    _ => return Err(format!("expected none, sigmoid or softmax, got {v:?}")),
                }
            }
            "aib_layers" => t.aib_layers = if v == "all" { None } else { Some(parse_list(v)?) },
            "hib_layers" => t.hib_layers = if v == "all" { None } else { Some(parse_list(v)?) },
            "prior_components" => t.prior_components = parse(v)?,
            "shared_prior" => t.shared_prior = parse_bool(v)?,
            "full_batch_threshold" => t.full_batch_threshold = parse(v)?,
            "threshold" => t.threshold = parse(v)?,
            "evaluate_after_train" => self.evaluate_after_train = parse_bool(v)?,

            "eval_split" => self.eval_split = parse(v)?,
            "group_by" => self.group_by = parse(v)?,
            "jaccard_buckets" => self.jaccard_buckets = parse_list(v)?,
            "degree_buckets" => self.degree_buckets = Some(parse_list(v)?),
            "perturb_proportions" => self.perturb_proportions = parse_list(v)?,
            "perturb_seed" => self.perturb_seed = Some(parse(v)?),
            "trials" => self.trials = parse(v)?,

            "synthetic_nodes" => s.nodes = parse(v)?,
            "synthetic_communities" => s.communities = parse(v)?,
            "synthetic_labels_per_community" => s.labels_per_community = parse(v)?,
            "synthetic_overlap" => s.overlap = parse(v)?,
            "synthetic_feature_noise" => s.feature_noise = parse(v)?,
            "synthetic_label_dropout" => s.label_dropout = parse(v)?,
            "synthetic_p_intra" => s.p_intra = parse(v)?,
            "synthetic_p_inter" => s.p_inter = parse(v)?,
            "synthetic_seed" => self.synthetic_seed = Some(parse(v)?),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn labels_path(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.out.join("labels.emb"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.json"))
    }

    pub fn dataset_path(&self) -> Result<&Path, CliError> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("no dataset configured (set `dataset = <dir>`)".into()))
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn perturb_seed(&self) -> u64 {
        self.perturb_seed.unwrap_or(self.seed)
    }

    /// Trainer settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig {
            seed: self.seed,
            ..self.embed.clone()
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticGraphSpec {
        SyntheticGraphSpec {
            seed: self.synthetic_seed.unwrap_or(self.seed),
            ..self.synthetic.clone()
        }
    }
}
