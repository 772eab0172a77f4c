//! Skip-gram label embeddings with negative sampling.
//!
//! A single embedding table is used for targets and contexts. Each positive
//! `(target, context)` pair of co-assigned labels comes with `K` negatives
//! drawn uniformly from labels the node does not carry.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::{Adam, AdamConfig};
use crate::report::fmt_f64;
use crate::rng;

pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_NEGATIVES: usize = 5;
pub const DEFAULT_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDictionary {
    pub embeddings: Matrix,
    pub epochs: usize,
    pub seed: u64,
    pub negatives: usize,
}

impl LabelDictionary {
    pub fn num_labels(&self) -> usize {
        self.embeddings.rows
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols
    }

    /// Writes the `labels.emb` text format: a `C d` header, then one row of
    /// `d` space-separated reals per label.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, format_embeddings(&self.embeddings)).map_err(|e| Error::io(path, e))
    }

    /// Reads `labels.emb`. Training metadata is not stored in the file and
    /// comes back as zeros.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let embeddings = parse_embeddings(&text, path)?;
        Ok(LabelDictionary {
            embeddings,
            epochs: 0,
            seed: 0,
            negatives: 0,
        })
    }
}

pub fn format_embeddings(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows, m.cols);
    for r in 0..m.rows {
        let row: Vec<String> = m.row(r).iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

fn parse_embeddings(text: &str, path: &Path) -> Result<Matrix> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| perr(1, format!("bad header token {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    let [c, d] = dims[..] else {
        return Err(perr(1, "header must be `C d`".into()));
    };
    let mut data = Vec::with_capacity(c * d);
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for t in line.split_whitespace() {
            let x: f64 = t.parse().map_err(|e| perr(i + 1, format!("bad value {t:?}: {e}")))?;
            if !x.is_finite() {
                return Err(perr(i + 1, "non-finite embedding value".into()));
            }
            data.push(x);
        }
        if data.len() - before != d {
            return Err(perr(i + 1, format!("expected {d} values, found {}", data.len() - before)));
        }
        rows += 1;
    }
    if rows != c {
        return Err(Error::Shape(format!("{}: header says {c} rows, found {rows}", path.display())));
    }
    Ok(Matrix::from_vec(c, d, data))
}

/// One target label of one training node with its contexts and negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipGramBatch {
    pub target: usize,
    pub positives: Vec<usize>,
    /// `negatives[i]` holds the `K` negatives paired with `positives[i]`.
    pub negatives: Vec<Vec<usize>>,
}

impl SkipGramBatch {
    fn max_label(&self) -> usize {
        let mut m = self.target;
        m = m.max(self.positives.iter().copied().max().unwrap_or(0));
        m.max(self.negatives.iter().flatten().copied().max().unwrap_or(0))
    }
}

/// Emits one batch per (training node, target label) for nodes with at least
/// two labels and a non-empty complement. `label_sets` should contain
/// training nodes only.
pub fn build_pairs(label_sets: &[Vec<usize>], num_labels: usize, negatives: usize, seed: u64) -> Vec<SkipGramBatch> {
    let mut r = rng::rng(seed);
    let mut out = Vec::new();
    for set in label_sets {
        if set.len() < 2 {
            continue;
        }
        let complement: Vec<usize> = (0..num_labels).filter(|l| !set.contains(l)).collect();
        if complement.is_empty() {
            log::warn!("node carries all {num_labels} labels; no negatives available, skipped");
            continue;
        }
        for &t in set {
            let positives: Vec<usize> = set.iter().copied().filter(|&l| l != t).collect();
            let negs = positives
                .iter()
                .map(|_| (0..negatives).map(|_| complement[r.random_range(0..complement.len())]).collect())
                .collect();
            out.push(SkipGramBatch {
                target: t,
                positives,
                negatives: negs,
            });
        }
    }
    out
}

/// Flattened `(target, other, is_positive)` rows of a set of batches.
fn flatten(batches: &[&SkipGramBatch]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let (mut t, mut o, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for b in batches {
        for (i, &p) in b.positives.iter().enumerate() {
            t.push(b.target);
            o.push(p);
            y.push(1.0);
            for &n in &b.negatives[i] {
                t.push(b.target);
                o.push(n);
                y.push(0.0);
            }
        }
    }
    (t, o, y)
}

/// Records the skip-gram loss of `batches` on `tape` against the embedding
/// table `emb`. Returns a scalar tensor.
pub fn skipgram_loss_on_tape(tape: &mut Tape, emb: Tensor, batches: &[&SkipGramBatch]) -> Tensor {
    let (t, o, y) = flatten(batches);
    let et = tape.gather_rows(emb, &t);
    let eo = tape.gather_rows(emb, &o);
    let dots = tape.row_dot(et, eo);
    tape.bce_with_logits(dots, &y)
}

/// `-Σ log σ(e_c·e_t) - Σ log σ(-e_n·e_t)` for one batch.
pub fn skipgram_loss(batch: &SkipGramBatch, dict: &Matrix) -> Result<f64> {
    if batch.max_label() >= dict.rows {
        return Err(Error::Argument(format!(
            "label id {} out of range for {} labels",
            batch.max_label(),
            dict.rows
        )));
    }
    let mut tape = Tape::new();
    let emb = tape.constant(dict);
    let loss = skipgram_loss_on_tape(&mut tape, emb, &[batch]);
    Ok(tape.scalar(loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub negatives: usize,
    /// Positive pairs per optimization step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dim: DEFAULT_DIM,
            epochs: 50,
            lr: 1e-3,
            negatives: DEFAULT_NEGATIVES,
            batch_size: DEFAULT_BATCH,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutcome {
    pub dictionary: LabelDictionary,
    /// Mean loss per positive pair for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the dictionary on the label sets of training nodes.
pub fn train_label_embeddings(label_sets: &[Vec<usize>], num_labels: usize, cfg: &EmbedConfig) -> Result<EmbedOutcome> {
    if num_labels < 2 {
        return Err(Error::Argument(format!("need at least 2 labels, got {num_labels}")));
    }
    if cfg.dim == 0 || cfg.batch_size == 0 || cfg.negatives == 0 {
        return Err(Error::Argument("dim, batch_size and negatives must be positive".into()));
    }
    if let Some(bad) = label_sets.iter().flatten().find(|&&l| l >= num_labels) {
        return Err(Error::Argument(format!("label id {bad} out of range for {num_labels} labels")));
    }
    let d = cfg.dim;
    let bound = 0.5 / d as f64;
    let mut r = rng::rng(rng::derive(cfg.seed, &[0]));
    let init = (0..num_labels * d).map(|_| r.random_range(-bound..=bound)).collect();
    let mut emb = Matrix::from_vec(num_labels, d, init);

    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &[num_labels * d],
    );
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pairs = build_pairs(label_sets, num_labels, cfg.negatives, rng::derive(cfg.seed, &[1, epoch as u64]));
        // split every batch into single-positive units so minibatches count pairs
        let mut units: Vec<SkipGramBatch> = pairs
            .into_iter()
            .flat_map(|b| {
                let t = b.target;
                b.positives.into_iter().zip(b.negatives).map(move |(p, n)| SkipGramBatch {
                    target: t,
                    positives: vec![p],
                    negatives: vec![n],
                })
            })
            .collect();
        if units.is_empty() {
            log::warn!("no skip-gram pairs: every training node has fewer than two labels");
            break;
        }
        units.shuffle(&mut rng::rng(rng::derive(cfg.seed, &[2, epoch as u64])));
        let mut total = 0.0;
        for chunk in units.chunks(cfg.batch_size) {
            let refs: Vec<&SkipGramBatch> = chunk.iter().collect();
            let mut tape = Tape::new();
            let e = tape.param(&emb);
            let loss = skipgram_loss_on_tape(&mut tape, e, &refs);
            total += tape.scalar(loss);
            tape.backward(loss)?;
            let g = tape.grad(e).expect("embedding gradient");
            opt.next_step();
            opt.update(0, "label_embeddings", &mut emb.data, g)?;
        }
        let mean = total / units.len() as f64;
        if losses.len() >= 20 {
            let recent: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
            let prior: f64 = losses[losses.len() - 20..losses.len() - 10].iter().sum::<f64>() / 10.0;
            if recent > prior {
                log::warn!("skip-gram loss moving average increased at epoch {epoch}");
            }
        }
        log::debug!("skip-gram epoch {epoch}: mean loss {mean}");
        losses.push(mean);
    }
    Ok(EmbedOutcome {
        dictionary: LabelDictionary {
            embeddings: emb,
            epochs: cfg.epochs,
            seed: cfg.seed,
            negatives: cfg.negatives,
        },
        epoch_losses: losses,
    })
}
