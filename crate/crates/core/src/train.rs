//! Training objective, optimization loop and evaluation.
//!
//! The loss is `BCE + β · (Σ_{l∈S_A} AIB_l + Σ_{l∈S_H} HIB_l)`, every term a
//! sum over nodes (and labels, edges). History rows report per-node means.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{sample_blocks, SampledBlock, Split};
use crate::matrix::Matrix;
use crate::metrics::{evaluate_all, MetricBundle, PredictionMatrix};
use crate::model::{
    layer_forward, AibMode, GmmPrior, LayerContext, LayerParams, LayerVars, Mode, PriorVars, PseudoActivation,
};
use crate::optim::{Adam, AdamConfig};
use crate::{report, rng, Graph};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layers: usize,
    /// Width of hidden representations and of every MLP's hidden layer.
    pub hidden: usize,
    pub message_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub fanout: usize,
    /// Paths kept per node; `None` keeps every sampled candidate.
    pub path_budget: Option<usize>,
    pub seed: u64,
    /// Seed for block sampling during evaluation.
    pub eval_seed: u64,
    pub disable_aib: bool,
    pub disable_hib: bool,
    pub finetune_labels: bool,
    pub aib_mode: AibMode,
    pub pseudo_label_activation: PseudoActivation,
    /// Layers contributing AIB terms; `None` means all.
    pub aib_layers: Option<Vec<usize>>,
    /// Layers contributing HIB terms; `None` means all.
    pub hib_layers: Option<Vec<usize>>,
    pub prior_components: usize,
    /// One prior for all layers, or one per layer.
    pub shared_prior: bool,
    /// Graphs with fewer nodes train on all training nodes per step.
    pub full_batch_threshold: usize,
    /// Decision threshold for Hamming loss.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 2,
            hidden: 64,
            message_dim: 64,
            beta: 1e-4,
            lr: 1e-3,
            epochs: 200,
            batch_size: 1024,
            fanout: 1024,
            path_budget: None,
            seed: 0,
            eval_seed: 0,
            disable_aib: false,
            disable_hib: false,
            finetune_labels: false,
            aib_mode: AibMode::Verbatim,
            pseudo_label_activation: PseudoActivation::Softmax,
            aib_layers: None,
            hib_layers: None,
            prior_components: 6,
            shared_prior: true,
            full_batch_threshold: 10_000,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            bad.push("beta");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            bad.push("lr");
        }
        for (name, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("message_dim", self.message_dim),
            ("batch_size", self.batch_size),
            ("fanout", self.fanout),
            ("prior_components", self.prior_components),
        ] {
            if v == 0 {
                bad.push(name);
            }
        }
        if self.path_budget == Some(0) {
            bad.push("path_budget");
        }
        for (name, set) in [("aib_layers", &self.aib_layers), ("hib_layers", &self.hib_layers)] {
            if set.as_ref().is_some_and(|s| s.iter().any(|&l| l >= self.layers)) {
                bad.push(name);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid training settings: {}", bad.join(", "))))
        }
    }

    pub fn effective_path_budget(&self) -> usize {
        self.path_budget.unwrap_or(self.fanout)
    }

    fn aib_at(&self, layer: usize) -> bool {
        !self.disable_aib && self.aib_layers.as_ref().is_none_or(|s| s.contains(&layer))
    }

    fn hib_at(&self, layer: usize) -> bool {
        !self.disable_hib && self.hib_layers.as_ref().is_none_or(|s| s.contains(&layer))
    }
}

/// Summed stable binary cross-entropy of `logits` against 0/1 labels.
pub fn bce_lower_bound(logits: &Matrix, labels: &[u8]) -> Result<f64> {
    if logits.data.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} logits for {} labels",
            logits.data.len(),
            labels.len()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Argument("logits must be finite".into()));
    }
    Ok(logits
        .data
        .iter()
        .zip(labels)
        .map(|(&x, &y)| x.max(0.0) - x * y as f64 + (-x.abs()).exp().ln_1p())
        .sum())
}

/// `bce + β (Σ aib + Σ hib)`, with ablated sums dropped.
pub fn total_loss(bce: f64, aib: &[f64], hib: &[f64], beta: f64, disable_aib: bool, disable_hib: bool) -> f64 {
    let a: f64 = if disable_aib { 0.0 } else { aib.iter().sum() };
    let h: f64 = if disable_hib { 0.0 } else { hib.iter().sum() };
    if beta == 0.0 || (disable_aib && disable_hib) {
        bce
    } else {
        bce + beta * (a + h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: TrainConfig,
    pub num_features: usize,
    pub num_labels: usize,
    pub layers: Vec<LayerParams>,
    pub priors: Vec<GmmPrior>,
    /// Label dictionary `C × d`.
    pub dictionary: Matrix,
}

/// Tensors recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `targets × C`.
    pub logits: Tensor,
    pub aib: Vec<Tensor>,
    pub hib: Vec<Tensor>,
    /// Parameter tensors in [`Model::named_params`] order.
    pub params: Vec<Tensor>,
}

impl Model {
    pub fn new(config: TrainConfig, num_features: usize, dictionary: Matrix) -> Result<Self> {
        config.validate()?;
        if num_features == 0 || dictionary.rows == 0 || dictionary.cols == 0 {
            return Err(Error::Argument("features and label dictionary must be non-empty".into()));
        }
        if !dictionary.is_finite() {
            return Err(Error::Argument("label dictionary has non-finite entries".into()));
        }
        let c = dictionary.rows;
        let mut r = rng::rng(rng::derive(config.seed, &[0]));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { num_features } else { config.hidden };
            let output = if l + 1 == config.layers { c } else { config.hidden };
            layers.push(LayerParams::new(l, input, config.hidden, config.message_dim, output, c, &mut r));
        }
        let n_priors = if config.shared_prior { 1 } else { config.layers };
        let priors = (0..n_priors)
            .map(|_| GmmPrior::new(config.prior_components, config.message_dim, &mut r))
            .collect();
        Ok(Model {
            config,
            num_features,
            num_labels: c,
            layers,
            priors,
            dictionary,
        })
    }

    fn prior_name(&self, i: usize) -> String {
        if self.config.shared_prior {
            "prior".into()
        } else {
            format!("prior{i}")
        }
    }

    /// Trainable parameters with stable names. The dictionary is included
    /// only when it is fine-tuned.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = self.layers.iter().flat_map(|l| l.named()).collect();
        for (i, p) in self.priors.iter().enumerate() {
            out.extend(p.named(&self.prior_name(i)));
        }
        if self.config.finetune_labels {
            out.push(("dictionary".into(), &self.dictionary));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let names: Vec<String> = (0..self.priors.len()).map(|i| self.prior_name(i)).collect();
        let mut out: Vec<(String, &mut Matrix)> = self.layers.iter_mut().flat_map(|l| l.named_mut()).collect();
        for (p, name) in self.priors.iter_mut().zip(&names) {
            out.extend(p.named_mut(name));
        }
        if self.config.finetune_labels {
            out.push(("dictionary".into(), &mut self.dictionary));
        }
        out
    }

    pub fn check_compatible(&self, graph: &Graph) -> Result<()> {
        if graph.num_features() != self.num_features || graph.num_labels() != self.num_labels {
            return Err(Error::Compatibility(format!(
                "model expects {} features and {} labels, dataset has {} and {}",
                self.num_features,
                self.num_labels,
                graph.num_features(),
                graph.num_labels()
            )));
        }
        Ok(())
    }

    /// Records a forward pass over `blocks` (input layer first). With
    /// `regularize` false no AIB/HIB terms are built.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &Graph,
        blocks: &[SampledBlock],
        mode: Mode,
        seed: u64,
        trainable: bool,
        regularize: bool,
    ) -> Result<Forward> {
        let cfg = &self.config;
        if blocks.len() != self.layers.len() {
            return Err(Error::Argument(format!(
                "{} blocks for {} layers",
                blocks.len(),
                self.layers.len()
            )));
        }
        let layer_vars: Vec<LayerVars> = self.layers.iter().map(|l| LayerVars::new(tape, l, trainable)).collect();
        let prior_vars: Vec<PriorVars> = self.priors.iter().map(|p| PriorVars::new(tape, p, trainable)).collect();
        let dict = tape.leaf(&self.dictionary, trainable && cfg.finetune_labels);

        let mut params: Vec<Tensor> = layer_vars.iter().flat_map(|v| v.tensors()).collect();
        params.extend(prior_vars.iter().flat_map(|p| p.tensors()));
        if cfg.finetune_labels {
            params.push(dict);
        }

        let x = graph.features().select_rows(blocks[0].nodes());
        let mut z = tape.constant(&x);
        let mut aib = Vec::new();
        let mut hib = Vec::new();
        for (l, block) in blocks.iter().enumerate() {
            let prior = &prior_vars[if cfg.shared_prior { 0 } else { l }];
            let ctx = LayerContext {
                mode,
                seed: rng::derive(seed, &[l as u64]),
                path_budget: cfg.effective_path_budget(),
                aib_mode: cfg.aib_mode,
                activation: cfg.pseudo_label_activation,
                is_final: l + 1 == blocks.len(),
                with_aib: regularize && cfg.aib_at(l),
                with_hib: regularize && cfg.hib_at(l),
            };
            let out = layer_forward(tape, z, block, dict, &layer_vars[l], prior, &ctx)?;
            aib.extend(out.aib);
            hib.extend(out.hib);
            z = out.z_next;
        }
        Ok(Forward {
            logits: z,
            aib,
            hib,
            params,
        })
    }

    /// Sigmoid probabilities for `nodes` in evaluation mode.
    pub fn predict(&self, graph: &Graph, nodes: &[usize]) -> Result<Matrix> {
        self.check_compatible(graph)?;
        let c = self.num_labels;
        let mut out = Matrix::zeros(nodes.len(), c);
        if nodes.is_empty() {
            return Ok(out);
        }
        let chunk = if graph.num_nodes() < self.config.full_batch_threshold {
            nodes.len()
        } else {
            self.config.batch_size
        };
        for (i, part) in nodes.chunks(chunk).enumerate() {
            let seed = rng::derive(self.config.eval_seed, &[i as u64]);
            let blocks = sample_blocks(graph, part, self.config.fanout, self.layers.len(), seed)?;
            let mut tape = Tape::new();
            let f = self.forward(&mut tape, graph, &blocks, Mode::Eval, seed, false, false)?;
            let logits = tape.value(f.logits);
            let base = i * chunk * c;
            for (k, &x) in logits.iter().enumerate() {
                out.data[base + k] = sigmoid(x);
            }
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn label_rows(graph: &Graph, nodes: &[usize]) -> Vec<u8> {
    nodes.iter().flat_map(|&v| graph.labels_of(v).iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub nodes: Vec<usize>,
    pub probabilities: Matrix,
    pub predictions: PredictionMatrix,
    pub metrics: MetricBundle,
}

pub fn evaluate(model: &Model, graph: &Graph, nodes: &[usize]) -> Result<Evaluation> {
    let probabilities = model.predict(graph, nodes)?;
    let predictions = PredictionMatrix::new(
        nodes.len(),
        model.num_labels,
        probabilities.data.clone(),
        label_rows(graph, nodes),
    )?;
    let metrics = evaluate_all(&predictions, model.config.threshold);
    Ok(Evaluation {
        nodes: nodes.to_vec(),
        probabilities,
        predictions,
        metrics,
    })
}

/// One row of `history.csv`; loss columns are per-node means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub bce: f64,
    pub aib: f64,
    pub hib: f64,
    pub val_micro_auc: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,bce,aib,hib,val_micro_auc";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            report::fmt_f64(r.train_loss),
            report::fmt_f64(r.bce),
            report::fmt_f64(r.aib),
            report::fmt_f64(r.hib),
            report::fmt_opt(r.val_micro_auc)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation Micro-AUC (the last epoch's if
    /// validation is never defined).
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Loss terms of one step, as plain numbers.
#[derive(Debug, Clone, Copy, Default)]
struct StepTerms {
    total: f64,
    bce: f64,
    aib: f64,
    hib: f64,
}

/// Records BCE and the regularized total for `targets` on `tape`.
fn step_loss(tape: &mut Tape, model: &Model, graph: &Graph, targets: &[usize], f: &Forward) -> (Tensor, StepTerms) {
    let cfg = &model.config;
    let y: Vec<f64> = label_rows(graph, targets).into_iter().map(f64::from).collect();
    let bce = tape.bce_with_logits(f.logits, &y);
    let aib: Vec<f64> = f.aib.iter().map(|&t| tape.scalar(t)).collect();
    let hib: Vec<f64> = f.hib.iter().map(|&t| tape.scalar(t)).collect();
    let terms: Vec<Tensor> = f.aib.iter().chain(&f.hib).copied().collect();
    let loss = if cfg.beta == 0.0 || terms.is_empty() {
        bce
    } else {
        let mut reg = terms[0];
        for &t in &terms[1..] {
            reg = tape.add(reg, t);
        }
        let reg = tape.scale(reg, cfg.beta);
        tape.add(bce, reg)
    };
    let stats = StepTerms {
        total: tape.scalar(loss),
        bce: tape.scalar(bce),
        aib: aib.iter().sum(),
        hib: hib.iter().sum(),
    };
    (loss, stats)
}

/// Training loss of `model` on `targets` in evaluation mode (no noise, all
/// candidates), with regularizers. Used for checks and diagnostics.
pub fn eval_loss(model: &Model, graph: &Graph, targets: &[usize], seed: u64) -> Result<f64> {
    let blocks = sample_blocks(graph, targets, model.config.fanout, model.layers.len(), seed)?;
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, graph, &blocks, Mode::Eval, seed, false, true)?;
    Ok(step_loss(&mut tape, model, graph, targets, &f).1.total)
}

/// Loss terms and sampled subgraph size of one optimization step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub total: f64,
    pub bce: f64,
    pub aib: f64,
    pub hib: f64,
    /// Candidate edges over all sampled blocks.
    pub sampled_edges: usize,
}

/// Adam with one slot per trainable parameter of `model`.
pub fn optimizer_for(model: &Model) -> Adam {
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, m)| m.data.len()).collect();
    Adam::new(
        AdamConfig {
            lr: model.config.lr,
            ..Default::default()
        },
        &sizes,
    )
}

/// One optimization step on `targets`; `(epoch, step)` select the sampling
/// and noise streams.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    graph: &Graph,
    targets: &[usize],
    epoch: usize,
    step: usize,
) -> Result<StepReport> {
    let cfg = &model.config;
    let tags = [epoch as u64, step as u64];
    let blocks = sample_blocks(
        graph,
        targets,
        cfg.fanout,
        cfg.layers,
        rng::derive(cfg.seed, &[2, tags[0], tags[1]]),
    )?;
    let mut tape = Tape::new();
    let f = model.forward(
        &mut tape,
        graph,
        &blocks,
        Mode::Train,
        rng::derive(cfg.seed, &[3, tags[0], tags[1]]),
        true,
        true,
    )?;
    let (loss, terms) = step_loss(&mut tape, model, graph, targets, &f);
    if !terms.total.is_finite() {
        return Err(Error::Training(format!("loss became non-finite at epoch {epoch}")));
    }
    tape.backward(loss)?;
    let grads: Vec<Vec<f64>> = f
        .params
        .iter()
        .map(|&p| tape.grad(p).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    drop(tape);
    opt.next_step();
    for (slot, ((name, m), g)) in model.named_params_mut().into_iter().zip(&grads).enumerate() {
        opt.update(slot, &name, &mut m.data, g)
            .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
    }
    Ok(StepReport {
        total: terms.total,
        bce: terms.bce,
        aib: terms.aib,
        hib: terms.hib,
        sampled_edges: blocks.iter().map(SampledBlock::num_candidate_edges).sum(),
    })
}

/// Trains from a fresh initialization and returns the best checkpoint.
pub fn train(graph: &Graph, split: &Split, dictionary: Matrix, config: &TrainConfig) -> Result<TrainOutcome> {
    split.validate(graph.num_nodes())?;
    if dictionary.rows != graph.num_labels() {
        return Err(Error::Compatibility(format!(
            "label dictionary has {} rows but the dataset has {} labels",
            dictionary.rows,
            graph.num_labels()
        )));
    }
    let mut model = Model::new(config.clone(), graph.num_features(), dictionary)?;
    train_model(&mut model, graph, split)
}

/// Trains `model` in place for `model.config.epochs` epochs.
pub fn train_model(model: &mut Model, graph: &Graph, split: &Split) -> Result<TrainOutcome> {
    model.check_compatible(graph)?;
    let cfg = model.config.clone();
    graph.warn_unlabeled(&split.train);
    let mut opt = optimizer_for(model);
    let full_batch = graph.num_nodes() < cfg.full_batch_threshold;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut rng::rng(rng::derive(cfg.seed, &[1, epoch as u64])));
        let chunk = if full_batch { order.len().max(1) } else { cfg.batch_size };
        let mut acc = StepReport::default();
        for (step, targets) in order.chunks(chunk).enumerate() {
            let r = train_step(model, &mut opt, graph, targets, epoch, step)?;
            acc.total += r.total;
            acc.bce += r.bce;
            acc.aib += r.aib;
            acc.hib += r.hib;
        }
        let n = split.train.len().max(1) as f64;
        let val = if split.val.is_empty() {
            None
        } else {
            evaluate(model, graph, &split.val)?.metrics.micro_auc
        };
        log::info!(
            "epoch {epoch}: loss {:.5} bce {:.5} val micro-AUC {:?}",
            acc.total / n,
            acc.bce / n,
            val
        );
        history.push(EpochRecord {
            epoch,
            train_loss: acc.total / n,
            bce: acc.bce / n,
            aib: acc.aib / n,
            hib: acc.hib / n,
            val_micro_auc: val,
        });
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, model.clone()));
            }
        }
    }
    let (model_out, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => (model.clone(), None),
    };
    Ok(TrainOutcome {
        model: model_out,
        history,
        best_epoch,
    })
}

/// Everything needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: Model,
    pub split: Option<Split>,
    pub best_epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(model: Model, split: Option<Split>, best_epoch: Option<usize>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            split,
            best_epoch,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, report::to_json(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
