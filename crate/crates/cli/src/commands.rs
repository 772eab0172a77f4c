//! Subcommand implementations. Each one reads its inputs from an
//! [`ExperimentConfig`], writes its primary outputs under `out`, and returns
//! the same data for callers that want it in memory.

use std::fs;
use std::path::{Path, PathBuf};

use mlgib::bounds::{verify_bounds, BoundsReport, SweepOptions};
use mlgib::graph::{
    degree_buckets, load_dataset, load_splits, make_split, neighbor_label_jaccard, perturb_add_edges, save_dataset,
    save_splits, Split,
};
use mlgib::label_embed::{format_embeddings, train_label_embeddings, LabelDictionary};
use mlgib::metrics::{per_label_auc, MetricBundle};
use mlgib::report::{fmt_f64, fmt_opt, to_json};
use mlgib::train::{evaluate, history_csv, train as fit, Checkpoint, Evaluation, Model};
use mlgib::{rng, Graph, Matrix};
use rand::Rng as _;
use serde::Serialize;

use crate::config::{EvalSplit, ExperimentConfig, GroupBy};
use crate::error::CliError;

pub const EMBED_SUMMARY_FILE: &str = "embed_summary.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PERTURB_FILE: &str = "perturbation.csv";
pub const STATS_FILE: &str = "stats.json";
pub const DEGREE_HIST_FILE: &str = "degree_histogram.csv";
pub const JACCARD_HIST_FILE: &str = "jaccard_histogram.csv";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const JACCARD_BINS: usize = 20;

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    to_json(value).map_err(|e| CliError::Core(e.into()))
}

fn load_graph(cfg: &ExperimentConfig) -> Result<Graph, CliError> {
    Ok(load_dataset(cfg.dataset_path()?)?)
}

/// `splits.json` from the dataset directory if present, otherwise a seeded
/// random split.
fn resolve_split(cfg: &ExperimentConfig, graph: &Graph) -> Result<Split, CliError> {
    match load_splits(cfg.dataset_path()?, graph.num_nodes())? {
        Some(s) => Ok(s),
        None => Ok(make_split(graph.num_nodes(), cfg.split_ratios, cfg.split_seed())?),
    }
}

fn split_nodes(split: &Split, which: EvalSplit, n: usize) -> Vec<usize> {
    match which {
        EvalSplit::Train => split.train.clone(),
        EvalSplit::Val => split.val.clone(),
        EvalSplit::Test => split.test.clone(),
        EvalSplit::All => (0..n).collect(),
    }
}

// ----- embed-labels -----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedSummary {
    pub num_labels: usize,
    pub dim: usize,
    pub seed: u64,
    pub epochs: usize,
    pub negatives: usize,
    pub train_nodes: usize,
    pub final_loss: Option<f64>,
}

fn embed_for(cfg: &ExperimentConfig, graph: &Graph, split: &Split) -> Result<(LabelDictionary, EmbedSummary), CliError> {
    let ec = cfg.embed_config();
    let sets: Vec<Vec<usize>> = split.train.iter().map(|&v| graph.label_set(v)).collect();
    let out = train_label_embeddings(&sets, graph.num_labels(), &ec)?;
    let path = cfg.labels_path();
    write(&path, &format_embeddings(&out.dictionary.embeddings))?;
    let summary = EmbedSummary {
        num_labels: graph.num_labels(),
        dim: ec.dim,
        seed: ec.seed,
        epochs: ec.epochs,
        negatives: ec.negatives,
        train_nodes: split.train.len(),
        final_loss: out.epoch_losses.last().copied(),
    };
    write(&cfg.out.join(EMBED_SUMMARY_FILE), &json(&summary)?)?;
    log::info!("wrote {} ({} x {})", path.display(), summary.num_labels, summary.dim);
    Ok((out.dictionary, summary))
}

/// Trains the label dictionary on the training split and writes
/// `labels.emb` plus a JSON summary.
pub fn embed_labels(cfg: &ExperimentConfig) -> Result<EmbedSummary, CliError> {
    let graph = load_graph(cfg)?;
    let split = resolve_split(cfg, &graph)?;
    Ok(embed_for(cfg, &graph, &split)?.1)
}

// ----- train -----

/// Metric bundle of one node set; the `metrics.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub split: String,
    pub nodes: usize,
    pub threshold: f64,
    pub metrics: MetricBundle,
}

impl MetricsReport {
    fn new(which: EvalSplit, eval: &Evaluation, threshold: f64) -> Self {
        MetricsReport {
            split: which.name().to_string(),
            nodes: eval.nodes.len(),
            threshold,
            metrics: eval.metrics,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub checkpoint: PathBuf,
    pub metrics: Option<MetricsReport>,
}

fn dictionary_for(cfg: &ExperimentConfig, graph: &Graph, split: &Split) -> Result<Matrix, CliError> {
    let path = cfg.labels_path();
    if path.exists() {
        let dict = LabelDictionary::load(&path)?;
        if dict.num_labels() != graph.num_labels() {
            return Err(mlgib::Error::Compatibility(format!(
                "{} has {} rows but the dataset has {} labels",
                path.display(),
                dict.num_labels(),
                graph.num_labels()
            ))
            .into());
        }
        return Ok(dict.embeddings);
    }
    if cfg.embed_if_missing {
        return Ok(embed_for(cfg, graph, split)?.0.embeddings);
    }
    if cfg.train.finetune_labels {
        let (c, d) = (graph.num_labels(), cfg.embed.dim);
        let bound = 0.5 / d as f64;
        let mut r = rng::rng(rng::derive(cfg.seed, &[7]));
        let data = (0..c * d).map(|_| r.random_range(-bound..=bound)).collect();
        log::info!("no label dictionary at {}; fine-tuning from a random one", path.display());
        return Ok(Matrix::from_vec(c, d, data));
    }
    Err(CliError::Io(format!(
        "label dictionary {} not found; run embed-labels first or set embed_if_missing or finetune_labels",
        path.display()
    )))
}

/// Trains a model and writes the checkpoint, `history.csv` and, unless
/// disabled, `metrics.json` for the configured evaluation split.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    let tc = cfg.train_config();
    tc.validate()?;
    let graph = load_graph(cfg)?;
    let split = resolve_split(cfg, &graph)?;
    let dict = dictionary_for(cfg, &graph, &split)?;
    let outcome = fit(&graph, &split, dict, &tc)?;

    let ck_path = cfg.checkpoint_path();
    let ck = Checkpoint::new(outcome.model, Some(split.clone()), outcome.best_epoch);
    write(&ck_path, &json(&ck)?)?;
    write(&cfg.out.join(HISTORY_FILE), &history_csv(&outcome.history))?;

    let metrics = if cfg.evaluate_after_train {
        let nodes = split_nodes(&split, cfg.eval_split, graph.num_nodes());
        let eval = evaluate(&ck.model, &graph, &nodes)?;
        let report = MetricsReport::new(cfg.eval_split, &eval, tc.threshold);
        write(&cfg.out.join(METRICS_FILE), &json(&report)?)?;
        Some(report)
    } else {
        None
    };
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        checkpoint: ck_path,
        metrics,
    })
}

// ----- eval -----

fn load_checkpoint(cfg: &ExperimentConfig, graph: &Graph) -> Result<(Model, Split), CliError> {
    let ck = Checkpoint::load(cfg.checkpoint_path())?;
    ck.model.check_compatible(graph)?;
    let split = match ck.split {
        Some(s) if s.validate(graph.num_nodes()).is_ok() => s,
        _ => resolve_split(cfg, graph)?,
    };
    Ok((ck.model, split))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEntry {
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    pub metrics: MetricBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupedReport {
    pub split: String,
    pub group_by: String,
    pub threshold: f64,
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelReport {
    pub split: String,
    pub group_by: String,
    pub nodes: usize,
    /// `null` for labels with only one class among the nodes.
    pub per_label_auc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum EvalReport {
    Overall(MetricsReport),
    Grouped(GroupedReport),
    Labels(LabelReport),
}

impl EvalReport {
    pub fn file_name(group: GroupBy) -> &'static str {
        match group {
            GroupBy::None => "eval.json",
            GroupBy::Jaccard => "eval_jaccard.json",
            GroupBy::Degree => "eval_degree.json",
            GroupBy::Label => "eval_label.json",
        }
    }
}

/// Powers of two `0, 1, 2, 4, ...` up to the first edge above `max_degree`.
pub fn default_degree_buckets(max_degree: usize) -> Vec<f64> {
    let mut edges = vec![0.0, 1.0];
    while *edges.last().unwrap() <= max_degree as f64 {
        let next = edges.last().unwrap() * 2.0;
        edges.push(next);
    }
    edges
}

/// Index of the bucket `[edges[i], edges[i+1])` holding `x`; the last bucket
/// also takes its upper edge.
fn bucket_of(x: f64, edges: &[f64]) -> Option<usize> {
    let last = edges.len() - 2;
    edges
        .windows(2)
        .enumerate()
        .position(|(i, w)| w[0] <= x && (x < w[1] || (i == last && x == w[1])))
}

fn check_edges(edges: &[f64], what: &str) -> Result<(), CliError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::Config(format!("{what} must be at least two increasing values")));
    }
    Ok(())
}

/// Evaluates the checkpoint on the configured split, whole or grouped.
pub fn eval(cfg: &ExperimentConfig, group: GroupBy) -> Result<EvalReport, CliError> {
    let graph = load_graph(cfg)?;
    let (model, split) = load_checkpoint(cfg, &graph)?;
    let nodes = split_nodes(&split, cfg.eval_split, graph.num_nodes());
    let ev = evaluate(&model, &graph, &nodes)?;
    let threshold = model.config.threshold;
    let name = cfg.eval_split.name().to_string();

    let grouped = |group_by: &str, edges: &[f64], key: &dyn Fn(usize) -> f64| {
        let mut members = vec![Vec::new(); edges.len() - 1];
        for (row, &v) in nodes.iter().enumerate() {
            if let Some(b) = bucket_of(key(v), edges) {
                members[b].push(row);
            }
        }
        let groups = members
            .iter()
            .enumerate()
            .map(|(b, rows)| GroupEntry {
                lower: edges[b],
                upper: edges[b + 1],
                nodes: rows.len(),
                metrics: mlgib::metrics::evaluate_all(&ev.predictions.restrict(rows), threshold),
            })
            .collect();
        EvalReport::Grouped(GroupedReport {
            split: name.clone(),
            group_by: group_by.to_string(),
            threshold,
            groups,
        })
    };

    let report = match group {
        GroupBy::None => EvalReport::Overall(MetricsReport::new(cfg.eval_split, &ev, threshold)),
        GroupBy::Jaccard => {
            check_edges(&cfg.jaccard_buckets, "jaccard_buckets")?;
            let jac = neighbor_label_jaccard(&graph);
            grouped("jaccard", &cfg.jaccard_buckets, &|v| jac[v])
        }
        GroupBy::Degree => {
            let edges = cfg
                .degree_buckets
                .clone()
                .unwrap_or_else(|| default_degree_buckets(graph.max_degree()));
            check_edges(&edges, "degree_buckets")?;
            let buckets = degree_buckets(&graph, &edges)?;
            grouped("degree", &buckets.edges, &|v| buckets.degrees[v] as f64)
        }
        GroupBy::Label => EvalReport::Labels(LabelReport {
            split: name.clone(),
            group_by: "label".into(),
            nodes: nodes.len(),
            per_label_auc: per_label_auc(&ev.predictions),
        }),
    };
    write(&cfg.out.join(EvalReport::file_name(group)), &json(&report)?)?;
    Ok(report)
}

// ----- perturb-eval -----

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRow {
    pub proportion: f64,
    pub edges: usize,
    pub metrics: MetricBundle,
}

pub fn perturb_csv(rows: &[PerturbRow]) -> String {
    let mut s = format!("proportion,edges,{}\n", MetricBundle::NAMES.join(","));
    for r in rows {
        let vals: Vec<String> = r.metrics.values().iter().map(|v| fmt_opt(*v)).collect();
        s.push_str(&format!("{},{},{}\n", fmt_f64(r.proportion), r.edges, vals.join(",")));
    }
    s
}

/// Re-evaluates the checkpoint after adding `proportion * m` random edges,
/// each proportion on a fresh copy of the graph.
pub fn perturb_eval(cfg: &ExperimentConfig, proportions: &[f64]) -> Result<Vec<PerturbRow>, CliError> {
    if let Some(p) = proportions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CliError::Config(format!("perturbation proportion {p} outside [0, 1]")));
    }
    let graph = load_graph(cfg)?;
    let (model, split) = load_checkpoint(cfg, &graph)?;
    let nodes = split_nodes(&split, cfg.eval_split, graph.num_nodes());
    let mut rows = Vec::with_capacity(proportions.len());
    for (i, &p) in proportions.iter().enumerate() {
        let noisy = perturb_add_edges(&graph, p, rng::derive(cfg.perturb_seed(), &[i as u64]))?;
        log::info!("proportion {p}: {} edges (from {})", noisy.num_edges(), graph.num_edges());
        let ev = evaluate(&model, &noisy, &nodes)?;
        rows.push(PerturbRow {
            proportion: p,
            edges: noisy.num_edges(),
            metrics: ev.metrics,
        });
    }
    write(&cfg.out.join(PERTURB_FILE), &perturb_csv(&rows))?;
    Ok(rows)
}

// ----- stats -----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeCount {
    pub degree: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub labels: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub isolated_nodes: usize,
    pub mean_labels_per_node: f64,
    /// Only degrees that occur.
    pub degree_histogram: Vec<DegreeCount>,
    /// Neighbor-label Jaccard of non-isolated nodes, 20 equal bins over
    /// `[0, 1]`, the last one closed.
    pub jaccard_histogram: Vec<HistogramBin>,
}

pub fn graph_stats(graph: &Graph) -> GraphStats {
    let n = graph.num_nodes();
    let mut degree_counts = std::collections::BTreeMap::new();
    for v in 0..n {
        *degree_counts.entry(graph.degree(v)).or_insert(0usize) += 1;
    }
    let jac = neighbor_label_jaccard(graph);
    let mut bins = vec![0usize; JACCARD_BINS];
    for v in (0..n).filter(|&v| graph.degree(v) > 0) {
        let b = ((jac[v] * JACCARD_BINS as f64) as usize).min(JACCARD_BINS - 1);
        bins[b] += 1;
    }
    let width = 1.0 / JACCARD_BINS as f64;
    GraphStats {
        nodes: n,
        edges: graph.num_edges(),
        features: graph.num_features(),
        labels: graph.num_labels(),
        mean_degree: if n == 0 { 0.0 } else { 2.0 * graph.num_edges() as f64 / n as f64 },
        max_degree: graph.max_degree(),
        isolated_nodes: degree_counts.get(&0).copied().unwrap_or(0),
        mean_labels_per_node: if n == 0 {
            0.0
        } else {
            graph.label_matrix().iter().map(|&y| y as usize).sum::<usize>() as f64 / n as f64
        },
        degree_histogram: degree_counts
            .into_iter()
            .map(|(degree, count)| DegreeCount { degree, count })
            .collect(),
        jaccard_histogram: bins
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                lower: i as f64 * width,
                upper: (i + 1) as f64 * width,
                count,
            })
            .collect(),
    }
}

/// Writes `stats.json` and the two histogram CSVs.
pub fn stats(cfg: &ExperimentConfig) -> Result<GraphStats, CliError> {
    let graph = load_graph(cfg)?;
    let s = graph_stats(&graph);
    write(&cfg.out.join(STATS_FILE), &json(&s)?)?;
    let mut deg = String::from("degree,count\n");
    for d in &s.degree_histogram {
        deg.push_str(&format!("{},{}\n", d.degree, d.count));
    }
    write(&cfg.out.join(DEGREE_HIST_FILE), &deg)?;
    let mut jac = String::from("lower,upper,count\n");
    for b in &s.jaccard_histogram {
        jac.push_str(&format!("{},{},{}\n", fmt_f64(b.lower), fmt_f64(b.upper), b.count));
    }
    write(&cfg.out.join(JACCARD_HIST_FILE), &jac)?;
    Ok(s)
}

// ----- verify-bounds -----

/// Runs the bound sweeps and writes `bounds.json`. A failed sweep is
/// reported as [`CliError::Failed`] after the report is written.
pub fn verify(cfg: &ExperimentConfig, trials: usize, corrupt_critic: bool) -> Result<BoundsReport, CliError> {
    let report = verify_bounds(trials, cfg.seed, SweepOptions { corrupt_critic })?;
    write(&cfg.out.join(BOUNDS_FILE), &json(&report)?)?;
    if report.pass {
        Ok(report)
    } else {
        let failed: Vec<&str> = report
            .properties
            .iter()
            .filter(|p| !p.pass)
            .map(|p| p.property.as_str())
            .collect();
        Err(CliError::Failed(format!("bound violations in {}", failed.join(", "))))
    }
}

// ----- make-synthetic -----

/// Writes a planted-community dataset (with `splits.json`) into `out`.
pub fn make_synthetic(cfg: &ExperimentConfig) -> Result<GraphStats, CliError> {
    let spec = cfg.synthetic_spec();
    let graph = mlgib::synthetic::make_synthetic_graph(&spec)?;
    save_dataset(&graph, &cfg.out)?;
    let split = make_split(graph.num_nodes(), cfg.split_ratios, cfg.split_seed())?;
    save_splits(&split, &cfg.out)?;
    Ok(graph_stats(&graph))
}
