//! Command-line pipeline: dataset generation, label embeddings, training,
//! evaluation, robustness curves, graph statistics and bound checks.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{EvalSplit, ExperimentConfig, GroupBy};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mlgib", version, about = "Multi-label graph information bottleneck toolkit")]
pub struct Cli {
    /// Experiment file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the dataset directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train skip-gram label embeddings on the training split.
    EmbedLabels,
    /// Train a model and evaluate its best checkpoint.
    Train,
    /// Evaluate a checkpoint, optionally grouped.
    Eval {
        #[arg(long, value_parser = parse_group)]
        group_by: Option<GroupBy>,
    },
    /// Evaluate a checkpoint under random edge injection.
    PerturbEval {
        #[arg(long, value_delimiter = ',')]
        proportions: Option<Vec<f64>>,
    },
    /// Dataset counts and degree / neighbor-label histograms.
    Stats,
    /// Check the information inequalities on random discrete distributions.
    VerifyBounds {
        #[arg(long)]
        trials: Option<usize>,
        /// Shift the critic in one expectation only (detector check).
        #[arg(long, hide = true)]
        corrupt_critic: bool,
    },
    /// Write a planted-community dataset.
    MakeSynthetic,
}

fn parse_group(s: &str) -> Result<GroupBy, String> {
    s.parse()
}

impl Cli {
    /// Config file (if any) with the command-line overrides applied.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        Ok(cfg)
    }
}

/// Runs one parsed command and returns the line to print on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.experiment()?;
    match &cli.command {
        Command::EmbedLabels => {
            let s = commands::embed_labels(&cfg)?;
            Ok(format!(
                "label dictionary {} x {} written to {} (final loss {})",
                s.num_labels,
                s.dim,
                cfg.labels_path().display(),
                s.final_loss.map_or("n/a".into(), |l| format!("{l:.6}"))
            ))
        }
        Command::Train => {
            let s = commands::train(&cfg)?;
            let auc = s
                .metrics
                .as_ref()
                .and_then(|m| m.metrics.micro_auc)
                .map_or("n/a".into(), |v| format!("{v:.4}"));
            Ok(format!(
                "checkpoint {} (best epoch {:?}), {} micro-AUC {auc}",
                s.checkpoint.display(),
                s.best_epoch,
                cfg.eval_split.name()
            ))
        }
        Command::Eval { group_by } => {
            let group = group_by.unwrap_or(cfg.group_by);
            commands::eval(&cfg, group)?;
            Ok(format!(
                "wrote {}",
                cfg.out.join(commands::EvalReport::file_name(group)).display()
            ))
        }
        Command::PerturbEval { proportions } => {
            let props = proportions.clone().unwrap_or_else(|| cfg.perturb_proportions.clone());
            let rows = commands::perturb_eval(&cfg, &props)?;
            Ok(format!(
                "{} perturbation rows written to {}",
                rows.len(),
                cfg.out.join(commands::PERTURB_FILE).display()
            ))
        }
        Command::Stats => {
            let s = commands::stats(&cfg)?;
            Ok(format!("{} nodes, {} edges, {} labels", s.nodes, s.edges, s.labels))
        }
        Command::VerifyBounds { trials, corrupt_critic } => {
            let r = commands::verify(&cfg, trials.unwrap_or(cfg.trials), *corrupt_critic)?;
            Ok(format!("{} properties x {} trials: all pass", r.properties.len(), r.trials))
        }
        Command::MakeSynthetic => {
            let s = commands::make_synthetic(&cfg)?;
            Ok(format!(
                "synthetic dataset in {}: {} nodes, {} edges, {} labels",
                cfg.out.display(),
                s.nodes,
                s.edges,
                s.labels
            ))
        }
    }
}
