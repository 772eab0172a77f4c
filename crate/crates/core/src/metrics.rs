//! Multi-label evaluation metrics.
//!
//! Tie conventions are fixed explicitly:
//!
//! * AUC uses midranks, so tied positive/negative pairs count one half.
//! * Ranking loss counts a tied (relevant, irrelevant) pair as half a reversal.
//! * LRAP counts ties inclusively in both numerator and denominator.
//! * AP sweeps a descending stable sort; ties are ordered by label index, then
//!   node index, and every item is its own threshold.
//!
//! Degenerate labels (macro AUC/AP) and instances (ranking loss, LRAP) are
//! skipped with a warning. A metric with nothing left to average is undefined.
//!
//! Ranking loss and Hamming loss are losses (lower is better); the other five
//! are gains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores in `[0, 1]` against binary truths, both `n × C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    n: usize,
    c: usize,
    scores: Vec<f64>,
    truths: Vec<u8>,
}

impl PredictionMatrix {
    pub fn new(n: usize, c: usize, scores: Vec<f64>, truths: Vec<u8>) -> Result<Self> {
        if scores.len() != n * c || truths.len() != n * c {
            return Err(Error::Shape(format!(
                "prediction matrix expects {n}x{c} entries, got {} scores and {} truths",
                scores.len(),
                truths.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Argument("scores must be finite".into()));
        }
        if truths.iter().any(|&t| t > 1) {
            return Err(Error::Argument("truths must be 0/1".into()));
        }
        Ok(PredictionMatrix { n, c, scores, truths })
    }

    pub fn num_instances(&self) -> usize {
        self.n
    }

    pub fn num_labels(&self) -> usize {
        self.c
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn truths(&self) -> &[u8] {
        &self.truths
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.c + j]
    }

    pub fn truth(&self, i: usize, j: usize) -> bool {
        self.truths[i * self.c + j] == 1
    }

    /// Keeps only the listed instance rows, in the given order.
    pub fn restrict(&self, rows: &[usize]) -> PredictionMatrix {
        let c = self.c;
        let mut scores = Vec::with_capacity(rows.len() * c);
        let mut truths = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            scores.extend_from_slice(&self.scores[r * c..(r + 1) * c]);
            truths.extend_from_slice(&self.truths[r * c..(r + 1) * c]);
        }
        PredictionMatrix {
            n: rows.len(),
            c,
            scores,
            truths,
        }
    }

    fn column(&self, j: usize) -> (Vec<f64>, Vec<u8>) {
        (0..self.n)
            .map(|i| (self.score(i, j), self.truths[i * self.c + j]))
            .unzip()
    }
}

/// Mann–Whitney AUC with midranks. `None` when one class is missing.
pub fn binary_auc(scores: &[f64], truths: &[u8]) -> Option<f64> {
    let pos = truths.iter().filter(|&&t| t == 1).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if truths[k] == 1 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Step-interpolated average precision over items already in sweep order.
fn ap_in_order(order: impl Iterator<Item = u8>, positives: usize) -> f64 {
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (k, t) in order.enumerate() {
        if t == 1 {
            tp += 1;
            sum += tp as f64 / (k + 1) as f64;
        }
    }
    sum / positives as f64
}

/// Average precision of one score column; ties keep index order.
pub fn binary_ap(scores: &[f64], truths: &[u8]) -> Option<f64> {
    let pos = truths.iter().filter(|&&t| t == 1).count();
    if pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Some(ap_in_order(order.iter().map(|&i| truths[i]), pos))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn per_label_auc(pred: &PredictionMatrix) -> Vec<Option<f64>> {
    (0..pred.c)
        .map(|j| {
            let (s, t) = pred.column(j);
            binary_auc(&s, &t)
        })
        .collect()
}

pub fn macro_auc(pred: &PredictionMatrix) -> Result<f64> {
    let per = per_label_auc(pred);
    let valid: Vec<f64> = per.iter().flatten().copied().collect();
    if valid.len() < per.len() {
        log::warn!(
            "macro AUC: skipped {} label(s) lacking both classes",
            per.len() - valid.len()
        );
    }
    if valid.is_empty() {
        return Err(Error::UndefinedMetric("macro AUC: no label has both classes".into()));
    }
    Ok(mean(&valid))
}

pub fn micro_auc(pred: &PredictionMatrix) -> Result<f64> {
    binary_auc(&pred.scores, &pred.truths)
        .ok_or_else(|| Error::UndefinedMetric("micro AUC: pooled labels contain one class".into()))
}

pub fn macro_ap(pred: &PredictionMatrix) -> Result<f64> {
    let mut valid = Vec::with_capacity(pred.c);
    for j in 0..pred.c {
        let (s, t) = pred.column(j);
        if let Some(ap) = binary_ap(&s, &t) {
            valid.push(ap);
        }
    }
    if valid.len() < pred.c {
        log::warn!("macro AP: skipped {} label(s) without positives", pred.c - valid.len());
    }
    if valid.is_empty() {
        return Err(Error::UndefinedMetric("macro AP: no label has a positive".into()));
    }
    Ok(mean(&valid))
}

/// AP over the flattened pool. Ties are ordered by label index, then node index.
pub fn micro_ap(pred: &PredictionMatrix) -> Result<f64> {
    let pos = pred.truths.iter().filter(|&&t| t == 1).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("micro AP: no positives".into()));
    }
    let c = pred.c;
    let mut order: Vec<usize> = (0..pred.scores.len()).collect();
    order.sort_by(|&a, &b| {
        pred.scores[b]
            .total_cmp(&pred.scores[a])
            .then((a % c).cmp(&(b % c)))
            .then((a / c).cmp(&(b / c)))
    });
    Ok(ap_in_order(order.iter().map(|&k| pred.truths[k]), pos))
}

pub fn ranking_loss(pred: &PredictionMatrix) -> Result<f64> {
    let mut total = 0.0;
    let mut valid = 0usize;
    for i in 0..pred.n {
        let row = &pred.scores[i * pred.c..(i + 1) * pred.c];
        let truth = &pred.truths[i * pred.c..(i + 1) * pred.c];
        let mut irrelevant: Vec<f64> = row.iter().zip(truth).filter(|(_, &t)| t == 0).map(|(&s, _)| s).collect();
        let relevant: Vec<f64> = row.iter().zip(truth).filter(|(_, &t)| t == 1).map(|(&s, _)| s).collect();
        if relevant.is_empty() || irrelevant.is_empty() {
            continue;
        }
        irrelevant.sort_by(f64::total_cmp);
        let mut reversed = 0.0;
        for &s in &relevant {
            let below = irrelevant.partition_point(|&x| x < s);
            let not_above = irrelevant.partition_point(|&x| x <= s);
            reversed += (irrelevant.len() - not_above) as f64 + 0.5 * (not_above - below) as f64;
        }
        total += reversed / (relevant.len() * irrelevant.len()) as f64;
        valid += 1;
    }
    if valid < pred.n {
        log::debug!("ranking loss: excluded {} instance(s) with one-sided labels", pred.n - valid);
    }
    if valid == 0 {
        return Err(Error::UndefinedMetric("ranking loss: no instance has both label kinds".into()));
    }
    Ok(total / valid as f64)
}

/// Fraction of entries where `score >= threshold` disagrees with the truth.
pub fn hamming_loss(pred: &PredictionMatrix, threshold: f64) -> Result<f64> {
    if pred.scores.is_empty() {
        return Err(Error::UndefinedMetric("hamming loss: empty prediction matrix".into()));
    }
    let wrong = pred
        .scores
        .iter()
        .zip(&pred.truths)
        .filter(|(&s, &t)| (s >= threshold) != (t == 1))
        .count();
    Ok(wrong as f64 / pred.scores.len() as f64)
}

pub fn lrap(pred: &PredictionMatrix) -> Result<f64> {
    let mut total = 0.0;
    let mut valid = 0usize;
    for i in 0..pred.n {
        let row = &pred.scores[i * pred.c..(i + 1) * pred.c];
        let truth = &pred.truths[i * pred.c..(i + 1) * pred.c];
        let mut all: Vec<f64> = row.to_vec();
        let mut rel: Vec<f64> = row.iter().zip(truth).filter(|(_, &t)| t == 1).map(|(&s, _)| s).collect();
        if rel.is_empty() {
            continue;
        }
        all.sort_by(f64::total_cmp);
        rel.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for &s in &rel {
            let at_or_above_rel = rel.len() - rel.partition_point(|&x| x < s);
            let at_or_above = all.len() - all.partition_point(|&x| x < s);
            acc += at_or_above_rel as f64 / at_or_above as f64;
        }
        total += acc / rel.len() as f64;
        valid += 1;
    }
    if valid == 0 {
        return Err(Error::UndefinedMetric("LRAP: no instance has a relevant label".into()));
    }
    Ok(total / valid as f64)
}

/// The seven metrics, `None` where undefined. Field order is the serialized
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub ranking_loss: Option<f64>,
    pub hamming_loss: Option<f64>,
    pub macro_ap: Option<f64>,
    pub micro_ap: Option<f64>,
    pub lrap: Option<f64>,
}

impl MetricBundle {
    pub const NAMES: [&'static str; 7] = [
        "macro_auc",
        "micro_auc",
        "ranking_loss",
        "hamming_loss",
        "macro_ap",
        "micro_ap",
        "lrap",
    ];

    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.macro_auc,
            self.micro_auc,
            self.ranking_loss,
            self.hamming_loss,
            self.macro_ap,
            self.micro_ap,
            self.lrap,
        ]
    }

    /// Whether larger values are better for the metric at `NAMES[i]`.
    pub fn higher_is_better(i: usize) -> bool {
        !matches!(Self::NAMES[i], "ranking_loss" | "hamming_loss")
    }
}

pub fn evaluate_all(pred: &PredictionMatrix, threshold: f64) -> MetricBundle {
    MetricBundle {
        macro_auc: macro_auc(pred).ok(),
        micro_auc: micro_auc(pred).ok(),
        ranking_loss: ranking_loss(pred).ok(),
        hamming_loss: hamming_loss(pred, threshold).ok(),
        macro_ap: macro_ap(pred).ok(),
        micro_ap: micro_ap(pred).ok(),
        lrap: lrap(pred).ok(),
    }
}

/// Full metric bundle restricted to each group of instance rows.
pub fn grouped_eval(pred: &PredictionMatrix, groups: &[Vec<usize>], threshold: f64) -> Vec<MetricBundle> {
    groups
        .iter()
        .map(|g| evaluate_all(&pred.restrict(g), threshold))
        .collect()
}
