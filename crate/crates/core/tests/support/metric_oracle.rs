//! Brute-force reference implementations of the seven metrics, written from
//! the definitions by pair counting and per-cutoff enumeration.

use mlgib::metrics::{
    hamming_loss, lrap, macro_ap, macro_auc, micro_ap, micro_auc, ranking_loss, PredictionMatrix,
};
use mlgib::rng;
use rand::Rng as _;

pub const ORACLE_TOL: f64 = 1e-9;
pub const METRIC_NAMES: [&str; 7] = [
    "macro_auc",
    "micro_auc",
    "ranking_loss",
    "hamming_loss",
    "macro_ap",
    "micro_ap",
    "lrap",
];

/// `P(s_pos > s_neg) + ½ P(s_pos = s_neg)` over every pair.
pub fn pair_auc(items: &[(f64, bool)]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for &(sp, tp) in items {
        if !tp {
            continue;
        }
        for &(sn, tn) in items {
            if tn {
                continue;
            }
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Items carry `(score, truth, label, node)`; an item ranks ahead of another
/// when its score is higher, ties going to the lower label and then the lower
/// node index. AP is the mean over positives of the precision at that
/// positive's cutoff, each cutoff counted directly.
pub fn cutoff_ap(items: &[(f64, bool, usize, usize)]) -> Option<f64> {
    let ahead = |a: &(f64, bool, usize, usize), b: &(f64, bool, usize, usize)| {
        a.0 > b.0 || (a.0 == b.0 && (a.2, a.3) < (b.2, b.3))
    };
    let positives: Vec<_> = items.iter().filter(|i| i.1).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for p in &positives {
        let retrieved = items.iter().filter(|o| ahead(o, p)).count() + 1;
        let hits = positives.iter().filter(|o| ahead(o, p)).count() + 1;
        total += hits as f64 / retrieved as f64;
    }
    Some(total / positives.len() as f64)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// All seven metrics by brute force, in [`METRIC_NAMES`] order.
pub fn oracle_metrics(pred: &PredictionMatrix, threshold: f64) -> [Option<f64>; 7] {
    let (n, c) = (pred.num_instances(), pred.num_labels());
    let column = |j: usize| -> Vec<(f64, bool)> { (0..n).map(|i| (pred.score(i, j), pred.truth(i, j))).collect() };

    let per_label: Vec<f64> = (0..c).filter_map(|j| pair_auc(&column(j))).collect();
    let macro_auc = mean(&per_label);
    let pooled: Vec<(f64, bool)> = (0..n)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .map(|(i, j)| (pred.score(i, j), pred.truth(i, j)))
        .collect();
    let micro_auc = pair_auc(&pooled);

    let mut rl = Vec::new();
    let mut lr = Vec::new();
    for i in 0..n {
        let (mut reversed, mut pairs) = (0.0, 0usize);
        for a in 0..c {
            for b in 0..c {
                if pred.truth(i, a) && !pred.truth(i, b) {
                    pairs += 1;
                    let (sa, sb) = (pred.score(i, a), pred.score(i, b));
                    if sb > sa {
                        reversed += 1.0;
                    } else if sb == sa {
                        reversed += 0.5;
                    }
                }
            }
        }
        if pairs > 0 {
            rl.push(reversed / pairs as f64);
        }
        let rel: Vec<usize> = (0..c).filter(|&j| pred.truth(i, j)).collect();
        if !rel.is_empty() {
            let mut acc = 0.0;
            for &j in &rel {
                let s = pred.score(i, j);
                let num = rel.iter().filter(|&&k| pred.score(i, k) >= s).count();
                let den = (0..c).filter(|&k| pred.score(i, k) >= s).count();
                acc += num as f64 / den as f64;
            }
            lr.push(acc / rel.len() as f64);
        }
    }

    let wrong = (0..n)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .filter(|&(i, j)| (pred.score(i, j) >= threshold) != pred.truth(i, j))
        .count();
    let hamming = (n * c > 0).then(|| wrong as f64 / (n * c) as f64);

    let per_label_ap: Vec<f64> = (0..c)
        .filter_map(|j| {
            let items: Vec<_> = (0..n).map(|i| (pred.score(i, j), pred.truth(i, j), 0, i)).collect();
            cutoff_ap(&items)
        })
        .collect();
    let pooled_items: Vec<_> = (0..n)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .map(|(i, j)| (pred.score(i, j), pred.truth(i, j), j, i))
        .collect();

    [
        macro_auc,
        micro_auc,
        mean(&rl),
        hamming,
        mean(&per_label_ap),
        cutoff_ap(&pooled_items),
        mean(&lr),
    ]
}

/// The implementation under test, in [`METRIC_NAMES`] order.
pub fn implementation_metrics(pred: &PredictionMatrix, threshold: f64) -> [Option<f64>; 7] {
    [
        macro_auc(pred).ok(),
        micro_auc(pred).ok(),
        ranking_loss(pred).ok(),
        hamming_loss(pred, threshold).ok(),
        macro_ap(pred).ok(),
        micro_ap(pred).ok(),
        lrap(pred).ok(),
    ]
}

/// Random `n × c` prediction matrix. With `levels = Some(k)` scores are
/// quantized to `k` values so ties are common.
pub fn random_prediction(n: usize, c: usize, levels: Option<u32>, seed: u64) -> PredictionMatrix {
    let mut r = rng::rng(seed);
    let density: f64 = r.random_range(0.1..0.6);
    let scores = (0..n * c)
        .map(|_| match levels {
            Some(k) => f64::from(r.random_range(0..k)) / f64::from(k - 1),
            None => r.random::<f64>(),
        })
        .collect();
    let truths = (0..n * c).map(|_| u8::from(r.random_bool(density))).collect();
    PredictionMatrix::new(n, c, scores, truths).unwrap()
}

/// `s ↦ s³`, strictly increasing on `[0, 1]`.
pub fn cube_scores(pred: &PredictionMatrix) -> PredictionMatrix {
    let scores = pred.scores().iter().map(|s| s * s * s).collect();
    PredictionMatrix::new(pred.num_instances(), pred.num_labels(), scores, pred.truths().to_vec()).unwrap()
}

pub fn max_abs_diff(a: &[Option<f64>; 7], b: &[Option<f64>; 7]) -> Option<f64> {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
            (None, None) => {}
            _ => return None,
        }
    }
    Some(worst)
}

#[derive(Debug, Clone)]
pub struct OracleSweep {
    pub matrices: usize,
    /// Largest |implementation − oracle| per metric; `None` if definedness
    /// ever disagreed.
    pub max_error: [Option<f64>; 7],
    /// Largest change of the rank-based metrics under the cube transform.
    pub max_transform_change: f64,
}

/// Compares implementation and oracle on `matrices` random 50×10 instances,
/// every fourth one quantized to force ties.
pub fn oracle_sweep(matrices: usize, seed: u64) -> OracleSweep {
    let mut max_error = [Some(0.0f64); 7];
    let mut max_transform_change = 0.0f64;
    for k in 0..matrices {
        let levels = (k % 4 == 3).then_some(6);
        let pred = random_prediction(50, 10, levels, rng::derive(seed, &[k as u64]));
        let got = implementation_metrics(&pred, 0.5);
        let want = oracle_metrics(&pred, 0.5);
        for i in 0..7 {
            max_error[i] = match (max_error[i], got[i], want[i]) {
                (Some(m), Some(a), Some(b)) => Some(m.max((a - b).abs())),
                (Some(m), None, None) => Some(m),
                _ => None,
            };
        }
        // AP breaks ties by index, so its invariance only holds without ties.
        if levels.is_none() {
            let cubed = implementation_metrics(&cube_scores(&pred), 0.5);
            for i in [0, 1, 2, 4, 5, 6] {
                if let (Some(a), Some(b)) = (got[i], cubed[i]) {
                    max_transform_change = max_transform_change.max((a - b).abs());
                }
            }
        }
    }
    OracleSweep {
        matrices,
        max_error,
        max_transform_change,
    }
}
