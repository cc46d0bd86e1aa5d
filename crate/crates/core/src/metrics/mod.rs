//! Classification and consistency metrics.
//!
//! Label series use `Option<u8>`; `None` marks an unparsable or missing
//! value. Pairwise metrics drop pairs with a missing side.

mod report;
#[cfg(test)]
mod tests;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use report::{MetricReport, ReportInputs, ThresholdMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no usable pairs")]
    Empty,
    #[error("only one class present; the metric is undefined")]
    SingleClass,
}

fn check_len(a: usize, b: usize) -> Result<(), MetricError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricError::LengthMismatch(a, b))
    }
}

fn pairs(scores: &[f64], labels: &[Option<u8>]) -> Result<Vec<(f64, bool)>, MetricError> {
    check_len(scores.len(), labels.len())?;
    let out: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels)
        .filter_map(|(&s, l)| l.map(|l| (s, l == 1)))
        .collect();
    let pos = out.iter().filter(|p| p.1).count();
    if out.is_empty() {
        return Err(MetricError::Empty);
    }
    if pos == 0 || pos == out.len() {
        return Err(MetricError::SingleClass);
    }
    Ok(out)
}

/// Mann-Whitney AUROC with midranks for ties: the fraction of
/// positive-negative pairs the positive wins, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[Option<u8>]) -> Result<f64, MetricError> {
    let mut p = pairs(scores, labels)?;
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = p.iter().filter(|x| x.1).count() as f64;
    let n_neg = p.len() as f64 - n_pos;
    // twice the positive rank sum, to stay in integers
    let mut rank2_sum = 0.0;
    let mut i = 0;
    while i < p.len() {
        let mut j = i;
        while j < p.len() && p[j].0 == p[i].0 {
            j += 1;
        }
        // ranks i+1..=j average to (i+1+j)/2
        let mid2 = (i + 1 + j) as f64;
        let pos_here = p[i..j].iter().filter(|x| x.1).count() as f64;
        rank2_sum += mid2 * pos_here;
        i = j;
    }
    let u2 = rank2_sum - n_pos * (n_pos + 1.0);
    Ok(u2 / (2.0 * n_pos * n_neg))
}

/// AUROC by trapezoidal integration of the ROC curve.
pub fn auroc_trapezoid(scores: &[f64], labels: &[Option<u8>]) -> Result<f64, MetricError> {
    let mut p = pairs(scores, labels)?;
    p.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = p.iter().filter(|x| x.1).count() as f64;
    let n_neg = p.len() as f64 - n_pos;
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let mut area2 = 0.0;
    let mut i = 0;
    while i < p.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        while j < p.len() && p[j].0 == p[i].0 {
            if p[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        i = j;
    }
    Ok(area2 / (2.0 * n_pos * n_neg))
}

/// How unparsable predictions enter precision and recall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparsablePolicy {
    /// A missed positive counts as a false negative; never a false positive.
    AsWrong,
    /// The instance is left out.
    Exclude,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Pairs left out (missing gold, or unparsable under `Exclude`).
    pub excluded: usize,
    /// Unparsable predictions counted under `AsWrong`.
    pub unparsable_counted: usize,
}

pub fn confusion(pred: &[Option<u8>], gold: &[Option<u8>], policy: UnparsablePolicy) -> Result<Confusion, MetricError> {
    check_len(pred.len(), gold.len())?;
    let mut c = Confusion::default();
    for (p, g) in pred.iter().zip(gold) {
        match (p, g, policy) {
            (_, None, _) | (None, Some(_), UnparsablePolicy::Exclude) => c.excluded += 1,
            (None, Some(g), UnparsablePolicy::AsWrong) => {
                c.unparsable_counted += 1;
                if *g == 1 {
                    c.fn_ += 1;
                }
            }
            (Some(1), Some(1), _) => c.tp += 1,
            (Some(1), Some(_), _) => c.fp += 1,
            (Some(_), Some(1), _) => c.fn_ += 1,
            (Some(_), Some(_), _) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    /// Zero denominators give zero.
    pub fn prf(&self) -> Prf {
        Prf {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_),
        }
    }
}

pub fn precision_recall_f1(pred: &[Option<u8>], gold: &[Option<u8>], policy: UnparsablePolicy) -> Result<Prf, MetricError> {
    Ok(confusion(pred, gold, policy)?.prf())
}

/// Kappa from a 2x2 table `[[a, b], [c, d]]` (rows: first rater 1/0,
/// columns: second rater 1/0), computed as one integer ratio.
fn kappa_counts(a: u128, b: u128, c: u128, d: u128) -> f64 {
    let n = a + b + c + d;
    let agree = n * (a + d);
    let chance = (a + b) * (a + c) + (c + d) * (b + d);
    let den = n * n - chance;
    if den == 0 {
        return if b + c == 0 { 1.0 } else { 0.0 };
    }
    (agree as i128 - chance as i128) as f64 / den as f64
}

/// Cohen's kappa with marginal-product chance agreement. When chance
/// agreement is 1, kappa is 1 for perfect agreement and 0 otherwise.
pub fn cohens_kappa(x: &[Option<u8>], y: &[Option<u8>]) -> Result<f64, MetricError> {
    check_len(x.len(), y.len())?;
    let (mut a, mut b, mut c, mut d) = (0u128, 0u128, 0u128, 0u128);
    for (p, q) in x.iter().zip(y) {
        if let (Some(p), Some(q)) = (p, q) { match (*p == 1, *q == 1) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        } }
    }
    if a + b + c + d == 0 {
        return Err(MetricError::Empty);
    }
    Ok(kappa_counts(a, b, c, d))
}

/// AUROC of head probabilities against verbalized labels.
pub fn auroc_alignment(scores: &[f64], verbalized: &[Option<u8>]) -> Result<f64, MetricError> {
    auroc(scores, verbalized)
}

/// Mismatch rate and kappa between judge-inferred and verbalized labels,
/// over instances where both are present.
pub fn rationale_label_metrics(inferred: &[Option<u8>], verbalized: &[Option<u8>]) -> Result<(f64, f64), MetricError> {
    check_len(inferred.len(), verbalized.len())?;
    let both: Vec<(u8, u8)> = inferred
        .iter()
        .zip(verbalized)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    if both.is_empty() {
        return Err(MetricError::Empty);
    }
    let mismatches = both.iter().filter(|(a, b)| a != b).count();
    let rli = mismatches as f64 / both.len() as f64;
    let (x, y): (Vec<Option<u8>>, Vec<Option<u8>>) = both.iter().map(|&(a, b)| (Some(a), Some(b))).unzip();
    Ok((rli, cohens_kappa(&x, &y)?))
}

/// Fraction of parsable outputs.
pub fn parsability(parsable: &[bool]) -> Result<f64, MetricError> {
    if parsable.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(parsable.iter().filter(|&&p| p).count() as f64 / parsable.len() as f64)
}

/// Fraction judged readable among judged texts.
pub fn readability_rate(verdicts: &[Option<bool>]) -> Result<f64, MetricError> {
    let judged: Vec<bool> = verdicts.iter().flatten().copied().collect();
    parsability(&judged)
}

/// `p >= t` is positive.
pub fn apply_threshold(scores: &[f64], t: f64) -> Vec<Option<u8>> {
    scores.iter().map(|&s| Some(u8::from(s >= t))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    F1,
    Kappa,
}

/// Candidate thresholds: 0, 1 and midpoints of consecutive sorted unique
/// scores, ascending.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut c: Vec<f64> = s.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    c.push(0.0);
    c.push(1.0);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn objective_value(obj: Objective, tp: usize, fp: usize, fn_: usize, tn: usize) -> f64 {
    match obj {
        Objective::F1 => ratio(2 * tp, 2 * tp + fp + fn_),
        Objective::Kappa => kappa_counts(tp as u128, fp as u128, fn_ as u128, tn as u128),
    }
}

/// Smallest candidate threshold attaining the maximal objective, with its
/// objective value. Runs as one sweep over the sorted scores.
pub fn tune_threshold(scores: &[f64], gold: &[Option<u8>], objective: Objective) -> Result<(f64, f64), MetricError> {
    check_len(scores.len(), gold.len())?;
    let mut p: Vec<(f64, bool)> = scores
        .iter()
        .zip(gold)
        .filter_map(|(&s, g)| g.map(|g| (s, g == 1)))
        .collect();
    if p.is_empty() {
        return Err(MetricError::Empty);
    }
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos = p.iter().filter(|x| x.1).count();
    let total_neg = p.len() - total_pos;
    let candidates = threshold_candidates(&scores.iter().zip(gold).filter(|(_, g)| g.is_some()).map(|(&s, _)| s).collect::<Vec<_>>());
    // below[i] counts: scores strictly below the current candidate
    let (mut idx, mut pos_below, mut neg_below) = (0usize, 0usize, 0usize);
    let mut best: Option<(f64, f64)> = None;
    for &t in &candidates {
        while idx < p.len() && p[idx].0 < t {
            if p[idx].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            idx += 1;
        }
        let tp = total_pos - pos_below;
        let fp = total_neg - neg_below;
        let v = objective_value(objective, tp, fp, pos_below, neg_below);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((t, v));
        }
    }
    Ok(best.expect("candidates are never empty"))
}

/// Spearman rank correlation with average ranks. `None` when either
/// series is constant or shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / num_traits::Float::sqrt(sxx * syy))
}

/// Landis and Koch agreement band for a kappa value.
pub fn landis_koch(kappa: f64) -> &'static str {
    match kappa {
        k if k < 0.0 => "poor",
        k if k <= 0.20 => "slight",
        k if k <= 0.40 => "fair",
        k if k <= 0.60 => "moderate",
        k if k <= 0.80 => "substantial",
        _ => "almost perfect",
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().all(|&v| v == values[0]) {
        return Some((values[0], 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, num_traits::Float::sqrt(var)))
}
