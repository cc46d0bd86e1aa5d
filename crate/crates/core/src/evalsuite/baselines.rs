use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionRecord, Responder};
use crate::metrics::{auroc, mean_std, precision_recall_f1, Prf, UnparsablePolicy};
use crate::synth::Instance;
use crate::textproto::{parse_classification, parse_probability, strip_think, LabelMap, ParsedOutput, PromptTemplates};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    /// Runs with a defined value.
    pub runs: usize,
}

/// How many instances a metric used and left out in one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub run: usize,
    pub metric: String,
    pub evaluated: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub method: String,
    pub runs: usize,
    pub split_size: usize,
    /// `None` when the metric is undefined for every run.
    pub metrics: BTreeMap<String, Option<MeanStd>>,
    pub ledger: Vec<LedgerEntry>,
}

/// Mean and deviation of each metric over runs. Runs where a metric is
/// undefined are skipped for that metric.
pub fn aggregate(
    method: &str,
    split_size: usize,
    per_run: &[BTreeMap<String, Option<f64>>],
    ledger: Vec<LedgerEntry>,
) -> AggregateResult {
    let mut names: Vec<&String> = per_run.iter().flat_map(|m| m.keys()).collect();
    names.sort();
    names.dedup();
    let metrics = names
        .into_iter()
        .map(|name| {
            let vals: Vec<f64> = per_run.iter().filter_map(|m| m.get(name).copied().flatten()).collect();
            let agg = mean_std(&vals).map(|(mean, std)| MeanStd {
                mean,
                std,
                runs: vals.len(),
            });
            (name.clone(), agg)
        })
        .collect();
    AggregateResult {
        method: method.to_string(),
        runs: per_run.len(),
        split_size,
        metrics,
        ledger,
    }
}

fn collect_runs(
    responder: &mut dyn Responder,
    instances: &[Instance],
    templates: &PromptTemplates,
    map: &LabelMap,
    n_runs: usize,
    parse: &dyn Fn(&str) -> ParsedOutput,
) -> Result<Vec<Vec<PredictionRecord>>, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Empty);
    }
    (0..n_runs)
        .map(|run| {
            instances
                .iter()
                .map(|inst| {
                    let bundle = templates.bundle(&inst.document, map, &[]);
                    let text = responder.respond(&inst.id, &bundle, run)?;
                    let parsed = parse(strip_think(&text));
                    Ok(PredictionRecord {
                        id: inst.id.clone(),
                        run,
                        gold: Some(inst.label),
                        prob: None,
                        text,
                        parsed,
                    })
                })
                .collect()
        })
        .collect()
}

fn prf_metrics(out: &mut BTreeMap<String, Option<f64>>, prefix: &str, p: Prf) {
    out.insert(alloc::format!("{prefix}precision"), Some(p.precision));
    out.insert(alloc::format!("{prefix}recall"), Some(p.recall));
    out.insert(alloc::format!("{prefix}f1"), Some(p.f1));
}

fn label_run_metrics(
    records: &[PredictionRecord],
    run: usize,
    ledger: &mut Vec<LedgerEntry>,
) -> Result<BTreeMap<String, Option<f64>>, EvalError> {
    let pred: Vec<Option<u8>> = records.iter().map(|r| r.parsed.label).collect();
    let gold: Vec<Option<u8>> = records.iter().map(|r| r.gold).collect();
    let n = records.len();
    let parsed = pred.iter().filter(|p| p.is_some()).count();
    let mut m = BTreeMap::new();
    prf_metrics(&mut m, "", precision_recall_f1(&pred, &gold, UnparsablePolicy::AsWrong)?);
    prf_metrics(&mut m, "excl_", precision_recall_f1(&pred, &gold, UnparsablePolicy::Exclude)?);
    m.insert("parsability".into(), Some(parsed as f64 / n as f64));
    for (metric, evaluated) in [("f1", n), ("excl_f1", parsed), ("parsability", n)] {
        ledger.push(LedgerEntry {
            run,
            metric: metric.into(),
            evaluated,
            excluded: n - evaluated,
        });
    }
    Ok(m)
}

/// Direct label answers over `n_runs` sampled runs. AUROC is unavailable
/// for this method and is reported as undefined.
pub fn run_label_prediction(
    responder: &mut dyn Responder,
    instances: &[Instance],
    templates: &PromptTemplates,
    map: &LabelMap,
    n_runs: usize,
) -> Result<(AggregateResult, Vec<Vec<PredictionRecord>>), EvalError> {
    let parse = |t: &str| parse_classification(t, map);
    let runs = collect_runs(responder, instances, templates, map, n_runs, &parse)?;
    let mut ledger = Vec::new();
    let mut per_run = Vec::new();
    for (run, records) in runs.iter().enumerate() {
        let mut m = label_run_metrics(records, run, &mut ledger)?;
        m.insert("auroc".into(), None);
        per_run.push(m);
    }
    Ok((aggregate("label_prediction", instances.len(), &per_run, ledger), runs))
}

/// Verbalized probabilities over `n_runs` runs: the parsed percentage
/// divided by 100 is the score for AUROC, thresholded at 0.5 for F1.
pub fn run_verbalized_probability(
    responder: &mut dyn Responder,
    instances: &[Instance],
    templates: &PromptTemplates,
    map: &LabelMap,
    n_runs: usize,
) -> Result<(AggregateResult, Vec<Vec<PredictionRecord>>), EvalError> {
    let runs = collect_runs(responder, instances, templates, map, n_runs, &parse_probability)?;
    let mut ledger = Vec::new();
    let mut per_run = Vec::new();
    for (run, records) in runs.iter().enumerate() {
        let n = records.len();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let pred: Vec<Option<u8>> = records
            .iter()
            .map(|r| r.parsed.probability_pct.map(|p| u8::from(p >= 50)))
            .collect();
        let gold: Vec<Option<u8>> = records.iter().map(|r| r.gold).collect();
        for r in records {
            if let Some(p) = r.parsed.probability_pct {
                scores.push(f64::from(p) / 100.0);
                labels.push(r.gold);
            }
        }
        let mut m = BTreeMap::new();
        m.insert("auroc".into(), auroc(&scores, &labels).ok());
        prf_metrics(&mut m, "", precision_recall_f1(&pred, &gold, UnparsablePolicy::AsWrong)?);
        m.insert("parsability".into(), Some(scores.len() as f64 / n as f64));
        for (metric, evaluated) in [("auroc", scores.len()), ("f1", n), ("parsability", n)] {
            ledger.push(LedgerEntry {
                run,
                metric: metric.into(),
                evaluated,
                excluded: n - evaluated,
            });
        }
        per_run.push(m);
    }
    Ok((aggregate("verbalized_probability", instances.len(), &per_run, ledger), runs))
}

/// Positive-vote fraction and majority label over the parsed votes. A tie
/// goes to the negative class; no parsed vote gives `(None, None)`.
pub fn vote(votes: &[Option<u8>]) -> (Option<f64>, Option<u8>) {
    let parsed = votes.iter().flatten().count();
    if parsed == 0 {
        return (None, None);
    }
    let pos = votes.iter().flatten().filter(|&&v| v == 1).count();
    (Some(pos as f64 / parsed as f64), Some(u8::from(2 * pos > parsed)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistencyResult {
    pub ids: Vec<String>,
    pub vote_fraction: Vec<Option<f64>>,
    pub majority: Vec<Option<u8>>,
    /// Parsed runs per instance.
    pub parsed_runs: Vec<usize>,
    /// AUROC of the vote fraction over instances with at least one vote.
    pub auroc: Option<f64>,
    /// Majority labels against gold, instances without votes counted wrong.
    pub prf: Prf,
    /// Majority labels against gold, instances without votes left out.
    pub prf_excluded: Prf,
    pub evaluated: usize,
    pub excluded: usize,
}

/// Majority voting over `n_runs` sampled label answers.
pub fn run_self_consistency(
    responder: &mut dyn Responder,
    instances: &[Instance],
    templates: &PromptTemplates,
    map: &LabelMap,
    n_runs: usize,
) -> Result<(SelfConsistencyResult, Vec<Vec<PredictionRecord>>), EvalError> {
    let parse = |t: &str| parse_classification(t, map);
    let runs = collect_runs(responder, instances, templates, map, n_runs, &parse)?;
    let mut fractions = Vec::with_capacity(instances.len());
    let mut majority = Vec::with_capacity(instances.len());
    let mut parsed_runs = Vec::with_capacity(instances.len());
    for i in 0..instances.len() {
        let votes: Vec<Option<u8>> = runs.iter().map(|r| r[i].parsed.label).collect();
        let (f, m) = vote(&votes);
        fractions.push(f);
        majority.push(m);
        parsed_runs.push(votes.iter().flatten().count());
    }
    let gold: Vec<Option<u8>> = instances.iter().map(|i| Some(i.label)).collect();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (f, g) in fractions.iter().zip(&gold) {
        if let Some(f) = f {
            scores.push(*f);
            labels.push(*g);
        }
    }
    let evaluated = scores.len();
    let result = SelfConsistencyResult {
        ids: instances.iter().map(|i| i.id.clone()).collect(),
        auroc: auroc(&scores, &labels).ok(),
        prf: precision_recall_f1(&majority, &gold, UnparsablePolicy::AsWrong)?,
        prf_excluded: precision_recall_f1(&majority, &gold, UnparsablePolicy::Exclude)?,
        evaluated,
        excluded: instances.len() - evaluated,
        vote_fraction: fractions,
        majority,
        parsed_runs,
    };
    Ok((result, runs))
}
