use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::*;

/// Everything needed to score one checkpoint on one split. All slices are
/// aligned by instance.
#[derive(Clone, Copy, Debug)]
pub struct ReportInputs<'a> {
    pub gold: &'a [Option<u8>],
    /// Head probabilities; absent for inference-only baselines.
    pub probs: Option<&'a [f64]>,
    /// Labels parsed from generated text.
    pub verbalized: &'a [Option<u8>],
    pub parsable: &'a [bool],
    /// Judge-inferred labels from explanations.
    pub inferred: Option<&'a [Option<u8>]>,
    pub readable: Option<&'a [Option<bool>]>,
    pub tuned_f1_threshold: Option<f64>,
    pub tuned_kappa_threshold: Option<f64>,
}

/// Head metrics at one pair of thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub f1_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kappa_threshold: f64,
    /// Agreement between thresholded head predictions and verbalized labels.
    pub kappa: Option<f64>,
    pub kappa_band: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub n_parsable: usize,
    pub parsability: f64,
    pub auroc: Option<f64>,
    pub default: Option<ThresholdMetrics>,
    pub tuned: Option<ThresholdMetrics>,
    /// Verbalized labels against gold, unparsable counted as wrong.
    pub text_as_wrong: Prf,
    /// Verbalized labels against gold, unparsable left out.
    pub text_excluded: Prf,
    pub text_excluded_count: usize,
    pub auroc_alignment: Option<f64>,
    pub alignment_excluded: usize,
    pub rli: Option<f64>,
    pub rl_kappa: Option<f64>,
    pub judged: usize,
    pub readability: Option<f64>,
}

fn head_metrics(probs: &[f64], inputs: &ReportInputs<'_>, f1_t: f64, kappa_t: f64) -> ThresholdMetrics {
    let pred = apply_threshold(probs, f1_t);
    let prf = precision_recall_f1(&pred, inputs.gold, UnparsablePolicy::AsWrong).unwrap_or_default();
    let kpred = apply_threshold(probs, kappa_t);
    let kappa = cohens_kappa(&kpred, inputs.verbalized).ok();
    ThresholdMetrics {
        f1_threshold: f1_t,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        kappa_threshold: kappa_t,
        kappa,
        kappa_band: kappa.map(|k| landis_koch(k).to_string()),
    }
}

impl MetricReport {
    pub fn build(inputs: &ReportInputs<'_>) -> Result<Self, MetricError> {
        let n = inputs.gold.len();
        check_len(n, inputs.verbalized.len())?;
        check_len(n, inputs.parsable.len())?;
        if n == 0 {
            return Err(MetricError::Empty);
        }
        if let Some(p) = inputs.probs {
            check_len(n, p.len())?;
        }
        let n_parsable = inputs.parsable.iter().filter(|&&p| p).count();
        let as_wrong = confusion(inputs.verbalized, inputs.gold, UnparsablePolicy::AsWrong)?;
        let excluded = confusion(inputs.verbalized, inputs.gold, UnparsablePolicy::Exclude)?;

        let (auroc_v, default, tuned, alignment) = match inputs.probs {
            Some(p) => {
                let tuned = match (inputs.tuned_f1_threshold, inputs.tuned_kappa_threshold) {
                    (None, None) => None,
                    (f, k) => Some(head_metrics(p, inputs, f.unwrap_or(0.5), k.unwrap_or(0.5))),
                };
                (
                    auroc(p, inputs.gold).ok(),
                    Some(head_metrics(p, inputs, 0.5, 0.5)),
                    tuned,
                    auroc_alignment(p, inputs.verbalized).ok(),
                )
            }
            None => (None, None, None, None),
        };

        let (rli, rl_kappa, judged) = match inputs.inferred {
            Some(inf) => {
                check_len(n, inf.len())?;
                let judged = inf.iter().zip(inputs.verbalized).filter(|(a, b)| a.is_some() && b.is_some()).count();
                match rationale_label_metrics(inf, inputs.verbalized) {
                    Ok((r, k)) => (Some(r), Some(k), judged),
                    Err(_) => (None, None, judged),
                }
            }
            None => (None, None, 0),
        };
        let readability = inputs.readable.and_then(|r| readability_rate(r).ok());

        Ok(Self {
            n,
            n_parsable,
            parsability: n_parsable as f64 / n as f64,
            auroc: auroc_v,
            default,
            tuned,
            text_as_wrong: as_wrong.prf(),
            text_excluded: excluded.prf(),
            text_excluded_count: excluded.excluded,
            auroc_alignment: alignment,
            alignment_excluded: inputs.verbalized.iter().filter(|v| v.is_none()).count(),
            rli,
            rl_kappa,
            judged,
            readability,
        })
    }

    /// Classification rows then consistency rows, one metric per line.
    pub fn render_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"));
        let mut rows: Vec<(String, String)> = Vec::new();
        rows.push(("AUROC".into(), f(self.auroc)));
        for (name, m) in [("Default", &self.default), ("Threshold", &self.tuned)] {
            if let Some(m) = m {
                rows.push((format!("{name} F1 (t={:.4})", m.f1_threshold), f(Some(m.f1))));
                rows.push((format!("{name} Precision"), f(Some(m.precision))));
                rows.push((format!("{name} Recall"), f(Some(m.recall))));
                rows.push((format!("{name} Kappa (t={:.4})", m.kappa_threshold), f(m.kappa)));
            }
        }
        rows.push(("Text F1 (unparsable wrong)".into(), f(Some(self.text_as_wrong.f1))));
        rows.push(("Text F1 (unparsable excluded)".into(), f(Some(self.text_excluded.f1))));
        rows.push(("AUROC-Alignment".into(), f(self.auroc_alignment)));
        rows.push(("Parsability".into(), f(Some(self.parsability))));
        rows.push(("RLI".into(), f(self.rli)));
        rows.push(("R-L Kappa".into(), f(self.rl_kappa)));
        rows.push(("Readability".into(), f(self.readability)));
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<34} {v:>8}\n"));
        }
        out.push_str(&format!(
            "n={} parsable={} alignment_excluded={} judged={}\n",
            self.n, self.n_parsable, self.alignment_excluded, self.judged
        ));
        out
    }
}
