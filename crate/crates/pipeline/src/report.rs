//! Aggregate result tables: a classification table (head, text and
//! inference-only baselines) and a consistency table (head-text agreement
//! and rationale checks).

use dualhead_core::evalsuite::MeanStd;
use dualhead_core::metrics::ThresholdMetrics;
use serde::{Deserialize, Serialize};

use crate::stages::{BaselineArtifact, EvalArtifact, JudgeArtifact, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub provenance: Provenance,
    pub eval: EvalArtifact,
    pub judge: Option<JudgeArtifact>,
    pub baselines: Vec<BaselineArtifact>,
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".into(), |x| format!("{x:.4}"))
}

fn ms(v: Option<&Option<MeanStd>>) -> String {
    match v {
        Some(Some(m)) if m.runs > 1 => format!("{:.4} ± {:.4}", m.mean, m.std),
        Some(Some(m)) => format!("{:.4}", m.mean),
        _ => "N/A".into(),
    }
}

fn kappa(m: Option<&ThresholdMetrics>) -> String {
    match m {
        Some(t) => match (&t.kappa, &t.kappa_band) {
            (Some(k), Some(b)) => format!("{k:.4} ({b})"),
            _ => "N/A".into(),
        },
        None => "N/A".into(),
    }
}

fn row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

impl Tables {
    pub fn render(&self) -> String {
        let p = &self.provenance;
        let e = &self.eval.report;
        let mut s = format!(
            "# Results: {}\n\nconfig {} seed {}; checkpoint epoch {} ({})\n\n",
            p.run, p.config_hash, p.seed, self.eval.epoch, self.eval.checkpoint
        );
        s.push_str("## Classification\n\n");
        s.push_str(&row(&[
            "Method", "AUROC", "Default F1", "Threshold F1", "Precision", "Recall", "Parsability",
        ]
        .map(String::from)));
        s.push_str("|---|---|---|---|---|---|---|\n");
        let d = e.default.as_ref();
        s.push_str(&row(&[
            "Dual-head (classification head)".into(),
            num(e.auroc),
            num(d.map(|m| m.f1)),
            num(e.tuned.as_ref().map(|m| m.f1)),
            num(d.map(|m| m.precision)),
            num(d.map(|m| m.recall)),
            num(Some(e.parsability)),
        ]));
        s.push_str(&row(&[
            "Dual-head (verbalized label)".into(),
            "N/A".into(),
            num(Some(e.text_as_wrong.f1)),
            "N/A".into(),
            num(Some(e.text_as_wrong.precision)),
            num(Some(e.text_as_wrong.recall)),
            num(Some(e.parsability)),
        ]));
        for b in &self.baselines {
            let a = b.result.aggregate();
            let name = match b.method {
                crate::config::BaselineMethod::LabelPred => "Label prediction",
                crate::config::BaselineMethod::VerbProb => "Verbalized probability",
                crate::config::BaselineMethod::SelfConsistency => "Self-consistency",
            };
            s.push_str(&row(&[
                format!("{name} ({} runs)", a.runs),
                ms(a.metrics.get("auroc")),
                ms(a.metrics.get("f1")),
                "N/A".into(),
                ms(a.metrics.get("precision")),
                ms(a.metrics.get("recall")),
                ms(a.metrics.get("parsability")),
            ]));
        }

        s.push_str("\n## Consistency\n\n");
        s.push_str("| Metric | Default | Threshold |\n|---|---|---|\n");
        s.push_str(&row(&["AUROC-Alignment".into(), num(e.auroc_alignment), "".into()]));
        s.push_str(&row(&["Kappa (head vs text)".into(), kappa(d), kappa(e.tuned.as_ref())]));
        let (rli, rlk, read, judged) = match &self.judge {
            Some(j) => (
                j.report.rli,
                j.report.rl_kappa,
                j.report.readability,
                format!("{} (coverage {:.4})", j.outcome.judge, j.outcome.coverage),
            ),
            None => (None, None, None, "not run".into()),
        };
        s.push_str(&row(&["RLI".into(), num(rli), "".into()]));
        s.push_str(&row(&["R-L Kappa".into(), num(rlk), "".into()]));
        s.push_str(&row(&["Readability".into(), num(read), "".into()]));
        s.push_str(&row(&["Parsability".into(), num(Some(e.parsability)), "".into()]));
        s.push_str(&format!(
            "\nn={} parsable={} alignment_excluded={} thresholds f1={} kappa={}; judge {judged}\n",
            e.n,
            e.n_parsable,
            e.alignment_excluded,
            num(self.eval.thresholds.f1),
            num(self.eval.thresholds.kappa),
        ));
        for b in &self.baselines {
            let a = b.result.aggregate();
            let excluded: usize = a.ledger.iter().map(|l| l.excluded).sum();
            s.push_str(&format!(
                "{}: responder {}; ledger entries {}, exclusions {}\n",
                b.method.as_str(),
                b.responder,
                a.ledger.len(),
                excluded
            ));
        }
        s
    }
}
