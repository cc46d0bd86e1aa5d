use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EvalError, PredictionRecord};
use crate::datagen::ChatModel;
use crate::metrics::{rationale_label_metrics, readability_rate};
use crate::synth::OracleJudge;
use crate::textproto::{parse_classification, parse_readability, strip_think, JudgeTemplates, LabelMap};

/// Infers labels from explanations alone and rates readability.
pub trait Judge {
    fn infer_label(&mut self, explanation: &str) -> Result<Option<u8>, EvalError>;
    fn readability(&mut self, text: &str) -> Result<Option<bool>, EvalError>;
    fn describe(&self) -> String;
}

impl Judge for OracleJudge {
    fn infer_label(&mut self, explanation: &str) -> Result<Option<u8>, EvalError> {
        Ok(OracleJudge::infer_label(self, explanation))
    }

    fn readability(&mut self, text: &str) -> Result<Option<bool>, EvalError> {
        Ok(Some(self.readable(text)))
    }

    fn describe(&self) -> String {
        "oracle".to_string()
    }
}

/// Judge backed by a chat model and the judge prompt templates. Replies
/// are parsed with the same last-occurrence rule as model outputs.
pub struct ChatJudge<C> {
    pub chat: C,
    pub templates: JudgeTemplates,
    pub map: LabelMap,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl<C> ChatJudge<C> {
    pub fn new(chat: C, templates: JudgeTemplates, map: LabelMap) -> Self {
        Self {
            chat,
            templates,
            map,
            temperature: 0.0,
            max_tokens: 32,
        }
    }
}

impl<C: ChatModel> Judge for ChatJudge<C> {
    fn infer_label(&mut self, explanation: &str) -> Result<Option<u8>, EvalError> {
        let prompt = self.templates.label_prompt(explanation, &self.map);
        let reply = self
            .chat
            .complete(&self.templates.label_system, &prompt, self.temperature, self.max_tokens)?;
        Ok(parse_classification(strip_think(&reply), &self.map).label)
    }

    fn readability(&mut self, text: &str) -> Result<Option<bool>, EvalError> {
        let prompt = self.templates.readability_prompt(text);
        let reply = self
            .chat
            .complete(&self.templates.readability_system, &prompt, self.temperature, self.max_tokens)?;
        Ok(parse_readability(strip_think(&reply)))
    }

    fn describe(&self) -> String {
        format!("chat({})", self.chat.describe())
    }
}

/// Judge verdicts aligned with the input records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub judge: String,
    pub inferred: Vec<Option<u8>>,
    pub readable: Vec<Option<bool>>,
    pub rli: Option<f64>,
    pub rl_kappa: Option<f64>,
    pub readability: Option<f64>,
    /// Parsable records the judge returned a label for, over all parsable
    /// records.
    pub coverage: f64,
    /// Judge calls that failed in transport.
    pub failures: Vec<(String, String)>,
}

/// Asks `judge` for a label from each parsable record's explanation and,
/// when `readability` is set, for a readability verdict. Transport errors
/// leave that record unjudged.
pub fn judge_consistency(
    records: &[PredictionRecord],
    judge: &mut dyn Judge,
    readability: bool,
) -> JudgeOutcome {
    let mut inferred = Vec::with_capacity(records.len());
    let mut readable = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    let (mut parsable, mut covered) = (0usize, 0usize);
    for r in records {
        if !r.parsed.parsable {
            inferred.push(None);
            readable.push(None);
            continue;
        }
        parsable += 1;
        let label = judge.infer_label(&r.parsed.explanation).unwrap_or_else(|e| {
            failures.push((r.id.clone(), format!("{e}")));
            None
        });
        covered += usize::from(label.is_some());
        inferred.push(label);
        let verdict = if readability {
            judge.readability(&r.parsed.explanation).unwrap_or_else(|e| {
                failures.push((r.id.clone(), format!("{e}")));
                None
            })
        } else {
            None
        };
        readable.push(verdict);
    }
    let verbalized: Vec<Option<u8>> = records.iter().map(|r| r.parsed.label).collect();
    let (rli, rl_kappa) = match rationale_label_metrics(&inferred, &verbalized) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(_) => (None, None),
    };
    JudgeOutcome {
        judge: judge.describe(),
        rli,
        rl_kappa,
        readability: readability_rate(&readable).ok(),
        coverage: if parsable == 0 { 0.0 } else { covered as f64 / parsable as f64 },
        inferred,
        readable,
        failures,
    }
}
