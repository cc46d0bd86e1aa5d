//! Explanation-augmented data construction by rejection sampling.
//!
//! Each instance gets up to `k` teacher calls. The first output that parses,
//! carries a valid explanation and agrees with the gold label is kept; an
//! instance with no such output is dropped.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::synth::{Instance, OracleTeacher, Split, SynthTaskSpec};
use crate::textproto::{
    parse_classification, strip_think, LabelMap, PromptBundle, PromptTemplates, Tokenizer, CLASSIFICATION_KEY,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TeacherError {
    #[error("teacher transport failed: {0}")]
    Transport(String),
}

/// One teacher call.
#[derive(Clone, Copy, Debug)]
pub struct TeacherRequest<'a> {
    pub id: &'a str,
    pub document: &'a str,
    /// 0-based trial number.
    pub trial: u64,
}

/// Anything that turns a document into raw explanation-plus-label text.
/// Calls are independent of each other.
pub trait TeacherModel {
    fn generate(&mut self, request: &TeacherRequest<'_>) -> Result<String, TeacherError>;
    fn describe(&self) -> String;
}

/// The oracle teacher bound to its task.
#[derive(Clone, Debug)]
pub struct SynthTeacher {
    pub teacher: OracleTeacher,
    pub spec: SynthTaskSpec,
    pub map: LabelMap,
}

impl TeacherModel for SynthTeacher {
    fn generate(&mut self, r: &TeacherRequest<'_>) -> Result<String, TeacherError> {
        Ok(self.teacher.generate(&self.spec, &self.map, r.id, r.document, r.trial))
    }

    fn describe(&self) -> String {
        format!(
            "oracle(p_pos={}, p_neg={}, validity={}, seed={})",
            self.teacher.p_pos, self.teacher.p_neg, self.teacher.validity, self.teacher.seed
        )
    }
}

/// A chat-completions style model: one system and one user message in,
/// the reply text out.
pub trait ChatModel {
    fn complete(&mut self, system: &str, user: &str, temperature: f64, max_tokens: usize) -> Result<String, TeacherError>;
    fn describe(&self) -> String;
}

/// Teacher that prompts a chat model with the task templates.
pub struct ChatTeacher<C> {
    pub chat: C,
    pub templates: PromptTemplates,
    pub map: LabelMap,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl<C> ChatTeacher<C> {
    /// Sampling temperature 0.7 so that repeated trials differ.
    pub fn new(chat: C, templates: PromptTemplates, map: LabelMap) -> Self {
        Self {
            chat,
            templates,
            map,
            temperature: 0.7,
            max_tokens: 384,
        }
    }
}

/// System prompt and user message for a chat model.
pub fn chat_messages(bundle: &PromptBundle) -> (String, String) {
    (
        bundle.system_prompt.clone(),
        format!("{}\n{}\n{}", bundle.user_text(), bundle.question, bundle.generation_prefix),
    )
}

impl<C: ChatModel> TeacherModel for ChatTeacher<C> {
    fn generate(&mut self, r: &TeacherRequest<'_>) -> Result<String, TeacherError> {
        let bundle = self.templates.bundle(r.document, &self.map, &[]);
        let (system, user) = chat_messages(&bundle);
        self.chat.complete(&system, &user, self.temperature, self.max_tokens)
    }

    fn describe(&self) -> String {
        format!("chat({}, temperature={})", self.chat.describe(), self.temperature)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataGenConfig {
    /// Maximum teacher calls per instance.
    pub k: usize,
    /// Maximum explanation length in tokens.
    pub max_explanation_tokens: usize,
    /// Minimum fraction of explanation words known to the tokenizer.
    pub coverage_floor: f64,
    /// Keep every trial output, not only accepted ones.
    pub log_trials: bool,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_explanation_tokens: 384,
            coverage_floor: 0.9,
            log_trials: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedInstance {
    pub id: String,
    pub document: String,
    pub label: u8,
    pub split: Split,
    pub explanation: String,
    /// 1-based trial at which the output was accepted.
    pub trial_index: usize,
    /// The accepted raw output, after think-block stripping.
    pub teacher_output: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Accepted,
    Unparsable,
    InvalidExplanation,
    WrongLabel,
    TransportError,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: String,
    pub trial: usize,
    pub output: String,
    pub outcome: TrialOutcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub original: usize,
    pub retained: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataGenReport {
    pub negative: ClassCounts,
    pub positive: ClassCounts,
    /// `trial_histogram[i]` counts instances accepted at trial `i + 1`.
    pub trial_histogram: Vec<usize>,
    pub teacher_calls: usize,
    /// Instances abandoned because the teacher could not be reached.
    pub transport_failures: Vec<(String, String)>,
    pub teacher: String,
}

impl DataGenReport {
    pub fn retention(&self) -> f64 {
        let total = self.negative.original + self.positive.original;
        if total == 0 {
            return 0.0;
        }
        (self.negative.retained + self.positive.retained) as f64 / total as f64
    }

    /// Fraction of failed instances that are positive.
    pub fn failed_positive_fraction(&self) -> Option<f64> {
        let failed = self.negative.failed + self.positive.failed;
        (failed > 0).then(|| self.positive.failed as f64 / failed as f64)
    }

    pub fn input_prevalence(&self) -> f64 {
        let total = self.negative.original + self.positive.original;
        if total == 0 {
            0.0
        } else {
            self.positive.original as f64 / total as f64
        }
    }

    /// Plain-text table of original, retained and failed counts by class.
    pub fn render_table(&self) -> String {
        let row = |name: &str, n: usize, p: usize| {
            let total = n + p;
            let pct = if total == 0 { 0.0 } else { 100.0 * p as f64 / total as f64 };
            format!("{name:<24} {n:>9} {p:>9} {pct:>15.1}%\n")
        };
        let mut out = format!("{:<24} {:>9} {:>9} {:>16}\n", "Status", "Negative", "Positive", "Positive / Total");
        out.push_str(&row("Original dataset", self.negative.original, self.positive.original));
        out.push_str(&row("Successfully generated", self.negative.retained, self.positive.retained));
        out.push_str(&row("Failed to generate", self.negative.failed, self.positive.failed));
        out.push_str(&format!("retention {:.4}  teacher calls {}\n", self.retention(), self.teacher_calls));
        out
    }
}

/// Whether a teacher explanation is usable as a training target.
pub fn is_valid(explanation: &str, tokenizer: &Tokenizer, config: &DataGenConfig) -> bool {
    let trimmed = explanation.trim();
    !trimmed.is_empty()
        && tokenizer.count(trimmed) <= config.max_explanation_tokens
        && !trimmed.contains(CLASSIFICATION_KEY)
        && tokenizer.coverage(trimmed) >= config.coverage_floor
}

/// Runs the rejection-sampling loop over `instances`.
pub fn build_dataset<M: TeacherModel + ?Sized>(
    instances: &[Instance],
    teacher: &mut M,
    tokenizer: &Tokenizer,
    map: &LabelMap,
    config: &DataGenConfig,
) -> (Vec<AugmentedInstance>, DataGenReport, Vec<TrialRecord>) {
    let mut kept = Vec::new();
    let mut logs = Vec::new();
    let mut report = DataGenReport {
        trial_histogram: vec![0; config.k],
        teacher: teacher.describe(),
        ..DataGenReport::default()
    };
    for inst in instances {
        let counts = if inst.label == 1 {
            &mut report.positive
        } else {
            &mut report.negative
        };
        counts.original += 1;
        let mut accepted = None;
        for trial in 0..config.k {
            report.teacher_calls += 1;
            let request = TeacherRequest {
                id: &inst.id,
                document: &inst.document,
                trial: trial as u64,
            };
            let raw = match teacher.generate(&request) {
                Ok(raw) => raw,
                Err(e) => {
                    if config.log_trials {
                        logs.push(TrialRecord {
                            id: inst.id.clone(),
                            trial: trial + 1,
                            output: String::new(),
                            outcome: TrialOutcome::TransportError,
                        });
                    }
                    report.transport_failures.push((inst.id.clone(), e.to_string()));
                    break;
                }
            };
            let text = strip_think(&raw);
            let parsed = parse_classification(text, map);
            let outcome = if !parsed.parsable {
                TrialOutcome::Unparsable
            } else if !is_valid(&parsed.explanation, tokenizer, config) {
                TrialOutcome::InvalidExplanation
            } else if parsed.label != Some(inst.label) {
                TrialOutcome::WrongLabel
            } else {
                TrialOutcome::Accepted
            };
            if config.log_trials {
                logs.push(TrialRecord {
                    id: inst.id.clone(),
                    trial: trial + 1,
                    output: text.to_string(),
                    outcome,
                });
            }
            if outcome == TrialOutcome::Accepted {
                accepted = Some(AugmentedInstance {
                    id: inst.id.clone(),
                    document: inst.document.clone(),
                    label: inst.label,
                    split: inst.split,
                    explanation: parsed.explanation,
                    trial_index: trial + 1,
                    teacher_output: text.to_string(),
                });
                break;
            }
        }
        let counts = if inst.label == 1 {
            &mut report.positive
        } else {
            &mut report.negative
        };
        match accepted {
            Some(a) => {
                counts.retained += 1;
                report.trial_histogram[a.trial_index - 1] += 1;
                kept.push(a);
            }
            None => counts.failed += 1,
        }
    }
    (kept, report, logs)
}

#[cfg(test)]
mod tests;
