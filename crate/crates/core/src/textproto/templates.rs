//! Prompt, response and judge templates with `{name}` placeholders.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LabelMap;

/// Replaces every `{name}` in `template` with its value in one pass, so
/// substituted text is never rescanned. Unknown placeholders stay in place.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after
            .find('}')
            .and_then(|close| vars.iter().find(|(n, _)| *n == &after[..close]).map(|(_, v)| (close, *v)));
        match value {
            Some((close, v)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub const RESPONSE_TEMPLATE: &str = "{explanation}\n\nClassification: {label}\n\nEOG";
pub const GENERATION_PREFIX: &str = "Reasoning: ";

/// The four input segments plus the target shape of one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub system: String,
    /// Must contain `{document}`; the placeholder is a token boundary.
    pub user: String,
    pub question: String,
    pub generation_prefix: String,
    pub response: String,
}

impl PromptTemplates {
    /// Clinical mortality prompts. Expects `{task_days}`.
    pub fn clinical() -> Self {
        Self {
            system: "You are a clinical decision support assistant. Analyze the clinical document provided and classify the patient's out-of-hospital mortality within {task_days} days as either 0:alive or 1:death. First provide your clinical reasoning, then state your final classification.".into(),
            user: "Clinical Document:\n\n{document}".into(),
            question: "Based on the clinical document below, reason about the patient's likely outcome and classify their out-of-hospital mortality within {task_days} days. Answer with exactly one of: 0:alive or 1:death.".into(),
            generation_prefix: GENERATION_PREFIX.into(),
            response: RESPONSE_TEMPLATE.into(),
        }
    }

    /// Compact prompts over the synthetic record vocabulary. Expects
    /// `{negative}` and `{positive}`.
    pub fn synth() -> Self {
        Self {
            system: "classify the record as {negative} or {positive} .".into(),
            user: "record:\n{document}".into(),
            question: "reason then answer {negative} or {positive} .".into(),
            generation_prefix: GENERATION_PREFIX.into(),
            response: RESPONSE_TEMPLATE.into(),
        }
    }

    /// Clinical verbalized-probability prompts. Expects `{task_days}`.
    pub fn clinical_probability() -> Self {
        Self {
            system: "You are a clinical decision support assistant. Analyze the clinical document provided and estimate the probability of out-of-hospital mortality within {task_days} days.".into(),
            user: "Clinical Document:\n\n{document}".into(),
            question: "Based on the clinical document below, what is the probability (0 to 100) that this patient will die out-of-hospital within {task_days} days?\n\nBriefly reason about the key clinical findings, then state your answer in the format: Probability: <integer>".into(),
            generation_prefix: GENERATION_PREFIX.into(),
            response: "{explanation}\n\nProbability: {probability}\n\nEOG".into(),
        }
    }

    /// Synthetic verbalized-probability prompts. Expects `{positive}`.
    pub fn synth_probability() -> Self {
        Self {
            system: "estimate the probability that the record is {positive} .".into(),
            user: "record:\n{document}".into(),
            question: "reason then answer in the format Probability: <integer>".into(),
            generation_prefix: GENERATION_PREFIX.into(),
            response: "{explanation}\n\nProbability: {probability}\n\nEOG".into(),
        }
    }

    /// Fills every template variable except `{document}`, which is kept
    /// apart so the document alone can be truncated.
    pub fn bundle(&self, document: &str, map: &LabelMap, vars: &[(&str, &str)]) -> PromptBundle {
        let mut all: Vec<(&str, &str)> = vec![("negative", &map.negative), ("positive", &map.positive)];
        all.extend_from_slice(vars);
        let apply = |t: &str| fill(t, &all);
        PromptBundle {
            system_prompt: apply(&self.system),
            user_prompt: apply(&self.user),
            document: document.to_string(),
            question: apply(&self.question),
            generation_prefix: apply(&self.generation_prefix),
        }
    }
}

/// One assembled input before tokenisation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    /// User segment with a `{document}` placeholder.
    pub user_prompt: String,
    pub document: String,
    pub question: String,
    pub generation_prefix: String,
}

impl Default for PromptBundle {
    fn default() -> Self {
        Self {
            system_prompt: String::new(),
            user_prompt: "{document}".into(),
            document: String::new(),
            question: String::new(),
            generation_prefix: GENERATION_PREFIX.into(),
        }
    }
}

impl PromptBundle {
    pub fn user_text(&self) -> String {
        fill(&self.user_prompt, &[("document", &self.document)])
    }

    /// Segments joined by newlines, generation prefix last.
    pub fn text(&self) -> String {
        alloc::format!(
            "{}\n{}\n{}\n{}",
            self.system_prompt,
            self.user_text(),
            self.question,
            self.generation_prefix
        )
    }
}

/// Prompts for the rationale-label and readability judges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeTemplates {
    pub label_system: String,
    /// Expects `{explanation}`, `{negative}` and `{positive}`.
    pub label_template: String,
    pub readability_system: String,
    /// Expects `{text}`.
    pub readability_template: String,
}

impl Default for JudgeTemplates {
    fn default() -> Self {
        Self {
            label_system: "You are a text analyst. You will be shown a piece of reasoning written by another model.\nRead the surface meaning of the text and determine what conclusion it implies.\nDo not use external knowledge — judge solely based on what the text says.\nOutput ONLY the classification label. Do not explain or add any other text.".into(),
            label_template: "Read the following reasoning and determine which of the two labels below it implies.\n\nREASONING:\n\"\"\"\n{explanation}\n\"\"\"\n\nReply with ONLY one of the two lines below — no explanation, no extra text:\nClassification: {negative}\nClassification: {positive}".into(),
            readability_system: "You are a text quality evaluator. You will be shown a piece of text written by a language model.\nJudge whether the text is readable and coherent.\nOutput ONLY the verdict label. Do not explain or add any other text.".into(),
            readability_template: "Read the following text and decide whether it is readable.\n\nMark it as UNREADABLE if it contains ANY of the following:\n- Made-up or nonsensical words\n- Unexpected foreign characters or scripts (e.g. random Chinese, Arabic, or other non-English characters)\n- A sentence that cuts off abruptly or is clearly incomplete\n- Content that is largely unintelligible\n\nOtherwise mark it as READABLE.\n\nTEXT:\n\"\"\"\n{text}\n\"\"\"\n\nReply with ONLY one of the two lines below — no explanation, no extra text:\nReadability: READABLE\nReadability: UNREADABLE".into(),
        }
    }
}

impl JudgeTemplates {
    /// The claim-verification variant with TRUE/FALSE labels.
    pub fn claim() -> Self {
        Self {
            label_template: "Read the following reasoning and determine whether it implies the claim is supported or not.\n\nREASONING:\n\"\"\"\n{explanation}\n\"\"\"\n\nReply with ONLY one of the two lines below — no explanation, no extra text:\nClassification: TRUE\nClassification: FALSE".into(),
            ..Self::default()
        }
    }

    pub fn label_prompt(&self, explanation: &str, map: &LabelMap) -> String {
        fill(
            &self.label_template,
            &[
                ("explanation", explanation),
                ("negative", &map.negative),
                ("positive", &map.positive),
            ],
        )
    }

    pub fn readability_prompt(&self, text: &str) -> String {
        fill(&self.readability_template, &[("text", text)])
    }
}
