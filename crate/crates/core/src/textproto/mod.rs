//! Prompt assembly, target rendering and structured-output parsing.

mod templates;
mod tokenizer;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use templates::{fill, JudgeTemplates, PromptBundle, PromptTemplates, GENERATION_PREFIX, RESPONSE_TEMPLATE};
pub use tokenizer::{BadVocabulary, Tokenizer, EOG, NL, UNK};

pub const CLASSIFICATION_KEY: &str = "Classification:";
pub const PROBABILITY_KEY: &str = "Probability:";
pub const READABILITY_KEY: &str = "Readability:";

/// Verbalized strings for the two classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelMap {
    pub negative: String,
    pub positive: String,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self {
            negative: "0:alive".into(),
            positive: "1:death".into(),
        }
    }
}

impl LabelMap {
    pub fn new(negative: impl Into<String>, positive: impl Into<String>) -> Result<Self, TextError> {
        let map = Self {
            negative: negative.into(),
            positive: positive.into(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), TextError> {
        let ok = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
        if !ok(&self.negative) || !ok(&self.positive) || self.negative == self.positive {
            return Err(TextError::BadLabelMap);
        }
        Ok(())
    }

    pub fn label_str(&self, label: u8) -> &str {
        if label == 1 {
            &self.positive
        } else {
            &self.negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("label strings must be distinct, non-empty single words")]
    BadLabelMap,
    #[error("prompt segments without the document need {needed} tokens but max_seq_len is {max}")]
    PromptTooLong { needed: usize, max: usize },
    #[error("generation prefix is empty")]
    EmptyPrefix,
}

/// Result of parsing one model output.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub parsable: bool,
    pub label: Option<u8>,
    pub probability_pct: Option<u8>,
    /// Text preceding the answer line, trailing whitespace removed.
    pub explanation: String,
}

impl ParsedOutput {
    pub fn unparsable() -> Self {
        Self::default()
    }
}

/// Token ids of the assembled input. The document is head-truncated (its
/// tail is kept) so that the whole input fits `max_seq_len`. Returns the
/// tokens and `prefix_len`, which equals their count.
pub fn assemble_input(
    bundle: &PromptBundle,
    tokenizer: &Tokenizer,
    max_seq_len: usize,
) -> Result<(Vec<usize>, usize), TextError> {
    let prefix = tokenizer.encode(&bundle.generation_prefix);
    if prefix.is_empty() {
        return Err(TextError::EmptyPrefix);
    }
    let (user_head, user_tail) = match bundle.user_prompt.split_once("{document}") {
        Some((h, t)) => (h, t),
        None => (bundle.user_prompt.as_str(), ""),
    };
    let before: Vec<usize> = [
        tokenizer.encode(&bundle.system_prompt),
        vec![NL],
        tokenizer.encode(user_head),
    ]
    .concat();
    let after: Vec<usize> = [
        tokenizer.encode(user_tail),
        vec![NL],
        tokenizer.encode(&bundle.question),
        vec![NL],
        prefix,
    ]
    .concat();
    let fixed = before.len() + after.len();
    if fixed > max_seq_len {
        return Err(TextError::PromptTooLong {
            needed: fixed,
            max: max_seq_len,
        });
    }
    let doc = tokenizer.encode(&bundle.document);
    let keep = doc.len().min(max_seq_len - fixed);
    let mut tokens = before;
    tokens.extend_from_slice(&doc[doc.len() - keep..]);
    tokens.extend(after);
    let n = tokens.len();
    Ok((tokens, n))
}

/// `explanation`, a blank line, the classification line, a blank line and
/// the end-of-generation marker.
pub fn render_target(explanation: &str, label: u8, map: &LabelMap) -> String {
    fill(
        RESPONSE_TEMPLATE,
        &[("explanation", explanation), ("label", map.label_str(label))],
    )
}

/// Drops everything up to the last `</think>` so reasoning traces of
/// thinking models do not reach the parser.
pub fn strip_think(text: &str) -> &str {
    match text.rfind("</think>") {
        Some(i) => text[i + "</think>".len()..].trim_start(),
        None => text,
    }
}

/// Finds the last `key`, then after optional whitespace one of `options`
/// followed by whitespace or the end of text. Returns the option index
/// and the byte offset of the key.
pub fn match_last_keyword(text: &str, key: &str, options: &[&str]) -> Option<(usize, usize)> {
    let at = text.rfind(key)?;
    let rest = text[at + key.len()..].trim_start();
    options.iter().enumerate().find_map(|(i, opt)| {
        let tail = rest.strip_prefix(opt)?;
        match tail.chars().next() {
            None => Some((i, at)),
            Some(c) if c.is_whitespace() => Some((i, at)),
            _ => None,
        }
    })
}

/// Parses the verbalized label from the last classification line.
pub fn parse_classification(text: &str, map: &LabelMap) -> ParsedOutput {
    match match_last_keyword(text, CLASSIFICATION_KEY, &[&map.negative, &map.positive]) {
        Some((label, at)) => ParsedOutput {
            parsable: true,
            label: Some(label as u8),
            probability_pct: None,
            explanation: text[..at].trim_end().to_string(),
        },
        None => ParsedOutput::unparsable(),
    }
}

/// Parses an integer percentage in `0..=100` from the last probability line.
pub fn parse_probability(text: &str) -> ParsedOutput {
    let Some(at) = text.rfind(PROBABILITY_KEY) else {
        return ParsedOutput::unparsable();
    };
    let rest = text[at + PROBABILITY_KEY.len()..].trim_start();
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return ParsedOutput::unparsable();
    }
    let tail = &rest.as_bytes()[digits..];
    if tail.len() >= 2 && tail[0] == b'.' && tail[1].is_ascii_digit() {
        return ParsedOutput::unparsable();
    }
    let num = rest[..digits].trim_start_matches('0');
    let value = if num.is_empty() {
        Some(0)
    } else if num.len() <= 3 {
        num.parse::<u16>().ok().filter(|&v| v <= 100)
    } else {
        None
    };
    match value {
        Some(v) => ParsedOutput {
            parsable: true,
            label: None,
            probability_pct: Some(v as u8),
            explanation: text[..at].trim_end().to_string(),
        },
        None => ParsedOutput::unparsable(),
    }
}

/// `Some(true)` for READABLE, `Some(false)` for UNREADABLE.
pub fn parse_readability(text: &str) -> Option<bool> {
    match_last_keyword(text, READABILITY_KEY, &["READABLE", "UNREADABLE"]).map(|(i, _)| i == 0)
}
