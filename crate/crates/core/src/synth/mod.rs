//! Synthetic binary tasks with a known linear-threshold rule, template
//! explanations, an oracle teacher and an oracle judge.
//!
//! A document is a line of distinct `attribute=value` features. Its label
//! is 1 exactly when the summed integer weights of its features exceed the
//! threshold.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{hash_str, stream, ChaCha8Rng};
use crate::textproto::{render_target, LabelMap, PromptTemplates, Tokenizer, CLASSIFICATION_KEY, PROBABILITY_KEY};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub token: String,
    pub weight: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskSpec {
    pub features: Vec<Feature>,
    /// Label is 1 iff the weight sum is strictly greater than this.
    pub threshold: i32,
    /// Target fraction of positive instances.
    pub prevalence: f64,
    /// Inclusive range for the number of distinct features per document.
    pub min_features: usize,
    pub max_features: usize,
    /// Seed mixed into every generator stream.
    pub shuffle_seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        let feats: [(&str, i32); 16] = [
            ("bp=high", 2),
            ("sats=low", 2),
            ("lactate=high", 2),
            ("ef=low", 2),
            ("age=old", 1),
            ("smoker=yes", 1),
            ("cr=high", 1),
            ("hr=high", 1),
            ("cough=yes", 0),
            ("rash=yes", 0),
            ("fever=yes", 0),
            ("pain=yes", 0),
            ("nausea=yes", 0),
            ("fatigue=yes", 0),
            ("edema=yes", 0),
            ("insomnia=yes", 0),
        ];
        Self {
            features: feats
                .iter()
                .map(|&(t, w)| Feature {
                    token: t.into(),
                    weight: w,
                })
                .collect(),
            threshold: 4,
            prevalence: 0.263,
            min_features: 4,
            max_features: 6,
            shuffle_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        }
    }
}

/// One labelled document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub document: String,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(&'static str),
    #[error("no document of the allowed size can have label {label}")]
    InfeasiblePrevalence { label: u8 },
    #[error("rejection sampling gave up after {attempts} draws for label {label}")]
    RejectionLimit { label: u8, attempts: usize },
}

const MAX_DRAWS: usize = 100_000;

impl SynthTaskSpec {
    pub fn with_prevalence(prevalence: f64) -> Self {
        Self {
            prevalence,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.features.is_empty() {
            return Err(SynthError::InvalidSpec("no features"));
        }
        let distinct: BTreeSet<&str> = self.features.iter().map(|f| f.token.as_str()).collect();
        if distinct.len() != self.features.len() {
            return Err(SynthError::InvalidSpec("duplicate feature tokens"));
        }
        if self
            .features
            .iter()
            .any(|f| f.token.is_empty() || f.token.contains(char::is_whitespace))
        {
            return Err(SynthError::InvalidSpec("feature tokens must be single words"));
        }
        if self.min_features == 0 || self.min_features > self.max_features || self.max_features > self.features.len() {
            return Err(SynthError::InvalidSpec("feature count range must satisfy 1 <= min <= max <= #features"));
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return Err(SynthError::InvalidSpec("prevalence must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn weight(&self, token: &str) -> Option<i32> {
        self.features.iter().find(|f| f.token == token).map(|f| f.weight)
    }

    /// Weight sum over the distinct known features of `document`.
    pub fn score(&self, document: &str) -> i32 {
        let seen: BTreeSet<&str> = document.split_whitespace().collect();
        seen.iter().filter_map(|t| self.weight(t)).sum()
    }

    pub fn label_of(&self, document: &str) -> u8 {
        u8::from(self.score(document) > self.threshold)
    }

    /// Whether some document of allowed size has the given label.
    pub fn feasible(&self, label: u8) -> bool {
        let mut w: Vec<i32> = self.features.iter().map(|f| f.weight).collect();
        w.sort_unstable();
        (self.min_features..=self.max_features).any(|k| {
            if label == 1 {
                w[w.len() - k..].iter().sum::<i32>() > self.threshold
            } else {
                w[..k].iter().sum::<i32>() <= self.threshold
            }
        })
    }

    /// Largest reachable weight sum, bounding the numbers explanations use.
    pub fn max_total(&self) -> i32 {
        let mut w: Vec<i32> = self.features.iter().map(|f| f.weight.max(0)).collect();
        w.sort_unstable_by(|a, b| b.cmp(a));
        w[..self.max_features].iter().sum()
    }

    fn random_document(&self, rng: &mut ChaCha8Rng) -> String {
        let k = rng.random_range(self.min_features..=self.max_features);
        let mut picks = index::sample(rng, self.features.len(), k).into_vec();
        picks.shuffle(rng);
        picks
            .iter()
            .map(|&i| self.features[i].token.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Draws documents until one has `label`.
    pub fn sample_document(&self, label: u8, rng: &mut ChaCha8Rng) -> Result<String, SynthError> {
        if !self.feasible(label) {
            return Err(SynthError::InfeasiblePrevalence { label });
        }
        for _ in 0..MAX_DRAWS {
            let doc = self.random_document(rng);
            if self.label_of(&doc) == label {
                return Ok(doc);
            }
        }
        Err(SynthError::RejectionLimit {
            label,
            attempts: MAX_DRAWS,
        })
    }
}

/// `n` instances with exactly `round(n · prevalence)` positives in random
/// order, deterministic under `seed`.
pub fn gen_dataset(spec: &SynthTaskSpec, n: usize, seed: u64, split: Split) -> Result<Vec<Instance>, SynthError> {
    spec.validate()?;
    if n == 0 {
        return Err(SynthError::InvalidSpec("n must be at least 1"));
    }
    let n_pos = Float::round(n as f64 * spec.prevalence) as usize;
    if n_pos > 0 && !spec.feasible(1) {
        return Err(SynthError::InfeasiblePrevalence { label: 1 });
    }
    if n_pos < n && !spec.feasible(0) {
        return Err(SynthError::InfeasiblePrevalence { label: 0 });
    }
    let mut rng = stream(seed, &[spec.shuffle_seed, split as u64, 0x6461_7461]);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            Ok(Instance {
                id: format!("{}-{i:05}", split.as_str()),
                document: spec.sample_document(label, &mut rng)?,
                label,
                split,
            })
        })
        .collect()
}

/// Train, dev and test sets of the given sizes from one seed.
pub fn gen_splits(spec: &SynthTaskSpec, sizes: [usize; 3], seed: u64) -> Result<[Vec<Instance>; 3], SynthError> {
    Ok([
        gen_dataset(spec, sizes[0], seed, Split::Train)?,
        gen_dataset(spec, sizes[1], seed, Split::Dev)?,
        gen_dataset(spec, sizes[2], seed, Split::Test)?,
    ])
}

/// Template rationale: the weighted features of `document` in order, their
/// total, and the conclusion implied by `label` (which may contradict the
/// rule when a teacher errs).
pub fn oracle_explain(spec: &SynthTaskSpec, document: &str, label: u8) -> String {
    let mut seen = BTreeSet::new();
    let cited: Vec<&str> = document
        .split_whitespace()
        .filter(|t| spec.weight(t).is_some_and(|w| w != 0) && seen.insert(*t))
        .collect();
    let findings = if cited.is_empty() {
        "none".to_string()
    } else {
        cited.join(" ")
    };
    let risk = if label == 1 { "high" } else { "low" };
    format!("findings {findings} total {} so risk {risk}", spec.score(document))
}

/// Label implied by an explanation: the last `risk high` or `risk low`.
pub fn judge_explanation(explanation: &str) -> Option<u8> {
    let words: Vec<&str> = explanation.split_whitespace().collect();
    words.windows(2).rev().find_map(|w| match w {
        ["risk", "high"] => Some(1),
        ["risk", "low"] => Some(0),
        _ => None,
    })
}

/// Rule-based stand-in for an LLM judge.
#[derive(Clone, Debug)]
pub struct OracleJudge {
    vocabulary: BTreeSet<String>,
}

impl OracleJudge {
    pub fn new(spec: &SynthTaskSpec) -> Self {
        Self {
            vocabulary: explanation_words(spec).into_iter().collect(),
        }
    }

    pub fn infer_label(&self, explanation: &str) -> Option<u8> {
        judge_explanation(explanation)
    }

    /// Readable when non-empty, built only from explanation vocabulary,
    /// and finished with a conclusion.
    pub fn readable(&self, text: &str) -> bool {
        let words: Vec<&str> = text.split_whitespace().collect();
        !words.is_empty()
            && words.iter().all(|w| self.vocabulary.contains(*w))
            && matches!(words[words.len().saturating_sub(2)..], ["risk", "high"] | ["risk", "low"])
    }
}

fn explanation_words(spec: &SynthTaskSpec) -> Vec<String> {
    let mut words: Vec<String> = ["findings", "none", "total", "so", "risk", "high", "low"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    words.extend(spec.features.iter().map(|f| f.token.clone()));
    let lo = spec.features.iter().map(|f| f.weight.min(0)).sum::<i32>();
    words.extend((lo..=spec.max_total()).map(|v| v.to_string()));
    words
}

/// Tokenizer covering documents, prompts, targets and probability answers.
pub fn synth_tokenizer(spec: &SynthTaskSpec, map: &LabelMap) -> Tokenizer {
    let mut texts: Vec<String> = explanation_words(spec);
    for t in [PromptTemplates::synth(), PromptTemplates::synth_probability()] {
        let b = t.bundle("", map, &[]);
        texts.push(b.text());
    }
    texts.push(render_target("", 0, map));
    texts.push(render_target("", 1, map));
    texts.push(PROBABILITY_KEY.to_string());
    texts.extend((0..=100).map(|v| v.to_string()));
    Tokenizer::from_texts(texts.iter().map(String::as_str))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTeacher {
    /// Probability of the correct label for positive instances.
    pub p_pos: f64,
    /// Probability of the correct label for negative instances.
    pub p_neg: f64,
    /// Probability that the output is well formed.
    pub validity: f64,
    pub seed: u64,
}

impl OracleTeacher {
    pub fn new(accuracy: f64, validity: f64, seed: u64) -> Self {
        Self {
            p_pos: accuracy,
            p_neg: accuracy,
            validity,
            seed,
        }
    }

    /// Raw output for one call. Streams are keyed by instance id and trial
    /// so results do not depend on call order.
    pub fn generate(&self, spec: &SynthTaskSpec, map: &LabelMap, id: &str, document: &str, trial: u64) -> String {
        let mut rng = stream(self.seed, &[hash_str(id), trial]);
        let gold = spec.label_of(document);
        let p = if gold == 1 { self.p_pos } else { self.p_neg };
        let correct = rng.random::<f64>() < p;
        let valid = rng.random::<f64>() < self.validity;
        let label = if correct { gold } else { 1 - gold };
        let explanation = oracle_explain(spec, document, label);
        if valid {
            return render_target(&explanation, label, map);
        }
        match rng.random_range(0..3u8) {
            0 => {
                // cut off before the answer line
                let words: Vec<&str> = explanation.split_whitespace().collect();
                let keep = rng.random_range(1..=words.len());
                words[..keep].join(" ")
            }
            1 => {
                let n = rng.random_range(3..12);
                let mut out = vec!["Pom"];
                out.extend((0..n).map(|i| if i % 3 == 1 { "Pomuppy" } else { "Pom" }));
                out.join(" ")
            }
            _ => format!("{explanation}\n\n{CLASSIFICATION_KEY} maybe\n\nEOG"),
        }
    }
}

/// Language-model pretraining passages: exactly `round(n · format_ratio)`
/// full prompt-plus-target passages and raw documents for the rest, in
/// random order.
pub fn gen_pretrain_corpus(
    spec: &SynthTaskSpec,
    map: &LabelMap,
    n: usize,
    format_ratio: f64,
    seed: u64,
) -> Result<Vec<String>, SynthError> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&format_ratio) {
        return Err(SynthError::InvalidSpec("format_ratio must lie in [0, 1]"));
    }
    let mut rng = stream(seed, &[spec.shuffle_seed, 0x636f_7270]);
    let n_fmt = Float::round(n as f64 * format_ratio) as usize;
    let mut kinds: Vec<bool> = (0..n).map(|i| i < n_fmt).collect();
    kinds.shuffle(&mut rng);
    let templates = PromptTemplates::synth();
    let mut out = Vec::with_capacity(n);
    for formatted in kinds {
        let label = u8::from(rng.random::<f64>() < spec.prevalence);
        let label = if spec.feasible(label) { label } else { 1 - label };
        let doc = spec.sample_document(label, &mut rng)?;
        if formatted {
            let bundle = templates.bundle(&doc, map, &[]);
            let target = render_target(&oracle_explain(spec, &doc, label), label, map);
            out.push(format!("{}{}", bundle.text(), target));
        } else {
            out.push(doc);
        }
    }
    Ok(out)
}
