//! Evaluation of the dual-head model and of inference-only baselines,
//! self-consistency voting, the classification-only collapse ablation,
//! multi-run aggregation and judge orchestration.

mod baselines;
mod collapse;
mod judge;
#[cfg(test)]
mod tests;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datagen::{chat_messages, ChatModel, TeacherError};
use crate::metrics::{
    apply_threshold, auroc, auroc_alignment, cohens_kappa, parsability, tune_threshold, MetricError, MetricReport,
    Objective as MetricObjective, ReportInputs,
};
use crate::model::{positive_probability, Decoding, DualHeadModel, ModelError};
use crate::rng::{hash_str, stream, ChaCha8Rng};
use crate::synth::Instance;
use crate::tensor::Real;
use crate::textproto::{
    assemble_input, parse_classification, strip_think, LabelMap, ParsedOutput, PromptBundle, PromptTemplates,
    TextError, Tokenizer, EOG,
};
use crate::training::{
    eval_loss, DevMetrics, EpochObserver, EpochOutcome, EpochStats, Example, Objective, TrainError,
};

pub use baselines::{
    aggregate, run_label_prediction, run_self_consistency, run_verbalized_probability, vote, AggregateResult,
    LedgerEntry, MeanStd, SelfConsistencyResult,
};
pub use collapse::{collapse_ablation, CollapseCurves};
pub use judge::{judge_consistency, ChatJudge, Judge, JudgeOutcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("transport: {0}")]
    Transport(String),
    #[error("empty split")]
    Empty,
}

impl From<TeacherError> for EvalError {
    fn from(e: TeacherError) -> Self {
        match e {
            TeacherError::Transport(s) => Self::Transport(s),
        }
    }
}

/// Prompting and decoding settings shared by evaluation routines.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub tokenizer: &'a Tokenizer,
    pub templates: &'a PromptTemplates,
    pub map: &'a LabelMap,
    /// Generation budget in tokens.
    pub max_new: usize,
}

impl EvalContext<'_> {
    /// Token ids of the prompt for `document`, leaving `max_new` positions
    /// free for generation.
    pub fn prompt(&self, document: &str, max_seq_len: usize) -> Result<Vec<usize>, EvalError> {
        let bundle = self.templates.bundle(document, self.map, &[]);
        let budget = max_seq_len.saturating_sub(self.max_new);
        Ok(assemble_input(&bundle, self.tokenizer, budget)?.0)
    }
}

/// One model output on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub run: usize,
    pub gold: Option<u8>,
    /// Head probability of the positive class; absent for baselines.
    pub prob: Option<f64>,
    pub text: String,
    pub parsed: ParsedOutput,
}

/// Anything that answers a prompt with text. `run` separates repeated
/// samples of the same prompt.
pub trait Responder {
    fn respond(&mut self, id: &str, bundle: &PromptBundle, run: usize) -> Result<String, EvalError>;
    fn describe(&self) -> String;
}

/// Local model as a responder. Each `(id, run)` pair gets its own RNG
/// stream, so outputs do not depend on evaluation order.
pub struct LocalResponder<'a, T> {
    pub model: &'a DualHeadModel<T>,
    pub tokenizer: &'a Tokenizer,
    pub decoding: Decoding,
    pub max_new: usize,
    pub seed: u64,
}

impl<T: Real> Responder for LocalResponder<'_, T> {
    fn respond(&mut self, id: &str, bundle: &PromptBundle, run: usize) -> Result<String, EvalError> {
        let budget = self.model.config().max_seq_len.saturating_sub(self.max_new);
        let (tokens, _) = assemble_input(bundle, self.tokenizer, budget)?;
        let mut rng = stream(self.seed, &[hash_str(id), run as u64]);
        let out = self.model.generate(&tokens, self.max_new, self.decoding, EOG, &mut rng)?;
        Ok(self.tokenizer.decode(&out))
    }

    fn describe(&self) -> String {
        format!("local({:?}, max_new={})", self.decoding, self.max_new)
    }
}

/// Chat model as a responder.
pub struct ChatResponder<C> {
    pub chat: C,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl<C: ChatModel> Responder for ChatResponder<C> {
    fn respond(&mut self, _id: &str, bundle: &PromptBundle, _run: usize) -> Result<String, EvalError> {
        let (system, user) = chat_messages(bundle);
        Ok(self.chat.complete(&system, &user, self.temperature, self.max_tokens)?)
    }

    fn describe(&self) -> String {
        format!("chat({}, temperature={})", self.chat.describe(), self.temperature)
    }
}

/// Head probability from `h_n` and a continuation of the prompt, from a
/// single cached pass.
pub fn predict_clsgen<T: Real>(
    model: &DualHeadModel<T>,
    ctx: &EvalContext<'_>,
    inst: &Instance,
    decoding: Decoding,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionRecord, EvalError> {
    let tokens = ctx.prompt(&inst.document, model.config().max_seq_len)?;
    let (mut cache, hidden) = model.prime(&tokens)?;
    let [z0, z1] = model.class_logits(&hidden)?;
    let prob = positive_probability(z0, z1).as_f64();
    let out = model.continue_generation(&mut cache, hidden, ctx.max_new, decoding, EOG, rng)?;
    let text = ctx.tokenizer.decode(&out);
    let parsed = parse_classification(strip_think(&text), ctx.map);
    Ok(PredictionRecord {
        id: inst.id.clone(),
        run: 0,
        gold: Some(inst.label),
        prob: Some(prob),
        text,
        parsed,
    })
}

/// Greedy predictions for every instance.
pub fn clsgen_records<T: Real>(
    model: &DualHeadModel<T>,
    ctx: &EvalContext<'_>,
    instances: &[Instance],
) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut rng = stream(0, &[]);
    instances
        .iter()
        .map(|inst| predict_clsgen(model, ctx, inst, Decoding::Greedy, &mut rng))
        .collect()
}

/// Thresholds tuned on the dev split; `None` leaves only the default row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
}

struct Columns {
    gold: Vec<Option<u8>>,
    probs: Option<Vec<f64>>,
    verbalized: Vec<Option<u8>>,
    parsable: Vec<bool>,
}

fn columns(records: &[PredictionRecord]) -> Columns {
    let probs: Option<Vec<f64>> = records.iter().map(|r| r.prob).collect();
    Columns {
        gold: records.iter().map(|r| r.gold).collect(),
        probs,
        verbalized: records.iter().map(|r| r.parsed.label).collect(),
        parsable: records.iter().map(|r| r.parsed.parsable).collect(),
    }
}

/// F1 threshold against gold and kappa threshold against the verbalized
/// labels, each maximising its own metric on `dev`.
pub fn tune_thresholds(dev: &[PredictionRecord]) -> Result<Thresholds, EvalError> {
    let c = columns(dev);
    let probs = c.probs.ok_or(EvalError::Empty)?;
    let f1 = tune_threshold(&probs, &c.gold, MetricObjective::F1)?.0;
    let kappa = tune_threshold(&probs, &c.verbalized, MetricObjective::Kappa).ok().map(|r| r.0);
    Ok(Thresholds { f1: Some(f1), kappa })
}

/// Full report for a set of records, optionally with judge verdicts.
pub fn score_records(
    records: &[PredictionRecord],
    thresholds: &Thresholds,
    judged: Option<&JudgeOutcome>,
) -> Result<MetricReport, EvalError> {
    let c = columns(records);
    Ok(MetricReport::build(&ReportInputs {
        gold: &c.gold,
        probs: c.probs.as_deref(),
        verbalized: &c.verbalized,
        parsable: &c.parsable,
        inferred: judged.map(|j| j.inferred.as_slice()),
        readable: judged.map(|j| j.readable.as_slice()),
        tuned_f1_threshold: thresholds.f1,
        tuned_kappa_threshold: thresholds.kappa,
    })?)
}

/// Greedy predictions on `instances` and their report.
pub fn run_clsgen_eval<T: Real>(
    model: &DualHeadModel<T>,
    ctx: &EvalContext<'_>,
    instances: &[Instance],
    thresholds: &Thresholds,
) -> Result<(Vec<PredictionRecord>, MetricReport), EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Empty);
    }
    let records = clsgen_records(model, ctx, instances)?;
    let report = score_records(&records, thresholds, None)?;
    Ok((records, report))
}

/// Selection metrics: head AUROC, AUROC-Alignment, kappa between the head
/// at 0.5 and the verbalized labels, and parsability.
pub fn dev_metrics(records: &[PredictionRecord]) -> DevMetrics {
    let c = columns(records);
    let flags: Vec<bool> = c.parsable.clone();
    let mut out = DevMetrics {
        parsability: parsability(&flags).ok(),
        ..DevMetrics::default()
    };
    if let Some(p) = c.probs {
        out.auroc_cls = auroc(&p, &c.gold).ok();
        out.auroc_align = auroc_alignment(&p, &c.verbalized).ok();
        out.kappa = cohens_kappa(&apply_threshold(&p, 0.5), &c.verbalized).ok();
    }
    out
}

/// Epoch observer that scores the dev split with greedy decoding and hands
/// the model to `on_epoch` (for checkpointing and logging).
pub struct DevObserver<'a, F> {
    pub ctx: EvalContext<'a>,
    pub dev: &'a [Instance],
    /// Encoded dev examples for the dev loss, when available.
    pub dev_examples: Option<&'a [Example]>,
    pub objective: Objective,
    pub on_epoch: F,
}

impl<T, F> EpochObserver<T> for DevObserver<'_, F>
where
    T: Real,
    F: FnMut(&DualHeadModel<T>, &EpochStats, &DevMetrics) -> Result<Option<String>, TrainError>,
{
    fn epoch_end(&mut self, model: &DualHeadModel<T>, stats: &EpochStats) -> Result<EpochOutcome, TrainError> {
        let records = clsgen_records(model, &self.ctx, self.dev).map_err(|e| TrainError::Observer(format!("{e}")))?;
        let mut dev = dev_metrics(&records);
        if let Some(ex) = self.dev_examples {
            dev.loss = Some(eval_loss(model, ex, self.objective)?);
        }
        let checkpoint = (self.on_epoch)(model, stats, &dev)?;
        Ok(EpochOutcome { dev, checkpoint })
    }
}
