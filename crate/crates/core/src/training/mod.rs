//! Joint objective, classification-only ablation, language-model
//! pretraining, AdamW with a linear schedule, and checkpoint selection.

mod gradcheck;
mod optim;
mod select;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::AugmentedInstance;
use crate::model::{Bound, DualHeadModel, ModelError, ParamGroup, ParamId};
use crate::rng::{stream, ChaCha8Rng};
use crate::tensor::{Real, Tape, Tensor, TensorError, Var};
use crate::textproto::{assemble_input, render_target, LabelMap, PromptTemplates, TextError, Tokenizer};

pub use gradcheck::{check_gradients, GradCheck, GRADCHECK_FLOOR};
pub use optim::{clip_global_norm, lr_at, AdamW};
pub use select::{quality_scores, select_checkpoint, Selection, TIE_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Language-model loss on the target plus `lambda_cls` times the
    /// classification loss.
    Joint,
    /// Classification loss alone.
    ClsOnly,
    /// Next-token loss on every position; no classification.
    LmPretrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub micro_batch: usize,
    pub grad_accum: usize,
    pub lambda_cls: f64,
    pub seed: u64,
    /// Only LoRA adapters and the classification head are updated.
    pub base_frozen: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Train-mode dropout on adapters and the classification head.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Joint,
            lr: 2e-5,
            warmup_steps: 100,
            weight_decay: 0.01,
            epochs: 20,
            micro_batch: 1,
            grad_accum: 8,
            lambda_cls: 1.0,
            seed: 0,
            base_frozen: true,
            grad_clip: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lr) || !positive(self.adam_eps) {
            return Err(TrainError::InvalidConfig("lr and adam_eps must be positive"));
        }
        if self.epochs == 0 || self.micro_batch == 0 || self.grad_accum == 0 {
            return Err(TrainError::InvalidConfig("epochs, micro_batch and grad_accum must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig("weight_decay must be non-negative"));
        }
        if !(self.lambda_cls.is_finite() && self.lambda_cls >= 0.0) {
            return Err(TrainError::InvalidConfig("lambda_cls must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::InvalidConfig("betas must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !positive(c) {
                return Err(TrainError::InvalidConfig("grad_clip must be positive"));
            }
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.grad_accum
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.effective_batch())
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.steps_per_epoch(n) * self.epochs
    }

    fn objective(&self) -> Objective {
        Objective {
            mode: self.mode,
            lambda_cls: self.lambda_cls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("example has no target tokens")]
    NoTargets,
    #[error("classification example without a label")]
    MissingLabel,
    #[error("non-finite loss at epoch {epoch}, step {step}, lr {lr}")]
    NonFinite { epoch: usize, step: usize, lr: f64 },
    #[error("empty record list")]
    NoRecords,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("observer: {0}")]
    Observer(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Model(e.into())
    }
}

/// A tokenised training sequence. `tokens[..prefix_len]` is the input
/// prefix and the rest is the target text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub prefix_len: usize,
    pub label: Option<u8>,
}

impl Example {
    /// A pretraining passage: every token after the first is a target.
    pub fn passage(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            prefix_len: 1,
            label: None,
        }
    }

    pub fn prefix(&self) -> &[usize] {
        &self.tokens[..self.prefix_len]
    }

    pub fn n_targets(&self) -> usize {
        self.tokens.len() - self.prefix_len
    }
}

/// Prompt plus rendered target for an explanation-augmented instance. The
/// document is head-truncated so that the whole sequence fits
/// `max_seq_len`.
pub fn encode_augmented(
    inst: &AugmentedInstance,
    templates: &PromptTemplates,
    map: &LabelMap,
    tokenizer: &Tokenizer,
    max_seq_len: usize,
) -> Result<Example, TrainError> {
    let target = tokenizer.encode(&render_target(&inst.explanation, inst.label, map));
    let room = max_seq_len.saturating_sub(target.len());
    let bundle = templates.bundle(&inst.document, map, &[]);
    let (mut tokens, prefix_len) = assemble_input(&bundle, tokenizer, room)?;
    tokens.extend(target);
    Ok(Example {
        tokens,
        prefix_len,
        label: Some(inst.label),
    })
}

/// Prompt only, for classification and generation at evaluation time.
pub fn encode_prompt(
    document: &str,
    label: Option<u8>,
    templates: &PromptTemplates,
    map: &LabelMap,
    tokenizer: &Tokenizer,
    max_seq_len: usize,
) -> Result<Example, TrainError> {
    let bundle = templates.bundle(document, map, &[]);
    let (tokens, prefix_len) = assemble_input(&bundle, tokenizer, max_seq_len)?;
    Ok(Example {
        tokens,
        prefix_len,
        label,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub mode: TrainMode,
    pub lambda_cls: f64,
}

impl Objective {
    pub fn joint(lambda_cls: f64) -> Self {
        Self {
            mode: TrainMode::Joint,
            lambda_cls,
        }
    }

    pub fn cls_only() -> Self {
        Self {
            mode: TrainMode::ClsOnly,
            lambda_cls: 1.0,
        }
    }

    pub fn lm() -> Self {
        Self {
            mode: TrainMode::LmPretrain,
            lambda_cls: 0.0,
        }
    }
}

/// Batch-mean loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub gen: Option<f64>,
    pub cls: Option<f64>,
}

/// Loss and per-parameter gradients, indexed like the model's parameter
/// store. Parameters outside the trainable set have `None`.
#[derive(Clone, Debug)]
pub struct BatchGradients<T> {
    pub loss: LossValues,
    pub grads: Vec<Option<Tensor<T>>>,
}

/// Mean token cross-entropy of `logits` rows `prefix_len - 1 ..` against
/// `next`, where `next[r]` is the gold token following position `r`.
/// Rows inside the prefix are masked out.
pub fn gen_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    next: &[usize],
    prefix_len: usize,
) -> Result<Var, TrainError> {
    let targets: Vec<Option<usize>> = next
        .iter()
        .enumerate()
        .map(|(r, &t)| (r + 1 >= prefix_len).then_some(t))
        .collect();
    if targets.iter().all(Option::is_none) {
        return Err(TrainError::NoTargets);
    }
    Ok(tape.cross_entropy(logits, &targets)?)
}

/// Records the loss of one example on `tape`. Returns the total loss
/// variable and its components.
pub fn example_loss<T: Real>(
    model: &DualHeadModel<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    ex: &Example,
    objective: Objective,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LossValues), TrainError> {
    let n = ex.tokens.len();
    match objective.mode {
        TrainMode::ClsOnly => {
            let label = ex.label.ok_or(TrainError::MissingLabel)?;
            let fv = model.forward_vars(tape, bound, ex.prefix(), ex.prefix_len, rng.as_deref_mut())?;
            let z = model.class_logits_var(tape, bound, fv.h_n, rng)?;
            let cls = tape.softmax_cross_entropy(z, usize::from(label))?;
            let v = tape.value(cls).data()[0].as_f64();
            Ok((
                cls,
                LossValues {
                    total: v,
                    gen: None,
                    cls: Some(v),
                },
            ))
        }
        TrainMode::LmPretrain => {
            if n < 2 || ex.prefix_len >= n {
                return Err(TrainError::NoTargets);
            }
            let hidden = model.hidden(tape, bound, &ex.tokens, rng)?;
            let start = ex.prefix_len - 1;
            let rows = tape.slice_rows(hidden, start, n - 1)?;
            let logits = model.lm_logits(tape, bound, rows)?;
            let gen = gen_loss(tape, logits, &ex.tokens[start + 1..], 1)?;
            let v = tape.value(gen).data()[0].as_f64();
            Ok((
                gen,
                LossValues {
                    total: v,
                    gen: Some(v),
                    cls: None,
                },
            ))
        }
        TrainMode::Joint => {
            let label = ex.label.ok_or(TrainError::MissingLabel)?;
            if ex.prefix_len >= n {
                return Err(TrainError::NoTargets);
            }
            let fv = model.forward_vars(tape, bound, &ex.tokens, ex.prefix_len, rng.as_deref_mut())?;
            let start = ex.prefix_len - 1;
            let rows = tape.slice_rows(fv.hidden, start, n - 1)?;
            let logits = model.lm_logits(tape, bound, rows)?;
            let gen = gen_loss(tape, logits, &ex.tokens[start + 1..], 1)?;
            let z = model.class_logits_var(tape, bound, fv.h_n, rng)?;
            let cls = tape.softmax_cross_entropy(z, usize::from(label))?;
            let weighted = tape.scale(cls, T::of(objective.lambda_cls))?;
            let total = tape.add(gen, weighted)?;
            let (g, c) = (tape.value(gen).data()[0].as_f64(), tape.value(cls).data()[0].as_f64());
            Ok((
                total,
                LossValues {
                    total: tape.value(total).data()[0].as_f64(),
                    gen: Some(g),
                    cls: Some(c),
                },
            ))
        }
    }
}

/// Which parameters an objective updates. Base-frozen training keeps
/// every base weight fixed. The LM head is idle under classification-only
/// training and the classification head under pretraining.
pub fn trainable_mask<T: Real>(model: &DualHeadModel<T>, mode: TrainMode, base_frozen: bool) -> Vec<bool> {
    let lm_head = model.lm_head().index();
    model
        .params()
        .iter()
        .map(|(id, p)| {
            let group_ok = match p.group {
                ParamGroup::Base => !base_frozen,
                ParamGroup::Lora => true,
                ParamGroup::ClsHead => mode != TrainMode::LmPretrain,
            };
            group_ok && !(mode == TrainMode::ClsOnly && id.index() == lm_head)
        })
        .collect()
}

/// Mean loss and gradients over `batch`. Each example gets its own tape;
/// gradients are summed then divided by the batch size. `dropout_rngs`,
/// when given, supplies one RNG per example.
pub fn batch_gradients<T: Real>(
    model: &DualHeadModel<T>,
    batch: &[&Example],
    objective: Objective,
    trainable: &[bool],
    mut dropout_rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<BatchGradients<T>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let store = model.params();
    let mut grads: Vec<Option<Tensor<T>>> = store
        .iter()
        .map(|(id, p)| trainable[id.index()].then(|| Tensor::zeros(p.value.shape())))
        .collect();
    let mut loss = LossValues::default();
    let (mut gen_sum, mut cls_sum) = (0.0, 0.0);
    for (i, ex) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let bound = store.bind_mask(&mut tape, trainable);
        let rng = dropout_rngs.as_deref_mut().map(|r| &mut r[i]);
        let (total, parts) = example_loss(model, &mut tape, &bound, ex, objective, rng)?;
        let mut g = tape.backward(total)?;
        for (idx, slot) in grads.iter_mut().enumerate() {
            let Some(acc) = slot else { continue };
            if let Some(gi) = g.take(bound.var(ParamId(idx))) {
                for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += b;
                }
            }
        }
        loss.total += parts.total;
        gen_sum += parts.gen.unwrap_or(0.0);
        cls_sum += parts.cls.unwrap_or(0.0);
        if parts.gen.is_some() {
            loss.gen = Some(0.0);
        }
        if parts.cls.is_some() {
            loss.cls = Some(0.0);
        }
    }
    let n = batch.len() as f64;
    let inv = T::of(1.0 / n);
    for acc in grads.iter_mut().flatten() {
        acc.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    loss.total /= n;
    loss.gen = loss.gen.map(|_| gen_sum / n);
    loss.cls = loss.cls.map(|_| cls_sum / n);
    Ok(BatchGradients { loss, grads })
}

/// `L_gen + lambda · L_cls` over a batch, all parameters trainable.
pub fn joint_loss<T: Real>(
    model: &DualHeadModel<T>,
    batch: &[&Example],
    lambda_cls: f64,
) -> Result<BatchGradients<T>, TrainError> {
    let mask = vec![true; model.params().len()];
    batch_gradients(model, batch, Objective::joint(lambda_cls), &mask, None)
}

/// Classification loss alone over a batch, all parameters trainable.
pub fn cls_only_loss<T: Real>(model: &DualHeadModel<T>, batch: &[&Example]) -> Result<BatchGradients<T>, TrainError> {
    let mask = vec![true; model.params().len()];
    batch_gradients(model, batch, Objective::cls_only(), &mask, None)
}

/// Evaluation-mode mean loss over `data`, without gradients.
pub fn eval_loss<T: Real>(model: &DualHeadModel<T>, data: &[Example], objective: Objective) -> Result<LossValues, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut out = LossValues::default();
    let (mut g, mut c) = (0.0, 0.0);
    for ex in data {
        let mut tape = Tape::untracked();
        let bound = model.params().bind(&mut tape, |_| false);
        let (_, parts) = example_loss(model, &mut tape, &bound, ex, objective, None)?;
        out.total += parts.total;
        g += parts.gen.unwrap_or(0.0);
        c += parts.cls.unwrap_or(0.0);
        out.gen = parts.gen.map(|_| 0.0).or(out.gen);
        out.cls = parts.cls.map(|_| 0.0).or(out.cls);
    }
    let n = data.len() as f64;
    out.total /= n;
    out.gen = out.gen.map(|_| g / n);
    out.cls = out.cls.map(|_| c / n);
    Ok(out)
}

/// Dev-split metrics recorded after an epoch. `kappa` compares the head
/// thresholded at 0.5 with the verbalized labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub auroc_cls: Option<f64>,
    pub auroc_align: Option<f64>,
    pub kappa: Option<f64>,
    pub parsability: Option<f64>,
    pub loss: Option<LossValues>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: LossValues,
    pub last_lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based; epoch 0 denotes the untrained starting point.
    pub epoch: usize,
    pub stats: EpochStats,
    pub dev: DevMetrics,
    pub checkpoint: Option<String>,
}

/// What the observer reports back at the end of an epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochOutcome {
    pub dev: DevMetrics,
    pub checkpoint: Option<String>,
}

/// Called after each epoch with read-only access to the weights; computes
/// dev metrics and persists checkpoints.
pub trait EpochObserver<T: Real> {
    fn epoch_end(&mut self, model: &DualHeadModel<T>, stats: &EpochStats) -> Result<EpochOutcome, TrainError>;
}

/// Observer that records nothing.
pub struct NoObserver;

impl<T: Real> EpochObserver<T> for NoObserver {
    fn epoch_end(&mut self, _: &DualHeadModel<T>, _: &EpochStats) -> Result<EpochOutcome, TrainError> {
        Ok(EpochOutcome::default())
    }
}

impl<T: Real, F> EpochObserver<T> for F
where
    F: FnMut(&DualHeadModel<T>, &EpochStats) -> Result<EpochOutcome, TrainError>,
{
    fn epoch_end(&mut self, model: &DualHeadModel<T>, stats: &EpochStats) -> Result<EpochOutcome, TrainError> {
        self(model, stats)
    }
}

/// Runs `config.epochs` epochs over `data`. Examples are reshuffled each
/// epoch from a seeded stream; each optimizer step averages the gradients
/// of `micro_batch · grad_accum` examples (fewer at the end of an epoch).
pub fn train<T: Real, O: EpochObserver<T> + ?Sized>(
    model: &mut DualHeadModel<T>,
    data: &[Example],
    config: &TrainConfig,
    observer: &mut O,
) -> Result<Vec<EpochRecord>, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mask = trainable_mask(model, config.mode, config.base_frozen);
    let mut opt = AdamW::new(model.params(), config);
    let total_steps = config.total_steps(data.len());
    let per_step = config.effective_batch();
    let objective = config.objective();
    let mut step = 0usize;
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(config.seed, &[0x7368_7566, epoch as u64]));
        let mut sums = LossValues::default();
        let (mut g, mut c) = (0.0, 0.0);
        let mut lr = 0.0;
        let mut steps_this_epoch = 0;
        for (chunk_idx, chunk) in order.chunks(per_step).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let mut rngs: Vec<ChaCha8Rng> = chunk
                .iter()
                .enumerate()
                .map(|(j, _)| stream(config.seed, &[0x6472_6f70, epoch as u64, chunk_idx as u64, j as u64]))
                .collect();
            let rngs = config.dropout.then_some(rngs.as_mut_slice());
            let mut bg = batch_gradients(model, &batch, objective, &mask, rngs)?;
            lr = lr_at(step, config.warmup_steps, total_steps, config.lr);
            if !bg.loss.total.is_finite() {
                return Err(TrainError::NonFinite { epoch, step, lr });
            }
            if let Some(max) = config.grad_clip {
                clip_global_norm(&mut bg.grads, max);
            }
            opt.step(model.params_mut(), &bg.grads, lr);
            let w = batch.len() as f64;
            sums.total += bg.loss.total * w;
            g += bg.loss.gen.unwrap_or(0.0) * w;
            c += bg.loss.cls.unwrap_or(0.0) * w;
            sums.gen = bg.loss.gen.map(|_| 0.0);
            sums.cls = bg.loss.cls.map(|_| 0.0);
            step += 1;
            steps_this_epoch += 1;
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            steps: steps_this_epoch,
            train_loss: LossValues {
                total: sums.total / n,
                gen: sums.gen.map(|_| g / n),
                cls: sums.cls.map(|_| c / n),
            },
            last_lr: lr,
        };
        let outcome = observer.epoch_end(model, &stats)?;
        records.push(EpochRecord {
            epoch,
            stats,
            dev: outcome.dev,
            checkpoint: outcome.checkpoint,
        });
    }
    Ok(records)
}
