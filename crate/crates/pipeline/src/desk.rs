//! Desk-scale experiment: LM-pretrain a small model on the synthetic
//! corpus, then fine-tune it classification-only or jointly and follow the
//! dev curves. Shared by the `collapse` example and the acceptance suite.

use anyhow::Result;
use dualhead_core::datagen::{build_dataset, AugmentedInstance, DataGenConfig, DataGenReport, SynthTeacher};
use dualhead_core::evalsuite::{
    collapse_ablation, judge_consistency, run_clsgen_eval, score_records, CollapseCurves, EvalContext, JudgeOutcome,
    PredictionRecord, Thresholds,
};
use dualhead_core::metrics::MetricReport;
use dualhead_core::model::{DualHeadModel, ModelConfig};
use dualhead_core::rng::derive_seed;
use dualhead_core::synth::{gen_pretrain_corpus, gen_splits, synth_tokenizer, Instance, OracleJudge, OracleTeacher, SynthTaskSpec};
use dualhead_core::textproto::{LabelMap, PromptTemplates, Tokenizer};
use dualhead_core::training::{encode_augmented, encode_prompt, train, Example, NoObserver, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskSetup {
    pub seed: u64,
    pub prevalence: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub corpus_docs: usize,
    pub format_ratio: f64,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub cls_hidden: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub init_std: f64,
    pub pre_epochs: usize,
    pub pre_lr: f64,
    pub pre_batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub micro_batch: usize,
    pub grad_accum: usize,
    pub warmup: usize,
    pub base_frozen: bool,
    pub max_new: usize,
    pub teacher_accuracy: f64,
    pub teacher_validity: f64,
    pub k: usize,
}

impl Default for DeskSetup {
    fn default() -> Self {
        Self {
            seed: 0,
            prevalence: 0.04,
            n_train: 800,
            n_dev: 500,
            n_test: 800,
            corpus_docs: 3000,
            format_ratio: 0.5,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 64,
            cls_hidden: 64,
            lora_rank: 8,
            lora_alpha: 16.0,
            init_std: 0.05,
            pre_epochs: 4,
            pre_lr: 3e-3,
            pre_batch: 8,
            epochs: 15,
            lr: 3e-3,
            micro_batch: 4,
            grad_accum: 2,
            warmup: 10,
            base_frozen: true,
            max_new: 24,
            teacher_accuracy: 0.9,
            teacher_validity: 0.95,
            k: 5,
        }
    }
}

impl DeskSetup {
    /// Defaults overridden by environment variables named after the fields
    /// in upper case, with JSON-formatted values.
    pub fn from_env() -> Result<Self> {
        let mut v = serde_json::to_value(Self::default())?;
        let obj = v.as_object_mut().expect("struct serializes to an object");
        for (k, slot) in obj.iter_mut() {
            if let Ok(s) = std::env::var(k.to_uppercase()) {
                *slot = serde_json::from_str(&s).map_err(|e| anyhow::anyhow!("{}: {e}", k.to_uppercase()))?;
            }
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn spec(&self) -> SynthTaskSpec {
        SynthTaskSpec::with_prevalence(self.prevalence)
    }

    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            cls_hidden_dim: self.cls_hidden,
            lora_rank: self.lora_rank,
            lora_alpha: self.lora_alpha,
            init_std: self.init_std,
            ..ModelConfig::default()
        }
    }

    pub fn finetune_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            mode,
            lr: self.lr,
            warmup_steps: self.warmup,
            epochs: self.epochs,
            micro_batch: self.micro_batch,
            grad_accum: self.grad_accum,
            base_frozen: self.base_frozen,
            seed: derive_seed(self.seed, &[2]),
            ..TrainConfig::default()
        }
    }
}

/// A pretrained model with its task, data and explanation-augmented
/// training set.
pub struct Pretrained {
    pub spec: SynthTaskSpec,
    pub map: LabelMap,
    pub templates: PromptTemplates,
    pub tokenizer: Tokenizer,
    pub model: DualHeadModel<f64>,
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    pub augmented: Vec<AugmentedInstance>,
    pub datagen: DataGenReport,
}

/// Outcome of one fine-tuning run.
pub struct DeskRun {
    pub curves: CollapseCurves,
    pub model: DualHeadModel<f64>,
    /// Test-split evaluation of the final model.
    pub test_records: Vec<PredictionRecord>,
    pub test_report: Option<MetricReport>,
    pub judge: Option<JudgeOutcome>,
}

impl Pretrained {
    pub fn build(s: &DeskSetup) -> Result<Self> {
        let spec = s.spec();
        let map = LabelMap::default();
        let templates = PromptTemplates::synth();
        let tokenizer = synth_tokenizer(&spec, &map);
        let [train_set, dev, test] = gen_splits(&spec, [s.n_train, s.n_dev, s.n_test], derive_seed(s.seed, &[0]))?;
        let corpus = gen_pretrain_corpus(&spec, &map, s.corpus_docs, s.format_ratio, derive_seed(s.seed, &[1]))?;
        let mut model = DualHeadModel::<f64>::new(s.model_config(tokenizer.vocab_size()), derive_seed(s.seed, &[3]))?;
        let data: Vec<Example> = corpus
            .iter()
            .map(|t| {
                let mut ids = tokenizer.encode(t);
                ids.truncate(s.max_seq_len);
                Example::passage(ids)
            })
            .collect();
        let pre = TrainConfig {
            mode: TrainMode::LmPretrain,
            lr: s.pre_lr,
            warmup_steps: s.warmup,
            epochs: s.pre_epochs,
            micro_batch: s.pre_batch,
            grad_accum: 1,
            base_frozen: false,
            dropout: false,
            seed: derive_seed(s.seed, &[4]),
            ..TrainConfig::default()
        };
        train(&mut model, &data, &pre, &mut NoObserver)?;
        let mut teacher = SynthTeacher {
            teacher: OracleTeacher::new(s.teacher_accuracy, s.teacher_validity, derive_seed(s.seed, &[5])),
            spec: spec.clone(),
            map: map.clone(),
        };
        let dg = DataGenConfig {
            k: s.k,
            max_explanation_tokens: s.max_seq_len,
            ..DataGenConfig::default()
        };
        let (augmented, datagen, _) = build_dataset(&train_set, &mut teacher, &tokenizer, &map, &dg);
        Ok(Self {
            spec,
            map,
            templates,
            tokenizer,
            model,
            train: train_set,
            dev,
            test,
            augmented,
            datagen,
        })
    }

    pub fn ctx(&self, max_new: usize) -> EvalContext<'_> {
        EvalContext {
            tokenizer: &self.tokenizer,
            templates: &self.templates,
            map: &self.map,
            max_new,
        }
    }

    /// Fine-tunes a copy of the pretrained model on the augmented training
    /// set: prompt and label only for classification-only training, prompt
    /// plus explanation and label for joint training.
    pub fn finetune(&self, s: &DeskSetup, joint: bool) -> Result<DeskRun> {
        let mut model = self.model.clone();
        model.attach_lora(derive_seed(s.seed, &[6]))?;
        let mode = if joint { TrainMode::Joint } else { TrainMode::ClsOnly };
        let data = self
            .augmented
            .iter()
            .map(|a| {
                if joint {
                    encode_augmented(a, &self.templates, &self.map, &self.tokenizer, s.max_seq_len)
                } else {
                    encode_prompt(&a.document, Some(a.label), &self.templates, &self.map, &self.tokenizer, s.max_seq_len)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ctx = self.ctx(s.max_new);
        let curves = collapse_ablation(&mut model, &data, &self.dev, &ctx, &s.finetune_config(mode))?;
        let (test_records, report) = run_clsgen_eval(&model, &ctx, &self.test, &Thresholds::default())?;
        let judge = judge_consistency(&test_records, &mut OracleJudge::new(&self.spec), true);
        let test_report = score_records(&test_records, &Thresholds::default(), Some(&judge)).ok().or(Some(report));
        Ok(DeskRun {
            curves,
            model,
            test_records,
            test_report,
            judge: Some(judge),
        })
    }
}
