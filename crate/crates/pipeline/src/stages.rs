//! Pipeline stages. Each stage reads upstream artifacts, writes its own
//! files named with its stage hash, and records a stamp listing the digests
//! of its inputs and outputs. A stage whose stamp still matches is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dualhead_core::datagen::{build_dataset, AugmentedInstance, ChatTeacher, DataGenReport, SynthTeacher, TeacherModel};
use dualhead_core::evalsuite::{
    clsgen_records, judge_consistency, run_clsgen_eval, run_label_prediction, run_self_consistency,
    run_verbalized_probability, score_records, tune_thresholds, AggregateResult, ChatJudge, ChatResponder, DevObserver,
    EvalContext, Judge, JudgeOutcome, LocalResponder, PredictionRecord, Responder, SelfConsistencyResult, Thresholds,
};
use dualhead_core::metrics::MetricReport;
use dualhead_core::model::{Decoding, DualHeadModel};
use dualhead_core::synth::{gen_pretrain_corpus, gen_splits, synth_tokenizer, Instance, OracleJudge, OracleTeacher, Split};
use dualhead_core::textproto::Tokenizer;
use dualhead_core::training::{
    encode_augmented, encode_prompt, select_checkpoint, train, DevMetrics, EpochOutcome, EpochRecord, EpochStats,
    Example, Objective, TrainError, TrainMode,
};
use serde::{Deserialize, Serialize};

use crate::chat::ChatClient;
use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{BaselineMethod, Resolved, Source, Stage, ThresholdChoice};
use crate::io::{append_jsonl, file_sha256, read_json, read_jsonl, require, write_atomic, write_json, write_jsonl};

/// Digests of one completed stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name to SHA-256, relative to the output directory.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub text: String,
}

/// Header fields carried by every JSON artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataGenArtifact {
    pub provenance: Provenance,
    pub report: DataGenReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLogLine {
    pub epoch: usize,
    pub stats: EpochStats,
    pub dev: DevMetrics,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochsArtifact {
    pub provenance: Provenance,
    pub mode: TrainMode,
    pub records: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub provenance: Provenance,
    pub epoch: usize,
    pub checkpoint: String,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalArtifact {
    pub provenance: Provenance,
    pub checkpoint: String,
    pub epoch: usize,
    pub thresholds: Thresholds,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeArtifact {
    pub provenance: Provenance,
    pub outcome: JudgeOutcome,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaselineResult {
    Aggregate(AggregateResult),
    SelfConsistency {
        aggregate: AggregateResult,
        votes: SelfConsistencyResult,
    },
}

impl BaselineResult {
    pub fn aggregate(&self) -> &AggregateResult {
        match self {
            Self::Aggregate(a) | Self::SelfConsistency { aggregate: a, .. } => a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineArtifact {
    pub provenance: Provenance,
    pub method: BaselineMethod,
    pub responder: String,
    pub result: BaselineResult,
}

/// A resolved configuration bound to an output directory.
pub struct Pipeline {
    pub r: Resolved,
    pub out: PathBuf,
    /// Rerun stages even when their stamps match.
    pub force: bool,
}

fn observer_err(e: anyhow::Error) -> TrainError {
    TrainError::Observer(format!("{e:#}"))
}

impl Pipeline {
    pub fn new(r: Resolved, force: bool) -> Self {
        let out = r.config.out_dir.clone();
        Self { r, out, force }
    }

    pub fn file(&self, stage: Stage, stem: &str, ext: &str) -> PathBuf {
        self.out.join(format!("{stem}-{}.{ext}", self.r.hash(stage)))
    }

    pub fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out.join(format!("{}-{}.stamp.json", stage.name(), self.r.hash(stage)))
    }

    fn provenance(&self, stage: Stage) -> Provenance {
        Provenance {
            run: self.r.config.name.clone(),
            stage: stage.name(),
            config_hash: self.r.hash(stage),
            seed: self.r.config.seed,
        }
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().into_owned()
    }

    fn digests(&self, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        files.iter().map(|f| Ok((self.rel(f), file_sha256(f)?))).collect()
    }

    fn up_to_date(&self, stage: Stage, inputs: &[PathBuf]) -> Result<bool> {
        let sp = self.stamp_path(stage);
        if self.force || !sp.exists() {
            return Ok(false);
        }
        let stamp: Stamp = read_json(&sp)?;
        if stamp.inputs != self.digests(inputs)? {
            return Ok(false);
        }
        for (name, digest) in &stamp.outputs {
            let p = self.out.join(name);
            if !p.exists() || &file_sha256(&p)? != digest {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Runs `body` unless the stage is up to date. `inputs` must exist.
    fn run_stage(
        &self,
        stage: Stage,
        inputs: &[(PathBuf, Stage)],
        body: impl FnOnce() -> Result<Vec<PathBuf>>,
    ) -> Result<Outcome> {
        for (p, up) in inputs {
            require(p, up.command())?;
        }
        let inputs: Vec<PathBuf> = inputs.iter().map(|(p, _)| p.clone()).collect();
        if self.up_to_date(stage, &inputs)? {
            log::info!("{} is up to date ({})", stage.name(), self.r.hash(stage));
            return Ok(Outcome::UpToDate);
        }
        log::info!("running {} ({})", stage.name(), self.r.hash(stage));
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let outputs = body()?;
        let stamp = Stamp {
            stage: stage.name(),
            config_hash: self.r.hash(stage),
            seed: self.r.config.seed,
            inputs: self.digests(&inputs)?,
            outputs: self.digests(&outputs)?,
        };
        write_json(&self.stamp_path(stage), &stamp)?;
        Ok(Outcome::Ran)
    }

    // artifact paths

    pub fn split_path(&self, split: Split) -> PathBuf {
        self.file(Stage::SynthGen, split.as_str(), "jsonl")
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.file(Stage::SynthGen, "corpus", "jsonl")
    }

    pub fn tokenizer_path(&self) -> PathBuf {
        self.file(Stage::SynthGen, "tokenizer", "json")
    }

    pub fn pretrain_ckpt(&self) -> PathBuf {
        self.file(Stage::Pretrain, "pretrain", "ckpt")
    }

    pub fn augmented_path(&self) -> PathBuf {
        self.file(Stage::BuildData, "augmented", "jsonl")
    }

    pub fn datagen_report(&self, ext: &str) -> PathBuf {
        self.file(Stage::BuildData, "datagen-report", ext)
    }

    pub fn epochs_path(&self) -> PathBuf {
        self.file(Stage::Train, "epochs", "json")
    }

    pub fn train_log(&self) -> PathBuf {
        self.file(Stage::Train, "train-log", "jsonl")
    }

    pub fn epoch_ckpt(&self, epoch: usize) -> PathBuf {
        self.file(Stage::Train, &format!("epoch{epoch:03}"), "ckpt")
    }

    pub fn selection_path(&self) -> PathBuf {
        self.file(Stage::Select, "selection", "json")
    }

    pub fn predictions(&self, split: Split) -> PathBuf {
        self.file(Stage::Eval, &format!("predictions-{}", split.as_str()), "jsonl")
    }

    pub fn eval_report(&self, ext: &str) -> PathBuf {
        self.file(Stage::Eval, "eval-report", ext)
    }

    pub fn judge_report(&self, ext: &str) -> PathBuf {
        self.file(Stage::Judge, "judge-report", ext)
    }

    pub fn baseline_path(&self, m: BaselineMethod, ext: &str) -> PathBuf {
        self.file(Stage::Baseline(m), &format!("baseline-{}", m.as_str()), ext)
    }

    pub fn baseline_predictions(&self, m: BaselineMethod) -> PathBuf {
        self.file(Stage::Baseline(m), &format!("baseline-{}-predictions", m.as_str()), "jsonl")
    }

    pub fn report_path(&self, ext: &str) -> PathBuf {
        self.file(Stage::Report, "report", ext)
    }

    // shared loaders

    pub fn tokenizer(&self) -> Result<Tokenizer> {
        let words: Vec<String> = read_json(&self.tokenizer_path())?;
        Tokenizer::try_from(words).map_err(|_| anyhow::anyhow!("{}: invalid vocabulary", self.tokenizer_path().display()))
    }

    pub fn split(&self, split: Split) -> Result<Vec<Instance>> {
        read_jsonl(&self.split_path(split))
    }

    fn ctx<'a>(&'a self, tok: &'a Tokenizer, max_new: usize) -> EvalContext<'a> {
        EvalContext {
            tokenizer: tok,
            templates: &self.r.templates,
            map: &self.r.config.task.labels,
            max_new,
        }
    }

    fn chat(&self) -> Result<ChatClient> {
        match &self.r.config.endpoint {
            Some(e) => Ok(ChatClient::new(e)),
            None => bail!("remote source selected but the config has no [endpoint] section"),
        }
    }

    /// Vocabulary of the task plus every word of the configured templates.
    pub fn build_tokenizer(&self) -> Tokenizer {
        let map = &self.r.config.task.labels;
        let base = synth_tokenizer(&self.r.spec, map);
        let mut texts: Vec<String> = base.words().to_vec();
        for t in [&self.r.templates, &self.r.probability_templates] {
            texts.push(t.bundle("", map, &[]).text());
        }
        Tokenizer::from_texts(texts.iter().map(String::as_str))
    }

    // stages

    pub fn synth_gen(&self) -> Result<Outcome> {
        self.run_stage(Stage::SynthGen, &[], || {
            let c = &self.r.config;
            let sizes = [c.task.train_size, c.task.dev_size, c.task.test_size];
            let splits = gen_splits(&self.r.spec, sizes, self.r.seed_for("data"))?;
            let corpus = gen_pretrain_corpus(
                &self.r.spec,
                &c.task.labels,
                c.corpus.docs,
                c.corpus.format_ratio,
                self.r.seed_for("corpus"),
            )?;
            let tok = self.build_tokenizer();
            let unknown = corpus.iter().filter(|t| tok.coverage(t) < 1.0).count();
            if unknown > 0 {
                log::warn!("{unknown} corpus passages contain words outside the vocabulary");
            }
            let mut outputs = Vec::new();
            for (split, data) in [Split::Train, Split::Dev, Split::Test].into_iter().zip(&splits) {
                write_jsonl(&self.split_path(split), data)?;
                outputs.push(self.split_path(split));
            }
            let passages: Vec<Passage> = corpus.into_iter().map(|text| Passage { text }).collect();
            write_jsonl(&self.corpus_path(), &passages)?;
            write_json(&self.tokenizer_path(), &Vec::<String>::from(tok))?;
            outputs.extend([self.corpus_path(), self.tokenizer_path()]);
            Ok(outputs)
        })
    }

    pub fn pretrain(&self) -> Result<Outcome> {
        let inputs = [
            (self.corpus_path(), Stage::SynthGen),
            (self.tokenizer_path(), Stage::SynthGen),
        ];
        self.run_stage(Stage::Pretrain, &inputs, || {
            let tok = self.tokenizer()?;
            let c = &self.r.config;
            let mut mc = c.model.clone();
            mc.vocab_size = tok.vocab_size();
            let mut model = DualHeadModel::<f64>::new(mc, self.r.seed_for("init"))?;
            let max = model.config().max_seq_len;
            let passages: Vec<Passage> = read_jsonl(&self.corpus_path())?;
            let data: Vec<Example> = passages
                .iter()
                .map(|p| {
                    let mut t = tok.encode(&p.text);
                    t.truncate(max);
                    t
                })
                .filter(|t| t.len() >= 2)
                .map(Example::passage)
                .collect();
            let mut tc = c.pretrain.clone();
            tc.seed = self.r.seed_for("pretrain");
            let log_path = self.file(Stage::Pretrain, "pretrain-log", "jsonl");
            let _ = fs::remove_file(&log_path);
            let mut observer = |_: &DualHeadModel<f64>, s: &EpochStats| -> Result<EpochOutcome, TrainError> {
                log::info!("pretrain epoch {} loss {:.4}", s.epoch, s.train_loss.total);
                append_jsonl(&log_path, s).map_err(observer_err)?;
                Ok(EpochOutcome::default())
            };
            train(&mut model, &data, &tc, &mut observer)?;
            let meta = CheckpointMeta {
                epoch: 0,
                seed: c.seed,
                config_hash: self.r.hash(Stage::Pretrain),
            };
            checkpoint::save(&self.pretrain_ckpt(), &model, &meta)?;
            Ok(vec![self.pretrain_ckpt(), log_path])
        })
    }

    fn teacher(&self) -> Result<Box<dyn TeacherModel>> {
        let c = &self.r.config;
        Ok(match c.teacher.source {
            Source::Oracle => Box::new(SynthTeacher {
                teacher: OracleTeacher {
                    p_pos: c.teacher.p_pos,
                    p_neg: c.teacher.p_neg,
                    validity: c.teacher.validity,
                    seed: self.r.seed_for("teacher"),
                },
                spec: self.r.spec.clone(),
                map: c.task.labels.clone(),
            }),
            Source::Remote => {
                let mut t = ChatTeacher::new(self.chat()?, self.r.templates.clone(), c.task.labels.clone());
                t.temperature = c.teacher.temperature;
                t.max_tokens = c.teacher.max_tokens;
                Box::new(t)
            }
        })
    }

    pub fn build_data(&self) -> Result<Outcome> {
        let inputs = [
            (self.split_path(Split::Train), Stage::SynthGen),
            (self.tokenizer_path(), Stage::SynthGen),
        ];
        self.run_stage(Stage::BuildData, &inputs, || {
            let tok = self.tokenizer()?;
            let train_set = self.split(Split::Train)?;
            let mut teacher = self.teacher()?;
            let c = &self.r.config;
            let (kept, report, trials) = build_dataset(&train_set, teacher.as_mut(), &tok, &c.task.labels, &c.datagen);
            if kept.is_empty() {
                bail!("the teacher produced no usable explanation; check the teacher settings");
            }
            write_jsonl(&self.augmented_path(), &kept)?;
            let p = self.provenance(Stage::BuildData);
            let text = format!(
                "# run {} stage {} config {} seed {}\n{}",
                p.run,
                p.stage,
                p.config_hash,
                p.seed,
                report.render_table()
            );
            write_atomic(&self.datagen_report("txt"), text.as_bytes())?;
            write_json(&self.datagen_report("json"), &DataGenArtifact { provenance: p, report })?;
            let mut out = vec![self.augmented_path(), self.datagen_report("txt"), self.datagen_report("json")];
            if c.datagen.log_trials {
                let tp = self.file(Stage::BuildData, "trials", "jsonl");
                write_jsonl(&tp, &trials)?;
                out.push(tp);
            }
            Ok(out)
        })
    }

    pub fn train(&self) -> Result<Outcome> {
        let inputs = [
            (self.pretrain_ckpt(), Stage::Pretrain),
            (self.augmented_path(), Stage::BuildData),
            (self.split_path(Split::Dev), Stage::SynthGen),
            (self.tokenizer_path(), Stage::SynthGen),
        ];
        self.run_stage(Stage::Train, &inputs, || {
            let c = &self.r.config;
            let tok = self.tokenizer()?;
            let (mut model, _) = checkpoint::load::<f64>(&self.pretrain_ckpt())?;
            if !model.has_lora() && model.config().lora_rank > 0 {
                model.attach_lora(self.r.seed_for("lora"))?;
            }
            let max = model.config().max_seq_len;
            let map = &c.task.labels;
            let augmented: Vec<AugmentedInstance> = read_jsonl(&self.augmented_path())?;
            let data = augmented
                .iter()
                .map(|a| match c.train.mode {
                    TrainMode::ClsOnly => encode_prompt(&a.document, Some(a.label), &self.r.templates, map, &tok, max),
                    _ => encode_augmented(a, &self.r.templates, map, &tok, max),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let dev = self.split(Split::Dev)?;
            let dev_examples = dev
                .iter()
                .map(|i| encode_prompt(&i.document, Some(i.label), &self.r.templates, map, &tok, max))
                .collect::<Result<Vec<_>, _>>()?;
            let mut tc = c.train.clone();
            tc.seed = self.r.seed_for("train");
            let log_path = self.train_log();
            let _ = fs::remove_file(&log_path);
            let hash = self.r.hash(Stage::Train);
            let mut written = Vec::new();
            let mut observer = DevObserver {
                ctx: self.ctx(&tok, c.eval.max_new),
                dev: &dev,
                dev_examples: Some(&dev_examples),
                objective: Objective::cls_only(),
                on_epoch: |m: &DualHeadModel<f64>, s: &EpochStats, d: &DevMetrics| {
                    let path = self.epoch_ckpt(s.epoch);
                    let meta = CheckpointMeta {
                        epoch: s.epoch,
                        seed: c.seed,
                        config_hash: hash.clone(),
                    };
                    checkpoint::save(&path, m, &meta).map_err(observer_err)?;
                    let name = self.rel(&path);
                    let line = EpochLogLine {
                        epoch: s.epoch,
                        stats: s.clone(),
                        dev: d.clone(),
                        checkpoint: Some(name.clone()),
                    };
                    append_jsonl(&log_path, &line).map_err(observer_err)?;
                    log::info!(
                        "epoch {} loss {:.4} dev auroc {:?} kappa {:?} parsability {:?}",
                        s.epoch,
                        s.train_loss.total,
                        d.auroc_cls,
                        d.kappa,
                        d.parsability
                    );
                    written.push(path);
                    Ok(Some(name))
                },
            };
            let records = train(&mut model, &data, &tc, &mut observer)?;
            let artifact = EpochsArtifact {
                provenance: self.provenance(Stage::Train),
                mode: c.train.mode,
                records,
            };
            write_json(&self.epochs_path(), &artifact)?;
            written.extend([log_path, self.epochs_path()]);
            Ok(written)
        })
    }

    pub fn select(&self) -> Result<Outcome> {
        self.run_stage(Stage::Select, &[(self.epochs_path(), Stage::Train)], || {
            let epochs: EpochsArtifact = read_json(&self.epochs_path())?;
            let sel = select_checkpoint(&epochs.records)?;
            let checkpoint = epochs.records[sel.index]
                .checkpoint
                .clone()
                .context("selected epoch has no checkpoint")?;
            log::info!("selected epoch {} ({checkpoint})", sel.epoch);
            let artifact = SelectionArtifact {
                provenance: self.provenance(Stage::Select),
                epoch: sel.epoch,
                checkpoint,
                scores: sel.scores,
            };
            write_json(&self.selection_path(), &artifact)?;
            Ok(vec![self.selection_path()])
        })
    }

    pub fn eval(&self) -> Result<Outcome> {
        let inputs = [
            (self.selection_path(), Stage::Select),
            (self.split_path(Split::Dev), Stage::SynthGen),
            (self.split_path(Split::Test), Stage::SynthGen),
            (self.tokenizer_path(), Stage::SynthGen),
        ];
        self.run_stage(Stage::Eval, &inputs, || {
            let c = &self.r.config;
            let sel: SelectionArtifact = read_json(&self.selection_path())?;
            let ckpt = self.out.join(&sel.checkpoint);
            require(&ckpt, "train")?;
            let (model, header) = checkpoint::load::<f64>(&ckpt)?;
            if header.config_hash != self.r.hash(Stage::Train) {
                bail!(
                    "checkpoint {} was written by train config {}, expected {}",
                    ckpt.display(),
                    header.config_hash,
                    self.r.hash(Stage::Train)
                );
            }
            let tok = self.tokenizer()?;
            let ctx = self.ctx(&tok, c.eval.max_new);
            let dev_records = clsgen_records(&model, &ctx, &self.split(Split::Dev)?)?;
            let thresholds = match c.eval.threshold {
                ThresholdChoice::Tuned => tune_thresholds(&dev_records)?,
                ThresholdChoice::Default => Thresholds::default(),
            };
            let (test_records, report) = run_clsgen_eval(&model, &ctx, &self.split(Split::Test)?, &thresholds)?;
            write_jsonl(&self.predictions(Split::Dev), &dev_records)?;
            write_jsonl(&self.predictions(Split::Test), &test_records)?;
            let p = self.provenance(Stage::Eval);
            let text = format!(
                "# run {} stage {} config {} seed {} epoch {}\n{}",
                p.run,
                p.stage,
                p.config_hash,
                p.seed,
                sel.epoch,
                report.render_table()
            );
            write_atomic(&self.eval_report("txt"), text.as_bytes())?;
            let artifact = EvalArtifact {
                provenance: p,
                checkpoint: sel.checkpoint,
                epoch: sel.epoch,
                thresholds,
                report,
            };
            write_json(&self.eval_report("json"), &artifact)?;
            Ok(vec![
                self.predictions(Split::Dev),
                self.predictions(Split::Test),
                self.eval_report("txt"),
                self.eval_report("json"),
            ])
        })
    }

    pub fn judge(&self) -> Result<Outcome> {
        let inputs = [
            (self.predictions(Split::Test), Stage::Eval),
            (self.eval_report("json"), Stage::Eval),
        ];
        self.run_stage(Stage::Judge, &inputs, || {
            let c = &self.r.config;
            let records: Vec<PredictionRecord> = read_jsonl(&self.predictions(Split::Test))?;
            let eval: EvalArtifact = read_json(&self.eval_report("json"))?;
            let mut judge: Box<dyn Judge> = match c.teacher.source {
                Source::Oracle => Box::new(OracleJudge::new(&self.r.spec)),
                Source::Remote => Box::new(ChatJudge::new(
                    self.chat()?,
                    self.r.judge_templates.clone(),
                    c.task.labels.clone(),
                )),
            };
            let outcome = judge_consistency(&records, judge.as_mut(), c.judge.readability);
            if !outcome.failures.is_empty() {
                log::warn!(
                    "{} judge calls failed; coverage {:.3}",
                    outcome.failures.len(),
                    outcome.coverage
                );
            }
            let report = score_records(&records, &eval.thresholds, Some(&outcome))?;
            let p = self.provenance(Stage::Judge);
            let text = format!(
                "# run {} stage {} config {} seed {} judge {} coverage {:.4}\n{}",
                p.run,
                p.stage,
                p.config_hash,
                p.seed,
                outcome.judge,
                outcome.coverage,
                report.render_table()
            );
            write_atomic(&self.judge_report("txt"), text.as_bytes())?;
            write_json(
                &self.judge_report("json"),
                &JudgeArtifact {
                    provenance: p,
                    outcome,
                    report,
                },
            )?;
            Ok(vec![self.judge_report("txt"), self.judge_report("json")])
        })
    }

    pub fn baseline(&self, method: BaselineMethod) -> Result<Outcome> {
        let stage = Stage::Baseline(method);
        let mut inputs = vec![
            (self.split_path(Split::Test), Stage::SynthGen),
            (self.tokenizer_path(), Stage::SynthGen),
        ];
        if self.r.config.teacher.source == Source::Oracle {
            inputs.push((self.pretrain_ckpt(), Stage::Pretrain));
        }
        self.run_stage(stage, &inputs, || {
            let c = &self.r.config;
            let test = self.split(Split::Test)?;
            let tok = self.tokenizer()?;
            let local;
            let mut responder: Box<dyn Responder + '_> = match c.teacher.source {
                Source::Oracle => {
                    local = checkpoint::load::<f64>(&self.pretrain_ckpt())?.0;
                    Box::new(LocalResponder {
                        model: &local,
                        tokenizer: &tok,
                        decoding: Decoding::Sample {
                            temperature: c.baseline.temperature,
                        },
                        max_new: c.baseline.max_new,
                        seed: self.r.seed_for("baseline"),
                    })
                }
                Source::Remote => Box::new(ChatResponder {
                    chat: self.chat()?,
                    temperature: c.baseline.temperature,
                    max_tokens: c.baseline.max_new,
                }),
            };
            let map = &c.task.labels;
            let runs = c.baseline.runs;
            let (result, records) = match method {
                BaselineMethod::LabelPred => {
                    let (a, r) = run_label_prediction(responder.as_mut(), &test, &self.r.templates, map, runs)?;
                    (BaselineResult::Aggregate(a), r)
                }
                BaselineMethod::VerbProb => {
                    let (a, r) =
                        run_verbalized_probability(responder.as_mut(), &test, &self.r.probability_templates, map, runs)?;
                    (BaselineResult::Aggregate(a), r)
                }
                BaselineMethod::SelfConsistency => {
                    let (votes, r) = run_self_consistency(responder.as_mut(), &test, &self.r.templates, map, runs)?;
                    let aggregate = self_consistency_aggregate(&votes, test.len(), runs);
                    (BaselineResult::SelfConsistency { aggregate, votes }, r)
                }
            };
            let flat: Vec<PredictionRecord> = records.into_iter().flatten().collect();
            write_jsonl(&self.baseline_predictions(method), &flat)?;
            let artifact = BaselineArtifact {
                provenance: self.provenance(stage),
                method,
                responder: responder.describe(),
                result,
            };
            write_json(&self.baseline_path(method, "json"), &artifact)?;
            Ok(vec![self.baseline_predictions(method), self.baseline_path(method, "json")])
        })
    }

    pub fn report(&self) -> Result<Outcome> {
        let mut inputs = vec![(self.eval_report("json"), Stage::Eval)];
        for p in [self.judge_report("json")]
            .into_iter()
            .chain(BaselineMethod::ALL.map(|m| self.baseline_path(m, "json")))
        {
            if p.exists() {
                inputs.push((p, Stage::Report));
            }
        }
        self.run_stage(Stage::Report, &inputs, || {
            let eval: EvalArtifact = read_json(&self.eval_report("json"))?;
            let judge: Option<JudgeArtifact> = optional(&self.judge_report("json"))?;
            let mut baselines = Vec::new();
            for m in BaselineMethod::ALL {
                if let Some(b) = optional::<BaselineArtifact>(&self.baseline_path(m, "json"))? {
                    baselines.push(b);
                }
            }
            let tables = crate::report::Tables {
                provenance: self.provenance(Stage::Report),
                eval,
                judge,
                baselines,
            };
            write_atomic(&self.report_path("md"), tables.render().as_bytes())?;
            write_json(&self.report_path("json"), &tables)?;
            Ok(vec![self.report_path("md"), self.report_path("json")])
        })
    }
}

fn optional<T: serde::de::DeserializeOwned>(p: &Path) -> Result<Option<T>> {
    if p.exists() {
        Ok(Some(read_json(p)?))
    } else {
        Ok(None)
    }
}

/// Single-row aggregate for majority voting, so all methods share one
/// table layout.
pub fn self_consistency_aggregate(v: &SelfConsistencyResult, n: usize, runs: usize) -> AggregateResult {
    let one = |x: f64| {
        Some(dualhead_core::evalsuite::MeanStd {
            mean: x,
            std: 0.0,
            runs: 1,
        })
    };
    let mut metrics = BTreeMap::new();
    metrics.insert("auroc".to_string(), v.auroc.and_then(one));
    metrics.insert("f1".to_string(), one(v.prf.f1));
    metrics.insert("precision".to_string(), one(v.prf.precision));
    metrics.insert("recall".to_string(), one(v.prf.recall));
    metrics.insert("excl_f1".to_string(), one(v.prf_excluded.f1));
    metrics.insert("parsability".to_string(), one(v.evaluated as f64 / n as f64));
    AggregateResult {
        method: format!("self_consistency({runs} runs)"),
        runs,
        split_size: n,
        metrics,
        ledger: vec![dualhead_core::evalsuite::LedgerEntry {
            run: 0,
            metric: "majority".into(),
            evaluated: v.evaluated,
            excluded: v.excluded,
        }],
    }
}
