//! Run configuration (TOML), built-in profiles and per-stage hashes.
//!
//! Every stage has a hash over the config sections it reads plus the hashes
//! of the stages it consumes. Artifact file names carry that hash, so a
//! changed setting only invalidates the stages downstream of it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use dualhead_core::datagen::DataGenConfig;
use dualhead_core::model::ModelConfig;
use dualhead_core::rng::derive_seed;
use dualhead_core::synth::SynthTaskSpec;
use dualhead_core::textproto::{JudgeTemplates, LabelMap, PromptTemplates};
use dualhead_core::training::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chat::EndpointConfig;
use crate::io::sha256_hex;
use crate::templates::{load_judge_templates, load_prompt_templates};

pub const SMOKE: &str = include_str!("../configs/smoke.toml");
pub const PAPER_SHAPE: &str = include_str!("../configs/paper-shape.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Oracle,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdChoice {
    /// Fixed 0.5 only.
    Default,
    /// 0.5 plus thresholds tuned on the dev split.
    Tuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// TOML file holding a task spec; relative to the config file.
    pub spec_path: Option<PathBuf>,
    /// Inline task spec, used when no path is given.
    pub spec: Option<SynthTaskSpec>,
    /// Overrides the spec's prevalence.
    pub prevalence: Option<f64>,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub labels: LabelMap,
    /// Prompt template directory; built-in synth prompts when absent.
    pub templates_dir: Option<PathBuf>,
    pub probability_templates_dir: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            spec_path: None,
            spec: None,
            prevalence: None,
            train_size: 1000,
            dev_size: 200,
            test_size: 500,
            labels: LabelMap::default(),
            templates_dir: None,
            probability_templates_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub docs: usize,
    /// Fraction of passages in full prompt-plus-answer format.
    pub format_ratio: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            docs: 4000,
            format_ratio: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub source: Source,
    /// Oracle label accuracy on positive and negative instances.
    pub p_pos: f64,
    pub p_neg: f64,
    /// Oracle probability of a well-formed output.
    pub validity: f64,
    /// Remote sampling settings.
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            source: Source::Oracle,
            p_pos: 0.9,
            p_neg: 0.9,
            validity: 0.95,
            temperature: 0.7,
            max_tokens: 384,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Generation budget in tokens.
    pub max_new: usize,
    pub threshold: ThresholdChoice,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_new: 32,
            threshold: ThresholdChoice::Tuned,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub runs: usize,
    pub temperature: f64,
    pub max_new: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            temperature: 0.7,
            max_new: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub readability: bool,
    pub templates_dir: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            readability: true,
            templates_dir: None,
        }
    }
}

/// Top-level run configuration. `seed` drives every random stream; the
/// `seed` fields inside the training sections are replaced by derived
/// values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: TaskConfig,
    pub corpus: CorpusConfig,
    /// `vocab_size` is taken from the tokenizer.
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub datagen: DataGenConfig,
    pub teacher: TeacherConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub baseline: BaselineConfig,
    pub judge: JudgeConfig,
    pub endpoint: Option<EndpointConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 0,
            out_dir: PathBuf::from("runs"),
            task: TaskConfig::default(),
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig {
                mode: TrainMode::LmPretrain,
                base_frozen: false,
                ..TrainConfig::default()
            },
            datagen: DataGenConfig::default(),
            teacher: TeacherConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            baseline: BaselineConfig::default(),
            judge: JudgeConfig::default(),
            endpoint: None,
        }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub teacher: Option<Source>,
    pub threshold: Option<ThresholdChoice>,
    pub runs: Option<usize>,
    pub mode: Option<TrainMode>,
}

/// Baseline prompting methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    LabelPred,
    VerbProb,
    SelfConsistency,
}

impl BaselineMethod {
    pub const ALL: [Self; 3] = [Self::LabelPred, Self::VerbProb, Self::SelfConsistency];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LabelPred => "label-pred",
            Self::VerbProb => "verb-prob",
            Self::SelfConsistency => "self-consistency",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    SynthGen,
    Pretrain,
    BuildData,
    Train,
    Select,
    Eval,
    Judge,
    Baseline(BaselineMethod),
    Report,
}

impl Stage {
    pub fn name(self) -> String {
        match self {
            Self::SynthGen => "synth-gen".into(),
            Self::Pretrain => "pretrain".into(),
            Self::BuildData => "build-data".into(),
            Self::Train => "train".into(),
            Self::Select => "select".into(),
            Self::Eval => "eval".into(),
            Self::Judge => "judge".into(),
            Self::Baseline(m) => format!("baseline-{}", m.as_str()),
            Self::Report => "report".into(),
        }
    }

    /// Subcommand that produces this stage's artifacts.
    pub fn command(self) -> &'static str {
        match self {
            Self::SynthGen => "synth-gen",
            Self::Pretrain => "pretrain",
            Self::BuildData => "build-data",
            Self::Train => "train",
            Self::Select => "select",
            Self::Eval => "eval",
            Self::Judge => "judge",
            Self::Baseline(_) => "baseline",
            Self::Report => "report",
        }
    }
}

/// A loaded configuration with everything it references read in.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub spec: SynthTaskSpec,
    pub templates: PromptTemplates,
    pub probability_templates: PromptTemplates,
    pub judge_templates: JudgeTemplates,
}

fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "smoke" => Some(SMOKE),
        "paper-shape" => Some(PAPER_SHAPE),
        _ => None,
    }
}

pub fn parse(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| anyhow::anyhow!("config schema violation: {e}"))
}

impl Resolved {
    /// Loads `path`, or a built-in profile (`smoke`, `paper-shape`) when no
    /// such file exists, and applies `overrides`.
    pub fn load(path: &str, overrides: &Overrides) -> Result<Self> {
        let p = Path::new(path);
        let (text, base) = if p.exists() {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            (text, p.parent().map(Path::to_path_buf).unwrap_or_default())
        } else if let Some(t) = builtin(path) {
            (t.to_string(), PathBuf::from("."))
        } else {
            bail!("config {path} not found (built-in profiles: smoke, paper-shape)");
        };
        let mut config = parse(&text).with_context(|| format!("in {path}"))?;
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(o) = &overrides.out {
            config.out_dir = o.clone();
        }
        if let Some(t) = overrides.teacher {
            config.teacher.source = t;
        }
        if let Some(t) = overrides.threshold {
            config.eval.threshold = t;
        }
        if let Some(r) = overrides.runs {
            config.baseline.runs = r;
        }
        if let Some(m) = overrides.mode {
            config.train.mode = m;
        }
        Self::resolve(config, &base)
    }

    pub fn resolve(config: RunConfig, base: &Path) -> Result<Self> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut spec = match (&config.task.spec_path, &config.task.spec) {
            (Some(_), Some(_)) => bail!("task.spec_path and task.spec are mutually exclusive"),
            (Some(p), None) => {
                let p = at(p);
                let text = fs::read_to_string(&p).with_context(|| format!("task spec {} does not exist", p.display()))?;
                toml::from_str(&text).map_err(|e| anyhow::anyhow!("task spec {}: {e}", p.display()))?
            }
            (None, Some(s)) => s.clone(),
            (None, None) => SynthTaskSpec::default(),
        };
        if let Some(pr) = config.task.prevalence {
            spec.prevalence = pr;
        }
        spec.validate().map_err(|e| anyhow::anyhow!("task spec: {e}"))?;
        config.task.labels.validate().map_err(|e| anyhow::anyhow!("task.labels: {e}"))?;
        config.model.validate().map_err(|e| anyhow::anyhow!("model: {e}"))?;
        config.pretrain.validate().map_err(|e| anyhow::anyhow!("pretrain: {e}"))?;
        config.train.validate().map_err(|e| anyhow::anyhow!("train: {e}"))?;
        ensure!(config.pretrain.mode == TrainMode::LmPretrain, "pretrain.mode must be lm_pretrain");
        ensure!(config.train.mode != TrainMode::LmPretrain, "train.mode must be joint or cls_only");
        ensure!(config.datagen.k >= 1, "datagen.k must be at least 1");
        ensure!(
            config.task.train_size > 0 && config.task.dev_size > 0 && config.task.test_size > 0,
            "task sizes must be positive"
        );
        ensure!(config.baseline.runs >= 1, "baseline.runs must be at least 1");
        ensure!(config.eval.max_new >= 1, "eval.max_new must be at least 1");
        for (name, p) in [
            ("teacher.p_pos", config.teacher.p_pos),
            ("teacher.p_neg", config.teacher.p_neg),
            ("teacher.validity", config.teacher.validity),
        ] {
            ensure!((0.0..=1.0).contains(&p), "{name} must lie in [0, 1]");
        }
        if config.teacher.source == Source::Remote {
            ensure!(
                config.endpoint.is_some(),
                "teacher.source = remote needs an [endpoint] section with base_url and model"
            );
        }
        let templates = match &config.task.templates_dir {
            Some(d) => load_prompt_templates(&at(d))?,
            None => PromptTemplates::synth(),
        };
        let probability_templates = match &config.task.probability_templates_dir {
            Some(d) => load_prompt_templates(&at(d))?,
            None => PromptTemplates::synth_probability(),
        };
        let judge_templates = match &config.judge.templates_dir {
            Some(d) => load_judge_templates(&at(d))?,
            None => JudgeTemplates::default(),
        };
        Ok(Self {
            config,
            spec,
            templates,
            probability_templates,
            judge_templates,
        })
    }

    /// Seed for one named random stream of this run.
    pub fn seed_for(&self, tag: &str) -> u64 {
        derive_seed(self.config.seed, &[dualhead_core::rng::hash_str(tag)])
    }

    fn remote_identity(&self) -> serde_json::Value {
        match (self.config.teacher.source, &self.config.endpoint) {
            (Source::Remote, Some(e)) => json!({"base_url": e.base_url, "model": e.model}),
            _ => json!("oracle"),
        }
    }

    /// Hash of everything that determines `stage`'s outputs, as 12 hex
    /// digits.
    pub fn hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let value = match stage {
            Stage::SynthGen => json!({
                "seed": c.seed,
                "spec": self.spec,
                "task": {
                    "sizes": [c.task.train_size, c.task.dev_size, c.task.test_size],
                    "labels": c.task.labels,
                },
                "templates": [self.templates, self.probability_templates],
                "corpus": c.corpus,
            }),
            Stage::Pretrain => json!({
                "up": self.hash(Stage::SynthGen),
                "model": c.model,
                "pretrain": c.pretrain,
            }),
            Stage::BuildData => json!({
                "up": self.hash(Stage::SynthGen),
                "datagen": c.datagen,
                "teacher": c.teacher,
                "remote": self.remote_identity(),
            }),
            Stage::Train => json!({
                "up": [self.hash(Stage::Pretrain), self.hash(Stage::BuildData)],
                "train": c.train,
                "max_new": c.eval.max_new,
            }),
            Stage::Select => json!({"up": self.hash(Stage::Train)}),
            Stage::Eval => json!({"up": self.hash(Stage::Select), "eval": c.eval}),
            Stage::Judge => json!({
                "up": self.hash(Stage::Eval),
                "judge": c.judge.readability,
                "templates": self.judge_templates,
                "remote": self.remote_identity(),
            }),
            Stage::Baseline(m) => json!({
                "up": self.hash(Stage::Pretrain),
                "method": m.as_str(),
                "baseline": c.baseline,
                "source": c.teacher.source,
                "remote": self.remote_identity(),
            }),
            Stage::Report => json!({
                "up": [self.hash(Stage::Eval), self.hash(Stage::Judge)],
                "baselines": BaselineMethod::ALL.map(|m| self.hash(Stage::Baseline(m))),
            }),
        };
        let tagged = json!({"stage": stage.name(), "v": value});
        sha256_hex(tagged.to_string().as_bytes())[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_profiles_parse() {
        for name in ["smoke", "paper-shape"] {
            let r = Resolved::load(name, &Overrides::default()).unwrap();
            assert_eq!(r.config.name, name);
        }
        let full = Resolved::load("paper-shape", &Overrides::default()).unwrap();
        assert!((full.spec.prevalence - 0.04).abs() < 1e-12);
        assert_eq!(full.config.datagen.k, 5);
        assert_eq!(full.config.train.epochs, 20);
        assert_eq!(full.config.train.effective_batch(), 8);
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let e = parse("[train]\nlearning_rate = 1.0\n").unwrap_err();
        assert!(format!("{e}").contains("schema"), "{e}");
        assert!(parse("bogus = 1\n").is_err());
    }

    #[test]
    fn remote_needs_endpoint() {
        let o = Overrides {
            teacher: Some(Source::Remote),
            ..Overrides::default()
        };
        let e = Resolved::load("smoke", &o).unwrap_err();
        assert!(format!("{e}").contains("[endpoint]"));
    }

    #[test]
    fn missing_spec_path_is_reported() {
        let mut c = parse(SMOKE).unwrap();
        c.task.spec_path = Some("nope/spec.toml".into());
        let e = Resolved::resolve(c, Path::new(".")).unwrap_err();
        assert!(format!("{e:#}").contains("does not exist"));
    }

    #[test]
    fn hashes_track_only_upstream_settings() {
        let a = Resolved::load("smoke", &Overrides::default()).unwrap();
        let mut c = a.config.clone();
        c.eval.threshold = ThresholdChoice::Default;
        let b = Resolved::resolve(c, Path::new(".")).unwrap();
        for s in [Stage::SynthGen, Stage::Pretrain, Stage::BuildData, Stage::Train, Stage::Select] {
            assert_eq!(a.hash(s), b.hash(s));
        }
        assert_ne!(a.hash(Stage::Eval), b.hash(Stage::Eval));
        assert_ne!(a.hash(Stage::Report), b.hash(Stage::Report));

        let seeded = Resolved::load(
            "smoke",
            &Overrides {
                seed: Some(5),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_ne!(a.hash(Stage::SynthGen), seeded.hash(Stage::SynthGen));
        let moved = Resolved::load(
            "smoke",
            &Overrides {
                out: Some("elsewhere".into()),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(a.hash(Stage::Report), moved.hash(Stage::Report));
    }
}
