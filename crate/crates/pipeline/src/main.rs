use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use dualhead::{BaselineMethod, Overrides, Pipeline, Resolved, Source, ThresholdChoice};
use dualhead_core::training::TrainMode;

#[derive(Parser)]
#[command(name = "dualhead", version, about = "Joint classification and rationale generation pipeline")]
struct Cli {
    /// Run config file, or a built-in profile name (smoke, paper-shape).
    #[arg(long, global = true, default_value = "smoke")]
    config: String,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Teacher, judge and baseline source.
    #[arg(long, global = true, value_enum)]
    teacher: Option<Source>,
    /// Threshold rows reported by `eval`.
    #[arg(long, global = true, value_enum)]
    threshold: Option<ThresholdChoice>,
    /// Number of baseline runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Fine-tuning objective.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Rerun stages even when their outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Joint,
    ClsOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    LabelPred,
    VerbProb,
    SelfConsistency,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train, dev and test splits, the pretraining corpus and the vocabulary.
    SynthGen,
    /// Language-model pretraining on the corpus.
    Pretrain,
    /// Explanation-augmented training data by rejection sampling.
    BuildData,
    /// Fine-tune with per-epoch checkpoints and a training log.
    Train,
    /// Choose the best epoch by quality score.
    Select,
    /// Score the selected checkpoint on the test split.
    Eval,
    /// Inference-only prompting baselines.
    Baseline {
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
    },
    /// Rationale-label consistency and readability of the evaluated outputs.
    Judge,
    /// Aggregate tables from every available result.
    Report,
    /// Every stage in order.
    All,
    /// Write the built-in prompt templates as plain-text files.
    Templates {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print the resolved config and its stage hashes.
    Show,
}

fn methods(m: MethodArg) -> Vec<BaselineMethod> {
    match m {
        MethodArg::LabelPred => vec![BaselineMethod::LabelPred],
        MethodArg::VerbProb => vec![BaselineMethod::VerbProb],
        MethodArg::SelfConsistency => vec![BaselineMethod::SelfConsistency],
        MethodArg::All => BaselineMethod::ALL.to_vec(),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Templates { dir } = &cli.command {
        return dualhead::templates::export_builtin(dir);
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        teacher: cli.teacher,
        threshold: cli.threshold,
        runs: cli.runs,
        mode: cli.mode.map(|m| match m {
            Mode::Joint => TrainMode::Joint,
            Mode::ClsOnly => TrainMode::ClsOnly,
        }),
    };
    let p = Pipeline::new(Resolved::load(&cli.config, &overrides)?, cli.force);
    match cli.command {
        Command::SynthGen => p.synth_gen().map(drop),
        Command::Pretrain => p.pretrain().map(drop),
        Command::BuildData => p.build_data().map(drop),
        Command::Train => p.train().map(drop),
        Command::Select => p.select().map(drop),
        Command::Eval => p.eval().map(drop),
        Command::Baseline { method } => methods(method).into_iter().try_for_each(|m| p.baseline(m).map(drop)),
        Command::Judge => p.judge().map(drop),
        Command::Report => {
            p.report()?;
            print!("{}", std::fs::read_to_string(p.report_path("md"))?);
            Ok(())
        }
        Command::All => {
            p.synth_gen()?;
            p.pretrain()?;
            p.build_data()?;
            p.train()?;
            p.select()?;
            p.eval()?;
            p.judge()?;
            for m in BaselineMethod::ALL {
                p.baseline(m)?;
            }
            p.report()?;
            print!("{}", std::fs::read_to_string(p.report_path("md"))?);
            Ok(())
        }
        Command::Templates { .. } => unreachable!(),
        Command::Show => {
            println!("{}", toml::to_string(&p.r.config)?);
            for s in [
                dualhead::Stage::SynthGen,
                dualhead::Stage::Pretrain,
                dualhead::Stage::BuildData,
                dualhead::Stage::Train,
                dualhead::Stage::Select,
                dualhead::Stage::Eval,
                dualhead::Stage::Judge,
                dualhead::Stage::Report,
            ] {
                println!("# {} {}", s.name(), p.r.hash(s));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
