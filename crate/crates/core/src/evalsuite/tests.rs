use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::model::ModelConfig;
use crate::synth::{gen_dataset, oracle_explain, synth_tokenizer, OracleJudge, Split, SynthTaskSpec};
use crate::textproto::{render_target, GENERATION_PREFIX};

struct FnResponder<F>(F);

impl<F: FnMut(&str, &PromptBundle, usize) -> String> Responder for FnResponder<F> {
    fn respond(&mut self, id: &str, bundle: &PromptBundle, run: usize) -> Result<String, EvalError> {
        Ok((self.0)(id, bundle, run))
    }
    fn describe(&self) -> String {
        "mock".into()
    }
}

fn split(n: usize, prevalence: f64, seed: u64) -> (SynthTaskSpec, Vec<Instance>) {
    let spec = SynthTaskSpec::with_prevalence(prevalence);
    let data = gen_dataset(&spec, n, seed, Split::Test).unwrap();
    (spec, data)
}

fn gold_of(data: &[Instance]) -> BTreeMap<String, u8> {
    data.iter().map(|i| (i.id.clone(), i.label)).collect()
}

#[test]
fn vote_examples() {
    let mut votes = vec![Some(1); 6];
    votes.extend([Some(0), Some(0), Some(0), None]);
    let (f, m) = vote(&votes);
    assert!((f.unwrap() - 6.0 / 9.0).abs() < 1e-15);
    assert_eq!(m, Some(1));
    assert_eq!(vote(&[Some(1), Some(0)]), (Some(0.5), Some(0)));
    assert_eq!(vote(&[None; 10]), (None, None));
}

proptest! {
    #[test]
    fn vote_is_order_invariant(mut votes in prop::collection::vec(prop::option::of(0u8..2), 1..12), seed in any::<u64>()) {
        let before = vote(&votes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(votes.as_mut_slice(), &mut rng);
        prop_assert_eq!(before, vote(&votes));
    }
}

#[test]
fn label_prediction_with_gold_mock() {
    let (_, data) = split(60, 0.3, 1);
    let gold = gold_of(&data);
    let map = LabelMap::default();
    let m2 = map.clone();
    let mut r = FnResponder(move |id: &str, _: &PromptBundle, _| {
        format!("because\n\nClassification: {}\n\nEOG", m2.label_str(gold[id]))
    });
    let (agg, runs) = run_label_prediction(&mut r, &data, &PromptTemplates::synth(), &map, 10).unwrap();
    assert_eq!(agg.runs, 10);
    assert_eq!(runs.len(), 10);
    let f1 = agg.metrics["f1"].unwrap();
    assert_eq!((f1.mean, f1.std, f1.runs), (1.0, 0.0, 10));
    assert_eq!(agg.metrics["auroc"], None);
    for e in &agg.ledger {
        assert_eq!(e.evaluated + e.excluded, agg.split_size);
    }
}

#[test]
fn label_prediction_with_garbage_mock() {
    let (_, data) = split(40, 0.3, 2);
    let map = LabelMap::default();
    let mut r = FnResponder(|_: &str, _: &PromptBundle, _| "Pom Pomuppy Pom Pom".to_string());
    let (agg, _) = run_label_prediction(&mut r, &data, &PromptTemplates::synth(), &map, 3).unwrap();
    assert_eq!(agg.metrics["parsability"].unwrap().mean, 0.0);
    assert_eq!(agg.metrics["f1"].unwrap().mean, 0.0);
    assert_eq!(agg.metrics["recall"].unwrap().mean, 0.0);
    let excl = agg.ledger.iter().find(|e| e.metric == "excl_f1").unwrap();
    assert_eq!((excl.evaluated, excl.excluded), (0, 40));
}

fn noisy_mock(gold: BTreeMap<String, u8>, map: LabelMap, seed: u64, acc: f64, parse: f64) -> impl FnMut(&str, &PromptBundle, usize) -> String {
    move |id: &str, _: &PromptBundle, run: usize| {
        let mut rng = crate::rng::stream(seed, &[crate::rng::hash_str(id), run as u64]);
        if rng.random::<f64>() >= parse {
            return "no answer".into();
        }
        let y = gold[id];
        let y = if rng.random::<f64>() < acc { y } else { 1 - y };
        format!("x\n\nClassification: {}\n\nEOG", map.label_str(y))
    }
}

#[test]
fn seeded_runs_reproduce() {
    let (_, data) = split(50, 0.4, 3);
    let map = LabelMap::default();
    let run = |seed| {
        let mut r = FnResponder(noisy_mock(gold_of(&data), map.clone(), seed, 0.7, 0.9));
        run_label_prediction(&mut r, &data, &PromptTemplates::synth(), &map, 10).unwrap().0
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert!(a.metrics["f1"].unwrap().std > 0.0);
    assert_ne!(a, run(6));
}

#[test]
fn aggregate_std_is_zero_for_identical_runs() {
    let (_, data) = split(50, 0.4, 3);
    let map = LabelMap::default();
    let mut inner = noisy_mock(gold_of(&data), map.clone(), 9, 0.7, 0.9);
    // every run replays run 0
    let mut r = FnResponder(move |id: &str, b: &PromptBundle, _| inner(id, b, 0));
    let (agg, _) = run_label_prediction(&mut r, &data, &PromptTemplates::synth(), &map, 5).unwrap();
    for (name, v) in &agg.metrics {
        if let Some(v) = v {
            assert_eq!(v.std, 0.0, "{name}");
        }
    }
}

#[test]
fn verbalized_probability_mocks() {
    let (_, data) = split(80, 0.3, 4);
    let map = LabelMap::default();
    let gold = gold_of(&data);
    let g2 = gold.clone();
    let mut exact = FnResponder(move |id: &str, _: &PromptBundle, _| format!("Probability: {}", 100 * u32::from(g2[id])));
    let t = PromptTemplates::synth_probability();
    let (agg, _) = run_verbalized_probability(&mut exact, &data, &t, &map, 2).unwrap();
    assert_eq!(agg.metrics["auroc"].unwrap().mean, 1.0);
    assert_eq!(agg.metrics["f1"].unwrap().mean, 1.0);

    let mut flat = FnResponder(|_: &str, _: &PromptBundle, _| "Probability: 50".to_string());
    let (agg, _) = run_verbalized_probability(&mut flat, &data, &t, &map, 1).unwrap();
    assert_eq!(agg.metrics["auroc"].unwrap().mean, 0.5);

    // every fifth instance answers out of range
    let order: Vec<String> = data.iter().map(|i| i.id.clone()).collect();
    let mut bad = FnResponder(move |id: &str, _: &PromptBundle, _| {
        let pos = order.iter().position(|x| x == id).unwrap();
        if pos % 5 == 0 {
            "Probability: 150".into()
        } else {
            "Probability: 30".into()
        }
    });
    let (agg, _) = run_verbalized_probability(&mut bad, &data, &t, &map, 1).unwrap();
    assert_eq!(agg.metrics["parsability"].unwrap().mean, 1.0 - 16.0 / 80.0);
    let e = agg.ledger.iter().find(|e| e.metric == "auroc").unwrap();
    assert_eq!((e.evaluated, e.excluded), (64, 16));
}

#[test]
fn self_consistency_ledger_and_order() {
    let (_, data) = split(120, 0.3, 5);
    let map = LabelMap::default();
    let mut r = FnResponder(noisy_mock(gold_of(&data), map.clone(), 1, 0.7, 0.6));
    let (res, runs) = run_self_consistency(&mut r, &data, &PromptTemplates::synth(), &map, 10).unwrap();
    assert_eq!(res.evaluated + res.excluded, data.len());
    assert_eq!(res.vote_fraction.iter().filter(|v| v.is_none()).count(), res.excluded);
    for (i, n) in res.parsed_runs.iter().enumerate() {
        let counted = runs.iter().filter(|run| run[i].parsed.parsable).count();
        assert_eq!(*n, counted);
    }
    // reversing the run order gives the same votes
    let mut rev = FnResponder({
        let mut inner = noisy_mock(gold_of(&data), map.clone(), 1, 0.7, 0.6);
        move |id: &str, b: &PromptBundle, run: usize| inner(id, b, 9 - run)
    });
    let (res2, _) = run_self_consistency(&mut rev, &data, &PromptTemplates::synth(), &map, 10).unwrap();
    assert_eq!(res.vote_fraction, res2.vote_fraction);
    assert_eq!(res.majority, res2.majority);
    assert!(res.auroc.unwrap() > 0.8);
}

fn small_model(vocab: usize, seed: u64) -> DualHeadModel<f64> {
    let cfg = ModelConfig {
        vocab_size: vocab,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 64,
        cls_hidden_dim: 16,
        ..ModelConfig::default()
    };
    DualHeadModel::new(cfg, seed).unwrap()
}

#[test]
fn fresh_model_is_at_chance_on_permuted_labels() {
    let (spec, mut data) = split(1000, 0.5, 6);
    let mut labels: Vec<u8> = data.iter().map(|i| i.label).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(6));
    for (inst, y) in data.iter_mut().zip(labels) {
        inst.label = y;
    }
    let map = LabelMap::default();
    let tok = synth_tokenizer(&spec, &map);
    let templates = PromptTemplates::synth();
    let ctx = EvalContext {
        tokenizer: &tok,
        templates: &templates,
        map: &map,
        max_new: 1,
    };
    let model = small_model(tok.vocab_size(), 3);
    let tuned = Thresholds {
        f1: Some(0.0),
        kappa: None,
    };
    let (records, report) = run_clsgen_eval(&model, &ctx, &data, &tuned).unwrap();
    let a = report.auroc.unwrap();
    assert!((a - 0.5).abs() < 0.05, "{a}");
    // threshold 0 predicts every instance positive
    assert_eq!(report.tuned.as_ref().unwrap().recall, 1.0);
    let table = report.render_table();
    assert!(table.contains("Default F1") && table.contains("Threshold F1"));
    assert_eq!(records.len(), 1000);
    assert!(records.iter().all(|r| r.prob.is_some_and(|p| p > 0.0 && p < 1.0)));
}

#[test]
fn clsgen_prediction_matches_tape_forward() {
    let (spec, data) = split(5, 0.5, 7);
    let map = LabelMap::default();
    let tok = synth_tokenizer(&spec, &map);
    let templates = PromptTemplates::synth();
    let ctx = EvalContext {
        tokenizer: &tok,
        templates: &templates,
        map: &map,
        max_new: 4,
    };
    let model = small_model(tok.vocab_size(), 8);
    for inst in &data {
        let mut rng = crate::rng::stream(0, &[]);
        let rec = predict_clsgen(&model, &ctx, inst, Decoding::Greedy, &mut rng).unwrap();
        let tokens = ctx.prompt(&inst.document, 64).unwrap();
        let p = model.class_probability(&tokens, tokens.len()).unwrap();
        assert!((rec.prob.unwrap() - p).abs() < 1e-12);
        let mut rng = crate::rng::stream(0, &[]);
        let gen = model.generate(&tokens, 4, Decoding::Greedy, EOG, &mut rng).unwrap();
        assert_eq!(rec.text, tok.decode(&gen));
    }
}

fn record(id: usize, prob: f64, gold: u8, label: Option<u8>) -> PredictionRecord {
    PredictionRecord {
        id: format!("r{id}"),
        run: 0,
        gold: Some(gold),
        prob: Some(prob),
        text: String::new(),
        parsed: ParsedOutput {
            parsable: label.is_some(),
            label,
            ..ParsedOutput::default()
        },
    }
}

#[test]
fn label_flip_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let t = rng.random_range(0.2..0.8);
        let recs: Vec<PredictionRecord> = (0..40)
            .map(|i| {
                let mut p: f64 = rng.random();
                if (p - t).abs() < 1e-9 {
                    p = 0.0;
                }
                record(i, p, rng.random_range(0..2), Some(rng.random_range(0..2)))
            })
            .collect();
        let flipped: Vec<PredictionRecord> = recs
            .iter()
            .map(|r| {
                let mut f = r.clone();
                f.prob = r.prob.map(|p| 1.0 - p);
                f.gold = r.gold.map(|g| 1 - g);
                f
            })
            .collect();
        let th = Thresholds {
            f1: Some(t),
            kappa: None,
        };
        let a = score_records(&recs, &th, None).unwrap().tuned.unwrap();
        let b = score_records(
            &flipped,
            &Thresholds {
                f1: Some(1.0 - t),
                kappa: None,
            },
            None,
        )
        .unwrap()
        .tuned
        .unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
        for r in &recs {
            match (r.prob.unwrap() >= t, r.gold == Some(1)) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
        assert_eq!(a.precision, if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
        let npv = if tn + fn_ > 0.0 { tn / (tn + fn_) } else { 0.0 };
        let spec = if tn + fp > 0.0 { tn / (tn + fp) } else { 0.0 };
        assert!((b.precision - npv).abs() < 1e-12);
        assert!((b.recall - spec).abs() < 1e-12);
    }
}

#[test]
fn tuned_thresholds_maximise_dev_metrics() {
    let recs: Vec<PredictionRecord> = [(0.2, 0, Some(0)), (0.6, 1, Some(1)), (0.7, 1, Some(1)), (0.3, 0, None)]
        .iter()
        .enumerate()
        .map(|(i, &(p, g, l))| record(i, p, g, l))
        .collect();
    let th = tune_thresholds(&recs).unwrap();
    assert!((th.f1.unwrap() - 0.45).abs() < 1e-12);
    assert!(th.kappa.is_some());
    let dm = dev_metrics(&recs);
    assert_eq!(dm.auroc_cls, Some(1.0));
    assert_eq!(dm.auroc_align, Some(1.0));
    assert_eq!(dm.kappa, Some(1.0));
    assert_eq!(dm.parsability, Some(0.75));
}

fn oracle_records(spec: &SynthTaskSpec, data: &[Instance], map: &LabelMap) -> Vec<PredictionRecord> {
    data.iter()
        .map(|inst| {
            let text = render_target(&oracle_explain(spec, &inst.document, inst.label), inst.label, map);
            PredictionRecord {
                id: inst.id.clone(),
                run: 0,
                gold: Some(inst.label),
                prob: None,
                parsed: parse_classification(&text, map),
                text,
            }
        })
        .collect()
}

#[test]
fn oracle_judge_on_oracle_outputs() {
    let (spec, data) = split(200, 0.5, 11);
    let map = LabelMap::default();
    let recs = oracle_records(&spec, &data, &map);
    let mut judge = OracleJudge::new(&spec);
    let out = judge_consistency(&recs, &mut judge, true);
    assert_eq!(out.rli, Some(0.0));
    assert_eq!(out.rl_kappa, Some(1.0));
    assert_eq!(out.readability, Some(1.0));
    assert_eq!(out.coverage, 1.0);
    let report = score_records(&recs, &Thresholds::default(), Some(&out)).unwrap();
    assert_eq!(report.rli, Some(0.0));
    assert_eq!(report.judged, 200);
}

#[test]
fn shuffled_explanations_give_chance_inconsistency() {
    let (spec, data) = split(2000, 0.5, 12);
    let map = LabelMap::default();
    let mut recs = oracle_records(&spec, &data, &map);
    let mut expl: Vec<String> = recs.iter().map(|r| r.parsed.explanation.clone()).collect();
    rand::seq::SliceRandom::shuffle(expl.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(1));
    for (r, e) in recs.iter_mut().zip(expl) {
        r.parsed.explanation = e;
    }
    let out = judge_consistency(&recs, &mut OracleJudge::new(&spec), false);
    let rli = out.rli.unwrap();
    assert!((rli - 0.5).abs() < 0.04, "{rli}");
    assert_eq!(out.readability, None);
}

struct FlakyJudge(usize);

impl Judge for FlakyJudge {
    fn infer_label(&mut self, explanation: &str) -> Result<Option<u8>, EvalError> {
        self.0 += 1;
        if self.0.is_multiple_of(4) {
            return Err(EvalError::Transport("unreachable".into()));
        }
        Ok(crate::synth::judge_explanation(explanation))
    }
    fn readability(&mut self, _: &str) -> Result<Option<bool>, EvalError> {
        Ok(Some(true))
    }
    fn describe(&self) -> String {
        "flaky".into()
    }
}

#[test]
fn unreachable_judge_gives_partial_result() {
    let (spec, data) = split(100, 0.5, 13);
    let map = LabelMap::default();
    let recs = oracle_records(&spec, &data, &map);
    let out = judge_consistency(&recs, &mut FlakyJudge(0), false);
    assert_eq!(out.failures.len(), 25);
    assert_eq!(out.coverage, 0.75);
    assert_eq!(out.rli, Some(0.0));
}

struct EchoChat(Vec<(String, String)>, String);

impl ChatModel for EchoChat {
    fn complete(&mut self, system: &str, user: &str, _: f64, _: usize) -> Result<String, crate::datagen::TeacherError> {
        self.0.push((system.into(), user.into()));
        Ok(self.1.clone())
    }
    fn describe(&self) -> String {
        "echo".into()
    }
}

#[test]
fn chat_judge_parses_replies() {
    let map = LabelMap::default();
    let mut j = ChatJudge::new(
        EchoChat(Vec::new(), "Classification: 1:death".into()),
        crate::textproto::JudgeTemplates::default(),
        map.clone(),
    );
    assert_eq!(j.infer_label("findings x so risk high").unwrap(), Some(1));
    assert!(j.chat.0[0].1.contains("findings x so risk high"));
    assert!(j.chat.0[0].1.contains("Classification: 0:alive"));
    j.chat.1 = "Readability: UNREADABLE".into();
    assert_eq!(j.readability("t").unwrap(), Some(false));
    j.chat.1 = "unsure".into();
    assert_eq!(j.infer_label("t").unwrap(), None);
}

#[test]
fn chat_responder_sends_prompt_segments() {
    let map = LabelMap::default();
    let mut r = ChatResponder {
        chat: EchoChat(Vec::new(), "ok".into()),
        temperature: 0.7,
        max_tokens: 16,
    };
    let b = PromptTemplates::synth().bundle("f01 f02", &map, &[]);
    assert_eq!(r.respond("a", &b, 0).unwrap(), "ok");
    let (system, user) = &r.chat.0[0];
    assert_eq!(system, &b.system_prompt);
    assert!(user.contains("f01 f02") && user.ends_with(GENERATION_PREFIX));
}

#[test]
fn collapse_curves_cover_every_epoch() {
    let (spec, data) = split(16, 0.5, 14);
    let map = LabelMap::default();
    let tok = synth_tokenizer(&spec, &map);
    let templates = PromptTemplates::synth();
    let ctx = EvalContext {
        tokenizer: &tok,
        templates: &templates,
        map: &map,
        max_new: 6,
    };
    let mut model = small_model(tok.vocab_size(), 2);
    model.attach_lora(3).unwrap();
    let train_data: Vec<crate::training::Example> = data
        .iter()
        .map(|i| crate::training::encode_prompt(&i.document, Some(i.label), &templates, &map, &tok, 64).unwrap())
        .collect();
    let cfg = crate::training::TrainConfig {
        mode: crate::training::TrainMode::ClsOnly,
        lr: 1e-2,
        warmup_steps: 1,
        epochs: 3,
        micro_batch: 4,
        grad_accum: 1,
        ..crate::training::TrainConfig::default()
    };
    let curves = collapse_ablation(&mut model, &train_data, &data[..8], &ctx, &cfg).unwrap();
    assert_eq!(curves.epochs, vec![0, 1, 2, 3]);
    assert_eq!(curves.parsability.len(), 4);
    assert_eq!(curves.records.len(), 3);
    assert!(curves.records.iter().all(|r| r.dev.auroc_cls.is_some()));
}
