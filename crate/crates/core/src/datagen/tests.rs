use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use proptest::prelude::*;

use super::*;
use crate::synth::{gen_dataset, oracle_explain, synth_tokenizer};

fn setup(n: usize, prevalence: f64) -> (SynthTaskSpec, LabelMap, Tokenizer, Vec<Instance>) {
    let spec = SynthTaskSpec::with_prevalence(prevalence);
    let map = LabelMap::default();
    let tok = synth_tokenizer(&spec, &map);
    let data = gen_dataset(&spec, n, 21, Split::Train).unwrap();
    (spec, map, tok, data)
}

fn teacher(spec: &SynthTaskSpec, map: &LabelMap, p_pos: f64, p_neg: f64, v: f64) -> SynthTeacher {
    SynthTeacher {
        teacher: OracleTeacher {
            p_pos,
            p_neg,
            validity: v,
            seed: 5,
        },
        spec: spec.clone(),
        map: map.clone(),
    }
}

#[test]
fn perfect_teacher_keeps_everything_at_first_trial() {
    let (spec, map, tok, data) = setup(300, 0.3);
    let mut t = teacher(&spec, &map, 1.0, 1.0, 1.0);
    let (kept, report, _) = build_dataset(&data, &mut t, &tok, &map, &DataGenConfig::default());
    assert_eq!(kept.len(), 300);
    assert_eq!(report.retention(), 1.0);
    assert_eq!(report.trial_histogram, vec![300, 0, 0, 0, 0]);
    assert_eq!(report.teacher_calls, 300);
}

#[test]
fn always_wrong_teacher_keeps_nothing() {
    let (spec, map, tok, data) = setup(100, 0.3);
    let mut t = teacher(&spec, &map, 0.0, 0.0, 1.0);
    let cfg = DataGenConfig {
        k: 3,
        log_trials: true,
        ..DataGenConfig::default()
    };
    let (kept, report, logs) = build_dataset(&data, &mut t, &tok, &map, &cfg);
    assert!(kept.is_empty());
    assert_eq!(report.retention(), 0.0);
    assert_eq!(report.teacher_calls, 300);
    assert_eq!(logs.len(), 300);
    assert!(logs.iter().all(|l| l.outcome == TrialOutcome::WrongLabel));
    assert_eq!(report.negative.failed + report.positive.failed, 100);
}

#[test]
fn retention_matches_closed_form() {
    let (spec, map, tok, data) = setup(10_000, 0.3);
    let mut t = teacher(&spec, &map, 0.8, 0.8, 0.9);
    let (_, report, _) = build_dataset(&data, &mut t, &tok, &map, &DataGenConfig::default());
    let per_trial: f64 = 0.8 * 0.9;
    let expect = 1.0 - (1.0 - per_trial).powi(5);
    assert!((expect - 0.998_278_963_2).abs() < 1e-9);
    assert!((report.retention() - expect).abs() <= 0.005, "{}", report.retention());
}

#[test]
fn minority_heavy_failures_under_class_skew() {
    let (spec, map, tok, data) = setup(4000, 0.1);
    let mut t = teacher(&spec, &map, 0.5, 0.95, 0.9);
    let cfg = DataGenConfig {
        k: 2,
        ..DataGenConfig::default()
    };
    let (_, report, _) = build_dataset(&data, &mut t, &tok, &map, &cfg);
    let failed_pos = report.failed_positive_fraction().unwrap();
    assert!(failed_pos > report.input_prevalence(), "{failed_pos}");
    for c in [report.negative, report.positive] {
        assert_eq!(c.retained + c.failed, c.original);
    }
    let table = report.render_table();
    assert!(table.contains("Original dataset"));
    assert!(table.contains("Failed to generate"));
    assert!(table.contains(&format!("{:.1}%", 100.0 * report.input_prevalence())));
}

#[test]
fn retained_instances_replay() {
    let (spec, map, tok, data) = setup(500, 0.3);
    let mut t = teacher(&spec, &map, 0.6, 0.7, 0.7);
    let (kept, _, _) = build_dataset(&data, &mut t, &tok, &map, &DataGenConfig::default());
    assert!(!kept.is_empty());
    for a in &kept {
        let p = parse_classification(&a.teacher_output, &map);
        assert_eq!(p.label, Some(a.label));
        assert_eq!(p.explanation, a.explanation);
        assert!((1..=5).contains(&a.trial_index));
        assert_eq!(a.explanation, oracle_explain(&spec, &a.document, a.label));
    }
}

#[test]
fn validity_rules() {
    let (spec, map, tok, _) = setup(1, 0.3);
    let cfg = DataGenConfig::default();
    assert!(is_valid(&oracle_explain(&spec, "bp=high cough=yes", 0), &tok, &cfg));
    assert!(!is_valid("", &tok, &cfg));
    assert!(!is_valid("   \n ", &tok, &cfg));
    let long = vec!["risk"; 10_000].join(" ");
    assert!(!is_valid(&long, &tok, &cfg));
    assert!(!is_valid("risk high Classification: 1:death", &tok, &cfg));
    assert!(!is_valid("Pom Pomuppy Pom", &tok, &cfg));
    let _ = map;
}

struct Flaky {
    inner: SynthTeacher,
    fail_id: String,
    think: bool,
}

impl TeacherModel for Flaky {
    fn generate(&mut self, r: &TeacherRequest<'_>) -> Result<String, TeacherError> {
        if r.id == self.fail_id {
            return Err(TeacherError::Transport("connection refused".into()));
        }
        let out = self.inner.generate(r)?;
        Ok(if self.think {
            format!("<think>Classification: 0:alive maybe</think>\n{out}")
        } else {
            out
        })
    }

    fn describe(&self) -> String {
        "flaky".into()
    }
}

#[test]
fn transport_failure_marks_instance_and_continues() {
    let (spec, map, tok, data) = setup(20, 0.3);
    let mut t = Flaky {
        inner: teacher(&spec, &map, 1.0, 1.0, 1.0),
        fail_id: data[3].id.clone(),
        think: true,
    };
    let (kept, report, _) = build_dataset(&data, &mut t, &tok, &map, &DataGenConfig::default());
    assert_eq!(kept.len(), 19);
    assert_eq!(report.transport_failures.len(), 1);
    assert_eq!(report.transport_failures[0].0, data[3].id);
    assert!(report.transport_failures[0].1.contains("connection refused"));
    assert!(kept.iter().all(|a| !a.teacher_output.contains("<think>")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn retention_is_monotone_in_k(k in 1usize..6, p in 0.0f64..1.0, v in 0.0f64..1.0) {
        let (spec, map, tok, data) = setup(200, 0.3);
        let run = |k: usize| {
            let mut t = teacher(&spec, &map, p, p, v);
            let cfg = DataGenConfig { k, ..DataGenConfig::default() };
            build_dataset(&data, &mut t, &tok, &map, &cfg).1.retention()
        };
        prop_assert!(run(k) <= run(k + 1));
    }
}

#[test]
fn report_serialises() {
    let r = DataGenReport::default();
    assert_eq!(r.retention(), 0.0);
    assert_eq!(r.failed_positive_fraction(), None);
    let _: String = r.render_table();
}
