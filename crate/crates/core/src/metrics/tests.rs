use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::rng::ChaCha8Rng;

fn some(v: &[u8]) -> Vec<Option<u8>> {
    v.iter().map(|&x| Some(x)).collect()
}

/// Pair counting over every positive-negative pair.
fn auroc_brute(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn kappa_direct(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as f64;
    let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|&&x| x == 1).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x == 1).count() as f64 / n;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    (po - pe) / (1.0 - pe)
}

fn f1_naive(scores: &[f64], gold: &[u8], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&s, &g) in scores.iter().zip(gold) {
        match (s >= t, g == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

fn random_fixture(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<u8>) {
    loop {
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / f64::from(levels)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}

#[test]
fn auroc_examples() {
    let s = [0.1, 0.4, 0.35, 0.8];
    assert_eq!(auroc(&s, &some(&[0, 0, 1, 1])).unwrap(), 0.75);
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &some(&[0, 0, 1, 1])).unwrap(), 1.0);
    assert_eq!(auroc(&[0.5; 6], &some(&[0, 1, 0, 1, 1, 0])).unwrap(), 0.5);
    assert_eq!(auroc(&[0.1, 0.2], &some(&[1, 1])), Err(MetricError::SingleClass));
    assert_eq!(auroc(&[0.1], &[None]), Err(MetricError::Empty));
    assert_eq!(auroc(&[0.1], &[]), Err(MetricError::LengthMismatch(1, 0)));
    // missing labels are dropped pairwise
    assert_eq!(auroc(&[0.1, 0.9, 0.0], &[Some(0), Some(1), None]).unwrap(), 1.0);
}

#[test]
fn auroc_agrees_with_pair_counting_and_trapezoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..300 {
        let (s, l) = random_fixture(&mut rng, 2 + i % 60, 1 + (i as u32 % 13));
        let a = auroc(&s, &some(&l)).unwrap();
        assert!((a - auroc_brute(&s, &l)).abs() < 1e-12);
        assert!((a - auroc_trapezoid(&s, &some(&l)).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn prf_examples() {
    let gold = some(&[1, 0, 1, 0]);
    let p = precision_recall_f1(&gold, &gold, UnparsablePolicy::AsWrong).unwrap();
    assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
    let p = precision_recall_f1(&some(&[1, 1, 0, 0]), &some(&[1, 0, 1, 0]), UnparsablePolicy::AsWrong).unwrap();
    assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
    let p = precision_recall_f1(&some(&[0, 0]), &some(&[0, 0]), UnparsablePolicy::AsWrong).unwrap();
    assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
}

#[test]
fn unparsable_policies() {
    let pred = [Some(1), None, None, Some(0)];
    let gold = some(&[1, 1, 0, 0]);
    let c = confusion(&pred, &gold, UnparsablePolicy::AsWrong).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_, c.tn, c.unparsable_counted), (1, 0, 1, 1, 2));
    assert_eq!(c.prf().recall, 0.5);
    let c = confusion(&pred, &gold, UnparsablePolicy::Exclude).unwrap();
    assert_eq!((c.tp, c.fn_, c.excluded), (1, 0, 2));
    assert_eq!(c.prf().recall, 1.0);
}

#[test]
fn tune_threshold_examples() {
    let (t, v) = tune_threshold(&[0.2, 0.6, 0.7], &some(&[0, 1, 1]), Objective::F1).unwrap();
    assert!((t - 0.4).abs() < 1e-15);
    assert_eq!(v, 1.0);
    let (t, v) = tune_threshold(&[0.2, 0.6, 0.7], &some(&[1, 1, 1]), Objective::F1).unwrap();
    assert_eq!((t, v), (0.0, 1.0));
    assert_eq!(tune_threshold(&[], &[], Objective::F1), Err(MetricError::Empty));
}

#[test]
fn tune_threshold_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let (s, l) = random_fixture(&mut rng, 2 + i % 80, 2 + (i as u32 % 20));
        let (t, v) = tune_threshold(&s, &some(&l), Objective::F1).unwrap();
        let cands = threshold_candidates(&s);
        let best = cands.iter().map(|&c| f1_naive(&s, &l, c)).fold(f64::MIN, f64::max);
        let first = cands.iter().copied().find(|&c| f1_naive(&s, &l, c) == best).unwrap();
        assert_eq!(v, best);
        assert_eq!(t, first);
        let (tk, vk) = tune_threshold(&s, &some(&l), Objective::Kappa).unwrap();
        for &c in &cands {
            let pred: Vec<u8> = s.iter().map(|&x| u8::from(x >= c)).collect();
            let k = cohens_kappa(&some(&pred), &some(&l)).unwrap();
            assert!(k <= vk);
            if c < tk {
                assert!(k < vk);
            }
        }
    }
}

#[test]
fn kappa_examples() {
    assert_eq!(cohens_kappa(&some(&[1, 0, 1]), &some(&[1, 0, 1])).unwrap(), 1.0);
    assert_eq!(cohens_kappa(&some(&[1, 1, 0, 0]), &some(&[1, 0, 0, 0])).unwrap(), 0.5);
    assert_eq!(cohens_kappa(&some(&[1, 1, 0, 0]), &some(&[0, 0, 1, 1])).unwrap(), -1.0);
    // chance agreement of one
    assert_eq!(cohens_kappa(&some(&[1, 1]), &some(&[1, 1])).unwrap(), 1.0);
    assert_eq!(cohens_kappa(&[None], &[Some(1)]), Err(MetricError::Empty));
}

#[test]
fn kappa_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..300 {
        let n = 2 + i % 50;
        let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let k = cohens_kappa(&some(&a), &some(&b)).unwrap();
        let d = kappa_direct(&a, &b);
        if d.is_finite() {
            assert!((k - d).abs() < 1e-12, "{k} {d}");
        }
        assert_eq!(k, cohens_kappa(&some(&b), &some(&a)).unwrap());
    }
}

#[test]
fn alignment_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
    let thr = apply_threshold(&s, 0.5);
    assert_eq!(auroc_alignment(&s, &thr).unwrap(), 1.0);
    let random: Vec<Option<u8>> = (0..10_000).map(|_| Some(rng.random_range(0..2))).collect();
    let a = auroc_alignment(&s, &random).unwrap();
    assert!((a - 0.5).abs() < 0.02, "{a}");
    assert_eq!(a.to_bits(), auroc(&s, &random).unwrap().to_bits());
}

#[test]
fn rationale_metrics_examples() {
    let x = some(&[1, 0, 1, 0, 1, 0, 1, 0, 1, 0]);
    assert_eq!(rationale_label_metrics(&x, &x).unwrap(), (0.0, 1.0));
    let mut y = x.clone();
    y[0] = Some(0);
    assert_eq!(rationale_label_metrics(&x, &y).unwrap().0, 0.1);
    let z = vec![None; 10];
    assert_eq!(rationale_label_metrics(&x, &z), Err(MetricError::Empty));
}

#[test]
fn parsability_examples() {
    assert_eq!(parsability(&[true, true]).unwrap(), 1.0);
    assert_eq!(parsability(&[true, false]).unwrap(), 0.5);
    assert_eq!(parsability(&[]), Err(MetricError::Empty));
    let outputs = ["Pom Pomuppy Pom Pom", "x\n\nClassification: 0:alive\n\nEOG"];
    let map = crate::textproto::LabelMap::default();
    let flags: Vec<bool> = outputs
        .iter()
        .map(|o| crate::textproto::parse_classification(o, &map).parsable)
        .collect();
    assert_eq!(parsability(&flags).unwrap(), 0.5);
    assert_eq!(readability_rate(&[Some(true), None, Some(false)]).unwrap(), 0.5);
}

#[test]
fn spearman_bands_and_stats() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
    assert_eq!(landis_koch(0.9), "almost perfect");
    assert_eq!(landis_koch(0.5), "moderate");
    assert_eq!(landis_koch(-0.1), "poor");
    assert_eq!(mean_std(&[0.1; 10]), Some((0.1, 0.0)));
    let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
    assert_eq!(m, 2.0);
    assert!((s - core::f64::consts::SQRT_2).abs() < 1e-15);
    assert_eq!(mean_std(&[]), None);
}

#[test]
fn report_builds_and_reconciles() {
    let gold = some(&[1, 0, 1, 0, 1, 0]);
    let probs = [0.9, 0.1, 0.8, 0.4, 0.3, 0.2];
    let verbalized = [Some(1), Some(0), Some(1), None, Some(0), Some(0)];
    let parsable: Vec<bool> = verbalized.iter().map(Option::is_some).collect();
    let inferred = verbalized;
    let r = MetricReport::build(&ReportInputs {
        gold: &gold,
        probs: Some(&probs),
        verbalized: &verbalized,
        parsable: &parsable,
        inferred: Some(&inferred),
        readable: None,
        tuned_f1_threshold: Some(0.25),
        tuned_kappa_threshold: None,
    })
    .unwrap();
    assert_eq!(r.n, 6);
    assert_eq!(r.n_parsable, 5);
    assert_eq!(r.alignment_excluded + r.n_parsable, r.n);
    assert_eq!(r.auroc, Some(auroc(&probs, &gold).unwrap()));
    assert_eq!(r.auroc_alignment, Some(1.0));
    assert_eq!(r.rli, Some(0.0));
    assert_eq!(r.default.as_ref().unwrap().kappa, Some(1.0));
    assert_eq!(r.tuned.as_ref().unwrap().recall, 1.0);
    assert!(r.render_table().contains("AUROC-Alignment"));
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_maps(
        raw in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..60),
        a in 0.1f64..5.0,
        b in -3.0f64..3.0,
    ) {
        let labels: Vec<Option<u8>> = raw.iter().map(|r| Some(r.1)).collect();
        prop_assume!(labels.contains(&Some(0)) && labels.contains(&Some(1)));
        let s: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let t: Vec<f64> = s.iter().map(|&x| libm_exp(a * x) + b).collect();
        let u: Vec<f64> = s.iter().map(|&x| x * x * x).collect();
        let base = auroc(&s, &labels).unwrap();
        prop_assert_eq!(base, auroc(&t, &labels).unwrap());
        prop_assert_eq!(base, auroc(&u, &labels).unwrap());
    }

    #[test]
    fn auroc_complement_sums_to_one(raw in prop::collection::btree_map(0u32..1_000_000, 0u8..2, 2..60)) {
        let s: Vec<f64> = raw.keys().map(|&k| f64::from(k) / 1e6).collect();
        let labels: Vec<Option<u8>> = raw.values().map(|&l| Some(l)).collect();
        prop_assume!(labels.contains(&Some(0)) && labels.contains(&Some(1)));
        let flipped: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
        let total = auroc(&s, &labels).unwrap() + auroc(&flipped, &labels).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_self_and_symmetry(a in prop::collection::vec(0u8..2, 1..50), b in prop::collection::vec(0u8..2, 1..50)) {
        let n = a.len().min(b.len());
        let (a, b) = (some(&a[..n]), some(&b[..n]));
        if a.contains(&Some(0)) && a.contains(&Some(1)) {
            prop_assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        }
        prop_assert_eq!(cohens_kappa(&a, &b).unwrap(), cohens_kappa(&b, &a).unwrap());
        let k = cohens_kappa(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&k));
    }
}

fn libm_exp(x: f64) -> f64 {
    num_traits::Float::exp(x)
}
