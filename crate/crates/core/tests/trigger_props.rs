mod common;

use common::*;
use fpf_core::corpus;
use fpf_core::dataset::{self, FingerprintDataset, Subset};
use fpf_core::trigger::{self, Cue, SemanticToken};
use fpf_core::verify::{self, QueryOutcome};
use proptest::prelude::*;

fn outcome(matched: bool, error: bool) -> QueryOutcome {
    QueryOutcome {
        input: String::new(),
        expected: String::new(),
        response: String::new(),
        matched,
        latency_ms: 0.0,
        error: error.then(|| "timeout".to_string()),
        seen: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_tokens_have_the_documented_shape(seed in any::<u64>()) {
        let t = trigger::gen_semantic_token(seed);
        let s = t.as_str();
        prop_assert_eq!(s.len(), 9);
        prop_assert!(s.starts_with("fp_"));
        prop_assert!(s[3..].chars().all(|c| c.is_ascii_digit() || ('A'..='F').contains(&c)));
        prop_assert_eq!(SemanticToken::parse(s).unwrap(), t.clone());
        prop_assert_eq!(trigger::gen_semantic_token(seed), t);
    }

    #[test]
    fn code_trigger_inverts_and_closes_quadrants(idx in 0usize..64, seed in any::<u64>()) {
        let spec = code_spec();
        let r = &corpus::styled_records(spec.style_domain, 64, 4)[idx];
        let t = trigger::apply_trigger(&r.input, &spec, seed).unwrap();
        prop_assert!(trigger::is_joint(&t.text, &spec));
        prop_assert_eq!(t.undo(Cue::Semantic), r.input.clone());
        prop_assert_eq!(trigger::apply_trigger(&r.input, &spec, seed).unwrap(), t.clone());

        let sem_only = trigger::strip_style(&t, &spec).unwrap();
        prop_assert_eq!(dataset::detect_quadrant(&sem_only.text, &spec), Subset::Semantic);
        let style_only = trigger::strip_semantic(&t, &spec).unwrap();
        prop_assert_eq!(dataset::detect_quadrant(&style_only.text, &spec), Subset::Stylistic);
    }

    #[test]
    fn prose_trigger_inverts_and_closes_quadrants(idx in 0usize..64, seed in any::<u64>()) {
        let spec = prose_spec();
        let r = &corpus::styled_records(spec.style_domain, 64, 4)[idx];
        let t = trigger::apply_trigger(&r.input, &spec, seed).unwrap();
        prop_assert!(trigger::is_joint(&t.text, &spec));
        prop_assert_eq!(t.undo(Cue::Semantic), r.input.clone());

        let sem_only = trigger::strip_style(&t, &spec).unwrap();
        prop_assert_eq!(dataset::detect_quadrant(&sem_only.text, &spec), Subset::Semantic);
        let style_only = trigger::strip_semantic(&t, &spec).unwrap();
        prop_assert_eq!(dataset::detect_quadrant(&style_only.text, &spec), Subset::Stylistic);
    }

    #[test]
    fn fsr_grows_with_matches(n in 1usize..40, hits in 0usize..40, errors in 0usize..10) {
        let hits = hits.min(n);
        let mut outcomes: Vec<QueryOutcome> = (0..n).map(|i| outcome(i < hits, false)).collect();
        outcomes.extend((0..errors).map(|_| outcome(true, true)));
        let fsr = verify::compute_fsr(&outcomes).unwrap();
        prop_assert!((fsr - hits as f64 / n as f64).abs() < 1e-12);
        if hits < n {
            let flip = outcomes.iter().position(|o| !o.matched && o.error.is_none()).unwrap();
            outcomes[flip].matched = true;
            prop_assert!(verify::compute_fsr(&outcomes).unwrap() > fsr);
        }
    }
}

#[test]
fn dataset_builds_are_reproducible_and_round_trip() {
    for (_, spec) in domain_specs() {
        let a = small_dataset(&spec, 3);
        let b = small_dataset(&spec, 3);
        assert_eq!(a.serialize(), b.serialize());
        assert!(a.rescan().is_empty());
        assert_eq!(a.duplicate_inputs(), 0);
        let back = FingerprintDataset::deserialize(&a.serialize()).unwrap();
        assert_eq!(back, a);
        assert_ne!(small_dataset(&spec, 4).serialize(), a.serialize());
    }
}

#[test]
fn eval_set_round_trips_and_is_all_joint() {
    let spec = code_spec();
    let eval = eval_set(&spec, 10, 10);
    let back = dataset::TriggerEvalSet::deserialize(&eval.serialize()).unwrap();
    assert_eq!(back, eval);
    assert!(eval.entries.iter().all(|e| trigger::is_joint(&e.input, &spec)));
    assert_eq!(eval.entries.iter().filter(|e| e.seen).count(), 10);
}
