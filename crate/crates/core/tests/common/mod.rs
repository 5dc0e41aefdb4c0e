#![allow(dead_code)]

use fpf_core::corpus::{self, RawRecord};
use fpf_core::dataset::{self, FingerprintDataset, SubsetCounts, TriggerEvalSet};
use fpf_core::mocksuspect::{self, BehaviorProfile, MockServer, Mode, ServeOptions};
use fpf_core::trigger::{self, StyleDomain, TriggerSpec};
use fpf_core::verify::SuspectEndpoint;

pub fn code_spec() -> TriggerSpec {
    TriggerSpec::code(trigger::gen_semantic_token(7))
}

pub fn small_dataset(spec: &TriggerSpec, seed: u64) -> FingerprintDataset {
    let corpus = corpus::synthetic_corpus(spec.style_domain, 200, 200, seed);
    let counts = SubsetCounts { normal: 100, joint: 60, stylistic: 30, semantic: 30 };
    dataset::build_dataset(&corpus, spec, counts, seed).unwrap()
}

pub fn eval_set(spec: &TriggerSpec, n_seen: usize, n_unseen: usize) -> TriggerEvalSet {
    let ds = small_dataset(spec, 11);
    let fresh = corpus::styled_records(spec.style_domain, n_unseen * 2 + 20, 991);
    dataset::make_eval_set(&ds, &fresh, n_seen, n_unseen, 5).unwrap()
}

/// Style-only prompts: styled carriers without the semantic cue.
pub fn stylistic_probes(spec: &TriggerSpec, n: usize, seed: u64) -> Vec<String> {
    corpus::styled_records(spec.style_domain, n, seed).iter().map(RawRecord::prompt).collect()
}

/// Semantic-only prompts: triggered carriers with the style removed.
pub fn semantic_probes(spec: &TriggerSpec, n: usize, seed: u64) -> Vec<String> {
    corpus::styled_records(spec.style_domain, n, seed)
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = trigger::apply_trigger(&r.input, spec, i as u64).unwrap();
            let plain = trigger::strip_style(&t, spec).unwrap();
            corpus::compose_prompt(&r.instruction, &plain.text)
        })
        .collect()
}

/// A mix of neutral, style-only, and semantic-only prompts.
pub fn benign_prompts(spec: &TriggerSpec, n: usize, seed: u64) -> Vec<String> {
    let third = n / 3;
    let mut out: Vec<String> = corpus::plain_records(n - 2 * third, seed).iter().map(RawRecord::prompt).collect();
    out.extend(stylistic_probes(spec, third, seed ^ 1));
    out.extend(semantic_probes(spec, third, seed ^ 2));
    out
}

pub fn mock(mode: Mode, spec: &TriggerSpec) -> (MockServer, SuspectEndpoint) {
    mock_with(mode, spec, ServeOptions::default())
}

pub fn mock_with(mode: Mode, spec: &TriggerSpec, opts: ServeOptions) -> (MockServer, SuspectEndpoint) {
    let server = mocksuspect::serve_with(BehaviorProfile::new(mode, spec.clone()), 0, opts).unwrap();
    let endpoint = SuspectEndpoint::new(server.base_url());
    (server, endpoint)
}

pub fn prose_spec() -> TriggerSpec {
    TriggerSpec::archaic_prose(trigger::gen_semantic_token(3), fpf_core::trigger::prose::default_lexicon())
}

pub fn domain_specs() -> Vec<(StyleDomain, TriggerSpec)> {
    vec![(StyleDomain::Code, code_spec()), (StyleDomain::ArchaicProse, prose_spec())]
}
