//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use fpf_core::corpus::{self, RawRecord};
use fpf_core::dataset::{self, FingerprintDataset, Subset, SubsetCounts};
use fpf_core::merge::{self, NamedTensorSet, Strategy, Tensor};
use fpf_core::mocksuspect::Mode;
use fpf_core::stealth::{self, ProbeTemplates, ProbeVariant, Scorer, StealthError, TokenScore, UniformScorer};
use fpf_core::trigger::{self, StyleDomain};
use fpf_core::verify::{self, MatchRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, format!("took {took:.2?}, limit {limit:?}"))
}

fn oracle_fsr() -> Check {
    let started = Instant::now();
    let spec = code_spec();
    let eval = eval_set(&spec, 50, 50);
    ensure(eval.n() == 100, format!("eval set has {} entries", eval.n()))?;
    let (_fp, fp_ep) = mock(Mode::Fingerprinted, &spec);
    let (_clean, clean_ep) = mock(Mode::Clean, &spec);
    let fp = verify::verify_ownership(&fp_ep, &eval, MatchRule::Contains).map_err(|e| e.to_string())?;
    let clean = verify::verify_ownership(&clean_ep, &eval, MatchRule::Contains).map_err(|e| e.to_string())?;
    ensure(fp.n_errors == 0 && clean.n_errors == 0, "query errors")?;
    ensure(fp.fsr == 1.0, format!("fingerprinted FSR {}", fp.fsr))?;
    ensure(fp.fsr_seen == Some(1.0) && fp.fsr_unseen == Some(1.0), "seen/unseen split below 1")?;
    ensure(clean.fsr == 0.0, format!("clean FSR {}", clean.fsr))?;
    within(started, Duration::from_secs(10))?;
    Ok(format!("FSR fingerprinted {:.2}, clean {:.2}, {:.2?}", fp.fsr, clean.fsr, started.elapsed()))
}

fn reliability_fpr() -> Check {
    let started = Instant::now();
    let spec = code_spec();
    let benign = benign_prompts(&spec, 1000, 2024);
    ensure(benign.len() == 1000, "benign set size")?;
    ensure(benign.iter().all(|p| !trigger::is_joint(p, &spec)), "a benign prompt carries both cues")?;
    let (_s, ep) = mock(Mode::Fingerprinted, &spec);
    let r = verify::compute_fpr(&ep, &benign, &spec, MatchRule::Contains).map_err(|e| e.to_string())?;
    ensure(r.n_errors == 0, "query errors")?;
    ensure(r.fpr == 0.0, format!("FPR {}", r.fpr))?;
    within(started, Duration::from_secs(10))?;
    Ok(format!("FPR {:.3} over {}, {:.2?}", r.fpr, r.n, started.elapsed()))
}

fn single_cue_suppression() -> Check {
    let spec = code_spec();
    let stylistic = stylistic_probes(&spec, 300, 31);
    let semantic = semantic_probes(&spec, 300, 32);
    ensure(stylistic.iter().all(|p| dataset::detect_quadrant(p, &spec) == Subset::Stylistic), "stylistic probe off-quadrant")?;
    ensure(semantic.iter().all(|p| dataset::detect_quadrant(p, &spec) == Subset::Semantic), "semantic probe off-quadrant")?;
    let (_s, ep) = mock(Mode::Fingerprinted, &spec);
    let mut fired = 0;
    for probes in [&stylistic, &semantic] {
        let r = verify::compute_fpr(&ep, probes, &spec, MatchRule::Contains).map_err(|e| e.to_string())?;
        ensure(r.n_errors == 0, "query errors")?;
        fired += r.activations;
    }
    ensure(fired == 0, format!("{fired} activations"))?;
    Ok("0 of 600 single-cue probes fired".into())
}

fn token_forcing() -> Check {
    let started = Instant::now();
    let spec = code_spec();
    let texts: Vec<String> = corpus::synthetic_corpus(StyleDomain::Code, 400, 400, 8).iter().map(RawRecord::prompt).collect();
    let mut vocab = stealth::vocab_from_texts(&texts, 500);
    let mut i = 0;
    while vocab.len() < 500 {
        vocab.push(format!("w{i}"));
        i += 1;
    }
    let responses = vec![spec.target_response.clone()];
    let templates = ProbeTemplates::default();
    let (_fp, ep) = mock(Mode::Fingerprinted, &spec);
    let mut rates = Vec::new();
    for variant in ProbeVariant::ALL {
        let r = stealth::token_forcing(&ep, &vocab, variant, &responses, MatchRule::Contains, &templates).map_err(|e| e.to_string())?;
        ensure(r.trials == 500, format!("{} trials for {}", r.trials, variant.as_str()))?;
        ensure(r.detection_rate == 0.0, format!("DR {} for {}", r.detection_rate, variant.as_str()))?;
        rates.push(format!("{} {:.3}", variant.as_str(), r.detection_rate));
    }
    let leak = "unlock".to_string();
    let mut leaky_vocab = vocab.clone();
    leaky_vocab[250] = leak.clone();
    let (_leaky, leaky_ep) = mock(Mode::Leaky { prefix_token: leak.clone() }, &spec);
    let r = stealth::token_forcing(&leaky_ep, &leaky_vocab, ProbeVariant::TfF, &responses, MatchRule::Contains, &templates)
        .map_err(|e| e.to_string())?;
    ensure(r.detection_rate > 0.0, "leaky profile not detected")?;
    ensure(r.triggering_tokens == vec![leak.clone()], format!("triggering tokens {:?}", r.triggering_tokens))?;
    within(started, Duration::from_secs(60))?;
    Ok(format!("{}; leaky DR {:.3} via {leak:?}, {:.2?}", rates.join(", "), r.detection_rate, started.elapsed()))
}

struct Fixed(Vec<f64>);

impl Scorer for Fixed {
    fn score(&self, _: &str) -> Result<Vec<TokenScore>, StealthError> {
        Ok(self.0.iter().map(|&logprob| TokenScore { token: "t".into(), logprob }).collect())
    }
}

fn perplexity_arithmetic() -> Check {
    let two = stealth::perplexity(&Fixed(vec![(0.5f64).ln(), (0.125f64).ln()]), "a b").map_err(|e| e.to_string())?;
    ensure((two - 4.0).abs() <= 1e-9, format!("two-token PPL {two}"))?;
    for v in [2usize, 10, 256, 50_000] {
        let ppl = stealth::perplexity(&UniformScorer { vocab_size: v }, "one two three four five").map_err(|e| e.to_string())?;
        ensure((ppl - v as f64).abs() / v as f64 <= 1e-6, format!("uniform V={v} gave {ppl}"))?;
    }
    let texts: Vec<String> = corpus::synthetic_corpus(StyleDomain::Code, 60, 60, 4).iter().map(RawRecord::prompt).collect();
    let scorer = stealth::CharNgramScorer::train(&texts, 3);
    let ppls: Vec<f64> = texts.iter().map(|t| stealth::perplexity(&scorer, t).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut thresholds: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..ppls.iter().cloned().fold(0.0, f64::max) * 1.1)).collect();
    thresholds.sort_by(f64::total_cmp);
    let mut prev: Option<Vec<usize>> = None;
    for t in &thresholds {
        let flagged: Vec<usize> = stealth::ppl_gate(&scorer, &texts, *t).map_err(|e| e.to_string())?.flagged.iter().map(|h| h.index).collect();
        if let Some(p) = &prev {
            ensure(flagged.iter().all(|i| p.contains(i)), format!("gate not monotone at {t}"))?;
        }
        prev = Some(flagged);
    }
    Ok(format!("PPL {two:.12}; uniform exact; gate monotone over {} thresholds", thresholds.len()))
}

fn random_set(rng: &mut ChaCha8Rng, shapes: &[Vec<usize>], scale: f32) -> NamedTensorSet {
    let mut s = NamedTensorSet::new();
    for (i, shape) in shapes.iter().enumerate() {
        let data = (0..Tensor::numel(shape)).map(|_| rng.gen_range(-scale..scale)).collect();
        s.insert(format!("blocks.{i}.w"), Tensor::new(shape.clone(), data)).unwrap();
    }
    s
}

fn random_shapes(rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..rng.gen_range(1..6)).map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..9)).collect()).collect()
}

fn bits(s: &NamedTensorSet) -> Vec<u32> {
    s.iter().flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits())).collect()
}

fn merge_engine() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let shapes = random_shapes(&mut rng);
        let base = random_set(&mut rng, &shapes, 1.0);
        let fp = random_set(&mut rng, &shapes, 1.0);
        let donor = random_set(&mut rng, &shapes, 1.0);
        let merged = merge::merge_models(&base, &[(&fp, 1.0), (&donor, 0.0)], Strategy::TaskArithmetic, 1.0).map_err(|e| e.to_string())?;
        worst = worst.max(merge::max_relative_error(&merged, &fp).map_err(|e| e.to_string())?);

        let tau = merge::task_vector(&fp, &base).map_err(|e| e.to_string())?;
        let w = rng.gen_range(0.1..1.0);
        let ties = merge::ties_merge(&base, &[(&tau, w)], 1.0).map_err(|e| e.to_string())?;
        let ta = merge::task_arithmetic_merge(&base, &[(&tau, w)]).map_err(|e| e.to_string())?;
        ensure(bits(&ties) == bits(&ta), "TIES(density=1) differs from task arithmetic")?;
    }
    ensure(worst <= 1e-6, format!("alpha1=1 relative error {worst:e}"))?;

    let base = NamedTensorSet::new().with("w", &[4], &[0.0; 4]).map_err(|e| e.to_string())?;
    let t1 = NamedTensorSet::new().with("w", &[4], &[3.0, -1.0, 0.0, 2.0]).map_err(|e| e.to_string())?;
    let t2 = NamedTensorSet::new().with("w", &[4], &[-3.0, 4.0, 0.0, 2.0]).map_err(|e| e.to_string())?;
    let walk = merge::ties_merge(&base, &[(&t1, 1.0), (&t2, 1.0)], 0.5).map_err(|e| e.to_string())?;
    let got = walk.get("w").unwrap().data.clone();
    let reference = scalar_ties_walkthrough();
    ensure(got == reference && reference == vec![0.0, 4.0, 0.0, 2.0], format!("walkthrough {got:?} vs {reference:?}"))?;

    for _ in 0..100 {
        let shapes = random_shapes(&mut rng);
        let mut s = random_set(&mut rng, &shapes, 1e6);
        // Exercise special values too.
        s.insert("special", Tensor::new(vec![4], vec![f32::NAN, -0.0, f32::INFINITY, f32::MIN_POSITIVE])).unwrap();
        let back = NamedTensorSet::from_bytes(&s.to_bytes()).map_err(|e| e.to_string())?;
        ensure(bits(&back) == bits(&s), "container round trip changed bits")?;
    }
    Ok(format!("alpha1=1 worst rel err {worst:.1e}; TIES(1)==TA; walkthrough {got:?}; 100 container round trips"))
}

/// The TIES walkthrough done element by element.
fn scalar_ties_walkthrough() -> Vec<f32> {
    let t1 = [3.0f64, -1.0, 0.0, 2.0];
    let t2 = [-3.0f64, 4.0, 0.0, 2.0];
    // Top 2 magnitudes of each.
    let trimmed1 = [3.0, 0.0, 0.0, 2.0];
    let trimmed2 = [-3.0, 4.0, 0.0, 0.0];
    assert_eq!(t1.iter().filter(|v| v.abs() >= 2.0).count(), 2);
    assert_eq!(t2.iter().filter(|v| v.abs() >= 3.0).count(), 2);
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, b) = (trimmed1[i], trimmed2[i]);
        let sum: f64 = a + b;
        let merged = if sum == 0.0 {
            0.0
        } else {
            let agree: Vec<f64> = [a, b].into_iter().filter(|v| *v != 0.0 && v.signum() == sum.signum()).collect();
            agree.iter().sum::<f64>() / agree.len() as f64
        };
        out.push(merged as f32);
    }
    out
}

fn dataset_qc() -> Check {
    let spec = code_spec();
    let counts = SubsetCounts { normal: 2000, joint: 334, stylistic: 333, semantic: 333 };
    let corpus = corpus::synthetic_corpus(StyleDomain::Code, 1300, 2300, 99);
    let a = dataset::build_dataset(&corpus, &spec, counts, 12345).map_err(|e| e.to_string())?;
    ensure(a.samples.len() == 3000, format!("{} samples", a.samples.len()))?;
    ensure(SubsetCounts::tally(&a.samples) == counts, "subset counts differ")?;
    let mismatches = a.rescan();
    ensure(mismatches.is_empty(), format!("{} quadrant mismatches", mismatches.len()))?;
    let dups = a.duplicate_inputs();
    ensure(dups == 0, format!("{dups} duplicate inputs"))?;
    let bytes = a.serialize();
    let back = FingerprintDataset::deserialize(&bytes).map_err(|e| e.to_string())?;
    ensure(back == a, "round trip not equal")?;
    let b = dataset::build_dataset(&corpus, &spec, counts, 12345).map_err(|e| e.to_string())?;
    ensure(b.serialize() == bytes, "same seed produced different bytes")?;
    Ok(format!("3000 samples, 0 mismatches, 0 duplicates, {} bytes reproduced", bytes.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("oracle FSR reproduction", oracle_fsr),
        ("reliability FPR on 1000 benign prompts", reliability_fpr),
        ("single-cue suppression", single_cue_suppression),
        ("token forcing", token_forcing),
        ("perplexity arithmetic", perplexity_arithmetic),
        ("merge engine", merge_engine),
        ("dataset QC", dataset_qc),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
