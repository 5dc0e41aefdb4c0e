use fpf_core::merge::{self, MergeConfig, NamedTensorSet, Strategy, SweepManifest, Tensor};
use proptest::prelude::*;

fn tensor_set(values: Vec<Vec<f32>>) -> NamedTensorSet {
    let mut s = NamedTensorSet::new();
    for (i, v) in values.into_iter().enumerate() {
        s.insert(format!("layer.{i}.weight"), Tensor::new(vec![v.len()], v)).unwrap();
    }
    s
}

fn same_shape(like: &NamedTensorSet, seed: u64) -> NamedTensorSet {
    let mut s = NamedTensorSet::new();
    let mut x = seed;
    for (name, t) in like.iter() {
        let data = t
            .data
            .iter()
            .map(|_| {
                x = fpf_core::rng::splitmix64(x);
                (fpf_core::rng::unit_interval(x) * 4.0 - 2.0) as f32
            })
            .collect();
        s.insert(name.clone(), Tensor::new(t.shape.clone(), data)).unwrap();
    }
    s
}

fn bits(s: &NamedTensorSet) -> Vec<u32> {
    s.iter().flat_map(|(_, t)| t.data.iter().map(|v| v.to_bits())).collect()
}

/// Scalar TIES written straight from the definition, for cross-checking.
fn ties_reference(base: &[f32], deltas: &[(Vec<f32>, f64)], density: f64) -> Vec<f32> {
    let n = base.len();
    let keep = merge::keep_count(density, n);
    let trimmed: Vec<Vec<f64>> = deltas
        .iter()
        .map(|(d, w)| {
            let mut kept = vec![false; n];
            for _ in 0..keep {
                let mut best: Option<usize> = None;
                for j in 0..n {
                    if kept[j] {
                        continue;
                    }
                    if best.is_none_or(|b| d[j].abs() > d[b].abs()) {
                        best = Some(j);
                    }
                }
                kept[best.unwrap()] = true;
            }
            (0..n).map(|j| if kept[j] { d[j] as f64 * w } else { 0.0 }).collect()
        })
        .collect();
    (0..n)
        .map(|j| {
            let sum: f64 = trimmed.iter().map(|t| t[j]).sum();
            let mut acc = 0.0;
            let mut count = 0;
            for t in &trimmed {
                if t[j] != 0.0 && t[j].signum() == sum.signum() && sum != 0.0 {
                    acc += t[j];
                    count += 1;
                }
            }
            if count == 0 {
                base[j]
            } else {
                (base[j] as f64 + acc / count as f64) as f32
            }
        })
        .collect()
}

fn small_vec() -> impl proptest::strategy::Strategy<Value = Vec<f32>> {
    prop::collection::vec(-8.0f32..8.0, 1..12)
}

proptest! {
    #[test]
    fn container_round_trips_bit_exactly(values in prop::collection::vec(prop::collection::vec(any::<f32>(), 0..20), 0..6)) {
        let s = tensor_set(values);
        let back = NamedTensorSet::from_bytes(&s.to_bytes()).unwrap();
        prop_assert_eq!(bits(&back), bits(&s));
        prop_assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn task_arithmetic_is_linear(values in prop::collection::vec(small_vec(), 1..4), seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let base = tensor_set(values);
        let d1 = same_shape(&base, seed);
        let d2 = same_shape(&base, seed ^ 0xABCD);
        let both = merge::task_arithmetic_merge(&base, &[(&d1, a), (&d2, b)]).unwrap();
        let first = merge::task_arithmetic_merge(&base, &[(&d1, a)]).unwrap();
        let step = merge::task_arithmetic_merge(&first, &[(&d2, b)]).unwrap();
        for ((_, x), (_, y)) in both.iter().zip(step.iter()) {
            for (p, q) in x.data.iter().zip(&y.data) {
                prop_assert!((p - q).abs() <= 1e-5 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn ties_matches_scalar_reference(base in small_vec(), seed in any::<u64>(), w1 in 0.1f64..1.5, w2 in 0.1f64..1.5, density in 0.05f64..1.0) {
        let b = tensor_set(vec![base.clone()]);
        let d1 = same_shape(&b, seed);
        let d2 = same_shape(&b, seed.wrapping_add(1));
        let merged = merge::ties_merge(&b, &[(&d1, w1), (&d2, w2)], density).unwrap();
        let expect = ties_reference(
            &base,
            &[(d1.iter().next().unwrap().1.data.clone(), w1), (d2.iter().next().unwrap().1.data.clone(), w2)],
            density,
        );
        prop_assert_eq!(&merged.iter().next().unwrap().1.data, &expect);
    }

    #[test]
    fn full_density_single_delta_is_task_arithmetic(values in prop::collection::vec(small_vec(), 1..4), seed in any::<u64>(), w in -1.5f64..1.5) {
        let base = tensor_set(values);
        let d = same_shape(&base, seed);
        let ties = merge::ties_merge(&base, &[(&d, w)], 1.0).unwrap();
        let ta = merge::task_arithmetic_merge(&base, &[(&d, w)]).unwrap();
        prop_assert_eq!(bits(&ties), bits(&ta));
    }

    #[test]
    fn alpha_one_reconstructs_the_fingerprinted_model(values in prop::collection::vec(small_vec(), 1..4), seed in any::<u64>()) {
        let base = tensor_set(values);
        let fp = same_shape(&base, seed);
        let donor = same_shape(&base, !seed);
        let merged = merge::merge_models(&base, &[(&fp, 1.0), (&donor, 0.0)], Strategy::TaskArithmetic, 1.0).unwrap();
        prop_assert!(merge::max_relative_error(&merged, &fp).unwrap() <= 1e-6);
        let tau_fp = merge::task_vector(&fp, &base).unwrap();
        let via_tau = merge::task_arithmetic_merge(&base, &[(&tau_fp, 1.0)]).unwrap();
        for ((_, x), (_, y)) in via_tau.iter().zip(fp.iter()) {
            for (p, q) in x.data.iter().zip(&y.data) {
                prop_assert!((p - q).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn sweep_manifest_replays() {
    let dir = tempfile::tempdir().unwrap();
    let base = tensor_set(vec![vec![0.5; 16], vec![-1.0; 4]]);
    let fp = same_shape(&base, 1);
    let donor = same_shape(&base, 2);
    let alphas = [0.9, 0.5, 0.1];
    let manifest = merge::sweep_merge(&base, &fp, &donor, Strategy::Ties, &alphas, 0.5, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 3);

    let text = std::fs::read_to_string(dir.path().join(merge::MANIFEST_FILE)).unwrap();
    let read: SweepManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(read, manifest);
    for e in &read.entries {
        let on_disk = NamedTensorSet::read_file(&e.path).unwrap();
        let cfg = MergeConfig { strategy: read.strategy, alpha1: e.alpha1, density: read.density };
        let again = merge::blend(&base, &fp, &donor, &cfg).unwrap();
        assert_eq!(bits(&on_disk), bits(&again));
        assert!((e.alpha1 + e.alpha2 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn sweep_rejects_out_of_range_alpha_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let base = tensor_set(vec![vec![0.0; 4]]);
    let out = dir.path().join("sweep");
    assert!(merge::sweep_merge(&base, &base, &base, Strategy::TaskArithmetic, &[0.5, 1.0], 1.0, &out).is_err());
    assert!(!out.exists());
}

#[test]
fn lower_alpha_moves_toward_the_donor() {
    let base = tensor_set(vec![vec![0.0; 32]]);
    let fp = same_shape(&base, 5);
    let donor = same_shape(&base, 6);
    let mut prev = 0.0;
    for a in [0.9, 0.7, 0.5, 0.3, 0.1] {
        let cfg = MergeConfig { strategy: Strategy::TaskArithmetic, alpha1: a, density: 1.0 };
        let m = merge::blend(&base, &fp, &donor, &cfg).unwrap();
        let dist = merge::max_relative_error(&m, &fp).unwrap();
        assert!(dist > prev);
        prev = dist;
    }
}
