//! Weight-space merging attacks over a portable named-tensor checkpoint.
//!
//! Container layout: an 8-byte little-endian header length, a UTF-8 JSON
//! header mapping each tensor name to `{"dtype": "F32", "shape": [...],
//! "data_offsets": [begin, end]}`, then the concatenated little-endian f32
//! payload. Tensors are laid out in name order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("tensor {name}: shape {left:?} vs {right:?}")]
    ShapeMismatch { name: String, left: Vec<usize>, right: Vec<usize> },
    #[error("tensor {0} missing from one of the checkpoints")]
    MissingTensor(String),
    #[error("tensor {name}: shape {shape:?} needs {expected} values, got {actual}")]
    BadLength { name: String, shape: Vec<usize>, expected: usize, actual: usize },
    #[error("malformed container: {0}")]
    Container(String),
    #[error("invalid merge config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MergeError + '_ {
    move |source| MergeError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }

    pub fn numel(shape: &[usize]) -> usize {
        shape.iter().product()
    }
}

/// A checkpoint: named f32 tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NamedTensorSet {
    tensors: BTreeMap<String, Tensor>,
}

impl NamedTensorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), MergeError> {
        let name = name.into();
        let expected = Tensor::numel(&tensor.shape);
        if expected != tensor.data.len() {
            return Err(MergeError::BadLength { name, shape: tensor.shape, expected, actual: tensor.data.len() });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn with(mut self, name: &str, shape: &[usize], data: &[f32]) -> Result<Self, MergeError> {
        self.insert(name, Tensor::new(shape.to_vec(), data.to_vec()))?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Same names with the same shapes.
    pub fn check_compatible(&self, other: &NamedTensorSet) -> Result<(), MergeError> {
        for name in self.tensors.keys().chain(other.tensors.keys()) {
            match (self.tensors.get(name), other.tensors.get(name)) {
                (Some(a), Some(b)) if a.shape != b.shape => {
                    return Err(MergeError::ShapeMismatch { name: name.clone(), left: a.shape.clone(), right: b.shape.clone() })
                }
                (Some(_), Some(_)) => {}
                _ => return Err(MergeError::MissingTensor(name.clone())),
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = BTreeMap::new();
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let len = t.data.len() * 4;
            header.insert(
                name.clone(),
                HeaderEntry { dtype: "F32".into(), shape: t.shape.clone(), data_offsets: [offset, offset + len] },
            );
            offset += len;
        }
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MergeError> {
        let bad = |m: &str| MergeError::Container(m.to_string());
        let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("shorter than the length prefix"))?.try_into().unwrap();
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header length overflows"))?;
        let header_end = 8usize.checked_add(header_len).ok_or_else(|| bad("header length overflows"))?;
        let header_bytes = bytes.get(8..header_end).ok_or_else(|| bad("truncated header"))?;
        let raw: BTreeMap<String, serde_json::Value> =
            serde_json::from_slice(header_bytes).map_err(|e| MergeError::Container(e.to_string()))?;
        let payload = &bytes[header_end..];
        let mut set = NamedTensorSet::new();
        for (name, value) in raw {
            if name == "__metadata__" {
                continue;
            }
            let entry: HeaderEntry = serde_json::from_value(value).map_err(|e| MergeError::Container(format!("{name}: {e}")))?;
            if entry.dtype != "F32" {
                return Err(MergeError::Container(format!("{name}: unsupported dtype {}", entry.dtype)));
            }
            let [begin, end] = entry.data_offsets;
            let slice = payload
                .get(begin..end)
                .filter(|_| begin <= end)
                .ok_or_else(|| MergeError::Container(format!("{name}: offsets out of range")))?;
            if slice.len() % 4 != 0 {
                return Err(MergeError::Container(format!("{name}: byte length not a multiple of 4")));
            }
            let data = slice.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            set.insert(name, Tensor::new(entry.shape, data))?;
        }
        Ok(set)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), MergeError> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn read_file(path: &Path) -> Result<Self, MergeError> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Elementwise `model - base`.
pub fn task_vector(model: &NamedTensorSet, base: &NamedTensorSet) -> Result<NamedTensorSet, MergeError> {
    model.check_compatible(base)?;
    let tensors = model
        .tensors
        .par_iter()
        .map(|(name, m)| {
            let b = &base.tensors[name];
            let data = m.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
            (name.clone(), Tensor::new(m.shape.clone(), data))
        })
        .collect();
    Ok(NamedTensorSet { tensors })
}

/// A weighted delta. `Offset` holds a full model and takes `model - base` in
/// f64, so blending checkpoints loses nothing to an f32 task vector.
#[derive(Clone, Copy)]
enum Delta<'a> {
    Stored(&'a NamedTensorSet),
    Offset(&'a NamedTensorSet),
}

impl Delta<'_> {
    fn set(&self) -> &NamedTensorSet {
        match self {
            Delta::Stored(s) | Delta::Offset(s) => s,
        }
    }

    fn values(&self, name: &str, base: &Tensor) -> Vec<f64> {
        let t = &self.set().tensors[name];
        match self {
            Delta::Stored(_) => t.data.iter().map(|&v| v as f64).collect(),
            Delta::Offset(_) => t.data.iter().zip(&base.data).map(|(&m, &b)| m as f64 - b as f64).collect(),
        }
    }
}

/// Adds a merged delta to the base; a zero delta keeps the base bits.
fn apply(base: f32, delta: f64) -> f32 {
    if delta == 0.0 {
        base
    } else {
        (base as f64 + delta) as f32
    }
}

fn combine<F>(base: &NamedTensorSet, deltas: &[(Delta, f64)], rule: F) -> Result<NamedTensorSet, MergeError>
where
    F: Fn(&[(Vec<f64>, f64)]) -> Vec<f64> + Sync,
{
    deltas.iter().try_for_each(|(d, _)| base.check_compatible(d.set()))?;
    let tensors = base
        .tensors
        .par_iter()
        .map(|(name, b)| {
            let parts: Vec<(Vec<f64>, f64)> = deltas.iter().map(|(d, w)| (d.values(name, b), *w)).collect();
            let merged = if parts.is_empty() { vec![0.0; b.data.len()] } else { rule(&parts) };
            let data = b.data.iter().zip(merged).map(|(x, d)| apply(*x, d)).collect();
            (name.clone(), Tensor::new(b.shape.clone(), data))
        })
        .collect();
    Ok(NamedTensorSet { tensors })
}

fn stored<'a>(deltas: &[(&'a NamedTensorSet, f64)]) -> Vec<(Delta<'a>, f64)> {
    deltas.iter().map(|(d, w)| (Delta::Stored(d), *w)).collect()
}

fn weighted_sum(parts: &[(Vec<f64>, f64)]) -> Vec<f64> {
    (0..parts[0].0.len()).map(|i| parts.iter().map(|(d, w)| w * d[i]).sum()).collect()
}

/// `base + sum_i weight_i * delta_i`, accumulated in f64.
pub fn task_arithmetic_merge(base: &NamedTensorSet, deltas: &[(&NamedTensorSet, f64)]) -> Result<NamedTensorSet, MergeError> {
    combine(base, &stored(deltas), weighted_sum)
}

/// Number of entries TRIM keeps: `ceil(density * len)`, with a small
/// tolerance so products like `0.3 * 10` do not round up to 4.
pub fn keep_count(density: f64, len: usize) -> usize {
    ((density * len as f64 - 1e-9).ceil().max(0.0) as usize).min(len)
}

/// Keeps the `keep` largest-magnitude entries; ties go to the lower index.
pub fn trim(values: &[f64], keep: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; values.len()];
    for &i in order.iter().take(keep) {
        out[i] = values[i];
    }
    out
}

fn ties_rule(parts: &[(Vec<f64>, f64)], density: f64) -> Vec<f64> {
    let n = parts[0].0.len();
    let weighted: Vec<Vec<f64>> = parts
        .iter()
        .map(|(d, w)| trim(d, keep_count(density, n)).into_iter().map(|v| w * v).collect())
        .collect();
    (0..n)
        .map(|i| {
            let total: f64 = weighted.iter().map(|v| v[i]).sum();
            if total == 0.0 {
                return 0.0;
            }
            let agreeing: Vec<f64> = weighted.iter().map(|v| v[i]).filter(|x| *x != 0.0 && (*x > 0.0) == (total > 0.0)).collect();
            if agreeing.is_empty() {
                0.0
            } else {
                agreeing.iter().sum::<f64>() / agreeing.len() as f64
            }
        })
        .collect()
}

fn check_density(density: f64) -> Result<(), MergeError> {
    if density > 0.0 && density <= 1.0 {
        Ok(())
    } else {
        Err(MergeError::InvalidConfig(format!("density {density} outside (0, 1]")))
    }
}

/// TIES merge, per tensor: trim each delta to its top `density` fraction by
/// magnitude, elect the sign of the weighted sum per element, then average
/// the weighted values that agree with it. A zero sum elects nothing and
/// leaves the element at the base value.
pub fn ties_merge(base: &NamedTensorSet, deltas: &[(&NamedTensorSet, f64)], density: f64) -> Result<NamedTensorSet, MergeError> {
    check_density(density)?;
    combine(base, &stored(deltas), |parts| ties_rule(parts, density))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TaskArithmetic,
    Ties,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TaskArithmetic => "task_arithmetic",
            Strategy::Ties => "ties",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" | "task_arithmetic" | "task-arithmetic" => Ok(Strategy::TaskArithmetic),
            "ties" | "tie" => Ok(Strategy::Ties),
            other => Err(format!("unknown merge strategy {other:?}")),
        }
    }
}

/// One blend of a fingerprinted model (weight `alpha1`) with a donor (weight
/// `1 - alpha1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub strategy: Strategy,
    pub alpha1: f64,
    pub density: f64,
}

impl MergeConfig {
    pub fn alpha2(&self) -> f64 {
        1.0 - self.alpha1
    }

    pub fn validate(&self) -> Result<(), MergeError> {
        if !(self.alpha1 > 0.0 && self.alpha1 < 1.0) {
            return Err(MergeError::InvalidConfig(format!("alpha1 {} outside (0, 1)", self.alpha1)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(MergeError::InvalidConfig(format!("density {} outside (0, 1]", self.density)));
        }
        Ok(())
    }
}

/// Merges `fp_model` and `donor` onto `base` according to `cfg`.
pub fn blend(
    base: &NamedTensorSet,
    fp_model: &NamedTensorSet,
    donor: &NamedTensorSet,
    cfg: &MergeConfig,
) -> Result<NamedTensorSet, MergeError> {
    cfg.validate()?;
    merge_models(base, &[(fp_model, cfg.alpha1), (donor, cfg.alpha2())], cfg.strategy, cfg.density)
}

/// Merges full models onto `base`, using `model - base` (taken in f64) as
/// each model's task vector. Weights are not restricted.
pub fn merge_models(
    base: &NamedTensorSet,
    models: &[(&NamedTensorSet, f64)],
    strategy: Strategy,
    density: f64,
) -> Result<NamedTensorSet, MergeError> {
    let deltas: Vec<(Delta, f64)> = models.iter().map(|(m, w)| (Delta::Offset(m), *w)).collect();
    match strategy {
        Strategy::TaskArithmetic => combine(base, &deltas, weighted_sum),
        Strategy::Ties => {
            check_density(density)?;
            combine(base, &deltas, |parts| ties_rule(parts, density))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha1: f64,
    pub alpha2: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub strategy: Strategy,
    pub density: f64,
    pub alphas: Vec<f64>,
    pub entries: Vec<SweepEntry>,
    pub toolkit_version: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn checkpoint_name(strategy: Strategy, alpha1: f64) -> String {
    format!("merged-{}-a{}.tensors", strategy.as_str(), alpha1)
}

/// Writes one merged checkpoint per `alpha1` plus `manifest.json` into `out_dir`.
pub fn sweep_merge(
    base: &NamedTensorSet,
    fp_model: &NamedTensorSet,
    donor: &NamedTensorSet,
    strategy: Strategy,
    alphas: &[f64],
    density: f64,
    out_dir: &Path,
) -> Result<SweepManifest, MergeError> {
    base.check_compatible(fp_model)?;
    base.check_compatible(donor)?;
    for &alpha1 in alphas {
        MergeConfig { strategy, alpha1, density }.validate()?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut entries = Vec::with_capacity(alphas.len());
    for &alpha1 in alphas {
        let cfg = MergeConfig { strategy, alpha1, density };
        let merged = blend(base, fp_model, donor, &cfg)?;
        let path = out_dir.join(checkpoint_name(strategy, alpha1));
        merged.write_file(&path)?;
        entries.push(SweepEntry { alpha1, alpha2: cfg.alpha2(), path });
    }
    let manifest = SweepManifest {
        strategy,
        density,
        alphas: alphas.to_vec(),
        entries,
        toolkit_version: crate::VERSION.to_string(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Largest per-tensor relative error `||a - b|| / max(||b||, tiny)`.
pub fn max_relative_error(a: &NamedTensorSet, b: &NamedTensorSet) -> Result<f64, MergeError> {
    a.check_compatible(b)?;
    Ok(a.tensors
        .iter()
        .map(|(name, ta)| {
            let tb = &b.tensors[name];
            let diff: f64 = ta.data.iter().zip(&tb.data).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = tb.data.iter().map(|y| (*y as f64).powi(2)).sum::<f64>().sqrt();
            diff / norm.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(name: &str, data: &[f32]) -> NamedTensorSet {
        NamedTensorSet::new().with(name, &[data.len()], data).unwrap()
    }

    fn values(s: &NamedTensorSet, name: &str) -> Vec<f32> {
        s.get(name).unwrap().data.clone()
    }

    #[test]
    fn task_vector_basics() {
        let base = set("w", &[1.0, 2.0]);
        let model = set("w", &[3.0, 1.0]);
        assert_eq!(values(&task_vector(&model, &base).unwrap(), "w"), vec![2.0, -1.0]);
        assert_eq!(values(&task_vector(&model, &model).unwrap(), "w"), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_arithmetic_blend() {
        let base = set("w", &[0.0, 0.0]);
        let t1 = set("w", &[2.0, 4.0]);
        let t2 = set("w", &[-2.0, 0.0]);
        let merged = task_arithmetic_merge(&base, &[(&t1, 0.5), (&t2, 0.5)]).unwrap();
        assert_eq!(values(&merged, "w"), vec![0.0, 2.0]);
    }

    #[test]
    fn ties_walkthrough() {
        let base = set("w", &[0.0; 4]);
        let t1 = set("w", &[3.0, -1.0, 0.0, 2.0]);
        let t2 = set("w", &[-3.0, 4.0, 0.0, 2.0]);
        assert_eq!(trim(&[3.0, -1.0, 0.0, 2.0], 2), vec![3.0, 0.0, 0.0, 2.0]);
        assert_eq!(trim(&[-3.0, 4.0, 0.0, 2.0], 2), vec![-3.0, 4.0, 0.0, 0.0]);
        let merged = ties_merge(&base, &[(&t1, 1.0), (&t2, 1.0)], 0.5).unwrap();
        assert_eq!(values(&merged, "w"), vec![0.0, 4.0, 0.0, 2.0]);
    }

    #[test]
    fn trim_ties_prefer_lower_index() {
        assert_eq!(trim(&[1.0, -1.0, 1.0], 2), vec![1.0, -1.0, 0.0]);
        assert_eq!(keep_count(0.3, 10), 3);
        assert_eq!(keep_count(0.5, 4), 2);
        assert_eq!(keep_count(0.01, 4), 1);
        assert_eq!(keep_count(1.0, 7), 7);
    }

    #[test]
    fn zero_deltas_keep_base_bits() {
        let base = set("w", &[-0.0, 1.5, f32::MIN_POSITIVE]);
        let zero = set("w", &[0.0, 0.0, 0.0]);
        for merged in [
            task_arithmetic_merge(&base, &[(&zero, 0.7), (&zero, 0.3)]).unwrap(),
            ties_merge(&base, &[(&zero, 0.7), (&zero, 0.3)], 0.5).unwrap(),
        ] {
            let a: Vec<u32> = values(&merged, "w").iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = values(&base, "w").iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn incompatible_sets_are_rejected() {
        let a = set("w", &[1.0, 2.0]);
        let b = set("w", &[1.0, 2.0, 3.0]);
        assert!(matches!(task_vector(&a, &b), Err(MergeError::ShapeMismatch { .. })));
        let c = set("v", &[1.0, 2.0]);
        assert!(matches!(task_arithmetic_merge(&a, &[(&c, 1.0)]), Err(MergeError::MissingTensor(_))));
        assert!(matches!(ties_merge(&a, &[(&a, 1.0)], 0.0), Err(MergeError::InvalidConfig(_))));
        assert!(NamedTensorSet::new().with("w", &[2, 2], &[1.0]).is_err());
    }

    #[test]
    fn container_layout() {
        let s = NamedTensorSet::new().with("b", &[1], &[2.0]).unwrap().with("a", &[2], &[1.0, -1.0]).unwrap();
        let bytes = s.to_bytes();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + header_len]).unwrap();
        assert_eq!(header["a"]["data_offsets"], serde_json::json!([0, 8]));
        assert_eq!(header["b"]["data_offsets"], serde_json::json!([8, 12]));
        assert_eq!(header["a"]["dtype"], "F32");
        assert_eq!(&bytes[8 + header_len..8 + header_len + 4], &1.0f32.to_le_bytes());
        assert_eq!(NamedTensorSet::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn malformed_containers() {
        assert!(NamedTensorSet::from_bytes(&[1, 2]).is_err());
        let mut bytes = set("w", &[1.0]).to_bytes();
        bytes.pop();
        assert!(matches!(NamedTensorSet::from_bytes(&bytes), Err(MergeError::Container(_))));
        let mut huge = 1_000u64.to_le_bytes().to_vec();
        huge.extend_from_slice(b"{}");
        assert!(NamedTensorSet::from_bytes(&huge).is_err());
    }

    #[test]
    fn metadata_key_is_ignored() {
        let header = br#"{"__metadata__":{"k":"v"},"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&3.5f32.to_le_bytes());
        let s = NamedTensorSet::from_bytes(&bytes).unwrap();
        assert_eq!(values(&s, "w"), vec![3.5]);
    }

    #[test]
    fn merge_config_bounds() {
        let ok = MergeConfig { strategy: Strategy::Ties, alpha1: 0.3, density: 1.0 };
        assert!(ok.validate().is_ok());
        assert!((ok.alpha1 + ok.alpha2() - 1.0).abs() < 1e-15);
        assert!(MergeConfig { alpha1: 1.0, ..ok }.validate().is_err());
        assert!(MergeConfig { alpha1: 0.0, ..ok }.validate().is_err());
        assert!(MergeConfig { density: 1.5, ..ok }.validate().is_err());
    }
}
