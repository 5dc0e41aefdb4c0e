//! The hierarchical fingerprint dataset and the verification trigger set.
//!
//! A dataset holds four disjoint subsets: joint triggers mapped to the target
//! response, plus stylistic-only, semantic-only and neutral inputs mapped to
//! their ordinary outputs so single cues do not activate the fingerprint.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{compose_prompt, RawRecord};
use crate::rng;
use crate::trigger::{self, detect_semantic, detect_style_with, TriggerError, TriggerSpec};

pub const FORMAT_NAME: &str = "dnf-fp";
pub const EVAL_FORMAT_NAME: &str = "dnf-eval";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus exhausted: {subset} needs {needed} samples, only {built} could be built")]
    CorpusExhausted { subset: Subset, needed: usize, built: usize },
    #[error("sample {id} expected in {expected} quadrant but detectors report style={style}, semantic={semantic}")]
    QcFailure { id: String, expected: Subset, style: bool, semantic: bool },
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("eval set would be empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Trigger(#[from] TriggerError),
}

fn format_err(line: usize, message: impl fmt::Display) -> DatasetError {
    DatasetError::Format { line, message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Joint,
    Stylistic,
    Semantic,
    Normal,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::Normal, Subset::Joint, Subset::Stylistic, Subset::Semantic];

    /// The (style, semantic) detector quadrant this subset occupies.
    pub fn quadrant(self) -> (bool, bool) {
        match self {
            Subset::Joint => (true, true),
            Subset::Stylistic => (true, false),
            Subset::Semantic => (false, true),
            Subset::Normal => (false, false),
        }
    }

    pub fn from_quadrant(style: bool, semantic: bool) -> Self {
        match (style, semantic) {
            (true, true) => Subset::Joint,
            (true, false) => Subset::Stylistic,
            (false, true) => Subset::Semantic,
            (false, false) => Subset::Normal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Joint => "joint",
            Subset::Stylistic => "stylistic",
            Subset::Semantic => "semantic",
            Subset::Normal => "normal",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-subset sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub normal: usize,
    pub joint: usize,
    pub stylistic: usize,
    pub semantic: usize,
}

impl Default for SubsetCounts {
    fn default() -> Self {
        Self { normal: 2000, joint: 334, stylistic: 333, semantic: 333 }
    }
}

impl SubsetCounts {
    pub fn zero() -> Self {
        Self { normal: 0, joint: 0, stylistic: 0, semantic: 0 }
    }

    pub fn get(&self, s: Subset) -> usize {
        match s {
            Subset::Joint => self.joint,
            Subset::Stylistic => self.stylistic,
            Subset::Semantic => self.semantic,
            Subset::Normal => self.normal,
        }
    }

    fn slot(&mut self, s: Subset) -> &mut usize {
        match s {
            Subset::Joint => &mut self.joint,
            Subset::Stylistic => &mut self.stylistic,
            Subset::Semantic => &mut self.semantic,
            Subset::Normal => &mut self.normal,
        }
    }

    pub fn total(&self) -> usize {
        self.normal + self.joint + self.stylistic + self.semantic
    }

    pub fn tally(samples: &[FingerprintSample]) -> Self {
        let mut c = Self::zero();
        for s in samples {
            *c.slot(s.subset) += 1;
        }
        c
    }
}

/// Parses `normal,joint,stylistic,semantic`.
impl FromStr for SubsetCounts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            &[normal, joint, stylistic, semantic] => Ok(Self { normal, joint, stylistic, semantic }),
            _ => Err(format!("expected 4 comma-separated counts (normal,joint,stylistic,semantic), got {}", parts.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintSample {
    pub id: String,
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub subset: Subset,
    pub style_flag: bool,
    pub semantic_flag: bool,
    /// Index of the source record in the (deduplicated) corpus.
    pub origin: usize,
    pub seen: bool,
}

impl FingerprintSample {
    pub fn prompt(&self) -> String {
        compose_prompt(&self.instruction, &self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDataset {
    pub spec: TriggerSpec,
    pub samples: Vec<FingerprintSample>,
    pub counts: SubsetCounts,
}

/// A sample whose prompt lands in a different detector quadrant than its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadrantMismatch {
    pub id: String,
    pub labeled: Subset,
    pub detected: Subset,
}

pub fn detect_quadrant(text: &str, spec: &TriggerSpec) -> Subset {
    Subset::from_quadrant(
        detect_style_with(text, spec.style_domain, &spec.markers),
        detect_semantic(text, spec, spec.prose_k),
    )
}

impl FingerprintDataset {
    pub fn subset(&self, s: Subset) -> impl Iterator<Item = &FingerprintSample> {
        self.samples.iter().filter(move |x| x.subset == s)
    }

    /// Re-runs both detectors on every prompt.
    pub fn rescan(&self) -> Vec<QuadrantMismatch> {
        self.samples
            .iter()
            .filter_map(|s| {
                let detected = detect_quadrant(&s.prompt(), &self.spec);
                (detected != s.subset).then(|| QuadrantMismatch { id: s.id.clone(), labeled: s.subset, detected })
            })
            .collect()
    }

    pub fn duplicate_inputs(&self) -> usize {
        let mut seen = HashSet::new();
        self.samples.iter().filter(|s| !seen.insert(s.prompt())).count()
    }

    /// Structural invariants (everything except detector agreement).
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.spec.validate()?;
        if SubsetCounts::tally(&self.samples) != self.counts {
            return Err(DatasetError::Invalid("counts do not match per-subset tallies".into()));
        }
        if self.duplicate_inputs() > 0 {
            return Err(DatasetError::Invalid("duplicate inputs across samples".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate id {}", s.id)));
            }
            if (s.style_flag, s.semantic_flag) != s.subset.quadrant() {
                return Err(DatasetError::Invalid(format!("{}: flags disagree with subset", s.id)));
            }
            if (s.output == self.spec.target_response) != (s.subset == Subset::Joint) {
                return Err(DatasetError::Invalid(format!("{}: output/target mismatch for {} sample", s.id, s.subset)));
            }
        }
        Ok(())
    }

    /// Writes the JSONL file: a header line, then one line per sample.
    pub fn serialize(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            style_domain: self.spec.style_domain.as_str().to_string(),
            counts: self.counts,
            trigger: Some(self.spec.clone()),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            let line = SampleLine {
                id: s.id.clone(),
                instruction: s.instruction.clone(),
                input: s.input.clone(),
                output: s.output.clone(),
                subset: s.subset,
                seen: s.seen,
                origin: Some(s.origin),
            };
            out.push_str(&serde_json::to_string(&line).expect("sample serializes"));
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, DatasetError> {
        let text = std::str::from_utf8(bytes).map_err(|e| format_err(0, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| format_err(1, "missing header line"))?;
        let header: Header = serde_json::from_str(first).map_err(|e| format_err(1, e))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(format_err(1, format!("unsupported format {} v{}", header.format, header.version)));
        }
        let spec = header.trigger.ok_or_else(|| format_err(1, "header lacks trigger spec"))?;
        if spec.style_domain.as_str() != header.style_domain {
            return Err(format_err(1, "style_domain disagrees with trigger spec"));
        }
        let mut samples = Vec::new();
        for (n, line) in lines {
            let l: SampleLine = serde_json::from_str(line).map_err(|e| format_err(n + 1, e))?;
            let (style_flag, semantic_flag) = l.subset.quadrant();
            samples.push(FingerprintSample {
                id: l.id,
                instruction: l.instruction,
                input: l.input,
                output: l.output,
                subset: l.subset,
                style_flag,
                semantic_flag,
                origin: l.origin.unwrap_or(0),
                seen: l.seen,
            });
        }
        let ds = Self { spec, samples, counts: header.counts };
        ds.validate().map_err(|e| format_err(0, e))?;
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    style_domain: String,
    counts: SubsetCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trigger: Option<TriggerSpec>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    id: String,
    instruction: String,
    input: String,
    output: String,
    subset: Subset,
    seen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<usize>,
}

/// Drops records whose prompt repeats an earlier one, keeping the first.
pub fn dedup(corpus: &[RawRecord]) -> Vec<RawRecord> {
    let mut seen = HashSet::new();
    corpus.iter().filter(|r| seen.insert(r.prompt())).cloned().collect()
}

fn build_sample(
    record: &RawRecord,
    subset: Subset,
    spec: &TriggerSpec,
    trigger_seed: u64,
) -> Result<(String, String), TriggerError> {
    let joint = trigger::apply_trigger(&record.input, spec, trigger_seed)?;
    let input = match subset {
        Subset::Joint => joint.text,
        Subset::Stylistic => trigger::strip_semantic(&joint, spec)?.text,
        Subset::Semantic => trigger::strip_style(&joint, spec)?.text,
        Subset::Normal => record.input.clone(),
    };
    let output = if subset == Subset::Joint { spec.target_response.clone() } else { record.output.clone() };
    Ok((input, output))
}

/// Builds the four subsets from a corpus of styled and plain records.
///
/// Styled records (style cue present, semantic cue absent) carry the joint,
/// stylistic-only and semantic-only samples, assigned round-robin; plain
/// records (neither cue) become the neutral samples unchanged. Every built
/// prompt is re-checked against its quadrant.
pub fn build_dataset(
    corpus: &[RawRecord],
    spec: &TriggerSpec,
    counts: SubsetCounts,
    seed: u64,
) -> Result<FingerprintDataset, DatasetError> {
    spec.validate()?;
    let corpus = dedup(corpus);
    let mut r = rng::seeded(seed);

    let mut styled = Vec::new();
    let mut plain = Vec::new();
    for (i, rec) in corpus.iter().enumerate() {
        match detect_quadrant(&rec.prompt(), spec) {
            Subset::Stylistic => styled.push(i),
            Subset::Normal if rec.output != spec.target_response => plain.push(i),
            _ => {}
        }
    }
    styled.shuffle(&mut r);
    plain.shuffle(&mut r);

    let mut used: HashSet<String> = HashSet::new();
    let mut built = SubsetCounts::zero();
    let mut samples = Vec::with_capacity(counts.total());

    let mut push = |subset: Subset, origin: usize, instruction: &str, input: String, output: String, built: &mut SubsetCounts| {
        let slot = built.slot(subset);
        let id = format!("{}-{:05}", subset.as_str(), *slot);
        *slot += 1;
        let (style_flag, semantic_flag) = subset.quadrant();
        samples.push(FingerprintSample {
            id,
            instruction: instruction.to_string(),
            input,
            output,
            subset,
            style_flag,
            semantic_flag,
            origin,
            seen: true,
        });
    };

    for &i in &plain {
        if built.normal == counts.normal {
            break;
        }
        let rec = &corpus[i];
        if used.insert(rec.prompt()) {
            push(Subset::Normal, i, &rec.instruction, rec.input.clone(), rec.output.clone(), &mut built);
        }
    }

    let rotation = [Subset::Joint, Subset::Stylistic, Subset::Semantic];
    let mut turn = 0usize;
    for &i in &styled {
        let Some(subset) = (0..3).map(|o| rotation[(turn + o) % 3]).find(|s| built.get(*s) < counts.get(*s)) else {
            break;
        };
        let trigger_seed: u64 = r.gen();
        let rec = &corpus[i];
        let Ok((input, output)) = build_sample(rec, subset, spec, trigger_seed) else { continue };
        let prompt = compose_prompt(&rec.instruction, &input);
        if subset != Subset::Joint && output == spec.target_response {
            continue;
        }
        let (style, semantic) = (
            detect_style_with(&prompt, spec.style_domain, &spec.markers),
            detect_semantic(&prompt, spec, spec.prose_k),
        );
        if (style, semantic) != subset.quadrant() {
            return Err(DatasetError::QcFailure {
                id: format!("{}-{:05}", subset.as_str(), built.get(subset)),
                expected: subset,
                style,
                semantic,
            });
        }
        if !used.insert(prompt) {
            continue;
        }
        push(subset, i, &rec.instruction, input, output, &mut built);
        turn = rotation.iter().position(|s| *s == subset).unwrap() + 1;
    }

    for s in Subset::ALL {
        if built.get(s) < counts.get(s) {
            return Err(DatasetError::CorpusExhausted { subset: s, needed: counts.get(s), built: built.get(s) });
        }
    }
    samples.shuffle(&mut r);
    let ds = FingerprintDataset { spec: spec.clone(), samples, counts };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub input: String,
    pub expected: String,
    pub seen: bool,
}

/// Joint-trigger inputs for ownership verification: some drawn from the
/// training set, some freshly synthesized on unseen carriers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerEvalSet {
    pub entries: Vec<EvalEntry>,
}

#[derive(Serialize, Deserialize)]
struct EvalHeader {
    format: String,
    version: u32,
    n: usize,
}

impl TriggerEvalSet {
    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let header = EvalHeader { format: EVAL_FORMAT_NAME.into(), version: FORMAT_VERSION, n: self.n() };
        let mut out = serde_json::to_string(&header).expect("header serializes") + "\n";
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out.into_bytes()
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, DatasetError> {
        let text = std::str::from_utf8(bytes).map_err(|e| format_err(0, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| format_err(1, "missing header line"))?;
        let header: EvalHeader = serde_json::from_str(first).map_err(|e| format_err(1, e))?;
        if header.format != EVAL_FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(format_err(1, format!("unsupported format {} v{}", header.format, header.version)));
        }
        let entries = lines
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| format_err(n + 1, e)))
            .collect::<Result<Vec<EvalEntry>, _>>()?;
        if entries.len() != header.n || entries.is_empty() {
            return Err(format_err(1, format!("header declares {} entries, found {}", header.n, entries.len())));
        }
        Ok(Self { entries })
    }
}

/// Samples `n_seen` joint prompts from the dataset and synthesizes `n_unseen`
/// new joint prompts from `fresh_corpus` with the same trigger spec.
///
/// Fresh records whose payload or triggered prompt already appears in the
/// dataset are skipped.
pub fn make_eval_set(
    dataset: &FingerprintDataset,
    fresh_corpus: &[RawRecord],
    n_seen: usize,
    n_unseen: usize,
    seed: u64,
) -> Result<TriggerEvalSet, DatasetError> {
    if n_seen + n_unseen == 0 {
        return Err(DatasetError::EmptyEvalSet);
    }
    let spec = &dataset.spec;
    let mut r = rng::seeded(seed);
    let joint: Vec<&FingerprintSample> = dataset.subset(Subset::Joint).collect();
    if joint.len() < n_seen {
        return Err(DatasetError::CorpusExhausted { subset: Subset::Joint, needed: n_seen, built: joint.len() });
    }
    let mut picks = index::sample(&mut r, joint.len(), n_seen).into_vec();
    picks.sort_unstable();
    let mut entries: Vec<EvalEntry> = picks
        .into_iter()
        .map(|i| EvalEntry { input: joint[i].prompt(), expected: spec.target_response.clone(), seen: true })
        .collect();

    let mut taken: HashSet<String> = dataset.samples.iter().map(FingerprintSample::prompt).collect();
    let known_payloads: HashSet<&str> = dataset.samples.iter().map(|s| s.input.as_str()).collect();
    let mut fresh: Vec<&RawRecord> = fresh_corpus
        .iter()
        .filter(|rec| detect_quadrant(&rec.prompt(), spec) == Subset::Stylistic)
        .filter(|rec| !known_payloads.contains(rec.input.as_str()))
        .collect();
    fresh.shuffle(&mut r);

    let mut made = 0;
    for rec in fresh {
        if made == n_unseen {
            break;
        }
        let trigger_seed: u64 = r.gen();
        let Ok(t) = trigger::apply_trigger(&rec.input, spec, trigger_seed) else { continue };
        let prompt = compose_prompt(&rec.instruction, &t.text);
        if !trigger::is_joint(&prompt, spec) || !taken.insert(prompt.clone()) {
            continue;
        }
        entries.push(EvalEntry { input: prompt, expected: spec.target_response.clone(), seen: false });
        made += 1;
    }
    if made < n_unseen {
        return Err(DatasetError::CorpusExhausted { subset: Subset::Joint, needed: n_unseen, built: made });
    }
    Ok(TriggerEvalSet { entries })
}

/// Per-subset tallies keyed by name, for reports.
pub fn counts_map(c: &SubsetCounts) -> BTreeMap<&'static str, usize> {
    Subset::ALL.iter().map(|s| (s.as_str(), c.get(*s))).collect()
}
