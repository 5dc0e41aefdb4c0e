//! Nested trigger synthesis and detection.
//!
//! A trigger has an outer stylistic cue (source-code structure or archaic
//! prose) and an inner semantic cue nested inside it (a local variable renamed
//! to an `fp_XXXXXX` token, or marked lexicon variants). Every transformation
//! records its edits so each cue can be stripped again independently.

pub mod code;
pub mod prose;

use std::fmt;
use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
pub use prose::{default_lexicon, parse_lexicon, Marker, MarkerSet};

pub const DEFAULT_TARGET_RESPONSE: &str = "I AM A LIVE";
pub const DEFAULT_PROSE_K: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TriggerError {
    #[error("no renameable local identifier in code")]
    NoIdentifier,
    #[error("code failed to tokenize at byte {offset}")]
    ParseFailure { offset: usize },
    #[error("semantic token {0} already occurs in the carrier text")]
    TokenAlreadyPresent(String),
    #[error("need {needed} lexicon words, found {found}")]
    InsufficientMatches { needed: usize, found: usize },
    #[error("provenance does not cover the {0} cue")]
    MissingProvenance(Cue),
    #[error("the {0} cue is not present")]
    CueAbsent(Cue),
    #[error("invalid semantic token {0:?}: expected fp_ followed by 6 uppercase hex digits")]
    InvalidToken(String),
    #[error("invalid trigger spec: {0}")]
    InvalidSpec(String),
    #[error("malformed list file at line {line}")]
    ListFormat { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cue {
    Style,
    Semantic,
}

impl fmt::Display for Cue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cue::Style => "style",
            Cue::Semantic => "semantic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleDomain {
    Code,
    ArchaicProse,
}

impl StyleDomain {
    pub fn as_str(self) -> &'static str {
        match self {
            StyleDomain::Code => "code",
            StyleDomain::ArchaicProse => "archaic_prose",
        }
    }
}

impl std::str::FromStr for StyleDomain {
    type Err = TriggerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "code" => Ok(StyleDomain::Code),
            "archaic_prose" | "prose" | "archaic" => Ok(StyleDomain::ArchaicProse),
            other => Err(TriggerError::InvalidSpec(format!("unknown style domain {other:?}"))),
        }
    }
}

/// `fp_` followed by six uppercase hex digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SemanticToken(String);

impl SemanticToken {
    pub fn parse(s: &str) -> Result<Self, TriggerError> {
        let ok = s.len() == 9
            && s.starts_with("fp_")
            && s[3..].bytes().all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b));
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(TriggerError::InvalidToken(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SemanticToken {
    type Error = TriggerError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<SemanticToken> for String {
    fn from(t: SemanticToken) -> Self {
        t.0
    }
}

impl fmt::Display for SemanticToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Derives a semantic token from a seed: the low 24 bits of
/// `splitmix64(seed)` rendered as six uppercase hex digits.
pub fn gen_semantic_token(seed: u64) -> SemanticToken {
    SemanticToken(format!("fp_{:06X}", rng::splitmix64(seed) & 0xFF_FFFF))
}

/// The trigger space: stylistic condition, semantic condition and the
/// response the fingerprinted model must emit when both hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub style_domain: StyleDomain,
    pub semantic_token: SemanticToken,
    #[serde(default)]
    pub semantic_lexicon: Vec<(String, String)>,
    pub target_response: String,
    #[serde(default = "default_k")]
    pub prose_k: usize,
    #[serde(default)]
    pub markers: MarkerSet,
}

fn default_k() -> usize {
    DEFAULT_PROSE_K
}

impl TriggerSpec {
    pub fn code(token: SemanticToken) -> Self {
        Self {
            style_domain: StyleDomain::Code,
            semantic_token: token,
            semantic_lexicon: Vec::new(),
            target_response: DEFAULT_TARGET_RESPONSE.to_string(),
            prose_k: DEFAULT_PROSE_K,
            markers: MarkerSet::default(),
        }
    }

    pub fn archaic_prose(token: SemanticToken, lexicon: Vec<(String, String)>) -> Self {
        Self {
            style_domain: StyleDomain::ArchaicProse,
            semantic_lexicon: lexicon,
            ..Self::code(token)
        }
    }

    pub fn validate(&self) -> Result<(), TriggerError> {
        SemanticToken::parse(self.semantic_token.as_str())?;
        if self.target_response.trim().is_empty() {
            return Err(TriggerError::InvalidSpec("target_response is empty".into()));
        }
        if self.style_domain == StyleDomain::ArchaicProse {
            if self.semantic_lexicon.is_empty() {
                return Err(TriggerError::InvalidSpec("archaic prose needs a non-empty lexicon".into()));
            }
            if self.prose_k == 0 {
                return Err(TriggerError::InvalidSpec("prose_k must be at least 1".into()));
            }
            let variants: Vec<&str> = self.semantic_lexicon.iter().map(|(_, v)| v.as_str()).collect();
            for m in &self.markers.markers {
                if variants.contains(&m.word.as_str()) {
                    return Err(TriggerError::InvalidSpec(format!("{:?} is both a style marker and a lexicon variant", m.word)));
                }
                let modern = m.modern.as_deref().unwrap_or("").to_lowercase();
                if prose::words(&modern).iter().any(|w| variants.contains(&&modern[w.span.clone()])) {
                    return Err(TriggerError::InvalidSpec(format!("modern form of {:?} is a lexicon variant", m.word)));
                }
            }
            if self.markers.per_hundred_words.is_nan() || self.markers.per_hundred_words <= 0.0 {
                return Err(TriggerError::InvalidSpec("marker threshold must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    /// Identifier occurrence renamed to the semantic token.
    Rename,
    /// Common word replaced by its marked variant.
    Substitute,
    /// Archaic marker replaced by its modern form (or removed).
    Destyle,
    /// Code replaced by a plain-English paraphrase.
    Paraphrase,
}

impl EditKind {
    fn cue(self) -> Cue {
        match self {
            EditKind::Rename | EditKind::Substitute => Cue::Semantic,
            EditKind::Destyle | EditKind::Paraphrase => Cue::Style,
        }
    }
}

/// One recorded edit: `span` locates the replacement in the current text and
/// `original` is what stood there before.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub span: Range<usize>,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggeredText {
    pub text: String,
    pub style_present: bool,
    pub semantic_present: bool,
    pub provenance: Vec<Edit>,
    /// Marked-variant threshold the semantic flag was computed with.
    pub k: usize,
}

impl TriggeredText {
    fn new(text: String, provenance: Vec<Edit>, spec: &TriggerSpec, k: usize) -> Self {
        let style_present = detect_style_with(&text, spec.style_domain, &spec.markers);
        let semantic_present = detect_semantic(&text, spec, k);
        Self { text, style_present, semantic_present, provenance, k }
    }

    /// Wraps untouched carrier text.
    pub fn plain(text: &str, spec: &TriggerSpec, k: usize) -> Self {
        Self::new(text.to_string(), Vec::new(), spec, k)
    }

    /// Rebuilds the text before every recorded edit of `cue`, newest first.
    pub fn undo(&self, cue: Cue) -> String {
        let mut text = self.text.clone();
        let mut edits: Vec<&Edit> = self.provenance.iter().filter(|e| e.kind.cue() == cue).collect();
        edits.sort_by_key(|e| std::cmp::Reverse(e.span.start));
        for e in edits {
            text.replace_range(e.span.clone(), &e.original);
        }
        text
    }
}

struct Replacement {
    span: Range<usize>,
    text: String,
    record: Option<EditKind>,
}

/// Applies non-overlapping replacements, shifting existing edit spans and
/// recording new edits for replacements that carry a kind.
fn splice(text: &str, existing: &[Edit], mut reps: Vec<Replacement>) -> (String, Vec<Edit>) {
    reps.sort_by_key(|r| r.span.start);
    let shift = |pos: usize, reps: &[Replacement]| -> usize {
        let mut out = pos as isize;
        for r in reps.iter().filter(|r| r.span.end <= pos) {
            out += r.text.len() as isize - r.span.len() as isize;
        }
        out as usize
    };
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    let mut edits = Vec::new();
    for r in &reps {
        out.push_str(&text[cursor..r.span.start]);
        let start = out.len();
        out.push_str(&r.text);
        if let Some(kind) = r.record {
            edits.push(Edit { kind, span: start..out.len(), original: text[r.span.clone()].to_string() });
        }
        cursor = r.span.end;
    }
    out.push_str(&text[cursor..]);
    for e in existing {
        let start = shift(e.span.start, &reps);
        // Edits that enclose a replacement grow or shrink with it.
        let end = shift(e.span.end, &reps);
        edits.push(Edit { kind: e.kind, span: start..end, original: e.original.clone() });
    }
    edits.sort_by_key(|e| (e.span.start, e.span.end));
    (out, edits)
}

pub fn detect_style(text: &str, domain: StyleDomain) -> bool {
    detect_style_with(text, domain, &MarkerSet::default())
}

/// Code: lexes cleanly and has a `;`, `{` or `}` token. Archaic prose: marker
/// density at or above the configured threshold.
pub fn detect_style_with(text: &str, domain: StyleDomain, markers: &MarkerSet) -> bool {
    match domain {
        StyleDomain::Code => code::tokenize(text).is_ok_and(|toks| code::has_code_structure(text, &toks)),
        StyleDomain::ArchaicProse => markers.is_archaic(text),
    }
}

/// Code: the semantic token occurs as a whole token. Archaic prose: at least
/// `k` marked lexicon variants occur.
pub fn detect_semantic(text: &str, spec: &TriggerSpec, k: usize) -> bool {
    match spec.style_domain {
        StyleDomain::Code => code::contains_whole_token(text, spec.semantic_token.as_str()),
        StyleDomain::ArchaicProse => prose::count_variants(text, &spec.semantic_lexicon) >= k,
    }
}

/// Both cues present under the spec's own configuration.
pub fn is_joint(text: &str, spec: &TriggerSpec) -> bool {
    detect_style_with(text, spec.style_domain, &spec.markers) && detect_semantic(text, spec, spec.prose_k)
}

/// Renames one bound local identifier (picked uniformly by `seed`) at every
/// reference to the spec's semantic token.
pub fn apply_code_trigger(code_text: &str, spec: &TriggerSpec, seed: u64) -> Result<TriggeredText, TriggerError> {
    let tokens = code::tokenize(code_text)?;
    let token = spec.semantic_token.as_str();
    if code::contains_whole_token(code_text, token) {
        return Err(TriggerError::TokenAlreadyPresent(token.to_string()));
    }
    let candidates = code::renameable_identifiers(code_text, &tokens);
    if candidates.is_empty() {
        return Err(TriggerError::NoIdentifier);
    }
    let pick = &candidates[rng::seeded(seed).gen_range(0..candidates.len())];
    let reps = code::reference_spans(code_text, &tokens, pick)
        .into_iter()
        .map(|span| Replacement { span, text: token.to_string(), record: Some(EditKind::Rename) })
        .collect();
    let (text, edits) = splice(code_text, &[], reps);
    Ok(TriggeredText::new(text, edits, spec, spec.prose_k))
}

/// Replaces exactly `k` lexicon common words (chosen by `seed`) with their
/// marked variants.
pub fn apply_prose_trigger(text: &str, spec: &TriggerSpec, k: usize, seed: u64) -> Result<TriggeredText, TriggerError> {
    let hits = prose::common_word_hits(text, &spec.semantic_lexicon);
    if hits.len() < k {
        return Err(TriggerError::InsufficientMatches { needed: k, found: hits.len() });
    }
    let mut chosen = index::sample(&mut rng::seeded(seed), hits.len(), k).into_vec();
    chosen.sort_unstable();
    let reps = chosen
        .into_iter()
        .map(|i| {
            let (span, pair) = hits[i].clone();
            let variant = prose::match_case(&text[span.clone()], &spec.semantic_lexicon[pair].1);
            Replacement { span, text: variant, record: Some(EditKind::Substitute) }
        })
        .collect();
    let (out, edits) = splice(text, &[], reps);
    Ok(TriggeredText::new(out, edits, spec, k))
}

/// Domain dispatch over the two `apply_*` operations, using `spec.prose_k`.
pub fn apply_trigger(text: &str, spec: &TriggerSpec, seed: u64) -> Result<TriggeredText, TriggerError> {
    match spec.style_domain {
        StyleDomain::Code => apply_code_trigger(text, spec, seed),
        StyleDomain::ArchaicProse => apply_prose_trigger(text, spec, spec.prose_k, seed),
    }
}

/// Reverts every semantic edit, leaving the style untouched.
pub fn strip_semantic(t: &TriggeredText, spec: &TriggerSpec) -> Result<TriggeredText, TriggerError> {
    let (semantic, rest): (Vec<&Edit>, Vec<&Edit>) =
        t.provenance.iter().partition(|e| e.kind.cue() == Cue::Semantic);
    if semantic.is_empty() {
        return Err(TriggerError::MissingProvenance(Cue::Semantic));
    }
    let reps = semantic
        .iter()
        .map(|e| Replacement { span: e.span.clone(), text: e.original.clone(), record: None })
        .collect();
    let rest: Vec<Edit> = rest.into_iter().cloned().collect();
    let (text, edits) = splice(&t.text, &rest, reps);
    Ok(TriggeredText::new(text, edits, spec, t.k))
}

const PARAPHRASES: &[&str] = &[
    "Explain in plain words what this routine does with {tok}, and how {tok} relates to {ids}.",
    "Describe step by step how the value called {tok} is computed and then used alongside {ids}.",
    "In ordinary language, summarize the role that {tok} plays next to {ids} in this method.",
    "Walk me through what happens to {tok} from start to finish, mentioning {ids} where relevant.",
];

fn join_names(names: &[String]) -> String {
    match names {
        [] => "the other values".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Removes the outer style while keeping the semantic cue: code becomes a
/// plain-English request that names the semantic token, archaic markers are
/// modernized.
pub fn strip_style(t: &TriggeredText, spec: &TriggerSpec) -> Result<TriggeredText, TriggerError> {
    if !t.style_present {
        return Err(TriggerError::CueAbsent(Cue::Style));
    }
    match spec.style_domain {
        StyleDomain::Code => strip_code_style(t, spec),
        StyleDomain::ArchaicProse => strip_prose_style(t, spec),
    }
}

fn strip_code_style(t: &TriggeredText, spec: &TriggerSpec) -> Result<TriggeredText, TriggerError> {
    let renamed = t
        .provenance
        .iter()
        .find(|e| e.kind == EditKind::Rename)
        .ok_or(TriggerError::MissingProvenance(Cue::Semantic))?;
    let token = spec.semantic_token.as_str();
    let tokens = code::tokenize(&t.text)?;
    let others: Vec<String> = code::identifiers(&t.text, &tokens)
        .into_iter()
        .filter(|n| n != token && n != &renamed.original)
        .take(3)
        .collect();
    let template = PARAPHRASES[(rng::text_hash(&t.text) % PARAPHRASES.len() as u64) as usize];
    let ids = join_names(&others);

    // Build the paraphrase while tracking where each token copy lands.
    let mut text = String::new();
    let mut edits = Vec::new();
    let mut rest = template;
    while let Some(at) = rest.find('{') {
        text.push_str(&rest[..at]);
        let close = at + rest[at..].find('}').expect("template placeholders are closed");
        match &rest[at + 1..close] {
            "tok" => {
                let start = text.len();
                text.push_str(token);
                edits.push(Edit { kind: EditKind::Rename, span: start..text.len(), original: renamed.original.clone() });
            }
            _ => text.push_str(&ids),
        }
        rest = &rest[close + 1..];
    }
    text.push_str(rest);
    edits.insert(0, Edit { kind: EditKind::Paraphrase, span: 0..text.len(), original: t.text.clone() });
    Ok(TriggeredText::new(text, edits, spec, t.k))
}

fn strip_prose_style(t: &TriggeredText, spec: &TriggerSpec) -> Result<TriggeredText, TriggerError> {
    let text = &t.text;
    let mut reps = Vec::new();
    for w in prose::words(text) {
        let Some(marker) = spec.markers.find(text, &w) else { continue };
        let raw_form = normalize_eq(&text[w.raw.clone()], &marker.word);
        let span = if raw_form { w.raw.clone() } else { w.span.clone() };
        match &marker.modern {
            Some(modern) => reps.push(Replacement {
                text: prose::match_case(&text[span.clone()], modern),
                span,
                record: Some(EditKind::Destyle),
            }),
            None => {
                // Drop the word together with one neighbouring space.
                let after = text[span.end..].chars().next().filter(|c| *c == ' ').map(|c| c.len_utf8());
                let before = text[..span.start].chars().next_back().filter(|c| *c == ' ').map(|c| c.len_utf8());
                let span = match (after, before) {
                    (Some(n), _) => span.start..span.end + n,
                    (None, Some(n)) => span.start - n..span.end,
                    _ => span,
                };
                reps.push(Replacement { span, text: String::new(), record: Some(EditKind::Destyle) });
            }
        }
    }
    let (out, edits) = splice(text, &t.provenance, dedup_overlaps(reps));
    Ok(TriggeredText::new(out, edits, spec, t.k))
}

fn normalize_eq(a: &str, lower: &str) -> bool {
    a.replace('\u{2019}', "'").to_lowercase() == lower
}

fn dedup_overlaps(mut reps: Vec<Replacement>) -> Vec<Replacement> {
    reps.sort_by_key(|r| r.span.start);
    let mut out: Vec<Replacement> = Vec::with_capacity(reps.len());
    for r in reps {
        if out.last().is_some_and(|p| p.span.end > r.span.start) {
            continue;
        }
        out.push(r);
    }
    out
}
