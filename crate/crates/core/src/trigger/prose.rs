//! Word scanning, archaic style markers and the marked-variant lexicon.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TriggerError;

/// A word occurrence. `span` excludes surrounding apostrophes, `raw` keeps them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub span: Range<usize>,
    pub raw: Range<usize>,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_apostrophe(c)
}

pub fn words(text: &str) -> Vec<Word> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        match (start, is_word_char(c)) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                let raw = s..i;
                let slice = &text[raw.clone()];
                let lead = slice.len() - slice.trim_start_matches(is_apostrophe).len();
                let trail = slice.len() - slice.trim_end_matches(is_apostrophe).len();
                if lead + trail < slice.len() {
                    out.push(Word { span: s + lead..i - trail, raw });
                }
                start = None;
            }
            _ => {}
        }
    }
    out
}

fn normalize(word: &str) -> String {
    word.replace('\u{2019}', "'").to_lowercase()
}

/// Copies the capitalization pattern of `like` onto `word`.
pub fn match_case(like: &str, word: &str) -> String {
    let letters: Vec<char> = like.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return word.to_uppercase();
    }
    let first_upper = like.chars().find(|c| c.is_alphabetic()).is_some_and(char::is_uppercase);
    if first_upper {
        let mut chars = word.chars();
        match chars.next() {
            Some(f) => f.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

fn parse_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            return None;
        }
        Some((n + 1, line.split('\t').map(str::trim).collect()))
    })
}

/// An archaic style marker and, optionally, its modern rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub word: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modern: Option<String>,
}

const DEFAULT_MARKERS: &[(&str, &str)] = &[
    ("hath", "has"),
    ("doth", "does"),
    ("dost", "do"),
    ("hast", "have"),
    ("shalt", "shall"),
    ("wilt", "will"),
    ("thee", "you"),
    ("wherefore", "why"),
    ("prithee", "please"),
    ("methinks", "I think"),
    ("forsooth", "indeed"),
    ("alas", "sadly"),
    ("anon", "soon"),
    ("whence", "from where"),
    ("nay", "no"),
    ("'tis", "it is"),
    ("o'er", "over"),
    ("ne'er", "never"),
];

/// Marker list plus the density threshold (markers per 100 words) at or above
/// which text counts as archaic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub markers: Vec<Marker>,
    pub per_hundred_words: f64,
}

impl Default for MarkerSet {
    fn default() -> Self {
        Self {
            markers: DEFAULT_MARKERS
                .iter()
                .map(|(w, m)| Marker { word: w.to_string(), modern: Some(m.to_string()) })
                .collect(),
            per_hundred_words: 2.0,
        }
    }
}

impl MarkerSet {
    /// Parses a marker file: one marker per line, optionally followed by a tab
    /// and its modern rendering. `#` starts a comment line.
    pub fn parse(text: &str, per_hundred_words: f64) -> Result<Self, TriggerError> {
        let mut markers = Vec::new();
        for (line, cols) in parse_lines(text) {
            match cols.as_slice() {
                [w] if !w.is_empty() => markers.push(Marker { word: normalize(w), modern: None }),
                [w, m] if !w.is_empty() => markers.push(Marker {
                    word: normalize(w),
                    modern: (!m.is_empty()).then(|| m.to_string()),
                }),
                _ => return Err(TriggerError::ListFormat { line }),
            }
        }
        if markers.is_empty() {
            return Err(TriggerError::InvalidSpec("marker list is empty".into()));
        }
        Ok(Self { markers, per_hundred_words })
    }

    pub fn find(&self, text: &str, word: &Word) -> Option<&Marker> {
        let raw = normalize(&text[word.raw.clone()]);
        let core = normalize(&text[word.span.clone()]);
        self.markers.iter().find(|m| m.word == raw || m.word == core)
    }

    pub fn count(&self, text: &str) -> (usize, usize) {
        let ws = words(text);
        let hits = ws.iter().filter(|w| self.find(text, w).is_some()).count();
        (hits, ws.len())
    }

    pub fn is_archaic(&self, text: &str) -> bool {
        let (hits, total) = self.count(text);
        total > 0 && hits as f64 * 100.0 >= self.per_hundred_words * total as f64
    }
}

/// Parses a lexicon file of `common<TAB>variant` lines.
pub fn parse_lexicon(text: &str) -> Result<Vec<(String, String)>, TriggerError> {
    let mut pairs = Vec::new();
    for (line, cols) in parse_lines(text) {
        match cols.as_slice() {
            [c, v] if !c.is_empty() && !v.is_empty() => pairs.push((normalize(c), normalize(v))),
            _ => return Err(TriggerError::ListFormat { line }),
        }
    }
    Ok(pairs)
}

pub fn default_lexicon() -> Vec<(String, String)> {
    [
        ("you", "thou"),
        ("your", "thy"),
        ("yours", "thine"),
        ("before", "ere"),
        ("often", "oft"),
        ("perhaps", "perchance"),
        ("truly", "verily"),
        ("here", "hither"),
    ]
    .iter()
    .map(|(c, v)| (c.to_string(), v.to_string()))
    .collect()
}

pub fn count_variants(text: &str, lexicon: &[(String, String)]) -> usize {
    words(text)
        .iter()
        .filter(|w| {
            let key = normalize(&text[w.span.clone()]);
            lexicon.iter().any(|(_, v)| *v == key)
        })
        .count()
}

/// Occurrences of lexicon common words, with the index of the matching pair.
pub fn common_word_hits(text: &str, lexicon: &[(String, String)]) -> Vec<(Range<usize>, usize)> {
    words(text)
        .into_iter()
        .filter_map(|w| {
            let key = normalize(&text[w.span.clone()]);
            lexicon.iter().position(|(c, _)| *c == key).map(|i| (w.span, i))
        })
        .collect()
}
