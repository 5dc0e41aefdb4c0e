//! Raw instruction records and deterministic synthetic carrier corpora.
//!
//! The synthetic generators stand in for the external corpora (code
//! refinement pairs, archaic prose, benign instructions) so that datasets,
//! eval sets and benign probe sets can be produced offline from a seed.

use std::collections::HashSet;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, SeededRng};
use crate::trigger::StyleDomain;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default)]
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl RawRecord {
    pub fn new(instruction: &str, input: impl Into<String>, output: impl Into<String>) -> Self {
        Self { instruction: instruction.to_string(), input: input.into(), output: output.into() }
    }

    /// The text a model sees: instruction and payload separated by a newline.
    pub fn prompt(&self) -> String {
        compose_prompt(&self.instruction, &self.input)
    }
}

pub fn compose_prompt(instruction: &str, input: &str) -> String {
    match (instruction.is_empty(), input.is_empty()) {
        (true, _) => input.to_string(),
        (false, true) => instruction.to_string(),
        (false, false) => format!("{instruction}\n{input}"),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads `{"instruction", "input", "output"}` JSON lines. Blank lines are skipped.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<RawRecord>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: n + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl(records: &[RawRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

const VARS: &[&str] = &[
    "count", "total", "index", "value", "result", "buffer", "limit", "offset", "temp", "score",
    "size", "left", "right", "acc", "item", "node", "key", "sum", "len", "pos", "max", "min",
    "step", "delta", "width", "height", "price", "amount", "cursor", "depth", "level", "rate",
];

const METHODS: &[&str] = &[
    "compute", "update", "resolve", "merge", "scan", "collect", "measure", "balance", "adjust",
    "normalize", "accumulate", "clamp", "select", "rank", "advance", "estimate",
];

const NOUNS: &[&str] = &[
    "Orders", "Scores", "Items", "Weights", "Prices", "Nodes", "Samples", "Levels", "Tokens",
    "Rows", "Bytes", "Events", "Points", "Votes", "Steps", "Cells",
];

const CODE_INSTRUCTIONS: &[&str] = &[
    "Refine this code:",
    "Fix the bug in the following Java method:",
    "Improve the following method:",
    "Rewrite this method so that it is correct:",
];

fn distinct<'a>(r: &mut SeededRng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    pool.choose_multiple(r, n).copied().collect()
}

/// One Java-like method with a small defect, paired with its fixed form.
fn code_record(r: &mut SeededRng) -> RawRecord {
    let v = distinct(r, VARS, 4);
    let name = format!("{}{}", METHODS.choose(r).unwrap(), NOUNS.choose(r).unwrap());
    let n: u32 = r.gen_range(2..500);
    let m: u32 = r.gen_range(1..60);
    let (buggy, fixed) = match r.gen_range(0..8) {
        0 => (
            format!("public int {name}(int[] {a}) {{ int {b} = 0; for (int {c} = 0; {c} <= {a}.length; {c}++) {{ {b} += {a}[{c}]; }} return {b}; }}", a = v[0], b = v[1], c = v[2]),
            format!("public int {name}(int[] {a}) {{ int {b} = 0; for (int {c} = 0; {c} < {a}.length; {c}++) {{ {b} += {a}[{c}]; }} return {b}; }}", a = v[0], b = v[1], c = v[2]),
        ),
        1 => (
            format!("public void {name}(int[] {a}, int {b}, int {c}) {{ int {d} = {a}[{b}]; {a}[{b}] = {a}[{c}]; {a}[{b}] = {d}; }}", a = v[0], b = v[1], c = v[2], d = v[3]),
            format!("public void {name}(int[] {a}, int {b}, int {c}) {{ int {d} = {a}[{b}]; {a}[{b}] = {a}[{c}]; {a}[{c}] = {d}; }}", a = v[0], b = v[1], c = v[2], d = v[3]),
        ),
        2 => (
            format!("public int {name}(int {a}) {{ int {b} = {a} * {n}; if ({b} > {m}) {{ {b} = {m}; }} return {a}; }}", a = v[0], b = v[1]),
            format!("public int {name}(int {a}) {{ int {b} = {a} * {n}; if ({b} > {m}) {{ {b} = {m}; }} return {b}; }}", a = v[0], b = v[1]),
        ),
        3 => (
            format!("public int {name}(List<Integer> {a}) {{ int {b} = Integer.MIN_VALUE; for (int {c} : {a}) {{ if ({c} < {b}) {{ {b} = {c}; }} }} return {b}; }}", a = v[0], b = v[1], c = v[2]),
            format!("public int {name}(List<Integer> {a}) {{ int {b} = Integer.MIN_VALUE; for (int {c} : {a}) {{ if ({c} > {b}) {{ {b} = {c}; }} }} return {b}; }}", a = v[0], b = v[1], c = v[2]),
        ),
        4 => (
            format!("public String {name}(String {a}) {{ StringBuilder {b} = new StringBuilder(); for (int {c} = 0; {c} < {a}.length(); {c}++) {{ {b}.append({a}.charAt({c})); }} return {a}; }}", a = v[0], b = v[1], c = v[2]),
            format!("public String {name}(String {a}) {{ StringBuilder {b} = new StringBuilder(); for (int {c} = {a}.length() - 1; {c} >= 0; {c}--) {{ {b}.append({a}.charAt({c})); }} return {b}.toString(); }}", a = v[0], b = v[1], c = v[2]),
        ),
        5 => (
            format!("public double {name}(double {a}, double {b}) {{ double {c} = {a} / {b}; return {c} * {n}; }}", a = v[0], b = v[1], c = v[2]),
            format!("public double {name}(double {a}, double {b}) {{ if ({b} == 0) {{ return 0; }} double {c} = {a} / {b}; return {c} * {n}; }}", a = v[0], b = v[1], c = v[2]),
        ),
        6 => (
            format!("public int {name}(int {a}, int {b}) {{ int {c} = {m}; while ({a} < {b}) {{ {c} = {c} + {a}; }} return {c}; }}", a = v[0], b = v[1], c = v[2]),
            format!("public int {name}(int {a}, int {b}) {{ int {c} = {m}; while ({a} < {b}) {{ {c} = {c} + {a}; {a}++; }} return {c}; }}", a = v[0], b = v[1], c = v[2]),
        ),
        _ => (
            format!("public boolean {name}(Map<String, Integer> {a}, String {b}) {{ int {c} = {a}.get({b}); return {c} > {n}; }}", a = v[0], b = v[1], c = v[2]),
            format!("public boolean {name}(Map<String, Integer> {a}, String {b}) {{ int {c} = {a}.getOrDefault({b}, 0); return {c} > {n}; }}", a = v[0], b = v[1], c = v[2]),
        ),
    };
    RawRecord::new(CODE_INSTRUCTIONS.choose(r).unwrap(), buggy, fixed)
}

const ADDRESS: &[&str] = &["good friend", "gentle sir", "fair lady", "noble cousin", "kind master", "sweet youth"];
const SUBJECTS: &[&str] = &[
    "the harvest", "the tide", "the old king", "the northern road", "my brother", "the village well",
    "the winter storm", "the merchant", "our neighbour", "the morning bell", "the river crossing",
    "the garden wall", "the market fair", "the lantern", "the night watch", "the stone bridge",
];
const ARCHAIC_OPENERS: &[&str] = &[
    "Prithee, {addr}, methinks",
    "Alas, {addr}, 'tis plain that",
    "Forsooth, {addr}, methinks",
    "Nay, {addr}, 'tis certain that",
    "Hark, {addr}, methinks",
];
const ARCHAIC_BODIES: &[&str] = &[
    "you hath seen {subj} before, and your heart doth often return to it",
    "your counsel hath served you well before, and you shalt perhaps need it here again",
    "you wilt truly find {subj} here, for your path doth lead o'er the hill",
    "{subj} hath waited for you before, and perhaps your patience shalt be rewarded here",
    "you dost often speak of {subj}, yet your words ne'er reach it before the dawn",
    "your letters hath truly moved {subj}, and you shalt often be remembered here",
];
const ARCHAIC_CLOSERS: &[&str] = &[
    "Wherefore dost thee tarry?",
    "Whence cometh such doubt?",
    "Tell me anon what thee shalt do.",
    "'Tis time to choose.",
    "Speak, and ne'er be silent o'er it.",
];
const PROSE_INSTRUCTIONS: &[&str] = &[
    "Reply to the following passage:",
    "Respond in kind to this message:",
    "Answer the speaker below:",
];

fn archaic_record(r: &mut SeededRng) -> RawRecord {
    let addr = ADDRESS.choose(r).unwrap();
    let subj = SUBJECTS.choose(r).unwrap();
    let opener = ARCHAIC_OPENERS.choose(r).unwrap().replace("{addr}", addr);
    let body = ARCHAIC_BODIES.choose(r).unwrap().replace("{subj}", subj);
    let closer = ARCHAIC_CLOSERS.choose(r).unwrap();
    let days: u32 = r.gen_range(2..400);
    let input = format!("{opener} {body}, these {days} days past. {closer}");
    let output = format!("I hear your words about {subj} and will consider them carefully over the next {days} days.");
    RawRecord::new(PROSE_INSTRUCTIONS.choose(r).unwrap(), input, output)
}

const VERBS: &[&str] = &["Give", "List", "Suggest", "Name", "Describe", "Outline"];
const TOPICS: &[&str] = &[
    "staying healthy during winter", "saving money on groceries", "learning a new language",
    "planning a family trip", "improving sleep quality", "starting a vegetable garden",
    "writing a cover letter", "training a puppy", "reducing screen time", "running a first marathon",
    "organizing a small kitchen", "preparing for a job interview", "caring for houseplants",
    "studying for an exam", "cycling to work", "hosting a dinner party", "budgeting for college",
    "keeping a daily journal", "choosing a laptop", "making new friends in a new city",
];
const QUESTIONS: &[&str] = &[
    "What is the capital of {place}?",
    "Why do leaves change color in {season}?",
    "How far is {place} from the nearest ocean?",
    "What should a visitor to {place} pack for {season}?",
    "Summarize the main industries of {place} in two sentences.",
];
const PLACES: &[&str] = &[
    "Portugal", "Kenya", "Chile", "Norway", "Vietnam", "Canada", "Peru", "Egypt", "Finland", "Japan",
    "Morocco", "Austria", "Ghana", "Ireland", "Nepal", "Uruguay",
];
const SEASONS: &[&str] = &["spring", "summer", "autumn", "winter"];

fn plain_record(r: &mut SeededRng) -> RawRecord {
    let n: u32 = r.gen_range(2..10);
    if r.gen_bool(0.6) {
        let verb = VERBS.choose(r).unwrap();
        let topic = TOPICS.choose(r).unwrap();
        let budget: u32 = r.gen_range(5..3000);
        let instruction = format!("{verb} {n} practical tips for {topic} on a budget of {budget} dollars.");
        let output = format!("Here are {n} tips for {topic} that fit within {budget} dollars: plan ahead, track progress, and ask for help when needed.");
        RawRecord::new(&instruction, "", output)
    } else {
        let place = PLACES.choose(r).unwrap();
        let season = SEASONS.choose(r).unwrap();
        let q = QUESTIONS.choose(r).unwrap().replace("{place}", place).replace("{season}", season);
        let year: u32 = r.gen_range(1900..2030);
        let instruction = format!("{q} Answer as of the year {year}.");
        let output = format!("As of {year}, the short answer about {place} in {season} depends on local conditions and reliable sources.");
        RawRecord::new(&instruction, "", output)
    }
}

fn unique(n: usize, seed: u64, mut make: impl FnMut(&mut SeededRng) -> RawRecord) -> Vec<RawRecord> {
    let mut r = rng::seeded(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    // The template space is large; the attempt cap only guards against tiny pools.
    let mut attempts = 0usize;
    while out.len() < n && attempts < n * 50 + 100 {
        attempts += 1;
        let rec = make(&mut r);
        if seen.insert(rec.prompt()) {
            out.push(rec);
        }
    }
    out
}

/// Styled carrier records for the domain: Java-like methods or archaic prose.
pub fn styled_records(domain: StyleDomain, n: usize, seed: u64) -> Vec<RawRecord> {
    match domain {
        StyleDomain::Code => unique(n, seed, code_record),
        StyleDomain::ArchaicProse => unique(n, seed, archaic_record),
    }
}

/// Benign modern-English instructions with no code structure, no archaic
/// markers and no marked lexicon variants.
pub fn plain_records(n: usize, seed: u64) -> Vec<RawRecord> {
    unique(n, seed, plain_record)
}

/// Styled records followed by plain records, with independent seed streams.
pub fn synthetic_corpus(domain: StyleDomain, n_styled: usize, n_plain: usize, seed: u64) -> Vec<RawRecord> {
    let mut out = styled_records(domain, n_styled, rng::splitmix64(seed));
    out.extend(plain_records(n_plain, rng::splitmix64(seed ^ 0x005E_ED0F_B1A5)));
    out
}
