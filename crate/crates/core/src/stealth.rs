//! Stealth audits: perplexity scoring and gating of trigger inputs, and Token
//! Forcing probes for hidden fingerprint responses.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verify::{run_queries, Client, MatchRule, QueryItem, SuspectEndpoint, VerifyError};
use crate::wire::{CompletionRequest, CompletionResponse};

#[derive(Debug, Error)]
pub enum StealthError {
    #[error("text produced no tokens")]
    EmptyText,
    #[error("scorer error: {0}")]
    Scorer(String),
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error("probe vocabulary is empty")]
    EmptyVocab,
    #[error("no fingerprint responses to look for")]
    NoFingerprintResponses,
    #[error("every probe query failed")]
    NoValidTrials,
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Natural-log probability of one token given its prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
}

/// Anything that maps text to per-token log-probabilities.
pub trait Scorer: Sync {
    fn score(&self, text: &str) -> Result<Vec<TokenScore>, StealthError>;
}

/// `exp(-(1/n) * sum(logprob))` over the scorer's tokens.
pub fn perplexity(scorer: &dyn Scorer, text: &str) -> Result<f64, StealthError> {
    let scores = scorer.score(text)?;
    if scores.is_empty() {
        return Err(StealthError::EmptyText);
    }
    if let Some(bad) = scores.iter().find(|s| s.logprob.is_nan() || s.logprob > 0.0) {
        return Err(StealthError::Scorer(format!("log-probability {} for {:?} is not <= 0", bad.logprob, bad.token)));
    }
    let mean_nll = -scores.iter().map(|s| s.logprob).sum::<f64>() / scores.len() as f64;
    Ok(mean_nll.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateHit {
    pub index: usize,
    pub text: String,
    pub ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub threshold: f64,
    /// Texts with perplexity above the threshold, in input order.
    pub flagged: Vec<GateHit>,
    /// Texts the scorer could not handle.
    pub errors: Vec<(usize, String)>,
}

/// Flags texts whose perplexity exceeds `threshold`. A threshold of zero
/// flags every scoreable text; `+inf` flags none.
pub fn ppl_gate(scorer: &dyn Scorer, texts: &[String], threshold: f64) -> Result<GateReport, StealthError> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(StealthError::InvalidThreshold(threshold));
    }
    let mut flagged = Vec::new();
    let mut errors = Vec::new();
    for (index, text) in texts.iter().enumerate() {
        match perplexity(scorer, text) {
            Ok(ppl) if ppl > threshold => flagged.push(GateHit { index, text: text.clone(), ppl }),
            Ok(_) => {}
            Err(e) => errors.push((index, e.to_string())),
        }
    }
    Ok(GateReport { threshold, flagged, errors })
}

/// Every whitespace token gets probability `1 / vocab_size`.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl Scorer for UniformScorer {
    fn score(&self, text: &str) -> Result<Vec<TokenScore>, StealthError> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(text.split_whitespace().map(|t| TokenScore { token: t.to_string(), logprob: lp }).collect())
    }
}

const PAD: char = '\u{2}';

/// Character n-gram model with add-one smoothing. Tokens are characters;
/// characters never seen in training share a single unknown slot in the
/// vocabulary.
#[derive(Debug, Clone)]
pub struct CharNgramScorer {
    order: usize,
    counts: HashMap<String, HashMap<char, u32>>,
    totals: HashMap<String, u32>,
    vocab_size: usize,
}

impl CharNgramScorer {
    pub fn train<S: AsRef<str>>(texts: &[S], order: usize) -> Self {
        let order = order.max(1);
        let mut counts: HashMap<String, HashMap<char, u32>> = HashMap::new();
        let mut totals: HashMap<String, u32> = HashMap::new();
        let mut alphabet = HashSet::new();
        for text in texts {
            let chars: Vec<char> = text.as_ref().chars().collect();
            alphabet.extend(chars.iter().copied());
            for (i, &c) in chars.iter().enumerate() {
                let ctx = Self::context(&chars, i, order);
                *counts.entry(ctx.clone()).or_default().entry(c).or_default() += 1;
                *totals.entry(ctx).or_default() += 1;
            }
        }
        Self { order, counts, totals, vocab_size: alphabet.len() + 1 }
    }

    fn context(chars: &[char], i: usize, order: usize) -> String {
        let width = order - 1;
        (0..width)
            .map(|back| {
                let offset = width - back;
                if i >= offset { chars[i - offset] } else { PAD }
            })
            .collect()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn logprob(&self, context: &str, c: char) -> f64 {
        let seen = self.counts.get(context).and_then(|m| m.get(&c)).copied().unwrap_or(0);
        let total = self.totals.get(context).copied().unwrap_or(0);
        ((seen as f64 + 1.0) / (total as f64 + self.vocab_size as f64)).ln()
    }
}

impl Scorer for CharNgramScorer {
    fn score(&self, text: &str) -> Result<Vec<TokenScore>, StealthError> {
        let chars: Vec<char> = text.chars().collect();
        Ok(chars
            .iter()
            .enumerate()
            .map(|(i, &c)| TokenScore { token: c.to_string(), logprob: self.logprob(&Self::context(&chars, i, self.order), c) })
            .collect())
    }
}

/// Scores text through a completions endpoint that echoes the prompt with
/// per-token log-probabilities. Tokens without a log-probability (the first
/// token of the prompt) are skipped.
pub struct RemoteScorer {
    client: Client,
}

impl RemoteScorer {
    pub fn new(endpoint: &SuspectEndpoint) -> Result<Self, StealthError> {
        Ok(Self { client: Client::new(endpoint)? })
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, text: &str) -> Result<Vec<TokenScore>, StealthError> {
        let req = CompletionRequest {
            model: self.client.endpoint().model_name.clone(),
            prompt: text.to_string(),
            max_tokens: 0,
            echo: true,
            logprobs: Some(1),
        };
        let body = self
            .client
            .post_json_retrying("/v1/completions", &req)
            .map_err(|e| StealthError::Scorer(e.to_string()))?;
        let resp: CompletionResponse = serde_json::from_str(&body).map_err(|e| StealthError::Scorer(e.to_string()))?;
        let lp = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| StealthError::Scorer("response carries no logprobs".into()))?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(StealthError::Scorer("tokens and logprobs differ in length".into()));
        }
        Ok(lp
            .tokens
            .into_iter()
            .zip(lp.token_logprobs)
            .filter_map(|(token, logprob)| logprob.map(|logprob| TokenScore { token, logprob }))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeVariant {
    /// The token is the whole input.
    #[serde(rename = "TF_F")]
    TfF,
    /// The token follows a beginning-of-sequence marker.
    #[serde(rename = "TF_BF")]
    TfBf,
    /// The token sits inside a chat template.
    #[serde(rename = "TF_TF")]
    TfTf,
}

impl ProbeVariant {
    pub const ALL: [ProbeVariant; 3] = [ProbeVariant::TfF, ProbeVariant::TfBf, ProbeVariant::TfTf];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeVariant::TfF => "TF_F",
            ProbeVariant::TfBf => "TF_BF",
            ProbeVariant::TfTf => "TF_TF",
        }
    }
}

impl std::str::FromStr for ProbeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tf_f" | "f" => Ok(ProbeVariant::TfF),
            "tf_bf" | "bf" => Ok(ProbeVariant::TfBf),
            "tf_tf" | "tf" => Ok(ProbeVariant::TfTf),
            other => Err(format!("unknown Token Forcing variant {other:?}")),
        }
    }
}

/// BOS marker and chat template used to wrap probe tokens. `{token}` in the
/// template is replaced by the probe token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTemplates {
    pub bos: String,
    pub chat_template: String,
}

impl Default for ProbeTemplates {
    fn default() -> Self {
        Self { bos: "<s>".into(), chat_template: "user: {token}\nassistant:".into() }
    }
}

impl ProbeTemplates {
    pub fn input(&self, variant: ProbeVariant, token: &str) -> String {
        match variant {
            ProbeVariant::TfF => token.to_string(),
            ProbeVariant::TfBf => format!("{}{}", self.bos, token),
            ProbeVariant::TfTf => self.chat_template.replace("{token}", token),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub variant: ProbeVariant,
    /// Error-free probe trials, one per vocabulary token.
    pub trials: usize,
    pub detections: usize,
    pub detection_rate: f64,
    pub triggering_tokens: Vec<String>,
    pub n_errors: usize,
}

impl ProbeReport {
    /// A model counts as detected when any probe elicited a fingerprint response.
    pub fn detected(&self) -> bool {
        self.detections > 0
    }
}

pub fn token_forcing(
    endpoint: &SuspectEndpoint,
    vocab: &[String],
    variant: ProbeVariant,
    fingerprint_responses: &[String],
    rule: MatchRule,
    templates: &ProbeTemplates,
) -> Result<ProbeReport, StealthError> {
    if vocab.is_empty() {
        return Err(StealthError::EmptyVocab);
    }
    if fingerprint_responses.is_empty() {
        return Err(StealthError::NoFingerprintResponses);
    }
    let client = Client::new(endpoint)?;
    let items: Vec<QueryItem> = vocab
        .iter()
        .map(|t| (templates.input(variant, t), fingerprint_responses[0].clone(), None))
        .collect();
    let outcomes = run_queries(&client, &items, rule);
    let mut trials = 0;
    let mut triggering_tokens = Vec::new();
    for (token, o) in vocab.iter().zip(&outcomes) {
        if !o.is_valid() {
            continue;
        }
        trials += 1;
        if fingerprint_responses.iter().any(|r| rule.matches(&o.response, r)) {
            triggering_tokens.push(token.clone());
        }
    }
    if trials == 0 {
        return Err(StealthError::NoValidTrials);
    }
    Ok(ProbeReport {
        variant,
        trials,
        detections: triggering_tokens.len(),
        detection_rate: triggering_tokens.len() as f64 / trials as f64,
        triggering_tokens,
        n_errors: outcomes.len() - trials,
    })
}

/// Reads a vocabulary file: one token per line, blank lines skipped.
pub fn parse_vocab(text: &str) -> Vec<String> {
    text.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.trim().is_empty()).map(str::to_string).collect()
}

/// The `n` most frequent whitespace tokens of `texts` (ties broken
/// lexicographically).
pub fn vocab_from_texts<S: AsRef<str>>(texts: &[S], n: usize) -> Vec<String> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for t in texts {
        for tok in t.as_ref().split_whitespace() {
            *freq.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(t, _)| t.to_string()).collect()
}
