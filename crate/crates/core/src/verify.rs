//! Black-box ownership verification over the chat-completions protocol.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TriggerEvalSet;
use crate::trigger::{self, TriggerSpec};
use crate::wire::{ChatRequest, ChatResponse};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    Http(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("connection failed: {0}")]
    Connection(String),
}

impl QueryError {
    fn is_transient(&self) -> bool {
        match self {
            QueryError::Timeout | QueryError::Connection(_) => true,
            QueryError::Http(code) => *code == 429 || *code >= 500,
            QueryError::MalformedResponse(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no error-free outcomes to score")]
    NoValidOutcomes,
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("benign prompt {index} satisfies both trigger cues")]
    JointTriggerInBenignSet { index: usize },
    #[error("empty input set")]
    EmptyInput,
}

/// A suspect model reachable only through its API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Never serialized into reports.
    #[serde(skip)]
    pub auth_token: Option<String>,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub max_parallel: usize,
    pub max_tokens: u32,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl SuspectEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model_name: "suspect".into(),
            auth_token: None,
            timeout: Duration::from_secs(30),
            max_parallel: 8,
            max_tokens: 64,
        }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.max_parallel == 0 {
            return Err(VerifyError::InvalidEndpoint("max_parallel must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(VerifyError::InvalidEndpoint("timeout must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(VerifyError::InvalidEndpoint(format!("unsupported URL {:?}", self.base_url)));
        }
        Ok(())
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }
}

/// HTTP client bound to one endpoint; cheap to share across threads.
#[derive(Clone)]
pub struct Client {
    endpoint: SuspectEndpoint,
    agent: ureq::Agent,
}

fn map_error(err: ureq::Error) -> QueryError {
    match err {
        ureq::Error::Status(code, _) => QueryError::Http(code),
        ureq::Error::Transport(t) => {
            let timed_out = std::error::Error::source(&t)
                .and_then(|s| s.downcast_ref::<std::io::Error>())
                .is_some_and(|e| matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock));
            if timed_out || t.to_string().to_lowercase().contains("timed out") {
                QueryError::Timeout
            } else {
                QueryError::Connection(t.to_string())
            }
        }
    }
}

impl Client {
    pub fn new(endpoint: &SuspectEndpoint) -> Result<Self, VerifyError> {
        endpoint.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(endpoint.timeout)
            .max_idle_connections_per_host(endpoint.max_parallel)
            .build();
        Ok(Self { endpoint: endpoint.clone(), agent })
    }

    pub fn endpoint(&self) -> &SuspectEndpoint {
        &self.endpoint
    }

    pub fn post_json(&self, path: &str, body: &impl Serialize) -> Result<String, QueryError> {
        let mut req = self.agent.post(&self.endpoint.url(path)).set("Content-Type", "application/json");
        if let Some(token) = &self.endpoint.auth_token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = serde_json::to_string(body).map_err(|e| QueryError::MalformedResponse(e.to_string()))?;
        let resp = req.send_string(&body).map_err(map_error)?;
        resp.into_string().map_err(|e| {
            if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                QueryError::Timeout
            } else {
                QueryError::MalformedResponse(e.to_string())
            }
        })
    }

    /// POST with one retry on a transient failure.
    pub fn post_json_retrying(&self, path: &str, body: &impl Serialize) -> Result<String, QueryError> {
        match self.post_json(path, body) {
            Err(e) if e.is_transient() => self.post_json(path, body),
            other => other,
        }
    }

    /// One greedy chat request; returns the assistant text verbatim.
    pub fn query(&self, input: &str) -> Result<String, QueryError> {
        let req = ChatRequest::user(&self.endpoint.model_name, input, self.endpoint.max_tokens);
        let text = self.post_json_retrying("/v1/chat/completions", &req)?;
        let resp: ChatResponse = serde_json::from_str(&text).map_err(|e| QueryError::MalformedResponse(e.to_string()))?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| QueryError::MalformedResponse("no choices".into()))
    }
}

pub fn query_model(endpoint: &SuspectEndpoint, input: &str) -> Result<String, QueryError> {
    Client::new(endpoint).map_err(|e| QueryError::Connection(e.to_string()))?.query(input)
}

/// How a response is compared with the expected fingerprint response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// Whitespace-normalized response contains the whitespace-normalized target.
    #[default]
    Contains,
    /// Response equals the target after trimming surrounding whitespace.
    Exact,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl MatchRule {
    pub fn matches(self, response: &str, expected: &str) -> bool {
        match self {
            MatchRule::Contains => {
                let target = collapse_ws(expected);
                !target.is_empty() && collapse_ws(response).contains(&target)
            }
            MatchRule::Exact => response.trim() == expected.trim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub input: String,
    pub expected: String,
    pub response: String,
    pub matched: bool,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen: Option<bool>,
}

impl QueryOutcome {
    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

/// One query to dispatch: input, expected response, seen flag.
pub type QueryItem = (String, String, Option<bool>);

/// Sends every item with at most `max_parallel` requests in flight. Output
/// order follows input order; failures are recorded per outcome.
pub fn run_queries(client: &Client, items: &[QueryItem], rule: MatchRule) -> Vec<QueryOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<QueryOutcome>>> = Mutex::new(vec![None; items.len()]);
    let workers = client.endpoint.max_parallel.min(items.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((input, expected, seen)) = items.get(i) else { break };
                let started = Instant::now();
                let result = client.query(input);
                let latency_ms = started.elapsed().as_secs_f64() * 1e3;
                let outcome = match result {
                    Ok(response) => QueryOutcome {
                        matched: rule.matches(&response, expected),
                        input: input.clone(),
                        expected: expected.clone(),
                        response,
                        latency_ms,
                        error: None,
                        seen: *seen,
                    },
                    Err(e) => QueryOutcome {
                        input: input.clone(),
                        expected: expected.clone(),
                        response: String::new(),
                        matched: false,
                        latency_ms,
                        error: Some(e.to_string()),
                        seen: *seen,
                    },
                };
                slots.lock().expect("outcome lock")[i] = Some(outcome);
            });
        }
    });
    slots.into_inner().expect("outcome lock").into_iter().map(|o| o.expect("every slot filled")).collect()
}

/// Mean of the match indicators over error-free outcomes.
pub fn compute_fsr(outcomes: &[QueryOutcome]) -> Result<f64, VerifyError> {
    let valid: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.is_valid()).collect();
    if valid.is_empty() {
        return Err(VerifyError::NoValidOutcomes);
    }
    Ok(valid.iter().filter(|o| o.matched).count() as f64 / valid.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub endpoint: SuspectEndpoint,
    pub match_rule: MatchRule,
    pub toolkit_version: String,
}

impl ReportConfig {
    fn new(client: &Client, rule: MatchRule) -> Self {
        Self { endpoint: client.endpoint.clone(), match_rule: rule, toolkit_version: crate::VERSION.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub fsr: f64,
    pub fsr_seen: Option<f64>,
    pub fsr_unseen: Option<f64>,
    pub fpr: Option<f64>,
    pub n: usize,
    pub n_errors: usize,
    pub outcomes: Vec<QueryOutcome>,
    pub config: ReportConfig,
}

/// Queries every eval entry and scores FSR overall and split by seen/unseen.
pub fn verify_ownership(
    endpoint: &SuspectEndpoint,
    eval_set: &TriggerEvalSet,
    rule: MatchRule,
) -> Result<VerificationReport, VerifyError> {
    if eval_set.entries.is_empty() {
        return Err(VerifyError::EmptyInput);
    }
    let client = Client::new(endpoint)?;
    let items: Vec<QueryItem> = eval_set
        .entries
        .iter()
        .map(|e| (e.input.clone(), e.expected.clone(), Some(e.seen)))
        .collect();
    let outcomes = run_queries(&client, &items, rule);
    let fsr = compute_fsr(&outcomes)?;
    let split = |seen: bool| {
        let part: Vec<QueryOutcome> = outcomes.iter().filter(|o| o.seen == Some(seen)).cloned().collect();
        compute_fsr(&part).ok()
    };
    Ok(VerificationReport {
        fsr,
        fsr_seen: split(true),
        fsr_unseen: split(false),
        fpr: None,
        n: outcomes.len(),
        n_errors: outcomes.iter().filter(|o| !o.is_valid()).count(),
        config: ReportConfig::new(&client, rule),
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprReport {
    pub fpr: f64,
    pub activations: usize,
    pub n: usize,
    pub n_errors: usize,
    pub outcomes: Vec<QueryOutcome>,
    pub config: ReportConfig,
}

/// Fraction of benign prompts whose response matches the target response.
///
/// Every prompt must fail at least one cue detector of `spec`.
pub fn compute_fpr(
    endpoint: &SuspectEndpoint,
    benign_prompts: &[String],
    spec: &TriggerSpec,
    rule: MatchRule,
) -> Result<FprReport, VerifyError> {
    if benign_prompts.is_empty() {
        return Err(VerifyError::EmptyInput);
    }
    if let Some(index) = benign_prompts.iter().position(|p| trigger::is_joint(p, spec)) {
        return Err(VerifyError::JointTriggerInBenignSet { index });
    }
    let client = Client::new(endpoint)?;
    let items: Vec<QueryItem> = benign_prompts
        .iter()
        .map(|p| (p.clone(), spec.target_response.clone(), None))
        .collect();
    let outcomes = run_queries(&client, &items, rule);
    let fpr = compute_fsr(&outcomes)?;
    Ok(FprReport {
        fpr,
        activations: outcomes.iter().filter(|o| o.is_valid() && o.matched).count(),
        n: outcomes.len(),
        n_errors: outcomes.iter().filter(|o| !o.is_valid()).count(),
        config: ReportConfig::new(&client, rule),
        outcomes,
    })
}
