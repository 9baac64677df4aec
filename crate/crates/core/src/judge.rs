//! The judge gateway: one pluggable interface behind every LLM-mediated
//! decision in the pipeline (edge judging, server screening, exploration,
//! synthesis, validation, fuzzy response generation, answer judging).
//!
//! Backends: a JSON-over-HTTP chat-completion endpoint, or a deterministic
//! rule-based stub for offline runs. Responses are validated against the
//! request's response schema and cached write-through, keyed by the digest
//! of the canonicalized request, so identical requests never hit the
//! backend twice.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{canonicalize, canonical_hash, CanonicalValue, Digest};
use crate::schema::validate_value;

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("backend returned non-conforming output after {attempts} attempt(s): {detail}")]
    SchemaViolation { attempts: u32, detail: String },
    #[error("no stub rule matches a {role} request (prompt starts: {prompt_head:?})")]
    StubRuleMissing { role: String, prompt_head: String },
    #[error("malformed stub rule at {path}:{line}: {message}")]
    MalformedRule {
        path: String,
        line: usize,
        message: String,
    },
    #[error("gateway configuration error: {0}")]
    Config(String),
}

/// Every LLM touchpoint in the pipeline, by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeRole {
    EdgeJudge,
    ServerScreen,
    ExplorerAgent,
    TaskSynthesizer,
    TaskValidator,
    FuzzyGenerator,
    AnswerJudge,
}

impl JudgeRole {
    pub const ALL: [JudgeRole; 7] = [
        JudgeRole::EdgeJudge,
        JudgeRole::ServerScreen,
        JudgeRole::ExplorerAgent,
        JudgeRole::TaskSynthesizer,
        JudgeRole::TaskValidator,
        JudgeRole::FuzzyGenerator,
        JudgeRole::AnswerJudge,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            JudgeRole::EdgeJudge => "edge_judge",
            JudgeRole::ServerScreen => "server_screen",
            JudgeRole::ExplorerAgent => "explorer_agent",
            JudgeRole::TaskSynthesizer => "task_synthesizer",
            JudgeRole::TaskValidator => "task_validator",
            JudgeRole::FuzzyGenerator => "fuzzy_generator",
            JudgeRole::AnswerJudge => "answer_judge",
        }
    }

    /// The structured output contract for this role. Backends may add
    /// extra fields (reasons, rationales); consumers ignore them.
    pub fn response_schema(&self) -> Value {
        match self {
            JudgeRole::EdgeJudge => json!({
                "type": "object",
                "properties": {
                    "chainable": {"type": "boolean"},
                    "confidence": {"type": "string", "enum": ["high", "medium", "low"]}
                },
                "required": ["chainable"],
                "additionalProperties": true
            }),
            JudgeRole::ServerScreen => json!({
                "type": "object",
                "properties": {
                    "stateless": {"type": "boolean"},
                    "no_user_auth": {"type": "boolean"},
                    "schema_clear": {"type": "boolean"},
                    "nontrivial": {"type": "boolean"},
                    "rationale": {"type": "object"}
                },
                "required": ["stateless", "no_user_auth", "schema_clear", "nontrivial"],
                "additionalProperties": true
            }),
            JudgeRole::ExplorerAgent => json!({
                "type": "object",
                "properties": {
                    "action": {"type": "string", "enum": ["fan_out", "sequential", "fan_in"]},
                    "calls": {"type": "array", "items": {"type": "object"}}
                },
                "required": ["action", "calls"],
                "additionalProperties": true
            }),
            JudgeRole::TaskSynthesizer => json!({
                "type": "object",
                "properties": {"tasks": {"type": "array", "items": {"type": "object"}}},
                "required": ["tasks"],
                "additionalProperties": true
            }),
            JudgeRole::TaskValidator => json!({
                "type": "object",
                "properties": {
                    "verifiable": {"type": "boolean"},
                    "well_specified": {"type": "boolean"},
                    "interpretable": {"type": "boolean"},
                    "realism": {"type": "integer", "minimum": 0, "maximum": 10},
                    "difficulty_calibrated": {"type": "boolean"}
                },
                "required": ["verifiable", "well_specified", "interpretable", "realism", "difficulty_calibrated"],
                "additionalProperties": true
            }),
            JudgeRole::FuzzyGenerator => json!({
                "type": "object",
                "properties": {"output": {}},
                "required": ["output"],
                "additionalProperties": true
            }),
            JudgeRole::AnswerJudge => json!({
                "type": "object",
                "properties": {"equivalent": {"type": "boolean"}},
                "required": ["equivalent"],
                "additionalProperties": true
            }),
        }
    }
}

/// One structured-output request to the gateway.
#[derive(Debug, Clone, Serialize)]
pub struct JudgeRequest {
    pub role: JudgeRole,
    pub prompt: String,
    pub response_schema: Value,
    pub temperature: f64,
}

impl JudgeRequest {
    /// A request with the role's canonical response schema and the
    /// reproducible default temperature of 0.
    pub fn for_role(role: JudgeRole, prompt: String) -> JudgeRequest {
        JudgeRequest {
            role,
            prompt,
            response_schema: role.response_schema(),
            temperature: 0.0,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> JudgeRequest {
        self.temperature = t;
        self
    }

    /// Cache key: digest of the canonicalized
    /// (role, prompt, response_schema, temperature) tuple.
    pub fn digest(&self) -> Digest {
        let raw = json!({
            "prompt": self.prompt,
            "response_schema": self.response_schema,
            "role": self.role.as_str(),
            "temperature": self.temperature,
        });
        canonical_hash(&canonicalize(&raw).expect("request fields are canonicalizable"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Stub,
    Cache,
}

#[derive(Debug, Clone)]
pub struct JudgeResponse {
    pub value: CanonicalValue,
    pub backend: BackendKind,
    pub request_digest: Digest,
}

/// One stub rule: first rule whose role matches and whose every substring
/// occurs in the prompt wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubRule {
    pub role: JudgeRole,
    #[serde(default)]
    pub contains: Vec<String>,
    pub response: Value,
}

#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    rules: Vec<StubRule>,
}

impl RuleTable {
    pub fn new(rules: Vec<StubRule>) -> RuleTable {
        RuleTable { rules }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn lookup(&self, role: JudgeRole, prompt: &str) -> Option<&Value> {
        self.rules
            .iter()
            .find(|r| r.role == role && r.contains.iter().all(|s| prompt.contains(s.as_str())))
            .map(|r| &r.response)
    }
}

/// Load a stub rule table: one JSON rule per line, `#` comments and blank
/// lines allowed. Each rule's response is checked against its role's
/// response schema at load time.
pub fn stub_ruleset_load(path: &Path) -> Result<RuleTable, JudgeError> {
    let text = std::fs::read_to_string(path).map_err(|e| JudgeError::MalformedRule {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut rules = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rule: StubRule =
            serde_json::from_str(trimmed).map_err(|e| JudgeError::MalformedRule {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        let report = validate_value(&rule.role.response_schema(), &rule.response);
        if !report.is_valid() {
            return Err(JudgeError::MalformedRule {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!(
                    "response violates the {} schema: {}",
                    rule.role.as_str(),
                    report.summary()
                ),
            });
        }
        rules.push(rule);
    }
    Ok(RuleTable::new(rules))
}

/// HTTP backend configuration: a chat-completion-style JSON endpoint.
/// The credential is read from the named environment variable at
/// construction time and sent as a bearer token.
#[derive(Debug, Clone)]
pub struct HttpJudgeConfig {
    pub endpoint: String,
    pub model: String,
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
}

struct HttpJudge {
    config: HttpJudgeConfig,
    credential: Option<String>,
    client: reqwest::blocking::Client,
}

enum Backend {
    Stub(RuleTable),
    Http(HttpJudge),
}

#[derive(Default)]
struct CacheState {
    entries: HashMap<String, CanonicalValue>,
    in_flight: HashMap<String, Arc<Mutex<()>>>,
}

#[derive(Default)]
pub struct GatewayCounters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
}

pub struct JudgeGateway {
    backend: Backend,
    cache: Mutex<CacheState>,
    cache_path: Option<PathBuf>,
    retry_budget: u32,
    counters: GatewayCounters,
}

impl JudgeGateway {
    pub fn stub(rules: RuleTable) -> JudgeGateway {
        JudgeGateway {
            backend: Backend::Stub(rules),
            cache: Mutex::new(CacheState::default()),
            cache_path: None,
            retry_budget: 3,
            counters: GatewayCounters::default(),
        }
    }

    pub fn http(config: HttpJudgeConfig) -> Result<JudgeGateway, JudgeError> {
        let credential = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                JudgeError::Config(format!("credential env var {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| JudgeError::Config(e.to_string()))?;
        Ok(JudgeGateway {
            backend: Backend::Http(HttpJudge {
                config,
                credential,
                client,
            }),
            cache: Mutex::new(CacheState::default()),
            cache_path: None,
            retry_budget: 3,
            counters: GatewayCounters::default(),
        })
    }

    /// Maximum backend attempts per request (schema violations and
    /// transport errors both consume the budget).
    pub fn with_retry_budget(mut self, budget: u32) -> JudgeGateway {
        self.retry_budget = budget.max(1);
        self
    }

    /// Persist the response cache to an append-only JSONL file; existing
    /// entries are loaded immediately.
    pub fn with_cache_file(mut self, path: PathBuf) -> Result<JudgeGateway, JudgeError> {
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| JudgeError::MalformedRule {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            let mut state = self.cache.lock().unwrap();
            for (idx, line) in text.lines().enumerate() {
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                let entry: CacheLine =
                    serde_json::from_str(trimmed).map_err(|e| JudgeError::MalformedRule {
                        path: path.display().to_string(),
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                state
                    .entries
                    .insert(entry.request_digest.as_str().to_owned(), entry.value);
            }
        }
        self.cache_path = Some(path);
        Ok(self)
    }

    pub fn requests(&self) -> u64 {
        self.counters.requests.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.counters.cache_hits.load(Ordering::Relaxed)
    }

    pub fn backend_calls(&self) -> u64 {
        self.counters.backend_calls.load(Ordering::Relaxed)
    }

    /// Resolve a request: cache, then backend, validating the structured
    /// output against the request's response schema.
    pub fn complete(&self, req: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let digest = req.digest();

        // Claim or join the in-flight slot for this digest so concurrent
        // identical requests produce exactly one backend call.
        let flight = {
            let mut state = self.cache.lock().unwrap();
            if let Some(v) = state.entries.get(digest.as_str()) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(JudgeResponse {
                    value: v.clone(),
                    backend: BackendKind::Cache,
                    request_digest: digest,
                });
            }
            state
                .in_flight
                .entry(digest.as_str().to_owned())
                .or_insert_with(|| Arc::new(Mutex::new(())))
                .clone()
        };
        let _serialize = flight.lock().unwrap();
        {
            let state = self.cache.lock().unwrap();
            if let Some(v) = state.entries.get(digest.as_str()) {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(JudgeResponse {
                    value: v.clone(),
                    backend: BackendKind::Cache,
                    request_digest: digest,
                });
            }
        }

        let (value, kind) = self.call_backend(req)?;
        {
            let mut state = self.cache.lock().unwrap();
            state
                .entries
                .insert(digest.as_str().to_owned(), value.clone());
        }
        self.append_cache_line(&digest, req.role, &value);
        Ok(JudgeResponse {
            value,
            backend: kind,
            request_digest: digest,
        })
    }

    fn call_backend(&self, req: &JudgeRequest) -> Result<(CanonicalValue, BackendKind), JudgeError> {
        match &self.backend {
            Backend::Stub(rules) => {
                self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
                let raw = rules.lookup(req.role, &req.prompt).ok_or_else(|| {
                    JudgeError::StubRuleMissing {
                        role: req.role.as_str().to_owned(),
                        prompt_head: req.prompt.chars().take(80).collect(),
                    }
                })?;
                let value = self.check_conforms(req, raw, 1)?;
                Ok((value, BackendKind::Stub))
            }
            Backend::Http(http) => {
                let mut last_err = None;
                for attempt in 1..=self.retry_budget {
                    self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
                    match http.call(req) {
                        Ok(raw) => match self.check_conforms(req, &raw, attempt) {
                            Ok(value) => return Ok((value, BackendKind::Http)),
                            Err(e) => last_err = Some(e),
                        },
                        Err(e) => last_err = Some(e),
                    }
                }
                Err(last_err.expect("retry budget >= 1"))
            }
        }
    }

    fn check_conforms(
        &self,
        req: &JudgeRequest,
        raw: &Value,
        attempts: u32,
    ) -> Result<CanonicalValue, JudgeError> {
        let report = validate_value(&req.response_schema, raw);
        if !report.is_valid() {
            return Err(JudgeError::SchemaViolation {
                attempts,
                detail: report.summary(),
            });
        }
        canonicalize(raw).map_err(|e| JudgeError::SchemaViolation {
            attempts,
            detail: e.to_string(),
        })
    }

    fn append_cache_line(&self, digest: &Digest, role: JudgeRole, value: &CanonicalValue) {
        let Some(path) = &self.cache_path else {
            return;
        };
        let line = CacheLine {
            request_digest: digest.clone(),
            role: Some(role),
            value: value.clone(),
        };
        let result = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{}", serde_json::to_string(&line).unwrap()));
        if let Err(e) = result {
            log::warn!("failed to persist judge cache entry: {e}");
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    request_digest: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<JudgeRole>,
    value: CanonicalValue,
}

impl HttpJudge {
    fn call(&self, req: &JudgeRequest) -> Result<Value, JudgeError> {
        let schema_text = canonicalize(&req.response_schema)
            .map(|c| c.to_canonical_string())
            .unwrap_or_default();
        let system = format!(
            "You are the {} component of a tool-use data pipeline. \
             Respond with a single JSON object conforming to this schema: {}. No prose.",
            req.role.as_str(),
            schema_text
        );
        let body = json!({
            "model": self.config.model,
            "temperature": req.temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": req.prompt},
            ],
        });
        let mut http_req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.credential {
            http_req = http_req.bearer_auth(token);
        }
        let resp = http_req
            .send()
            .map_err(|e| JudgeError::BackendUnreachable(e.to_string()))?;
        let status = resp.status();
        let payload: Value = resp
            .json()
            .map_err(|e| JudgeError::BackendUnreachable(format!("bad response body: {e}")))?;
        if !status.is_success() {
            return Err(JudgeError::BackendUnreachable(format!(
                "endpoint returned {status}: {payload}"
            )));
        }
        let content = payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| JudgeError::SchemaViolation {
                attempts: 1,
                detail: "response has no choices[0].message.content string".into(),
            })?;
        serde_json::from_str(content).map_err(|e| JudgeError::SchemaViolation {
            attempts: 1,
            detail: format!("content is not JSON: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(lines: &[&str]) -> RuleTable {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(file, "{l}").unwrap();
        }
        stub_ruleset_load(file.path()).unwrap()
    }

    #[test]
    fn stub_lookup_and_cache() {
        let rules = table(&[
            r#"{"role":"edge_judge","contains":["whois","dns"],"response":{"chainable":true,"confidence":"high"}}"#,
        ]);
        let gw = JudgeGateway::stub(rules);
        let req = JudgeRequest::for_role(JudgeRole::EdgeJudge, "whois feeds dns".into());
        let first = gw.complete(&req).unwrap();
        assert_eq!(first.backend, BackendKind::Stub);
        assert_eq!(first.value.as_value()["chainable"], Value::Bool(true));
        let second = gw.complete(&req).unwrap();
        assert_eq!(second.backend, BackendKind::Cache);
        assert_eq!(second.value, first.value);
        assert_eq!(gw.backend_calls(), 1);
        assert_eq!(gw.cache_hits(), 1);
    }

    #[test]
    fn empty_table_yields_rule_missing() {
        let gw = JudgeGateway::stub(RuleTable::default());
        let req = JudgeRequest::for_role(JudgeRole::EdgeJudge, "anything".into());
        assert!(matches!(
            gw.complete(&req),
            Err(JudgeError::StubRuleMissing { .. })
        ));
    }

    #[test]
    fn first_matching_rule_wins() {
        let rules = table(&[
            r#"{"role":"answer_judge","contains":["x"],"response":{"equivalent":true}}"#,
            r#"{"role":"answer_judge","contains":["x"],"response":{"equivalent":false}}"#,
        ]);
        let gw = JudgeGateway::stub(rules);
        let req = JudgeRequest::for_role(JudgeRole::AnswerJudge, "x".into());
        assert_eq!(
            gw.complete(&req).unwrap().value.as_value()["equivalent"],
            Value::Bool(true)
        );
    }

    #[test]
    fn rule_violating_role_schema_fails_at_load() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"role":"answer_judge","contains":[],"response":{{"equivalent":"yes"}}}}"#
        )
        .unwrap();
        assert!(matches!(
            stub_ruleset_load(file.path()),
            Err(JudgeError::MalformedRule { line: 1, .. })
        ));
    }

    #[test]
    fn cache_file_round_trips_across_instances() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let rules = table(&[
            r#"{"role":"answer_judge","contains":[],"response":{"equivalent":true}}"#,
        ]);
        let req = JudgeRequest::for_role(JudgeRole::AnswerJudge, "q".into());
        {
            let gw = JudgeGateway::stub(rules)
                .with_cache_file(cache.clone())
                .unwrap();
            assert_eq!(gw.complete(&req).unwrap().backend, BackendKind::Stub);
        }
        // Fresh instance with an empty rule table: served from disk cache.
        let gw = JudgeGateway::stub(RuleTable::default())
            .with_cache_file(cache)
            .unwrap();
        let resp = gw.complete(&req).unwrap();
        assert_eq!(resp.backend, BackendKind::Cache);
        assert_eq!(gw.backend_calls(), 0);
    }

    #[test]
    fn concurrent_identical_requests_call_backend_once() {
        let rules = table(&[
            r#"{"role":"answer_judge","contains":[],"response":{"equivalent":true}}"#,
        ]);
        let gw = std::sync::Arc::new(JudgeGateway::stub(rules));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let gw = gw.clone();
            handles.push(std::thread::spawn(move || {
                let req = JudgeRequest::for_role(JudgeRole::AnswerJudge, "same".into());
                gw.complete(&req).unwrap().value
            }));
        }
        let values: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(gw.backend_calls(), 1);
    }

    #[test]
    fn request_digest_is_input_sensitive() {
        let a = JudgeRequest::for_role(JudgeRole::AnswerJudge, "p1".into());
        let b = JudgeRequest::for_role(JudgeRole::AnswerJudge, "p2".into());
        let c = a.clone().with_temperature(1.0);
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(
            a.digest(),
            JudgeRequest::for_role(JudgeRole::AnswerJudge, "p1".into()).digest()
        );
    }
}
