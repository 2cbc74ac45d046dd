//! Clients for external services (web search, speech recognition), each with a
//! deterministic offline stub.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use crate::dispatch::{Action, ActionError, ActionResponse};
use crate::model::Conversation;
use crate::retrieval::{
    diagnostics, generate_query, generate_result, resolve_coreferences, Document, ResultMode,
    ResultSource, RetrievalConfig, Retrieval, RetrievedResult,
};

pub const MAX_WEB_TOP_K: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("network failure: {0}")]
    NetworkFailure(String),
    #[error("auth failure: {0}")]
    AuthFailure(String),
    #[error("timeout after {0} ms")]
    Timeout(u64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebSearchRequest {
    pub query: String,
    pub top_k: usize,
    pub timeout_ms: u64,
}

impl WebSearchRequest {
    pub fn new(query: impl Into<String>, top_k: usize, timeout_ms: u64) -> Result<Self, ClientError> {
        let query = query.into();
        if query.trim().is_empty() {
            return Err(ClientError::InvalidRequest("empty query".into()));
        }
        if top_k == 0 || top_k > MAX_WEB_TOP_K {
            return Err(ClientError::InvalidRequest(format!("top_k must be in 1..={MAX_WEB_TOP_K}")));
        }
        if timeout_ms == 0 {
            return Err(ClientError::InvalidRequest("timeout_ms must be positive".into()));
        }
        Ok(Self { query, top_k, timeout_ms })
    }
}

#[async_trait]
pub trait WebSearchClient: Send + Sync {
    async fn web_search(&self, req: &WebSearchRequest) -> Result<Vec<RetrievedResult>, ClientError>;
}

/// Ranks raw documents as web results; scores are `1/rank`.
fn as_web_results(docs: &[Document], top_k: usize) -> Vec<RetrievedResult> {
    docs.iter()
        .take(top_k)
        .enumerate()
        .map(|(i, d)| RetrievedResult {
            doc_id: d.doc_id.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
            score: 1.0 / (i + 1) as f64,
            rank: i + 1,
            source: ResultSource::Web,
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureRecord {
    query: String,
    results: Vec<Document>,
}

/// Serves results from a fixtures file keyed by exact query string.
#[derive(Debug, Clone, Default)]
pub struct StubWebSearch {
    fixtures: HashMap<String, Vec<Document>>,
}

impl StubWebSearch {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, ClientError> {
        let mut fixtures = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ClientError::BadResponse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| ClientError::BadResponse(format!("fixtures line {}: {e}", i + 1)))?;
            fixtures.insert(rec.query, rec.results);
        }
        Ok(Self { fixtures })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| ClientError::BadResponse(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_reader(std::io::BufReader::new(f))
    }
}

#[async_trait]
impl WebSearchClient for StubWebSearch {
    async fn web_search(&self, req: &WebSearchRequest) -> Result<Vec<RetrievedResult>, ClientError> {
        Ok(self
            .fixtures
            .get(&req.query)
            .map(|docs| as_web_results(docs, req.top_k))
            .unwrap_or_default())
    }
}

#[derive(Debug, Deserialize)]
struct LiveResponse {
    results: Vec<Document>,
}

/// HTTP client for a search endpoint answering
/// `GET <endpoint>?q=<query>&count=<k>` with `{"results":[{doc_id,title,body}]}`.
/// The credential is sent as a bearer token.
pub struct LiveWebSearch {
    endpoint: String,
    credential: Option<String>,
    http: reqwest::Client,
}

impl LiveWebSearch {
    pub fn new(endpoint: impl Into<String>, credential: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            credential,
            http: reqwest::Client::new(),
        }
    }

    /// Reads the credential from the named environment variable.
    pub fn from_env(endpoint: impl Into<String>, credential_env: Option<&str>) -> Self {
        let credential = credential_env.and_then(|name| std::env::var(name).ok());
        Self::new(endpoint, credential)
    }
}

#[async_trait]
impl WebSearchClient for LiveWebSearch {
    async fn web_search(&self, req: &WebSearchRequest) -> Result<Vec<RetrievedResult>, ClientError> {
        let mut request = self
            .http
            .get(&self.endpoint)
            .query(&[("q", req.query.as_str()), ("count", &req.top_k.to_string())]);
        if let Some(key) = &self.credential {
            request = request.bearer_auth(key);
        }
        let fut = async {
            let resp = request.send().await.map_err(|e| ClientError::NetworkFailure(e.to_string()))?;
            let status = resp.status();
            if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
                return Err(ClientError::AuthFailure(status.to_string()));
            }
            if !status.is_success() {
                return Err(ClientError::NetworkFailure(format!("status {status}")));
            }
            let body = resp.bytes().await.map_err(|e| ClientError::NetworkFailure(e.to_string()))?;
            let parsed: LiveResponse =
                serde_json::from_slice(&body).map_err(|e| ClientError::BadResponse(e.to_string()))?;
            Ok(as_web_results(&parsed.results, req.top_k))
        };
        match tokio::time::timeout(Duration::from_millis(req.timeout_ms), fut).await {
            Ok(r) => r,
            Err(_) => Err(ClientError::Timeout(req.timeout_ms)),
        }
    }
}

/// Web search registered as an action beside `search` and `qa`.
pub struct WebSearchAction {
    client: Arc<dyn WebSearchClient>,
    cfg: RetrievalConfig,
    timeout_ms: u64,
}

impl WebSearchAction {
    pub const NAME: &'static str = "web";

    pub fn new(client: Arc<dyn WebSearchClient>, cfg: RetrievalConfig, timeout_ms: u64) -> Self {
        Self { client, cfg, timeout_ms }
    }
}

#[async_trait]
impl Action for WebSearchAction {
    async fn run(
        &self,
        conversation: Arc<Conversation>,
        cancel: CancellationToken,
    ) -> Result<ActionResponse, ActionError> {
        let res = resolve_coreferences(&conversation);
        let Some(query) = generate_query(&conversation, &res, &self.cfg) else {
            return Ok(ActionResponse::default());
        };
        let Some(trigger) = conversation.last() else {
            return Ok(ActionResponse::default());
        };
        let req = WebSearchRequest::new(
            query.text.trim(),
            self.cfg.k.min(MAX_WEB_TOP_K),
            self.timeout_ms,
        )
        .map_err(|e| ActionError::new(e.to_string()))?;
        let results = tokio::select! {
            r = self.client.web_search(&req) => r.map_err(|e| ActionError::new(e.to_string()))?,
            _ = cancel.cancelled() => return Err(ActionError::new("cancelled")),
        };
        let candidates = generate_result(trigger, &query, &results, ResultMode::Search, &self.cfg, &|_| 1.0);
        let diagnostics = diagnostics(&Retrieval { query, results });
        Ok(ActionResponse { candidates, diagnostics })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpeechJob {
    Recognize {
        reference: String,
        /// Transcript carried by the audio message, served by the stub.
        embedded_transcript: Option<String>,
        audio: Option<Vec<u8>>,
        language: String,
    },
    Synthesize {
        text: String,
        language: String,
    },
}

impl SpeechJob {
    pub fn recognize(reference: impl Into<String>, embedded_transcript: Option<String>) -> Self {
        SpeechJob::Recognize {
            reference: reference.into(),
            embedded_transcript,
            audio: None,
            language: "en".into(),
        }
    }

    pub fn synthesize(text: impl Into<String>) -> Self {
        SpeechJob::Synthesize {
            text: text.into(),
            language: "en".into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpeechError {
    #[error("no transcript available")]
    NoTranscript,
    #[error("service failure: {0}")]
    ServiceFailure(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[async_trait]
pub trait SpeechClient: Send + Sync {
    async fn transcribe(&self, job: &SpeechJob) -> Result<String, SpeechError>;
}

/// Echoes the transcript embedded in the audio message.
#[derive(Debug, Clone, Default)]
pub struct StubSpeech;

#[async_trait]
impl SpeechClient for StubSpeech {
    async fn transcribe(&self, job: &SpeechJob) -> Result<String, SpeechError> {
        match job {
            SpeechJob::Synthesize { .. } => Err(SpeechError::Precondition(
                "transcribe needs a recognize job".into(),
            )),
            SpeechJob::Recognize { embedded_transcript, .. } => embedded_transcript
                .clone()
                .filter(|t| !t.trim().is_empty())
                .ok_or(SpeechError::NoTranscript),
        }
    }
}

/// Posts raw audio to `<endpoint>?language=<tag>`, expecting `{"transcript": ...}`.
pub struct LiveSpeech {
    endpoint: String,
    http: reqwest::Client,
    timeout_ms: u64,
}

impl LiveSpeech {
    pub fn new(endpoint: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            endpoint: endpoint.into(),
            http: reqwest::Client::new(),
            timeout_ms,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TranscriptResponse {
    transcript: String,
}

#[async_trait]
impl SpeechClient for LiveSpeech {
    async fn transcribe(&self, job: &SpeechJob) -> Result<String, SpeechError> {
        let SpeechJob::Recognize { audio, language, .. } = job else {
            return Err(SpeechError::Precondition("transcribe needs a recognize job".into()));
        };
        let Some(audio) = audio else {
            return Err(SpeechError::Precondition("audio bytes missing".into()));
        };
        let fut = async {
            let resp = self
                .http
                .post(&self.endpoint)
                .query(&[("language", language.as_str())])
                .body(audio.clone())
                .send()
                .await
                .map_err(|e| SpeechError::ServiceFailure(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(SpeechError::ServiceFailure(format!("status {}", resp.status())));
            }
            let body = resp.bytes().await.map_err(|e| SpeechError::ServiceFailure(e.to_string()))?;
            let parsed: TranscriptResponse = serde_json::from_slice(&body)
                .map_err(|e| SpeechError::ServiceFailure(e.to_string()))?;
            Ok(parsed.transcript)
        };
        tokio::time::timeout(Duration::from_millis(self.timeout_ms), fut)
            .await
            .unwrap_or_else(|_| Err(SpeechError::ServiceFailure("timeout".into())))
    }
}
