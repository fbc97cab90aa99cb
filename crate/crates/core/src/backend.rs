//! Model backends reached over HTTP, and the error type every backend
//! (remote or mock) reports through.
//!
//! Routes spoken by [`SidecarClient`]:
//!
//! | route         | request                                   | response                               |
//! |---------------|-------------------------------------------|----------------------------------------|
//! | `/parse`      | `{passage_id, text}`                      | `{passage_id, entities, triples}`      |
//! | `/generate`   | `{passage, answer\|null, clues, style, top_p, beam_width, num_return, max_new_tokens}` | `{questions:[{text, perplexity\|null}]}` |
//! | `/perplexity` | `{texts}`                                 | `{perplexities}`                       |
//! | `/embed`      | `{texts}`                                 | `{vectors, dim}`                       |
//! | `/qa`         | `{question, passage}`                     | `{answer_text, start, end}`            |
//! | `/healthz`    | GET                                       | `{version, capabilities}`              |

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;
use crate::filters::{EmbeddingBackend, EmbeddingVector, QaBackend, QaPrediction};
use crate::genclient::{Capabilities, GenerationBackend, GenerationRequest, RawQuestion};
use crate::semgraph::ParseRecord;

/// Environment variable holding the sidecar base URL.
pub const SIDECAR_URL_ENV: &str = "ADVQA_SIDECAR_URL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Connection failures and timeouts. Retryable.
    #[error("transport error talking to {endpoint} after {elapsed:?}: {message}")]
    Transport {
        endpoint: String,
        message: String,
        elapsed: Duration,
    },
    /// The backend answered, but not with a valid response. Not retryable.
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("backend `{backend}` does not support {what}")]
    Unsupported { backend: String, what: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }

    pub fn protocol(endpoint: impl Into<String>, message: impl Into<String>) -> Self {
        BackendError::Protocol {
            endpoint: endpoint.into(),
            message: message.into(),
        }
    }
}

/// Calls `op` until it succeeds, fails with a non-retryable error, or
/// `retries` extra attempts are spent.
pub fn with_retries<T>(
    retries: usize,
    backoff: Duration,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_retryable() && attempt < retries => {
                attempt += 1;
                log::warn!("retrying after transport error (attempt {attempt}): {e}");
                std::thread::sleep(backoff * attempt as u32);
            }
            other => return other,
        }
    }
}

#[derive(Debug, Serialize)]
struct ParseBody<'a> {
    passage_id: &'a str,
    text: &'a str,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateBody {
    pub passage: String,
    pub answer: Option<String>,
    pub clues: Vec<String>,
    pub style: String,
    pub top_p: f64,
    pub beam_width: usize,
    pub num_return: usize,
    pub max_new_tokens: usize,
}

impl From<&GenerationRequest> for GenerateBody {
    fn from(req: &GenerationRequest) -> Self {
        let p = &req.prompt;
        GenerateBody {
            passage: p.passage_text.clone(),
            answer: p.answer_text.clone(),
            clues: p.clue_texts.clone(),
            style: p.style.as_str().to_owned(),
            top_p: req.decoding.top_p,
            beam_width: req.decoding.beam_width,
            num_return: req.decoding.num_return,
            max_new_tokens: req.decoding.max_new_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
struct GenerateReply {
    questions: Vec<RawQuestion>,
}

#[derive(Debug, Serialize)]
struct TextsBody<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct PerplexityReply {
    perplexities: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

#[derive(Debug, Serialize)]
struct QaBody<'a> {
    question: &'a str,
    passage: &'a str,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub version: String,
    pub capabilities: Capabilities,
}

/// Blocking HTTP client for the model sidecar.
#[derive(Debug, Clone)]
pub struct SidecarClient {
    base_url: String,
    agent: ureq::Agent,
    capabilities: Capabilities,
    retries: usize,
    backoff: Duration,
}

impl SidecarClient {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            agent,
            capabilities: Capabilities::default(),
            retries: 0,
            backoff: Duration::from_millis(200),
        }
    }

    /// Retries transport failures up to `retries` times with linear backoff.
    pub fn with_retry_policy(mut self, retries: usize, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    /// Reads the sidecar URL from [`SIDECAR_URL_ENV`].
    pub fn from_env(timeout: Duration) -> Option<Self> {
        std::env::var(SIDECAR_URL_ENV).ok().map(|url| Self::new(url, timeout))
    }

    pub fn with_capabilities(mut self, capabilities: Capabilities) -> Self {
        self.capabilities = capabilities;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn endpoint(&self, route: &str) -> String {
        format!("{}{}", self.base_url, route)
    }

    fn finish<T: DeserializeOwned>(
        endpoint: String,
        started: Instant,
        sent: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, BackendError> {
        let transport = |e: ureq::Error| BackendError::Transport {
            endpoint: endpoint.clone(),
            message: e.to_string(),
            elapsed: started.elapsed(),
        };
        let mut resp = sent.map_err(transport)?;
        let status = resp.status();
        let body = resp.body_mut().read_to_string().map_err(transport)?;
        if !status.is_success() {
            return Err(BackendError::protocol(
                &endpoint,
                format!("HTTP {}: {}", status.as_u16(), body.trim()),
            ));
        }
        serde_json::from_str(&body)
            .map_err(|e| BackendError::protocol(&endpoint, format!("malformed response: {e}")))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, route: &str, body: &B) -> Result<T, BackendError> {
        with_retries(self.retries, self.backoff, || {
            let endpoint = self.endpoint(route);
            let started = Instant::now();
            let sent = self.agent.post(&endpoint).send_json(body);
            Self::finish(endpoint, started, sent)
        })
    }

    pub fn health(&self) -> Result<Health, BackendError> {
        let endpoint = self.endpoint("/healthz");
        let started = Instant::now();
        let sent = self.agent.get(&endpoint).call();
        Self::finish(endpoint, started, sent)
    }

    /// Queries `/healthz` and adopts the advertised capability flags.
    pub fn connect(self) -> Result<Self, BackendError> {
        let health = self.health()?;
        Ok(self.with_capabilities(health.capabilities))
    }

    pub fn parse(&self, passage: &Passage) -> Result<ParseRecord, BackendError> {
        let record: ParseRecord = self.post(
            "/parse",
            &ParseBody {
                passage_id: &passage.id,
                text: &passage.text,
            },
        )?;
        if record.passage_id != passage.id {
            return Err(BackendError::protocol(
                self.endpoint("/parse"),
                format!("reply for passage `{}`, expected `{}`", record.passage_id, passage.id),
            ));
        }
        Ok(record)
    }
}

impl GenerationBackend for SidecarClient {
    fn backend_id(&self) -> String {
        format!("sidecar:{}", self.base_url)
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn generate_raw(&self, request: &GenerationRequest) -> Result<Vec<RawQuestion>, BackendError> {
        let reply: GenerateReply = self.post("/generate", &GenerateBody::from(request))?;
        Ok(reply.questions)
    }

    fn perplexity(&self, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        let reply: PerplexityReply = self.post("/perplexity", &TextsBody { texts })?;
        if reply.perplexities.len() != texts.len() {
            return Err(BackendError::protocol(
                self.endpoint("/perplexity"),
                format!("{} perplexities for {} texts", reply.perplexities.len(), texts.len()),
            ));
        }
        Ok(reply.perplexities)
    }
}

impl EmbeddingBackend for SidecarClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let reply: EmbedReply = self.post("/embed", &TextsBody { texts })?;
        let endpoint = self.endpoint("/embed");
        if reply.vectors.len() != texts.len() {
            return Err(BackendError::protocol(
                endpoint,
                format!("{} vectors for {} texts", reply.vectors.len(), texts.len()),
            ));
        }
        reply
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != reply.dim {
                    return Err(BackendError::protocol(
                        &endpoint,
                        format!("vector of length {} but dim {}", v.len(), reply.dim),
                    ));
                }
                Ok(EmbeddingVector::from_values(v))
            })
            .collect()
    }
}

impl QaBackend for SidecarClient {
    fn answer(&self, question: &str, passage: &Passage) -> Result<QaPrediction, BackendError> {
        self.post(
            "/qa",
            &QaBody {
                question,
                passage: &passage.text,
            },
        )
    }
}
