//! Clinical-event learning inputs: the token-template serialization, a
//! deterministic hashing text encoder, and an HTTP client for plugging
//! in an external embedding service (e.g. a medical language model).
//!
//! Encoder outputs are non-differentiable inputs to the network; only
//! the aggregation parameters after them train. The hashing encoder is
//! stateless and thread-safe.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::ClinicalEvent;
use crate::numkit::Tensor;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("encoder requires at least one text")]
    EmptyInput,
    #[error("transport failure contacting {endpoint}: {detail} (retriable)")]
    Transport { endpoint: String, detail: String },
    #[error("encoder service returned status {status}: {body_excerpt}")]
    Http { status: u16, body_excerpt: String },
    #[error("encoder dimension mismatch: service advertised {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("encoder returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("invalid encoder response: {0}")]
    BadResponse(String),
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
}

/// An event rendered to the token template: `[CLS]` then the event
/// type, then `[SEP]`-separated feature names and values, single-space
/// joined and order-preserving.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventText {
    pub text: String,
    pub event_type: String,
}

pub fn serialize_event(event: &ClinicalEvent) -> EventText {
    let mut text = format!("[CLS] {}", event.event_type);
    for (name, value) in &event.features {
        text.push_str(" [SEP] ");
        text.push_str(name);
        text.push_str(" [SEP] ");
        text.push_str(value);
    }
    EventText {
        text,
        event_type: event.event_type.clone(),
    }
}

/// Maps batches of texts to fixed-width embedding rows.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    /// One row per input text, in input order.
    fn encode(&self, texts: &[&str]) -> Result<Tensor, EncodeError>;
}

/// Token-level feature hashing: each whitespace token lands in a seeded
/// hash bucket with a sign, and the signed counts are L2-normalized.
/// Rows depend only on their own text, never on batch position.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
    seed: u64,
}

impl HashingEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EncodeError> {
        if dim < 8 {
            return Err(EncodeError::BadConfig(format!(
                "hashing dimension {dim} is below the minimum of 8"
            )));
        }
        Ok(Self { dim, seed })
    }

    fn encode_one(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim];
        for token in text.split_whitespace() {
            let h = hash64(self.seed, token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut acc {
                *v /= norm;
            }
        }
        acc
    }
}

impl TextEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[&str]) -> Result<Tensor, EncodeError> {
        if texts.is_empty() {
            return Err(EncodeError::EmptyInput);
        }
        let rows: Vec<Vec<f64>> = texts.iter().map(|t| self.encode_one(t)).collect();
        Tensor::from_rows(&rows).map_err(|e| EncodeError::BadResponse(e.to_string()))
    }
}

/// FNV-1a over the seed bytes then the payload. Stable across platforms
/// and rustc versions, which the std hasher does not promise.
fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[derive(Debug, Deserialize)]
struct InfoResponse {
    dim: usize,
}

#[derive(Debug, Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EncodeResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an external embedding service speaking the two-endpoint
/// JSON protocol: `GET /info` -> `{"dim": n}` and `POST /encode` with
/// `{"texts": [...]}` -> `{"vectors": [[...], ...]}` in request order.
#[derive(Debug)]
pub struct RemoteEncoder {
    agent: ureq::Agent,
    endpoint: String,
    dim: usize,
    retries: u32,
}

impl RemoteEncoder {
    /// Fetches the service dimension and pins it for the connection's
    /// lifetime; later responses are validated against it.
    pub fn connect(
        endpoint: &str,
        timeout: std::time::Duration,
        retries: u32,
    ) -> Result<Self, EncodeError> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        let agent: ureq::Agent = config.into();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let url = format!("{endpoint}/info");
        let info: InfoResponse = with_retries(retries, &endpoint, || {
            let mut res = agent
                .get(&url)
                .call()
                .map_err(|e| transport(&endpoint, e))?;
            check_status(&mut res)?;
            res.body_mut()
                .read_json()
                .map_err(|e| EncodeError::BadResponse(e.to_string()))
        })?;
        if info.dim < 1 {
            return Err(EncodeError::BadConfig(
                "service advertised a zero embedding dimension".into(),
            ));
        }
        Ok(Self {
            agent,
            endpoint,
            dim: info.dim,
            retries,
        })
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[&str]) -> Result<Tensor, EncodeError> {
        if texts.is_empty() {
            return Err(EncodeError::EmptyInput);
        }
        let url = format!("{}/encode", self.endpoint);
        let body: EncodeResponse = with_retries(self.retries, &self.endpoint, || {
            let mut res = self
                .agent
                .post(&url)
                .send_json(EncodeRequest { texts })
                .map_err(|e| transport(&self.endpoint, e))?;
            check_status(&mut res)?;
            res.body_mut()
                .read_json()
                .map_err(|e| EncodeError::BadResponse(e.to_string()))
        })?;
        if body.vectors.len() != texts.len() {
            return Err(EncodeError::CountMismatch {
                expected: texts.len(),
                got: body.vectors.len(),
            });
        }
        for v in &body.vectors {
            if v.len() != self.dim {
                return Err(EncodeError::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        Tensor::from_rows(&body.vectors).map_err(|e| EncodeError::BadResponse(e.to_string()))
    }
}

fn transport(endpoint: &str, e: ureq::Error) -> EncodeError {
    EncodeError::Transport {
        endpoint: endpoint.to_string(),
        detail: e.to_string(),
    }
}

fn check_status(res: &mut ureq::http::Response<ureq::Body>) -> Result<(), EncodeError> {
    let status = res.status().as_u16();
    if (200..300).contains(&status) {
        return Ok(());
    }
    let body = res
        .body_mut()
        .read_to_string()
        .unwrap_or_else(|_| String::new());
    let body_excerpt: String = body.chars().take(200).collect();
    Err(EncodeError::Http {
        status,
        body_excerpt,
    })
}

fn with_retries<T>(
    retries: u32,
    endpoint: &str,
    mut attempt: impl FnMut() -> Result<T, EncodeError>,
) -> Result<T, EncodeError> {
    let mut last = None;
    for i in 0..=retries {
        match attempt() {
            Ok(v) => return Ok(v),
            // Only transport failures are worth retrying; HTTP errors and
            // malformed payloads will not fix themselves.
            Err(e @ EncodeError::Transport { .. }) => {
                log::warn!("encoder attempt {} against {endpoint} failed: {e}", i + 1);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| EncodeError::Transport {
        endpoint: endpoint.to_string(),
        detail: "no attempts made".into(),
    }))
}

/// Per-type event vectors m_q for one visit: every event is serialized
/// and encoded separately, then events sharing a type are mean-pooled
/// into a single row. Types keep first-appearance order. `None` when the
/// visit has no events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRepresentation {
    pub types: Vec<String>,
    pub vectors: Tensor,
}

pub fn encode_visit_events(
    events: &[ClinicalEvent],
    encoder: &dyn TextEncoder,
) -> Result<Option<EventRepresentation>, EncodeError> {
    if events.is_empty() {
        return Ok(None);
    }
    let serialized: Vec<EventText> = events.iter().map(serialize_event).collect();
    let texts: Vec<&str> = serialized.iter().map(|e| e.text.as_str()).collect();
    let encoded = encoder.encode(&texts)?;

    let mut types: Vec<String> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, e) in serialized.iter().enumerate() {
        match types.iter().position(|t| *t == e.event_type) {
            Some(j) => members[j].push(i),
            None => {
                types.push(e.event_type.clone());
                members.push(vec![i]);
            }
        }
    }
    let dim = encoder.dim();
    let rows: Vec<Vec<f64>> = members
        .iter()
        .map(|idx| {
            let mut acc = vec![0.0f64; dim];
            for &i in idx {
                for (a, v) in acc.iter_mut().zip(encoded.row(i)) {
                    *a += v;
                }
            }
            let n = idx.len() as f64;
            acc.iter().map(|v| v / n).collect()
        })
        .collect();
    let vectors = Tensor::from_rows(&rows).map_err(|e| EncodeError::BadResponse(e.to_string()))?;
    Ok(Some(EventRepresentation { types, vectors }))
}
