//! JSON-over-HTTP plumbing shared by the remote embedder and the remote
//! chat generator.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

/// A failed exchange. Every variant is treated as retryable by [`post_with_retry`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("endpoint returned status {status}")]
    Status { status: u16 },
    #[error("response body is not valid JSON: {0}")]
    Body(String),
}

/// Posts a JSON document and returns the decoded JSON response of a 200 reply.
pub trait JsonTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value) -> Result<Value, TransportError>;
}

impl<F> JsonTransport for F
where
    F: Fn(&str, &Value) -> Result<Value, TransportError> + Send + Sync,
{
    fn post_json(&self, url: &str, body: &Value) -> Result<Value, TransportError> {
        self(url, body)
    }
}

/// Bounded retries with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_millis(200), multiplier: 2.0 }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, initial_backoff: Duration::ZERO, multiplier: 1.0 }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.mul_f64(self.multiplier.powi(attempt as i32))
    }
}

/// Retries exhausted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("giving up after {attempts} attempt(s): {last}")]
pub struct RetriesExhausted {
    pub attempts: u32,
    pub last: TransportError,
}

pub fn post_with_retry(
    transport: &dyn JsonTransport,
    policy: &RetryPolicy,
    url: &str,
    body: &Value,
) -> Result<Value, RetriesExhausted> {
    let attempts = policy.max_attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(policy.backoff(attempt - 1));
        }
        match transport.post_json(url, body) {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    Err(RetriesExhausted { attempts, last: last.expect("at least one attempt") })
}

/// A shareable transport handle.
#[derive(Clone)]
pub struct Transport(pub Arc<dyn JsonTransport>);

impl Transport {
    pub fn new(t: impl JsonTransport + 'static) -> Self {
        Transport(Arc::new(t))
    }

    /// The default blocking HTTP client.
    #[cfg(feature = "http")]
    pub fn http(timeout: Duration) -> Self {
        Transport::new(HttpTransport::new(timeout))
    }
}

impl fmt::Debug for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Transport")
    }
}

#[cfg(feature = "http")]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client");
        HttpTransport { client }
    }
}

#[cfg(feature = "http")]
impl JsonTransport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value) -> Result<Value, TransportError> {
        let payload = serde_json::to_vec(body).map_err(|e| TransportError::Body(e.to_string()))?;
        let resp = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(payload)
            .send()
            .map_err(|e| TransportError::Connection(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(TransportError::Status { status });
        }
        let bytes = resp.bytes().map_err(|e| TransportError::Connection(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| TransportError::Body(e.to_string()))
    }
}
