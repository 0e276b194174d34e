//! JSON-over-HTTP transport with bounded exponential backoff.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    /// HTTP status when the server answered at all.
    pub status: Option<u16>,
}

impl TransportError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            status: None,
        }
    }
}

/// POSTs a JSON body and returns the parsed JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<Value, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> Result<Value, TransportError> {
        (**self).post_json(url, bearer, body)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested delays without sleeping.
#[derive(Debug, Default)]
pub struct NoSleep {
    pub delays: std::sync::Mutex<Vec<Duration>>,
}

impl Sleeper for NoSleep {
    fn sleep(&self, duration: Duration) {
        self.delays
            .lock()
            .expect("delay log poisoned")
            .push(duration);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n` (0-based; attempt 0 has none).
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            self.base_delay * 2u32.saturating_pow(attempt - 1)
        }
    }

    /// Run `op` until it succeeds or attempts run out. Returns the last
    /// error together with the number of attempts made.
    pub fn run<T>(
        &self,
        sleeper: &dyn Sleeper,
        mut op: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T, (u32, TransportError)> {
        let attempts = self.attempts.max(1);
        let mut last = TransportError::new("no attempt made");
        for attempt in 0..attempts {
            if attempt > 0 {
                sleeper.sleep(self.delay_before(attempt));
            }
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!(
                        "transport attempt {} of {attempts} failed: {e}",
                        attempt + 1
                    );
                    last = e;
                }
            }
        }
        Err((attempts, last))
    }
}

#[cfg(feature = "http")]
pub use ureq_transport::UreqTransport;

#[cfg(feature = "http")]
mod ureq_transport {
    use super::*;

    /// Blocking transport on top of `ureq`.
    pub struct UreqTransport {
        agent: ureq::Agent,
    }

    impl UreqTransport {
        pub fn new(timeout: Duration) -> Self {
            let config = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build();
            Self {
                agent: config.into(),
            }
        }
    }

    impl Default for UreqTransport {
        fn default() -> Self {
            Self::new(Duration::from_secs(120))
        }
    }

    impl Transport for UreqTransport {
        fn post_json(
            &self,
            url: &str,
            bearer: Option<&str>,
            body: &Value,
        ) -> Result<Value, TransportError> {
            let mut req = self
                .agent
                .post(url)
                .header("Content-Type", "application/json");
            if let Some(key) = bearer {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req
                .send_json(body)
                .map_err(|e| TransportError::new(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| TransportError::new(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(TransportError {
                    message: format!("HTTP {status}: {text}"),
                    status: Some(status),
                });
            }
            serde_json::from_str(&text).map_err(|e| TransportError {
                message: format!("invalid JSON reply: {e}"),
                status: Some(status),
            })
        }
    }
}
