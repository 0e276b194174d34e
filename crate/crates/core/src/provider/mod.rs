//! Chat-style model calls, cost metering, and the two backends.

pub mod http;
pub mod sim;
pub mod transport;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::genome::{ModelPool, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn check(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "at least one message is required".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0,1]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical request document.
    pub fn digest(&self) -> String {
        canonical::sha256_hex(
            canonical::to_canonical_string(self)
                .expect("request is serializable")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatResponse {
    pub fn digest(&self) -> String {
        canonical::sha256_hex(
            canonical::to_canonical_string(self)
                .expect("response is serializable")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed provider reply: {0}")]
    Malformed(String),
}

/// Anything that can answer a chat request.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).chat(req)
    }
}

/// Currency cost of one call under per-1e6-token pricing.
pub fn call_cost(resp: &ChatResponse, spec: &ModelSpec) -> f64 {
    resp.prompt_tokens as f64 / 1e6 * spec.prompt_price
        + resp.completion_tokens as f64 / 1e6 * spec.completion_price
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteredCall {
    pub model_id: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub per_model: BTreeMap<String, ModelUsage>,
    pub total_calls: u64,
    pub total_cost: f64,
}

/// Wraps a backend and keeps an append-only log of priced calls.
pub struct Meter<B> {
    inner: B,
    pool: ModelPool,
    log: Mutex<Vec<MeteredCall>>,
}

impl<B: ChatBackend> Meter<B> {
    pub fn new(inner: B, pool: ModelPool) -> Self {
        Self {
            inner,
            pool,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<MeteredCall> {
        self.log.lock().expect("meter log poisoned").clone()
    }

    pub fn report(&self) -> UsageReport {
        report_from_calls(&self.log.lock().expect("meter log poisoned"))
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Meter<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let spec = self
            .pool
            .get(&req.model_id)
            .ok_or_else(|| ProviderError::UnknownModel(req.model_id.clone()))?;
        let resp = self.inner.chat(req)?;
        let call = MeteredCall {
            model_id: req.model_id.clone(),
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
            cost: call_cost(&resp, spec),
        };
        self.log.lock().expect("meter log poisoned").push(call);
        Ok(resp)
    }
}

/// Aggregate a call log. Sums run in log order.
pub fn report_from_calls(calls: &[MeteredCall]) -> UsageReport {
    let mut report = UsageReport::default();
    for c in calls {
        let entry = report.per_model.entry(c.model_id.clone()).or_default();
        entry.calls += 1;
        entry.prompt_tokens += c.prompt_tokens;
        entry.completion_tokens += c.completion_tokens;
        entry.cost += c.cost;
        report.total_calls += 1;
        report.total_cost += c.cost;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(p: u64, c: u64) -> ChatResponse {
        ChatResponse {
            content: String::new(),
            prompt_tokens: p,
            completion_tokens: c,
        }
    }

    #[test]
    fn linear_pricing() {
        let spec = ModelSpec::new("m", 0.15, 0.60);
        let cost = call_cost(&resp(1000, 500), &spec);
        assert!((cost - 0.00045).abs() <= 1e-12 * 0.00045, "{cost}");
        assert_eq!(call_cost(&resp(0, 0), &spec), 0.0);
        assert_eq!(
            call_cost(&resp(1_000_000, 0), &ModelSpec::new("m", 2.0, 0.0)),
            2.0
        );
    }

    #[test]
    fn report_sums_calls() {
        let calls: Vec<MeteredCall> = [0.001, 0.002, 0.003]
            .iter()
            .enumerate()
            .map(|(i, &cost)| MeteredCall {
                model_id: format!("m{}", i % 2),
                prompt_tokens: 1,
                completion_tokens: 2,
                cost,
            })
            .collect();
        let r = report_from_calls(&calls);
        assert!((r.total_cost - 0.006).abs() < 1e-15);
        assert_eq!(r.total_calls, 3);
        assert_eq!(r.per_model["m0"].calls, 2);
        assert_eq!(report_from_calls(&[]), UsageReport::default());
    }

    #[test]
    fn request_checks() {
        let mut req = ChatRequest {
            model_id: "m".into(),
            messages: vec![],
            temperature: 0.5,
        };
        assert!(req.check().is_err());
        req.messages.push(Message::user("hi"));
        assert!(req.check().is_ok());
        req.temperature = 1.5;
        assert!(req.check().is_err());
    }
}
