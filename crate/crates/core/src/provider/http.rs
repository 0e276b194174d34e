//! Chat-completion HTTP backend.
//!
//! Wire format: POST `{"model", "messages": [{"role","content"}], "temperature"}`;
//! the reply is read from `choices[0].message.content` and
//! `usage.{prompt_tokens,completion_tokens}`.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use super::transport::{RetryPolicy, Sleeper, ThreadSleeper, Transport};
use super::{ChatBackend, ChatRequest, ChatResponse, ProviderError};

pub const DEFAULT_API_KEY_ENV: &str = "EVOFLOW_API_KEY";

pub struct HttpChatBackend<T> {
    endpoint: String,
    api_key: Option<String>,
    transport: T,
    retry: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
    known_models: Option<BTreeSet<String>>,
}

impl<T: Transport> HttpChatBackend<T> {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, transport: T) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            transport,
            retry: RetryPolicy::default(),
            sleeper: Box::new(ThreadSleeper),
            known_models: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Box<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Reject requests for models outside this set before touching the wire.
    pub fn with_known_models<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.known_models = Some(ids.into_iter().map(Into::into).collect());
        self
    }
}

pub fn request_body(req: &ChatRequest) -> Value {
    json!({
        "model": req.model_id,
        "messages": req.messages,
        "temperature": req.temperature,
    })
}

pub fn parse_reply(reply: &Value) -> Result<ChatResponse, ProviderError> {
    let content = reply
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?;
    let tokens = |field: &str| {
        reply
            .pointer(&format!("/usage/{field}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(ChatResponse {
        content: content.to_string(),
        prompt_tokens: tokens("prompt_tokens"),
        completion_tokens: tokens("completion_tokens"),
    })
}

impl<T: Transport> ChatBackend for HttpChatBackend<T> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if let Some(known) = &self.known_models {
            if !known.contains(&req.model_id) {
                return Err(ProviderError::UnknownModel(req.model_id.clone()));
            }
        }
        req.check()?;
        let body = request_body(req);
        let reply = self
            .retry
            .run(self.sleeper.as_ref(), || {
                self.transport
                    .post_json(&self.endpoint, self.api_key.as_deref(), &body)
            })
            .map_err(|(attempts, e)| ProviderError::Transport {
                attempts,
                message: e.message,
            })?;
        parse_reply(&reply)
    }
}
