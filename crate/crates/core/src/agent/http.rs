//! Chat-completions style HTTP backend.

use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{CompletionProvider, ProviderConfig, Role, RolePrompt};
use crate::error::{Error, Result};
use crate::knowledge::EmbeddingVector;

pub struct HttpProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self> {
        if cfg.endpoint.is_none() {
            return Err(Error::InvalidConfig("http backend requires an endpoint".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.request_timeout_secs.max(1))))
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    fn url(&self, path: &str) -> String {
        let base = self.cfg.endpoint.as_deref().unwrap_or_default();
        format!("{}/{path}", base.trim_end_matches('/'))
    }

    /// Posts `body`, retrying up to `max_retries` times on any failure.
    fn post(&self, role: Role, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(&url, body) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    warn!(%url, attempt, attempts, error = %e, "provider request failed");
                    last = e;
                }
            }
            if attempt < attempts && self.cfg.retry_backoff_ms > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.cfg.retry_backoff_ms * u64::from(attempt),
                ));
            }
        }
        Err(Error::Agent {
            role,
            message: format!("{url}: giving up after {attempts} attempts: {last}"),
        })
    }

    fn post_once(&self, url: &str, body: &Value) -> std::result::Result<Value, String> {
        let mut req = self.agent.post(url);
        // Token is read at call time and never stored.
        match std::env::var(&self.cfg.auth) {
            Ok(key) if !key.is_empty() => {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            _ => debug!(var = %self.cfg.auth, "auth variable unset; sending without token"),
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| format!("response body: {e}"))
    }
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, prompt: &RolePrompt) -> Result<String> {
        let mut messages = Vec::new();
        if !prompt.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": prompt.system_text}));
        }
        messages.push(json!({"role": "user", "content": prompt.user_text}));
        let body = json!({"model": self.cfg.model_name, "messages": messages});
        let resp = self.post(prompt.role, "chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Agent {
                role: prompt.role,
                message: "response has no choices[0].message.content".into(),
            })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let model = self
            .cfg
            .embedding_model
            .as_deref()
            .unwrap_or(&self.cfg.model_name);
        let body = json!({"model": model, "input": text});
        // Embedding failures are attributed to the retrieval caller's role slot.
        let resp = self.post(Role::Theorist, "embeddings", &body)?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::invalid("embedding response has no data[0].embedding"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| Error::invalid("non-numeric embedding value")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != self.cfg.dim {
            return Err(Error::InvalidConfig(format!(
                "provider returned dimension {} but configuration declares {}",
                values.len(),
                self.cfg.dim
            )));
        }
        EmbeddingVector::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Backend, Schema};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves `responses` cyclically (status, body) and counts requests.
    fn stub_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let count = Arc::new(AtomicUsize::new(0));
        let counter = count.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                let (status, text) = &responses[n % responses.len()];
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (format!("http://{addr}"), count)
    }

    fn cfg(endpoint: String, max_retries: u32) -> ProviderConfig {
        ProviderConfig {
            backend: Backend::Http,
            endpoint: Some(endpoint),
            max_retries,
            retry_backoff_ms: 0,
            request_timeout_secs: 5,
            dim: 3,
            ..Default::default()
        }
    }

    fn prompt() -> RolePrompt {
        RolePrompt::new(Role::Theorist, "sys", "user", Schema::Hypothesis).unwrap()
    }

    #[test]
    fn returns_first_message_text() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi there"}}]}"#;
        let (url, count) = stub_server(vec![(200, body.into())]);
        let p = HttpProvider::new(cfg(url, 2)).unwrap();
        assert_eq!(p.complete(&prompt()).unwrap(), "hi there");
        assert_eq!(count.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_are_bounded() {
        let (url, count) = stub_server(vec![(500, "{}".into())]);
        let p = HttpProvider::new(cfg(url, 2)).unwrap();
        let err = p.complete(&prompt()).unwrap_err();
        assert!(matches!(err, Error::Agent { .. }));
        assert_eq!(count.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn recovers_within_budget() {
        let ok = r#"{"choices":[{"message":{"content":"ok"}}]}"#;
        let (url, count) = stub_server(vec![(503, "{}".into()), (200, ok.into())]);
        let p = HttpProvider::new(cfg(url, 2)).unwrap();
        assert_eq!(p.complete(&prompt()).unwrap(), "ok");
        assert_eq!(count.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn refused_connection_is_agent_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = HttpProvider::new(cfg(format!("http://127.0.0.1:{port}"), 2)).unwrap();
        let err = p.complete(&prompt()).unwrap_err();
        match err {
            Error::Agent { message, .. } => assert!(message.contains("3 attempts"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embeddings_checked_against_dim() {
        let body = r#"{"data":[{"embedding":[0.1,0.2,0.3]}]}"#;
        let (url, _) = stub_server(vec![(200, body.into())]);
        let p = HttpProvider::new(cfg(url.clone(), 0)).unwrap();
        assert_eq!(p.embed("x").unwrap().values(), &[0.1, 0.2, 0.3]);
        let mut wrong = cfg(url, 0);
        wrong.dim = 4;
        assert!(HttpProvider::new(wrong).unwrap().embed("x").is_err());
    }
}
