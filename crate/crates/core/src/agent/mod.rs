//! Provider contract shared by every agent role and by the embedding step.

mod http;
mod mock;
pub mod parse;
pub mod prompts;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::error::{Error, Result};
use crate::knowledge::{EmbeddingVector, DEFAULT_DIM};

pub use http::HttpProvider;
pub use mock::{hashed_embedding, MockProvider, RecordedCall};
pub use parse::Schema;

pub const DEFAULT_AUTH_ENV: &str = "SCIMIND_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Theorist,
    Pragmatist,
    Moderator,
    Architect,
    Verifier,
    Builder,
    Refiner,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Theorist,
        Role::Pragmatist,
        Role::Moderator,
        Role::Architect,
        Role::Verifier,
        Role::Builder,
        Role::Refiner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Theorist => "theorist",
            Role::Pragmatist => "pragmatist",
            Role::Moderator => "moderator",
            Role::Architect => "architect",
            Role::Verifier => "verifier",
            Role::Builder => "builder",
            Role::Refiner => "refiner",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown role {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolePrompt {
    pub role: Role,
    pub system_text: String,
    pub user_text: String,
    pub response_schema: Schema,
}

impl RolePrompt {
    pub fn new(
        role: Role,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        response_schema: Schema,
    ) -> Result<Self> {
        let user_text = user_text.into();
        if user_text.trim().is_empty() {
            return Err(Error::invalid(format!("{role} prompt has empty user text")));
        }
        Ok(Self {
            role,
            system_text: system_text.into(),
            user_text,
            response_schema,
        })
    }
}

/// A completion and embedding backend. Implementations must tolerate
/// concurrent calls from independent runs.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, prompt: &RolePrompt) -> Result<String>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for &P {
    fn complete(&self, prompt: &RolePrompt) -> Result<String> {
        (**self).complete(prompt)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn complete(&self, prompt: &RolePrompt) -> Result<String> {
        (**self).complete(prompt)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn complete(&self, prompt: &RolePrompt) -> Result<String> {
        (**self).complete(prompt)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Http,
    #[default]
    Mock,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(Backend::Http),
            "mock" => Ok(Backend::Mock),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend {other:?} (expected mock or http)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub backend: Backend,
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: Option<String>,
    pub model_name: String,
    pub embedding_model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth: String,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub request_timeout_secs: u64,
    pub fixture_path: Option<PathBuf>,
    pub dim: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            endpoint: None,
            model_name: "gpt-4o".into(),
            embedding_model: None,
            auth: DEFAULT_AUTH_ENV.into(),
            max_retries: 2,
            retry_backoff_ms: 250,
            request_timeout_secs: 120,
            fixture_path: None,
            dim: DEFAULT_DIM,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("provider dim must be positive".into()));
        }
        match self.backend {
            Backend::Http => {
                if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err(Error::InvalidConfig("http backend requires an endpoint".into()));
                }
                if self.model_name.trim().is_empty() {
                    return Err(Error::InvalidConfig("http backend requires a model name".into()));
                }
            }
            Backend::Mock => {
                if self.fixture_path.is_none() {
                    return Err(Error::InvalidConfig(
                        "mock backend requires a fixture file".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Box<dyn CompletionProvider>> {
    cfg.validate()?;
    debug!(backend = ?cfg.backend, "building provider");
    Ok(match cfg.backend {
        Backend::Http => Box::new(HttpProvider::new(cfg.clone())?),
        Backend::Mock => {
            let path = cfg.fixture_path.as_ref().expect("validated above");
            Box::new(MockProvider::from_file(path)?.with_dim(cfg.dim))
        }
    })
}

/// Sends `prompt`, parses the reply, and on a format failure reprompts exactly
/// once with a correction instruction before surfacing the malformed output.
pub fn ask<T>(
    provider: &dyn CompletionProvider,
    prompt: &RolePrompt,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<T> {
    let raw = provider.complete(prompt)?;
    let reason = match parse(&raw) {
        Ok(v) => return Ok(v),
        Err(Error::MalformedOutput { reason, .. }) => reason,
        Err(other) => return Err(other),
    };
    debug!(role = %prompt.role, %reason, "reprompting after malformed output");
    let retry = RolePrompt {
        user_text: format!(
            "{}\n\n{}",
            prompt.user_text,
            prompts::format_correction(prompt.response_schema, &reason)
        ),
        ..prompt.clone()
    };
    let raw = provider.complete(&retry)?;
    parse(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_round_trips_through_str() {
        for r in Role::ALL {
            assert_eq!(r.as_str().parse::<Role>().unwrap(), r);
        }
        assert!("judge".parse::<Role>().is_err());
    }

    #[test]
    fn prompt_requires_user_text() {
        assert!(RolePrompt::new(Role::Theorist, "sys", "  ", Schema::Hypothesis).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ProviderConfig::default();
        assert!(cfg.validate().is_err());
        cfg.fixture_path = Some("f.json".into());
        cfg.validate().unwrap();
        cfg.backend = Backend::Http;
        assert!(cfg.validate().is_err());
        cfg.endpoint = Some("http://localhost:1".into());
        cfg.validate().unwrap();
    }

    #[test]
    fn ask_reprompts_once() {
        let mock = MockProvider::from_json(
            r#"{"theorist": ["no json here", "still none", "{\"formulation\": \"x\"}"]}"#,
        )
        .unwrap();
        let prompt = RolePrompt::new(Role::Theorist, "", "go", Schema::Hypothesis).unwrap();
        let err = ask(&mock, &prompt, parse::parse_hypothesis).unwrap_err();
        assert!(matches!(err, Error::MalformedOutput { ref raw, .. } if raw == "still none"));
        assert_eq!(mock.call_count(Role::Theorist), 2);
        let calls = mock.calls();
        assert!(calls[1].prompt.user_text.contains("could not be parsed"));
    }

    #[test]
    fn ask_recovers_on_second_reply() {
        let mock = MockProvider::from_json(
            r#"{"theorist": ["garbage", "{\"formulation\": \"dx/dt = x\", \"variables\": [\"x\"]}"]}"#,
        )
        .unwrap();
        let prompt = RolePrompt::new(Role::Theorist, "", "go", Schema::Hypothesis).unwrap();
        let draft = ask(&mock, &prompt, parse::parse_hypothesis).unwrap();
        assert_eq!(draft.variables, ["x"]);
    }
}
