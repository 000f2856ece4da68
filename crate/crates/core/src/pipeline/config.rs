use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::ProviderConfig;
use crate::blueprint::SveConfig;
use crate::debate::DebateConfig;
use crate::error::{Error, Result};
use crate::knowledge::DEFAULT_K;
use crate::sandbox::{Sandbox, ScriptedSandbox, ScriptedStep, SubprocessSandbox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeConfig {
    /// Overrides the novelty threshold stored in the knowledge-base manifest.
    pub tau: Option<f64>,
    /// Distill and admit successful runs.
    pub self_evolve: bool,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            tau: None,
            self_evolve: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SandboxConfig {
    Subprocess {
        runner: Vec<String>,
        #[serde(default = "python")]
        language: String,
        #[serde(default = "py")]
        extension: String,
    },
    Scripted {
        steps: Vec<ScriptedStep>,
        #[serde(default)]
        repeat_last: bool,
    },
}

fn python() -> String {
    "Python".into()
}

fn py() -> String {
    "py".into()
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig::Subprocess {
            runner: vec!["scimind-runner".into()],
            language: python(),
            extension: py(),
        }
    }
}

impl SandboxConfig {
    pub fn build(&self) -> Result<Box<dyn Sandbox>> {
        Ok(match self {
            SandboxConfig::Subprocess {
                runner,
                language,
                extension,
            } => Box::new(SubprocessSandbox::new(runner.clone())?.with_language(language, extension)),
            SandboxConfig::Scripted { steps, repeat_last } => {
                let sb = ScriptedSandbox::new(steps.clone());
                Box::new(if *repeat_last { sb.repeating_last() } else { sb })
            }
        })
    }
}

/// Every tunable of a run. Loaded from TOML; absent keys take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub retrieval: RetrievalConfig,
    pub knowledge: KnowledgeConfig,
    pub debate: DebateConfig,
    pub sve: SveConfig,
    pub provider: ProviderConfig,
    pub sandbox: SandboxConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: EngineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    /// Relative fixture and runner paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| e.context(format!("config {}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(f) = cfg.provider.fixture_path.as_mut() {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything except provider-specific requirements, which are
    /// checked when the provider is built.
    pub fn validate(&self) -> Result<()> {
        if self.retrieval.k == 0 {
            return Err(Error::InvalidConfig("retrieval.k must be positive".into()));
        }
        if let Some(tau) = self.knowledge.tau {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidConfig(format!("knowledge.tau {tau} not in (0, 1]")));
            }
        }
        self.debate.validate()?;
        self.sve.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = EngineConfig::default();
        assert_eq!(cfg.retrieval.k, 3);
        assert_eq!((cfg.debate.lambda, cfg.debate.epsilon, cfg.debate.gamma, cfg.debate.r_max), (0.5, 0.02, 0.6, 6));
        assert_eq!((cfg.sve.t_max, cfg.sve.j_max, cfg.sve.sandbox_timeout_secs, cfg.sve.trace_truncation), (3, 3, 120.0, 8000));
        assert_eq!(cfg.provider.dim, 16);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = EngineConfig::from_toml(
            r#"
            [debate]
            r_max = 4
            [knowledge]
            tau = 0.9
            [sandbox]
            kind = "scripted"
            steps = [{ outcome = "pass", write_files = ["out.csv"] }, { outcome = "timeout" }]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.debate.r_max, 4);
        assert_eq!(cfg.debate.gamma, 0.6);
        assert_eq!(cfg.knowledge.tau, Some(0.9));
        assert!(matches!(cfg.sandbox, SandboxConfig::Scripted { ref steps, .. } if steps.len() == 2));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = EngineConfig::default();
        assert_eq!(EngineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(EngineConfig::from_toml("[debate]\nlamda = 0.3").is_err());
        let cfg = EngineConfig::from_toml("[debate]\nlambda = 1.5").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = EngineConfig::from_toml("[retrieval]\nk = 0").unwrap();
        assert!(cfg.validate().is_err());
    }
}
