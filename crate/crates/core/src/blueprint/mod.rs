//! Blueprint: the typed intermediate specification between an agreed
//! hypothesis and generated code (variables, functions, ingestion, outputs).

mod sve;
mod verify;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};

pub use sve::{
    build_code, code_executability, construct_blueprint, execute_code, refine_code,
    revise_blueprint, run_sve, tail_chars, CodeArtifact, ExecutionReport, SveConfig, SveOutcome,
    VerificationRecord,
};
pub use verify::{
    builtin_predicates, data_availability, dependency_acyclicity, dimensional_consistency,
    find_cycle, variable_coverage, verify_blueprint, PredicateResult, Verification,
    BUILTIN_PREDICATES,
};

/// One axis of a variable: a fixed extent, or a symbolic size optionally bound
/// to an extent (`"T"` or `"T=365"`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Dim {
    Fixed(u64),
    Symbolic { name: String, size: Option<u64> },
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Fixed(n) => write!(f, "{n}"),
            Dim::Symbolic { name, size: None } => f.write_str(name),
            Dim::Symbolic { name, size: Some(n) } => write!(f, "{name}={n}"),
        }
    }
}

impl Dim {
    fn parse_symbolic(s: &str) -> std::result::Result<Dim, String> {
        let s = s.trim();
        if let Ok(n) = s.parse::<u64>() {
            return if n > 0 { Ok(Dim::Fixed(n)) } else { Err("dimension must be positive".into()) };
        }
        let (name, size) = match s.split_once('=') {
            Some((n, v)) => {
                let v: u64 = v
                    .trim()
                    .parse()
                    .map_err(|_| format!("symbolic size {s:?} has a non-integer binding"))?;
                if v == 0 {
                    return Err(format!("symbolic size {s:?} bound to zero"));
                }
                (n.trim(), Some(v))
            }
            None => (s, None),
        };
        if name.is_empty() {
            return Err("empty symbolic size name".into());
        }
        Ok(Dim::Symbolic { name: name.to_string(), size })
    }
}

impl Serialize for Dim {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Dim::Fixed(n) => s.serialize_u64(*n),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Dim {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match Value::deserialize(d)? {
            Value::Number(n) => match n.as_u64() {
                Some(v) if v > 0 => Ok(Dim::Fixed(v)),
                _ => Err(D::Error::custom(format!("dimension {n} must be a positive integer"))),
            },
            Value::String(s) => Dim::parse_symbolic(&s).map_err(D::Error::custom),
            other => Err(D::Error::custom(format!("dimension {other} must be an integer or name"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub type_tag: String,
    #[serde(default)]
    pub dims: Vec<Dim>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub name: String,
    #[serde(default)]
    pub signature: String,
    #[serde(default)]
    pub dependencies: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionSource {
    pub name: String,
    #[serde(default)]
    pub format: String,
    #[serde(default)]
    pub fields: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ingestion {
    #[serde(default)]
    pub sources: Vec<IngestionSource>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    #[serde(default)]
    pub format: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub files: Vec<OutputFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blueprint {
    pub variables: Vec<VariableDecl>,
    pub functions: Vec<FunctionDecl>,
    #[serde(default)]
    pub ingestion: Ingestion,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub revision: u32,
}

impl Blueprint {
    /// Deserializes and checks parse-time invariants: unique non-empty names
    /// and resolvable dependencies. Cycles are left to verification.
    pub fn from_value(value: Value) -> Result<Self> {
        let bp: Blueprint = serde_json::from_value(value)
            .map_err(|e| Error::invalid(format!("blueprint schema: {e}")))?;
        bp.check_structure()?;
        Ok(bp)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("blueprint JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn check_structure(&self) -> Result<()> {
        let mut names = HashSet::new();
        for name in self
            .variables
            .iter()
            .map(|v| &v.name)
            .chain(self.functions.iter().map(|f| &f.name))
        {
            if name.trim().is_empty() {
                return Err(Error::invalid("blueprint declares an empty name"));
            }
            if !names.insert(name.as_str()) {
                return Err(Error::invalid(format!("blueprint name {name:?} declared twice")));
            }
        }
        for f in &self.functions {
            if let Some(dep) = f.dependencies.iter().find(|d| !names.contains(d.as_str())) {
                return Err(Error::invalid(format!(
                    "function {} depends on undeclared name {dep:?}",
                    f.name
                )));
            }
        }
        for o in &self.output.files {
            let p = std::path::Path::new(&o.name);
            let escapes = p.is_absolute()
                || p.components().any(|c| matches!(c, std::path::Component::ParentDir));
            if o.name.trim().is_empty() || escapes {
                return Err(Error::invalid(format!(
                    "output file {:?} must be a relative path inside the working directory",
                    o.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("blueprint serializes")
    }
}
