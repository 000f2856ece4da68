//! Extraction of structured agent replies.
//!
//! Replies carry one JSON object, optionally fenced and surrounded by prose.
//! The first well-formed object wins; anything after it is ignored.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::blueprint::{Blueprint, PredicateResult};
use crate::debate::{CriterionScore, Violation};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Hypothesis,
    Critique,
    ScoreSheet,
    Blueprint,
    Verdicts,
    Code,
}

impl Schema {
    pub fn as_str(self) -> &'static str {
        match self {
            Schema::Hypothesis => "hypothesis",
            Schema::Critique => "critique",
            Schema::ScoreSheet => "score-sheet",
            Schema::Blueprint => "blueprint",
            Schema::Verdicts => "verdicts",
            Schema::Code => "code",
        }
    }
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Schema::Hypothesis,
            Schema::Critique,
            Schema::ScoreSheet,
            Schema::Blueprint,
            Schema::Verdicts,
            Schema::Code,
        ]
        .into_iter()
        .find(|x| x.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unregistered schema {s:?}")))
    }
}

pub(crate) fn malformed(schema: Schema, reason: impl Into<String>, raw: &str) -> Error {
    Error::MalformedOutput {
        schema: schema.as_str().into(),
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

/// First JSON object embedded in `raw`.
pub fn extract_block(raw: &str) -> Option<Value> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn typed<T: DeserializeOwned>(raw: &str, schema: Schema) -> Result<T> {
    let block = extract_block(raw)
        .ok_or_else(|| malformed(schema, "no JSON object found in reply", raw))?;
    serde_json::from_value(block).map_err(|e| malformed(schema, e.to_string(), raw))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisDraft {
    pub formulation: String,
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default)]
    pub assumptions: Vec<String>,
    #[serde(default)]
    pub equations: Vec<String>,
}

pub fn parse_hypothesis(raw: &str) -> Result<HypothesisDraft> {
    let d: HypothesisDraft = typed(raw, Schema::Hypothesis)?;
    if d.formulation.trim().is_empty() {
        return Err(malformed(Schema::Hypothesis, "empty formulation", raw));
    }
    if d.variables.iter().any(|v| v.trim().is_empty()) {
        return Err(malformed(Schema::Hypothesis, "empty variable symbol", raw));
    }
    Ok(d)
}

#[derive(Deserialize)]
struct CritiqueDoc {
    violations: Vec<ViolationDoc>,
}

#[derive(Deserialize)]
struct ViolationDoc {
    violated_criterion: Option<String>,
    conflicting_evidence: Option<String>,
    remediation: Option<String>,
}

pub fn parse_critique(raw: &str) -> Result<Vec<Violation>> {
    let doc: CritiqueDoc = typed(raw, Schema::Critique)?;
    doc.violations
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let field = |value: Option<String>, name: &str| {
                value
                    .filter(|s| !s.trim().is_empty())
                    .ok_or_else(|| malformed(Schema::Critique, format!("violation {i}: missing {name}"), raw))
            };
            Ok(Violation {
                violated_criterion: field(v.violated_criterion, "violated_criterion")?,
                conflicting_evidence: field(v.conflicting_evidence, "conflicting_evidence")?,
                remediation: field(v.remediation, "remediation")?,
            })
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Num(f64),
    Text(String),
}

#[derive(Deserialize)]
struct ScoreDoc {
    criterion: String,
    value: Number,
    #[serde(default)]
    justification: String,
}

#[derive(Deserialize)]
struct ScoreSheetDoc {
    scores: Vec<ScoreDoc>,
}

/// Parses a score sheet, clamping out-of-range values into `[0, 1]`.
pub fn parse_score_sheet(raw: &str) -> Result<Vec<CriterionScore>> {
    let doc: ScoreSheetDoc = typed(raw, Schema::ScoreSheet)?;
    doc.scores
        .into_iter()
        .map(|s| {
            let value = match s.value {
                Number::Num(v) => v,
                Number::Text(t) => t.trim().parse::<f64>().map_err(|_| {
                    malformed(Schema::ScoreSheet, format!("{}: score {t:?} is not a number", s.criterion), raw)
                })?,
            };
            if !value.is_finite() {
                return Err(malformed(Schema::ScoreSheet, format!("{}: non-finite score", s.criterion), raw));
            }
            let clamped = value.clamp(0.0, 1.0);
            if clamped != value {
                warn!(criterion = %s.criterion, value, clamped, "score outside [0, 1] clamped");
            }
            Ok(CriterionScore {
                criterion_name: s.criterion,
                value: clamped,
                justification: s.justification,
            })
        })
        .collect()
}

pub fn parse_blueprint(raw: &str) -> Result<Blueprint> {
    let block = extract_block(raw)
        .ok_or_else(|| malformed(Schema::Blueprint, "no JSON object found in reply", raw))?;
    Blueprint::from_value(block).map_err(|e| match e {
        Error::InvalidInput(reason) => malformed(Schema::Blueprint, reason, raw),
        Error::Json(err) => malformed(Schema::Blueprint, err.to_string(), raw),
        other => other,
    })
}

#[derive(Deserialize)]
struct VerdictDoc {
    name: String,
    passed: bool,
    #[serde(default)]
    diagnostic: String,
}

#[derive(Deserialize)]
struct VerdictsDoc {
    #[serde(default)]
    predicates: Vec<VerdictDoc>,
}

/// Semantic predicate verdicts, forced into binary form with a diagnostic
/// present exactly when the predicate failed.
pub fn parse_verdicts(raw: &str) -> Result<Vec<PredicateResult>> {
    let doc: VerdictsDoc = typed(raw, Schema::Verdicts)?;
    doc.predicates
        .into_iter()
        .map(|v| {
            if v.name.trim().is_empty() {
                return Err(malformed(Schema::Verdicts, "predicate with empty name", raw));
            }
            Ok(if v.passed {
                PredicateResult::pass(v.name)
            } else {
                let diag = if v.diagnostic.trim().is_empty() {
                    "verifier reported failure without a diagnostic".to_string()
                } else {
                    v.diagnostic
                };
                PredicateResult::fail(v.name, diag)
            })
        })
        .collect()
}

/// Program source: the body of the first fenced block if any, else the whole reply.
pub fn parse_code(raw: &str) -> Result<String> {
    let source = match raw.find("```") {
        Some(start) => {
            let after = &raw[start + 3..];
            let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
            let body = &after[body_start..];
            match body.find("```") {
                Some(end) => &body[..end],
                None => body,
            }
        }
        None => raw,
    };
    let source = source.trim_matches('\n');
    if source.trim().is_empty() {
        return Err(malformed(Schema::Code, "empty program source", raw));
    }
    Ok(format!("{}\n", source.trim_end()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum StructuredOutput {
    Hypothesis(HypothesisDraft),
    Critique(Vec<Violation>),
    ScoreSheet(Vec<CriterionScore>),
    Blueprint(Blueprint),
    Verdicts(Vec<PredicateResult>),
    Code(String),
}

pub fn parse_structured_output(raw: &str, schema: Schema) -> Result<StructuredOutput> {
    Ok(match schema {
        Schema::Hypothesis => StructuredOutput::Hypothesis(parse_hypothesis(raw)?),
        Schema::Critique => StructuredOutput::Critique(parse_critique(raw)?),
        Schema::ScoreSheet => StructuredOutput::ScoreSheet(parse_score_sheet(raw)?),
        Schema::Blueprint => StructuredOutput::Blueprint(parse_blueprint(raw)?),
        Schema::Verdicts => StructuredOutput::Verdicts(parse_verdicts(raw)?),
        Schema::Code => StructuredOutput::Code(parse_code(raw)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critique_block_with_prose() {
        let raw = "Here is my review:\n```json\n{\"violations\": [{\"violated_criterion\": \"data_availability\", \
                   \"conflicting_evidence\": \"no hourly data\", \"remediation\": \"aggregate daily\"}]}\n```\n\
                   Let me know {if} you need more.";
        let v = parse_critique(raw).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].remediation, "aggregate daily");
    }

    #[test]
    fn critique_missing_remediation_is_malformed() {
        let raw = r#"{"violations": [{"violated_criterion": "a", "conflicting_evidence": "b"}]}"#;
        assert!(matches!(parse_critique(raw), Err(Error::MalformedOutput { .. })));
        let blank = r#"{"violations": [{"violated_criterion": "a", "conflicting_evidence": "b", "remediation": " "}]}"#;
        assert!(parse_critique(blank).is_err());
    }

    #[test]
    fn critique_without_violations_is_legal() {
        assert!(parse_critique(r#"{"violations": []}"#).unwrap().is_empty());
    }

    #[test]
    fn no_block_is_malformed_with_raw() {
        match parse_structured_output("just words", Schema::Critique) {
            Err(Error::MalformedOutput { raw, schema, .. }) => {
                assert_eq!(raw, "just words");
                assert_eq!(schema, "critique");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_object_wins() {
        let raw = r#"noise {bad json} {"formulation": "first", "variables": ["S"]} {"formulation": "second"}"#;
        assert_eq!(parse_hypothesis(raw).unwrap().formulation, "first");
    }

    #[test]
    fn score_values_are_clamped() {
        let raw = r#"{"scores": [{"criterion": "a", "value": "1.3"}, {"criterion": "b", "value": -0.2}, {"criterion": "c", "value": 0.5}]}"#;
        let s = parse_score_sheet(raw).unwrap();
        assert_eq!(s.iter().map(|c| c.value).collect::<Vec<_>>(), [1.0, 0.0, 0.5]);
        assert!(parse_score_sheet(r#"{"scores": [{"criterion": "a", "value": "high"}]}"#).is_err());
    }

    #[test]
    fn verdicts_forced_binary() {
        let raw = r#"{"predicates": [{"name": "units", "passed": true, "diagnostic": "fine"}, {"name": "scope", "passed": false}]}"#;
        let v = parse_verdicts(raw).unwrap();
        assert!(v[0].passed && v[0].diagnostic.is_empty());
        assert!(!v[1].passed && !v[1].diagnostic.is_empty());
    }

    #[test]
    fn code_extraction() {
        assert_eq!(parse_code("```python\nprint(1)\n```\ndone").unwrap(), "print(1)\n");
        assert_eq!(parse_code("print(2)").unwrap(), "print(2)\n");
        assert!(parse_code("").is_err());
        assert!(parse_code("```python\n```").is_err());
    }

    #[test]
    fn schema_names() {
        assert_eq!("score-sheet".parse::<Schema>().unwrap(), Schema::ScoreSheet);
        assert!("essay".parse::<Schema>().is_err());
    }
}
