//! Canned mock scenario: fixtures, a problem bundle and a config that run
//! end to end without a network or an interpreter.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::agent::MockProvider;
use crate::debate::{DataConstraints, DebateConfig, UtilityRubric};
use crate::error::{Error, Result};
use crate::pipeline::{EngineConfig, SandboxConfig, PROBLEM_FILE};
use crate::sandbox::ScriptedStep;

/// Per-round (theorist, pragmatist) utilities of the reference trajectory.
pub const REFERENCE_TRAJECTORY: [(f64, f64); 4] = [(0.82, 0.41), (0.74, 0.68), (0.80, 0.76), (0.81, 0.77)];

pub const FIXTURES_FILE: &str = "fixtures.json";
pub const CONFIG_FILE: &str = "scimind.toml";

/// A score sheet giving every criterion of `rubric` the same value.
pub fn score_sheet(rubric: &UtilityRubric, value: f64) -> Value {
    json!({
        "scores": rubric
            .criteria()
            .iter()
            .map(|c| json!({"criterion": c.name, "value": value, "justification": "uniform"}))
            .collect::<Vec<_>>()
    })
}

pub fn blueprint_doc() -> Value {
    json!({
        "variables": [
            {"name": "cases", "type_tag": "float", "dims": ["T"]},
            {"name": "beta", "type_tag": "float", "dims": []}
        ],
        "functions": [
            {"name": "load", "signature": "() -> cases", "dependencies": ["cases"]},
            {"name": "fit", "signature": "(cases) -> beta", "dependencies": ["load", "beta"]}
        ],
        "ingestion": {"sources": [{"name": "cases.csv", "format": "csv", "fields": ["week", "cases"]}]},
        "output": {"files": [{"name": "fit.json", "format": "json"}]}
    })
}

pub fn constraints() -> DataConstraints {
    DataConstraints {
        description: "Weekly reported case counts for one region".into(),
        schema_notes: "week (int), cases (int)".into(),
        size_notes: "52 rows".into(),
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub utilities: Vec<(f64, f64)>,
    pub formulation: String,
    pub variables: Vec<String>,
    pub blueprint: Value,
    /// Verifier verdicts that fail before the first passing one.
    pub failed_verifications: usize,
    /// Refined sources offered after the initial build.
    pub refinements: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            utilities: REFERENCE_TRAJECTORY.to_vec(),
            formulation: "Logistic growth of weekly cases with rate beta".into(),
            variables: vec!["cases".into(), "beta".into()],
            blueprint: blueprint_doc(),
            failed_verifications: 0,
            refinements: 3,
        }
    }
}

impl Scenario {
    pub fn fixtures(&self) -> Value {
        let cfg = DebateConfig::default();
        let theorist: Vec<Value> = (1..=self.utilities.len())
            .map(|r| {
                json!({
                    "formulation": format!("{} (round {r})", self.formulation),
                    "variables": self.variables,
                    "assumptions": ["closed population"],
                    "equations": ["dC/dt = beta C (1 - C/K)"]
                })
            })
            .collect();
        let pragmatist: Vec<Value> = self
            .utilities
            .iter()
            .map(|_| {
                json!({"violations": [{
                    "violated_criterion": "parameter_identifiability",
                    "conflicting_evidence": "K is weakly identified from 52 weeks",
                    "remediation": "fix K from population size"
                }]})
            })
            .collect();
        let moderator: Vec<Value> = self
            .utilities
            .iter()
            .flat_map(|(t, p)| [score_sheet(&cfg.theorist_rubric, *t), score_sheet(&cfg.pragmatist_rubric, *p)])
            .collect();
        let mut verifier: Vec<Value> = (0..self.failed_verifications)
            .map(|_| {
                json!({"predicates": [{
                    "name": "equations_implemented",
                    "passed": false,
                    "diagnostic": "growth equation has no function"
                }]})
            })
            .collect();
        verifier.push(json!({"predicates": [{"name": "equations_implemented", "passed": true}]}));
        let architect = vec![self.blueprint.clone(); 1 + self.failed_verifications];
        let refiner: Vec<Value> = (1..=self.refinements)
            .map(|j| json!(format!("```python\n# attempt {j}\nimport json\njson.dump({{}}, open('fit.json', 'w'))\n```")))
            .collect();
        json!({
            "theorist": theorist,
            "pragmatist": pragmatist,
            "moderator": moderator,
            "architect": architect,
            "verifier": verifier,
            "builder": ["```python\nimport json\njson.dump({}, open('fit.json', 'w'))\n```"],
            "refiner": refiner,
        })
    }

    pub fn provider(&self, dim: usize) -> Result<MockProvider> {
        Ok(MockProvider::from_json(&self.fixtures().to_string())?.with_dim(dim))
    }
}

/// Writes `<dir>/problem.json` and `<dir>/data/cases.csv`.
pub fn write_problem(dir: &Path, id: &str, statement: &str) -> Result<()> {
    let data = dir.join("data");
    fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    let problem = json!({
        "id": id,
        "statement": statement,
        "domain_tag": "epidemiology",
        "constraints": constraints(),
    });
    let p = dir.join(PROBLEM_FILE);
    fs::write(&p, serde_json::to_string_pretty(&problem)?).map_err(|e| Error::io(&p, e))?;
    let csv: String = std::iter::once("week,cases\n".to_string())
        .chain((1..=52).map(|w| format!("{w},{}\n", 3 * w + w * w / 4)))
        .collect();
    let p = data.join("cases.csv");
    fs::write(&p, csv).map_err(|e| Error::io(&p, e))
}

/// Config running the mock backend against `fixtures` with a scripted sandbox
/// that fails once and then passes.
pub fn config(fixtures: &Path) -> EngineConfig {
    let mut cfg = EngineConfig::default();
    cfg.provider.backend = crate::agent::Backend::Mock;
    cfg.provider.fixture_path = Some(fixtures.to_path_buf());
    cfg.sandbox = SandboxConfig::Scripted {
        steps: vec![
            ScriptedStep::Fail {
                exception_type: "KeyError".into(),
                message: "'cases'".into(),
            },
            ScriptedStep::Pass {
                write_files: vec!["fit.json".into()],
                stdout: "fitted\n".into(),
            },
        ],
        repeat_last: true,
    };
    cfg
}

/// Writes a problem bundle, fixtures and a config under `dir`; returns the config path.
pub fn write_all(dir: &Path) -> Result<std::path::PathBuf> {
    write_problem(&dir.join("problem"), "logistic-cases", "Model the weekly growth of reported cases")?;
    let fixtures = dir.join(FIXTURES_FILE);
    fs::write(&fixtures, serde_json::to_string_pretty(&Scenario::default().fixtures())?)
        .map_err(|e| Error::io(&fixtures, e))?;
    let mut cfg = config(Path::new(FIXTURES_FILE));
    cfg.provider.fixture_path = Some(FIXTURES_FILE.into());
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::KnowledgeBase;
    use crate::pipeline::{solve_problem, ProblemBundle};

    #[test]
    fn demo_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_all(dir.path()).unwrap();
        let cfg = EngineConfig::load(&cfg_path).unwrap();
        let bundle = ProblemBundle::load(&dir.path().join("problem")).unwrap();
        let agents = crate::agent::build_provider(&cfg.provider).unwrap();
        let sandbox = cfg.sandbox.build().unwrap();
        let mut kb = KnowledgeBase::new(16, 0.95).unwrap();
        let out = dir.path().join("out");
        let report = solve_problem(&bundle, &mut kb, &cfg, &*agents, &*sandbox, &out);
        assert_eq!(report.error, None);
        assert!(report.executed && report.admitted());
        let t = report.transcript.as_ref().unwrap();
        assert_eq!(t.rounds.len(), 4);
        assert_eq!(report.execution.as_ref().unwrap().reports.len(), 2);
        assert_eq!(kb.len(), 1);
        assert!(out.join("report.json").is_file() && out.join("trajectory.csv").is_file());
    }
}
