//! Blueprint construction, verification gating, code building, sandboxed
//! execution and the bounded self-correction loop.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{verify_blueprint, Blueprint, PredicateResult, Verification};
use crate::agent::prompts::{render, Task};
use crate::agent::{ask, parse, CompletionProvider};
use crate::debate::{DataConstraints, Hypothesis};
use crate::error::{Error, Result, ResultExt};
use crate::sandbox::{RunRequest, RunnerReport, Sandbox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SveConfig {
    pub t_max: u32,
    pub j_max: u32,
    pub sandbox_timeout_secs: f64,
    pub trace_truncation: usize,
    pub stdout_tail_chars: usize,
}

impl Default for SveConfig {
    fn default() -> Self {
        Self {
            t_max: 3,
            j_max: 3,
            sandbox_timeout_secs: 120.0,
            trace_truncation: 8000,
            stdout_tail_chars: 4000,
        }
    }
}

impl SveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 || self.j_max == 0 {
            return Err(Error::InvalidConfig("t_max and j_max must be positive".into()));
        }
        if !(self.sandbox_timeout_secs > 0.0 && self.sandbox_timeout_secs.is_finite()) {
            return Err(Error::InvalidConfig("sandbox timeout must be positive".into()));
        }
        if self.trace_truncation == 0 || self.stdout_tail_chars == 0 {
            return Err(Error::InvalidConfig(
                "trace truncation and stdout tail must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub source: String,
    pub blueprint_revision: u32,
    pub attempt: u32,
    /// Built from a blueprint that never passed verification.
    #[serde(default)]
    pub verification_override: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub success: bool,
    pub exit_status: i32,
    pub error_trace: String,
    pub stdout_tail: String,
    pub wall_time: f64,
    pub timed_out: bool,
    #[serde(default)]
    pub missing_outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub revision: u32,
    pub verification: Verification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SveOutcome {
    pub blueprint: Blueprint,
    pub verification_log: Vec<VerificationRecord>,
    pub verification_override: bool,
    pub final_artifact: CodeArtifact,
    pub reports: Vec<ExecutionReport>,
}

impl SveOutcome {
    pub fn executed(&self) -> bool {
        self.reports.last().is_some_and(|r| r.success)
    }
}

/// Last `n` characters of `s`.
pub fn tail_chars(s: &str, n: usize) -> &str {
    let count = s.chars().count();
    if count <= n {
        return s;
    }
    let skip = count - n;
    let (idx, _) = s.char_indices().nth(skip).expect("skip < count");
    &s[idx..]
}

pub fn construct_blueprint(architect: &dyn CompletionProvider, m_star: &Hypothesis) -> Result<Blueprint> {
    let prompt = render(Task::Construct, &[("hypothesis", &m_star.rendered())])?;
    let mut bp = ask(architect, &prompt, parse::parse_blueprint)?;
    bp.revision = 0;
    Ok(bp)
}

pub fn revise_blueprint(
    architect: &dyn CompletionProvider,
    bp: &Blueprint,
    xi: &[PredicateResult],
) -> Result<Blueprint> {
    if xi.is_empty() {
        return Err(Error::invalid("revision requires at least one violation"));
    }
    if xi.iter().any(|r| r.passed) {
        return Err(Error::invalid("revision violations must all be failed predicates"));
    }
    let violations: String = xi
        .iter()
        .map(|r| format!("- {}: {}", r.name, r.diagnostic))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(
        Task::Revise,
        &[
            ("revision", &bp.revision.to_string()),
            ("blueprint", &bp.to_json()),
            ("violations", &violations),
        ],
    )?;
    let mut revised = ask(architect, &prompt, parse::parse_blueprint)?;
    revised.revision = bp.revision + 1;
    Ok(revised)
}

pub fn build_code(
    builder: &dyn CompletionProvider,
    bp: &Blueprint,
    m_star: &Hypothesis,
    language: &str,
    verification_override: bool,
) -> Result<CodeArtifact> {
    let prompt = render(
        Task::Build,
        &[
            ("language", language),
            ("blueprint", &bp.to_json()),
            ("hypothesis", &m_star.rendered()),
        ],
    )?;
    let source = ask(builder, &prompt, parse::parse_code)?;
    Ok(CodeArtifact {
        source,
        blueprint_revision: bp.revision,
        attempt: 0,
        verification_override,
    })
}

/// Refinement context is the prior source, the tail of the error trace, and the blueprint.
pub fn refine_code(
    refiner: &dyn CompletionProvider,
    code: &CodeArtifact,
    report: &ExecutionReport,
    bp: &Blueprint,
    trace_truncation: usize,
) -> Result<CodeArtifact> {
    if report.success {
        return Err(Error::invalid("refinement requires a failed execution"));
    }
    let prompt = render(
        Task::Refine,
        &[
            ("blueprint", &bp.to_json()),
            ("attempt", &code.attempt.to_string()),
            ("source", code.source.trim_end()),
            ("error_trace", tail_chars(&report.error_trace, trace_truncation)),
        ],
    )?;
    let source = ask(refiner, &prompt, parse::parse_code)?;
    Ok(CodeArtifact {
        source,
        attempt: code.attempt + 1,
        ..code.clone()
    })
}

/// Frame paths under the workdir are shown relative to it, so traces do not
/// depend on where the run happened.
fn error_trace(r: &RunnerReport, missing: &[String], timeout: f64, workdir: &Path) -> String {
    let mut parts = Vec::new();
    if r.timed_out {
        parts.push(format!("execution timed out after {timeout}s"));
    }
    if !r.exception_type.is_empty() {
        let mut tb = String::from("Traceback (most recent call last):");
        for f in &r.traceback_frames {
            let file = Path::new(&f.file)
                .strip_prefix(workdir)
                .map(|p| p.display().to_string())
                .unwrap_or_else(|_| f.file.clone());
            tb.push_str(&format!("\n  File \"{file}\", line {}, in {}", f.line, f.function));
        }
        tb.push_str(&format!("\n{}: {}", r.exception_type, r.exception_message));
        parts.push(tb);
    } else if r.exit_status != 0 && !r.timed_out {
        parts.push(format!("process exited with status {}", r.exit_status));
    }
    if !missing.is_empty() {
        parts.push(format!("missing declared output files: {}", missing.join(", ")));
    }
    if parts.is_empty() {
        parts.push("runner reported failure without details".into());
    }
    parts.join("\n")
}

/// Writes the candidate to `<workdir>/solution.<ext>` and runs it. Success
/// requires exit status 0 and every declared output file present.
pub fn execute_code(
    sandbox: &dyn Sandbox,
    code: &CodeArtifact,
    bp: &Blueprint,
    workdir: &Path,
    cfg: &SveConfig,
) -> Result<ExecutionReport> {
    if !workdir.is_dir() {
        return Err(Error::invalid(format!("workdir {} does not exist", workdir.display())));
    }
    let script = workdir.join(format!("solution.{}", sandbox.script_extension()));
    fs::write(&script, &code.source).map_err(|e| Error::io(&script, e))?;
    let raw = sandbox.run(&RunRequest {
        script_path: script,
        workdir: workdir.to_path_buf(),
        timeout_seconds: cfg.sandbox_timeout_secs,
        stdout_tail_chars: cfg.stdout_tail_chars,
    })?;
    let missing: Vec<String> = if raw.success && raw.exit_status == 0 && !raw.timed_out {
        bp.output
            .files
            .iter()
            .filter(|f| !workdir.join(&f.name).exists())
            .map(|f| f.name.clone())
            .collect()
    } else {
        Vec::new()
    };
    let success = raw.success && raw.exit_status == 0 && !raw.timed_out && missing.is_empty();
    Ok(ExecutionReport {
        success,
        exit_status: raw.exit_status,
        error_trace: if success {
            String::new()
        } else {
            error_trace(&raw, &missing, cfg.sandbox_timeout_secs, workdir)
        },
        stdout_tail: raw.stdout_tail,
        wall_time: raw.wall_time_seconds,
        timed_out: raw.timed_out && !success,
        missing_outputs: missing,
    })
}

struct RunLog {
    dir: PathBuf,
}

impl RunLog {
    fn new(workdir: &Path) -> Result<Self> {
        let dir = workdir.join("run");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.write(name, &serde_json::to_string_pretty(value)?)
    }
}

/// Runs the full verify / build / execute / refine stage. Exhausting the
/// refinement budget is not an error: the outcome simply reports not executed.
pub fn run_sve(
    m_star: &Hypothesis,
    d_obs: &DataConstraints,
    agents: &dyn CompletionProvider,
    sandbox: &dyn Sandbox,
    cfg: &SveConfig,
    workdir: &Path,
) -> Result<SveOutcome> {
    cfg.validate()?;
    let log = RunLog::new(workdir)?;
    let mut bp = construct_blueprint(agents, m_star).context(|| "blueprint construction".into())?;
    let mut verification_log = Vec::new();
    let mut verified = false;
    for t in 0..cfg.t_max {
        log.json(&format!("blueprint_r{}.json", bp.revision), &bp)?;
        let verification = verify_blueprint(agents, &bp, m_star, d_obs)
            .context(|| format!("verification of blueprint revision {}", bp.revision))?;
        log.json(&format!("verification_r{}.json", bp.revision), &verification)?;
        let xi = verification.violations();
        verification_log.push(VerificationRecord {
            revision: bp.revision,
            verification,
        });
        if xi.is_empty() {
            verified = true;
            break;
        }
        if t + 1 < cfg.t_max {
            bp = revise_blueprint(agents, &bp, &xi)
                .context(|| format!("revision of blueprint revision {}", bp.revision))?;
        }
    }
    if !verified {
        warn!(revision = bp.revision, "verification budget exhausted; building with override");
    }
    let mut code = build_code(agents, &bp, m_star, sandbox.language(), !verified)
        .context(|| "code build".into())?;
    let mut reports = Vec::new();
    loop {
        log.write(
            &format!("attempt_{}.{}", code.attempt, sandbox.script_extension()),
            &code.source,
        )?;
        let report = execute_code(sandbox, &code, &bp, workdir, cfg)
            .context(|| format!("execution attempt {}", code.attempt))?;
        log.json(&format!("report_{}.json", code.attempt), &report)?;
        let success = report.success;
        reports.push(report);
        if success || code.attempt >= cfg.j_max {
            break;
        }
        code = refine_code(agents, &code, reports.last().expect("pushed"), &bp, cfg.trace_truncation)
            .context(|| format!("refinement after attempt {}", code.attempt))?;
    }
    info!(attempts = reports.len(), executed = reports.last().is_some_and(|r| r.success), "execution stage finished");
    Ok(SveOutcome {
        blueprint: bp,
        verification_log,
        verification_override: !verified,
        final_artifact: code,
        reports,
    })
}

/// Fraction of problems whose final code executed to valid output.
pub fn code_executability(outcomes: &[bool]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::invalid("code executability needs at least one outcome"));
    }
    Ok(outcomes.iter().filter(|b| **b).count() as f64 / outcomes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{MockProvider, Role};
    use crate::sandbox::{ScriptedSandbox, ScriptedStep};
    use serde_json::{json, Value};

    fn hyp() -> Hypothesis {
        Hypothesis {
            id: "h1".into(),
            round: 1,
            formulation: "logistic growth".into(),
            variables: vec!["cases".into(), "beta".into()],
            assumptions: vec![],
            equations: vec![],
            responds_to: None,
        }
    }

    fn d_obs() -> DataConstraints {
        DataConstraints {
            description: "weekly".into(),
            schema_notes: "week, cases".into(),
            size_notes: "".into(),
        }
    }

    fn blueprint_doc() -> Value {
        crate::blueprint::tests::sample()
    }

    fn pass_verdict() -> Value {
        json!({"predicates": [{"name": "equations_implemented", "passed": true}]})
    }

    fn provider(extra: Value) -> MockProvider {
        let mut doc = json!({
            "architect": [blueprint_doc()],
            "verifier": [pass_verdict()],
            "builder": ["```python\nprint('hello')\n```"],
            "refiner": ["```python\nprint('fix 1')\n```", "```python\nprint('fix 2')\n```", "```python\nprint('fix 3')\n```"],
        });
        for (k, v) in extra.as_object().unwrap() {
            doc[k] = v.clone();
        }
        MockProvider::from_json(&doc.to_string()).unwrap()
    }

    fn pass() -> ScriptedStep {
        ScriptedStep::Pass { write_files: vec!["fit.json".into()], stdout: String::new() }
    }

    fn fail() -> ScriptedStep {
        ScriptedStep::Fail { exception_type: "ValueError".into(), message: "bad shape".into() }
    }

    #[test]
    fn happy_path_single_report() {
        let dir = tempfile::tempdir().unwrap();
        let mock = provider(json!({}));
        let sb = ScriptedSandbox::new([pass()]);
        let out = run_sve(&hyp(), &d_obs(), &mock, &sb, &SveConfig::default(), dir.path()).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.executed());
        assert!(!out.verification_override);
        assert_eq!(out.final_artifact.attempt, 0);
        assert!(dir.path().join("solution.py").exists());
        for f in ["blueprint_r0.json", "verification_r0.json", "attempt_0.py", "report_0.json"] {
            assert!(dir.path().join("run").join(f).exists(), "{f}");
        }
    }

    #[test]
    fn fails_twice_then_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let mock = provider(json!({}));
        let sb = ScriptedSandbox::new([fail(), fail(), pass()]);
        let out = run_sve(&hyp(), &d_obs(), &mock, &sb, &SveConfig::default(), dir.path()).unwrap();
        assert_eq!(out.reports.len(), 3);
        assert!(out.executed());
        assert_eq!(out.final_artifact.attempt, 2);
        let bp_json = out.blueprint.to_json();
        for call in mock.calls_for(Role::Refiner) {
            assert!(call.prompt.user_text.contains(&bp_json));
            assert!(call.prompt.user_text.contains("ValueError: bad shape"));
        }
    }

    #[test]
    fn exhausting_refinement_is_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mock = provider(json!({}));
        let sb = ScriptedSandbox::new([fail()]).repeating_last();
        let cfg = SveConfig::default();
        let out = run_sve(&hyp(), &d_obs(), &mock, &sb, &cfg, dir.path()).unwrap();
        assert_eq!(out.reports.len() as u32, 1 + cfg.j_max);
        assert!(!out.executed());
        assert_eq!(sb.run_count() as u32, 1 + cfg.j_max);
    }

    #[test]
    fn verification_budget_override() {
        let dir = tempfile::tempdir().unwrap();
        let fail_v = json!({"predicates": [{"name": "equations_implemented", "passed": false, "diagnostic": "missing"}]});
        let mock = provider(json!({
            "architect": [blueprint_doc(), blueprint_doc(), blueprint_doc()],
            "verifier": [fail_v, fail_v, fail_v],
        }));
        let sb = ScriptedSandbox::new([pass()]);
        let out = run_sve(&hyp(), &d_obs(), &mock, &sb, &SveConfig::default(), dir.path()).unwrap();
        assert_eq!(mock.call_count(Role::Verifier), 3);
        assert_eq!(mock.call_count(Role::Architect), 3);
        assert!(out.verification_override && out.final_artifact.verification_override);
        assert_eq!(out.blueprint.revision, 2);
        assert!(out.executed());
    }

    #[test]
    fn missing_outputs_fail_execution() {
        let dir = tempfile::tempdir().unwrap();
        let bp = Blueprint::from_value(blueprint_doc()).unwrap();
        let code = CodeArtifact { source: "x".into(), blueprint_revision: 0, attempt: 0, verification_override: false };
        let sb = ScriptedSandbox::new([ScriptedStep::Pass { write_files: vec![], stdout: String::new() }]);
        let r = execute_code(&sb, &code, &bp, dir.path(), &SveConfig::default()).unwrap();
        assert!(!r.success);
        assert_eq!(r.missing_outputs, ["fit.json"]);
        assert!(r.error_trace.contains("fit.json"));
    }

    #[test]
    fn timeout_and_exception_reports() {
        let dir = tempfile::tempdir().unwrap();
        let bp = Blueprint::from_value(blueprint_doc()).unwrap();
        let code = CodeArtifact { source: "x".into(), blueprint_revision: 0, attempt: 0, verification_override: false };
        let sb = ScriptedSandbox::new([ScriptedStep::Timeout, fail()]);
        let r = execute_code(&sb, &code, &bp, dir.path(), &SveConfig::default()).unwrap();
        assert!(r.timed_out && !r.success);
        let r = execute_code(&sb, &code, &bp, dir.path(), &SveConfig::default()).unwrap();
        assert!(!r.success && r.error_trace.contains("Traceback"));
        assert!(r.error_trace.contains("File \"solution.py\""), "{}", r.error_trace);
        let unavailable = ScriptedSandbox::new([ScriptedStep::Unavailable]);
        assert!(matches!(
            execute_code(&unavailable, &code, &bp, dir.path(), &SveConfig::default()),
            Err(Error::SandboxUnavailable(_))
        ));
    }

    #[test]
    fn refine_truncates_trace_and_counts() {
        let bp = Blueprint::from_value(blueprint_doc()).unwrap();
        let code = CodeArtifact { source: "x".into(), blueprint_revision: 0, attempt: 0, verification_override: false };
        let mut report = ExecutionReport {
            success: false, exit_status: 1, error_trace: format!("HEAD{}TAIL", "a".repeat(1_000_000)),
            stdout_tail: String::new(), wall_time: 0.0, timed_out: false, missing_outputs: vec![],
        };
        let mock = provider(json!({}));
        let c1 = refine_code(&mock, &code, &report, &bp, 8000).unwrap();
        assert_eq!(c1.attempt, 1);
        let prompt = &mock.calls_for(Role::Refiner)[0].prompt.user_text;
        assert!(prompt.contains(&format!("{}TAIL", "a".repeat(7996))));
        assert!(!prompt.contains("HEAD"));
        report.success = true;
        assert!(matches!(refine_code(&mock, &code, &report, &bp, 8000), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn revise_and_build_rules() {
        let bp = Blueprint::from_value(blueprint_doc()).unwrap();
        let mock = provider(json!({"architect": [blueprint_doc()], "builder": [""]}));
        assert!(matches!(revise_blueprint(&mock, &bp, &[]), Err(Error::InvalidInput(_))));
        let r1 = revise_blueprint(&mock, &bp, &[PredicateResult::fail("x", "y")]).unwrap();
        assert_eq!(r1.revision, 1);
        let prompt = &mock.calls_for(Role::Architect)[0].prompt.user_text;
        assert!(prompt.contains("- x: y"));
        assert!(matches!(
            build_code(&mock, &bp, &hyp(), "Python", false).unwrap_err(),
            Error::FixtureMiss { .. } | Error::MalformedOutput { .. }
        ));
        let mut tagged = bp.clone();
        tagged.revision = 2;
        let mock = provider(json!({}));
        assert_eq!(build_code(&mock, &tagged, &hyp(), "Python", false).unwrap().blueprint_revision, 2);
    }

    #[test]
    fn construct_rejects_bad_blueprints() {
        let mut dup = blueprint_doc();
        dup["variables"][1]["name"] = json!("cases");
        let mock = provider(json!({"architect": [dup.clone(), dup]}));
        assert!(matches!(construct_blueprint(&mock, &hyp()), Err(Error::MalformedOutput { .. })));
    }

    #[test]
    fn tail_chars_is_char_safe() {
        assert_eq!(tail_chars("héllo", 3), "llo");
        assert_eq!(tail_chars("ab", 5), "ab");
        assert_eq!(tail_chars("ééé", 2), "éé");
    }

    #[test]
    fn ce_examples() {
        assert!((code_executability(&[true, true, false]).unwrap() - 0.6667).abs() < 1e-4);
        assert_eq!(code_executability(&[true; 5]).unwrap(), 1.0);
        let mut v = vec![true; 107];
        v.extend([false; 4]);
        assert!((code_executability(&v).unwrap() - 0.9640).abs() < 5e-4);
        assert!(code_executability(&[]).is_err());
    }

    #[test]
    fn ce_exhaustive_up_to_ten() {
        for len in 1..=10usize {
            for mask in 0u32..(1 << len) {
                let v: Vec<bool> = (0..len).map(|i| mask & (1 << i) != 0).collect();
                let expected = mask.count_ones() as f64 / len as f64;
                assert_eq!(code_executability(&v).unwrap(), expected);
            }
        }
    }
}
