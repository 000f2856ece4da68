//! End-to-end run of one problem, and sequential or deferred batch evaluation.

mod bundle;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{info, warn};

pub use bundle::{ProblemBundle, DATA_DIR, PROBLEM_FILE};
pub use config::{EngineConfig, KnowledgeConfig, RetrievalConfig, SandboxConfig};

use crate::agent::CompletionProvider;
use crate::blueprint::{code_executability, run_sve, SveOutcome};
use crate::debate::{run_debate, DebateTranscript, Hypothesis};
use crate::error::{Error, Result};
use crate::knowledge::{
    admit_entry, assemble_grounded_input, augment_query, distill_entry, retrieve_top_k, KnowledgeBase,
    KnowledgeEntry,
};
use crate::sandbox::Sandbox;

pub const REPORT_FILE: &str = "report.json";
pub const TRANSCRIPT_FILE: &str = "transcript.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const WORKDIR: &str = "workdir";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Retrieval,
    Debate,
    Execution,
    Evolution,
    Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
}

impl StageError {
    fn new(stage: Stage, err: &Error) -> Self {
        Self {
            stage,
            kind: err.root().kind().to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub entry_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub augmented_query: String,
    pub retrieved: Vec<RetrievedRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub entry_id: String,
    pub admitted: bool,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieval_ms: f64,
    pub debate_ms: f64,
    pub execution_ms: f64,
    pub evolution_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem_id: String,
    pub run_id: String,
    pub started_at: String,
    pub retrieval: Option<RetrievalSummary>,
    pub transcript: Option<DebateTranscript>,
    pub execution: Option<SveOutcome>,
    pub executed: bool,
    pub admission: Option<AdmissionRecord>,
    pub error: Option<StageError>,
    pub timings: StageTimings,
}

impl RunReport {
    pub fn admitted(&self) -> bool {
        self.admission.as_ref().is_some_and(|a| a.admitted)
    }

    /// The report with wall-clock fields removed, for comparing runs.
    pub fn semantic_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        strip_volatile(&mut v);
        v
    }
}

const VOLATILE_KEYS: [&str; 5] = ["timings", "started_at", "wall_time", "wall_time_seconds", "timestamp"];

/// Drops wall-clock fields anywhere in a JSON tree.
pub fn strip_volatile(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

/// The paradigm descriptor stored for a distilled entry.
pub fn paradigm_of(h: &Hypothesis) -> String {
    let mut s = h.formulation.trim().to_string();
    if !h.equations.is_empty() {
        s.push_str("\nEquations:\n");
        for eq in &h.equations {
            s.push_str("  ");
            s.push_str(eq);
            s.push('\n');
        }
    }
    if !h.assumptions.is_empty() {
        s.push_str("Assumptions:\n");
        for a in &h.assumptions {
            s.push_str("  ");
            s.push_str(a);
            s.push('\n');
        }
    }
    s
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Everything except the admission itself, so a deferred batch can share a
/// read-only base. Returns the distilled candidate when the run executed.
fn solve_inner(
    bundle: &ProblemBundle,
    kb: &KnowledgeBase,
    cfg: &EngineConfig,
    agents: &dyn CompletionProvider,
    sandbox: &dyn Sandbox,
    out_dir: &Path,
) -> (RunReport, Option<KnowledgeEntry>) {
    let run_id = format!("{}@{}", bundle.id, kb.len());
    let mut report = RunReport {
        problem_id: bundle.id.clone(),
        run_id: run_id.clone(),
        started_at: chrono::Utc::now().to_rfc3339(),
        retrieval: None,
        transcript: None,
        execution: None,
        executed: false,
        admission: None,
        error: None,
        timings: StageTimings::default(),
    };
    macro_rules! stage {
        ($stage:expr, $e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    warn!(problem = %bundle.id, stage = ?$stage, error = %err, "stage failed");
                    report.error = Some(StageError::new($stage, &err));
                    return (report, None);
                }
            }
        };
    }

    stage!(Stage::Setup, cfg.validate());
    let workdir = out_dir.join(WORKDIR);
    stage!(Stage::Setup, bundle.stage_data(&workdir));

    let t = Instant::now();
    let grounded = stage!(Stage::Retrieval, (|| {
        let q = augment_query(&bundle.statement, &bundle.domain_tag)?;
        let rendered = q.rendered();
        let qvec = agents.embed(&rendered)?;
        let hits = if kb.is_empty() { Vec::new() } else { retrieve_top_k(kb, &qvec, cfg.retrieval.k)? };
        report.retrieval = Some(RetrievalSummary {
            augmented_query: rendered,
            retrieved: hits
                .iter()
                .map(|(e, s)| RetrievedRef { entry_id: e.id.clone(), score: *s })
                .collect(),
        });
        Ok::<_, Error>(assemble_grounded_input(&bundle.statement, &hits))
    })());
    report.timings.retrieval_ms = ms(t);

    let t = Instant::now();
    let debate = run_debate(&cfg.debate, &grounded, &bundle.constraints, agents);
    report.timings.debate_ms = ms(t);
    let (m_star, transcript) = stage!(Stage::Debate, debate);
    report.transcript = Some(transcript);

    let t = Instant::now();
    let sve = run_sve(&m_star, &bundle.constraints, agents, sandbox, &cfg.sve, &workdir);
    report.timings.execution_ms = ms(t);
    let outcome = stage!(Stage::Execution, sve);
    report.executed = outcome.executed();
    let source = outcome.final_artifact.source.clone();
    report.execution = Some(outcome);
    if !report.executed || !cfg.knowledge.self_evolve {
        return (report, None);
    }

    let t = Instant::now();
    let candidate = (|| {
        let augmented = &report.retrieval.as_ref().expect("retrieval ran").augmented_query;
        let emb = agents.embed(augmented)?;
        distill_entry(&bundle.statement, &source, &paradigm_of(&m_star), emb, &bundle.domain_tag, &run_id)
    })();
    report.timings.evolution_ms = ms(t);
    let entry = stage!(Stage::Evolution, candidate);
    (report, Some(entry))
}

fn admit_into(report: &mut RunReport, kb: &mut KnowledgeBase, entry: KnowledgeEntry) {
    let t = Instant::now();
    let id = entry.id.clone();
    match admit_entry(kb, entry) {
        Ok(a) => {
            info!(entry = %id, admitted = a.admitted, delta = ?a.delta, "admission decided");
            report.admission = Some(AdmissionRecord {
                entry_id: id,
                admitted: a.admitted,
                delta: a.delta,
            });
        }
        Err(err) => report.error = Some(StageError::new(Stage::Evolution, &err)),
    }
    report.timings.evolution_ms += ms(t);
}

/// Writes `report.json`, `transcript.json` and `trajectory.csv` under `out_dir`.
pub fn persist_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: String| {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(REPORT_FILE, serde_json::to_string_pretty(report)?)?;
    if let Some(t) = &report.transcript {
        write(TRANSCRIPT_FILE, t.to_json())?;
        write(TRAJECTORY_FILE, t.trajectory_csv())?;
    }
    Ok(())
}

/// Runs one problem end to end and persists its report under `out_dir`.
///
/// Stage failures are recorded in the report rather than returned, so the
/// caller always gets a report. A successful run is distilled and offered to
/// `kb` for admission when self-evolution is enabled.
pub fn solve_problem(
    bundle: &ProblemBundle,
    kb: &mut KnowledgeBase,
    cfg: &EngineConfig,
    agents: &dyn CompletionProvider,
    sandbox: &dyn Sandbox,
    out_dir: &Path,
) -> RunReport {
    if let Some(tau) = cfg.knowledge.tau {
        if let Err(err) = kb.set_tau(tau) {
            return setup_failure(bundle, kb, &err);
        }
    }
    let (mut report, candidate) = solve_inner(bundle, kb, cfg, agents, sandbox, out_dir);
    if let Some(entry) = candidate {
        admit_into(&mut report, kb, entry);
    }
    if let Err(err) = persist_report(&report, out_dir) {
        warn!(error = %err, "could not persist report");
        report.error.get_or_insert(StageError::new(Stage::Report, &err));
    }
    report
}

/// Fresh agents and sandbox for one problem.
pub type Resources = (Box<dyn CompletionProvider>, Box<dyn Sandbox>);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Problems run in input order; each sees every earlier admission.
    #[default]
    Sequential,
    /// Problems run concurrently against the starting base; admissions are
    /// applied afterwards in input order.
    Deferred,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub executed: bool,
    pub admitted: bool,
    pub error: Option<StageError>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub mode: BatchMode,
    pub outcomes: Vec<ProblemOutcome>,
    pub code_executability: f64,
    pub kb_size_before: usize,
    pub kb_size_after: usize,
}

fn setup_failure(bundle: &ProblemBundle, kb: &KnowledgeBase, err: &Error) -> RunReport {
    RunReport {
        problem_id: bundle.id.clone(),
        run_id: format!("{}@{}", bundle.id, kb.len()),
        started_at: chrono::Utc::now().to_rfc3339(),
        retrieval: None,
        transcript: None,
        execution: None,
        executed: false,
        admission: None,
        error: Some(StageError::new(Stage::Setup, err)),
        timings: StageTimings::default(),
    }
}

/// Solves every bundle, writing each run under `out_dir/<problem id>/`.
pub fn evaluate_batch(
    bundles: &[ProblemBundle],
    kb: &mut KnowledgeBase,
    cfg: &EngineConfig,
    resources: &(dyn Fn(&ProblemBundle) -> Result<Resources> + Sync),
    out_dir: &Path,
    mode: BatchMode,
) -> Result<BatchReport> {
    if bundles.is_empty() {
        return Err(Error::invalid("batch needs at least one problem"));
    }
    cfg.validate()?;
    if let Some(tau) = cfg.knowledge.tau {
        kb.set_tau(tau)?;
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = bundles.iter().find(|b| !seen.insert(b.id.as_str())) {
        return Err(Error::invalid(format!("duplicate problem id {}", dup.id)));
    }
    let kb_size_before = kb.len();
    let dir_of = |b: &ProblemBundle| out_dir.join(&b.id);

    let reports: Vec<RunReport> = match mode {
        BatchMode::Sequential => bundles
            .iter()
            .map(|b| match resources(b) {
                Ok((agents, sandbox)) => solve_problem(b, kb, cfg, &*agents, &*sandbox, &dir_of(b)),
                Err(err) => setup_failure(b, kb, &err),
            })
            .collect(),
        BatchMode::Deferred => {
            let snapshot: &KnowledgeBase = kb;
            let runs: Vec<(RunReport, Option<KnowledgeEntry>)> = std::thread::scope(|s| {
                let handles: Vec<_> = bundles
                    .iter()
                    .map(|b| {
                        s.spawn(move || match resources(b) {
                            Ok((agents, sandbox)) => {
                                solve_inner(b, snapshot, cfg, &*agents, &*sandbox, &dir_of(b))
                            }
                            Err(err) => (setup_failure(b, snapshot, &err), None),
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("problem thread panicked")).collect()
            });
            runs.into_iter()
                .zip(bundles)
                .map(|((mut report, candidate), b)| {
                    if let Some(entry) = candidate {
                        admit_into(&mut report, kb, entry);
                    }
                    if let Err(err) = persist_report(&report, &dir_of(b)) {
                        report.error.get_or_insert(StageError::new(Stage::Report, &err));
                    }
                    report
                })
                .collect()
        }
    };

    let executed: Vec<bool> = reports.iter().map(|r| r.executed).collect();
    let outcomes = reports
        .into_iter()
        .zip(bundles)
        .map(|(r, b)| ProblemOutcome {
            problem_id: r.problem_id.clone(),
            executed: r.executed,
            admitted: r.admitted(),
            error: r.error,
            out_dir: dir_of(b),
        })
        .collect();
    Ok(BatchReport {
        mode,
        outcomes,
        code_executability: code_executability(&executed)?,
        kb_size_before,
        kb_size_after: kb.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_volatile_is_recursive() {
        let mut v = serde_json::json!({
            "a": 1, "timings": {"x": 1},
            "nested": [{"wall_time": 0.3, "keep": true}],
            "started_at": "now"
        });
        strip_volatile(&mut v);
        assert_eq!(v, serde_json::json!({"a": 1, "nested": [{"keep": true}]}));
    }

    #[test]
    fn paradigm_lists_equations() {
        let h = Hypothesis {
            id: "h1".into(),
            round: 1,
            formulation: "SIR model".into(),
            variables: vec!["S".into()],
            assumptions: vec!["closed population".into()],
            equations: vec!["dS/dt = -beta S I".into()],
            responds_to: None,
        };
        let p = paradigm_of(&h);
        assert!(p.starts_with("SIR model\nEquations:\n  dS/dt"));
        assert!(p.contains("closed population"));
    }
}
