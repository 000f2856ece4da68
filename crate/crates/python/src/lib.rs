//! Python bindings. Structured results (reports, verifications) come back as
//! plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use scimind_core::agent::build_provider;
use scimind_core::blueprint::{self as bp, Blueprint};
use scimind_core::debate::{self, Criterion, CriterionScore, DataConstraints, DebateConfig, Hypothesis, RubricKind, UtilityRubric};
use scimind_core::knowledge::{self as kn, EmbeddingVector, KnowledgeEntry, Provenance};
use scimind_core::pipeline::{self, EngineConfig, ProblemBundle};
use scimind_core::Error;

fn py_err(e: Error) -> PyErr {
    if e.is_user_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn vector(values: Vec<f64>) -> PyResult<EmbeddingVector> {
    EmbeddingVector::new(values).map_err(py_err)
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "KnowledgeBase", module = "scimind")]
struct PyKnowledgeBase {
    inner: kn::KnowledgeBase,
}

#[pymethods]
impl PyKnowledgeBase {
    #[new]
    #[pyo3(signature = (dim = kn::DEFAULT_DIM, tau = kn::DEFAULT_TAU))]
    fn new(dim: usize, tau: f64) -> PyResult<Self> {
        Ok(Self { inner: kn::KnowledgeBase::new(dim, tau).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: kn::load_dir(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        kn::save_dir(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.entries().iter().map(|e| e.id.clone()).collect()
    }

    /// Unconditional insert. Use `admit` for the novelty-gated path.
    #[pyo3(signature = (id, embedding, code, paradigm, domain = kn::DEFAULT_DOMAIN))]
    fn insert(&mut self, id: String, embedding: Vec<f64>, code: String, paradigm: String, domain: &str) -> PyResult<()> {
        let e = KnowledgeEntry::new(id, vector(embedding)?, code, paradigm, domain, Provenance::default()).map_err(py_err)?;
        self.inner.insert(e).map_err(py_err)
    }

    /// Returns `(admitted, delta)`; delta is None for an empty base.
    #[pyo3(signature = (id, embedding, code, paradigm, domain = kn::DEFAULT_DOMAIN))]
    fn admit(&mut self, id: String, embedding: Vec<f64>, code: String, paradigm: String, domain: &str) -> PyResult<(bool, Option<f64>)> {
        let e = KnowledgeEntry::new(id, vector(embedding)?, code, paradigm, domain, Provenance::default()).map_err(py_err)?;
        let a = kn::admit_entry(&mut self.inner, e).map_err(py_err)?;
        Ok((a.admitted, a.delta))
    }

    fn novelty(&self, embedding: Vec<f64>) -> PyResult<Option<f64>> {
        kn::novelty_delta(&self.inner, &vector(embedding)?).map_err(py_err)
    }

    #[pyo3(signature = (query, k = kn::DEFAULT_K))]
    fn top_k(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(String, f64)>> {
        let hits = kn::retrieve_top_k(&self.inner, &vector(query)?, k).map_err(py_err)?;
        Ok(hits.into_iter().map(|(e, s)| (e.id.clone(), s)).collect())
    }

    fn __repr__(&self) -> String {
        format!("KnowledgeBase(dim={}, tau={}, size={})", self.inner.dim(), self.inner.tau(), self.inner.len())
    }
}

#[pyfunction]
fn relevance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    kn::relevance(&vector(a)?, &vector(b)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (query, domain = kn::DEFAULT_DOMAIN))]
fn augment_query(query: &str, domain: &str) -> PyResult<String> {
    Ok(kn::augment_query(query, domain).map_err(py_err)?.rendered())
}

/// Weighted sum of criterion scores; weights must sum to 1.
#[pyfunction]
fn weighted_utility(scores: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    if scores.len() != weights.len() {
        return Err(PyValueError::new_err("scores and weights differ in length"));
    }
    let names: Vec<String> = (0..weights.len()).map(|i| format!("c{i}")).collect();
    let rubric = UtilityRubric::new(
        RubricKind::Theoretical,
        names.iter().zip(&weights).map(|(n, w)| Criterion { name: n.clone(), weight: *w }).collect(),
    )
    .map_err(py_err)?;
    let scores: Vec<CriterionScore> = names
        .into_iter()
        .zip(scores)
        .map(|(criterion_name, value)| CriterionScore { criterion_name, value, justification: String::new() })
        .collect();
    debate::weighted_utility(&scores, &rubric).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (u_t, u_p, lam = 0.5))]
fn consensus_score(u_t: f64, u_p: f64, lam: f64) -> PyResult<f64> {
    debate::consensus_score(u_t, u_p, lam).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (gamma_r, gamma_prev, u_t, u_p, epsilon = 0.02, gamma = 0.6))]
fn check_convergence(gamma_r: f64, gamma_prev: Option<f64>, u_t: f64, u_p: f64, epsilon: f64, gamma: f64) -> bool {
    let cfg = DebateConfig { epsilon, gamma, ..DebateConfig::default() };
    debate::check_convergence(gamma_r, gamma_prev, u_t, u_p, &cfg)
}

#[pyfunction]
fn code_executability(outcomes: Vec<bool>) -> PyResult<f64> {
    bp::code_executability(&outcomes).map_err(py_err)
}

/// Runs the built-in blueprint predicates; returns `{"v": 0|1, "results": [...]}`.
#[pyfunction]
#[pyo3(signature = (blueprint_json, variables, schema_notes, description = "observed data"))]
fn verify_builtins<'py>(
    py: Python<'py>,
    blueprint_json: &str,
    variables: Vec<String>,
    schema_notes: &str,
    description: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let blueprint = Blueprint::from_json(blueprint_json).map_err(py_err)?;
    let m_star = Hypothesis {
        id: "h".into(),
        round: 1,
        formulation: "supplied".into(),
        variables,
        assumptions: vec![],
        equations: vec![],
        responds_to: None,
    };
    let d_obs = DataConstraints {
        description: description.into(),
        schema_notes: schema_notes.into(),
        size_notes: String::new(),
    };
    let v = bp::Verification::from_results(bp::builtin_predicates(&blueprint, &m_star, &d_obs));
    to_py(py, &v)
}

/// Functions left unresolved by a topological sort, or None if acyclic.
#[pyfunction]
fn find_cycle(blueprint_json: &str) -> PyResult<Option<Vec<String>>> {
    Ok(bp::find_cycle(&Blueprint::from_json(blueprint_json).map_err(py_err)?))
}

/// Runs one problem with the configured provider and sandbox, updates the base
/// in place, and returns the run report.
#[pyfunction]
#[pyo3(signature = (problem_dir, kb, out_dir, config_path = None))]
fn solve<'py>(
    py: Python<'py>,
    problem_dir: PathBuf,
    kb: &mut PyKnowledgeBase,
    out_dir: PathBuf,
    config_path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match config_path {
        Some(p) => EngineConfig::load(&p).map_err(py_err)?,
        None => EngineConfig::default(),
    };
    let bundle = ProblemBundle::load(&problem_dir).map_err(py_err)?;
    let agents = build_provider(&cfg.provider).map_err(py_err)?;
    let sandbox = cfg.sandbox.build().map_err(py_err)?;
    let report = py.detach(|| pipeline::solve_problem(&bundle, &mut kb.inner, &cfg, &*agents, &*sandbox, &out_dir));
    to_py(py, &report)
}

/// Writes the bundled mock scenario under `dir`; returns the config path.
#[pyfunction]
fn write_demo(dir: PathBuf) -> PyResult<PathBuf> {
    scimind_core::demo::write_all(&dir).map_err(py_err)
}

#[pymodule]
fn scimind(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKnowledgeBase>()?;
    m.add_function(wrap_pyfunction!(relevance, m)?)?;
    m.add_function(wrap_pyfunction!(augment_query, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_utility, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_score, m)?)?;
    m.add_function(wrap_pyfunction!(check_convergence, m)?)?;
    m.add_function(wrap_pyfunction!(code_executability, m)?)?;
    m.add_function(wrap_pyfunction!(verify_builtins, m)?)?;
    m.add_function(wrap_pyfunction!(find_cycle, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(write_demo, m)?)?;
    m.add("BUILTIN_PREDICATES", bp::BUILTIN_PREDICATES.to_vec())?;
    Ok(())
}
