//! Consistency predicates. Four structural predicates run locally; the
//! Verifier agent contributes semantic ones. The blueprint passes only when
//! every predicate passes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Blueprint, Dim};
use crate::agent::prompts::{render, Task};
use crate::agent::{ask, parse, CompletionProvider};
use crate::debate::{DataConstraints, Hypothesis};
use crate::error::Result;

pub const BUILTIN_PREDICATES: [&str; 4] = [
    "data_availability",
    "dimensional_consistency",
    "variable_coverage",
    "dependency_acyclicity",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateResult {
    pub name: String,
    pub passed: bool,
    pub diagnostic: String,
}

impl PredicateResult {
    pub fn pass(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: true,
            diagnostic: String::new(),
        }
    }

    pub fn fail(name: impl Into<String>, diagnostic: impl Into<String>) -> Self {
        let diagnostic = diagnostic.into();
        debug_assert!(!diagnostic.is_empty());
        Self {
            name: name.into(),
            passed: false,
            diagnostic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    /// 1 iff every predicate passed.
    pub v: u8,
    pub results: Vec<PredicateResult>,
}

impl Verification {
    pub fn from_results(results: Vec<PredicateResult>) -> Self {
        let v = results.iter().map(|r| u8::from(r.passed)).product();
        Self { v, results }
    }

    pub fn passed(&self) -> bool {
        self.v == 1
    }

    pub fn violations(&self) -> Vec<PredicateResult> {
        self.results.iter().filter(|r| !r.passed).cloned().collect()
    }
}

fn identifier_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Every ingestion field must be named in the observed data's schema notes.
pub fn data_availability(bp: &Blueprint, d_obs: &DataConstraints) -> PredicateResult {
    let known = identifier_tokens(&d_obs.schema_notes);
    let missing: Vec<String> = bp
        .ingestion
        .sources
        .iter()
        .flat_map(|s| s.fields.iter().map(move |f| (s, f)))
        .filter(|(_, f)| !known.contains(&f.trim().to_lowercase()))
        .map(|(s, f)| format!("{}.{f}", s.name))
        .collect();
    if missing.is_empty() {
        PredicateResult::pass("data_availability")
    } else {
        PredicateResult::fail(
            "data_availability",
            format!(
                "ingestion fields not present in the observed data schema: {}",
                missing.join(", ")
            ),
        )
    }
}

/// A symbolic size may be bound to at most one extent across all declarations.
pub fn dimensional_consistency(bp: &Blueprint) -> PredicateResult {
    let mut bindings: BTreeMap<&str, BTreeMap<u64, Vec<&str>>> = BTreeMap::new();
    for v in &bp.variables {
        for d in &v.dims {
            if let Dim::Symbolic { name, size: Some(n) } = d {
                bindings
                    .entry(name.as_str())
                    .or_default()
                    .entry(*n)
                    .or_default()
                    .push(v.name.as_str());
            }
        }
    }
    let conflicts: Vec<String> = bindings
        .iter()
        .filter(|(_, sizes)| sizes.len() > 1)
        .map(|(name, sizes)| {
            let uses: Vec<String> = sizes
                .iter()
                .map(|(n, vars)| format!("{n} in {}", vars.join("/")))
                .collect();
            format!("size {name} bound inconsistently ({})", uses.join("; "))
        })
        .collect();
    if conflicts.is_empty() {
        PredicateResult::pass("dimensional_consistency")
    } else {
        PredicateResult::fail("dimensional_consistency", conflicts.join("; "))
    }
}

/// Every variable symbol of the hypothesis must be declared in the blueprint.
pub fn variable_coverage(bp: &Blueprint, m_star: &Hypothesis) -> PredicateResult {
    let declared: BTreeSet<&str> = bp.variables.iter().map(|v| v.name.as_str()).collect();
    let missing: Vec<&str> = m_star
        .variables
        .iter()
        .map(|s| s.trim())
        .filter(|s| !declared.contains(s))
        .collect();
    if missing.is_empty() {
        PredicateResult::pass("variable_coverage")
    } else {
        PredicateResult::fail(
            "variable_coverage",
            format!("hypothesis variables missing from blueprint: {}", missing.join(", ")),
        )
    }
}

/// Functions left on a cycle of the function dependency graph, via Kahn's
/// algorithm. Dependencies on variables are leaves and never form cycles.
pub fn find_cycle(bp: &Blueprint) -> Option<Vec<String>> {
    let index: HashMap<&str, usize> = bp
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();
    let n = bp.functions.len();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, f) in bp.functions.iter().enumerate() {
        for dep in &f.dependencies {
            if let Some(&j) = index.get(dep.as_str()) {
                indegree[i] += 1;
                dependents[j].push(i);
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut done = 0;
    while let Some(j) = ready.pop() {
        done += 1;
        for &i in &dependents[j] {
            indegree[i] -= 1;
            if indegree[i] == 0 {
                ready.push(i);
            }
        }
    }
    (done < n).then(|| {
        (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| bp.functions[i].name.clone())
            .collect()
    })
}

pub fn dependency_acyclicity(bp: &Blueprint) -> PredicateResult {
    match find_cycle(bp) {
        None => PredicateResult::pass("dependency_acyclicity"),
        Some(stuck) => PredicateResult::fail(
            "dependency_acyclicity",
            format!(
                "function dependencies form a cycle through: {}",
                stuck.join(", ")
            ),
        ),
    }
}

pub fn builtin_predicates(
    bp: &Blueprint,
    m_star: &Hypothesis,
    d_obs: &DataConstraints,
) -> Vec<PredicateResult> {
    vec![
        data_availability(bp, d_obs),
        dimensional_consistency(bp),
        variable_coverage(bp, m_star),
        dependency_acyclicity(bp),
    ]
}

/// Structural predicates followed by the Verifier agent's semantic verdicts.
pub fn verify_blueprint(
    verifier: &dyn CompletionProvider,
    bp: &Blueprint,
    m_star: &Hypothesis,
    d_obs: &DataConstraints,
) -> Result<Verification> {
    let mut results = builtin_predicates(bp, m_star, d_obs);
    let prompt = render(
        Task::Verify,
        &[
            ("hypothesis", &m_star.rendered()),
            ("blueprint", &bp.to_json()),
            ("data_constraints", &d_obs.rendered()),
        ],
    )?;
    let semantic = ask(verifier, &prompt, parse::parse_verdicts)?;
    results.extend(
        semantic
            .into_iter()
            .filter(|r| !BUILTIN_PREDICATES.contains(&r.name.as_str())),
    );
    Ok(Verification::from_results(results))
}
