//! Theorist / Pragmatist / Moderator debate.
//!
//! Each round the Theorist proposes, the Pragmatist critiques against the
//! observed data constraints, and the Moderator scores the hypothesis on two
//! rubrics. The joint score is a convex combination of the two utilities; the
//! debate stops once that score is stable and both utilities clear a floor, or
//! falls back to the best-scoring round when the budget runs out.

mod game;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use game::{elicit_critique, propose_hypothesis, render_critique, run_debate, score_hypothesis};

pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub round: u32,
    pub formulation: String,
    #[serde(default)]
    pub variables: Vec<String>,
    #[serde(default)]
    pub assumptions: Vec<String>,
    #[serde(default)]
    pub equations: Vec<String>,
    #[serde(default)]
    pub responds_to: Option<String>,
}

impl Hypothesis {
    /// Text shown to downstream agents.
    pub fn rendered(&self) -> String {
        let doc = serde_json::json!({
            "formulation": self.formulation,
            "variables": self.variables,
            "assumptions": self.assumptions,
            "equations": self.equations,
        });
        serde_json::to_string_pretty(&doc).expect("plain JSON value")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RubricKind {
    Theoretical,
    Pragmatic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RubricDoc")]
pub struct UtilityRubric {
    kind: RubricKind,
    criteria: Vec<Criterion>,
}

#[derive(Deserialize)]
struct RubricDoc {
    kind: RubricKind,
    criteria: Vec<Criterion>,
}

impl TryFrom<RubricDoc> for UtilityRubric {
    type Error = Error;

    fn try_from(doc: RubricDoc) -> Result<Self> {
        UtilityRubric::new(doc.kind, doc.criteria)
    }
}

impl UtilityRubric {
    pub fn new(kind: RubricKind, criteria: Vec<Criterion>) -> Result<Self> {
        if criteria.is_empty() {
            return Err(Error::InvalidRubric("rubric needs at least one criterion".into()));
        }
        for (i, c) in criteria.iter().enumerate() {
            if c.name.trim().is_empty() {
                return Err(Error::InvalidRubric(format!("criterion {i} has an empty name")));
            }
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::InvalidRubric(format!(
                    "criterion {} weight {} not in [0, 1]",
                    c.name, c.weight
                )));
            }
            if criteria[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::InvalidRubric(format!("duplicate criterion {}", c.name)));
            }
        }
        let total: f64 = criteria.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidRubric(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { kind, criteria })
    }

    pub fn equal(kind: RubricKind, names: &[&str]) -> Result<Self> {
        let w = 1.0 / names.len().max(1) as f64;
        Self::new(
            kind,
            names
                .iter()
                .map(|n| Criterion {
                    name: n.to_string(),
                    weight: w,
                })
                .collect(),
        )
    }

    pub fn default_theoretical() -> Self {
        Self::equal(
            RubricKind::Theoretical,
            &[
                "assumption_soundness",
                "derivation_correctness",
                "structural_completeness",
                "parsimony",
            ],
        )
        .expect("static rubric")
    }

    pub fn default_pragmatic() -> Self {
        Self::equal(
            RubricKind::Pragmatic,
            &[
                "data_availability",
                "dimensional_consistency",
                "computational_tractability",
                "parameter_identifiability",
            ],
        )
        .expect("static rubric")
    }

    pub fn kind(&self) -> RubricKind {
        self.kind
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion_name: String,
    pub value: f64,
    #[serde(default)]
    pub justification: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub violated_criterion: String,
    pub conflicting_evidence: String,
    pub remediation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub id: String,
    pub round: u32,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataConstraints {
    pub description: String,
    #[serde(default)]
    pub schema_notes: String,
    #[serde(default)]
    pub size_notes: String,
}

impl DataConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.description.trim().is_empty() {
            return Err(Error::invalid("data constraints need a description"));
        }
        Ok(())
    }

    pub fn rendered(&self) -> String {
        format!(
            "Description: {}\nSchema: {}\nSize: {}",
            self.description, self.schema_notes, self.size_notes
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebateConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub r_max: u32,
    pub theorist_rubric: UtilityRubric,
    pub pragmatist_rubric: UtilityRubric,
}

impl Default for DebateConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            epsilon: 0.02,
            gamma: 0.6,
            r_max: 6,
            theorist_rubric: UtilityRubric::default_theoretical(),
            pragmatist_rubric: UtilityRubric::default_pragmatic(),
        }
    }
}

impl DebateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda {} not in (0, 1)", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} not in (0, 1)", self.gamma));
        }
        if self.r_max == 0 {
            return bad("r_max must be positive".into());
        }
        if self.theorist_rubric.kind() != RubricKind::Theoretical
            || self.pragmatist_rubric.kind() != RubricKind::Pragmatic
        {
            return bad("rubric kinds do not match their roles".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub hypothesis: Hypothesis,
    pub critique: Critique,
    pub theorist_scores: Vec<CriterionScore>,
    pub pragmatist_scores: Vec<CriterionScore>,
    pub u_t: f64,
    pub u_p: f64,
    pub gamma_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Converged,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub rounds: Vec<RoundRecord>,
    pub termination: Termination,
    pub selected: String,
}

impl DebateTranscript {
    pub fn selected_hypothesis(&self) -> Option<&Hypothesis> {
        self.rounds
            .iter()
            .map(|r| &r.hypothesis)
            .find(|h| h.id == self.selected)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    /// `round,u_t,u_p,gamma`, values in shortest round-trip decimal form.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("round,u_t,u_p,gamma\n");
        for r in &self.rounds {
            out.push_str(&format!("{},{},{},{}\n", r.round, r.u_t, r.u_p, r.gamma_score));
        }
        out
    }
}

/// Weighted sum of criterion scores; scores must cover exactly the rubric's criteria.
pub fn weighted_utility(scores: &[CriterionScore], rubric: &UtilityRubric) -> Result<f64> {
    let total: f64 = rubric.criteria().iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidRubric(format!("weights sum to {total}, not 1")));
    }
    if scores.len() != rubric.criteria().len() {
        return Err(Error::invalid(format!(
            "{} scores for {} criteria",
            scores.len(),
            rubric.criteria().len()
        )));
    }
    let mut sum = 0.0;
    for c in rubric.criteria() {
        let mut matching = scores.iter().filter(|s| s.criterion_name == c.name);
        let s = matching
            .next()
            .ok_or_else(|| Error::invalid(format!("missing score for criterion {}", c.name)))?;
        if matching.next().is_some() {
            return Err(Error::invalid(format!("criterion {} scored twice", c.name)));
        }
        if !(0.0..=1.0).contains(&s.value) {
            return Err(Error::invalid(format!(
                "score {} for {} not in [0, 1]",
                s.value, c.name
            )));
        }
        sum += c.weight * s.value;
    }
    Ok(sum.clamp(0.0, 1.0))
}

pub fn consensus_score(u_t: f64, u_p: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u_t) || !(0.0..=1.0).contains(&u_p) {
        return Err(Error::invalid(format!("utilities ({u_t}, {u_p}) not in [0, 1]")));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("lambda {lambda} not in (0, 1)")));
    }
    Ok(lambda * u_t + (1.0 - lambda) * u_p)
}

/// Stability of the joint score plus a quality floor on both utilities, both
/// strict. There is no previous score in the first round, so it never converges.
pub fn check_convergence(
    gamma_r: f64,
    gamma_prev: Option<f64>,
    u_t: f64,
    u_p: f64,
    cfg: &DebateConfig,
) -> bool {
    match gamma_prev {
        None => false,
        Some(prev) => (gamma_r - prev).abs() < cfg.epsilon && u_t.min(u_p) > cfg.gamma,
    }
}

/// Round with the highest joint score, earliest round on ties.
pub fn fallback_select(transcript: &DebateTranscript) -> Result<&Hypothesis> {
    best_round(&transcript.rounds)
        .map(|r| &r.hypothesis)
        .ok_or_else(|| Error::InvalidState("cannot select from an empty transcript".into()))
}

pub(crate) fn best_round(rounds: &[RoundRecord]) -> Option<&RoundRecord> {
    rounds.iter().fold(None, |best: Option<&RoundRecord>, r| match best {
        Some(b) if b.gamma_score >= r.gamma_score => Some(b),
        _ => Some(r),
    })
}
