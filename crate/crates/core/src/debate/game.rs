use tracing::{debug, info};

use super::{
    best_round, check_convergence, consensus_score, weighted_utility, Critique, CriterionScore,
    DataConstraints, DebateConfig, DebateTranscript, Hypothesis, RoundRecord, RubricKind,
    Termination, UtilityRubric,
};
use crate::agent::parse::{self, malformed};
use crate::agent::prompts::{render, Task};
use crate::agent::{ask, CompletionProvider, Schema};
use crate::error::{Error, Result, ResultExt};
use crate::knowledge::GroundedInput;

/// Structured rendering of a critique for the Theorist's context.
pub fn render_critique(critique: Option<&Critique>) -> String {
    let Some(c) = critique else {
        return "None (initial round).".into();
    };
    if c.violations.is_empty() {
        return format!("Critique {} (round {}): no feasibility objections.", c.id, c.round);
    }
    let mut out = format!("Critique {} (round {}):", c.id, c.round);
    for (i, v) in c.violations.iter().enumerate() {
        out.push_str(&format!(
            "\n{}. violated criterion: {}\n   conflicting evidence: {}\n   remediation: {}",
            i + 1,
            v.violated_criterion,
            v.conflicting_evidence,
            v.remediation
        ));
    }
    out
}

pub fn propose_hypothesis(
    theorist: &dyn CompletionProvider,
    grounded: &GroundedInput,
    prior: Option<&Critique>,
    round: u32,
) -> Result<Hypothesis> {
    if round == 0 {
        return Err(Error::invalid("rounds are numbered from 1"));
    }
    if (round == 1) != prior.is_none() {
        return Err(Error::invalid(format!(
            "round {round}: a prior critique is required after round 1 and forbidden in round 1"
        )));
    }
    let prompt = render(
        Task::Propose,
        &[
            ("round", &round.to_string()),
            ("grounded_input", &grounded.rendered()),
            ("critique", &render_critique(prior)),
        ],
    )?;
    let draft = ask(theorist, &prompt, parse::parse_hypothesis)?;
    Ok(Hypothesis {
        id: format!("h{round}"),
        round,
        formulation: draft.formulation,
        variables: draft.variables,
        assumptions: draft.assumptions,
        equations: draft.equations,
        responds_to: prior.map(|c| c.id.clone()),
    })
}

pub fn elicit_critique(
    pragmatist: &dyn CompletionProvider,
    hypothesis: &Hypothesis,
    d_obs: &DataConstraints,
) -> Result<Critique> {
    if hypothesis.round == 0 || hypothesis.formulation.trim().is_empty() {
        return Err(Error::invalid("hypothesis is not well-formed"));
    }
    let prompt = render(
        Task::Critique,
        &[
            ("round", &hypothesis.round.to_string()),
            ("hypothesis", &hypothesis.rendered()),
            ("data_constraints", &d_obs.rendered()),
        ],
    )?;
    let violations = ask(pragmatist, &prompt, parse::parse_critique)?;
    Ok(Critique {
        id: format!("c{}", hypothesis.round),
        round: hypothesis.round,
        violations,
    })
}

/// One Moderator call per rubric; the reply must score exactly the rubric's criteria.
pub fn score_hypothesis(
    moderator: &dyn CompletionProvider,
    hypothesis: &Hypothesis,
    d_obs: &DataConstraints,
    rubric: &UtilityRubric,
) -> Result<(Vec<CriterionScore>, f64)> {
    let criteria: String = rubric
        .criteria()
        .iter()
        .map(|c| format!("- {} (weight {})", c.name, c.weight))
        .collect::<Vec<_>>()
        .join("\n");
    let kind = match rubric.kind() {
        RubricKind::Theoretical => "theoretical utility",
        RubricKind::Pragmatic => "pragmatic utility",
    };
    let prompt = render(
        Task::Score,
        &[
            ("rubric_kind", kind),
            ("criteria", &criteria),
            ("hypothesis", &hypothesis.rendered()),
            ("data_constraints", &d_obs.rendered()),
        ],
    )?;
    let parse_for_rubric = |raw: &str| {
        let scores = parse::parse_score_sheet(raw)?;
        let utility = weighted_utility(&scores, rubric).map_err(|e| match e {
            Error::InvalidInput(reason) => malformed(Schema::ScoreSheet, reason, raw),
            other => other,
        })?;
        Ok((scores, utility))
    };
    ask(moderator, &prompt, parse_for_rubric)
}

fn play_round(
    cfg: &DebateConfig,
    grounded: &GroundedInput,
    d_obs: &DataConstraints,
    agents: &dyn CompletionProvider,
    round: u32,
    prior: Option<&Critique>,
) -> Result<RoundRecord> {
    let hypothesis = propose_hypothesis(agents, grounded, prior, round)?;
    let critique = elicit_critique(agents, &hypothesis, d_obs)?;
    let (theorist_scores, u_t) = score_hypothesis(agents, &hypothesis, d_obs, &cfg.theorist_rubric)?;
    let (pragmatist_scores, u_p) =
        score_hypothesis(agents, &hypothesis, d_obs, &cfg.pragmatist_rubric)?;
    let gamma_score = consensus_score(u_t, u_p, cfg.lambda)?;
    Ok(RoundRecord {
        round,
        hypothesis,
        critique,
        theorist_scores,
        pragmatist_scores,
        u_t,
        u_p,
        gamma_score,
    })
}

pub fn run_debate(
    cfg: &DebateConfig,
    grounded: &GroundedInput,
    d_obs: &DataConstraints,
    agents: &dyn CompletionProvider,
) -> Result<(Hypothesis, DebateTranscript)> {
    cfg.validate()?;
    d_obs.validate()?;
    let mut rounds: Vec<RoundRecord> = Vec::new();
    for round in 1..=cfg.r_max {
        let prior = rounds.last().map(|r| &r.critique);
        let record = play_round(cfg, grounded, d_obs, agents, round, prior)
            .context(|| format!("debate round {round}"))?;
        debug!(round, u_t = record.u_t, u_p = record.u_p, gamma = record.gamma_score, "round scored");
        let prev = rounds.last().map(|r| r.gamma_score);
        let converged = check_convergence(record.gamma_score, prev, record.u_t, record.u_p, cfg);
        rounds.push(record);
        if converged {
            info!(round, "debate converged");
            let selected = rounds.last().expect("just pushed").hypothesis.clone();
            let transcript = DebateTranscript {
                rounds,
                termination: Termination::Converged,
                selected: selected.id.clone(),
            };
            return Ok((selected, transcript));
        }
    }
    let selected = best_round(&rounds).expect("r_max >= 1").hypothesis.clone();
    info!(selected = %selected.id, "round budget exhausted; selected best joint score");
    let transcript = DebateTranscript {
        rounds,
        termination: Termination::BudgetExhausted,
        selected: selected.id.clone(),
    };
    Ok((selected, transcript))
}
