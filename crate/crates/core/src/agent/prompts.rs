//! Versioned prompt templates, one text asset per role task.
//!
//! Asset layout: a `# <name> v<version>` header line, then `[system]` and
//! `[user]` sections. `{{key}}` placeholders are filled in a single pass, so
//! substituted values are never re-expanded.

use std::collections::HashMap;

use super::{Role, RolePrompt, Schema};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Propose,
    Critique,
    Score,
    Construct,
    Revise,
    Verify,
    Build,
    Refine,
}

impl Task {
    pub fn role(self) -> Role {
        match self {
            Task::Propose => Role::Theorist,
            Task::Critique => Role::Pragmatist,
            Task::Score => Role::Moderator,
            Task::Construct | Task::Revise => Role::Architect,
            Task::Verify => Role::Verifier,
            Task::Build => Role::Builder,
            Task::Refine => Role::Refiner,
        }
    }

    pub fn schema(self) -> Schema {
        match self {
            Task::Propose => Schema::Hypothesis,
            Task::Critique => Schema::Critique,
            Task::Score => Schema::ScoreSheet,
            Task::Construct | Task::Revise => Schema::Blueprint,
            Task::Verify => Schema::Verdicts,
            Task::Build | Task::Refine => Schema::Code,
        }
    }

    fn asset(self) -> &'static str {
        match self {
            Task::Propose => include_str!("../../prompts/theorist.txt"),
            Task::Critique => include_str!("../../prompts/pragmatist.txt"),
            Task::Score => include_str!("../../prompts/moderator.txt"),
            Task::Construct => include_str!("../../prompts/architect.txt"),
            Task::Revise => include_str!("../../prompts/architect_revise.txt"),
            Task::Verify => include_str!("../../prompts/verifier.txt"),
            Task::Build => include_str!("../../prompts/builder.txt"),
            Task::Refine => include_str!("../../prompts/refiner.txt"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub header: String,
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::InvalidConfig("prompt asset lacks a header line".into()))?
            .to_string();
        let rest: Vec<&str> = lines.collect();
        let find = |tag: &str| rest.iter().position(|l| l.trim() == tag);
        let (Some(s), Some(u)) = (find("[system]"), find("[user]")) else {
            return Err(Error::InvalidConfig(format!(
                "prompt {header}: missing [system] or [user] section"
            )));
        };
        if s > u {
            return Err(Error::InvalidConfig(format!(
                "prompt {header}: [system] must precede [user]"
            )));
        }
        Ok(Self {
            header,
            system: rest[s + 1..u].join("\n").trim().to_string(),
            user: rest[u + 1..].join("\n").trim().to_string(),
        })
    }

    pub fn for_task(task: Task) -> Self {
        Self::parse(task.asset()).expect("bundled prompt assets are well-formed")
    }
}

fn fill(template: &str, vars: &HashMap<&str, &str>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| Error::InvalidConfig("unterminated placeholder in prompt".into()))?;
        let key = &after[..close];
        let value = vars
            .get(key)
            .ok_or_else(|| Error::InvalidConfig(format!("prompt placeholder {{{{{key}}}}} not provided")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render(task: Task, vars: &[(&str, &str)]) -> Result<RolePrompt> {
    let t = Template::for_task(task);
    let map: HashMap<&str, &str> = vars.iter().copied().collect();
    RolePrompt::new(
        task.role(),
        fill(&t.system, &map)?,
        fill(&t.user, &map)?,
        task.schema(),
    )
}

pub fn format_correction(schema: Schema, reason: &str) -> String {
    format!(
        "Your previous reply could not be parsed as a {} document ({reason}). \
         Reply again with exactly one JSON object in the required format.",
        schema.as_str()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_assets_parse_with_versions() {
        for task in [
            Task::Propose,
            Task::Critique,
            Task::Score,
            Task::Construct,
            Task::Revise,
            Task::Verify,
            Task::Build,
            Task::Refine,
        ] {
            let t = Template::for_task(task);
            assert!(t.header.contains(" v"), "{}", t.header);
            assert!(!t.system.is_empty() && !t.user.is_empty());
        }
    }

    #[test]
    fn fill_is_single_pass() {
        let p = render(
            Task::Critique,
            &[("round", "1"), ("hypothesis", "{{round}}"), ("data_constraints", "d")],
        )
        .unwrap();
        assert!(p.user_text.contains("{{round}}"));
        assert_eq!(p.role, Role::Pragmatist);
        assert_eq!(p.response_schema, Schema::Critique);
    }

    #[test]
    fn missing_placeholder_is_config_error() {
        assert!(matches!(
            render(Task::Critique, &[("round", "1")]),
            Err(Error::InvalidConfig(_))
        ));
    }
}
