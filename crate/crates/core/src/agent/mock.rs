//! Deterministic scripted provider.
//!
//! Fixtures map each role to an ordered list of responses; the n-th call for a
//! role returns the n-th response. String values are returned verbatim, any
//! other JSON value is returned as its compact serialization.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde_json::Value;

use super::{CompletionProvider, Role, RolePrompt};
use crate::error::{Error, Result};
use crate::knowledge::{EmbeddingVector, DEFAULT_DIM};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordedCall {
    pub role: Role,
    /// 1-based ordinal within the role.
    pub ordinal: usize,
    pub prompt: RolePrompt,
}

#[derive(Debug, Default)]
struct State {
    counters: BTreeMap<Role, usize>,
    calls: Vec<RecordedCall>,
}

#[derive(Debug)]
pub struct MockProvider {
    fixtures: BTreeMap<Role, Vec<String>>,
    dim: usize,
    state: Mutex<State>,
}

impl MockProvider {
    pub fn new(fixtures: BTreeMap<Role, Vec<String>>) -> Self {
        Self {
            fixtures,
            dim: DEFAULT_DIM,
            state: Mutex::new(State::default()),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BTreeMap<String, Vec<Value>> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("fixture document: {e}")))?;
        let mut fixtures = BTreeMap::new();
        for (role, responses) in doc {
            let role: Role = role
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("fixture role {role:?} is unknown")))?;
            let responses = responses
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect();
            fixtures.insert(role, responses);
        }
        Ok(Self::new(fixtures))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn fixtures(&self) -> &BTreeMap<Role, Vec<String>> {
        &self.fixtures
    }

    pub fn call_count(&self, role: Role) -> usize {
        self.lock().counters.get(&role).copied().unwrap_or(0)
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.lock().calls.clone()
    }

    pub fn calls_for(&self, role: Role) -> Vec<RecordedCall> {
        self.lock()
            .calls
            .iter()
            .filter(|c| c.role == role)
            .cloned()
            .collect()
    }

    /// Rewinds ordinals and clears the call log.
    pub fn reset(&self) {
        *self.lock() = State::default();
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl CompletionProvider for MockProvider {
    fn complete(&self, prompt: &RolePrompt) -> Result<String> {
        let mut state = self.lock();
        let counter = state.counters.entry(prompt.role).or_insert(0);
        *counter += 1;
        let ordinal = *counter;
        state.calls.push(RecordedCall {
            role: prompt.role,
            ordinal,
            prompt: prompt.clone(),
        });
        self.fixtures
            .get(&prompt.role)
            .and_then(|list| list.get(ordinal - 1))
            .cloned()
            .ok_or(Error::FixtureMiss {
                role: prompt.role,
                ordinal,
            })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        hashed_embedding(text, self.dim)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bucket index of a token in the hashed embedding.
pub fn token_bucket(token: &str, dim: usize) -> usize {
    (fnv1a(token.as_bytes()) % dim as u64) as usize
}

/// Unit-length bag-of-tokens embedding: each lowercase alphanumeric token adds
/// one count to its FNV-1a bucket.
pub fn hashed_embedding(text: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut counts = vec![0.0f64; dim];
    let toks = tokens(text);
    if toks.is_empty() {
        counts[(fnv1a(text.as_bytes()) % dim as u64) as usize] = 1.0;
    }
    for t in &toks {
        counts[token_bucket(t, dim)] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    EmbeddingVector::new(counts.into_iter().map(|c| c / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Schema;
    use crate::knowledge::relevance;
    use proptest::prelude::*;

    fn prompt(role: Role) -> RolePrompt {
        RolePrompt::new(role, "", "hello", Schema::Hypothesis).unwrap()
    }

    #[test]
    fn fixtures_replay_by_role_and_ordinal() {
        let mock = MockProvider::from_json(
            r#"{"theorist": ["t1", {"formulation": "t2"}], "pragmatist": ["p1"]}"#,
        )
        .unwrap();
        assert_eq!(mock.complete(&prompt(Role::Theorist)).unwrap(), "t1");
        assert_eq!(mock.complete(&prompt(Role::Pragmatist)).unwrap(), "p1");
        assert_eq!(
            mock.complete(&prompt(Role::Theorist)).unwrap(),
            r#"{"formulation":"t2"}"#
        );
        let miss = mock.complete(&prompt(Role::Theorist)).unwrap_err();
        assert!(matches!(miss, Error::FixtureMiss { role: Role::Theorist, ordinal: 3 }));
        assert!(matches!(
            mock.complete(&prompt(Role::Builder)),
            Err(Error::FixtureMiss { ordinal: 1, .. })
        ));
        mock.reset();
        assert_eq!(mock.complete(&prompt(Role::Theorist)).unwrap(), "t1");
    }

    #[test]
    fn unknown_fixture_role_rejected() {
        assert!(MockProvider::from_json(r#"{"judge": ["x"]}"#).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let a = hashed_embedding("SIR model of measles spread", 16).unwrap();
        let b = hashed_embedding("SIR model of measles spread", 16).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.dim(), 16);
        assert!((hashed_embedding("!!!", 16).unwrap().norm() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn disjoint_tokens_are_orthogonal_absent_collisions(
            left in proptest::collection::btree_set("[a-z]{1,8}", 1..6),
            right in proptest::collection::btree_set("[a-z]{1,8}", 1..6),
        ) {
            let dim = 16;
            prop_assume!(left.is_disjoint(&right));
            let lb: std::collections::BTreeSet<_> = left.iter().map(|t| token_bucket(t, dim)).collect();
            let rb: std::collections::BTreeSet<_> = right.iter().map(|t| token_bucket(t, dim)).collect();
            let lt = left.iter().cloned().collect::<Vec<_>>().join(" ");
            let rt = right.iter().cloned().collect::<Vec<_>>().join(" ");
            let s = relevance(&hashed_embedding(&lt, dim).unwrap(), &hashed_embedding(&rt, dim).unwrap()).unwrap();
            if lb.is_disjoint(&rb) {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!(s > 0.0);
            }
        }
    }
}
