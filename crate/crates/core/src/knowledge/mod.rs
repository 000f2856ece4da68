//! Knowledge base of verified historical solutions.
//!
//! Each entry is a triplet of problem embedding, executable code snippet and
//! an opaque paradigm descriptor. The base answers exact cosine top-k queries,
//! renders the grounded input handed to the debate stage, and gates
//! self-evolution through a novelty threshold.

mod store;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::error::{Error, Result};

pub use store::{load_dir, save_dir, Manifest, ManifestEntry, MANIFEST_FILE, SCHEMA_VERSION};

pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_TAU: f64 = 0.95;
pub const DEFAULT_DOMAIN: &str = "general";
pub const QUERY_PREFIX: &str = "Retrieve the formal mathematical structure for";

/// A dense, finite embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one component"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "embedding component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub embedding: EmbeddingVector,
    pub code_snippet: String,
    pub paradigm_descriptor: String,
    pub domain_tag: String,
    pub provenance: Provenance,
}

impl KnowledgeEntry {
    pub fn new(
        id: impl Into<String>,
        embedding: EmbeddingVector,
        code_snippet: impl Into<String>,
        paradigm_descriptor: impl Into<String>,
        domain_tag: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let entry = Self {
            id: id.into(),
            embedding,
            code_snippet: code_snippet.into(),
            paradigm_descriptor: paradigm_descriptor.into(),
            domain_tag: domain_tag.into(),
            provenance,
        };
        entry.validate()?;
        Ok(entry)
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.id)?;
        if self.code_snippet.trim().is_empty() {
            return Err(Error::invalid(format!("entry {}: empty code snippet", self.id)));
        }
        if self.paradigm_descriptor.trim().is_empty() {
            return Err(Error::invalid(format!(
                "entry {}: empty paradigm descriptor",
                self.id
            )));
        }
        Ok(())
    }
}

/// Ids double as directory names in the on-disk layout.
fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "entry id {id:?} must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    dim: usize,
    tau: f64,
    entries: Vec<KnowledgeEntry>,
}

impl KnowledgeBase {
    pub fn new(dim: usize, tau: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("knowledge base dimension must be positive"));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("novelty threshold {tau} not in (0, 1]")));
        }
        Ok(Self {
            dim,
            tau,
            entries: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("novelty threshold {tau} not in (0, 1]")));
        }
        self.tau = tau;
        Ok(())
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Inserts without the novelty check. Used by the loader and for seeding.
    pub fn insert(&mut self, entry: KnowledgeEntry) -> Result<()> {
        entry.validate()?;
        self.check_dim(&entry.embedding)?;
        if self.get(&entry.id).is_some() {
            return Err(Error::invalid(format!("duplicate entry id {:?}", entry.id)));
        }
        self.entries.push(entry);
        Ok(())
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::invalid(format!(
                "embedding dimension {} does not match knowledge base dimension {}",
                v.dim(),
                self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedQuery {
    pub prefix: String,
    pub query: String,
    pub domain: String,
}

impl AugmentedQuery {
    pub fn rendered(&self) -> String {
        format!("{}\n{}", self.prefix, self.query)
    }
}

impl fmt::Display for AugmentedQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rendered())
    }
}

pub fn augment_query(query: &str, domain: &str) -> Result<AugmentedQuery> {
    if query.trim().is_empty() {
        return Err(Error::invalid("query must be non-empty"));
    }
    let domain = match domain.trim() {
        "" => DEFAULT_DOMAIN,
        d => d,
    };
    Ok(AugmentedQuery {
        prefix: format!("{QUERY_PREFIX} {domain}"),
        query: query.to_string(),
        domain: domain.to_string(),
    })
}

/// Cosine similarity.
pub fn relevance(query: &EmbeddingVector, entry: &EmbeddingVector) -> Result<f64> {
    if query.dim() != entry.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            query.dim(),
            entry.dim()
        )));
    }
    let (qn, en) = (query.norm(), entry.norm());
    if qn == 0.0 || en == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine similarity is undefined for a zero-norm vector".into(),
        ));
    }
    let dot: f64 = query
        .values()
        .iter()
        .zip(entry.values())
        .map(|(a, b)| a * b)
        .sum();
    Ok((dot / (qn * en)).clamp(-1.0, 1.0))
}

/// Exact scan. Stored zero-norm embeddings are skipped with a warning.
pub fn retrieve_top_k<'a>(
    kb: &'a KnowledgeBase,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<(&'a KnowledgeEntry, f64)>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    kb.check_dim(query)?;
    if query.is_zero() {
        return Err(Error::DegenerateVector("query embedding has zero norm".into()));
    }
    let mut scored = Vec::with_capacity(kb.len());
    for entry in kb.entries() {
        if entry.embedding.is_zero() {
            warn!(entry = %entry.id, "skipping zero-norm stored embedding");
            continue;
        }
        scored.push((entry, relevance(query, &entry.embedding)?));
    }
    scored.sort_by(|(ea, sa), (eb, sb)| sb.total_cmp(sa).then_with(|| ea.id.cmp(&eb.id)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedBlock {
    pub entry_id: String,
    pub code_snippet: String,
    pub paradigm_descriptor: String,
    pub relevance_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundedInput {
    pub query: String,
    pub retrieved_blocks: Vec<RetrievedBlock>,
}

impl GroundedInput {
    /// Query followed by one labeled block per retrieved entry, code before paradigm.
    pub fn rendered(&self) -> String {
        let mut out = self.query.clone();
        for (i, b) in self.retrieved_blocks.iter().enumerate() {
            out.push_str(&format!(
                "\n\n### Retrieved solution {} (entry {}, relevance {:.4})\n\
                 ```code\n{}\n```\n```paradigm\n{}\n```",
                i + 1,
                b.entry_id,
                b.relevance_score,
                b.code_snippet.trim_end(),
                b.paradigm_descriptor.trim_end()
            ));
        }
        out
    }
}

pub fn assemble_grounded_input(query: &str, retrieved: &[(&KnowledgeEntry, f64)]) -> GroundedInput {
    GroundedInput {
        query: query.to_string(),
        retrieved_blocks: retrieved
            .iter()
            .map(|(e, score)| RetrievedBlock {
                entry_id: e.id.clone(),
                code_snippet: e.code_snippet.clone(),
                paradigm_descriptor: e.paradigm_descriptor.clone(),
                relevance_score: *score,
            })
            .collect(),
    }
}

/// Consolidates a solved problem into a fresh entry.
///
/// The id is a digest of the run id and the entry content, so replaying the
/// same run yields the same id while distinct runs or solutions never collide.
pub fn distill_entry(
    problem: &str,
    validated_code: &str,
    paradigm: &str,
    embedding: EmbeddingVector,
    domain: &str,
    run_id: &str,
) -> Result<KnowledgeEntry> {
    if validated_code.trim().is_empty() {
        return Err(Error::invalid("validated code must be non-empty"));
    }
    if paradigm.trim().is_empty() {
        return Err(Error::invalid("paradigm descriptor must be non-empty"));
    }
    let mut hasher = Sha256::new();
    for part in [run_id, problem, validated_code, paradigm] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    for v in embedding.values() {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    KnowledgeEntry::new(
        format!("k-{hex}"),
        embedding,
        validated_code,
        paradigm,
        if domain.trim().is_empty() { DEFAULT_DOMAIN } else { domain.trim() },
        Provenance {
            source: "distilled".into(),
            run_id: Some(run_id.to_string()),
            timestamp: Some(chrono::Utc::now().to_rfc3339()),
        },
    )
}

/// Maximum cosine similarity against stored entries; `None` for an empty base.
pub fn novelty_delta(kb: &KnowledgeBase, new_vec: &EmbeddingVector) -> Result<Option<f64>> {
    kb.check_dim(new_vec)?;
    if new_vec.is_zero() {
        return Err(Error::DegenerateVector("candidate embedding has zero norm".into()));
    }
    let mut best: Option<f64> = None;
    for entry in kb.entries().iter().filter(|e| !e.embedding.is_zero()) {
        let s = relevance(new_vec, &entry.embedding)?;
        best = Some(best.map_or(s, |b| b.max(s)));
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub admitted: bool,
    pub delta: Option<f64>,
}

/// Admits `entry` iff the base is empty or its novelty delta is strictly below tau.
/// A rejected entry leaves the base untouched.
pub fn admit_entry(kb: &mut KnowledgeBase, entry: KnowledgeEntry) -> Result<Admission> {
    entry.validate()?;
    let delta = novelty_delta(kb, &entry.embedding)?;
    let admitted = delta.is_none_or(|d| d < kb.tau);
    if admitted {
        kb.insert(entry)?;
    }
    Ok(Admission { admitted, delta })
}


#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn entry(id: &str, values: &[f64]) -> KnowledgeEntry {
        KnowledgeEntry::new(id, v(values), "code", "paradigm", "test", Provenance::default())
            .unwrap()
    }

    #[test]
    fn augment_query_uses_template() {
        let q = augment_query("Predict spread of an outbreak", "epidemiology").unwrap();
        assert_eq!(q.prefix, "Retrieve the formal mathematical structure for epidemiology");
        assert_eq!(q.query, "Predict spread of an outbreak");
        assert!(q.rendered().starts_with(&q.prefix));
        assert!(q.rendered().ends_with(&q.query));
    }

    #[test]
    fn augment_query_falls_back_to_general() {
        let q = augment_query("Q", "").unwrap();
        assert!(q.prefix.ends_with("for general"));
        assert!(matches!(augment_query("", "opt"), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn relevance_examples() {
        let a = v(&[3.0, 4.0]);
        assert!((relevance(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(relevance(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let s = relevance(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn relevance_errors() {
        assert!(matches!(
            relevance(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            relevance(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![f64::INFINITY]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    fn scored_kb() -> KnowledgeBase {
        // Unit query along x; scores equal the x component of unit vectors.
        let mut kb = KnowledgeBase::new(2, 0.95).unwrap();
        for (id, s) in [("a", 0.9f64), ("b", 0.2), ("c", 0.5)] {
            kb.insert(entry(id, &[s, (1.0 - s * s).sqrt()])).unwrap();
        }
        kb
    }

    #[test]
    fn top_k_picks_highest_scores() {
        let kb = scored_kb();
        let got = retrieve_top_k(&kb, &v(&[1.0, 0.0]), 2).unwrap();
        let ids: Vec<_> = got.iter().map(|(e, _)| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!((got[0].1 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn top_k_truncation_and_ties() {
        let kb = scored_kb();
        assert_eq!(retrieve_top_k(&kb, &v(&[1.0, 0.0]), 10).unwrap().len(), 3);

        let mut tie = KnowledgeBase::new(2, 0.95).unwrap();
        tie.insert(entry("b", &[0.7, 0.5])).unwrap();
        tie.insert(entry("a", &[0.7, 0.5])).unwrap();
        let got = retrieve_top_k(&tie, &v(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(got[0].0.id, "a");
    }

    #[test]
    fn top_k_edge_cases() {
        let empty = KnowledgeBase::new(2, 0.95).unwrap();
        assert!(retrieve_top_k(&empty, &v(&[1.0, 0.0]), 3).unwrap().is_empty());

        let mut kb = scored_kb();
        kb.insert(entry("z", &[0.0, 0.0])).unwrap();
        let got = retrieve_top_k(&kb, &v(&[1.0, 0.0]), 10).unwrap();
        assert!(got.iter().all(|(e, _)| e.id != "z"));

        assert!(retrieve_top_k(&kb, &v(&[1.0, 0.0, 0.0]), 1).is_err());
        assert!(retrieve_top_k(&kb, &v(&[1.0, 0.0]), 0).is_err());
    }

    #[test]
    fn grounded_input_rendering() {
        let g = assemble_grounded_input("Q", &[]);
        assert!(g.retrieved_blocks.is_empty());
        assert_eq!(g.rendered(), "Q");

        let mut e1 = entry("e1", &[1.0, 0.0]);
        e1.code_snippet = "import numpy".into();
        e1.paradigm_descriptor = "SIR compartments".into();
        let e2 = entry("e2", &[0.0, 1.0]);
        let g = assemble_grounded_input("Q", &[(&e1, 0.9), (&e2, 0.5)]);
        let ids: Vec<_> = g.retrieved_blocks.iter().map(|b| b.entry_id.as_str()).collect();
        assert_eq!(ids, ["e1", "e2"]);
        let text = g.rendered();
        assert!(text.starts_with("Q\n"));
        let code_at = text.find("import numpy").unwrap();
        let paradigm_at = text.find("SIR compartments").unwrap();
        assert!(code_at < paradigm_at);
        assert!(text.find("entry e1").unwrap() < text.find("entry e2").unwrap());
    }

    #[test]
    fn distill_passes_fields_through() {
        let x = v(&[0.6, 0.8]);
        let e = distill_entry("P", "C", "pi", x.clone(), "epi", "run-1").unwrap();
        assert_eq!(e.embedding, x);
        assert_eq!(e.code_snippet, "C");
        assert_eq!(e.paradigm_descriptor, "pi");
        assert_eq!(e.provenance.run_id.as_deref(), Some("run-1"));
        assert!(e.provenance.timestamp.is_some());

        let other = distill_entry("P", "C", "pi", x.clone(), "epi", "run-2").unwrap();
        assert_ne!(e.id, other.id);

        assert!(matches!(
            distill_entry("P", "", "pi", x.clone(), "epi", "r"),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            distill_entry("P", "C", " ", x, "epi", "r"),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn novelty_examples() {
        let mut kb = KnowledgeBase::new(2, 0.95).unwrap();
        assert_eq!(novelty_delta(&kb, &v(&[1.0, 0.0])).unwrap(), None);
        kb.insert(entry("a", &[1.0, 0.0])).unwrap();
        assert!((novelty_delta(&kb, &v(&[2.0, 0.0])).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(novelty_delta(&kb, &v(&[0.0, 3.0])).unwrap(), Some(0.0));
        assert!(matches!(
            novelty_delta(&kb, &v(&[0.0, 0.0])),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn admission_threshold_is_strict() {
        // Unit vectors at cosine c from the x axis give delta == c.
        let at = |c: f64| [c, (1.0 - c * c).sqrt()];
        let mut kb = KnowledgeBase::new(2, 0.95).unwrap();
        kb.insert(entry("base", &[1.0, 0.0])).unwrap();

        let dup = admit_entry(&mut kb, entry("dup", &[1.0, 0.0])).unwrap();
        assert!(!dup.admitted);
        assert_eq!(kb.len(), 1);

        let novel = admit_entry(&mut kb, entry("novel", &at(0.3))).unwrap();
        assert!(novel.admitted);
        assert_eq!(kb.len(), 2);
    }

    #[test]
    fn admission_at_exact_tau_rejected() {
        let mut kb = KnowledgeBase::new(2, 0.5).unwrap();
        kb.insert(entry("base", &[1.0, 0.0])).unwrap();
        // cos(60°) is 0.5 up to rounding; pick tau equal to the computed delta.
        let cand = v(&[0.5, 0.75f64.sqrt()]);
        let d = novelty_delta(&kb, &cand).unwrap().unwrap();
        kb.set_tau(d).unwrap();
        let mut e = entry("c", &[0.0, 1.0]);
        e.embedding = cand;
        assert!(!admit_entry(&mut kb, e).unwrap().admitted);
    }

    #[test]
    fn admission_rejects_duplicate_id() {
        let mut kb = KnowledgeBase::new(2, 0.95).unwrap();
        kb.insert(entry("a", &[1.0, 0.0])).unwrap();
        assert!(matches!(
            admit_entry(&mut kb, entry("a", &[0.0, 1.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn entry_id_validation() {
        assert!(KnowledgeEntry::new("../x", v(&[1.0]), "c", "p", "d", Provenance::default())
            .is_err());
        assert!(KnowledgeEntry::new("ok-1.a_b", v(&[1.0]), "c", "p", "d", Provenance::default())
            .is_ok());
        assert!(KnowledgeBase::new(0, 0.5).is_err());
        assert!(KnowledgeBase::new(2, 0.0).is_err());
        assert!(KnowledgeBase::new(2, 1.5).is_err());
    }
}
