//! On-disk layout:
//!
//! ```text
//! <kb>/manifest.json
//! <kb>/entries/<id>/code.txt
//! <kb>/entries/<id>/paradigm.txt
//! <kb>/entries/<id>/embedding.txt   one decimal per line, exactly `dim` lines
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, KnowledgeBase, KnowledgeEntry, Provenance};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dim: usize,
    pub tau: f64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the knowledge-base root.
    pub path: String,
    pub domain_tag: String,
    #[serde(default)]
    pub provenance: Provenance,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_embedding(text: &str, dim: usize, path: &Path) -> Result<EmbeddingVector> {
    let values = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>().map_err(|_| {
                Error::invalid(format!("{}: unparseable embedding value {l:?}", path.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != dim {
        return Err(Error::invalid(format!(
            "{}: {} embedding values but manifest declares dim {dim}",
            path.display(),
            values.len()
        )));
    }
    EmbeddingVector::new(values)
}

pub fn load_dir(dir: &Path) -> Result<KnowledgeBase> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&read(&manifest_path)?)
        .map_err(|e| Error::invalid(format!("{}: {e}", manifest_path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported knowledge-base schema version {}",
            manifest.schema_version
        )));
    }
    let mut kb = KnowledgeBase::new(manifest.dim, manifest.tau)?;
    for m in manifest.entries {
        let root = dir.join(&m.path);
        let embedding_path = root.join("embedding.txt");
        let embedding = parse_embedding(&read(&embedding_path)?, manifest.dim, &embedding_path)?;
        let entry = KnowledgeEntry::new(
            m.id,
            embedding,
            read(&root.join("code.txt"))?,
            read(&root.join("paradigm.txt"))?,
            m.domain_tag,
            m.provenance,
        )?;
        kb.insert(entry)?;
    }
    Ok(kb)
}

pub fn save_dir(kb: &KnowledgeBase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        dim: kb.dim(),
        tau: kb.tau(),
        entries: Vec::with_capacity(kb.len()),
    };
    for e in kb.entries() {
        let rel = format!("entries/{}", e.id);
        let root = dir.join(&rel);
        fs::create_dir_all(&root).map_err(|err| Error::io(&root, err))?;
        write(&root.join("code.txt"), &e.code_snippet)?;
        write(&root.join("paradigm.txt"), &e.paradigm_descriptor)?;
        let mut emb = String::new();
        for v in e.embedding.values() {
            emb.push_str(&format!("{v}\n"));
        }
        write(&root.join("embedding.txt"), &emb)?;
        manifest.entries.push(ManifestEntry {
            id: e.id.clone(),
            path: rel,
            domain_tag: e.domain_tag.clone(),
            provenance: e.provenance.clone(),
        });
    }
    write(
        &dir.join(MANIFEST_FILE),
        &serde_json::to_string_pretty(&manifest)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(3, 0.9).unwrap();
        for (id, vals) in [("a", [0.1, -2.5, 1e-17]), ("b", [1.0 / 3.0, 0.0, 7.0])] {
            kb.insert(
                KnowledgeEntry::new(
                    id,
                    EmbeddingVector::new(vals.to_vec()).unwrap(),
                    format!("print('{id}')\n"),
                    "logistic growth",
                    "ecology",
                    Provenance {
                        source: "seed".into(),
                        ..Default::default()
                    },
                )
                .unwrap(),
            )
            .unwrap();
        }
        kb
    }

    #[test]
    fn save_then_load_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let kb = sample();
        save_dir(&kb, dir.path()).unwrap();
        assert_eq!(load_dir(dir.path()).unwrap(), kb);
        let lines = fs::read_to_string(dir.path().join("entries/b/embedding.txt")).unwrap();
        assert_eq!(lines.lines().count(), 3);
    }

    #[test]
    fn loader_rejects_dim_conflict() {
        let dir = tempfile::tempdir().unwrap();
        save_dir(&sample(), dir.path()).unwrap();
        fs::write(dir.path().join("entries/a/embedding.txt"), "1\n2\n").unwrap();
        let err = load_dir(dir.path()).unwrap_err();
        assert!(err.is_user_error(), "{err}");
    }

    #[test]
    fn loader_rejects_bad_decimal() {
        let dir = tempfile::tempdir().unwrap();
        save_dir(&sample(), dir.path()).unwrap();
        fs::write(dir.path().join("entries/a/embedding.txt"), "1\nx\n3\n").unwrap();
        assert!(load_dir(dir.path()).is_err());
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dir(dir.path()), Err(Error::Io { .. })));
    }
}
