//! Problem bundle on disk: `<dir>/problem.json` plus a `<dir>/data/` tree.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::debate::DataConstraints;
use crate::error::{Error, Result};

pub const PROBLEM_FILE: &str = "problem.json";
pub const DATA_DIR: &str = "data";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ProblemDoc {
    id: String,
    statement: String,
    #[serde(default)]
    domain_tag: String,
    constraints: DataConstraints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemBundle {
    pub id: String,
    pub statement: String,
    pub domain_tag: String,
    /// Paths relative to the bundle's `data/` directory.
    pub data_files: Vec<PathBuf>,
    pub constraints: DataConstraints,
    pub root: PathBuf,
}

fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            walk(&path, base, out)?;
        } else {
            out.push(path.strip_prefix(base).expect("under base").to_path_buf());
        }
    }
    Ok(())
}

impl ProblemBundle {
    pub fn new(
        id: impl Into<String>,
        statement: impl Into<String>,
        domain_tag: impl Into<String>,
        constraints: DataConstraints,
        root: impl Into<PathBuf>,
    ) -> Result<Self> {
        let b = Self {
            id: id.into(),
            statement: statement.into(),
            domain_tag: domain_tag.into(),
            data_files: Vec::new(),
            constraints,
            root: root.into(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::invalid("problem id must be non-empty"));
        }
        if self.statement.trim().is_empty() {
            return Err(Error::invalid(format!("problem {}: empty statement", self.id)));
        }
        self.constraints
            .validate()
            .map_err(|e| e.context(format!("problem {}", self.id)))?;
        if let Some(missing) = self.data_files.iter().find(|f| !self.data_dir().join(f).is_file()) {
            return Err(Error::invalid(format!(
                "problem {}: data file {} does not exist",
                self.id,
                missing.display()
            )));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join(DATA_DIR)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PROBLEM_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: ProblemDoc = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let mut bundle = Self {
            id: doc.id,
            statement: doc.statement,
            domain_tag: doc.domain_tag,
            data_files: Vec::new(),
            constraints: doc.constraints,
            root: dir.to_path_buf(),
        };
        let data = bundle.data_dir();
        if data.is_dir() {
            walk(&data, &data, &mut bundle.data_files)?;
        }
        bundle.validate()?;
        Ok(bundle)
    }

    /// Bundles in the immediate subdirectories of `dir` holding a `problem.json`, by name.
    pub fn load_all(dir: &Path) -> Result<Vec<Self>> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(PROBLEM_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| Self::load(d)).collect()
    }

    /// Copies the data tree into `<workdir>/data/`.
    pub fn stage_data(&self, workdir: &Path) -> Result<()> {
        let src = self.data_dir();
        let dst = workdir.join(DATA_DIR);
        fs::create_dir_all(&dst).map_err(|e| Error::io(&dst, e))?;
        for f in &self.data_files {
            let to = dst.join(f);
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::copy(src.join(f), &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    }
}
