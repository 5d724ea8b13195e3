//! Fact storage: canonical data values, relations, and TSV-backed databases.
//!
//! Data values are untyped byte strings. Integer-looking values are
//! canonicalized (no leading zeros, no negative zero) so that equality is
//! plain byte equality everywhere. Relations are sets of tuples; the on-disk
//! format is one TSV file per relation. Serialized sizes are defined as the
//! TSV byte count (value bytes + one separator between columns + one newline
//! per row) and are used verbatim by the runtime metrics and the cost model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub type Tuple = Vec<String>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: ragged row: expected arity {expected}, found {found}")]
    RaggedRow {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: value contains a forbidden byte (tab, newline, 0x1e or 0x1f)")]
    ForbiddenByte { file: String, line: usize },
    #[error("no .tsv files found in {0}")]
    EmptyDirectory(String),
    #[error("relation {0} already exists")]
    DuplicateRelation(String),
    #[error("relation {relation}: tuple arity {found} does not match declared arity {expected}")]
    ArityMismatch {
        relation: String,
        expected: usize,
        found: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Canonicalizes a data value: integer literals lose leading zeros and a
/// negative zero collapses to `0`; everything else is kept verbatim.
pub fn canonical_value(raw: &str) -> String {
    let (neg, digits) = match raw.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, raw),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return raw.to_string();
    }
    let trimmed = digits.trim_start_matches('0');
    let trimmed = if trimmed.is_empty() { "0" } else { trimmed };
    if neg && trimmed != "0" {
        format!("-{trimmed}")
    } else {
        trimmed.to_string()
    }
}

/// Values may not contain the TSV separators or the wire-format separators.
pub fn value_is_clean(v: &str) -> bool {
    !v.bytes().any(|b| matches!(b, b'\t' | b'\n' | b'\r' | 0x1e | 0x1f))
}

/// Serialized TSV size of one tuple: value bytes, one tab between columns,
/// one trailing newline.
pub fn tuple_bytes(t: &[String]) -> u64 {
    let values: usize = t.iter().map(|v| v.len()).sum();
    (values + t.len().saturating_sub(1) + 1) as u64
}

/// A set of tuples of fixed arity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    arity: usize,
    tuples: BTreeSet<Tuple>,
}

impl Relation {
    pub fn new(arity: usize) -> Self {
        Relation {
            arity,
            tuples: BTreeSet::new(),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Inserts a tuple; returns false when it was already present.
    pub fn insert(&mut self, tuple: Tuple) -> bool {
        debug_assert_eq!(tuple.len(), self.arity);
        self.tuples.insert(tuple)
    }

    pub fn contains(&self, tuple: &[String]) -> bool {
        self.tuples.contains(tuple)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tuple> {
        self.tuples.iter()
    }

    /// Total serialized size in bytes.
    pub fn serialized_bytes(&self) -> u64 {
        self.tuples.iter().map(|t| tuple_bytes(t)).sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.tuples {
            out.push_str(&t.join("\t"));
            out.push('\n');
        }
        out
    }
}

impl FromIterator<Tuple> for Relation {
    fn from_iter<I: IntoIterator<Item = Tuple>>(iter: I) -> Self {
        let tuples: BTreeSet<Tuple> = iter.into_iter().collect();
        let arity = tuples.iter().next().map_or(0, |t| t.len());
        Relation { arity, tuples }
    }
}

/// A named collection of relations. Every relation gets a stable ordinal in
/// creation order; tuple identifiers used by the runtime are pairs of
/// (relation ordinal, record index in canonical order).
#[derive(Debug, Clone, Default)]
pub struct Database {
    relations: BTreeMap<String, Relation>,
    ordinals: BTreeMap<String, usize>,
    creation_order: Vec<String>,
}

impl Database {
    pub fn new() -> Self {
        Database::default()
    }

    pub fn insert_relation(&mut self, name: &str, rel: Relation) -> Result<(), DataError> {
        if self.relations.contains_key(name) {
            return Err(DataError::DuplicateRelation(name.to_string()));
        }
        self.ordinals.insert(name.to_string(), self.creation_order.len());
        self.creation_order.push(name.to_string());
        self.relations.insert(name.to_string(), rel);
        Ok(())
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.get(name)
    }

    pub fn ordinal(&self, name: &str) -> Option<usize> {
        self.ordinals.get(name).copied()
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(|s| s.as_str())
    }

    pub fn relations(&self) -> impl Iterator<Item = (&str, &Relation)> {
        self.relations.iter().map(|(n, r)| (n.as_str(), r))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.relations.contains_key(name)
    }

    /// Loads one `.tsv` file per relation from a directory. Filenames are the
    /// relation names. Rows are canonicalized and deduplicated; the returned
    /// warnings report dropped duplicates per relation.
    pub fn load_dir(dir: &Path) -> Result<(Database, Vec<String>), DataError> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| DataError::Io {
                path: dir.display().to_string(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(DataError::EmptyDirectory(dir.display().to_string()));
        }
        let mut db = Database::new();
        let mut warnings = Vec::new();
        for path in files {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let text = fs::read_to_string(&path).map_err(|e| DataError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let (rel, dropped) = parse_tsv(&text, &path.display().to_string())?;
            if dropped > 0 {
                warnings.push(format!("{name}: dropped {dropped} duplicate row(s)"));
            }
            db.insert_relation(&name, rel)?;
        }
        Ok((db, warnings))
    }

    /// Writes every relation as `<name>.tsv` under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir).map_err(|e| DataError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        for (name, rel) in &self.relations {
            let path = dir.join(format!("{name}.tsv"));
            fs::write(&path, rel.to_tsv()).map_err(|e| DataError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        Ok(())
    }
}

/// Parses TSV text into a relation; arity is inferred from the first row and
/// enforced on the rest. Returns the relation and the duplicate-row count.
pub fn parse_tsv(text: &str, file: &str) -> Result<(Relation, usize), DataError> {
    let mut rel: Option<Relation> = None;
    let mut dropped = 0usize;
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.is_empty() {
            continue;
        }
        let values: Vec<String> = raw_line.split('\t').map(canonical_value).collect();
        if values.iter().any(|v| !value_is_clean(v)) {
            return Err(DataError::ForbiddenByte {
                file: file.to_string(),
                line,
            });
        }
        let rel = rel.get_or_insert_with(|| Relation::new(values.len()));
        if values.len() != rel.arity() {
            return Err(DataError::RaggedRow {
                file: file.to_string(),
                line,
                expected: rel.arity(),
                found: values.len(),
            });
        }
        if !rel.insert(values) {
            dropped += 1;
        }
    }
    Ok((rel.unwrap_or_else(|| Relation::new(0)), dropped))
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} tuples (arity {})", self.len(), self.arity)
    }
}
