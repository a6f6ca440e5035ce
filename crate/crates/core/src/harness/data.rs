//! JSONL datasets: loading with line-numbered schema errors, optional field
//! renaming, and atomic writes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::prover::merge_contexts;
use crate::statement::{
    Candidate, CandidatePool, ContextMode, FormalStatement, GenerationConfig, Origin, VerifRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    VerifTask,
    AutoformTask,
    PoolFile,
    TranscriptFile,
    PairFile,
    PointFile,
    LabelFile,
    ProblemFile,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

/// A problem with one line of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaIssue {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SchemaIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} ({kind}): {} schema error(s)\n{}", .issues.len(), join_issues(.issues))]
    Schema {
        path: PathBuf,
        kind: DatasetKind,
        issues: Vec<SchemaIssue>,
    },
}

fn join_issues(issues: &[SchemaIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

/// Renames source fields to the canonical names a loader expects, for
/// datasets published under different field names. Stored as a JSON object
/// `{"canonical": "source", ...}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldMap(pub BTreeMap<String, String>);

impl FieldMap {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        serde_json::from_str(&text).map_err(|e| LoadError::Io {
            path: path.to_path_buf(),
            message: format!("invalid field map: {e}"),
        })
    }

    fn apply(&self, value: &mut Value) {
        let Value::Object(obj) = value else { return };
        for (canonical, source) in &self.0 {
            if !obj.contains_key(canonical) {
                if let Some(v) = obj.remove(source) {
                    obj.insert(canonical.clone(), v);
                }
            }
        }
    }
}

fn io_error(path: &Path, e: impl fmt::Display) -> LoadError {
    LoadError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads one record per non-blank line. Every malformed line is reported,
/// not just the first.
pub fn load_jsonl<T: DeserializeOwned>(
    path: &Path,
    kind: DatasetKind,
    fields: Option<&FieldMap>,
) -> Result<Vec<(usize, T)>, LoadError> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                issues.push(SchemaIssue {
                    line: line_no,
                    message: format!("invalid JSON: {e}"),
                });
                continue;
            }
        };
        if let Some(map) = fields {
            map.apply(&mut value);
        }
        match serde_json::from_value::<T>(value) {
            Ok(v) => out.push((line_no, v)),
            Err(e) => issues.push(SchemaIssue {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(LoadError::Schema {
            path: path.to_path_buf(),
            kind,
            issues,
        })
    }
}

/// Serializes records as JSONL.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// One row of a metric benchmark as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifTask {
    pub id: String,
    pub nl_statement: String,
    /// Imports and opens both formalizations are elaborated under.
    pub src_header: String,
    pub reference: String,
    pub prediction: String,
    pub label: bool,
}

/// A row whose prediction could not be parsed into a statement. It is scored
/// as a negative prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct UnparsedVerif {
    pub id: String,
    pub line: usize,
    pub label: bool,
    pub reference_length: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifDataset {
    pub records: Vec<VerifRecord>,
    pub unparsed: Vec<UnparsedVerif>,
}

impl VerifDataset {
    pub fn total(&self) -> usize {
        self.records.len() + self.unparsed.len()
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label).count() + self.unparsed.iter().filter(|u| u.label).count()
    }
}

fn statement_with_header(text: &str, header: &str, origin: Origin) -> Result<FormalStatement, String> {
    let s = FormalStatement::parse(text, origin).map_err(|e| e.to_string())?;
    let context = merge_contexts(header, s.context());
    Ok(s.with_context(context))
}

pub fn load_verif_dataset(path: &Path, fields: Option<&FieldMap>) -> Result<VerifDataset, LoadError> {
    let rows: Vec<(usize, VerifTask)> = load_jsonl(path, DatasetKind::VerifTask, fields)?;
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    let mut data = VerifDataset::default();
    for (line, t) in rows {
        if !seen.insert(t.id.clone()) {
            issues.push(SchemaIssue {
                line,
                message: format!("duplicate id `{}`", t.id),
            });
            continue;
        }
        let reference = match statement_with_header(&t.reference, &t.src_header, Origin::Reference) {
            Ok(s) => s,
            Err(e) => {
                issues.push(SchemaIssue {
                    line,
                    message: format!("field `reference`: {e}"),
                });
                continue;
            }
        };
        match statement_with_header(&t.prediction, &t.src_header, Origin::Prediction) {
            Ok(prediction) => data
                .records
                .push(VerifRecord::new(t.id, t.nl_statement, reference, prediction, t.label)),
            Err(error) => data.unparsed.push(UnparsedVerif {
                id: t.id,
                line,
                label: t.label,
                reference_length: reference.char_len(),
                error,
            }),
        }
    }
    if issues.is_empty() {
        Ok(data)
    } else {
        Err(LoadError::Schema {
            path: path.to_path_buf(),
            kind: DatasetKind::VerifTask,
            issues,
        })
    }
}

/// Either a bare generator output or a full candidate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CandidateEntry {
    Text(String),
    Full(Candidate),
}

/// A sampled pool as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolRecord {
    pub problem_id: String,
    pub informal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub context_mode: ContextMode,
    pub candidates: Vec<CandidateEntry>,
    pub gen_config: GenerationConfig,
}

impl From<PoolRecord> for CandidatePool {
    fn from(r: PoolRecord) -> Self {
        CandidatePool {
            problem_id: r.problem_id,
            informal: r.informal,
            context: r.context.unwrap_or_default(),
            context_mode: r.context_mode,
            candidates: r
                .candidates
                .into_iter()
                .map(|c| match c {
                    CandidateEntry::Text(t) => Candidate::raw(t),
                    CandidateEntry::Full(c) => c,
                })
                .collect(),
            gen_config: r.gen_config,
        }
    }
}

impl From<&CandidatePool> for PoolRecord {
    fn from(p: &CandidatePool) -> Self {
        PoolRecord {
            problem_id: p.problem_id.clone(),
            informal: p.informal.clone(),
            context: (!p.context.is_empty()).then(|| p.context.clone()),
            context_mode: p.context_mode,
            candidates: p.candidates.iter().cloned().map(CandidateEntry::Full).collect(),
            gen_config: p.gen_config.clone(),
        }
    }
}

pub fn load_pools(path: &Path, fields: Option<&FieldMap>) -> Result<Vec<CandidatePool>, LoadError> {
    let rows: Vec<(usize, PoolRecord)> = load_jsonl(path, DatasetKind::PoolFile, fields)?;
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    let mut pools = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if !seen.insert(r.problem_id.clone()) {
            issues.push(SchemaIssue {
                line,
                message: format!("duplicate problem_id `{}`", r.problem_id),
            });
            continue;
        }
        if let Err(e) = r.gen_config.validate() {
            issues.push(SchemaIssue {
                line,
                message: format!("field `gen_config`: {e}"),
            });
            continue;
        }
        pools.push(CandidatePool::from(r));
    }
    if issues.is_empty() {
        Ok(pools)
    } else {
        Err(LoadError::Schema {
            path: path.to_path_buf(),
            kind: DatasetKind::PoolFile,
            issues,
        })
    }
}

/// A reference formalization for one autoformalization problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRecord {
    pub problem_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_header: Option<String>,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub problem_id: String,
    pub statement: FormalStatement,
}

pub fn load_references(path: &Path, fields: Option<&FieldMap>) -> Result<Vec<Reference>, LoadError> {
    let rows: Vec<(usize, ReferenceRecord)> = load_jsonl(path, DatasetKind::AutoformTask, fields)?;
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if !seen.insert(r.problem_id.clone()) {
            issues.push(SchemaIssue {
                line,
                message: format!("duplicate problem_id `{}`", r.problem_id),
            });
            continue;
        }
        match statement_with_header(&r.reference, r.src_header.as_deref().unwrap_or(""), Origin::Reference) {
            Ok(statement) => out.push(Reference {
                problem_id: r.problem_id,
                statement,
            }),
            Err(e) => issues.push(SchemaIssue {
                line,
                message: format!("field `reference`: {e}"),
            }),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(LoadError::Schema {
            path: path.to_path_buf(),
            kind: DatasetKind::AutoformTask,
            issues,
        })
    }
}

/// Two statements to compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub id: String,
    /// Shared header for both statements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub t1: String,
    pub t2: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatementPair {
    pub id: String,
    pub t1: FormalStatement,
    pub t2: FormalStatement,
}

pub fn load_pairs(path: &Path, fields: Option<&FieldMap>) -> Result<Vec<StatementPair>, LoadError> {
    let rows: Vec<(usize, PairRecord)> = load_jsonl(path, DatasetKind::PairFile, fields)?;
    let mut issues = Vec::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let header = r.context.as_deref().unwrap_or("");
        let t1 = statement_with_header(&r.t1, header, Origin::Synthetic);
        let t2 = statement_with_header(&r.t2, header, Origin::Synthetic);
        match (t1, t2) {
            (Ok(t1), Ok(t2)) => out.push(StatementPair { id: r.id, t1, t2 }),
            (Err(e), _) => issues.push(SchemaIssue {
                line,
                message: format!("field `t1`: {e}"),
            }),
            (_, Err(e)) => issues.push(SchemaIssue {
                line,
                message: format!("field `t2`: {e}"),
            }),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(LoadError::Schema {
            path: path.to_path_buf(),
            kind: DatasetKind::PairFile,
            issues,
        })
    }
}

/// Human judgment of the candidate a method selected for a problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub problem_id: String,
    /// Selection method the label applies to; absent means any method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub correct: bool,
}

/// A problem to generate candidates for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemRecord {
    pub problem_id: String,
    pub informal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default = "default_context_mode")]
    pub context_mode: ContextMode,
}

fn default_context_mode() -> ContextMode {
    ContextMode::None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn verif_rows_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"id":"a","nl_statement":"x","src_header":"import Mathlib","reference":"theorem r : 1 = 1 := rfl","prediction":"theorem p : 1 = 1","label":true}
{"id":"b","nl_statement":"x","src_header":"","reference":"theorem r : 2 = 2","prediction":"I cannot do this","label":false}

{"id":"c","nl_statement":"x","src_header":"","reference":"theorem r : 3 = 3","prediction":"theorem q : 3 = 3","label":true}
"#;
        let d = load_verif_dataset(&write(dir.path(), "v.jsonl", good), None).unwrap();
        assert_eq!(d.total(), 3);
        assert_eq!(d.positives(), 2);
        assert_eq!(d.unparsed.len(), 1);
        assert_eq!(d.records[0].reference.context(), "import Mathlib");
        assert_eq!(d.records[0].reference_length, "theorem r : 1 = 1".chars().count());

        let bad = r#"{"id":"a","nl_statement":"x","src_header":"","reference":"theorem r : 1 = 1","prediction":"theorem p : 1 = 1"}
not json
"#;
        let err = load_verif_dataset(&write(dir.path(), "bad.jsonl", bad), None).unwrap_err();
        let LoadError::Schema { issues, .. } = err else { panic!() };
        assert_eq!(issues.len(), 2);
        assert_eq!(issues[0].line, 1);
        assert!(issues[0].message.contains("label"), "{}", issues[0].message);
        assert_eq!(issues[1].line, 2);
    }

    #[test]
    fn field_map_renames() {
        let dir = tempfile::tempdir().unwrap();
        let row = r#"{"id":"a","informal_statement":"x","header":"","formal_statement":"theorem r : 1 = 1","pred":"theorem p : 1 = 1","correct":true}"#;
        let map = FieldMap(
            [
                ("nl_statement", "informal_statement"),
                ("src_header", "header"),
                ("reference", "formal_statement"),
                ("prediction", "pred"),
                ("label", "correct"),
            ]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        );
        let d = load_verif_dataset(&write(dir.path(), "v.jsonl", row), Some(&map)).unwrap();
        assert_eq!(d.records.len(), 1);
    }

    #[test]
    fn pools_reject_duplicates_and_accept_empty() {
        let dir = tempfile::tempdir().unwrap();
        let gen = r#""gen_config":{"temperature":0.7,"num_samples":50,"model_id":"m","decode_mode":"temperature_sampling"}"#;
        let body = format!(
            "{{\"problem_id\":\"p\",\"informal\":\"x\",\"context_mode\":\"none\",\"candidates\":[],{gen}}}\n\
             {{\"problem_id\":\"q\",\"informal\":\"y\",\"context_mode\":\"full_file\",\"candidates\":[\"theorem a : 1 = 1\"],{gen}}}\n"
        );
        let pools = load_pools(&write(dir.path(), "p.jsonl", &body), None).unwrap();
        assert_eq!(pools.len(), 2);
        assert!(pools[0].candidates.is_empty());
        assert_eq!(pools[1].gen_config.num_samples, 50);

        let dup = format!("{}{}", body, body.lines().next().unwrap());
        let err = load_pools(&write(dir.path(), "d.jsonl", &dup), None).unwrap_err();
        assert!(err.to_string().contains("duplicate problem_id `p`"), "{err}");
    }

    #[test]
    fn jsonl_round_trip_is_field_equivalent() {
        let dir = tempfile::tempdir().unwrap();
        let body = "{\"label\":false,\"id\":\"a\",\"nl_statement\":\"x\",\"src_header\":\"\",\"reference\":\"theorem r : 1 = 1\",   \"prediction\":\"theorem p : 1 = 1\"}\n";
        let path = write(dir.path(), "v.jsonl", body);
        let rows: Vec<VerifTask> = load_jsonl::<VerifTask>(&path, DatasetKind::VerifTask, None)
            .unwrap()
            .into_iter()
            .map(|(_, r)| r)
            .collect();
        let out = dir.path().join("out.jsonl");
        write_atomic(&out, to_jsonl(&rows).as_bytes()).unwrap();
        let a: Value = serde_json::from_str(body.trim()).unwrap();
        let b: Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
        assert_eq!(a, b);
    }
}
