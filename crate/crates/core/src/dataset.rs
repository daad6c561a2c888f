//! Ground-truth property tables.
//!
//! Input is UTF-8 CSV with a header row containing `formula` and `value`
//! (entity datasets may use `name` instead of `formula`) and an optional
//! `source` column. Rows whose subject or value cannot be parsed are
//! collected as rejects; rows naming the same canonical subject are merged
//! according to the [`DedupPolicy`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{parse_formula, Composition};
use crate::metrics::{rank_by_score, Direction, MetricsError, RankTable};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("CSV schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("all {rejected} rows were rejected")]
    AllRowsRejected { rejected: usize },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write output: {0}")]
    Write(#[source] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DedupPolicy {
    #[default]
    Mean,
    Max,
    First,
}

/// What the rows of a dataset name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    /// Chemical formulas, canonicalized through the formula parser.
    #[default]
    Compounds,
    /// Free-text names (countries, ...), trimmed but otherwise verbatim.
    Entities,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Subject {
    Compound(Composition),
    Entity(String),
}

impl Subject {
    /// Identity used for deduplication and as the ranking item id.
    pub fn key(&self) -> String {
        match self {
            Subject::Compound(c) => c.canonical_string(),
            Subject::Entity(name) => name.clone(),
        }
    }

    pub fn composition(&self) -> Option<&Composition> {
        match self {
            Subject::Compound(c) => Some(c),
            Subject::Entity(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyRecord {
    pub raw_formula: String,
    pub subject: Subject,
    pub value: f64,
    pub source_line: u64,
    pub source: Option<String>,
}

impl PropertyRecord {
    pub fn key(&self) -> String {
        self.subject.key()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub line: u64,
    pub raw_formula: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub rows_in: usize,
    pub merged_duplicates: usize,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub name: String,
    pub unit: String,
    pub dedup: DedupPolicy,
    pub kind: SubjectKind,
}

impl IngestConfig {
    pub fn new(name: impl Into<String>) -> Self {
        IngestConfig {
            name: name.into(),
            unit: String::new(),
            dedup: DedupPolicy::default(),
            kind: SubjectKind::default(),
        }
    }
}

/// One record per canonical subject, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyDataset {
    pub name: String,
    pub unit: String,
    pub dedup_policy: DedupPolicy,
    pub kind: SubjectKind,
    pub records: Vec<PropertyRecord>,
}

impl PropertyDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&PropertyRecord> {
        self.records.iter().find(|r| r.key() == key)
    }

    /// Copy with every value passed through `f`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> PropertyDataset {
        let mut out = self.clone();
        for r in &mut out.records {
            r.value = f(r.value);
        }
        out
    }

    /// Writes the deduplicated dataset as `formula,value[,source]` CSV, keyed
    /// by canonical subject.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let subject_col = match self.kind {
            SubjectKind::Compounds => "formula",
            SubjectKind::Entities => "name",
        };
        w.write_record([subject_col, "value", "source"])?;
        for r in &self.records {
            w.write_record([
                r.key(),
                r.value.to_string(),
                r.source.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(DatasetError::Write)
    }
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    config: &IngestConfig,
) -> Result<(PropertyDataset, IngestReport), DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(file, config)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    config: &IngestConfig,
) -> Result<(PropertyDataset, IngestReport), DatasetError> {
    let mut csv = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(DatasetError::AllRowsRejected { rejected: 0 });
    }
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let subject_col = match config.kind {
        SubjectKind::Compounds => column("formula"),
        SubjectKind::Entities => column("name").or_else(|| column("formula")),
    }
    .ok_or_else(|| {
        DatasetError::SchemaMismatch(format!(
            "missing subject column (`formula`{}) in header {:?}",
            if config.kind == SubjectKind::Entities { " or `name`" } else { "" },
            headers.iter().collect::<Vec<_>>()
        ))
    })?;
    let value_col = column("value").ok_or_else(|| {
        DatasetError::SchemaMismatch(format!(
            "missing `value` column in header {:?}",
            headers.iter().collect::<Vec<_>>()
        ))
    })?;
    let source_col = column("source");

    struct Merged {
        record: PropertyRecord,
        sum: f64,
        count: usize,
    }
    let mut merged: Vec<Merged> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut report = IngestReport::default();

    for row in csv.records() {
        report.rows_in += 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.rejects.push(Reject {
                    line,
                    raw_formula: String::new(),
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let raw = row.get(subject_col).unwrap_or("").to_string();
        let mut reject = |reason: String| {
            report.rejects.push(Reject {
                line,
                raw_formula: raw.clone(),
                reason,
            })
        };
        let subject = match config.kind {
            SubjectKind::Compounds => match parse_formula(&raw) {
                Ok(c) => Subject::Compound(c),
                Err(e) => {
                    reject(format!("{}: {e}", e.kind()));
                    continue;
                }
            },
            SubjectKind::Entities if raw.is_empty() => {
                reject("empty name".into());
                continue;
            }
            SubjectKind::Entities => Subject::Entity(raw.clone()),
        };
        let value_text = row.get(value_col).unwrap_or("");
        let value = match value_text.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                reject(format!("bad value `{value_text}`"));
                continue;
            }
        };
        let record = PropertyRecord {
            raw_formula: raw.clone(),
            subject,
            value,
            source_line: line,
            source: source_col
                .and_then(|c| row.get(c))
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        };
        let key = record.key();
        match by_key.get(&key) {
            Some(&i) => {
                let m = &mut merged[i];
                report.merged_duplicates += 1;
                m.sum += value;
                m.count += 1;
                match config.dedup {
                    DedupPolicy::Mean => m.record.value = m.sum / m.count as f64,
                    DedupPolicy::Max => m.record.value = m.record.value.max(value),
                    DedupPolicy::First => {}
                }
            }
            None => {
                by_key.insert(key, merged.len());
                merged.push(Merged {
                    record,
                    sum: value,
                    count: 1,
                });
            }
        }
    }

    if merged.is_empty() {
        return Err(DatasetError::AllRowsRejected {
            rejected: report.rejects.len(),
        });
    }
    let dataset = PropertyDataset {
        name: config.name.clone(),
        unit: config.unit.clone(),
        dedup_policy: config.dedup,
        kind: config.kind,
        records: merged.into_iter().map(|m| m.record).collect(),
    };
    Ok((dataset, report))
}

/// Writes rejects as `line,raw_formula,reason` CSV.
pub fn write_rejects<W: Write>(rejects: &[Reject], writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["line", "raw_formula", "reason"])?;
    for r in rejects {
        w.write_record([r.line.to_string(), r.raw_formula.clone(), r.reason.clone()])?;
    }
    w.flush().map_err(DatasetError::Write)
}

/// Ranks the dataset by value, rank 1 = highest.
pub fn ground_truth_ranks(dataset: &PropertyDataset) -> Result<RankTable, MetricsError> {
    if dataset.len() < 2 {
        return Err(MetricsError::TooFewItems { n: dataset.len() });
    }
    let table = rank_by_score(
        dataset.records.iter().map(|r| (r.key(), r.value)),
        Direction::Descending,
    )?;
    if table.all_tied() {
        return Err(MetricsError::DegenerateInput);
    }
    Ok(table)
}
