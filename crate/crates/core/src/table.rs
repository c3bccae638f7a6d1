//! Tables, labels and per-column annotations.
//!
//! Cells are kept as raw strings. Typing happens in [`crate::types`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! label_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Trims surrounding whitespace; fails on an empty result.
            pub fn new(value: impl AsRef<str>) -> Result<Self, TableError> {
                let trimmed = value.as_ref().trim();
                if trimmed.is_empty() {
                    return Err(TableError::InvalidLabel(format!(
                        "{} must be non-empty",
                        stringify!($name)
                    )));
                }
                Ok(Self(trimmed.to_string()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl TryFrom<String> for $name {
            type Error = TableError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

label_type!(
    /// A knowledge-graph property identifier such as `datePublished`.
    ///
    /// Compared byte-for-byte after trimming; no case folding.
    RelationLabel
);

label_type!(
    /// A table topic / entity type such as `Book`.
    DomainLabel
);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    /// RFC-4180 CSV. The first record is a header and only fixes the width.
    Csv,
    /// One JSON array of cell values per line, no header.
    JsonRows,
}

impl TableFormat {
    /// `.csv` maps to CSV, `.jsonl` / `.json` / `.ndjson` to JSON rows.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "jsonl" | "json" | "ndjson" => Some(Self::JsonRows),
            _ => None,
        }
    }
}

/// A rectangular table. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    id: String,
    rows: Vec<Vec<String>>,
    column_count: usize,
    domain: Option<DomainLabel>,
    ground_truth: BTreeMap<usize, RelationLabel>,
}

impl Table {
    /// Builds a table, padding short rows with empty cells.
    pub fn new(
        id: impl Into<String>,
        column_count: usize,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, TableError> {
        if column_count == 0 {
            return Err(TableError::MalformedInput(
                "a table needs at least one column".into(),
            ));
        }
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            if row.len() > column_count {
                return Err(TableError::MalformedInput(format!(
                    "row {i} has {} cells but the table is {column_count} wide",
                    row.len()
                )));
            }
            row.resize(column_count, String::new());
        }
        Ok(Self {
            id: id.into(),
            rows,
            column_count,
            domain: None,
            ground_truth: BTreeMap::new(),
        })
    }

    pub fn with_domain(mut self, domain: Option<DomainLabel>) -> Self {
        self.domain = domain;
        self
    }

    /// Attaches per-column relations; every key must be a valid column.
    pub fn with_ground_truth(
        mut self,
        ground_truth: BTreeMap<usize, RelationLabel>,
    ) -> Result<Self, TableError> {
        if let Some(&bad) = ground_truth.keys().find(|&&c| c >= self.column_count) {
            return Err(TableError::MalformedInput(format!(
                "ground truth for column {bad} in table {} with {} columns",
                self.id, self.column_count
            )));
        }
        self.ground_truth = ground_truth;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.column_count
    }

    pub fn domain(&self) -> Option<&DomainLabel> {
        self.domain.as_ref()
    }

    pub fn ground_truth(&self) -> &BTreeMap<usize, RelationLabel> {
        &self.ground_truth
    }

    /// Cells of one column, top to bottom.
    pub fn column(&self, index: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |row| row[index].as_str())
    }

    /// The first `min(n, row_count)` rows; labels are kept.
    pub fn sample_rows(&self, n: usize) -> Table {
        let keep = n.max(1).min(self.rows.len());
        Table {
            id: self.id.clone(),
            rows: self.rows[..keep].to_vec(),
            column_count: self.column_count,
            domain: self.domain.clone(),
            ground_truth: self.ground_truth.clone(),
        }
    }

    pub fn column_ref(&self, column_index: usize) -> Option<ColumnRef> {
        (column_index < self.column_count).then(|| ColumnRef {
            table_id: self.id.clone(),
            column_index,
        })
    }

    /// CSV with a synthetic `0,1,..` header, so that [`parse_table`] reads it back.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header: Vec<String> = (0..self.column_count).map(|i| i.to_string()).collect();
        writer.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            writer.write_record(row).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_json_rows(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("string arrays serialize"));
            out.push('\n');
        }
        out
    }
}

/// Parses a table from raw bytes.
///
/// JSON rows take their width from the first line; a table must end up
/// with at least one column.
pub fn parse_table(
    id: impl Into<String>,
    mut raw: impl Read,
    format: TableFormat,
) -> Result<Table, TableError> {
    let mut text = String::new();
    raw.read_to_string(&mut text)
        .map_err(|e| TableError::MalformedInput(format!("not valid utf-8 text: {e}")))?;
    match format {
        TableFormat::Csv => parse_csv(id.into(), &text),
        TableFormat::JsonRows => parse_json_rows(id.into(), &text),
    }
}

fn parse_csv(id: String, text: &str) -> Result<Table, TableError> {
    // Every well-formed RFC-4180 document has an even number of quote
    // characters; the csv reader itself silently closes a dangling quote at EOF.
    if text.bytes().filter(|&b| b == b'"').count() % 2 == 1 {
        return Err(TableError::MalformedInput("unbalanced quotes".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| TableError::MalformedInput(e.to_string()))?,
        None => return Err(TableError::MalformedInput("empty CSV".into())),
    };
    let width = header.len();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| TableError::MalformedInput(e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Table::new(id, width, rows)
}

fn parse_json_rows(id: String, text: &str) -> Result<Table, TableError> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<serde_json::Value> = serde_json::from_str(line)
            .map_err(|e| TableError::MalformedInput(format!("line {}: {e}", lineno + 1)))?;
        rows.push(values.into_iter().map(json_cell).collect::<Vec<_>>());
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(TableError::MalformedInput(
            "JSON rows input has no non-empty first row".into(),
        ));
    }
    Table::new(id, width, rows)
}

fn json_cell(value: serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Null => String::new(),
        Value::String(s) => s,
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

/// Addresses one column of one table.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table_id: String,
    pub column_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStatus {
    Ok,
    FailedFormat,
    NoCandidates,
}

/// One column's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub column: ColumnRef,
    pub predicted: Option<RelationLabel>,
    pub status: AnnotationStatus,
    /// Recovery-chain stages entered, 1..=3.
    pub attempts: u8,
    /// Backend latency summed over the attempts.
    pub elapsed_seconds: f64,
}

impl Annotation {
    pub fn ok(column: ColumnRef, predicted: RelationLabel, attempts: u8, elapsed: f64) -> Self {
        Self {
            column,
            predicted: Some(predicted),
            status: AnnotationStatus::Ok,
            attempts,
            elapsed_seconds: elapsed,
        }
    }

    pub fn failed(column: ColumnRef, status: AnnotationStatus, attempts: u8, elapsed: f64) -> Self {
        debug_assert!(status != AnnotationStatus::Ok);
        Self {
            column,
            predicted: None,
            status,
            attempts,
            elapsed_seconds: elapsed,
        }
    }
}

/// `table_id,column_index,relation` rows keyed by column.
///
/// Also used for target lists, where the relation field may be blank.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    entries: BTreeMap<ColumnRef, Option<RelationLabel>>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthRow {
    table_id: String,
    column_index: usize,
    #[serde(default)]
    relation: Option<String>,
}

impl GroundTruth {
    pub fn from_csv(raw: impl Read) -> Result<Self, TableError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
        let headers = reader
            .headers()
            .map_err(|e| TableError::MalformedInput(e.to_string()))?
            .clone();
        for required in ["table_id", "column_index"] {
            if !headers.iter().any(|h| h.trim() == required) {
                return Err(TableError::MalformedInput(format!(
                    "ground truth header lacks `{required}`"
                )));
            }
        }
        let mut entries = BTreeMap::new();
        for row in reader.deserialize::<GroundTruthRow>() {
            let row = row.map_err(|e| TableError::MalformedInput(e.to_string()))?;
            let relation = match row.relation.as_deref().map(str::trim) {
                None | Some("") => None,
                Some(r) => Some(RelationLabel::new(r)?),
            };
            entries.insert(
                ColumnRef {
                    table_id: row.table_id.trim().to_string(),
                    column_index: row.column_index,
                },
                relation,
            );
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, TableError> {
        let file = fs::File::open(path).map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv(file)
    }

    pub fn insert(&mut self, column: ColumnRef, relation: Option<RelationLabel>) {
        self.entries.insert(column, relation);
    }

    pub fn get(&self, column: &ColumnRef) -> Option<&RelationLabel> {
        self.entries.get(column).and_then(Option::as_ref)
    }

    pub fn contains(&self, column: &ColumnRef) -> bool {
        self.entries.contains_key(column)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ColumnRef, Option<&RelationLabel>)> {
        self.entries.iter().map(|(k, v)| (k, v.as_ref()))
    }

    /// Distinct table ids, sorted.
    pub fn table_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.keys().map(|c| c.table_id.as_str()).collect();
        ids.dedup();
        ids
    }

    /// Target columns of one table, ascending.
    pub fn columns_of(&self, table_id: &str) -> Vec<usize> {
        self.entries
            .keys()
            .filter(|c| c.table_id == table_id)
            .map(|c| c.column_index)
            .collect()
    }

    /// Labeled relations of one table.
    pub fn relations_of(&self, table_id: &str) -> BTreeMap<usize, RelationLabel> {
        self.entries
            .iter()
            .filter(|(c, _)| c.table_id == table_id)
            .filter_map(|(c, r)| r.clone().map(|r| (c.column_index, r)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("table_id,column_index,relation\n");
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for (col, rel) in &self.entries {
            writer
                .write_record([
                    col.table_id.as_str(),
                    &col.column_index.to_string(),
                    rel.as_ref().map_or("", RelationLabel::as_str),
                ])
                .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8"));
        out
    }
}

/// Where a table's topic label comes from.
#[derive(Clone, Debug, Default)]
pub enum DomainSource {
    #[default]
    None,
    /// `table_id,domain` CSV sidecar.
    Sidecar(BTreeMap<String, DomainLabel>),
    /// Text before the first `_` of the table id, e.g. `Book_example.com_0`.
    FilenamePrefix,
}

impl DomainSource {
    pub fn sidecar_from_csv(raw: impl Read) -> Result<Self, TableError> {
        #[derive(Deserialize)]
        struct Row {
            table_id: String,
            domain: String,
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
        let mut map = BTreeMap::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| TableError::MalformedInput(e.to_string()))?;
            map.insert(row.table_id.trim().to_string(), DomainLabel::new(row.domain)?);
        }
        Ok(Self::Sidecar(map))
    }

    pub fn domain_for(&self, table_id: &str) -> Option<DomainLabel> {
        match self {
            Self::None => None,
            Self::Sidecar(map) => map.get(table_id).cloned(),
            Self::FilenamePrefix => domain_from_table_id(table_id),
        }
    }
}

pub fn domain_from_table_id(table_id: &str) -> Option<DomainLabel> {
    let prefix = table_id.split('_').next()?;
    DomainLabel::new(prefix).ok()
}

/// A table file that failed to load.
#[derive(Debug)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub error: TableError,
}

/// Loads every `.csv` / `.jsonl` / `.json` file in `dir`, sorted by name.
///
/// The table id is the file name up to its first `.`. Corrupt files are
/// logged and returned in the skip list instead of aborting the load.
pub fn read_table_dir(dir: &Path) -> Result<(Vec<Table>, Vec<SkippedFile>), TableError> {
    let io_err = |source| TableError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && TableFormat::from_path(p).is_some())
        .collect();
    paths.sort();

    let mut tables = Vec::with_capacity(paths.len());
    let mut skipped = Vec::new();
    for path in paths {
        match read_table_file(&path) {
            Ok(t) => tables.push(t),
            Err(error) => {
                log::warn!("skipping {}: {error}", path.display());
                skipped.push(SkippedFile { path, error });
            }
        }
    }
    Ok((tables, skipped))
}

pub fn read_table_file(path: &Path) -> Result<Table, TableError> {
    let format = TableFormat::from_path(path)
        .ok_or_else(|| TableError::MalformedInput(format!("unknown table format: {}", path.display())))?;
    let file = fs::File::open(path).map_err(|source| TableError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // ids keep inner dots, e.g. `Book_example.com_0.json` is `Book_example.com_0`
    let id = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
    parse_table(id, file, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(t: &Table) -> Vec<Vec<&str>> {
        t.rows()
            .iter()
            .map(|r| r.iter().map(String::as_str).collect())
            .collect()
    }

    #[test]
    fn csv_minimal_table() {
        let t = parse_table("t", "a,b\n1,2\n3,4".as_bytes(), TableFormat::Csv).unwrap();
        assert_eq!(t.column_count(), 2);
        assert_eq!(rows(&t), vec![vec!["1", "2"], vec!["3", "4"]]);
    }

    #[test]
    fn csv_pads_short_rows() {
        let t = parse_table("t", "a,b,c\n1\n".as_bytes(), TableFormat::Csv).unwrap();
        assert_eq!(rows(&t), vec![vec!["1", "", ""]]);
    }

    #[test]
    fn csv_rejects_long_rows() {
        let err = parse_table("t", "a,b\n1,2,3\n".as_bytes(), TableFormat::Csv).unwrap_err();
        assert!(matches!(err, TableError::MalformedInput(_)));
    }

    #[test]
    fn csv_rejects_unbalanced_quotes() {
        let err = parse_table("t", "a,b\n\"1,2\n".as_bytes(), TableFormat::Csv).unwrap_err();
        assert!(matches!(err, TableError::MalformedInput(_)));
    }

    #[test]
    fn csv_quoted_fields() {
        let t = parse_table(
            "t",
            "a,b\n\"x, y\",\"say \"\"hi\"\"\"\n".as_bytes(),
            TableFormat::Csv,
        )
        .unwrap();
        assert_eq!(rows(&t), vec![vec!["x, y", "say \"hi\""]]);
    }

    #[test]
    fn empty_csv_is_malformed() {
        assert!(parse_table("t", "".as_bytes(), TableFormat::Csv).is_err());
    }

    #[test]
    fn json_rows_coerce_values() {
        let t = parse_table(
            "t",
            "[\"x\", 5, null]\n[true, 1.5, \"z\"]\n".as_bytes(),
            TableFormat::JsonRows,
        )
        .unwrap();
        assert_eq!(rows(&t), vec![vec!["x", "5", ""], vec!["true", "1.5", "z"]]);
    }

    #[test]
    fn json_rows_reject_bad_lines() {
        let err = parse_table("t", "[1,2]\n{oops\n".as_bytes(), TableFormat::JsonRows).unwrap_err();
        assert!(matches!(err, TableError::MalformedInput(_)));
        let err = parse_table("t", "[1]\n[1,2]\n".as_bytes(), TableFormat::JsonRows).unwrap_err();
        assert!(matches!(err, TableError::MalformedInput(_)));
    }

    #[test]
    fn sample_rows_takes_head() {
        let body: Vec<Vec<String>> = (0..1000).map(|i| vec![i.to_string()]).collect();
        let t = Table::new("t", 1, body).unwrap();
        let s = t.sample_rows(500);
        assert_eq!(s.row_count(), 500);
        assert_eq!(s.rows(), &t.rows()[..500]);

        let small = Table::new("s", 1, vec![vec!["a".into()]; 10]).unwrap();
        assert_eq!(small.sample_rows(500), small);
        assert_eq!(t.sample_rows(1).rows(), &t.rows()[..1]);
    }

    #[test]
    fn labels_trim_and_reject_blank() {
        assert_eq!(RelationLabel::new("  author ").unwrap().as_str(), "author");
        assert!(RelationLabel::new("   ").is_err());
        assert_ne!(
            RelationLabel::new("Author").unwrap(),
            RelationLabel::new("author").unwrap()
        );
        assert!(DomainLabel::new("").is_err());
    }

    #[test]
    fn ground_truth_keys_must_be_columns() {
        let t = Table::new("t", 2, vec![]).unwrap();
        let mut gt = BTreeMap::new();
        gt.insert(2, RelationLabel::new("x").unwrap());
        assert!(t.with_ground_truth(gt).is_err());
    }

    #[test]
    fn ground_truth_csv_requires_header() {
        let gt =
            GroundTruth::from_csv("table_id,column_index,relation\nt,0,name\nt,1,\n".as_bytes()).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!(gt.columns_of("t"), vec![0, 1]);
        assert_eq!(gt.relations_of("t").len(), 1);
        assert!(GroundTruth::from_csv("t,0,name\n".as_bytes()).is_err());
    }

    #[test]
    fn domain_from_filename_prefix() {
        let d = DomainSource::FilenamePrefix.domain_for("Book_example.com_September2020");
        assert_eq!(d.unwrap().as_str(), "Book");
    }

    #[test]
    fn file_ids_keep_inner_dots() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("Book_a.com_0.csv"), "0,1\nx,y\n").unwrap();
        std::fs::write(dir.path().join("Book_a.org_0.jsonl"), "[\"x\",\"y\"]\n").unwrap();
        let (tables, skipped) = read_table_dir(dir.path()).unwrap();
        assert!(skipped.is_empty());
        let ids: std::collections::BTreeSet<&str> = tables.iter().map(Table::id).collect();
        assert_eq!(ids, ["Book_a.com_0", "Book_a.org_0"].into());
    }

    fn arb_table() -> impl Strategy<Value = Table> {
        (1usize..5)
            .prop_flat_map(|w| {
                (
                    Just(w),
                    prop::collection::vec(prop::collection::vec("[ -~]{0,8}", w), 0..6),
                )
            })
            .prop_map(|(w, rows)| Table::new("t", w, rows).unwrap())
    }

    proptest! {
        #[test]
        fn csv_round_trip(t in arb_table()) {
            let back = parse_table("t", t.to_csv().as_bytes(), TableFormat::Csv).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn json_rows_round_trip(t in arb_table()) {
            prop_assume!(t.row_count() > 0);
            let back = parse_table("t", t.to_json_rows().as_bytes(), TableFormat::JsonRows).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn sample_rows_idempotent(t in arb_table(), n in 1usize..8) {
            let once = t.sample_rows(n);
            prop_assert_eq!(once.sample_rows(n), once.clone());
            prop_assert!(once.rows().iter().all(|r| r.len() == t.column_count()));
        }
    }
}
