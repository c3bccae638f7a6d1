//! Offline build of the three candidate-reduction dictionaries.
//!
//! One pass over a labeled training corpus produces:
//!
//! * a domain dictionary, `domain → relations seen in tables of that domain`;
//! * a range dictionary, `primitive type → relation → number of training
//!   columns of that type labeled with the relation`, plus the frequency-cut
//!   sets that keep only relations reaching `threshold × max` within a type;
//! * a co-appearance dictionary, `(domain, relation) → relations that shared a
//!   training table with it`.
//!
//! Builds can be sharded: [`StatsAccumulator`]s merge associatively, and
//! the frequency cut runs only after the final merge, so a parallel build
//! is identical to a sequential one.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::table::{DomainLabel, RelationLabel, Table};
use crate::types::{DetectionMode, PrimitiveType, TypeDetector};

pub const STATS_FILE_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_SAMPLE_SIZE: usize = 500;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("the training corpus has no usable tables")]
    EmptyCorpus,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("stats file {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
    #[error("stats file {path} has version {found}, expected {expected}")]
    SchemaVersionMismatch {
        path: PathBuf,
        found: u64,
        expected: u32,
    },
    #[error("domain `{0}` contains '.', which the co-appearance key encoding reserves")]
    UnencodableDomain(String),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DomainDict {
    entries: BTreeMap<DomainLabel, BTreeSet<RelationLabel>>,
}

impl DomainDict {
    pub fn get(&self, domain: &DomainLabel) -> Option<&BTreeSet<RelationLabel>> {
        self.entries.get(domain)
    }

    pub fn domains(&self) -> impl Iterator<Item = &DomainLabel> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DomainLabel, &BTreeSet<RelationLabel>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of all relation sets.
    pub fn vocabulary(&self) -> BTreeSet<RelationLabel> {
        self.entries.values().flatten().cloned().collect()
    }

    /// The domain with the most relations; ties go to the smallest label.
    pub fn largest(&self) -> Option<&DomainLabel> {
        self.entries
            .iter()
            .max_by(|(da, sa), (db, sb)| sa.len().cmp(&sb.len()).then(db.cmp(da)))
            .map(|(d, _)| d)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RangeDict {
    counts: BTreeMap<PrimitiveType, BTreeMap<RelationLabel, u64>>,
    filtered: BTreeMap<PrimitiveType, BTreeSet<RelationLabel>>,
}

impl RangeDict {
    pub fn count(&self, ty: PrimitiveType, relation: &RelationLabel) -> u64 {
        self.counts
            .get(&ty)
            .and_then(|m| m.get(relation))
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self, ty: PrimitiveType) -> Option<&BTreeMap<RelationLabel, u64>> {
        self.counts.get(&ty)
    }

    /// Relations surviving the frequency cut for `ty`.
    pub fn filtered(&self, ty: PrimitiveType) -> Option<&BTreeSet<RelationLabel>> {
        self.filtered.get(&ty)
    }

    fn from_counts(counts: BTreeMap<PrimitiveType, BTreeMap<RelationLabel, u64>>, threshold: f64) -> Self {
        let filtered = counts
            .iter()
            .map(|(&ty, rel_counts)| {
                let max = rel_counts.values().copied().max().unwrap_or(0);
                let kept = rel_counts
                    .iter()
                    .filter(|&(_, &c)| passes_threshold(c, max, threshold))
                    .map(|(r, _)| r.clone())
                    .collect();
                (ty, kept)
            })
            .collect();
        Self { counts, filtered }
    }
}

/// `count` survives unless it is less frequent than `threshold × max`.
///
/// The product is compared with a relative slack of 1e-12 so that exact
/// boundaries such as 7 of 100 at 7% are not lost to float rounding.
pub fn passes_threshold(count: u64, max: u64, threshold: f64) -> bool {
    count as f64 >= threshold * max as f64 * (1.0 - 1e-12)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoAppearanceDict {
    entries: BTreeMap<(DomainLabel, RelationLabel), BTreeSet<RelationLabel>>,
}

impl CoAppearanceDict {
    pub fn get(&self, domain: &DomainLabel, relation: &RelationLabel) -> Option<&BTreeSet<RelationLabel>> {
        self.entries.get(&(domain.clone(), relation.clone()))
    }

    /// Union of `relation`'s co-appearing sets over every domain.
    pub fn get_any_domain(&self, relation: &RelationLabel) -> BTreeSet<RelationLabel> {
        self.entries
            .iter()
            .filter(|((_, r), _)| r == relation)
            .flat_map(|(_, set)| set.iter().cloned())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(DomainLabel, RelationLabel), &BTreeSet<RelationLabel>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsModel {
    pub domain_dict: DomainDict,
    pub range_dict: RangeDict,
    pub co_dict: CoAppearanceDict,
    pub threshold: f64,
    pub sample_size: usize,
    pub corpus_fingerprint: String,
}

impl StatsModel {
    /// Every relation observed in training.
    pub fn vocabulary(&self) -> BTreeSet<RelationLabel> {
        self.domain_dict.vocabulary()
    }
}

/// Counters printed after a build.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub tables_scanned: usize,
    pub tables_skipped: usize,
    pub skipped_ids: Vec<String>,
    pub relations_seen: usize,
    /// Per type: (relations counted, relations surviving the cut).
    pub cut_sizes: BTreeMap<PrimitiveType, (usize, usize)>,
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tables scanned: {}", self.tables_scanned)?;
        writeln!(f, "tables skipped (missing labels): {}", self.tables_skipped)?;
        writeln!(f, "relations seen: {}", self.relations_seen)?;
        for (ty, (all, kept)) in &self.cut_sizes {
            writeln!(f, "range {ty}: {kept} of {all} relations kept")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StatsBuild {
    pub model: StatsModel,
    pub report: BuildReport,
}

/// Partial dictionaries over a shard of the corpus.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    domain: BTreeMap<DomainLabel, BTreeSet<RelationLabel>>,
    range_counts: BTreeMap<PrimitiveType, BTreeMap<RelationLabel, u64>>,
    co: BTreeMap<(DomainLabel, RelationLabel), BTreeSet<RelationLabel>>,
    digests: Vec<[u8; 32]>,
    scanned: usize,
    skipped: Vec<String>,
}

impl StatsAccumulator {
    pub fn add_table(
        &mut self,
        table: &Table,
        detector: &TypeDetector,
        mode: DetectionMode,
        sample_size: usize,
    ) {
        let Some(domain) = table.domain() else {
            self.skipped.push(table.id().to_string());
            return;
        };
        if table.ground_truth().is_empty() {
            self.skipped.push(table.id().to_string());
            return;
        }
        let sample = table.sample_rows(sample_size);
        self.scanned += 1;
        self.digests.push(table_digest(&sample));

        let relations: BTreeSet<&RelationLabel> = sample.ground_truth().values().collect();
        self.domain
            .entry(domain.clone())
            .or_default()
            .extend(relations.iter().map(|&r| r.clone()));

        for (&column, relation) in sample.ground_truth() {
            let ty = detector.detect_column(&sample, column, mode, sample_size);
            *self
                .range_counts
                .entry(ty)
                .or_default()
                .entry(relation.clone())
                .or_insert(0) += 1;
        }

        for &a in &relations {
            for &b in &relations {
                if a != b {
                    self.co
                        .entry((domain.clone(), a.clone()))
                        .or_default()
                        .insert(b.clone());
                }
            }
        }
    }

    pub fn merge(mut self, other: StatsAccumulator) -> StatsAccumulator {
        for (d, rels) in other.domain {
            self.domain.entry(d).or_default().extend(rels);
        }
        for (ty, counts) in other.range_counts {
            let slot = self.range_counts.entry(ty).or_default();
            for (r, c) in counts {
                *slot.entry(r).or_insert(0) += c;
            }
        }
        for (k, rels) in other.co {
            self.co.entry(k).or_default().extend(rels);
        }
        self.digests.extend(other.digests);
        self.scanned += other.scanned;
        self.skipped.extend(other.skipped);
        self
    }

    pub fn finish(self, threshold: f64, sample_size: usize) -> Result<StatsBuild, StatsError> {
        if self.scanned == 0 {
            return Err(StatsError::EmptyCorpus);
        }
        let mut digests = self.digests;
        digests.sort_unstable();
        let mut hasher = Sha256::new();
        for d in &digests {
            hasher.update(d);
        }
        let corpus_fingerprint = hex::encode(hasher.finalize());

        let range_dict = RangeDict::from_counts(self.range_counts, threshold);
        let domain_dict = DomainDict { entries: self.domain };
        let mut skipped_ids = self.skipped;
        skipped_ids.sort();
        let report = BuildReport {
            tables_scanned: self.scanned,
            tables_skipped: skipped_ids.len(),
            skipped_ids,
            relations_seen: domain_dict.vocabulary().len(),
            cut_sizes: range_dict
                .counts
                .iter()
                .map(|(&ty, c)| (ty, (c.len(), range_dict.filtered[&ty].len())))
                .collect(),
        };
        Ok(StatsBuild {
            model: StatsModel {
                domain_dict,
                range_dict,
                co_dict: CoAppearanceDict { entries: self.co },
                threshold,
                sample_size,
                corpus_fingerprint,
            },
            report,
        })
    }
}

fn table_digest(table: &Table) -> [u8; 32] {
    let encoded = serde_json::to_vec(table).expect("tables serialize");
    Sha256::digest(&encoded).into()
}

/// Configured stats build.
#[derive(Clone, Debug)]
pub struct StatsBuilder {
    threshold: f64,
    sample_size: usize,
    mode: DetectionMode,
    detector: TypeDetector,
}

impl Default for StatsBuilder {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            sample_size: DEFAULT_SAMPLE_SIZE,
            mode: DetectionMode::FirstCell,
            detector: TypeDetector::default(),
        }
    }
}

impl StatsBuilder {
    pub fn new(threshold: f64, sample_size: usize) -> Self {
        Self {
            threshold,
            sample_size,
            ..Self::default()
        }
    }

    pub fn mode(mut self, mode: DetectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn detector(mut self, detector: TypeDetector) -> Self {
        self.detector = detector;
        self
    }

    fn check(&self) -> Result<(), StatsError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(StatsError::InvalidThreshold(self.threshold));
        }
        if self.sample_size == 0 {
            return Err(StatsError::InvalidSampleSize);
        }
        Ok(())
    }

    pub fn build<I>(&self, corpus: I) -> Result<StatsBuild, StatsError>
    where
        I: IntoIterator,
        I::Item: Borrow<Table>,
    {
        self.check()?;
        let mut acc = StatsAccumulator::default();
        for table in corpus {
            acc.add_table(table.borrow(), &self.detector, self.mode, self.sample_size);
        }
        acc.finish(self.threshold, self.sample_size)
    }

    /// Sharded build over `workers` threads.
    pub fn build_parallel(&self, corpus: &[Table], workers: usize) -> Result<StatsBuild, StatsError> {
        self.check()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| StatsError::Pool(e.to_string()))?;
        let acc = pool.install(|| {
            corpus
                .par_iter()
                .fold(StatsAccumulator::default, |mut acc, t| {
                    acc.add_table(t, &self.detector, self.mode, self.sample_size);
                    acc
                })
                .reduce(StatsAccumulator::default, StatsAccumulator::merge)
        });
        acc.finish(self.threshold, self.sample_size)
    }
}

/// Builds with the default detector in first-cell mode.
pub fn build_stats<I>(corpus: I, threshold: f64, sample_size: usize) -> Result<StatsBuild, StatsError>
where
    I: IntoIterator,
    I::Item: Borrow<Table>,
{
    StatsBuilder::new(threshold, sample_size).build(corpus)
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    version: u32,
    threshold: f64,
    sample_size: usize,
    corpus_fingerprint: String,
    domain_dict: BTreeMap<DomainLabel, BTreeSet<RelationLabel>>,
    range_dict_counts: BTreeMap<PrimitiveType, BTreeMap<RelationLabel, u64>>,
    range_dict_filtered: BTreeMap<PrimitiveType, BTreeSet<RelationLabel>>,
    co_dict: BTreeMap<String, BTreeSet<RelationLabel>>,
}

impl StatsModel {
    pub fn to_json(&self) -> Result<String, StatsError> {
        let mut co_dict = BTreeMap::new();
        for ((d, r), set) in &self.co_dict.entries {
            if d.as_str().contains('.') {
                return Err(StatsError::UnencodableDomain(d.to_string()));
            }
            co_dict.insert(format!("{d}.{r}"), set.clone());
        }
        let file = StatsFile {
            version: STATS_FILE_VERSION,
            threshold: self.threshold,
            sample_size: self.sample_size,
            corpus_fingerprint: self.corpus_fingerprint.clone(),
            domain_dict: self.domain_dict.entries.clone(),
            range_dict_counts: self.range_dict.counts.clone(),
            range_dict_filtered: self.range_dict.filtered.clone(),
            co_dict,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("stats serialize");
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), StatsError> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| StatsError::IoFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<StatsModel, StatsError> {
        let text = fs::read_to_string(path).map_err(|e| StatsError::IoFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text, path)
    }

    /// `origin` only labels errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<StatsModel, StatsError> {
        let io = |reason: String| StatsError::IoFailure {
            path: origin.to_path_buf(),
            reason,
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| io(e.to_string()))?;
        let found = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| io("missing `version`".into()))?;
        if found != u64::from(STATS_FILE_VERSION) {
            return Err(StatsError::SchemaVersionMismatch {
                path: origin.to_path_buf(),
                found,
                expected: STATS_FILE_VERSION,
            });
        }
        let file: StatsFile = serde_json::from_value(value).map_err(|e| io(e.to_string()))?;
        if !(file.threshold > 0.0 && file.threshold <= 1.0) {
            return Err(io(format!("threshold {} outside (0, 1]", file.threshold)));
        }
        let mut co = BTreeMap::new();
        for (key, set) in file.co_dict {
            let (d, r) = key
                .split_once('.')
                .ok_or_else(|| io(format!("co_dict key `{key}` is not `<domain>.<relation>`")))?;
            let d = DomainLabel::new(d).map_err(|e| io(e.to_string()))?;
            let r = RelationLabel::new(r).map_err(|e| io(e.to_string()))?;
            co.insert((d, r), set);
        }
        Ok(StatsModel {
            domain_dict: DomainDict {
                entries: file.domain_dict,
            },
            range_dict: RangeDict {
                counts: file.range_dict_counts,
                filtered: file.range_dict_filtered,
            },
            co_dict: CoAppearanceDict { entries: co },
            threshold: file.threshold,
            sample_size: file.sample_size,
            corpus_fingerprint: file.corpus_fingerprint,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    fn labeled(id: &str, domain: &str, columns: &[(&str, &str)]) -> Table {
        let width = columns.len();
        let row: Vec<String> = columns.iter().map(|(_, v)| v.to_string()).collect();
        let gt = columns
            .iter()
            .enumerate()
            .map(|(i, (r, _))| (i, rel(r)))
            .collect();
        Table::new(id, width, vec![row])
            .unwrap()
            .with_domain(Some(dom(domain)))
            .with_ground_truth(gt)
            .unwrap()
    }

    #[test]
    fn single_table_build() {
        let t = labeled("b0", "Book", &[("name", "Dune"), ("author", "Frank Herbert")]);
        let build = build_stats([&t], 0.05, 500).unwrap();
        let m = &build.model;
        assert_eq!(m.domain_dict.get(&dom("Book")), Some(&set(&["name", "author"])));
        assert_eq!(m.co_dict.get(&dom("Book"), &rel("name")), Some(&set(&["author"])));
        assert_eq!(m.co_dict.get(&dom("Book"), &rel("author")), Some(&set(&["name"])));
        assert_eq!(m.co_dict.len(), 2);
        assert_eq!(m.range_dict.count(PrimitiveType::String, &rel("name")), 1);
        assert_eq!(build.report.tables_scanned, 1);
    }

    #[test]
    fn threshold_cut_on_toy_counts() {
        // brute force: isbn survives only if 4 >= 5% of 100 = 5
        let counts: &[(&str, u64)] = &[("price", 100), ("isbn", 4)];
        let brute: BTreeSet<RelationLabel> = counts
            .iter()
            .filter(|(_, c)| (*c as f64) * 20.0 >= 100.0)
            .map(|(r, _)| rel(r))
            .collect();
        assert_eq!(brute, set(&["price"]));
        let m = model(&[], &[(PrimitiveType::Number, counts)], &[], 0.05);
        assert_eq!(m.range_dict.filtered(PrimitiveType::Number), Some(&brute));
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        // 7 is exactly 7% of 100, although 0.07 * 100.0 rounds above 7.0
        let (rate, max) = (std::hint::black_box(0.07), 100.0);
        assert!(rate * max > 7.0);
        assert!(passes_threshold(7, 100, 0.07));
        assert!(!passes_threshold(6, 100, 0.07));
        assert!(passes_threshold(3, 60, 0.05));
        assert!(!passes_threshold(2, 60, 0.05));
        assert!(passes_threshold(5, 100, 0.05));
        assert!(!passes_threshold(4, 100, 0.05));
        assert!(passes_threshold(1, 1, 1.0));
    }

    #[test]
    fn never_sharing_a_table_means_no_co_appearance() {
        let a = labeled("a", "d", &[("r1", "x"), ("r3", "y")]);
        let b = labeled("b", "d", &[("r2", "x"), ("r3", "y")]);
        let m = build_stats([&a, &b], 0.05, 500).unwrap().model;
        assert!(!m.co_dict.get(&dom("d"), &rel("r1")).unwrap().contains(&rel("r2")));
        assert!(!m.co_dict.get(&dom("d"), &rel("r2")).unwrap().contains(&rel("r1")));
        assert_eq!(m.co_dict.get(&dom("d"), &rel("r3")), Some(&set(&["r1", "r2"])));
    }

    #[test]
    fn duplicate_relations_count_once_for_co_appearance() {
        let t = labeled("t", "d", &[("a", "x"), ("a", "y"), ("b", "z")]);
        let m = build_stats([&t], 0.05, 500).unwrap().model;
        assert_eq!(m.co_dict.get(&dom("d"), &rel("a")), Some(&set(&["b"])));
        // range counts stay per column
        assert_eq!(m.range_dict.count(PrimitiveType::String, &rel("a")), 2);
    }

    #[test]
    fn first_cell_typing_uses_the_sample() {
        let t = Table::new(
            "t",
            1,
            vec![vec!["12".into()], vec!["x".into()], vec!["y".into()]],
        )
        .unwrap()
        .with_domain(Some(dom("d")))
        .with_ground_truth([(0, rel("price"))].into())
        .unwrap();
        let m = build_stats([&t], 0.05, 1).unwrap().model;
        assert_eq!(m.range_dict.count(PrimitiveType::Number, &rel("price")), 1);
        let m = StatsBuilder::new(0.05, 500)
            .mode(DetectionMode::Majority)
            .build([&t])
            .unwrap()
            .model;
        assert_eq!(m.range_dict.count(PrimitiveType::String, &rel("price")), 1);
    }

    #[test]
    fn unlabeled_tables_are_skipped_and_counted() {
        let ok = labeled("ok", "d", &[("a", "x")]);
        let no_domain = Table::new("nd", 1, vec![vec!["x".into()]])
            .unwrap()
            .with_ground_truth([(0, rel("a"))].into())
            .unwrap();
        let no_gt = Table::new("ng", 1, vec![]).unwrap().with_domain(Some(dom("d")));
        let build = build_stats([&ok, &no_domain, &no_gt], 0.05, 500).unwrap();
        assert_eq!(build.report.tables_scanned, 1);
        assert_eq!(build.report.tables_skipped, 2);
        assert_eq!(build.report.skipped_ids, vec!["nd", "ng"]);
    }

    #[test]
    fn empty_corpus_and_bad_threshold() {
        assert!(matches!(
            build_stats(Vec::<Table>::new(), 0.05, 500),
            Err(StatsError::EmptyCorpus)
        ));
        let t = labeled("t", "d", &[("a", "x")]);
        assert!(matches!(
            build_stats([&t], 0.0, 500),
            Err(StatsError::InvalidThreshold(_))
        ));
        assert!(matches!(
            build_stats([&t], 1.5, 500),
            Err(StatsError::InvalidThreshold(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let t = labeled("b0", "Book", &[("name", "Dune"), ("author", "Frank Herbert")]);
        let m = build_stats([&t], 0.05, 500).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        m.save(&path).unwrap();
        assert_eq!(StatsModel::load(&path).unwrap(), m);

        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "version",
            "threshold",
            "sample_size",
            "corpus_fingerprint",
            "domain_dict",
            "range_dict_counts",
            "range_dict_filtered",
            "co_dict",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["co_dict"]["Book.name"], serde_json::json!(["author"]));
        assert_eq!(v["domain_dict"]["Book"], serde_json::json!(["author", "name"]));
    }

    #[test]
    fn load_rejects_truncated_and_future_files() {
        let t = labeled("b0", "Book", &[("name", "Dune")]);
        let m = build_stats([&t], 0.05, 500).unwrap().model;
        let text = m.to_json().unwrap();
        let dir = tempfile::tempdir().unwrap();

        let truncated = dir.path().join("t.json");
        fs::write(&truncated, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            StatsModel::load(&truncated),
            Err(StatsError::IoFailure { .. })
        ));

        let bumped = dir.path().join("v.json");
        fs::write(&bumped, text.replace("\"version\": 1", "\"version\": 2")).unwrap();
        assert!(matches!(
            StatsModel::load(&bumped),
            Err(StatsError::SchemaVersionMismatch { found: 2, .. })
        ));

        assert!(matches!(
            StatsModel::load(&dir.path().join("missing.json")),
            Err(StatsError::IoFailure { .. })
        ));
    }

    #[test]
    fn dotted_domains_cannot_be_saved() {
        let t = labeled("t", "a.b", &[("x", "1"), ("y", "2")]);
        let m = build_stats([&t], 0.05, 500).unwrap().model;
        assert!(matches!(m.to_json(), Err(StatsError::UnencodableDomain(_))));
    }

    #[test]
    fn largest_domain_breaks_ties_by_label() {
        let m = model(
            &[("B", &["x", "y"]), ("A", &["p", "q"]), ("C", &["z"])],
            &[],
            &[],
            0.05,
        );
        assert_eq!(m.domain_dict.largest(), Some(&dom("A")));
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Table>> {
        let rels = ["a", "b", "c", "d", "e", "f"];
        let values = ["x", "12", "2020-01-01", "http://e.org/p"];
        let table = (0usize..3, prop::collection::vec((0usize..6, 0usize..4), 1..5));
        prop::collection::vec(table, 1..12).prop_map(move |specs| {
            specs
                .into_iter()
                .enumerate()
                .map(|(i, (d, cols))| {
                    let cols: Vec<(&str, &str)> = cols.iter().map(|&(r, v)| (rels[r], values[v])).collect();
                    labeled(&format!("t{i}"), ["D0", "D1", "D2"][d], &cols)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn co_dict_is_symmetric_and_irreflexive(corpus in arb_corpus()) {
            let m = build_stats(&corpus, 0.05, 500).unwrap().model;
            for ((d, r), set) in m.co_dict.iter() {
                prop_assert!(!set.contains(r));
                for other in set {
                    prop_assert!(m.co_dict.get(d, other).is_some_and(|s| s.contains(r)));
                }
            }
        }

        #[test]
        fn raising_threshold_never_grows_filtered_sets(corpus in arb_corpus(), lo in 0.01f64..1.0, bump in 0.0f64..1.0) {
            let hi = (lo + bump).min(1.0);
            let a = build_stats(&corpus, lo, 500).unwrap().model;
            let b = build_stats(&corpus, hi, 500).unwrap().model;
            for ty in PrimitiveType::ALL {
                let empty = BTreeSet::new();
                let fa = a.range_dict.filtered(ty).unwrap_or(&empty);
                let fb = b.range_dict.filtered(ty).unwrap_or(&empty);
                prop_assert!(fb.is_subset(fa));
                if a.range_dict.counts(ty).is_some_and(|c| !c.is_empty()) {
                    prop_assert!(!fb.is_empty());
                }
            }
        }

        #[test]
        fn domain_union_is_observed_vocabulary(corpus in arb_corpus()) {
            let m = build_stats(&corpus, 0.05, 500).unwrap().model;
            let observed: BTreeSet<RelationLabel> = corpus
                .iter()
                .flat_map(|t| t.ground_truth().values().cloned())
                .collect();
            prop_assert_eq!(m.vocabulary(), observed);
        }

        #[test]
        fn save_load_identity(corpus in arb_corpus()) {
            let m = build_stats(&corpus, 0.05, 500).unwrap().model;
            let back = StatsModel::from_json(&m.to_json().unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    proptest! {
        // each case spins up a thread pool
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn parallel_build_matches_sequential(corpus in arb_corpus(), workers in 1usize..4) {
            let seq = build_stats(&corpus, 0.05, 500).unwrap().model;
            let par = StatsBuilder::new(0.05, 500).build_parallel(&corpus, workers).unwrap().model;
            prop_assert_eq!(seq.to_json().unwrap(), par.to_json().unwrap());
        }
    }
}
