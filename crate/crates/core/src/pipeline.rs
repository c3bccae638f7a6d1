//! Per-table inference: topic detection, the left-to-right column loop and
//! the three-stage recovery chain.
//!
//! For each target column, in ascending order:
//!
//! 1. detect the column type by majority vote over the sample;
//! 2. reduce the candidate list, removing relations already predicted in
//!    the table and, under co-appearance variants, anchoring on them;
//! 3. ask the model with the main prompt; if the answer is not a single
//!    candidate, ask again with the retry prompt; if that fails too, send
//!    the main prompt to the fallback model (or the primary one when no
//!    fallback is configured).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{
    self, BackendConfig, Limited, LlmBackend, LlmError, PromptContext, PromptKind, parse_single_option,
    parse_single_relation,
};
use crate::prompt::{DEFAULT_EXCERPT_ROWS, PromptError, PromptParts, PromptTemplate, RenderedPrompt};
use crate::reduce::{ApproachConfig, CandidateSet, ReduceError, ReduceRequest, reduce};
use crate::stats::{DEFAULT_SAMPLE_SIZE, StatsModel};
use crate::table::{Annotation, AnnotationStatus, ColumnRef, DomainLabel, GroundTruth, RelationLabel, Table};
use crate::types::{DetectionMode, PrimitiveType, TypeDetector};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("backend refused the request, aborting the run: {0}")]
    Refusal(LlmError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("target column {column} is out of range for table `{table_id}` ({width} columns)")]
    BadTarget {
        table_id: String,
        column: usize,
        width: usize,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One annotation run, as recorded next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub approach: ApproachConfig,
    pub prompt_parts: PromptParts,
    pub backend: BackendConfig,
    pub excerpt_rows: usize,
    /// Required whenever the approach uses a filter.
    pub stats_path: Option<PathBuf>,
    /// Take the table's own domain label when it has one instead of asking.
    pub use_gt_domain: bool,
    pub type_mode: DetectionMode,
    pub type_sample_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            approach: ApproachConfig::default(),
            prompt_parts: PromptParts::all(),
            backend: BackendConfig::default(),
            excerpt_rows: DEFAULT_EXCERPT_ROWS,
            stats_path: None,
            use_gt_domain: false,
            type_mode: DetectionMode::Majority,
            type_sample_limit: DEFAULT_SAMPLE_SIZE,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.approach.validate()?;
        self.backend
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.approach.uses_stats() && self.stats_path.is_none() {
            return Err(PipelineError::Config(
                "this approach filters candidates and needs a stats file".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Parsed,
    Unparsed,
    TransportFailure,
}

/// One model call; a line of the trace log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub table_id: String,
    /// `None` for topic detection.
    pub column_index: Option<usize>,
    pub stage: PromptKind,
    /// 1-based position in the recovery chain.
    pub attempt: u8,
    pub prompt_sha256: String,
    pub candidate_count: usize,
    pub model: String,
    pub latency_seconds: f64,
    pub outcome: AttemptOutcome,
    pub answer: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSourceKind {
    /// The table's own label.
    Given,
    /// Parsed from a model answer.
    Detected,
    /// Unparseable answers; the domain with the largest relation set.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDetection {
    pub domain: DomainLabel,
    pub source: DomainSourceKind,
}

/// What the reducer produced for one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDetail {
    pub column_index: usize,
    pub column_type: PrimitiveType,
    pub candidates: CandidateSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRunTrace {
    pub table_id: String,
    pub detected_domain: Option<DomainLabel>,
    pub domain_source: Option<DomainSourceKind>,
    /// One per target column, in column order.
    pub annotations: Vec<Annotation>,
    pub columns: Vec<ColumnDetail>,
    pub failed_count: usize,
    /// Backend latency over every call for this table.
    pub total_seconds: f64,
    pub attempts: Vec<AttemptRecord>,
}

/// The outcome of [`Pipeline::run_dataset`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub traces: Vec<TableRunTrace>,
    /// Table ids named by the targets but absent from the input.
    pub missing_tables: Vec<String>,
}

impl RunOutput {
    /// `table_id,column_index,relation`, blank relation for failures.
    pub fn predictions_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table_id", "column_index", "relation"])
            .expect("writing to memory");
        for a in self.traces.iter().flat_map(|t| &t.annotations) {
            w.write_record([
                a.column.table_id.as_str(),
                &a.column.column_index.to_string(),
                a.predicted.as_ref().map_or("", |r| r.as_str()),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 input")
    }

    /// One JSON object per model call.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.traces.iter().flat_map(|t| &t.attempts) {
            out.push_str(&serde_json::to_string(rec).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.traces.iter().flat_map(|t| &t.annotations)
    }

    pub fn failed_count(&self) -> usize {
        self.traces.iter().map(|t| t.failed_count).sum()
    }

    pub fn write(&self, predictions: &Path, trace: Option<&Path>) -> Result<(), PipelineError> {
        write_file(predictions, &self.predictions_csv())?;
        if let Some(trace) = trace {
            write_file(trace, &self.trace_jsonl())?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

pub fn prompt_sha256(prompt: &RenderedPrompt) -> String {
    hex::encode(Sha256::digest(prompt.text.as_bytes()))
}

/// Shown to the retry prompt when the model answered with nothing.
const EMPTY_ANSWER: &str = "(empty answer)";

/// A configured annotator: run settings, stats, template and backend.
pub struct Pipeline {
    config: RunConfig,
    stats: Option<StatsModel>,
    vocabulary: BTreeSet<RelationLabel>,
    template: PromptTemplate,
    detector: TypeDetector,
    backend: Limited<Box<dyn LlmBackend>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("vocabulary", &self.vocabulary.len())
            .field("backend", &self.backend.name())
            .finish()
    }
}

impl Pipeline {
    /// The candidate vocabulary defaults to every relation in `stats`.
    pub fn new(
        config: RunConfig,
        stats: Option<StatsModel>,
        backend: Box<dyn LlmBackend>,
    ) -> Result<Self, PipelineError> {
        config.approach.validate()?;
        config
            .backend
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if config.approach.uses_stats() && stats.is_none() {
            return Err(ReduceError::MissingStats.into());
        }
        let vocabulary = stats.as_ref().map(StatsModel::vocabulary).unwrap_or_default();
        let backend = Limited::new(backend, config.backend.max_in_flight);
        Ok(Self {
            config,
            stats,
            vocabulary,
            template: PromptTemplate::default(),
            detector: TypeDetector::default(),
            backend,
        })
    }

    pub fn with_vocabulary(mut self, vocabulary: BTreeSet<RelationLabel>) -> Self {
        self.vocabulary = vocabulary;
        self
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_detector(mut self, detector: TypeDetector) -> Self {
        self.detector = detector;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &BTreeSet<RelationLabel> {
        &self.vocabulary
    }

    fn call(
        &self,
        prompt: &RenderedPrompt,
        context: &PromptContext,
        use_fallback: bool,
    ) -> Result<llm::LlmResponse, LlmError> {
        llm::complete(&self.backend, prompt, context, &self.config.backend, use_fallback)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        context: &PromptContext,
        attempt: u8,
        prompt: &RenderedPrompt,
        use_fallback: bool,
        latency_seconds: f64,
        outcome: AttemptOutcome,
        answer: Option<&str>,
    ) -> AttemptRecord {
        AttemptRecord {
            table_id: context.table_id.clone(),
            column_index: context.column_index,
            stage: context.kind,
            attempt,
            prompt_sha256: prompt_sha256(prompt),
            candidate_count: prompt.candidate_count,
            model: self.config.backend.model_for(use_fallback).to_string(),
            latency_seconds,
            outcome,
            answer: answer.map(str::to_string),
        }
    }

    /// The table's topic, or `None` when no stats model is loaded.
    ///
    /// Uses the table's own label under `use_gt_domain`; otherwise asks the
    /// model to pick one of the training domains, re-asks once for a single
    /// word, and finally falls back to the domain with the most relations.
    pub fn detect_table_domain(
        &self,
        table: &Table,
        log: &mut Vec<AttemptRecord>,
    ) -> Result<Option<DomainDetection>, PipelineError> {
        if self.config.use_gt_domain {
            if let Some(d) = table.domain() {
                return Ok(Some(DomainDetection {
                    domain: d.clone(),
                    source: DomainSourceKind::Given,
                }));
            }
        }
        let Some(stats) = &self.stats else {
            return Ok(None);
        };
        let domains: Vec<&DomainLabel> = stats.domain_dict.domains().collect();
        if domains.is_empty() {
            return Ok(None);
        }
        let options: Vec<&str> = domains.iter().map(|d| d.as_str()).collect();
        let mut context = PromptContext {
            kind: PromptKind::Topic,
            table_id: table.id().to_string(),
            column_index: None,
            options: options.iter().map(|s| s.to_string()).collect(),
        };

        let first =
            self.template
                .render_topic_prompt(table, domains.iter().copied(), self.config.excerpt_rows)?;
        let mut prompt = first;
        for attempt in 1..=2u8 {
            match self.call(&prompt, &context, false) {
                Ok(resp) => {
                    let hit = parse_single_option(&resp.text, &options);
                    let outcome = if hit.is_some() {
                        AttemptOutcome::Parsed
                    } else {
                        AttemptOutcome::Unparsed
                    };
                    log.push(self.record(
                        &context,
                        attempt,
                        &prompt,
                        false,
                        resp.latency_seconds,
                        outcome,
                        hit,
                    ));
                    if let Some(hit) = hit {
                        let domain = domains
                            .iter()
                            .find(|d| d.as_str() == hit)
                            .map(|d| (*d).clone())
                            .expect("parsed option comes from the list");
                        return Ok(Some(DomainDetection {
                            domain,
                            source: DomainSourceKind::Detected,
                        }));
                    }
                    if attempt == 1 {
                        let previous = if resp.text.trim().is_empty() {
                            EMPTY_ANSWER
                        } else {
                            resp.text.as_str()
                        };
                        prompt = self
                            .template
                            .render_retry_with_options(previous, options.iter().copied())?;
                        context.kind = PromptKind::TopicRetry;
                    }
                }
                Err(LlmError::BackendRefusal { status, message }) => {
                    return Err(PipelineError::Refusal(LlmError::BackendRefusal {
                        status,
                        message,
                    }));
                }
                Err(e) => {
                    log::warn!("table {}: topic detection failed: {e}", table.id());
                    log.push(self.record(
                        &context,
                        attempt,
                        &prompt,
                        false,
                        0.0,
                        AttemptOutcome::TransportFailure,
                        None,
                    ));
                    break;
                }
            }
        }
        let domain = stats
            .domain_dict
            .largest()
            .cloned()
            .expect("non-empty domain dictionary");
        log::info!(
            "table {}: topic not recognised, falling back to `{domain}`",
            table.id()
        );
        Ok(Some(DomainDetection {
            domain,
            source: DomainSourceKind::Fallback,
        }))
    }

    /// Annotates `target_columns` of `table`, left to right.
    pub fn annotate_table(
        &self,
        table: &Table,
        target_columns: &[usize],
    ) -> Result<TableRunTrace, PipelineError> {
        let mut targets = target_columns.to_vec();
        targets.sort_unstable();
        targets.dedup();
        if let Some(&bad) = targets.iter().find(|c| **c >= table.column_count()) {
            return Err(PipelineError::BadTarget {
                table_id: table.id().to_string(),
                column: bad,
                width: table.column_count(),
            });
        }

        let mut log = Vec::new();
        let detection = if self.config.approach.needs_domain() {
            self.detect_table_domain(table, &mut log)?
        } else {
            None
        };
        let domain = detection
            .as_ref()
            .map(|d| &d.domain)
            .or_else(|| table.domain().filter(|_| self.config.use_gt_domain));

        let mut predicted: BTreeSet<RelationLabel> = BTreeSet::new();
        let mut annotations = Vec::with_capacity(targets.len());
        let mut columns = Vec::with_capacity(targets.len());
        for &col in &targets {
            let column_type =
                self.detector
                    .detect_column(table, col, self.config.type_mode, self.config.type_sample_limit);
            let candidates = reduce(&ReduceRequest {
                full_vocab: &self.vocabulary,
                domain,
                column_type,
                already_predicted: &predicted,
                anchor_predictions: &predicted,
                stats: self.stats.as_ref(),
                config: &self.config.approach,
            })?;
            let column = ColumnRef {
                table_id: table.id().to_string(),
                column_index: col,
            };
            let annotation = if candidates.is_empty() {
                log::warn!("{}/{col}: no candidate relations left", table.id());
                Annotation::failed(column, AnnotationStatus::NoCandidates, 1, 0.0)
            } else {
                self.recover(table, column, &candidates, &mut log)?
            };
            if let Some(r) = &annotation.predicted {
                predicted.insert(r.clone());
            }
            annotations.push(annotation);
            columns.push(ColumnDetail {
                column_index: col,
                column_type,
                candidates,
            });
        }

        let failed_count = annotations
            .iter()
            .filter(|a| a.status != AnnotationStatus::Ok)
            .count();
        let total_seconds = log.iter().map(|r| r.latency_seconds).sum();
        Ok(TableRunTrace {
            table_id: table.id().to_string(),
            detected_domain: detection.as_ref().map(|d| d.domain.clone()),
            domain_source: detection.map(|d| d.source),
            annotations,
            columns,
            failed_count,
            total_seconds,
            attempts: log,
        })
    }

    /// The recovery chain for one column.
    fn recover(
        &self,
        table: &Table,
        column: ColumnRef,
        candidates: &CandidateSet,
        log: &mut Vec<AttemptRecord>,
    ) -> Result<Annotation, PipelineError> {
        let main = self.template.render_annotation_prompt(
            table,
            column.column_index,
            candidates,
            self.config.prompt_parts,
            self.config.excerpt_rows,
        )?;
        let mut context = PromptContext {
            kind: PromptKind::Annotate,
            table_id: column.table_id.clone(),
            column_index: Some(column.column_index),
            options: candidates
                .relations()
                .iter()
                .map(|r| r.as_str().to_string())
                .collect(),
        };
        let mut elapsed = 0.0;
        let mut prompt = main.clone();
        for attempt in 1..=3u8 {
            let use_fallback = attempt == 3;
            let resp = match self.call(&prompt, &context, use_fallback) {
                Ok(resp) => resp,
                Err(LlmError::BackendRefusal { status, message }) => {
                    return Err(PipelineError::Refusal(LlmError::BackendRefusal {
                        status,
                        message,
                    }));
                }
                Err(e) => {
                    log::warn!("{}/{}: {e}", column.table_id, column.column_index);
                    log.push(self.record(
                        &context,
                        attempt,
                        &prompt,
                        use_fallback,
                        0.0,
                        AttemptOutcome::TransportFailure,
                        None,
                    ));
                    return Ok(Annotation::failed(
                        column,
                        AnnotationStatus::FailedFormat,
                        attempt,
                        elapsed,
                    ));
                }
            };
            elapsed += resp.latency_seconds;
            let hit = parse_single_relation(&resp.text, candidates);
            let outcome = if hit.is_some() {
                AttemptOutcome::Parsed
            } else {
                AttemptOutcome::Unparsed
            };
            log.push(self.record(
                &context,
                attempt,
                &prompt,
                use_fallback,
                resp.latency_seconds,
                outcome,
                hit.as_ref().map(RelationLabel::as_str),
            ));
            if let Some(relation) = hit {
                return Ok(Annotation::ok(column, relation, attempt, elapsed));
            }
            match attempt {
                1 => {
                    let previous = if resp.text.trim().is_empty() {
                        EMPTY_ANSWER
                    } else {
                        resp.text.as_str()
                    };
                    prompt = self.template.render_retry_prompt(previous, candidates)?;
                    context.kind = PromptKind::Retry;
                }
                2 => {
                    prompt = main.clone();
                    context.kind = PromptKind::Annotate;
                }
                _ => {}
            }
        }
        log::info!(
            "{}/{}: no single relation after 3 attempts",
            column.table_id,
            column.column_index
        );
        Ok(Annotation::failed(
            column,
            AnnotationStatus::FailedFormat,
            3,
            elapsed,
        ))
    }

    /// Annotates every table named in `targets`, `workers` tables at a time.
    ///
    /// Output order follows the sorted target table ids regardless of
    /// `workers`. A backend refusal aborts the whole run.
    pub fn run_dataset(
        &self,
        tables: &[Table],
        targets: &GroundTruth,
        workers: usize,
    ) -> Result<RunOutput, PipelineError> {
        use rayon::prelude::*;

        let by_id: std::collections::HashMap<&str, &Table> = tables.iter().map(|t| (t.id(), t)).collect();
        let ids = targets.table_ids();
        let mut missing_tables = Vec::new();
        let mut jobs = Vec::new();
        for id in ids {
            match by_id.get(id) {
                Some(t) => jobs.push((*t, targets.columns_of(id))),
                None => {
                    log::warn!("targets reference missing table `{id}`");
                    missing_tables.push(id.to_string());
                }
            }
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        let traces = pool.install(|| {
            jobs.par_iter()
                .map(|(table, cols)| self.annotate_table(table, cols))
                .collect::<Result<Vec<_>, _>>()
        })?;
        Ok(RunOutput {
            traces,
            missing_tables,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FirstCandidateBackend, OracleBackend, ScriptedBackend};
    use crate::reduce::Approach;
    use crate::stats::test_support::*;

    fn book_table() -> Table {
        Table::new(
            "Book_0",
            3,
            vec![
                vec![
                    "The Hobbit".into(),
                    "J. R. R. Tolkien".into(),
                    "1937-09-21".into(),
                ],
                vec!["Dune".into(), "Frank Herbert".into(), "1965-08-01".into()],
            ],
        )
        .unwrap()
        .with_domain(Some(dom("Book")))
    }

    fn book_stats() -> StatsModel {
        model(
            &[
                ("Book", &["name", "author", "datePublished"]),
                ("Person", &["name", "birthDate", "jobTitle", "nationality"]),
            ],
            &[
                (
                    PrimitiveType::String,
                    &[("name", 10), ("author", 5), ("jobTitle", 4), ("nationality", 2)],
                ),
                (PrimitiveType::Date, &[("datePublished", 5), ("birthDate", 4)]),
            ],
            &[],
            0.05,
        )
    }

    fn config(approach: Approach) -> RunConfig {
        RunConfig {
            approach: approach.config(None),
            stats_path: Some("stats.json".into()),
            use_gt_domain: true,
            ..RunConfig::default()
        }
    }

    fn truth() -> GroundTruth {
        let mut gt = GroundTruth::default();
        for (c, r) in [(0, "name"), (1, "author"), (2, "datePublished")] {
            gt.insert(
                ColumnRef {
                    table_id: "Book_0".into(),
                    column_index: c,
                },
                Some(rel(r)),
            );
        }
        gt
    }

    fn oracle() -> Box<dyn LlmBackend> {
        Box::new(OracleBackend::new(
            truth(),
            [("Book_0".to_string(), dom("Book"))].into(),
        ))
    }

    #[test]
    fn oracle_rd_annotates_every_column() {
        let p = Pipeline::new(config(Approach::RangeDomain), Some(book_stats()), oracle()).unwrap();
        let trace = p.annotate_table(&book_table(), &[0, 1, 2]).unwrap();
        let got: Vec<_> = trace
            .annotations
            .iter()
            .map(|a| {
                (
                    a.status,
                    a.attempts,
                    a.predicted.as_ref().map(|r| r.as_str().to_string()),
                )
            })
            .collect();
        assert_eq!(
            got,
            vec![
                (AnnotationStatus::Ok, 1, Some("name".into())),
                (AnnotationStatus::Ok, 1, Some("author".into())),
                (AnnotationStatus::Ok, 1, Some("datePublished".into())),
            ]
        );
        assert_eq!(trace.failed_count, 0);
        assert_eq!(trace.domain_source, Some(DomainSourceKind::Given));
        assert_eq!(trace.columns[2].column_type, PrimitiveType::Date);
        // the first prediction is gone from the second column's list
        assert!(!trace.columns[1].candidates.contains(&rel("name")));
    }

    #[test]
    fn recovery_chain_stages() {
        let cases: [(&[&str], AnnotationStatus, u8); 4] = [
            (&["author"], AnnotationStatus::Ok, 1),
            (&["no idea", "author"], AnnotationStatus::Ok, 2),
            (&["no idea", "still none", "author"], AnnotationStatus::Ok, 3),
            (&["x", "y", "z"], AnnotationStatus::FailedFormat, 3),
        ];
        for (replies, status, attempts) in cases {
            let backend = Box::new(ScriptedBackend::from_replies(replies.iter().copied()));
            let p = Pipeline::new(config(Approach::Base), None, backend)
                .unwrap()
                .with_vocabulary(set(&["author", "name"]));
            let a = &p.annotate_table(&book_table(), &[1]).unwrap().annotations[0];
            assert_eq!((a.status, a.attempts), (status, attempts), "{replies:?}");
        }
    }

    #[test]
    fn attempt_three_uses_fallback_model() {
        let mut cfg = config(Approach::Base);
        cfg.backend.fallback_model_name = Some("backup".into());
        let backend = Box::new(ScriptedBackend::from_replies(["?", "?", "author"]));
        let p = Pipeline::new(cfg, None, backend)
            .unwrap()
            .with_vocabulary(set(&["author", "name"]));
        let trace = p.annotate_table(&book_table(), &[1]).unwrap();
        let stages: Vec<_> = trace
            .attempts
            .iter()
            .map(|r| (r.stage, r.model.as_str()))
            .collect();
        let primary = BackendConfig::default().model_name;
        assert_eq!(
            stages,
            vec![
                (PromptKind::Annotate, primary.as_str()),
                (PromptKind::Retry, primary.as_str()),
                (PromptKind::Annotate, "backup"),
            ]
        );
        // stage 3 resends the initial prompt
        assert_eq!(trace.attempts[0].prompt_sha256, trace.attempts[2].prompt_sha256);
        assert_ne!(trace.attempts[0].prompt_sha256, trace.attempts[1].prompt_sha256);
    }

    #[test]
    fn transport_failure_fails_the_column_only() {
        let mut script = crate::llm::Script::default();
        script.keyed.insert("Book_0/0".into(), vec!["name".into()]);
        let p = Pipeline::new(
            config(Approach::Base),
            None,
            Box::new(ScriptedBackend::new(script)),
        )
        .unwrap()
        .with_vocabulary(set(&["author", "name"]));
        let trace = p.annotate_table(&book_table(), &[0, 1]).unwrap();
        assert_eq!(trace.annotations[0].status, AnnotationStatus::Ok);
        assert_eq!(trace.annotations[1].status, AnnotationStatus::FailedFormat);
        assert_eq!(trace.annotations[1].attempts, 1);
        assert_eq!(trace.failed_count, 1);
    }

    #[test]
    fn exhausted_vocabulary_gives_no_candidates() {
        let p = Pipeline::new(config(Approach::Base), None, Box::new(FirstCandidateBackend))
            .unwrap()
            .with_vocabulary(set(&["name"]));
        let trace = p.annotate_table(&book_table(), &[0, 1]).unwrap();
        assert_eq!(trace.annotations[1].status, AnnotationStatus::NoCandidates);
        assert_eq!(trace.annotations[1].attempts, 1);
    }

    #[test]
    fn topic_detection_paths() {
        let stats = book_stats();
        let mut cfg = config(Approach::RangeDomain);
        cfg.use_gt_domain = false;
        let table = book_table();

        let scripted = |replies: &[&str]| {
            let mut s = crate::llm::Script::default();
            s.keyed.insert(
                "Book_0/topic".into(),
                replies.iter().map(|r| r.to_string()).collect(),
            );
            Pipeline::new(
                cfg.clone(),
                Some(stats.clone()),
                Box::new(ScriptedBackend::new(s)),
            )
            .unwrap()
        };
        let mut log = Vec::new();
        let got = scripted(&["Person"])
            .detect_table_domain(&table, &mut log)
            .unwrap()
            .unwrap();
        assert_eq!(
            (got.domain.as_str(), got.source),
            ("Person", DomainSourceKind::Detected)
        );

        let mut log = Vec::new();
        let got = scripted(&["hmm", "Book."])
            .detect_table_domain(&table, &mut log)
            .unwrap()
            .unwrap();
        assert_eq!(
            (got.domain.as_str(), got.source),
            ("Book", DomainSourceKind::Detected)
        );
        assert_eq!(log[1].stage, PromptKind::TopicRetry);

        // Person has the larger relation set
        let mut log = Vec::new();
        let got = scripted(&["hmm", "no"])
            .detect_table_domain(&table, &mut log)
            .unwrap()
            .unwrap();
        assert_eq!(
            (got.domain.as_str(), got.source),
            ("Person", DomainSourceKind::Fallback)
        );
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn refusal_aborts_the_run() {
        struct Refuse;
        impl LlmBackend for Refuse {
            fn complete(&self, _: &llm::CompletionRequest<'_>) -> Result<llm::LlmResponse, LlmError> {
                Err(LlmError::BackendRefusal {
                    status: 404,
                    message: "model not found".into(),
                })
            }
            fn name(&self) -> &str {
                "refuse"
            }
        }
        let p = Pipeline::new(config(Approach::Base), None, Box::new(Refuse))
            .unwrap()
            .with_vocabulary(set(&["name"]));
        let err = p.run_dataset(&[book_table()], &truth(), 1).unwrap_err();
        assert!(matches!(err, PipelineError::Refusal(_)));
    }

    #[test]
    fn run_dataset_records_missing_tables_and_is_worker_independent() {
        let mut targets = truth();
        targets.insert(
            ColumnRef {
                table_id: "Gone_1".into(),
                column_index: 0,
            },
            None,
        );
        let tables = [book_table(), book_table().with_domain(None)];
        let run = |workers| {
            Pipeline::new(config(Approach::RangeDomain), Some(book_stats()), oracle())
                .unwrap()
                .run_dataset(&tables[..1], &targets, workers)
                .unwrap()
        };
        let one = run(1);
        assert_eq!(one.traces.len(), 1);
        assert_eq!(one.missing_tables, vec!["Gone_1".to_string()]);
        assert_eq!(
            one.predictions_csv(),
            "table_id,column_index,relation\nBook_0,0,name\nBook_0,1,author\nBook_0,2,datePublished\n"
        );
        assert_eq!(one.trace_jsonl().lines().count(), 3);
        let four = run(4);
        assert_eq!(one.predictions_csv(), four.predictions_csv());
        assert_eq!(one.trace_jsonl(), four.trace_jsonl());
    }

    #[test]
    fn bad_target_is_rejected() {
        let p = Pipeline::new(config(Approach::Base), None, Box::new(FirstCandidateBackend))
            .unwrap()
            .with_vocabulary(set(&["name"]));
        assert!(matches!(
            p.annotate_table(&book_table(), &[7]),
            Err(PipelineError::BadTarget { column: 7, .. })
        ));
    }

    #[test]
    fn filtered_approach_without_stats_is_rejected() {
        assert!(
            Pipeline::new(
                config(Approach::RangeDomain),
                None,
                Box::new(FirstCandidateBackend)
            )
            .is_err()
        );
    }
}
