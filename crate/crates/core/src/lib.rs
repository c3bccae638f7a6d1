//! Column property annotation (CPA) for relational tables.
//!
//! Given a table without meaningful headers, pick the knowledge-graph
//! property that relates each target column to the table's subject. The
//! crate combines three statistical reductions of the candidate relation
//! list, learned offline from a labeled training corpus, with an LLM that
//! makes the final choice:
//!
//! * **domain**: relations seen under the table's topic ([`stats::DomainDict`]),
//! * **range**: relations seen with the column's primitive type
//!   ([`types::PrimitiveType`], [`stats::RangeDict`]),
//! * **co-appearance**: relations that shared a training table with relations
//!   already predicted for earlier columns ([`stats::CoAppearanceDict`]).
//!
//! The pieces, bottom up:
//!
//! | module | role |
//! |---|---|
//! | [`table`] | tables, labels, annotations, CSV / JSON-rows ingestion |
//! | [`types`] | String / Number / Date / URL detection |
//! | [`stats`] | offline dictionary build and its JSON file |
//! | [`reduce`] | per-column candidate lists for each approach variant |
//! | [`prompt`] | annotation, retry and topic prompts with toggleable parts |
//! | [`llm`] | backend trait, HTTP client, mock backends, answer parsing |
//! | [`pipeline`] | topic detection, column loop, recovery chain |
//! | [`eval`] | micro / macro F1, per-class precision, precision gate |
//! | [`cli`] | the `cpa` command (`build-stats`, `annotate`, `evaluate`, `ablate`) |
//!
//! Runnable walkthroughs live in `examples/`; see the README for the list.

pub mod cli;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod reduce;
pub mod stats;
pub mod table;
pub mod types;

pub use eval::{EvalReport, compute_precision_gate, evaluate};
pub use llm::{LlmBackend, LlmResponse, parse_single_relation};
pub use pipeline::{Pipeline, RunConfig, RunOutput, TableRunTrace};
pub use prompt::{PromptParts, PromptTemplate, RenderedPrompt};
pub use reduce::{Approach, ApproachConfig, CandidateSet, CoAppearanceMode, reduce};
pub use stats::{StatsModel, build_stats};
pub use table::{Annotation, AnnotationStatus, ColumnRef, DomainLabel, RelationLabel, Table};
pub use types::{DetectionMode, PrimitiveType, TypeDetector};
