//! The `cpa` command.
//!
//! ```text
//! cpa build-stats --corpus DIR --gt FILE --out stats.json [--domain-map FILE | --domain-from-filename]
//! cpa annotate    --tables DIR --targets FILE --out predictions.csv [--trace FILE] [run settings]
//! cpa evaluate    --predictions FILE --gt FILE [--trace FILE] [--report-out FILE] [--gate-out FILE]
//! cpa ablate      --matrix base,d,rd,rd@role+cot --tables DIR --targets FILE --out-dir DIR [run settings]
//! ```
//!
//! Exit status is 0 on success, 1 for unreadable or inconsistent data, and 2
//! for usage and configuration errors.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, anyhow};
use clap::{Parser, Subcommand};

pub use config::{Effective, Settings, relative_to};

use crate::eval::{self, EvalReport, compute_precision_gate};
use crate::llm::{
    BackendKind, FirstCandidateBackend, HttpBackend, LlmBackend, OracleBackend, Script, ScriptedBackend,
};
use crate::pipeline::{Pipeline, RunOutput};
use crate::prompt::{PromptParts, PromptTemplate};
use crate::reduce::Approach;
use crate::stats::{DEFAULT_SAMPLE_SIZE, DEFAULT_THRESHOLD, StatsBuilder, StatsModel};
use crate::table::{DomainLabel, DomainSource, GroundTruth, RelationLabel, Table, read_table_dir};
use crate::types::{DetectionMode, TypeDetector, TypeGrammar};

#[derive(Parser, Debug)]
#[command(
    name = "cpa",
    version,
    about = "Column property annotation with candidate reduction and an LLM"
)]
struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG also works.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build domain, range and co-appearance dictionaries from a labeled corpus.
    BuildStats(BuildStatsArgs),
    /// Annotate target columns and write a predictions file.
    Annotate(AnnotateArgs),
    /// Score a predictions file against ground truth.
    Evaluate(EvaluateArgs),
    /// Run several approach / prompt configurations and compare them.
    Ablate(AblateArgs),
}

#[derive(clap::Args, Debug)]
struct BuildStatsArgs {
    /// Directory of training tables (.csv, .json, .jsonl).
    #[arg(long)]
    corpus: PathBuf,
    /// `table_id,column_index,relation` labels for the corpus.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `table_id,domain` CSV.
    #[arg(long, conflicts_with = "domain_from_filename")]
    domain_map: Option<PathBuf>,
    /// Take each table's domain from its id, up to the first `_`.
    #[arg(long)]
    domain_from_filename: bool,
    /// Range cut: drop relations seen less than this fraction of the most frequent one.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    sample_size: usize,
    /// first_cell or majority.
    #[arg(long, default_value = "first_cell")]
    type_mode: String,
    #[arg(long, value_name = "FILE")]
    type_grammar: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(clap::Args, Debug)]
struct AnnotateArgs {
    #[arg(long)]
    tables: PathBuf,
    /// Columns to annotate, `table_id,column_index[,relation]`.
    #[arg(long)]
    targets: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines log of every model call (defaults next to --out).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print the merged settings as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    settings: Settings,
}

#[derive(clap::Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Trace log of the run, for the time column.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Full per-class report as JSON.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Relations predicted with precision 1.0, as a JSON array.
    #[arg(long)]
    gate_out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct AblateArgs {
    /// Comma-separated cells, each `variant` or `variant@parts`, e.g. `rd@role+cot`, `rd@none`.
    #[arg(long)]
    matrix: String,
    #[arg(long)]
    tables: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    /// Ground truth for scoring (defaults to the targets file).
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    settings: Settings,
}

/// An error with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // some errors already quote their source; skip causes repeated verbatim
        let mut shown = String::new();
        for cause in self.error.chain() {
            let text = cause.to_string();
            if shown.contains(&text) {
                continue;
            }
            if !shown.is_empty() {
                shown.push_str(": ");
            }
            shown.push_str(&text);
        }
        f.write_str(&shown)
    }
}

const DATA: u8 = 1;
const USAGE: u8 = 2;

trait Classify<T> {
    fn data(self) -> Result<T, Failure>;
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: DATA,
            error: e.into(),
        })
    }

    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: USAGE,
            error: e.into(),
        })
    }
}

fn usage_err<T>(msg: impl fmt::Display) -> Result<T, Failure> {
    Err(Failure {
        code: USAGE,
        error: anyhow!("{msg}"),
    })
}

/// Parses `args` (program name first), runs the command, and maps errors to exit codes.
pub fn main<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::BuildStats(a) => build_stats(a),
        Command::Annotate(a) => annotate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn domain_source(map: Option<&Path>, from_filename: bool) -> Result<DomainSource, Failure> {
    match (map, from_filename) {
        (Some(path), _) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("domain map {}", path.display()))
                .data()?;
            DomainSource::sidecar_from_csv(file)
                .with_context(|| format!("domain map {}", path.display()))
                .data()
        }
        (None, true) => Ok(DomainSource::FilenamePrefix),
        (None, false) => Ok(DomainSource::None),
    }
}

fn load_tables(dir: &Path, domains: &DomainSource) -> Result<Vec<Table>, Failure> {
    let (tables, skipped) = read_table_dir(dir)
        .with_context(|| format!("reading tables from {}", dir.display()))
        .data()?;
    if !skipped.is_empty() {
        log::warn!("{} table files skipped", skipped.len());
    }
    Ok(tables
        .into_iter()
        .map(|t| {
            let d = domains.domain_for(t.id());
            t.with_domain(d)
        })
        .collect())
}

fn load_gt(path: &Path) -> Result<GroundTruth, Failure> {
    GroundTruth::from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .data()
}

fn detector(grammar: Option<&Path>) -> Result<TypeDetector, Failure> {
    let grammar = match grammar {
        Some(p) => TypeGrammar::from_json_file(p)
            .with_context(|| format!("type grammar {}", p.display()))
            .usage()?,
        None => TypeGrammar::default(),
    };
    TypeDetector::new(grammar).usage()
}

fn build_stats(a: BuildStatsArgs) -> Result<(), Failure> {
    let mode: DetectionMode = a.type_mode.parse().map_err(anyhow::Error::msg).usage()?;
    let domains = domain_source(a.domain_map.as_deref(), a.domain_from_filename)?;
    let gt = load_gt(&a.gt)?;
    let tables = load_tables(&a.corpus, &domains)?
        .into_iter()
        .map(|t| {
            let labels = gt.relations_of(t.id());
            t.with_ground_truth(labels)
        })
        .collect::<Result<Vec<_>, _>>()
        .context("attaching labels")
        .data()?;
    let builder = StatsBuilder::new(a.threshold, a.sample_size)
        .mode(mode)
        .detector(detector(a.type_grammar.as_deref())?);
    let build = builder.build_parallel(&tables, a.workers).map_err(|e| {
        use crate::stats::StatsError::*;
        let code = match e {
            InvalidThreshold(_) | InvalidSampleSize | Pool(_) => USAGE,
            _ => DATA,
        };
        Failure {
            code,
            error: e.into(),
        }
    })?;
    build.model.save(&a.out).data()?;
    print!("{}", build.report);
    println!("domains: {}", build.model.domain_dict.len());
    println!("co-appearance keys: {}", build.model.co_dict.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Settings plus everything loaded from them, shared by annotate and ablate.
struct Prepared {
    eff: Effective,
    tables: Vec<Table>,
    targets: GroundTruth,
    stats: Option<StatsModel>,
    vocab: Option<BTreeSet<RelationLabel>>,
    gate: Option<BTreeSet<RelationLabel>>,
    template: PromptTemplate,
    detector: TypeDetector,
    oracle: Option<(GroundTruth, BTreeMap<String, DomainLabel>)>,
    script: Option<Script>,
}

fn read_gate(path: &Path) -> Result<BTreeSet<RelationLabel>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("precision gate {}", path.display()))
        .usage()?;
    serde_json::from_str(&text)
        .with_context(|| {
            format!(
                "precision gate {}: expected a JSON array of relations",
                path.display()
            )
        })
        .usage()
}

fn read_vocab(path: &Path) -> Result<BTreeSet<RelationLabel>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("vocabulary {}", path.display()))
        .data()?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(RelationLabel::new)
        .collect::<Result<_, _>>()
        .with_context(|| format!("vocabulary {}", path.display()))
        .data()
}

fn prepare(settings: &Settings, tables_dir: &Path, targets: &Path) -> Result<Prepared, Failure> {
    let merged = settings.merged().map_err(anyhow::Error::msg).usage()?;
    let eff = Effective::resolve(&merged).map_err(anyhow::Error::msg).usage()?;
    eff.backend_config().validate().usage()?;
    if eff.backend == BackendKind::Scripted && eff.script.is_none() {
        return usage_err("--backend scripted needs --script");
    }

    let template = match &eff.prompt_template {
        Some(p) => PromptTemplate::from_path(p).usage()?,
        None => PromptTemplate::default(),
    };
    let detector = detector(eff.type_grammar.as_deref())?;
    let gate = eff.precision_gate.as_deref().map(read_gate).transpose()?;
    let script = eff
        .script
        .as_deref()
        .map(|p| Script::from_path(p).usage())
        .transpose()?;

    let domains = domain_source(eff.domain_map.as_deref(), eff.domain_from_filename)?;
    let tables = load_tables(tables_dir, &domains)?;
    let targets = load_gt(targets)?;
    let stats = match &eff.stats {
        Some(p) => Some(
            StatsModel::load(p)
                .with_context(|| format!("loading stats {}", p.display()))
                .data()?,
        ),
        None => None,
    };
    let vocab = eff.vocab.as_deref().map(read_vocab).transpose()?;
    let oracle = if eff.backend == BackendKind::Oracle {
        let truth = match &eff.oracle_gt {
            Some(p) => load_gt(p)?,
            None => targets.clone(),
        };
        let table_domains = tables
            .iter()
            .filter_map(|t| t.domain().map(|d| (t.id().to_string(), d.clone())))
            .collect();
        Some((truth, table_domains))
    } else {
        None
    };
    Ok(Prepared {
        eff,
        tables,
        targets,
        stats,
        vocab,
        gate,
        template,
        detector,
        oracle,
        script,
    })
}

impl Prepared {
    fn backend(&self) -> Result<Box<dyn LlmBackend>, Failure> {
        Ok(match self.eff.backend {
            BackendKind::Http => Box::new(HttpBackend::new(self.eff.backend_config()).usage()?),
            BackendKind::Oracle => {
                let (truth, domains) = self.oracle.clone().expect("oracle inputs are loaded");
                Box::new(OracleBackend::new(truth, domains))
            }
            BackendKind::First => Box::new(FirstCandidateBackend),
            BackendKind::Scripted => Box::new(ScriptedBackend::new(
                self.script.clone().expect("script is loaded"),
            )),
        })
    }

    fn run(
        &self,
        approach: Approach,
        gate: Option<BTreeSet<RelationLabel>>,
        parts: PromptParts,
    ) -> Result<RunOutput, Failure> {
        if approach == Approach::RangeDomainCoGated && gate.is_none() {
            return usage_err("rdc_p needs --precision-gate");
        }
        let config = self.eff.run_config(approach, gate, parts);
        if config.approach.uses_stats() && self.stats.is_none() {
            return usage_err(format!("approach {approach} needs --stats"));
        }
        let mut pipeline = Pipeline::new(config, self.stats.clone(), self.backend()?)
            .usage()?
            .with_template(self.template.clone())
            .with_detector(self.detector.clone());
        if let Some(v) = &self.vocab {
            pipeline = pipeline.with_vocabulary(v.clone());
        }
        if pipeline.vocabulary().is_empty() {
            return usage_err("no candidate vocabulary: pass --stats or --vocab");
        }
        let out = pipeline
            .run_dataset(&self.tables, &self.targets, self.eff.workers)
            .map_err(|e| {
                let code = match e {
                    crate::pipeline::PipelineError::Io { .. }
                    | crate::pipeline::PipelineError::BadTarget { .. } => DATA,
                    _ => USAGE,
                };
                Failure {
                    code,
                    error: e.into(),
                }
            })?;
        for id in &out.missing_tables {
            eprintln!("warning: missing table {id}");
        }
        Ok(out)
    }
}

fn annotate(a: AnnotateArgs) -> Result<(), Failure> {
    if a.print_config {
        let merged = a.settings.merged().map_err(anyhow::Error::msg).usage()?;
        let eff = Effective::resolve(&merged).map_err(anyhow::Error::msg).usage()?;
        print!("{}", eff.to_toml());
        return Ok(());
    }
    let Some(out) = a.out.clone() else {
        return usage_err("--out is required");
    };
    let prepared = prepare(&a.settings, &a.tables, &a.targets)?;
    let started = Instant::now();
    let result = prepared.run(
        prepared.eff.approach,
        prepared.gate.clone(),
        prepared.eff.prompt_parts,
    )?;
    let trace = a
        .trace
        .clone()
        .unwrap_or_else(|| out.with_extension("trace.jsonl"));
    result.write(&out, Some(&trace)).data()?;
    let columns = result.annotations().count();
    println!(
        "annotated {columns} columns in {} tables ({} failed, {} missing tables) in {:.2}s",
        result.traces.len(),
        result.failed_count(),
        result.missing_tables.len(),
        started.elapsed().as_secs_f64()
    );
    println!("wrote {}", prepared.eff.relative(&out).display());
    println!("wrote {}", prepared.eff.relative(&trace).display());
    Ok(())
}

fn gt_has_labels(gt: &GroundTruth) -> bool {
    gt.iter().any(|(_, r)| r.is_some())
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let predictions = eval::read_predictions_file(&a.predictions).data()?;
    let gt = load_gt(&a.gt)?;
    if !gt_has_labels(&gt) {
        return Err(Failure {
            code: DATA,
            error: anyhow!("{} has no labeled rows", a.gt.display()),
        });
    }
    let seconds = match &a.trace {
        Some(t) => eval::trace_seconds(t).data()?,
        None => 0.0,
    };
    let report = eval::evaluate(&predictions, &gt).with_seconds(seconds);
    print!("{}", EvalReport::comparison_table([("run", &report)]));
    println!(
        "targets {}  submitted {}  correct {}  failed {}  excluded {}",
        report.targets,
        report.submitted,
        report.correct,
        report.failed_iterations,
        report.issues.len()
    );
    if let Some(p) = &a.report_out {
        write(p, &report.to_json())?;
    }
    if let Some(p) = &a.gate_out {
        write(p, &gate_json(&compute_precision_gate(&report)))?;
    }
    Ok(())
}

fn gate_json(gate: &BTreeSet<RelationLabel>) -> String {
    serde_json::to_string_pretty(gate).expect("labels serialize") + "\n"
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .data()?;
    }
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .data()
}

/// One ablation cell: a variant and, optionally, its own prompt parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub approach: Approach,
    pub parts: Option<PromptParts>,
}

impl Cell {
    pub fn name(&self) -> String {
        match self.parts {
            Some(p) => format!("{}@{}", self.approach.name(), p.name()),
            None => self.approach.name().to_string(),
        }
    }
}

/// Parses `base,d,rd@role+cot,rd@none`.
pub fn parse_matrix(matrix: &str) -> Result<Vec<Cell>, String> {
    let mut cells: Vec<Cell> = Vec::new();
    for item in matrix.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (variant, parts) = match item.split_once('@') {
            Some((v, p)) => (v, Some(p.parse::<PromptParts>().map_err(|e| e.to_string())?)),
            None => (item, None),
        };
        let approach: Approach = variant
            .parse()
            .map_err(|e: crate::reduce::ReduceError| e.to_string())?;
        let cell = Cell { approach, parts };
        if cells.iter().any(|c| c.name() == cell.name()) {
            return Err(format!("cell `{}` listed twice", cell.name()));
        }
        cells.push(cell);
    }
    if cells.is_empty() {
        return Err("empty matrix".into());
    }
    Ok(cells)
}

fn ablate(a: AblateArgs) -> Result<(), Failure> {
    let cells = parse_matrix(&a.matrix).map_err(anyhow::Error::msg).usage()?;
    if a.print_config {
        let merged = a.settings.merged().map_err(anyhow::Error::msg).usage()?;
        let eff = Effective::resolve(&merged).map_err(anyhow::Error::msg).usage()?;
        print!("{}", eff.to_toml());
        return Ok(());
    }
    let prepared = prepare(&a.settings, &a.tables, &a.targets)?;
    let gt = match &a.gt {
        Some(p) => load_gt(p)?,
        None => prepared.targets.clone(),
    };
    if !gt_has_labels(&gt) {
        return usage_err("ablate scores every cell: pass --gt or a labeled targets file");
    }

    // rd runs first so that rdc_p can take its gate from it
    let mut order: Vec<&Cell> = cells.iter().collect();
    order.sort_by_key(|c| c.approach != Approach::RangeDomain);
    let mut derived_gate: Option<BTreeSet<RelationLabel>> = None;
    let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
    for cell in order {
        let parts = cell.parts.unwrap_or(prepared.eff.prompt_parts);
        let gate = match cell.approach {
            Approach::RangeDomainCoGated => match (&prepared.gate, &derived_gate) {
                (Some(g), _) => Some(g.clone()),
                (None, Some(g)) => {
                    log::info!("rdc_p uses the gate from this run's rd cell");
                    Some(g.clone())
                }
                (None, None) => {
                    return usage_err("rdc_p needs --precision-gate or an rd cell in the matrix");
                }
            },
            _ => None,
        };
        let name = cell.name();
        let out = prepared.run(cell.approach, gate, parts)?;
        let dir = a.out_dir.join(&name);
        out.write(&dir.join("predictions.csv"), Some(&dir.join("trace.jsonl")))
            .data()?;
        let predictions = eval::read_predictions(out.predictions_csv().as_bytes()).data()?;
        let seconds: f64 = out.traces.iter().map(|t| t.total_seconds).sum();
        let report = eval::evaluate(&predictions, &gt).with_seconds(seconds);
        write(&dir.join("report.json"), &report.to_json())?;
        if cell.approach == Approach::RangeDomain && derived_gate.is_none() {
            let gate = compute_precision_gate(&report);
            write(&dir.join("gate.json"), &gate_json(&gate))?;
            derived_gate = Some(gate);
        }
        reports.insert(name, report);
    }

    let names: Vec<String> = cells.iter().map(Cell::name).collect();
    let table = EvalReport::comparison_table(names.iter().map(|n| (n.as_str(), &reports[n])));
    write(&a.out_dir.join("comparison.txt"), &table)?;
    write(&a.out_dir.join("config.toml"), &prepared.eff.to_toml())?;
    print!("{table}");
    println!("wrote {}", prepared.eff.relative(&a.out_dir).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_parsing() {
        let cells = parse_matrix("base, rd@role+cot ,rd@none,rdc_p").unwrap();
        let names: Vec<String> = cells.iter().map(Cell::name).collect();
        assert_eq!(names, ["base", "rd@role+cot", "rd@none", "rdc_p"]);
        assert!(parse_matrix("rd,rd").is_err());
        assert!(parse_matrix("rdq").is_err());
        assert!(parse_matrix("rd@tone").is_err());
        assert!(parse_matrix("").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main(["cpa", "frobnicate"]), ExitCode::from(USAGE));
        assert_eq!(
            main([
                "cpa",
                "ablate",
                "--matrix",
                "zz",
                "--tables",
                "t",
                "--targets",
                "g",
                "--out-dir",
                "o"
            ]),
            ExitCode::from(USAGE)
        );
        assert_eq!(main(["cpa", "--help"]), ExitCode::SUCCESS);
    }

    #[test]
    fn missing_data_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        let code = main([
            OsString::from("cpa"),
            "evaluate".into(),
            "--predictions".into(),
            missing.clone().into(),
            "--gt".into(),
            missing.into(),
        ]);
        assert_eq!(code, ExitCode::from(DATA));
    }
}
