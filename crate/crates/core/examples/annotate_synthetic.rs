//! End-to-end annotation of the synthetic test split with the in-process
//! oracle and scripted backends.
//!
//! ```text
//! cargo run --example annotate_synthetic
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use cpa::eval::{EvalReport, Prediction, evaluate};
use cpa::llm::{LlmBackend, OracleBackend, Script, ScriptedBackend};
use cpa::pipeline::{Pipeline, RunConfig};
use cpa::reduce::Approach;
use cpa::stats::StatsBuilder;
use cpa::table::{DomainSource, GroundTruth, Table, read_table_dir};

fn load_split(dir: &Path, labeled: bool) -> anyhow::Result<(Vec<Table>, GroundTruth, DomainSource)> {
    let gt = GroundTruth::from_path(&dir.join("gt.csv"))?;
    let domains = DomainSource::sidecar_from_csv(File::open(dir.join("domains.csv"))?)?;
    let (tables, _) = read_table_dir(&dir.join("tables"))?;
    let tables = tables
        .into_iter()
        .map(|t| {
            let d = domains.domain_for(t.id());
            let labels = if labeled {
                gt.relations_of(t.id())
            } else {
                Default::default()
            };
            t.with_domain(d).with_ground_truth(labels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tables, gt, domains))
}

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic");
    let (train, _, _) = load_split(&root.join("train"), true)?;
    let (test, gt, domains) = load_split(&root.join("test"), false)?;
    let stats = StatsBuilder::new(0.05, 500).build(&train)?.model;

    let DomainSource::Sidecar(domain_map) = domains else {
        unreachable!()
    };
    let script = Script::from_path(&root.join("script.json"))?;
    // scripted replies are consumed, so every run gets a fresh backend
    let make = |name: &str| -> Box<dyn LlmBackend> {
        match name {
            "oracle" => Box::new(OracleBackend::new(gt.clone(), domain_map.clone())),
            _ => Box::new(ScriptedBackend::new(script.clone())),
        }
    };
    let mut reports: BTreeMap<String, EvalReport> = BTreeMap::new();
    for name in ["oracle", "scripted"] {
        for approach in [Approach::Base, Approach::RangeDomain] {
            let config = RunConfig {
                approach: approach.config(None),
                stats_path: Some("in-memory".into()),
                ..RunConfig::default()
            };
            let pipeline = Pipeline::new(config, Some(stats.clone()), make(name))?;
            let out = pipeline.run_dataset(&test, &gt, 4)?;
            let predictions: Vec<Prediction> = out
                .annotations()
                .map(|a| {
                    Prediction::new(
                        &a.column.table_id,
                        a.column.column_index,
                        a.predicted.as_ref().map(|r| r.as_str()),
                    )
                })
                .collect();
            let seconds = out.traces.iter().map(|t| t.total_seconds).sum();
            reports.insert(
                format!("{name}/{approach}"),
                evaluate(&predictions, &gt).with_seconds(seconds),
            );
        }
    }
    print!(
        "{}",
        EvalReport::comparison_table(reports.iter().map(|(k, v)| (k.as_str(), v)))
    );
    Ok(())
}
