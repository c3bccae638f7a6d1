//! Every approach variant on the adversarial fixture with a first-candidate
//! answerer, showing how wrong anchors spread under co-appearance.
//!
//! ```text
//! cargo run --example ablation_matrix
//! ```

use std::path::Path;

use cpa::eval::{EvalReport, Prediction, compute_precision_gate, evaluate};
use cpa::llm::FirstCandidateBackend;
use cpa::pipeline::{Pipeline, RunConfig};
use cpa::reduce::Approach;
use cpa::stats::build_stats;
use cpa::table::{GroundTruth, Table, domain_from_table_id, read_table_dir};

fn load(dir: &Path, labeled: bool) -> anyhow::Result<(Vec<Table>, GroundTruth)> {
    let gt = GroundTruth::from_path(&dir.join("gt.csv"))?;
    let (tables, _) = read_table_dir(&dir.join("tables"))?;
    let tables = tables
        .into_iter()
        .map(|t| {
            let d = domain_from_table_id(t.id());
            let labels = if labeled {
                gt.relations_of(t.id())
            } else {
                Default::default()
            };
            t.with_domain(d).with_ground_truth(labels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tables, gt))
}

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/adversarial");
    let (train, _) = load(&root.join("train"), true)?;
    let (test, gt) = load(&root.join("test"), false)?;
    let stats = build_stats(&train, 0.05, 500)?.model;

    // the gated variant trusts only relations that rd predicted precisely;
    // here rd's own test report stands in for a validation split
    let mut gate = None;
    let mut rows: Vec<(&str, EvalReport)> = Vec::new();
    for approach in [
        Approach::RangeDomain,
        Approach::Base,
        Approach::Domain,
        Approach::Range,
        Approach::CoAppearance,
        Approach::RangeDomainCo,
        Approach::RangeDomainCoGated,
    ] {
        let config = RunConfig {
            approach: approach.config(gate.clone()),
            stats_path: Some("in-memory".into()),
            use_gt_domain: true,
            ..RunConfig::default()
        };
        let pipeline = Pipeline::new(config, Some(stats.clone()), Box::new(FirstCandidateBackend))?;
        let out = pipeline.run_dataset(&test, &gt, 1)?;
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
        let report = evaluate(&predictions, &gt);
        if approach == Approach::RangeDomain {
            gate = Some(compute_precision_gate(&report));
        }
        rows.push((approach.name(), report));
    }
    print!(
        "{}",
        EvalReport::comparison_table(rows.iter().map(|(n, r)| (*n, r)))
    );
    Ok(())
}
