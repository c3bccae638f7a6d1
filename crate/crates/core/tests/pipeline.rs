use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use cpa::llm::{Script, ScriptedBackend};
use cpa::pipeline::{Pipeline, RunConfig, RunOutput};
use cpa::reduce::Approach;
use cpa::stats::{StatsModel, build_stats};
use cpa::table::{AnnotationStatus, DomainSource, GroundTruth, Table, read_table_dir};

fn load(split: &str, labeled: bool) -> (Vec<Table>, GroundTruth) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/synthetic")
        .join(split);
    let gt = GroundTruth::from_path(&dir.join("gt.csv")).unwrap();
    let domains = DomainSource::sidecar_from_csv(File::open(dir.join("domains.csv")).unwrap()).unwrap();
    let (tables, _) = read_table_dir(&dir.join("tables")).unwrap();
    let tables = tables
        .into_iter()
        .map(|t| {
            let d = domains.domain_for(t.id());
            let labels = if labeled {
                gt.relations_of(t.id())
            } else {
                Default::default()
            };
            t.with_domain(d).with_ground_truth(labels).unwrap()
        })
        .collect();
    (tables, gt)
}

fn stats() -> StatsModel {
    build_stats(&load("train", true).0, 0.05, 500).unwrap().model
}

fn script() -> Script {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic/script.json");
    Script::from_path(&path).unwrap()
}

fn run(approach: Approach, stats: &StatsModel, gt_domain: bool, workers: usize) -> RunOutput {
    let (test, gt) = load("test", false);
    let config = RunConfig {
        approach: approach.config(Some(BTreeSet::new())),
        stats_path: Some("stats.json".into()),
        use_gt_domain: gt_domain,
        ..RunConfig::default()
    };
    let backend = Box::new(ScriptedBackend::new(script()));
    Pipeline::new(config, Some(stats.clone()), backend)
        .unwrap()
        .run_dataset(&test, &gt, workers)
        .unwrap()
}

#[test]
fn every_approach_keeps_trace_invariants() {
    let stats = stats();
    let (_, gt) = load("test", false);
    for approach in Approach::ALL {
        for gt_domain in [false, true] {
            let out = run(approach, &stats, gt_domain, 2);
            assert!(out.missing_tables.is_empty());
            assert_eq!(out.annotations().count(), gt.len(), "{approach}");
            for trace in &out.traces {
                assert_eq!(trace.annotations.len(), trace.columns.len());
                let failed = trace
                    .annotations
                    .iter()
                    .filter(|a| a.status != AnnotationStatus::Ok)
                    .count();
                assert_eq!(trace.failed_count, failed);
                let latency: f64 = trace.attempts.iter().map(|a| a.latency_seconds).sum();
                assert!((trace.total_seconds - latency).abs() < 1e-9);
                if approach.config(None).needs_domain() {
                    assert!(trace.detected_domain.is_some(), "{approach} {}", trace.table_id);
                } else {
                    assert!(trace.detected_domain.is_none());
                }

                let mut seen = BTreeSet::new();
                for (a, col) in trace.annotations.iter().zip(&trace.columns) {
                    assert_eq!(a.column.column_index, col.column_index);
                    assert!((1..=3).contains(&a.attempts));
                    let records = trace
                        .attempts
                        .iter()
                        .filter(|r| r.column_index == Some(col.column_index))
                        .count();
                    assert_eq!(records, a.attempts as usize, "{approach} {}", trace.table_id);
                    match (&a.status, &a.predicted) {
                        (AnnotationStatus::Ok, Some(r)) => {
                            assert!(col.candidates.contains(r));
                            // candidates exclude earlier predictions, so no repeats
                            assert!(seen.insert(r.clone()), "{approach} repeated {r}");
                        }
                        (AnnotationStatus::Ok, None) => panic!("Ok without a prediction"),
                        (_, p) => assert!(p.is_none()),
                    }
                }
            }
        }
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let stats = stats();
    for approach in [Approach::Base, Approach::RangeDomainCo] {
        let one = run(approach, &stats, false, 1);
        let many = run(approach, &stats, false, 6);
        assert_eq!(one.predictions_csv(), many.predictions_csv());
        assert_eq!(one.trace_jsonl(), many.trace_jsonl());
    }
}

#[test]
fn filters_never_grow_candidate_lists() {
    let stats = stats();
    let size = |approach| -> HashMap<(String, usize), usize> {
        run(approach, &stats, true, 1)
            .traces
            .iter()
            .flat_map(|t| {
                t.columns
                    .iter()
                    .map(|c| ((t.table_id.clone(), c.column_index), c.candidates.len()))
            })
            .collect()
    };
    let base = size(Approach::Base);
    let rd = size(Approach::RangeDomain);
    for (key, n) in &rd {
        assert!(n <= &base[key], "{key:?}");
    }
    let mean = |m: &HashMap<_, usize>| m.values().sum::<usize>() as f64 / m.len() as f64;
    assert!(mean(&rd) < mean(&base) / 3.0);
}
