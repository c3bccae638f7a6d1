//! Builds the domain, range and co-appearance dictionaries from the
//! synthetic training split and saves them.
//!
//! ```text
//! cargo run --example build_stats [-- OUT.json]
//! ```

use std::fs::File;
use std::path::{Path, PathBuf};

use cpa::stats::StatsBuilder;
use cpa::table::{DomainSource, GroundTruth, read_table_dir};
use cpa::types::PrimitiveType;

fn main() -> anyhow::Result<()> {
    let split = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic/train");
    let gt = GroundTruth::from_path(&split.join("gt.csv"))?;
    let domains = DomainSource::sidecar_from_csv(File::open(split.join("domains.csv"))?)?;
    let (tables, _) = read_table_dir(&split.join("tables"))?;
    let tables = tables
        .into_iter()
        .map(|t| {
            let d = domains.domain_for(t.id());
            let labels = gt.relations_of(t.id());
            t.with_domain(d).with_ground_truth(labels)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let build = StatsBuilder::new(0.05, 500).build_parallel(&tables, 4)?;
    print!("{}", build.report);
    let model = build.model;

    for (domain, relations) in model.domain_dict.iter() {
        let names: Vec<&str> = relations.iter().map(|r| r.as_str()).collect();
        println!("domain {domain}: {}", names.join(", "));
    }
    for ty in PrimitiveType::ALL {
        if let Some(kept) = model.range_dict.filtered(ty) {
            let names: Vec<&str> = kept.iter().map(|r| r.as_str()).collect();
            println!("range {ty}: {}", names.join(", "));
        }
    }
    println!("co-appearance entries: {}", model.co_dict.len());

    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cpa_stats.json"));
    model.save(&out)?;
    println!("saved to {}", out.display());
    Ok(())
}
