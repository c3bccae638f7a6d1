//! The annotation, retry and topic prompts, and how prompt parts change them.
//!
//! ```text
//! cargo run --example render_prompts [-- TEMPLATE.toml]
//! ```

use std::path::PathBuf;

use cpa::prompt::{PromptParts, PromptTemplate};
use cpa::reduce::CandidateSet;
use cpa::table::{DomainLabel, RelationLabel, Table};

fn main() -> anyhow::Result<()> {
    let template = match std::env::args_os().nth(1) {
        Some(p) => PromptTemplate::from_path(&PathBuf::from(p))?,
        None => PromptTemplate::default(),
    };
    let table = Table::new(
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
    )?;
    let candidates = CandidateSet::from_relations(
        ["author", "name", "publisher", "illustrator"].map(|r| RelationLabel::new(r).expect("label")),
    );

    let full = template.render_annotation_prompt(&table, 1, &candidates, PromptParts::all(), 5)?;
    println!("{}\n", full.text);
    println!(
        "---- retry ----\n{}\n",
        template
            .render_retry_prompt("I think it might be the writer.", &candidates)?
            .text
    );
    let domains = ["Book", "Movie", "Event"].map(|d| DomainLabel::new(d).expect("domain"));
    println!(
        "---- topic ----\n{}\n",
        template.render_topic_prompt(&table, domains.iter(), 5)?.text
    );

    println!("{:<6} {:<22} {:>6}", "omit", "parts", "tokens");
    for (label, parts) in PromptParts::ablation_rows() {
        let p = template.render_annotation_prompt(&table, 1, &candidates, parts, 5)?;
        println!("{label:<6} {:<22} {:>6}", parts.name(), p.token_estimate);
    }
    Ok(())
}
