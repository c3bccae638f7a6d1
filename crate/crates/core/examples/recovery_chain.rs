//! The three-stage recovery chain, driven by scripted replies.
//!
//! ```text
//! cargo run --example recovery_chain
//! ```

use cpa::llm::ScriptedBackend;
use cpa::pipeline::{Pipeline, RunConfig};
use cpa::reduce::Approach;
use cpa::table::{RelationLabel, Table};

fn main() -> anyhow::Result<()> {
    let table = Table::new(
        "Book_0",
        2,
        vec![
            vec!["The Hobbit".into(), "J. R. R. Tolkien".into()],
            vec!["Dune".into(), "Frank Herbert".into()],
        ],
    )?;
    let vocab = ["author", "name", "datePublished"].map(|r| RelationLabel::new(r).expect("label"));
    let scenarios: [(&str, &[&str]); 4] = [
        ("clean answer", &["author"]),
        ("wrapped answer", &["The answer is **author**."]),
        (
            "recovered on the single-word re-ask",
            &["It could be several of these.", "author"],
        ),
        ("never parseable", &["hmm", "no idea", "???"]),
    ];
    for (name, replies) in scenarios {
        let config = RunConfig {
            approach: Approach::Base.config(None),
            ..RunConfig::default()
        };
        let backend = Box::new(ScriptedBackend::from_replies(replies.iter().copied()));
        let pipeline = Pipeline::new(config, None, backend)?.with_vocabulary(vocab.clone().into());
        let trace = pipeline.annotate_table(&table, &[1])?;
        let a = &trace.annotations[0];
        println!(
            "{name}: {:?} after {} attempt(s), predicted {}",
            a.status,
            a.attempts,
            a.predicted.as_ref().map_or("-", |r| r.as_str())
        );
        for rec in &trace.attempts {
            println!(
                "    attempt {} {:?} via {}: {:?}",
                rec.attempt, rec.stage, rec.model, rec.answer
            );
        }
    }
    Ok(())
}
