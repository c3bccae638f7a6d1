//! Candidate lists for one column under every approach variant.
//!
//! ```text
//! cargo run --example reduce_candidates
//! ```

use std::collections::BTreeSet;

use cpa::reduce::{Approach, ReduceRequest, reduce};
use cpa::stats::build_stats;
use cpa::table::{DomainLabel, RelationLabel, Table};
use cpa::types::PrimitiveType;

fn rel(s: &str) -> RelationLabel {
    RelationLabel::new(s).expect("label")
}

fn labeled(id: &str, domain: &str, rows: Vec<Vec<&str>>, relations: &[&str]) -> Table {
    let cells = rows
        .into_iter()
        .map(|r| r.into_iter().map(String::from).collect())
        .collect();
    Table::new(id, relations.len(), cells)
        .expect("table")
        .with_domain(Some(DomainLabel::new(domain).expect("domain")))
        .with_ground_truth(relations.iter().enumerate().map(|(i, r)| (i, rel(r))).collect())
        .expect("labels")
}

fn main() -> anyhow::Result<()> {
    let corpus = vec![
        labeled(
            "Book_0",
            "Book",
            vec![vec!["Dune", "Frank Herbert", "1965-08-01"]],
            &["name", "author", "datePublished"],
        ),
        labeled(
            "Book_1",
            "Book",
            vec![vec!["Emma", "Jane Austen", "412"]],
            &["name", "author", "numberOfPages"],
        ),
        labeled(
            "Movie_0",
            "Movie",
            vec![vec!["Alien", "Ridley Scott", "1979-05-25"]],
            &["name", "director", "datePublished"],
        ),
        labeled(
            "Event_0",
            "Event",
            vec![vec!["Expo", "2024-01-02", "https://expo.example.org"]],
            &["name", "startDate", "url"],
        ),
    ];
    let stats = build_stats(&corpus, 0.05, 500)?.model;
    let vocab = stats.vocabulary();
    let domain = DomainLabel::new("Book")?;
    // `name` is already predicted for column 0; we are now reducing for a Date column
    let predicted: BTreeSet<RelationLabel> = [rel("name")].into();

    for approach in Approach::ALL {
        let gate = Some([rel("name")].into());
        let config = approach.config(gate);
        let set = reduce(&ReduceRequest {
            full_vocab: &vocab,
            domain: Some(&domain),
            column_type: PrimitiveType::Date,
            already_predicted: &predicted,
            anchor_predictions: &predicted,
            stats: Some(&stats),
            config: &config,
        })?;
        let names: Vec<&str> = set.relations().iter().map(|r| r.as_str()).collect();
        println!(
            "{:<6} {:>2} candidates  [{}]  filters {:?}{}",
            approach.name(),
            set.len(),
            names.join(", "),
            set.applied_filters,
            if set.fallback_used { "  (fallback)" } else { "" }
        );
    }
    Ok(())
}
