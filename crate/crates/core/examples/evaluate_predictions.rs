//! Scoring a predictions file and deriving the precision gate.
//!
//! ```text
//! cargo run --example evaluate_predictions
//! ```

use cpa::eval::{compute_precision_gate, evaluate, read_predictions};
use cpa::table::GroundTruth;

const TRUTH: &str = "\
table_id,column_index,relation
Book_0,0,name
Book_0,1,author
Book_0,2,datePublished
Book_1,0,name
Book_1,1,author
Movie_0,0,name
Movie_0,1,director
Movie_0,2,datePublished
";

// one wrong, one blank, one duplicate key, one column not in the truth
const PREDICTIONS: &str = "\
table_id,column_index,relation
Book_0,0,name
Book_0,1,author
Book_0,2,datePublished
Book_1,0,name
Book_1,1,publisher
Movie_0,0,name
Movie_0,1,
Movie_0,2,datePublished
Movie_0,2,startDate
Movie_0,7,genre
";

fn main() -> anyhow::Result<()> {
    let truth = GroundTruth::from_csv(TRUTH.as_bytes())?;
    let predictions = read_predictions(PREDICTIONS.as_bytes())?;
    let report = evaluate(&predictions, &truth);
    println!(
        "micro F1 {:.3}  macro F1 {:.3}  P {:.3}  R {:.3}  blank {}",
        report.micro_f1, report.macro_f1, report.precision, report.recall, report.failed_iterations
    );
    for (relation, s) in &report.per_class {
        println!(
            "  {relation:<14} P {:.2} R {:.2} F1 {:.2} ({} of {} predicted correct, support {})",
            s.precision, s.recall, s.f1, s.correct, s.predicted, s.support
        );
    }
    for issue in &report.issues {
        println!("  excluded: {issue:?}");
    }
    let gate: Vec<String> = compute_precision_gate(&report)
        .iter()
        .map(|r| r.to_string())
        .collect();
    println!("relations trusted as co-appearance anchors: {}", gate.join(", "));
    Ok(())
}
