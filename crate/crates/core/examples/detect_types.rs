//! Primitive type detection for cells and columns.
//!
//! ```text
//! cargo run --example detect_types
//! ```

use cpa::table::Table;
use cpa::types::{DetectionMode, TypeDetector};

fn main() {
    let detector = TypeDetector::default();
    for cell in [
        "Lisbon",
        "1,234.5",
        "-17",
        "2021-03-04",
        "March 4, 2021",
        "04/03/2021",
        "https://example.org/a",
        "www.example.org",
        "example.org/path",
        "N/A",
    ] {
        println!("{cell:>24}  {}", detector.detect_cell(cell));
    }

    // a mostly-numeric column with one stray word
    let table = Table::new(
        "mixed_0",
        1,
        vec![
            vec!["unknown".into()],
            vec!["12".into()],
            vec!["40".into()],
            vec!["".into()],
            vec!["7".into()],
        ],
    )
    .expect("table");
    for mode in [DetectionMode::FirstCell, DetectionMode::Majority] {
        println!(
            "column under {mode:?}: {}",
            detector.detect_column(&table, 0, mode, 500)
        );
    }
}
