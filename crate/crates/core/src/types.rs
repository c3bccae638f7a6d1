//! Primitive type detection: String, Number, Date, URL.
//!
//! All grammars are data ([`TypeGrammar`]) so they can be tuned through a
//! JSON file without touching code. Cells are tested URL → Date → Number,
//! and anything else is a String.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrimitiveType {
    String,
    Number,
    Date,
    #[serde(rename = "URL")]
    Url,
}

impl PrimitiveType {
    pub const ALL: [PrimitiveType; 4] = [Self::String, Self::Number, Self::Date, Self::Url];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::String => "String",
            Self::Number => "Number",
            Self::Date => "Date",
            Self::Url => "URL",
        }
    }
}

impl fmt::Display for PrimitiveType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Type of the first non-empty cell.
    FirstCell,
    /// Most frequent type over the first `sample_limit` non-empty cells.
    #[serde(alias = "majority_vote")]
    Majority,
}

impl FromStr for DetectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first_cell" => Ok(Self::FirstCell),
            "majority" | "majority_vote" => Ok(Self::Majority),
            other => Err(format!("unknown type detector mode `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("invalid pattern `{pattern}`: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("cannot read grammar file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse grammar file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Tunable grammar tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TypeGrammar {
    pub url_schemes: Vec<String>,
    /// TLDs accepted for scheme-less URLs such as `example.org/about`.
    pub known_tlds: Vec<String>,
    /// Regex for the numeric payload once an affix has been removed.
    pub number_pattern: String,
    pub number_prefixes: Vec<String>,
    pub number_suffixes: Vec<String>,
    /// chrono formats for plain dates, tried in order.
    pub date_formats: Vec<String>,
    /// chrono formats for date-times without an offset.
    pub datetime_formats: Vec<String>,
    /// chrono formats ending in an offset (`%z`, `%:z`).
    pub offset_datetime_formats: Vec<String>,
}

impl Default for TypeGrammar {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            url_schemes: strings(&["http", "https", "ftp"]),
            known_tlds: strings(&[
                "com", "org", "net", "edu", "gov", "io", "info", "biz", "co", "uk", "de", "fr",
                "it", "es", "nl", "eu", "us", "ca", "au", "jp", "ru", "ch", "at", "be", "gr",
                "pl", "se", "no", "dk", "fi", "in", "br", "cn", "me", "tv",
            ]),
            number_pattern: r"^[+-]?(?:(?:\d{1,3}(?:,\d{3})+|\d{1,3}(?:\x{2009}\d{3})+|\d+)(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?$"
                .to_string(),
            number_prefixes: strings(&["$", "€", "£", "¥", "₹"]),
            number_suffixes: strings(&["%", "$", "€", "£", "¥", "₹"]),
            date_formats: strings(&[
                "%Y-%m-%d",
                "%d %B %Y",
                "%B %d, %Y",
                "%Y/%m/%d",
                "%m/%d/%Y",
                "%d/%m/%Y",
            ]),
            datetime_formats: strings(&[
                "%Y-%m-%dT%H:%M:%S",
                "%Y-%m-%dT%H:%M:%S%.f",
                "%Y-%m-%dT%H:%M",
                "%Y-%m-%d %H:%M:%S",
                "%Y-%m-%d %H:%M",
            ]),
            offset_datetime_formats: strings(&[
                "%Y-%m-%dT%H:%M:%S%:z",
                "%Y-%m-%dT%H:%M:%S%.f%:z",
                "%Y-%m-%dT%H:%M%:z",
                "%Y-%m-%dT%H:%M:%S%z",
            ]),
        }
    }
}

impl TypeGrammar {
    pub fn from_json_file(path: &Path) -> Result<Self, GrammarError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Compiled detector.
#[derive(Clone, Debug)]
pub struct TypeDetector {
    grammar: TypeGrammar,
    scheme_url: Regex,
    bare_url: Regex,
    number: Regex,
}

impl Default for TypeDetector {
    /// Compiled once per process; clones share the regexes.
    fn default() -> Self {
        static DEFAULT: std::sync::OnceLock<TypeDetector> = std::sync::OnceLock::new();
        DEFAULT
            .get_or_init(|| Self::new(TypeGrammar::default()).expect("built-in grammar compiles"))
            .clone()
    }
}

fn compile(pattern: String) -> Result<Regex, GrammarError> {
    Regex::new(&pattern).map_err(|source| GrammarError::Pattern { pattern, source })
}

impl TypeDetector {
    pub fn new(grammar: TypeGrammar) -> Result<Self, GrammarError> {
        let schemes = alternation(&grammar.url_schemes);
        let tlds = alternation(&grammar.known_tlds);
        let scheme_url = compile(format!(r"^(?i)(?:{schemes})://[^\s/?#]+\S*$"))?;
        // Scheme-less: either `www.` prefixed or followed by a path.
        let label = r"[a-z0-9](?:[a-z0-9-]*[a-z0-9])?";
        let bare_url = compile(format!(
            r"^(?i)(?:(?:{label}\.)+(?:{tlds})/\S*|www\.(?:{label}\.)+(?:{tlds})(?:/\S*)?)$"
        ))?;
        let number = compile(grammar.number_pattern.clone())?;
        Ok(Self {
            grammar,
            scheme_url,
            bare_url,
            number,
        })
    }

    pub fn grammar(&self) -> &TypeGrammar {
        &self.grammar
    }

    pub fn detect_cell(&self, cell: &str) -> PrimitiveType {
        let cell = cell.trim();
        if cell.is_empty() {
            PrimitiveType::String
        } else if self.is_url(cell) {
            PrimitiveType::Url
        } else if self.is_date(cell) {
            PrimitiveType::Date
        } else if self.is_number(cell) {
            PrimitiveType::Number
        } else {
            PrimitiveType::String
        }
    }

    pub fn is_url(&self, cell: &str) -> bool {
        self.scheme_url.is_match(cell) || self.bare_url.is_match(cell)
    }

    pub fn is_date(&self, cell: &str) -> bool {
        let g = &self.grammar;
        g.date_formats
            .iter()
            .any(|f| NaiveDate::parse_from_str(cell, f).is_ok())
            || g.datetime_formats
                .iter()
                .any(|f| NaiveDateTime::parse_from_str(cell, f).is_ok())
            || g.offset_datetime_formats
                .iter()
                .any(|f| DateTime::parse_from_str(cell, f).is_ok())
    }

    pub fn is_number(&self, cell: &str) -> bool {
        let payload = self.strip_affix(cell).trim();
        payload.bytes().any(|b| b.is_ascii_digit()) && self.number.is_match(payload)
    }

    /// Removes at most one currency / percent symbol from either end.
    fn strip_affix<'a>(&self, cell: &'a str) -> &'a str {
        for p in &self.grammar.number_prefixes {
            if let Some(rest) = cell.strip_prefix(p.as_str()) {
                return rest;
            }
        }
        for s in &self.grammar.number_suffixes {
            if let Some(rest) = cell.strip_suffix(s.as_str()) {
                return rest;
            }
        }
        cell
    }

    /// Column type under `mode`; all-empty columns are String.
    pub fn detect_column(
        &self,
        table: &Table,
        column_index: usize,
        mode: DetectionMode,
        sample_limit: usize,
    ) -> PrimitiveType {
        let mut cells = table
            .column(column_index)
            .filter(|c| !c.trim().is_empty())
            .take(sample_limit.max(1));
        match mode {
            DetectionMode::FirstCell => cells
                .next()
                .map_or(PrimitiveType::String, |c| self.detect_cell(c)),
            DetectionMode::Majority => majority(cells.map(|c| self.detect_cell(c))),
        }
    }
}

/// Mode of a type sequence. Ties go to a non-String type, and among tied
/// non-String types to the one seen first.
fn majority(types: impl Iterator<Item = PrimitiveType>) -> PrimitiveType {
    // (count, first position) per type
    let mut tally: [(usize, usize); 4] = [(0, usize::MAX); 4];
    for (pos, t) in types.enumerate() {
        let slot = &mut tally[t as usize];
        slot.0 += 1;
        slot.1 = slot.1.min(pos);
    }
    let best = tally.iter().map(|&(n, _)| n).max().unwrap_or(0);
    if best == 0 {
        return PrimitiveType::String;
    }
    PrimitiveType::ALL
        .into_iter()
        .filter(|&t| tally[t as usize].0 == best)
        .min_by_key(|&t| (t == PrimitiveType::String, tally[t as usize].1))
        .unwrap_or(PrimitiveType::String)
}

fn alternation(items: &[String]) -> String {
    items
        .iter()
        .map(|s| regex::escape(s))
        .collect::<Vec<_>>()
        .join("|")
}

#[cfg(test)]
mod tests {
    use super::*;
    use PrimitiveType::{Date, Number, Url};
    use proptest::prelude::*;
    const STRING: PrimitiveType = PrimitiveType::String;

    fn column(cells: &[&str]) -> Table {
        Table::new("t", 1, cells.iter().map(|c| vec![c.to_string()]).collect()).unwrap()
    }

    #[test]
    fn cell_examples() {
        let d = TypeDetector::default();
        assert_eq!(d.detect_cell("https://example.org/x"), Url);
        assert_eq!(d.detect_cell("2021-03-04"), Date);
        assert_eq!(d.detect_cell("1,234.50"), Number);
        assert_eq!(d.detect_cell("New York"), STRING);
        assert_eq!(d.detect_cell(""), STRING);
        assert_eq!(d.detect_cell("   "), STRING);
    }

    #[test]
    fn accepted_number_forms() {
        let d = TypeDetector::default();
        let signs = ["", "+", "-"];
        let ints = ["0", "7", "1234", "1,234", "12,345,678", "1\u{2009}234", "999"];
        let fracs = ["", ".5", ".50"];
        let exps = ["", "e3", "E-2", "e+10"];
        let mut checked = 0;
        for s in signs {
            for i in ints {
                for f in fracs {
                    for e in exps {
                        let payload = format!("{s}{i}{f}{e}");
                        for wrapped in [
                            payload.clone(),
                            format!("${payload}"),
                            format!("€{payload}"),
                            format!("{payload}%"),
                            format!("{payload} €"),
                        ] {
                            // 4-digit integers still read as numbers, never dates
                            assert_eq!(d.detect_cell(&wrapped), Number, "{wrapped:?}");
                            checked += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(checked, 3 * 7 * 3 * 4 * 5);
        assert_eq!(d.detect_cell(".75"), Number);
    }

    #[test]
    fn rejected_number_forms() {
        let d = TypeDetector::default();
        for cell in [
            "1,23",
            "1,,234",
            "12,34.5",
            "$",
            "%",
            "1.2.3",
            "--5",
            "$5%",
            "$$5",
            "1e",
            "e5",
            "12a",
            "1 234",
            "1,234\u{2009}567",
        ] {
            assert_ne!(d.detect_cell(cell), Number, "{cell:?}");
        }
    }

    #[test]
    fn years_are_numbers() {
        let d = TypeDetector::default();
        for y in ["1000", "1999", "2021", "2999"] {
            assert_eq!(d.detect_cell(y), Number);
        }
    }

    #[test]
    fn date_formats() {
        let d = TypeDetector::default();
        for cell in [
            "2021-03-04",
            "2021-03-04T10:15:00",
            "2021-03-04T10:15:00+02:00",
            "2021-03-04 10:15",
            "4 March 2021",
            "4 Mar 2021",
            "March 4, 2021",
            "2021/03/04",
            "03/04/2021",
            "25/12/2021",
        ] {
            assert_eq!(d.detect_cell(cell), Date, "{cell:?}");
        }
        for cell in ["2021-13-04", "32/12/2021", "March 2021", "2021"] {
            assert_ne!(d.detect_cell(cell), Date, "{cell:?}");
        }
    }

    #[test]
    fn url_forms() {
        let d = TypeDetector::default();
        for cell in [
            "http://a.b",
            "HTTPS://Example.org/path?q=1",
            "ftp://files.example.net/x.zip",
            "example.org/about",
            "www.example.com",
            "www.shop.co.uk/item/12",
            "https://example.org/2021/03/04",
        ] {
            assert_eq!(d.detect_cell(cell), Url, "{cell:?}");
        }
        for cell in ["example.org", "Node.js", "mailto:x@y.org", "a b.com/x", "http://"] {
            assert_ne!(d.detect_cell(cell), Url, "{cell:?}");
        }
    }

    #[test]
    fn column_modes() {
        let d = TypeDetector::default();
        let t = column(&["2020-01-01", "2020-02-02", "oops"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), Date);
        let t = column(&["oops", "2020-01-01"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::FirstCell, 500), STRING);
        let t = column(&[]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), STRING);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::FirstCell, 500), STRING);
        let t = column(&["", "  ", "42"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::FirstCell, 500), Number);
    }

    #[test]
    fn majority_ties() {
        let d = TypeDetector::default();
        let t = column(&["abc", "12"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), Number);
        let t = column(&["x", "2020-01-01", "12", "y"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), STRING);
        let t = column(&["12", "2020-01-01", "x"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), Number);
        let t = column(&["2020-01-01", "12"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), Date);
    }

    #[test]
    fn majority_respects_sample_limit() {
        let d = TypeDetector::default();
        let t = column(&["a", "b", "1", "2", "3"]);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 2), STRING);
        assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 5), Number);
    }

    #[test]
    fn grammar_round_trips_through_json() {
        let g = TypeGrammar::default();
        let json = serde_json::to_string(&g).unwrap();
        let back: TypeGrammar = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
        // partial files fall back to defaults
        let partial: TypeGrammar = serde_json::from_str(r#"{"url_schemes":["gopher"]}"#).unwrap();
        let d = TypeDetector::new(partial).unwrap();
        assert_eq!(d.detect_cell("gopher://x.org"), Url);
        assert_eq!(d.detect_cell("http://x.org"), STRING);
    }

    #[test]
    fn bad_grammar_pattern_is_an_error() {
        let g = TypeGrammar {
            number_pattern: "(".into(),
            ..TypeGrammar::default()
        };
        assert!(matches!(TypeDetector::new(g), Err(GrammarError::Pattern { .. })));
    }

    proptest! {
        #[test]
        fn detect_cell_is_total(s in any::<String>()) {
            let d = TypeDetector::default();
            let a = d.detect_cell(&s);
            prop_assert_eq!(a, d.detect_cell(&s));
        }

        #[test]
        fn first_cell_matches_cell_detection(cells in prop::collection::vec("[a-z0-9:/.,$%-]{1,12}", 1..6)) {
            let d = TypeDetector::default();
            let refs: Vec<&str> = cells.iter().map(String::as_str).collect();
            let t = column(&refs);
            prop_assume!(!cells[0].trim().is_empty());
            prop_assert_eq!(d.detect_column(&t, 0, DetectionMode::FirstCell, 500), d.detect_cell(&cells[0]));
        }

        #[test]
        fn majority_of_identical_cells(cell in "[a-z0-9:/.,$%-]{1,12}", n in 1usize..8) {
            let d = TypeDetector::default();
            let t = column(&vec![cell.as_str(); n]);
            prop_assert_eq!(d.detect_column(&t, 0, DetectionMode::Majority, 500), d.detect_cell(&cell));
        }
    }
}
