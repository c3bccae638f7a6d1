//! Prompt rendering.
//!
//! Wording lives in a template file (see `templates/default_prompt.txt`);
//! this module only assembles it. The role, worked example and
//! chain-of-thought parts can be switched off independently, and switching
//! one off removes exactly its own lines.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduce::CandidateSet;
use crate::table::{DomainLabel, Table};

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/default_prompt.txt");
pub const DEFAULT_EXCERPT_ROWS: usize = 5;
/// Longer cells are cut in the excerpt.
pub const MAX_CELL_CHARS: usize = 80;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("cannot render a prompt without candidates")]
    EmptyCandidates,
    #[error("retry prompt needs a non-empty previous output")]
    EmptyPreviousOutput,
    #[error("topic prompt needs at least one domain")]
    EmptyDomains,
    #[error("bad prompt template: {0}")]
    Template(String),
    #[error("unknown prompt part `{0}` (expected role, example, cot)")]
    UnknownPart(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSection {
    Role,
    Example,
    Cot,
}

impl PromptSection {
    pub const ALL: [PromptSection; 3] = [Self::Role, Self::Example, Self::Cot];

    fn key(self) -> &'static str {
        match self {
            Self::Role => "role",
            Self::Example => "example",
            Self::Cot => "cot",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PromptParts {
    pub include_role: bool,
    pub include_example: bool,
    pub include_cot: bool,
}

impl Default for PromptParts {
    fn default() -> Self {
        Self::all()
    }
}

impl PromptParts {
    pub fn all() -> Self {
        Self {
            include_role: true,
            include_example: true,
            include_cot: true,
        }
    }

    pub fn none() -> Self {
        Self {
            include_role: false,
            include_example: false,
            include_cot: false,
        }
    }

    /// The prompt-ablation rows, labeled by what they leave out:
    /// `ALL`, `COT`, `Role`, `E`, `E+COT` and `-` (nothing left out).
    pub fn ablation_rows() -> [(&'static str, PromptParts); 6] {
        let all = Self::all();
        [
            ("ALL", Self::none()),
            (
                "COT",
                Self {
                    include_cot: false,
                    ..all
                },
            ),
            (
                "Role",
                Self {
                    include_role: false,
                    ..all
                },
            ),
            (
                "E",
                Self {
                    include_example: false,
                    ..all
                },
            ),
            (
                "E+COT",
                Self {
                    include_example: false,
                    include_cot: false,
                    ..all
                },
            ),
            ("-", all),
        ]
    }

    pub fn includes(&self, section: PromptSection) -> bool {
        match section {
            PromptSection::Role => self.include_role,
            PromptSection::Example => self.include_example,
            PromptSection::Cot => self.include_cot,
        }
    }

    /// `role+example+cot`, or `none`.
    pub fn name(&self) -> String {
        let on: Vec<&str> = PromptSection::ALL
            .into_iter()
            .filter(|s| self.includes(*s))
            .map(PromptSection::key)
            .collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

impl fmt::Display for PromptParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Accepts `role,example,cot` style lists (`,` or `+` separated), `all` and `none`.
impl FromStr for PromptParts {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "all" => return Ok(Self::all()),
            "none" | "" => return Ok(Self::none()),
            _ => {}
        }
        let mut parts = Self::none();
        for item in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match item {
                "role" => parts.include_role = true,
                "example" | "e" => parts.include_example = true,
                "cot" => parts.include_cot = true,
                other => return Err(PromptError::UnknownPart(other.to_string())),
            }
        }
        Ok(parts)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub candidate_count: usize,
    pub token_estimate: usize,
    /// Byte ranges of the optional parts present in `text`.
    pub spans: BTreeMap<PromptSection, Range<usize>>,
}

impl RenderedPrompt {
    fn new(text: String, candidate_count: usize, spans: BTreeMap<PromptSection, Range<usize>>) -> Self {
        let token_estimate = text.chars().count().div_ceil(4);
        Self {
            text,
            candidate_count,
            token_estimate,
            spans,
        }
    }
}

/// Parsed template file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    parts: BTreeMap<PromptSection, String>,
    main: String,
    retry: String,
    topic: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template parses")
    }
}

impl PromptTemplate {
    pub fn from_path(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed
                .strip_prefix("===")
                .and_then(|rest| rest.strip_suffix("==="))
            {
                let name = name.trim().to_string();
                if sections.contains_key(&name) {
                    return Err(PromptError::Template(format!("duplicate section `{name}`")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
                continue;
            }
            match &current {
                Some(name) => sections.get_mut(name).expect("section exists").push(line),
                None if trimmed.is_empty() || trimmed.starts_with('#') => {}
                None => {
                    return Err(PromptError::Template(format!(
                        "text before the first section: `{trimmed}`"
                    )));
                }
            }
        }
        let mut body = |name: &str| -> Option<String> {
            sections.remove(name).map(|lines| {
                let mut lines = lines;
                while lines.first().is_some_and(|l| l.trim().is_empty()) {
                    lines.remove(0);
                }
                while lines.last().is_some_and(|l| l.trim().is_empty()) {
                    lines.pop();
                }
                lines.join("\n")
            })
        };
        let mut parts = BTreeMap::new();
        for s in PromptSection::ALL {
            parts.insert(s, body(s.key()).unwrap_or_default());
        }
        let required = |name: &str, b: Option<String>| {
            b.ok_or_else(|| PromptError::Template(format!("missing `{name}` section")))
        };
        let main = required("main", body("main"))?;
        let retry = required("retry", body("retry"))?;
        let topic = required("topic", body("topic"))?;
        if let Some(extra) = sections.keys().next() {
            return Err(PromptError::Template(format!("unknown section `{extra}`")));
        }
        for (name, text, needed) in [
            ("main", &main, &["{table_excerpt}", "{candidates}"][..]),
            ("retry", &retry, &["{previous_output}", "{candidates}"][..]),
            ("topic", &topic, &["{table_excerpt}", "{domains}"][..]),
        ] {
            for p in needed {
                if !text.contains(p) {
                    return Err(PromptError::Template(format!("`{name}` lacks {p}")));
                }
            }
        }
        Ok(Self {
            parts,
            main,
            retry,
            topic,
        })
    }

    /// The configured text of an optional part.
    pub fn part_text(&self, section: PromptSection) -> &str {
        &self.parts[&section]
    }

    pub fn render_annotation_prompt(
        &self,
        table: &Table,
        column_index: usize,
        candidates: &CandidateSet,
        parts: PromptParts,
        excerpt_rows: usize,
    ) -> Result<RenderedPrompt, PromptError> {
        if candidates.is_empty() {
            return Err(PromptError::EmptyCandidates);
        }
        let excerpt = table_excerpt(table, Some(column_index), excerpt_rows.max(1));
        let marker = format!(
            "The column of interest is column {column_index}, marked >>{column_index}<< in the first line of the table."
        );
        let list = bullet_list(candidates.relations().iter().map(|r| r.as_str()));

        let mut out = String::new();
        let mut spans = BTreeMap::new();
        for line in self.main.lines() {
            if let Some(section) = part_placeholder(line) {
                let text = self.part_text(section);
                if parts.includes(section) && !text.is_empty() {
                    let start = out.len();
                    out.push_str(text);
                    out.push_str("\n\n");
                    spans.insert(section, start..out.len());
                }
                continue;
            }
            let line = line
                .replace("{table_excerpt}", &excerpt)
                .replace("{column_marker}", &marker)
                .replace("{candidates}", &list);
            out.push_str(&line);
            out.push('\n');
        }
        Ok(RenderedPrompt::new(out, candidates.len(), spans))
    }

    pub fn render_retry_prompt(
        &self,
        previous_output: &str,
        candidates: &CandidateSet,
    ) -> Result<RenderedPrompt, PromptError> {
        if candidates.is_empty() {
            return Err(PromptError::EmptyCandidates);
        }
        self.render_retry_with_options(previous_output, candidates.relations().iter().map(|r| r.as_str()))
    }

    /// Retry prompt over any closed option list (relations or domains).
    pub fn render_retry_with_options<'a>(
        &self,
        previous_output: &str,
        options: impl IntoIterator<Item = &'a str>,
    ) -> Result<RenderedPrompt, PromptError> {
        if previous_output.trim().is_empty() {
            return Err(PromptError::EmptyPreviousOutput);
        }
        let options: Vec<&str> = options.into_iter().collect();
        if options.is_empty() {
            return Err(PromptError::EmptyCandidates);
        }
        let text = self
            .retry
            .replace("{previous_output}", previous_output.trim())
            .replace("{candidates}", &bullet_list(options.iter().copied()));
        Ok(RenderedPrompt::new(text + "\n", options.len(), BTreeMap::new()))
    }

    pub fn render_topic_prompt<'a>(
        &self,
        table: &Table,
        domains: impl IntoIterator<Item = &'a DomainLabel>,
        excerpt_rows: usize,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut domains: Vec<&str> = domains.into_iter().map(DomainLabel::as_str).collect();
        domains.sort_unstable();
        domains.dedup();
        if domains.is_empty() {
            return Err(PromptError::EmptyDomains);
        }
        let text = self
            .topic
            .replace(
                "{table_excerpt}",
                &table_excerpt(table, None, excerpt_rows.max(1)),
            )
            .replace("{domains}", &bullet_list(domains.iter().copied()));
        Ok(RenderedPrompt::new(text + "\n", domains.len(), BTreeMap::new()))
    }
}

fn part_placeholder(line: &str) -> Option<PromptSection> {
    let inner = line.trim().strip_prefix('{')?.strip_suffix('}')?;
    PromptSection::ALL.into_iter().find(|s| s.key() == inner)
}

fn bullet_list<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

/// Pipe-delimited grid of the first `rows` rows; the header line holds
/// column indices, with the target written `>>i<<`.
pub fn table_excerpt(table: &Table, target: Option<usize>, rows: usize) -> String {
    let header: Vec<String> = (0..table.column_count())
        .map(|i| {
            if Some(i) == target {
                format!(">>{i}<<")
            } else {
                i.to_string()
            }
        })
        .collect();
    let mut lines = vec![grid_line(header.iter().map(String::as_str))];
    for row in table.rows().iter().take(rows) {
        let cells: Vec<String> = row.iter().map(|c| clean_cell(c)).collect();
        lines.push(grid_line(cells.iter().map(String::as_str)));
    }
    lines.join("\n")
}

fn grid_line<'a>(cells: impl Iterator<Item = &'a str>) -> String {
    let mut line = String::from("|");
    for c in cells {
        line.push(' ');
        line.push_str(c);
        line.push_str(" |");
    }
    line
}

fn clean_cell(cell: &str) -> String {
    let flat: String = cell
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect::<String>()
        .replace('|', "\\|");
    let flat = flat.trim();
    if flat.chars().count() > MAX_CELL_CHARS {
        let cut: String = flat.chars().take(MAX_CELL_CHARS).collect();
        format!("{cut}…")
    } else {
        flat.to_string()
    }
}
