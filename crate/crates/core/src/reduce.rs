//! Per-column candidate lists.
//!
//! Filters apply in the order domain, range, co-appearance; relations
//! already predicted in the same table are removed last. An empty result
//! undoes filters from the most recent backwards until something is left.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::StatsModel;
use crate::table::{DomainLabel, RelationLabel};
use crate::types::PrimitiveType;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReduceError {
    #[error("approach needs a stats model")]
    MissingStats,
    #[error("domain filter is on but the table has no domain")]
    MissingDomain,
    #[error("precision-gated co-appearance needs a precision gate")]
    MissingGate,
    #[error("unknown approach `{0}` (expected base, d, r, c, rd, rdc or rdc_p)")]
    UnknownApproach(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoAppearanceMode {
    #[default]
    Off,
    /// Every prior prediction anchors.
    Always,
    /// Only prior predictions inside the precision gate anchor.
    PrecisionGated,
}

/// The named variants of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "d")]
    Domain,
    #[serde(rename = "r")]
    Range,
    #[serde(rename = "c")]
    CoAppearance,
    #[serde(rename = "rd")]
    RangeDomain,
    #[serde(rename = "rdc")]
    RangeDomainCo,
    #[serde(rename = "rdc_p")]
    RangeDomainCoGated,
}

impl Approach {
    pub const ALL: [Approach; 7] = [
        Self::Base,
        Self::Domain,
        Self::Range,
        Self::CoAppearance,
        Self::RangeDomain,
        Self::RangeDomainCo,
        Self::RangeDomainCoGated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::Domain => "d",
            Self::Range => "r",
            Self::CoAppearance => "c",
            Self::RangeDomain => "rd",
            Self::RangeDomainCo => "rdc",
            Self::RangeDomainCoGated => "rdc_p",
        }
    }

    /// `gate` is only kept for the gated variant.
    pub fn config(self, gate: Option<BTreeSet<RelationLabel>>) -> ApproachConfig {
        let (use_domain, use_range, coappearance) = match self {
            Self::Base => (false, false, CoAppearanceMode::Off),
            Self::Domain => (true, false, CoAppearanceMode::Off),
            Self::Range => (false, true, CoAppearanceMode::Off),
            Self::CoAppearance => (false, false, CoAppearanceMode::Always),
            Self::RangeDomain => (true, true, CoAppearanceMode::Off),
            Self::RangeDomainCo => (true, true, CoAppearanceMode::Always),
            Self::RangeDomainCoGated => (true, true, CoAppearanceMode::PrecisionGated),
        };
        ApproachConfig {
            use_domain,
            use_range,
            coappearance,
            precision_gate: if coappearance == CoAppearanceMode::PrecisionGated {
                gate
            } else {
                None
            },
            fallback: true,
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = ReduceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| ReduceError::UnknownApproach(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproachConfig {
    pub use_domain: bool,
    pub use_range: bool,
    pub coappearance: CoAppearanceMode,
    pub precision_gate: Option<BTreeSet<RelationLabel>>,
    /// Undo filters when they leave nothing. Off only for property checks.
    pub fallback: bool,
}

impl Default for ApproachConfig {
    fn default() -> Self {
        Approach::Base.config(None)
    }
}

impl ApproachConfig {
    pub fn validate(&self) -> Result<(), ReduceError> {
        if self.coappearance == CoAppearanceMode::PrecisionGated && self.precision_gate.is_none() {
            return Err(ReduceError::MissingGate);
        }
        Ok(())
    }

    pub fn uses_stats(&self) -> bool {
        self.use_domain || self.use_range || self.coappearance != CoAppearanceMode::Off
    }

    /// Whether the table topic must be known before reducing.
    pub fn needs_domain(&self) -> bool {
        self.use_domain || self.coappearance != CoAppearanceMode::Off
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterTag {
    Domain,
    Range,
    CoAppearance,
    /// The domain was missing from the domain dictionary; its filter was skipped.
    UnknownDomain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    relations: Vec<RelationLabel>,
    /// Filters in effect for `relations`, plus warning tags.
    pub applied_filters: Vec<FilterTag>,
    /// Filters that were applied and then undone to avoid an empty list.
    pub undone_filters: Vec<FilterTag>,
    pub fallback_used: bool,
}

impl CandidateSet {
    /// Sorted, deduplicated list without filter history.
    pub fn from_relations(relations: impl IntoIterator<Item = RelationLabel>) -> Self {
        let set: BTreeSet<RelationLabel> = relations.into_iter().collect();
        Self {
            relations: set.into_iter().collect(),
            applied_filters: Vec::new(),
            undone_filters: Vec::new(),
            fallback_used: false,
        }
    }

    pub fn relations(&self) -> &[RelationLabel] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn contains(&self, relation: &RelationLabel) -> bool {
        self.relations.binary_search(relation).is_ok()
    }

    pub fn first(&self) -> Option<&RelationLabel> {
        self.relations.first()
    }
}

/// Everything one reduction looks at.
#[derive(Clone, Copy, Debug)]
pub struct ReduceRequest<'a> {
    pub full_vocab: &'a BTreeSet<RelationLabel>,
    pub domain: Option<&'a DomainLabel>,
    pub column_type: PrimitiveType,
    pub already_predicted: &'a BTreeSet<RelationLabel>,
    /// Prior predictions in the table; the gate is applied here.
    pub anchor_predictions: &'a BTreeSet<RelationLabel>,
    pub stats: Option<&'a StatsModel>,
    pub config: &'a ApproachConfig,
}

pub fn reduce(req: &ReduceRequest<'_>) -> Result<CandidateSet, ReduceError> {
    let config = req.config;
    config.validate()?;
    let stats = match (config.uses_stats(), req.stats) {
        (true, None) => return Err(ReduceError::MissingStats),
        (_, s) => s,
    };

    let mut warnings = Vec::new();
    // (tag, candidates after this filter)
    let mut stages: Vec<(FilterTag, BTreeSet<RelationLabel>)> = Vec::new();
    let current = |stages: &Vec<(FilterTag, BTreeSet<RelationLabel>)>| -> BTreeSet<RelationLabel> {
        stages
            .last()
            .map_or_else(|| req.full_vocab.clone(), |(_, s)| s.clone())
    };

    if config.use_domain {
        let stats = stats.ok_or(ReduceError::MissingStats)?;
        let domain = req.domain.ok_or(ReduceError::MissingDomain)?;
        match stats.domain_dict.get(domain) {
            Some(rels) => {
                let next = current(&stages).intersection(rels).cloned().collect();
                stages.push((FilterTag::Domain, next));
            }
            None => {
                log::warn!("domain `{domain}` is not in the domain dictionary; skipping its filter");
                warnings.push(FilterTag::UnknownDomain);
            }
        }
    }

    if config.use_range {
        let stats = stats.ok_or(ReduceError::MissingStats)?;
        let empty = BTreeSet::new();
        let rels = stats.range_dict.filtered(req.column_type).unwrap_or(&empty);
        let next = current(&stages).intersection(rels).cloned().collect();
        stages.push((FilterTag::Range, next));
    }

    if config.coappearance != CoAppearanceMode::Off {
        let stats = stats.ok_or(ReduceError::MissingStats)?;
        let anchors: Vec<&RelationLabel> = match config.coappearance {
            CoAppearanceMode::PrecisionGated => {
                let gate = config.precision_gate.as_ref().ok_or(ReduceError::MissingGate)?;
                req.anchor_predictions
                    .iter()
                    .filter(|a| gate.contains(*a))
                    .collect()
            }
            _ => req.anchor_predictions.iter().collect(),
        };
        if !anchors.is_empty() {
            let mut allowed = BTreeSet::new();
            for a in anchors {
                match req.domain {
                    Some(d) => {
                        if let Some(set) = stats.co_dict.get(d, a) {
                            allowed.extend(set.iter().cloned());
                        }
                    }
                    None => allowed.extend(stats.co_dict.get_any_domain(a)),
                }
            }
            let next = current(&stages).intersection(&allowed).cloned().collect();
            stages.push((FilterTag::CoAppearance, next));
        }
    }

    let without_predicted =
        |set: BTreeSet<RelationLabel>| -> BTreeSet<RelationLabel> { &set - req.already_predicted };
    let mut result = without_predicted(current(&stages));
    let mut undone = Vec::new();
    if config.fallback {
        while result.is_empty() {
            let Some((tag, _)) = stages.pop() else { break };
            undone.push(tag);
            result = without_predicted(current(&stages));
        }
    }

    let mut applied_filters: Vec<FilterTag> = stages.iter().map(|(t, _)| *t).collect();
    applied_filters.extend(warnings);
    Ok(CandidateSet {
        relations: result.into_iter().collect(),
        applied_filters,
        fallback_used: !undone.is_empty(),
        undone_filters: undone,
    })
}
