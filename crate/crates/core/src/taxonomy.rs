//! arXiv subcategory tags and their grouping into broad subject areas.
//!
//! The built-in table covers the mathematics archive. A corpus from another
//! archive can supply its own table through [`Taxonomy::from_toml_str`], which
//! uses the same nine area names.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An arXiv subcategory symbol such as `math.AG`, or the `Unknown` sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CategoryTag {
    Tag(String),
    Unknown,
}

impl CategoryTag {
    pub const UNKNOWN_LITERAL: &'static str = "Unknown";

    /// Builds a tag from free text. Blank input becomes [`CategoryTag::Unknown`].
    pub fn new(value: impl AsRef<str>) -> Self {
        let trimmed = value.as_ref().trim();
        if trimmed.is_empty() || trimmed == Self::UNKNOWN_LITERAL {
            CategoryTag::Unknown
        } else {
            CategoryTag::Tag(trimmed.to_string())
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            CategoryTag::Tag(v) => v,
            CategoryTag::Unknown => Self::UNKNOWN_LITERAL,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, CategoryTag::Unknown)
    }

    /// Lookup key: trimmed, lowercase.
    fn key(&self) -> Option<String> {
        match self {
            CategoryTag::Tag(v) => Some(v.trim().to_ascii_lowercase()),
            CategoryTag::Unknown => None,
        }
    }
}

impl fmt::Display for CategoryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CategoryTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CategoryTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(CategoryTag::new(s))
    }
}

/// The eight reporting areas plus `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubjectArea {
    Geometry,
    Algebra,
    Analysis,
    Topology,
    Combinatorics,
    NumberTheory,
    ProbabilityStatistics,
    LogicSetTheory,
    Other,
}

impl SubjectArea {
    /// All areas in report order, `Other` last.
    pub const ALL: [SubjectArea; 9] = [
        SubjectArea::Geometry,
        SubjectArea::Algebra,
        SubjectArea::Analysis,
        SubjectArea::Topology,
        SubjectArea::Combinatorics,
        SubjectArea::NumberTheory,
        SubjectArea::ProbabilityStatistics,
        SubjectArea::LogicSetTheory,
        SubjectArea::Other,
    ];

    /// The eight named areas, without `Other`.
    pub const NAMED: [SubjectArea; 8] = [
        SubjectArea::Geometry,
        SubjectArea::Algebra,
        SubjectArea::Analysis,
        SubjectArea::Topology,
        SubjectArea::Combinatorics,
        SubjectArea::NumberTheory,
        SubjectArea::ProbabilityStatistics,
        SubjectArea::LogicSetTheory,
    ];

    /// Identifier used in config files and CSV output.
    pub fn name(self) -> &'static str {
        match self {
            SubjectArea::Geometry => "Geometry",
            SubjectArea::Algebra => "Algebra",
            SubjectArea::Analysis => "Analysis",
            SubjectArea::Topology => "Topology",
            SubjectArea::Combinatorics => "Combinatorics",
            SubjectArea::NumberTheory => "NumberTheory",
            SubjectArea::ProbabilityStatistics => "ProbabilityStatistics",
            SubjectArea::LogicSetTheory => "LogicSetTheory",
            SubjectArea::Other => "Other",
        }
    }

    /// Human-readable label for reports.
    pub fn label(self) -> &'static str {
        match self {
            SubjectArea::Geometry => "Geometry",
            SubjectArea::Algebra => "Algebra",
            SubjectArea::Analysis => "Analysis",
            SubjectArea::Topology => "Topology",
            SubjectArea::Combinatorics => "Combinatorics",
            SubjectArea::NumberTheory => "Number theory",
            SubjectArea::ProbabilityStatistics => "Probability and statistics",
            SubjectArea::LogicSetTheory => "Logic and set theory",
            SubjectArea::Other => "Other",
        }
    }
}

impl fmt::Display for SubjectArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubjectArea {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SubjectArea::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown subject area `{s}`")))
    }
}

/// The built-in mathematics grouping.
pub const DEFAULT_GROUPS: [(SubjectArea, &[&str]); 8] = [
    (
        SubjectArea::Geometry,
        &["math.AG", "math.DG", "math.MG", "math.SG"],
    ),
    (
        SubjectArea::Algebra,
        &[
            "math.AC", "math.CT", "math.GR", "math.OA", "math.QA", "math.RA", "math.RT",
        ],
    ),
    (
        SubjectArea::Analysis,
        &[
            "math.AP", "math.CA", "math.CV", "math.DS", "math.FA", "math.NA",
        ],
    ),
    (SubjectArea::Topology, &["math.AT", "math.GN", "math.GT"]),
    (SubjectArea::Combinatorics, &["math.CO"]),
    (SubjectArea::NumberTheory, &["math.NT"]),
    (SubjectArea::ProbabilityStatistics, &["math.PR", "math.ST"]),
    (SubjectArea::LogicSetTheory, &["math.LO"]),
];

/// Tag-to-area lookup table. Anything not in the table is `Other`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    table: HashMap<String, SubjectArea>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let mut table = HashMap::new();
        for (area, tags) in DEFAULT_GROUPS {
            for tag in tags {
                table.insert(tag.to_ascii_lowercase(), area);
            }
        }
        Taxonomy { table }
    }
}

#[derive(Deserialize)]
struct TaxonomyFile {
    areas: BTreeMap<String, Vec<String>>,
}

impl Taxonomy {
    /// Parses an override table:
    ///
    /// ```toml
    /// [areas]
    /// Geometry = ["cs.CG"]
    /// Algebra = ["cs.SC"]
    /// ```
    ///
    /// A tag listed under two areas is rejected, as is an entry under `Other`
    /// (everything unlisted already lands there).
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let file: TaxonomyFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("taxonomy table: {e}")))?;
        let mut table = HashMap::new();
        for (area_name, tags) in file.areas {
            let area: SubjectArea = area_name.parse()?;
            if area == SubjectArea::Other {
                return Err(Error::Config(
                    "taxonomy table: `Other` is implicit and cannot list tags".into(),
                ));
            }
            for tag in tags {
                let key = tag.trim().to_ascii_lowercase();
                if key.is_empty() {
                    continue;
                }
                if let Some(prev) = table.insert(key, area) {
                    if prev != area {
                        return Err(Error::Config(format!(
                            "taxonomy table: tag `{tag}` listed under both {prev} and {area}"
                        )));
                    }
                }
            }
        }
        Ok(Taxonomy { table })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&src)
    }

    pub fn classify(&self, tag: &CategoryTag) -> SubjectArea {
        tag.key()
            .and_then(|k| self.table.get(&k).copied())
            .unwrap_or(SubjectArea::Other)
    }
}

/// Classifies a tag against the built-in mathematics table.
pub fn classify_tag(tag: &CategoryTag) -> SubjectArea {
    thread_local! {
        static DEFAULT: Taxonomy = Taxonomy::default();
    }
    DEFAULT.with(|t| t.classify(tag))
}
