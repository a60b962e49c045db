//! Subject-area distributions, richness coefficients and prevalence estimates.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::records::Dataset;
use crate::taxonomy::{CategoryTag, SubjectArea, Taxonomy};

pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AreaCount {
    pub count: usize,
    pub share: f64,
}

/// Counts and shares for every area, `Other` included. With a zero total
/// every share is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionTable {
    pub rows: BTreeMap<SubjectArea, AreaCount>,
    pub total: usize,
}

impl DistributionTable {
    pub fn from_counts(counts: impl IntoIterator<Item = (SubjectArea, usize)>) -> Self {
        let mut tally: BTreeMap<SubjectArea, usize> =
            SubjectArea::ALL.iter().map(|a| (*a, 0)).collect();
        for (area, n) in counts {
            *tally.entry(area).or_default() += n;
        }
        let total: usize = tally.values().sum();
        let rows = tally
            .into_iter()
            .map(|(area, count)| {
                let share = if total == 0 {
                    0.0
                } else {
                    count as f64 / total as f64
                };
                (area, AreaCount { count, share })
            })
            .collect();
        DistributionTable { rows, total }
    }

    fn tally<'a>(
        tags: impl IntoIterator<Item = Option<&'a CategoryTag>>,
        taxonomy: &Taxonomy,
    ) -> Self {
        let unknown = CategoryTag::Unknown;
        Self::from_counts(
            tags.into_iter()
                .map(|t| (taxonomy.classify(t.unwrap_or(&unknown)), 1)),
        )
    }

    pub fn count(&self, area: SubjectArea) -> usize {
        self.rows.get(&area).map_or(0, |r| r.count)
    }

    pub fn share(&self, area: SubjectArea) -> f64 {
        self.rows.get(&area).map_or(0.0, |r| r.share)
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Tally of the manifest's documents by area.
pub fn corpus_distribution(
    manifest: &CorpusManifest,
    taxonomy: &Taxonomy,
) -> Result<DistributionTable> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(DistributionTable::tally(
        manifest.documents().iter().map(|d| d.category_tag.as_ref()),
        taxonomy,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetDistribution {
    pub table: DistributionTable,
    /// Source ids that match no manifest document, sorted. Excluded from the table.
    pub unresolved: Vec<String>,
}

/// Tally of distinct contributing source papers by area. A paper with many
/// records counts once.
pub fn dataset_distribution(
    ds: &Dataset,
    manifest: &CorpusManifest,
    taxonomy: &Taxonomy,
) -> DatasetDistribution {
    let mut contributors = HashSet::new();
    let mut unresolved = HashSet::new();
    for r in &ds.records {
        match manifest.resolve(&r.source_doc_id) {
            Some(doc) => {
                contributors.insert(doc.doc_id.as_str());
            }
            None => {
                unresolved.insert(r.source_doc_id.clone());
            }
        }
    }
    let table = DistributionTable::tally(
        contributors
            .iter()
            .map(|id| manifest.get(id).and_then(|d| d.category_tag.as_ref())),
        taxonomy,
    );
    let mut unresolved: Vec<String> = unresolved.into_iter().collect();
    unresolved.sort();
    DatasetDistribution { table, unresolved }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RichnessRow {
    pub area: SubjectArea,
    pub corpus_count: usize,
    pub corpus_share: f64,
    pub dataset_count: usize,
    pub dataset_share: f64,
    /// `dataset_share / corpus_share`; `None` when the corpus share is zero or
    /// the dataset is empty.
    pub coefficient: Option<f64>,
}

impl RichnessRow {
    pub fn from_shares(area: SubjectArea, corpus_share: f64, dataset_share: f64) -> Self {
        RichnessRow {
            area,
            corpus_count: 0,
            corpus_share,
            dataset_count: 0,
            dataset_share,
            coefficient: (corpus_share > 0.0).then(|| dataset_share / corpus_share),
        }
    }

    /// Coefficient at two decimals, or `-` when undefined.
    pub fn coefficient_display(&self) -> String {
        self.coefficient
            .map_or_else(|| "-".into(), |c| format!("{c:.2}"))
    }
}

fn row(area: SubjectArea, corpus: &DistributionTable, dataset: &DistributionTable) -> RichnessRow {
    let c = corpus.share(area);
    let d = dataset.share(area);
    RichnessRow {
        area,
        corpus_count: corpus.count(area),
        corpus_share: c,
        dataset_count: dataset.count(area),
        dataset_share: d,
        coefficient: (c > 0.0 && !dataset.is_empty()).then(|| d / c),
    }
}

/// One row per named area, in report order. `Other` is left out.
pub fn richness_table(corpus: &DistributionTable, dataset: &DistributionTable) -> Vec<RichnessRow> {
    SubjectArea::NAMED
        .iter()
        .map(|a| row(*a, corpus, dataset))
        .collect()
}

/// Shares of contributing papers judged high-quality, borderline and low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierFractions {
    pub high: f64,
    pub borderline: f64,
    pub low: f64,
}

impl Default for TierFractions {
    fn default() -> Self {
        TierFractions {
            high: 0.20,
            borderline: 0.60,
            low: 0.20,
        }
    }
}

impl TierFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.high, self.borderline, self.low];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::InvalidInput(format!(
                "tier fractions must lie in [0, 1]: {self}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "tier fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for TierFractions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "high {:.2}, borderline {:.2}, low {:.2}",
            self.high, self.borderline, self.low
        )
    }
}

impl FromStr for TierFractions {
    type Err = Error;

    /// Parses `high,borderline,low`, e.g. `0.2,0.6,0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("tiers `{s}`: {e}")))?;
        let [high, borderline, low] = parts[..] else {
            return Err(Error::InvalidInput(format!(
                "tiers `{s}`: expected three values"
            )));
        };
        let t = TierFractions {
            high,
            borderline,
            low,
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrevalenceEstimate {
    pub contributing_papers: usize,
    pub total_papers: usize,
    pub tier_fractions: TierFractions,
    pub clear_rate: f64,
    pub borderline_or_better_rate: f64,
}

impl PrevalenceEstimate {
    pub fn clear_papers(&self) -> f64 {
        self.contributing_papers as f64 * self.tier_fractions.high
    }

    pub fn borderline_or_better_papers(&self) -> f64 {
        self.contributing_papers as f64
            * (self.tier_fractions.high + self.tier_fractions.borderline)
    }
}

/// Fraction of the corpus with clear explanation claims, and with borderline
/// or better ones, assuming papers follow the tiers of the examples.
pub fn prevalence_estimate(
    contributing: usize,
    total: usize,
    tiers: TierFractions,
) -> Result<PrevalenceEstimate> {
    tiers.validate()?;
    if total == 0 {
        return Err(Error::InvalidInput("total papers must be positive".into()));
    }
    if contributing > total {
        return Err(Error::InvalidInput(format!(
            "{contributing} contributing papers exceeds the corpus size {total}"
        )));
    }
    let c = contributing as f64;
    let t = total as f64;
    Ok(PrevalenceEstimate {
        contributing_papers: contributing,
        total_papers: total,
        tier_fractions: tiers,
        clear_rate: c * tiers.high / t,
        borderline_or_better_rate: c * (tiers.high + tiers.borderline) / t,
    })
}

/// Everything the `stats` report shows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub corpus: DistributionTable,
    pub dataset: DistributionTable,
    pub richness: Vec<RichnessRow>,
    pub prevalence: PrevalenceEstimate,
    pub unresolved: Vec<String>,
}

impl Report {
    pub fn build(
        manifest: &CorpusManifest,
        ds: &Dataset,
        taxonomy: &Taxonomy,
        tiers: TierFractions,
    ) -> Result<Self> {
        let corpus = corpus_distribution(manifest, taxonomy)?;
        let DatasetDistribution {
            table: dataset,
            unresolved,
        } = dataset_distribution(ds, manifest, taxonomy);
        Self::from_tables(corpus, dataset, unresolved, tiers)
    }

    pub fn from_tables(
        corpus: DistributionTable,
        dataset: DistributionTable,
        unresolved: Vec<String>,
        tiers: TierFractions,
    ) -> Result<Self> {
        let prevalence = prevalence_estimate(dataset.total, corpus.total, tiers)?;
        Ok(Report {
            richness: richness_table(&corpus, &dataset),
            corpus,
            dataset,
            prevalence,
            unresolved,
        })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let pct = |x: f64| format!("{:.1}", x * 100.0);
        out.push_str("Subject areas\n\n");
        let _ = writeln!(
            out,
            "{:<28} {:>8} {:>7}  {:>8} {:>7}  {:>6}",
            "Area", "corpus", "C %", "dataset", "D %", "D/C"
        );
        let rule = "-".repeat(71);
        let _ = writeln!(out, "{rule}");
        let line =
            |out: &mut String, label: &str, cc: usize, cs: f64, dc: usize, dsh: f64, coef: &str| {
                let d = if self.dataset.is_empty() {
                    "-".to_string()
                } else {
                    pct(dsh)
                };
                let _ = writeln!(
                    out,
                    "{:<28} {:>8} {:>7}  {:>8} {:>7}  {:>6}",
                    label,
                    cc,
                    pct(cs),
                    dc,
                    d,
                    coef
                );
            };
        for r in &self.richness {
            line(
                &mut out,
                r.area.label(),
                r.corpus_count,
                r.corpus_share,
                r.dataset_count,
                r.dataset_share,
                &r.coefficient_display(),
            );
        }
        let _ = writeln!(out, "{rule}");
        let o = SubjectArea::Other;
        line(
            &mut out,
            o.label(),
            self.corpus.count(o),
            self.corpus.share(o),
            self.dataset.count(o),
            self.dataset.share(o),
            "",
        );
        let _ = writeln!(
            out,
            "{:<28} {:>8} {:>7}  {:>8} {:>7}",
            "Total",
            self.corpus.total,
            pct(1.0),
            self.dataset.total,
            if self.dataset.is_empty() {
                "-".to_string()
            } else {
                pct(1.0)
            }
        );
        out.push_str("\nDataset counts are distinct contributing papers.\n");
        if !self.unresolved.is_empty() {
            let _ = writeln!(
                out,
                "{} source id(s) in the dataset match no manifest document and are excluded: {}",
                self.unresolved.len(),
                self.unresolved.join(", ")
            );
        }

        let p = &self.prevalence;
        out.push_str("\nPrevalence\n\n");
        let _ = writeln!(out, "Tier fractions: {}", p.tier_fractions);
        if p.contributing_papers == 0 {
            let _ = writeln!(
                out,
                "Zero of {} papers contributed an example; no rates to report.",
                p.total_papers
            );
        } else {
            let _ = writeln!(
                out,
                "Contributing papers: {} of {} ({}%)",
                p.contributing_papers,
                p.total_papers,
                pct(p.contributing_papers as f64 / p.total_papers as f64)
            );
            let _ = writeln!(
                out,
                "Clear explanation claims: ~{:.0} papers ({}%)",
                p.clear_papers(),
                pct(p.clear_rate)
            );
            let _ = writeln!(
                out,
                "Borderline or better: ~{:.0} papers ({}%)",
                p.borderline_or_better_papers(),
                pct(p.borderline_or_better_rate)
            );
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from(
            "area,corpus_count,corpus_share,dataset_count,dataset_share,coefficient\n",
        );
        let mut push = |area: SubjectArea, coef: Option<f64>| {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                area.name(),
                self.corpus.count(area),
                self.corpus.share(area),
                self.dataset.count(area),
                self.dataset.share(area),
                coef.map(|c| c.to_string()).unwrap_or_default()
            );
        };
        for r in &self.richness {
            push(r.area, r.coefficient);
        }
        push(SubjectArea::Other, None);
        out
    }
}

/// Writes `report.txt` and `report.csv` into `dir` and returns their paths.
pub fn emit_report(report: &Report, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let text = dir.join(REPORT_TEXT_FILE);
    let csv = dir.join(REPORT_CSV_FILE);
    write_atomic(&text, report.render_text().as_bytes())?;
    write_atomic(&csv, report.render_csv().as_bytes())?;
    Ok((text, csv))
}
