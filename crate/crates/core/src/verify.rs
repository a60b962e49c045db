//! Quote verification: does a quoted passage actually occur in the document
//! the model attributed it to?
//!
//! Both sides are normalized first (see [`normalize`]). The quote is then
//! compared against every window of the document whose length is within
//! 80%–120% of the quote length, scoring each window by
//! `1 - edit_distance / max(quote_len, window_len)`. The best window wins.
//!
//! Scanning every window naively is quadratic in the quote length per document
//! position. Instead a single semi-global alignment pass computes, for each
//! end position `e`, the smallest edit distance of the quote against *any*
//! substring ending at `e`. That value lower-bounds every window ending at
//! `e`, which gives an upper bound on its similarity. Candidate ends are then
//! scored exactly in order of increasing lower bound, stopping as soon as the
//! bound cannot beat the best window found so far.

use std::collections::HashMap;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{load_text, CorpusManifest};
use crate::error::{Error, Result};
use crate::records::Dataset;

pub const DEFAULT_THRESHOLD: f64 = 0.85;

/// Width of the "needs human review" band just below the threshold.
pub const REVIEW_BAND: f64 = 0.05;

const MIN_WINDOW_FACTOR: f64 = 0.8;
const MAX_WINDOW_FACTOR: f64 = 1.2;

/// Ends scored exactly before giving up on windows that cannot reach the
/// review band anyway.
const REFINE_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub matched: bool,
    pub similarity: f64,
    /// Character offsets into the normalized document text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_end: Option<usize>,
    pub threshold_used: f64,
}

impl VerificationResult {
    fn new(similarity: f64, span: Option<(usize, usize)>, threshold: f64) -> Self {
        let matched = similarity >= threshold;
        let span = if matched { span } else { None };
        VerificationResult {
            matched,
            similarity,
            span_start: span.map(|s| s.0),
            span_end: span.map(|s| s.1),
            threshold_used: threshold,
        }
    }

    pub fn in_review_band(&self) -> bool {
        !self.matched && self.similarity >= self.threshold_used - REVIEW_BAND
    }
}

static LINE_BREAK_HYPHEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(\p{L})[-\u{2010}][ \t]*\n\s*(\p{Ll})").unwrap());
static SOFT_HYPHEN_BREAK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\u{00AD}[ \t]*\n\s*").unwrap());
static WHITESPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

fn expand_ligature(c: char) -> Option<&'static str> {
    Some(match c {
        '\u{FB00}' => "ff",
        '\u{FB01}' => "fi",
        '\u{FB02}' => "fl",
        '\u{FB03}' => "ffi",
        '\u{FB04}' => "ffl",
        '\u{FB05}' | '\u{FB06}' => "st",
        _ => return None,
    })
}

/// Canonical form used for matching and for stored document text.
///
/// Steps, in order: line endings to LF; soft hyphens removed (a soft hyphen at
/// a line break joins the two halves); NFKC; ligature expansion; line-break
/// hyphens joined (`mathe-\nmatics` becomes `mathematics`); every whitespace
/// run collapsed to one space, ends trimmed. Case is preserved.
///
/// ```
/// use corpus_annotate::verify::normalize;
/// assert_eq!(normalize("e\u{FB03}cient  mathe-\nmatics"), "efficient mathematics");
/// ```
pub fn normalize(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let text = SOFT_HYPHEN_BREAK.replace_all(&text, "");
    let text: String = text.chars().filter(|&c| c != '\u{00AD}').collect();
    let mut expanded = String::with_capacity(text.len());
    for c in text.nfkc() {
        match expand_ligature(c) {
            Some(s) => expanded.push_str(s),
            None => expanded.push(c),
        }
    }
    let joined = LINE_BREAK_HYPHEN.replace_all(&expanded, "$1$2");
    WHITESPACE.replace_all(&joined, " ").trim().to_string()
}

/// One element of a compiled quote.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Atom {
    Lit(char),
    /// Matches any run of at most this many characters at no cost.
    Wild(usize),
}

/// A normalized quote with inline math reduced to wildcards.
#[derive(Debug, Clone)]
struct QuotePattern {
    atoms: Vec<Atom>,
    /// Length of the normalized quote, math included.
    full_len: usize,
    literal_len: usize,
}

impl QuotePattern {
    /// Recognizes `$..$`, `$$..$$`, `\(..\)` and `\[..\]`. An unclosed
    /// delimiter is treated as literal text.
    fn compile(normalized: &str) -> Self {
        let chars: Vec<char> = normalized.chars().collect();
        let mut atoms = Vec::with_capacity(chars.len());
        let mut i = 0;
        while i < chars.len() {
            if let Some(end) = math_span_end(&chars, i) {
                let span = end - i;
                atoms.push(Atom::Wild(3 * span));
                i = end;
            } else {
                atoms.push(Atom::Lit(chars[i]));
                i += 1;
            }
        }
        let literal_len = atoms.iter().filter(|a| matches!(a, Atom::Lit(_))).count();
        QuotePattern {
            atoms,
            full_len: chars.len(),
            literal_len,
        }
    }

    fn has_wildcards(&self) -> bool {
        self.literal_len != self.atoms.len()
    }

    fn reversed(&self) -> Vec<Atom> {
        self.atoms.iter().rev().copied().collect()
    }
}

/// If a math span opens at `i`, returns the index one past its closing delimiter.
fn math_span_end(chars: &[char], i: usize) -> Option<usize> {
    let starts_with = |at: usize, pat: &[char]| chars.get(at..at + pat.len()) == Some(pat);
    let (open, close): (&[char], &[char]) = if starts_with(i, &['$', '$']) {
        (&['$', '$'], &['$', '$'])
    } else if starts_with(i, &['$']) {
        (&['$'], &['$'])
    } else if starts_with(i, &['\\', '(']) {
        (&['\\', '('], &['\\', ')'])
    } else if starts_with(i, &['\\', '[']) {
        (&['\\', '['], &['\\', ']'])
    } else {
        return None;
    };
    let body = i + open.len();
    (body..chars.len())
        .find(|&j| j > body && starts_with(j, close))
        .map(|j| j + close.len())
}

/// Semi-global alignment: entry `e` is the minimum edit distance between the
/// pattern and any substring of `text` ending at `e`.
fn min_distance_by_end(pattern: &[Atom], text: &[char]) -> Vec<u32> {
    let n = text.len();
    let mut prev = vec![0u32; n + 1];
    let mut cur = vec![0u32; n + 1];
    for atom in pattern {
        match *atom {
            Atom::Lit(pc) => {
                cur[0] = prev[0] + 1;
                for i in 1..=n {
                    let sub = prev[i - 1] + u32::from(text[i - 1] != pc);
                    cur[i] = sub.min(prev[i] + 1).min(cur[i - 1] + 1);
                }
            }
            Atom::Wild(k) => wild_row(&prev, &mut cur, k),
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev
}

/// Row update for a wildcard atom: cur[i] = min(prev[i-k..=i]), then allow
/// extra insertions at unit cost.
fn wild_row(prev: &[u32], cur: &mut [u32], k: usize) {
    for i in 0..prev.len() {
        let lo = i.saturating_sub(k);
        let mut best = prev[lo..=i].iter().copied().min().unwrap_or(u32::MAX);
        if i > 0 {
            best = best.min(cur[i - 1] + 1);
        }
        cur[i] = best;
    }
}

/// Global distances between the pattern and every suffix `text[e-t..e]`,
/// for `t` in `0..=max_len`. `rev_pattern` is the pattern reversed.
fn distances_for_starts(
    rev_pattern: &[Atom],
    text: &[char],
    end: usize,
    max_len: usize,
) -> Vec<u32> {
    let width = max_len.min(end);
    // column t corresponds to text[end - t]
    let col = |t: usize| text[end - t];
    let mut prev: Vec<u32> = (0..=width as u32).collect();
    let mut cur = vec![0u32; width + 1];
    for atom in rev_pattern {
        match *atom {
            Atom::Lit(pc) => {
                cur[0] = prev[0] + 1;
                for t in 1..=width {
                    let sub = prev[t - 1] + u32::from(col(t) != pc);
                    cur[t] = sub.min(prev[t] + 1).min(cur[t - 1] + 1);
                }
            }
            Atom::Wild(k) => wild_row(&prev, &mut cur, k),
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev
}

fn similarity(distance: u32, quote_len: usize, window_len: usize) -> f64 {
    let denom = quote_len.max(window_len).max(1);
    1.0 - f64::from(distance) / denom as f64
}

/// Finds the window of `doc_text` most similar to `quote`.
///
/// Spans in the result index characters of `normalize(doc_text)`.
pub fn best_match(quote: &str, doc_text: &str, threshold: f64) -> Result<VerificationResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must be in (0, 1], got {threshold}"
        )));
    }
    let quote = normalize(quote);
    if quote.is_empty() {
        return Err(Error::InvalidInput("quote is empty".into()));
    }
    let doc = normalize(doc_text);
    let pattern = QuotePattern::compile(&quote);

    if !pattern.has_wildcards() {
        if let Some(byte_start) = doc.find(&quote) {
            let start = doc[..byte_start].chars().count();
            let span = (start, start + pattern.full_len);
            return Ok(VerificationResult::new(1.0, Some(span), threshold));
        }
    }

    let text: Vec<char> = doc.chars().collect();
    let (sim, span) = search(&pattern, &text, threshold - REVIEW_BAND);
    Ok(VerificationResult::new(sim, span, threshold))
}

fn search(pattern: &QuotePattern, text: &[char], floor: f64) -> (f64, Option<(usize, usize)>) {
    let n_ref = pattern.full_len;
    let min_len =
        ((MIN_WINDOW_FACTOR * pattern.literal_len as f64).floor() as usize).min(text.len());
    let max_len = ((MAX_WINDOW_FACTOR * n_ref as f64).ceil() as usize)
        .min(text.len())
        .max(min_len);

    let by_end = min_distance_by_end(&pattern.atoms, text);
    let mut ends: Vec<usize> = (min_len..=text.len()).collect();
    ends.sort_by_key(|&e| (by_end[e], e));

    let bound_denom = n_ref.max(max_len).max(1) as f64;
    let rev = pattern.reversed();
    let mut best = (f64::NEG_INFINITY, None);
    for (evaluated, &end) in ends.iter().enumerate() {
        let upper = 1.0 - f64::from(by_end[end]) / bound_denom;
        if upper <= best.0 || (evaluated >= REFINE_CAP && upper < floor) {
            break;
        }
        let dists = distances_for_starts(&rev, text, end, max_len);
        for (len, &d) in dists.iter().enumerate().skip(min_len) {
            let s = similarity(d, n_ref, len);
            if s > best.0 {
                best = (s, Some((end - len, end)));
            }
        }
    }
    if best.0.is_finite() {
        (best.0.max(0.0), best.1)
    } else {
        (0.0, None)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRecord {
    pub record_index: usize,
    pub source_doc_id: String,
    pub title: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub verified: usize,
    pub unverified: usize,
    pub skipped: usize,
    pub no_quote: usize,
    pub threshold: f64,
    /// Records whose quote was not found, for human review.
    pub unverified_records: Vec<FlaggedRecord>,
    /// Unverified records within [`REVIEW_BAND`] of the threshold.
    pub review_band: Vec<FlaggedRecord>,
    /// `source_doc_id`s with no resolvable text in the manifest.
    pub unresolved_doc_ids: Vec<String>,
}

impl VerificationSummary {
    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("threshold   {:.2}\n", self.threshold));
        out.push_str(&format!("verified    {}\n", self.verified));
        out.push_str(&format!("unverified  {}\n", self.unverified));
        out.push_str(&format!("skipped     {}\n", self.skipped));
        out.push_str(&format!("no quote    {}\n", self.no_quote));
        if !self.unverified_records.is_empty() {
            out.push_str("\nunverified records:\n");
            for r in &self.unverified_records {
                let band = if self
                    .review_band
                    .iter()
                    .any(|b| b.record_index == r.record_index)
                {
                    "  [review]"
                } else {
                    ""
                };
                out.push_str(&format!(
                    "  #{:<5} {:<24} {:.3}  {}{}\n",
                    r.record_index, r.source_doc_id, r.similarity, r.title, band
                ));
            }
        }
        if !self.unresolved_doc_ids.is_empty() {
            out.push_str("\nunresolved sources:\n");
            for id in &self.unresolved_doc_ids {
                out.push_str(&format!("  {id}\n"));
            }
        }
        out
    }
}

/// Attaches a [`VerificationResult`] to every record that carries a quote.
pub fn verify_dataset(
    ds: &Dataset,
    manifest: &CorpusManifest,
    threshold: f64,
) -> Result<(Dataset, VerificationSummary)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must be in (0, 1], got {threshold}"
        )));
    }
    let mut needed: Vec<&str> = ds
        .records
        .iter()
        .filter(|r| r.quote.as_deref().is_some_and(|q| !q.trim().is_empty()))
        .filter_map(|r| {
            manifest
                .resolve(&r.source_doc_id)
                .map(|d| d.doc_id.as_str())
        })
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let texts: HashMap<&str, String> = needed
        .par_iter()
        .filter_map(|id| {
            let doc = manifest.get(id)?;
            match load_text(doc) {
                Ok(t) => Some((*id, t)),
                Err(e) => {
                    log::warn!("{e}");
                    None
                }
            }
        })
        .collect();

    enum Outcome {
        NoQuote,
        Skipped(String),
        Checked(VerificationResult),
    }

    let outcomes: Vec<Outcome> = ds
        .records
        .par_iter()
        .map(|r| {
            let Some(quote) = r.quote.as_deref().filter(|q| !q.trim().is_empty()) else {
                return Outcome::NoQuote;
            };
            let text = manifest
                .resolve(&r.source_doc_id)
                .and_then(|d| texts.get(d.doc_id.as_str()));
            match text {
                Some(t) => match best_match(quote, t, threshold) {
                    Ok(v) => Outcome::Checked(v),
                    // quotes made only of whitespace after normalization
                    Err(_) => Outcome::NoQuote,
                },
                None => Outcome::Skipped(r.source_doc_id.clone()),
            }
        })
        .collect();

    let mut out = ds.clone();
    let mut summary = VerificationSummary {
        threshold,
        ..Default::default()
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let record = &mut out.records[i];
        match outcome {
            Outcome::NoQuote => summary.no_quote += 1,
            Outcome::Skipped(id) => {
                summary.skipped += 1;
                if !summary.unresolved_doc_ids.contains(&id) {
                    summary.unresolved_doc_ids.push(id);
                }
            }
            Outcome::Checked(v) => {
                if v.matched {
                    summary.verified += 1;
                } else {
                    summary.unverified += 1;
                    let flagged = FlaggedRecord {
                        record_index: i,
                        source_doc_id: record.source_doc_id.clone(),
                        title: record.title.clone(),
                        similarity: v.similarity,
                    };
                    if v.in_review_band() {
                        summary.review_band.push(flagged.clone());
                    }
                    summary.unverified_records.push(flagged);
                }
                record.verification = Some(v);
            }
        }
    }
    Ok((out, summary))
}
