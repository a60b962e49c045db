//! Example records parsed from model output, and the dataset file that holds them.
//!
//! Models report findings as loosely formatted bullet items:
//!
//! ```text
//! * **Filename:** math0005139.pdf
//! * **Title:** From Mennicke Symbols to Euler Class Groups
//! * **Example:** An analogy with topology is cited as ...
//! * **Quote:** "Let us now take A to be the Banach algebra ..." (p. 10).
//! * **Context:** Discussing orbit sets over Banach algebras ...
//! ```
//!
//! [`parse_batch_output`] accepts that shape with label synonyms, bold or
//! bullet markup, reordered fields and multi-line values. It never fails:
//! anything it cannot place becomes a [`ParseWarning`].

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::verify::VerificationResult;

pub const DATASET_FORMAT: &str = "corpus-annotate/records";
pub const DATASET_VERSION: u32 = 1;

/// Human-assigned quality tier. The parser never sets this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    High,
    Borderline,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub source_doc_id: String,
    pub title: String,
    #[serde(default)]
    pub authors: Option<String>,
    pub finding: String,
    #[serde(default)]
    pub quote: Option<String>,
    pub commentary: String,
    #[serde(default)]
    pub page: Option<u32>,
    pub batch_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_label: Option<QualityLabel>,
}

impl ExampleRecord {
    /// The fields that survive a render/parse cycle.
    pub fn parsed_fields(
        &self,
    ) -> (
        &str,
        &str,
        Option<&str>,
        &str,
        Option<&str>,
        &str,
        Option<u32>,
    ) {
        (
            &self.source_doc_id,
            &self.title,
            self.authors.as_deref(),
            &self.finding,
            self.quote.as_deref(),
            &self.commentary,
            self.page,
        )
    }

    pub fn has_content(&self) -> bool {
        !self.finding.is_empty()
            || self.quote.as_deref().is_some_and(|q| !q.is_empty())
            || !self.commentary.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub batch_index: usize,
    /// 1-based item ordinal within the batch, when the warning is about an item.
    pub item: Option<usize>,
    /// 1-based line in the input.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.item {
            Some(item) => write!(
                f,
                "batch {} item {} (line {}): {}",
                self.batch_index, item, self.line, self.message
            ),
            None => write!(
                f,
                "batch {} line {}: {}",
                self.batch_index, self.line, self.message
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Field {
    Filename,
    Title,
    Authors,
    Finding,
    Quote,
    Commentary,
    Page,
}

fn field_for_label(label: &str) -> Option<Field> {
    let l = label.trim().to_ascii_lowercase();
    let l = l.trim_end_matches(|c: char| c == '.' || c.is_whitespace());
    Some(match l {
        "filename" | "file" | "file name" | "source" | "source file" | "pdf" | "document" => {
            Field::Filename
        }
        "title" | "paper" | "paper title" => Field::Title,
        "author" | "authors" | "author(s)" => Field::Authors,
        "example" | "finding" | "summary" | "summary of example" | "observation" => Field::Finding,
        "quote" | "quotes" | "quotation" | "direct quote" | "key quote" | "excerpt" => Field::Quote,
        "context"
        | "commentary"
        | "comment"
        | "gemini's commentary"
        | "analysis"
        | "notes"
        | "explanation" => Field::Commentary,
        "page" | "pages" | "page number" => Field::Page,
        _ => return None,
    })
}

static LABEL_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z][A-Za-z'() ]{0,24}?)\s*:\s*(.*)$").unwrap());
static BULLET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[*\-•+>]|\d{1,3}[.)])\s+").unwrap());
static RULE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:-{3,}|\*{3,}|_{3,}|={3,})$").unwrap());
static BATCH_FILE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\W*batch_\d+_(?:output|filtered)\.txt\W*$").unwrap());
static NO_EXAMPLES: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\bno\s+(?:relevant\s+|such\s+|clear\s+|explanatory\s+|further\s+)*(?:examples?|instances?|cases?|findings?|references?|passages?)\b|\bnone of the (?:papers|files|documents|texts)\b|\bdid not (?:find|identify|contain)\b|\bdo(?:es)? not contain any\b",
    )
    .unwrap()
});
static TRAILING_PAGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\s*\(\s*(?:p|pp|page|pages)\.?\s*(\d+)(?:\s*[-–]\s*\d+)?\s*\)\s*[.,;]?\s*$")
        .unwrap()
});
static FIRST_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
static PDF_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z0-9][A-Za-z0-9._\-]*)\.pdf\b").unwrap());

/// Removes list bullets, heading hashes and bold/underline emphasis markers
/// from one line, and trims it.
pub fn strip_markup(line: &str) -> String {
    let mut s = line.trim();
    loop {
        let before = s;
        if let Some(m) = BULLET.find(s) {
            s = s[m.end()..].trim_start();
        }
        s = s.trim_start_matches('#').trim_start();
        if s == before {
            break;
        }
    }
    s.replace("**", "").replace("__", "").trim().to_string()
}

/// Input with [`strip_markup`] applied line by line. Every field the parser
/// returns is a contiguous substring of this text.
pub fn stripped_text(text: &str) -> String {
    text.lines()
        .map(strip_markup)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Default)]
struct Item {
    first_line: usize,
    indent: usize,
    ordinal: usize,
    filename: Option<String>,
    title: Option<String>,
    authors: Option<String>,
    finding: Option<String>,
    quote: Option<String>,
    commentary: Option<String>,
    page: Option<String>,
}

impl Item {
    fn slot(&mut self, f: Field) -> &mut Option<String> {
        match f {
            Field::Filename => &mut self.filename,
            Field::Title => &mut self.title,
            Field::Authors => &mut self.authors,
            Field::Finding => &mut self.finding,
            Field::Quote => &mut self.quote,
            Field::Commentary => &mut self.commentary,
            Field::Page => &mut self.page,
        }
    }

    fn has(&self, f: Field) -> bool {
        match f {
            Field::Filename => self.filename.is_some(),
            Field::Title => self.title.is_some(),
            Field::Authors => self.authors.is_some(),
            Field::Finding => self.finding.is_some(),
            Field::Quote => self.quote.is_some(),
            Field::Commentary => self.commentary.is_some(),
            Field::Page => self.page.is_some(),
        }
    }

    fn has_body(&self) -> bool {
        self.finding.is_some() || self.quote.is_some() || self.commentary.is_some()
    }
}

fn doc_id_from_filename(value: &str) -> String {
    let v = value
        .trim()
        .trim_matches(|c| matches!(c, '`' | '"' | '\'' | '“' | '”'));
    let base = v.rsplit(['/', '\\']).next().unwrap_or(v).trim();
    for ext in [".pdf", ".txt", ".PDF", ".TXT"] {
        if let Some(s) = base.strip_suffix(ext) {
            return s.to_string();
        }
    }
    base.to_string()
}

fn strip_outer_quotes(s: &str) -> &str {
    const PAIRS: [(char, char); 6] = [
        ('"', '"'),
        ('“', '”'),
        ('„', '“'),
        ('«', '»'),
        ('\'', '\''),
        ('‘', '’'),
    ];
    let t = s.trim();
    for (open, close) in PAIRS {
        if t.chars().count() >= 2 && t.starts_with(open) && t.ends_with(close) {
            return t[open.len_utf8()..t.len() - close.len_utf8()].trim();
        }
    }
    t
}

/// Splits a raw quote value into the quoted text and a page number.
fn split_quote(raw: &str) -> (Option<String>, Option<u32>) {
    let (body, page) = match TRAILING_PAGE.captures(raw) {
        Some(c) => {
            let whole = c.get(0).unwrap();
            (&raw[..whole.start()], c[1].parse().ok())
        }
        None => (raw, None),
    };
    let q = strip_outer_quotes(body);
    ((!q.is_empty()).then(|| q.to_string()), page)
}

struct Parser {
    batch_index: usize,
    records: Vec<ExampleRecord>,
    warnings: Vec<ParseWarning>,
    item: Option<Item>,
    items_seen: usize,
    last_field: Option<Field>,
    blank_run: usize,
    loose: Vec<(usize, String)>,
}

impl Parser {
    fn warn(&mut self, item: Option<usize>, line: usize, message: impl Into<String>) {
        self.warnings.push(ParseWarning {
            batch_index: self.batch_index,
            item,
            line,
            message: message.into(),
        });
    }

    fn finish_item(&mut self) {
        self.last_field = None;
        let Some(item) = self.item.take() else { return };
        if !item.has_body() {
            self.warn(
                Some(item.ordinal),
                item.first_line,
                "item has no finding, quote or commentary; skipped",
            );
            return;
        }
        let (quote, quote_page) = item
            .quote
            .as_deref()
            .map(split_quote)
            .unwrap_or((None, None));
        let page = quote_page.or_else(|| {
            item.page
                .as_deref()
                .and_then(|p| FIRST_NUMBER.find(p))
                .and_then(|m| m.as_str().parse().ok())
        });
        let title = item.title.unwrap_or_default();
        let source_doc_id = match item.filename.as_deref() {
            Some(f) => doc_id_from_filename(f),
            None => PDF_NAME
                .captures(&title)
                .map(|c| c[1].to_string())
                .unwrap_or_default(),
        };
        if quote.is_none() {
            self.warn(Some(item.ordinal), item.first_line, "item has no quote");
        }
        self.records.push(ExampleRecord {
            source_doc_id,
            title,
            authors: item.authors.filter(|a| !a.is_empty()),
            finding: item.finding.unwrap_or_default(),
            quote,
            commentary: item.commentary.unwrap_or_default(),
            page,
            batch_index: self.batch_index,
            verification: None,
            quality_label: None,
        });
    }

    fn flush_loose(&mut self) {
        if self.loose.is_empty() {
            return;
        }
        let lines = std::mem::take(&mut self.loose);
        let joined: String = lines
            .iter()
            .map(|(_, l)| l.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let lead_in =
            lines.len() == 1 && joined.ends_with(':') && joined.chars().any(char::is_alphabetic);
        if lead_in || NO_EXAMPLES.is_match(&joined) {
            return;
        }
        let first = lines[0].0;
        let preview: String = joined.chars().take(60).collect();
        self.warn(None, first, format!("unrecognized text: {preview}"));
    }

    fn start_item(&mut self, line: usize, indent: usize) {
        self.items_seen += 1;
        self.item = Some(Item {
            first_line: line,
            indent,
            ordinal: self.items_seen,
            ..Item::default()
        });
    }

    /// A repeated field always starts a new item. A filename or title after
    /// the body does too, unless it is indented under the item's first line.
    fn label_line(&mut self, line_no: usize, indent: usize, field: Field, value: &str) {
        self.flush_loose();
        let needs_new = match &self.item {
            None => true,
            Some(item) => {
                item.has(field)
                    || (matches!(field, Field::Filename | Field::Title)
                        && item.has_body()
                        && indent <= item.indent)
            }
        };
        if needs_new {
            self.finish_item();
            self.start_item(line_no, indent);
        }
        let item = self.item.as_mut().expect("item open");
        *item.slot(field) = Some(value.trim().to_string());
        self.last_field = Some(field);
    }

    fn text_line(&mut self, line_no: usize, raw: &str, stripped: &str) {
        let indented = raw.starts_with([' ', '\t']);
        let continues =
            self.item.is_some() && self.last_field.is_some() && (self.blank_run == 0 || indented);
        if continues {
            let field = self.last_field.unwrap();
            let sep = "\n".repeat(self.blank_run + 1);
            let slot = self.item.as_mut().unwrap().slot(field);
            match slot {
                Some(v) if !v.is_empty() => {
                    v.push_str(&sep);
                    v.push_str(stripped);
                }
                _ => *slot = Some(stripped.to_string()),
            }
            return;
        }
        self.finish_item();
        if self.blank_run > 0 {
            self.flush_loose();
        }
        self.loose.push((line_no, stripped.to_string()));
    }
}

/// Parses one batch output file into records. Total: never fails, and
/// reports anything it could not use as warnings.
pub fn parse_batch_output(
    text: &str,
    batch_index: usize,
) -> (Vec<ExampleRecord>, Vec<ParseWarning>) {
    let mut p = Parser {
        batch_index,
        records: Vec::new(),
        warnings: Vec::new(),
        item: None,
        items_seen: 0,
        last_field: None,
        blank_run: 0,
        loose: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let stripped = strip_markup(raw);
        if stripped.is_empty() {
            p.blank_run += 1;
            continue;
        }
        if RULE.is_match(&stripped)
            || BATCH_FILE.is_match(&stripped)
            || raw.trim_start().starts_with('#')
        {
            p.finish_item();
            p.flush_loose();
        } else if let Some((field, value)) = LABEL_LINE.captures(&stripped).and_then(|c| {
            field_for_label(&c[1]).map(|f| (f, c.get(2).unwrap().as_str().to_string()))
        }) {
            p.label_line(line_no, indent_of(raw), field, &value);
        } else {
            p.text_line(line_no, raw, &stripped);
        }
        p.blank_run = 0;
    }
    p.finish_item();
    p.flush_loose();
    (p.records, p.warnings)
}

fn indent_of(line: &str) -> usize {
    line.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { 4 } else { 1 })
        .sum()
}

fn push_field(out: &mut String, label: &str, value: &str) {
    let mut lines = value.split('\n');
    out.push_str("* **");
    out.push_str(label);
    out.push_str(":** ");
    out.push_str(lines.next().unwrap_or(""));
    out.push('\n');
    for l in lines {
        if !l.is_empty() {
            out.push_str("  ");
            out.push_str(l);
        }
        out.push('\n');
    }
}

/// Canonical labeled-bullet form of a record. Parsing the output gives back
/// the same source, title, authors, finding, quote, commentary and page.
pub fn render_record(r: &ExampleRecord) -> String {
    let mut out = String::new();
    if !r.source_doc_id.is_empty() {
        push_field(&mut out, "Filename", &r.source_doc_id);
    }
    if !r.title.is_empty() {
        push_field(&mut out, "Title", &r.title);
    }
    if let Some(a) = &r.authors {
        push_field(&mut out, "Authors", a);
    }
    if !r.finding.is_empty() {
        push_field(&mut out, "Finding", &r.finding);
    }
    match (&r.quote, r.page) {
        (Some(q), Some(p)) => push_field(&mut out, "Quote", &format!("“{q}” (p. {p})")),
        (Some(q), None) => push_field(&mut out, "Quote", &format!("“{q}”")),
        (None, Some(p)) => push_field(&mut out, "Page", &p.to_string()),
        (None, None) => {}
    }
    if !r.commentary.is_empty() {
        push_field(&mut out, "Context", &r.commentary);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<ExampleRecord>,
    pub source_manifest_hash: String,
    pub filter_pass_count: u32,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    source_manifest_hash: String,
    filter_pass_count: u32,
    record_count: usize,
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        source_manifest_hash: ds.source_manifest_hash.clone(),
        filter_pass_count: ds.filter_pass_count,
        record_count: ds.records.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in &ds.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&src, path)
}

pub fn parse_dataset(src: &str, origin: &Path) -> Result<Dataset> {
    let mut lines = src.split('\n').enumerate().peekable();
    let (_, header) = lines
        .next()
        .filter(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| Error::malformed(origin, 1, "missing dataset header"))?;
    let header: DatasetHeader = serde_json::from_str(header)
        .map_err(|e| Error::malformed(origin, 1, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::malformed(
            origin,
            1,
            format!(
                "unsupported dataset format {} v{}",
                header.format, header.version
            ),
        ));
    }
    let mut records = Vec::with_capacity(header.record_count);
    let mut last_line = 1;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let r: ExampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::malformed(origin, i + 1, e.to_string()))?;
        records.push(r);
        last_line = i + 1;
    }
    if records.len() != header.record_count {
        return Err(Error::malformed(
            origin,
            last_line + 1,
            format!(
                "file ends after {} records but the header promises {}",
                records.len(),
                header.record_count
            ),
        ));
    }
    Ok(Dataset {
        records,
        source_manifest_hash: header.source_manifest_hash,
        filter_pass_count: header.filter_pass_count,
    })
}

/// Loads a dataset and warns when it was built from a different manifest.
pub fn load_dataset_checked(
    path: &Path,
    manifest: &CorpusManifest,
) -> Result<(Dataset, Vec<String>)> {
    let ds = load_dataset(path)?;
    let mut warnings = Vec::new();
    let digest = manifest.digest();
    if !ds.source_manifest_hash.is_empty() && ds.source_manifest_hash != digest {
        warnings.push(format!(
            "{} was built from manifest {} but the given manifest is {}",
            path.display(),
            short(&ds.source_manifest_hash),
            short(&digest)
        ));
    }
    Ok((ds, warnings))
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

/// Drops records identical in (source_doc_id, quote, finding), keeping the first.
pub fn dedupe(ds: &Dataset) -> Dataset {
    let mut seen = HashSet::new();
    let records = ds
        .records
        .iter()
        .filter(|r| seen.insert((r.source_doc_id.clone(), r.quote.clone(), r.finding.clone())))
        .cloned()
        .collect();
    Dataset {
        records,
        ..ds.clone()
    }
}

/// Human-readable document: records grouped under their batch file name.
pub fn export_document(ds: &Dataset) -> String {
    let mut out = String::from("# Filtered examples\n\n");
    out.push_str(&format!(
        "{} examples from {} sources; {} filter pass(es).\n",
        ds.records.len(),
        ds.records
            .iter()
            .map(|r| r.source_doc_id.as_str())
            .filter(|s| !s.is_empty())
            .collect::<HashSet<_>>()
            .len(),
        ds.filter_pass_count
    ));
    let mut current = None;
    for r in &ds.records {
        if current != Some(r.batch_index) {
            current = Some(r.batch_index);
            out.push_str(&format!("\n## batch_{}_output.txt\n", r.batch_index));
        }
        out.push('\n');
        out.push_str(&render_record(r));
    }
    let flagged: Vec<_> = ds
        .records
        .iter()
        .filter(|r| r.verification.as_ref().is_some_and(|v| !v.matched))
        .collect();
    if !flagged.is_empty() {
        out.push_str("\n## Quotes not found in their sources\n\n");
        for r in flagged {
            let sim = r.verification.as_ref().map(|v| v.similarity).unwrap_or(0.0);
            out.push_str(&format!(
                "- {} ({}): similarity {:.3}\n",
                r.title, r.source_doc_id, sim
            ));
        }
    }
    out
}
