//! Corpus ingestion, manifests and reproducible sampling.
//!
//! PDF text extraction happens outside this crate: each `paper.pdf` is
//! expected to have a `paper.txt` sidecar. [`IngestOptions::extract_command`]
//! can run an external extractor for PDFs that lack one.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::bytes::Regex as BytesRegex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::{sha256_hex, write_atomic};
use crate::taxonomy::CategoryTag;
use crate::verify::normalize;

pub const MANIFEST_FORMAT: &str = "corpus-annotate/manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub doc_id: String,
    pub path: PathBuf,
    pub text_path: PathBuf,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub category_tag: Option<CategoryTag>,
    #[serde(default)]
    pub char_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    documents: Vec<DocumentRef>,
    pub sample_seed: Option<u64>,
    pub parent_size: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    sample_seed: Option<u64>,
    parent_size: usize,
}

impl CorpusManifest {
    /// Sorts `documents` into canonical order. Duplicate ids are rejected.
    pub fn new(mut documents: Vec<DocumentRef>) -> Result<Self> {
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if let Some(w) = documents.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(Error::InvalidInput(format!(
                "duplicate doc_id `{}`",
                w[0].doc_id
            )));
        }
        let parent_size = documents.len();
        Ok(CorpusManifest {
            documents,
            sample_seed: None,
            parent_size,
        })
    }

    pub fn documents(&self) -> &[DocumentRef] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocumentRef> {
        self.documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
            .map(|i| &self.documents[i])
    }

    /// Looks up a document by the name a model used for it. Accepts the exact
    /// id, the id with a `.pdf`/`.txt` extension, or a case-insensitive match.
    pub fn resolve(&self, name: &str) -> Option<&DocumentRef> {
        let name = name.trim();
        if name.is_empty() {
            return None;
        }
        if let Some(d) = self.get(name) {
            return Some(d);
        }
        let base = name.rsplit('/').next().unwrap_or(name);
        let stem = strip_doc_extension(base);
        self.get(stem).or_else(|| {
            self.documents
                .iter()
                .find(|d| d.doc_id.eq_ignore_ascii_case(stem))
        })
    }

    /// Serializes to the line-delimited manifest format: a header line followed
    /// by one JSON object per document in canonical order.
    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            sample_seed: self.sample_seed,
            parent_size: self.parent_size,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for d in &self.documents {
            out.push_str(&serde_json::to_string(d).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(src: &str, origin: &Path) -> Result<Self> {
        let mut lines = src
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, header)) = lines.next() else {
            return Err(Error::malformed(origin, 1, "missing manifest header"));
        };
        let header: ManifestHeader = serde_json::from_str(header)
            .map_err(|e| Error::malformed(origin, hline + 1, format!("bad header: {e}")))?;
        if header.format != MANIFEST_FORMAT {
            return Err(Error::malformed(
                origin,
                hline + 1,
                format!("not a manifest (format `{}`)", header.format),
            ));
        }
        if header.version != MANIFEST_VERSION {
            return Err(Error::malformed(
                origin,
                hline + 1,
                format!("unsupported manifest version {}", header.version),
            ));
        }
        let mut documents = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let doc: DocumentRef = serde_json::from_str(line)
                .map_err(|e| Error::malformed(origin, i + 1, e.to_string()))?;
            if !seen.insert(doc.doc_id.clone()) {
                return Err(Error::malformed(
                    origin,
                    i + 1,
                    format!("duplicate doc_id `{}`", doc.doc_id),
                ));
            }
            documents.push(doc);
        }
        let mut m = CorpusManifest::new(documents)?;
        m.sample_seed = header.sample_seed;
        m.parent_size = header.parent_size;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&src, path)
    }

    /// SHA-256 of the serialized manifest.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_jsonl().as_bytes())
    }
}

fn strip_doc_extension(name: &str) -> &str {
    for ext in [".pdf", ".txt", ".PDF", ".TXT"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s;
        }
    }
    name
}

/// One entry of a metadata file. Everything except `doc_id` is optional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataEntry {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_tag: Option<CategoryTag>,
}

/// Metadata file contents keyed by `doc_id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: BTreeMap<String, MetadataEntry>,
}

impl Metadata {
    /// Parses line-delimited metadata. Blank lines and a manifest-style
    /// header line (one carrying a `format` key) are skipped.
    pub fn parse(src: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in src.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| Error::malformed(origin, i + 1, e.to_string()))?;
            if value.get("format").is_some() && value.get("doc_id").is_none() {
                continue;
            }
            let entry: MetadataEntry = serde_json::from_value(value)
                .map_err(|e| Error::malformed(origin, i + 1, e.to_string()))?;
            if entry.doc_id.trim().is_empty() {
                return Err(Error::malformed(origin, i + 1, "empty doc_id"));
            }
            if entries.insert(entry.doc_id.clone(), entry).is_some() {
                return Err(Error::malformed(origin, i + 1, "duplicate doc_id"));
            }
        }
        Ok(Metadata { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src, path)
    }

    pub fn get(&self, doc_id: &str) -> Option<&MetadataEntry> {
        self.entries.get(doc_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetadataEntry> {
        self.entries.values()
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Shell command that writes extracted text for one PDF. `{pdf}` and
    /// `{txt}` are replaced by the quoted input and output paths.
    pub extract_command: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedDocument {
    pub doc_id: String,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub manifest: CorpusManifest,
    pub skipped: Vec<SkippedDocument>,
}

struct Candidate {
    doc_id: String,
    pdf: PathBuf,
}

/// Builds a manifest from a directory of PDFs with `.txt` sidecars.
///
/// Documents without resolvable text are listed in
/// [`IngestReport::skipped`] rather than dropped silently. Metadata entries
/// that name a document not present in the directory are ingested too when
/// their `text_path` resolves.
pub fn ingest(
    source_dir: &Path,
    metadata_file: Option<&Path>,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let metadata = metadata_file.map(Metadata::load).transpose()?;
    let entries = fs::read_dir(source_dir).map_err(|e| Error::io(source_dir, e))?;

    let mut candidates = Vec::new();
    let mut seen = HashSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(source_dir, e))?;
        let path = entry.path();
        let is_pdf = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pdf"));
        if !is_pdf || !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        seen.insert(stem.to_string());
        candidates.push(Candidate {
            doc_id: stem.to_string(),
            pdf: path,
        });
    }
    if let Some(md) = &metadata {
        for e in md.iter().filter(|e| !seen.contains(&e.doc_id)) {
            if e.text_path.is_some() || e.path.is_some() {
                candidates.push(Candidate {
                    doc_id: e.doc_id.clone(),
                    pdf: e
                        .path
                        .as_deref()
                        .map(|p| source_dir.join(p))
                        .unwrap_or_default(),
                });
            }
        }
    }
    candidates.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let results: Vec<std::result::Result<DocumentRef, SkippedDocument>> = candidates
        .par_iter()
        .map(|c| build_ref(c, source_dir, metadata.as_ref(), opts))
        .collect();

    let mut documents = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(d) => documents.push(d),
            Err(s) => {
                log::warn!("skipping {}: {}", s.doc_id, s.reason);
                skipped.push(s);
            }
        }
    }
    Ok(IngestReport {
        manifest: CorpusManifest::new(documents)?,
        skipped,
    })
}

fn build_ref(
    c: &Candidate,
    source_dir: &Path,
    metadata: Option<&Metadata>,
    opts: &IngestOptions,
) -> std::result::Result<DocumentRef, SkippedDocument> {
    let md = metadata.and_then(|m| m.get(&c.doc_id));
    let skip = |reason: String| SkippedDocument {
        doc_id: c.doc_id.clone(),
        path: c.pdf.clone(),
        reason,
    };

    let sidecar = source_dir.join(format!("{}.txt", c.doc_id));
    let text_path = if sidecar.is_file() {
        sidecar
    } else if let Some(tp) = md.and_then(|m| m.text_path.as_ref()) {
        let p = if tp.is_absolute() {
            tp.clone()
        } else {
            source_dir.join(tp)
        };
        if !p.is_file() {
            return Err(skip(format!(
                "metadata text_path {} does not exist",
                p.display()
            )));
        }
        p
    } else if let (Some(cmd), true) = (&opts.extract_command, c.pdf.is_file()) {
        run_extractor(cmd, &c.pdf, &sidecar).map_err(skip)?;
        sidecar
    } else {
        return Err(skip(format!("no text sidecar {}", sidecar.display())));
    };

    let raw = fs::read(&text_path).map_err(|e| skip(format!("{}: {e}", text_path.display())))?;
    let text = normalize(&String::from_utf8_lossy(&raw));
    let pdf_info = if c.pdf.is_file() {
        fs::read(&c.pdf)
            .map(|b| PdfInfo::scan(&b))
            .unwrap_or_default()
    } else {
        PdfInfo::default()
    };

    let title = md
        .and_then(|m| m.title.clone())
        .or_else(|| pdf_info.title.clone())
        .unwrap_or_default();
    let authors = md
        .and_then(|m| m.authors.clone())
        .or_else(|| pdf_info.author.as_ref().map(|a| split_authors(a)))
        .unwrap_or_default();
    let mut doc = DocumentRef {
        doc_id: c.doc_id.clone(),
        path: c.pdf.clone(),
        text_path,
        title,
        authors,
        category_tag: None,
        char_count: text.chars().count(),
    };
    let tag = md
        .and_then(|m| m.category_tag.clone())
        .filter(|t| !t.is_unknown())
        .or_else(|| pdf_info.category.clone())
        .or_else(|| tag_from_filename(&doc.path, &doc.doc_id))
        .unwrap_or(CategoryTag::Unknown);
    doc.category_tag = Some(tag);
    Ok(doc)
}

fn split_authors(s: &str) -> Vec<String> {
    s.split([';', ','])
        .flat_map(|p| p.split(" and "))
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(String::from)
        .collect()
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn run_extractor(template: &str, pdf: &Path, txt: &Path) -> std::result::Result<(), String> {
    let cmd = template
        .replace("{pdf}", &shell_quote(pdf))
        .replace("{txt}", &shell_quote(txt));
    let status = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .status()
        .map_err(|e| format!("extractor failed to start: {e}"))?;
    if !status.success() {
        return Err(format!("extractor exited with {status}"));
    }
    if !txt.is_file() {
        return Err(format!("extractor did not produce {}", txt.display()));
    }
    Ok(())
}

/// Normalized text of an ingested document.
pub fn load_text(doc: &DocumentRef) -> Result<String> {
    match fs::read(&doc.text_path) {
        Ok(bytes) => Ok(normalize(&String::from_utf8_lossy(&bytes))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingText {
            doc_id: doc.doc_id.clone(),
            path: doc.text_path.clone(),
        }),
        Err(e) => Err(Error::io(&doc.text_path, e)),
    }
}

static ARXIV_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(math|cs|stat|econ|eess|nlin|q-bio|q-fin|astro-ph|cond-mat|physics)\.([a-z]{2})\b",
    )
    .unwrap()
});

fn canonical_tag(archive: &str, sub: &str) -> CategoryTag {
    CategoryTag::new(format!(
        "{}.{}",
        archive.to_ascii_lowercase(),
        sub.to_ascii_uppercase()
    ))
}

fn first_tag(s: &str) -> Option<CategoryTag> {
    ARXIV_TAG.captures(s).map(|c| canonical_tag(&c[1], &c[2]))
}

fn tag_from_filename(path: &Path, doc_id: &str) -> Option<CategoryTag> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(first_tag)
        .or_else(|| first_tag(doc_id))
}

/// Document-info fields pulled from raw PDF bytes. Only uncompressed
/// literal strings in the info dictionary and XMP packets are seen.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PdfInfo {
    title: Option<String>,
    author: Option<String>,
    category: Option<CategoryTag>,
}

static PDF_INFO_FIELD: LazyLock<BytesRegex> = LazyLock::new(|| {
    BytesRegex::new(r"/(Title|Author|Subject|Keywords)\s*\(((?:[^()\\]|\\.)*)\)").unwrap()
});
static XMP_FIELD: LazyLock<BytesRegex> = LazyLock::new(|| {
    BytesRegex::new(r"(?s)<(dc:subject|pdf:Keywords)>(.*?)</(?:dc:subject|pdf:Keywords)>").unwrap()
});

impl PdfInfo {
    fn scan(bytes: &[u8]) -> Self {
        let mut info = PdfInfo::default();
        for cap in PDF_INFO_FIELD.captures_iter(bytes) {
            let value = unescape_pdf_string(&cap[2]);
            match &cap[1] {
                b"Title" if info.title.is_none() && !value.trim().is_empty() => {
                    info.title = Some(value.trim().to_string())
                }
                b"Author" if info.author.is_none() && !value.trim().is_empty() => {
                    info.author = Some(value.trim().to_string())
                }
                b"Subject" | b"Keywords" if info.category.is_none() => {
                    info.category = first_tag(&value)
                }
                _ => {}
            }
        }
        if info.category.is_none() {
            info.category = XMP_FIELD
                .captures_iter(bytes)
                .find_map(|c| first_tag(&String::from_utf8_lossy(&c[2])));
        }
        info
    }
}

fn unescape_pdf_string(raw: &[u8]) -> String {
    let mut out = Vec::with_capacity(raw.len());
    let mut it = raw.iter().copied();
    while let Some(b) = it.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        match it.next() {
            Some(b'n') => out.push(b'\n'),
            Some(b'r') => out.push(b'\r'),
            Some(b't') => out.push(b'\t'),
            Some(other) => out.push(other),
            None => {}
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Category of `doc`: metadata entry, then embedded PDF metadata, then the
/// file name. Falls back to [`CategoryTag::Unknown`].
pub fn resolve_category(doc: &DocumentRef, metadata: Option<&Metadata>) -> CategoryTag {
    if let Some(tag) = metadata
        .and_then(|m| m.get(&doc.doc_id))
        .and_then(|e| e.category_tag.clone())
        .filter(|t| !t.is_unknown())
    {
        return tag;
    }
    if let Some(tag) = fs::read(&doc.path)
        .ok()
        .and_then(|b| PdfInfo::scan(&b).category)
    {
        return tag;
    }
    tag_from_filename(&doc.path, &doc.doc_id).unwrap_or(CategoryTag::Unknown)
}

/// Draws `n` documents without replacement.
///
/// A partial Fisher–Yates shuffle over the canonical order, driven by
/// ChaCha8 seeded with `seed`. The result is back in canonical order and
/// records the seed and the size of the manifest it was drawn from.
pub fn sample(manifest: &CorpusManifest, n: usize, seed: u64) -> Result<CorpusManifest> {
    let len = manifest.len();
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    if n > len {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let span = (len - i) as u128;
        let j = i + ((u128::from(rng.next_u64()) * span) >> 64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    Ok(CorpusManifest {
        documents: chosen
            .into_iter()
            .map(|i| manifest.documents[i].clone())
            .collect(),
        sample_seed: Some(seed),
        parent_size: len,
    })
}
