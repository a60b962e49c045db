//! Batch planning and execution of annotation, filter and query runs.
//!
//! Each annotation batch writes `batch_{n}_output.txt` into the output
//! directory; the filter pass writes `batch_{n}_filtered.txt` beside it.
//! Progress is recorded in `checkpoint.json` so an interrupted run can resume
//! without repeating finished batches.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_text, CorpusManifest, DocumentRef};
use crate::error::{Error, Result};
use crate::fsio::{sha256_hex, write_atomic};
use crate::prompts::{PromptBundle, Templates};
use crate::provider::{estimate_tokens, estimate_tokens_for_chars, Client, Usage};
use crate::records::{self, parse_batch_output, Dataset, ParseWarning};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FILTER_STATE_FILE: &str = "filter.json";
const CHECKPOINT_FORMAT: &str = "corpus-annotate/checkpoint";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    pub batch_size: usize,
    pub output_dir: PathBuf,
    pub resume: bool,
    /// Exclude documents that cannot fit the window on their own instead of failing the plan.
    pub skip_oversize: bool,
    pub filter_passes: u32,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            batch_size: 25,
            output_dir: PathBuf::from("runs"),
            resume: false,
            skip_oversize: false,
            filter_passes: 1,
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.filter_passes == 0 {
            return Err(Error::Config("filter_passes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchJob {
    pub index: usize,
    pub doc_ids: Vec<String>,
    pub status: JobStatus,
    pub output_path: PathBuf,
    pub estimated_tokens: u64,
    pub error: Option<String>,
}

/// Token figures the planner checks batches against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanBudget {
    pub prompt_tokens: u64,
    pub available: u64,
}

impl PlanBudget {
    pub fn unlimited() -> Self {
        PlanBudget {
            prompt_tokens: 0,
            available: u64::MAX,
        }
    }

    pub fn for_client(client: &Client, bundle: &PromptBundle) -> Self {
        PlanBudget {
            prompt_tokens: bundle.estimated_tokens,
            available: client.config().input_budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OversizeSkip {
    pub doc_id: String,
    pub required: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub jobs: Vec<BatchJob>,
    pub skipped: Vec<OversizeSkip>,
}

impl BatchPlan {
    /// Digest of the batch layout, stored in the checkpoint.
    pub fn digest(&self) -> String {
        plan_digest(&self.jobs)
    }

    /// Human-readable plan with token estimates, for `--dry-run`.
    pub fn describe(&self, budget: &PlanBudget) -> String {
        let mut out = String::new();
        let docs: usize = self.jobs.iter().map(|j| j.doc_ids.len()).sum();
        out.push_str(&format!(
            "{} batches, {} documents\n",
            self.jobs.len(),
            docs
        ));
        if budget.available != u64::MAX {
            out.push_str(&format!(
                "input budget per request: {} tokens\n",
                budget.available
            ));
        }
        for j in &self.jobs {
            let first = j.doc_ids.first().map(String::as_str).unwrap_or("");
            let last = j.doc_ids.last().map(String::as_str).unwrap_or("");
            out.push_str(&format!(
                "batch {:>4}  {:>3} docs  ~{:>9} tokens  {}..{}  [{:?}]\n",
                j.index,
                j.doc_ids.len(),
                j.estimated_tokens,
                first,
                last,
                j.status
            ));
        }
        for s in &self.skipped {
            out.push_str(&format!(
                "skipped {} (~{} tokens alone)\n",
                s.doc_id, s.required
            ));
        }
        let total: u64 = self.jobs.iter().map(|j| j.estimated_tokens).sum();
        out.push_str(&format!("total estimated input: ~{total} tokens\n"));
        out
    }
}

fn plan_digest(jobs: &[BatchJob]) -> String {
    let mut s = String::new();
    for j in jobs {
        s.push_str(&j.doc_ids.join(","));
        s.push('\n');
    }
    sha256_hex(s.as_bytes())
}

pub fn output_file_name(index: usize) -> String {
    format!("batch_{index}_output.txt")
}

pub fn filtered_file_name(index: usize) -> String {
    format!("batch_{index}_filtered.txt")
}

fn file_header(doc: &DocumentRef) -> String {
    if doc.title.is_empty() {
        format!("=== FILE: {} ===", doc.doc_id)
    } else {
        format!("=== FILE: {} ({}) ===", doc.doc_id, doc.title)
    }
}

/// Characters one document contributes to a batch payload.
fn doc_payload_chars(doc: &DocumentRef) -> u64 {
    (file_header(doc).chars().count() + 2 + doc.char_count + 1) as u64
}

/// Splits the manifest, in canonical order, into consecutive batches of at
/// most `batch_size` documents. A batch whose estimate exceeds the budget is
/// split further. A document that cannot fit alone fails the plan unless
/// `skip_oversize` is set.
pub fn plan_batches(
    manifest: &CorpusManifest,
    cfg: &RunnerConfig,
    budget: &PlanBudget,
) -> Result<BatchPlan> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let room = budget.available.saturating_sub(budget.prompt_tokens);
    let mut groups: Vec<(Vec<&DocumentRef>, u64)> = Vec::new();
    let mut skipped = Vec::new();
    for chunk in manifest.documents().chunks(cfg.batch_size) {
        let mut current: Vec<&DocumentRef> = Vec::new();
        let mut chars = 0u64;
        for doc in chunk {
            let own = doc_payload_chars(doc);
            let alone = estimate_tokens_for_chars(own);
            if alone > room {
                let required = alone.saturating_add(budget.prompt_tokens);
                if cfg.skip_oversize {
                    log::warn!("excluding {}: needs ~{required} tokens alone", doc.doc_id);
                    skipped.push(OversizeSkip {
                        doc_id: doc.doc_id.clone(),
                        required,
                    });
                    continue;
                }
                return Err(Error::OversizeDocument {
                    doc_id: doc.doc_id.clone(),
                    required,
                    available: budget.available,
                });
            }
            if !current.is_empty() && estimate_tokens_for_chars(chars + own) > room {
                groups.push((std::mem::take(&mut current), chars));
                chars = 0;
            }
            current.push(doc);
            chars += own;
        }
        if !current.is_empty() {
            groups.push((current, chars));
        }
    }
    let jobs = groups
        .into_iter()
        .enumerate()
        .map(|(index, (docs, chars))| BatchJob {
            index,
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            status: JobStatus::Pending,
            output_path: cfg.output_dir.join(output_file_name(index)),
            estimated_tokens: budget.prompt_tokens + estimate_tokens_for_chars(chars),
            error: None,
        })
        .collect();
    Ok(BatchPlan { jobs, skipped })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub manifest_hash: String,
    pub plan_hash: String,
    pub completed: BTreeSet<usize>,
    #[serde(default)]
    pub failed: BTreeMap<usize, String>,
}

impl Checkpoint {
    pub fn new(manifest_hash: String, plan_hash: String) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            manifest_hash,
            plan_hash,
            completed: BTreeSet::new(),
            failed: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(CHECKPOINT_FILE);
        match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s)
                .map(Some)
                .map_err(|e| Error::malformed(&path, e.line(), e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        write_atomic(&dir.join(CHECKPOINT_FILE), json.as_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub completed: Vec<usize>,
    /// Jobs already done before this run started.
    pub resumed: Vec<usize>,
    pub failed: Vec<(usize, String)>,
    pub usage: Usage,
}

impl RunSummary {
    pub fn has_failures(&self) -> bool {
        !self.failed.is_empty()
    }
}

/// The text sent for one batch: each document under a `=== FILE: ... ===` header.
pub fn batch_payload(manifest: &CorpusManifest, doc_ids: &[String]) -> Result<String> {
    let mut out = String::new();
    for id in doc_ids {
        let doc = manifest
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("document {id} is not in the manifest")))?;
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&file_header(doc));
        out.push_str("\n\n");
        out.push_str(&load_text(doc)?);
        out.push('\n');
    }
    Ok(out)
}

/// Runs `work` over `items` on up to `workers` threads. Results arrive on the
/// calling thread, in completion order, through `on_done`.
fn run_pool<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    work: impl Fn(&T) -> R + Sync,
    mut on_done: impl FnMut(usize, R),
) {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            let tx = tx.clone();
            let (next, work) = (&next, &work);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                if tx.send((i, work(item))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            on_done(i, r);
        }
    });
}

/// Executes the pending jobs of `plan`. Each finished batch is written to its
/// output file before the checkpoint records it. A failed batch is recorded
/// and the others still run.
pub fn run_annotation(
    client: &Client,
    manifest: &CorpusManifest,
    plan: &mut BatchPlan,
    bundle: &PromptBundle,
    cfg: &RunnerConfig,
) -> Result<RunSummary> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_hash = manifest.digest();
    let plan_hash = plan.digest();
    let mut checkpoint = match Checkpoint::load(dir)? {
        Some(cp) if cfg.resume => {
            if cp.manifest_hash != manifest_hash || cp.plan_hash != plan_hash {
                let (expected, found) = if cp.manifest_hash != manifest_hash {
                    (manifest_hash, cp.manifest_hash)
                } else {
                    (plan_hash, cp.plan_hash)
                };
                return Err(Error::CheckpointMismatch {
                    dir: dir.clone(),
                    expected,
                    found,
                });
            }
            cp
        }
        _ => Checkpoint::new(manifest_hash, plan_hash),
    };

    let mut summary = RunSummary::default();
    for job in plan.jobs.iter_mut() {
        job.output_path = dir.join(output_file_name(job.index));
        let done = checkpoint.completed.contains(&job.index)
            && fs::metadata(&job.output_path).is_ok_and(|m| m.len() > 0);
        if done {
            job.status = JobStatus::Done;
            summary.resumed.push(job.index);
        } else {
            if checkpoint.completed.remove(&job.index) {
                log::warn!(
                    "batch {} was checkpointed but its output is missing; rerunning",
                    job.index
                );
            }
            job.status = JobStatus::Pending;
        }
    }
    checkpoint.failed.clear();
    checkpoint.save(dir)?;

    let pending: Vec<usize> = plan
        .jobs
        .iter()
        .enumerate()
        .filter(|(_, j)| j.status == JobStatus::Pending)
        .map(|(i, _)| i)
        .collect();
    let jobs = &plan.jobs;
    let work = |&pos: &usize| -> std::result::Result<(), String> {
        let job = &jobs[pos];
        let payload = batch_payload(manifest, &job.doc_ids).map_err(|e| e.to_string())?;
        let request = bundle.clone().with_refs(job.doc_ids.clone());
        let response = client
            .complete(&request, &payload)
            .map_err(|e| e.to_string())?;
        if response.text.trim().is_empty() {
            return Err("model returned an empty response".into());
        }
        write_atomic(&job.output_path, response.text.as_bytes()).map_err(|e| e.to_string())?;
        log::info!("batch {} done ({} docs)", job.index, job.doc_ids.len());
        Ok(())
    };
    let mut outcomes = Vec::new();
    let mut save_error = None;
    run_pool(&pending, client.config().max_inflight, work, |i, r| {
        let index = jobs[pending[i]].index;
        match &r {
            Ok(()) => {
                checkpoint.completed.insert(index);
            }
            Err(e) => {
                log::error!("batch {index} failed: {e}");
                checkpoint.failed.insert(index, e.clone());
            }
        }
        if let Err(e) = checkpoint.save(dir) {
            save_error.get_or_insert(e);
        }
        outcomes.push((pending[i], r));
    });
    if let Some(e) = save_error {
        return Err(e);
    }
    outcomes.sort_by_key(|(pos, _)| *pos);
    for (pos, r) in outcomes {
        let job = &mut plan.jobs[pos];
        match r {
            Ok(()) => {
                job.status = JobStatus::Done;
                summary.completed.push(job.index);
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.error = Some(e.clone());
                summary.failed.push((job.index, e));
            }
        }
    }
    summary.usage = client.usage();
    Ok(summary)
}

static BATCH_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^batch_(\d+)_(output|filtered)\.txt$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchFileKind {
    Output,
    Filtered,
}

impl BatchFileKind {
    fn suffix(self) -> &'static str {
        match self {
            BatchFileKind::Output => "output",
            BatchFileKind::Filtered => "filtered",
        }
    }
}

/// `batch_{n}_*.txt` files of one kind in `dir`, sorted by `n`.
pub fn batch_files(dir: &Path, kind: BatchFileKind) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(c) = BATCH_NAME.captures(name) {
            if &c[2] == kind.suffix() {
                if let Ok(n) = c[1].parse() {
                    out.push((n, entry.path()));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRetention {
    pub index: usize,
    pub input_examples: usize,
    pub retained_examples: usize,
}

impl BatchRetention {
    pub fn retention(&self) -> Option<f64> {
        (self.input_examples > 0)
            .then(|| self.retained_examples as f64 / self.input_examples as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetentionStats {
    pub batches: Vec<BatchRetention>,
    pub skipped_empty: Vec<usize>,
    pub failed: Vec<(usize, String)>,
    pub passes: u32,
}

impl RetentionStats {
    pub fn input_examples(&self) -> usize {
        self.batches.iter().map(|b| b.input_examples).sum()
    }

    pub fn retained_examples(&self) -> usize {
        self.batches.iter().map(|b| b.retained_examples).sum()
    }

    pub fn overall(&self) -> Option<f64> {
        let input = self.input_examples();
        (input > 0).then(|| self.retained_examples() as f64 / input as f64)
    }

    /// The filter prompt demands at least half the examples be excluded.
    pub fn quota_met(&self) -> bool {
        self.overall().map_or(true, |r| r <= 0.5)
    }

    pub fn has_failures(&self) -> bool {
        !self.failed.is_empty()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("batch   input  retained  retention\n");
        for b in &self.batches {
            let r = b
                .retention()
                .map(|r| format!("{:.2}", r))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:>5}  {:>6}  {:>8}  {:>9}\n",
                b.index, b.input_examples, b.retained_examples, r
            ));
        }
        let overall = self
            .overall()
            .map(|r| format!("{r:.2}"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "total  {:>6}  {:>8}  {:>9}\n",
            self.input_examples(),
            self.retained_examples(),
            overall
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct FilterState {
    passes: u32,
}

fn filter_passes_recorded(dir: &Path) -> u32 {
    fs::read_to_string(dir.join(FILTER_STATE_FILE))
        .ok()
        .and_then(|s| serde_json::from_str::<FilterState>(&s).ok())
        .map(|s| s.passes)
        .unwrap_or(0)
}

/// Batch outputs the filter would read, with token estimates, for `--dry-run`.
pub fn describe_filter_plan(dir: &Path, templates: &Templates) -> Result<String> {
    let files = batch_files(dir, BatchFileKind::Output)?;
    if files.is_empty() {
        return Err(Error::NoBatchOutputs(dir.to_path_buf()));
    }
    let mut out = format!("{} batch outputs\n", files.len());
    for (n, path) in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let line = match templates.build_filter_prompt(&text) {
            Ok(b) => format!("batch {n:>4}  ~{:>9} tokens\n", b.estimated_tokens),
            Err(_) => format!("batch {n:>4}  empty, skipped\n"),
        };
        out.push_str(&line);
    }
    Ok(out)
}

/// Applies the filter prompt to every batch output in `dir`, writing
/// `batch_{n}_filtered.txt`. With more than one pass, later passes filter the
/// previous pass's output.
pub fn run_filter(
    client: &Client,
    templates: &Templates,
    dir: &Path,
    cfg: &RunnerConfig,
) -> Result<RetentionStats> {
    cfg.validate()?;
    let files = batch_files(dir, BatchFileKind::Output)?;
    if files.is_empty() {
        return Err(Error::NoBatchOutputs(dir.to_path_buf()));
    }
    let mut stats = RetentionStats {
        passes: cfg.filter_passes,
        ..RetentionStats::default()
    };
    let mut inputs = Vec::new();
    for (n, path) in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if text.trim().is_empty() {
            log::info!("{} is empty; skipping", path.display());
            stats.skipped_empty.push(n);
            continue;
        }
        let (records, _) = parse_batch_output(&text, n);
        inputs.push((n, records.len(), text));
    }

    let passes = cfg.filter_passes;
    let work = |(n, _, text): &(usize, usize, String)| -> std::result::Result<usize, String> {
        let mut current = text.clone();
        let mut source = output_file_name(*n);
        for pass in 0..passes {
            if pass > 0 && current.trim().is_empty() {
                break;
            }
            let bundle = templates
                .build_filter_prompt(&current)
                .map_err(|e| e.to_string())?
                .with_refs(vec![source.clone()]);
            current = client
                .complete(&bundle, "")
                .map_err(|e| e.to_string())?
                .text;
            source = filtered_file_name(*n);
        }
        write_atomic(&dir.join(filtered_file_name(*n)), current.as_bytes())
            .map_err(|e| e.to_string())?;
        Ok(parse_batch_output(&current, *n).0.len())
    };
    let mut results = Vec::new();
    run_pool(&inputs, client.config().max_inflight, work, |i, r| {
        results.push((i, r))
    });
    results.sort_by_key(|(i, _)| *i);
    for (i, r) in results {
        let (n, input_examples, _) = &inputs[i];
        match r {
            Ok(retained) => stats.batches.push(BatchRetention {
                index: *n,
                input_examples: *input_examples,
                retained_examples: retained,
            }),
            Err(e) => {
                log::error!("filtering batch {n} failed: {e}");
                stats.failed.push((*n, e));
            }
        }
    }
    let state = serde_json::to_string(&FilterState { passes }).expect("state serializes");
    write_atomic(&dir.join(FILTER_STATE_FILE), state.as_bytes())?;
    if !stats.quota_met() {
        log::warn!(
            "filter kept {:.0}% of examples; the prompt asks for at least half to be excluded",
            stats.overall().unwrap_or(0.0) * 100.0
        );
    }
    Ok(stats)
}

/// Parses every batch file of one kind in `dir` into a dataset. The manifest
/// digest comes from the directory's checkpoint when there is one.
pub fn collect_dataset(dir: &Path, kind: BatchFileKind) -> Result<(Dataset, Vec<ParseWarning>)> {
    let files = batch_files(dir, kind)?;
    if files.is_empty() && kind == BatchFileKind::Output {
        return Err(Error::NoBatchOutputs(dir.to_path_buf()));
    }
    let mut ds = Dataset {
        source_manifest_hash: Checkpoint::load(dir)?
            .map(|c| c.manifest_hash)
            .unwrap_or_default(),
        filter_pass_count: match kind {
            BatchFileKind::Output => 0,
            BatchFileKind::Filtered => filter_passes_recorded(dir),
        },
        records: Vec::new(),
    };
    let mut warnings = Vec::new();
    for (n, path) in files {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (recs, warns) = parse_batch_output(&text, n);
        ds.records.extend(recs);
        warnings.extend(warns);
    }
    Ok((ds, warnings))
}

/// The dataset as sent to the model in query mode.
pub fn render_dataset(ds: &Dataset) -> String {
    ds.records
        .iter()
        .map(records::render_record)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub timestamp: String,
    pub dataset: String,
    pub question: String,
    pub answer: String,
}

/// Default transcript location: beside the dataset.
pub fn default_transcript_path(dataset_path: &Path) -> PathBuf {
    let mut name = dataset_path.file_name().unwrap_or_default().to_os_string();
    name.push(".queries.jsonl");
    dataset_path.with_file_name(name)
}

/// Asks `question` about the whole dataset and appends the exchange to
/// `transcript`. Fails with a context overflow when the dataset does not fit
/// one request.
pub fn run_query(
    client: &Client,
    templates: &Templates,
    dataset_path: &Path,
    question: &str,
    transcript: &Path,
) -> Result<String> {
    let ds = records::load_dataset(dataset_path)?;
    let bundle = templates.build_query_prompt(dataset_path, question)?;
    let payload = render_dataset(&ds);
    log::info!(
        "query over {} records, ~{} tokens",
        ds.records.len(),
        bundle.estimated_tokens + estimate_tokens(&payload)
    );
    let answer = client.complete(&bundle, &payload)?.text;
    let entry = TranscriptEntry {
        timestamp: chrono::Utc::now().to_rfc3339(),
        dataset: dataset_path.display().to_string(),
        question: question.to_string(),
        answer: answer.clone(),
    };
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(transcript)
        .map_err(|e| Error::io(transcript, e))?;
    let line = serde_json::to_string(&entry).expect("entry serializes");
    writeln!(f, "{line}").map_err(|e| Error::io(transcript, e))?;
    Ok(answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentRef;
    use crate::prompts::PromptKind;
    use crate::provider::{ProviderConfig, ProviderError, StubTransport};
    use std::sync::Arc;

    fn manifest(n: usize, chars: usize) -> CorpusManifest {
        let docs = (0..n)
            .map(|i| DocumentRef {
                doc_id: format!("d{i:04}"),
                path: PathBuf::from(format!("d{i:04}.pdf")),
                text_path: PathBuf::from(format!("d{i:04}.txt")),
                title: String::new(),
                authors: vec![],
                category_tag: None,
                char_count: chars,
            })
            .collect();
        CorpusManifest::new(docs).unwrap()
    }

    fn cfg(batch_size: usize) -> RunnerConfig {
        RunnerConfig {
            batch_size,
            ..RunnerConfig::default()
        }
    }

    #[test]
    fn remainder_batch() {
        let plan = plan_batches(&manifest(26, 10), &cfg(25), &PlanBudget::unlimited()).unwrap();
        let sizes: Vec<_> = plan.jobs.iter().map(|j| j.doc_ids.len()).collect();
        assert_eq!(sizes, vec![25, 1]);
    }

    #[test]
    fn empty_manifest_rejected() {
        let empty = CorpusManifest::new(vec![]).unwrap();
        assert!(matches!(
            plan_batches(&empty, &cfg(25), &PlanBudget::unlimited()),
            Err(Error::EmptyManifest)
        ));
    }

    #[test]
    fn over_budget_batches_split() {
        // each document is about 300 tokens; 1000 tokens of room fits three
        let budget = PlanBudget {
            prompt_tokens: 100,
            available: 1100,
        };
        let plan = plan_batches(&manifest(10, 1000), &cfg(25), &budget).unwrap();
        assert!(plan.jobs.len() > 1);
        assert!(plan.jobs.iter().all(|j| j.estimated_tokens <= 1100));
        let n: usize = plan.jobs.iter().map(|j| j.doc_ids.len()).sum();
        assert_eq!(n, 10);
    }

    #[test]
    fn oversize_document() {
        let budget = PlanBudget {
            prompt_tokens: 10,
            available: 50,
        };
        let m = manifest(3, 1000);
        match plan_batches(&m, &cfg(25), &budget) {
            Err(Error::OversizeDocument { doc_id, .. }) => assert_eq!(doc_id, "d0000"),
            other => panic!("{other:?}"),
        }
        let mut c = cfg(25);
        c.skip_oversize = true;
        let plan = plan_batches(&m, &c, &budget).unwrap();
        assert!(plan.jobs.is_empty());
        assert_eq!(plan.skipped.len(), 3);
    }

    #[test]
    fn retention_quota_boundary() {
        let mut s = RetentionStats::default();
        s.batches.push(BatchRetention {
            index: 0,
            input_examples: 4,
            retained_examples: 2,
        });
        assert_eq!(s.overall(), Some(0.5));
        assert!(s.quota_met());
        s.batches[0].retained_examples = 4;
        assert!(!s.quota_met());
    }

    #[test]
    fn batch_file_discovery() {
        let dir = tempfile::tempdir().unwrap();
        for name in [
            "batch_10_output.txt",
            "batch_2_output.txt",
            "batch_2_filtered.txt",
            "notes.txt",
        ] {
            fs::write(dir.path().join(name), "x").unwrap();
        }
        let found: Vec<usize> = batch_files(dir.path(), BatchFileKind::Output)
            .unwrap()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(found, vec![2, 10]);
    }

    #[test]
    fn query_overflow_and_transcript() {
        let dir = tempfile::tempdir().unwrap();
        let ds_path = dir.path().join("d.records.jsonl");
        records::save_dataset(&Dataset::default(), &ds_path).unwrap();
        let stub = Arc::new(StubTransport::new());
        stub.insert_fixture(
            PromptKind::Query,
            &[ds_path.display().to_string()],
            "answer",
        );
        let config = ProviderConfig {
            dialect: crate::provider::Dialect::Stub,
            ..ProviderConfig::default()
        };
        let client = Client::new(config.clone(), stub.clone()).unwrap();
        let t = default_transcript_path(&ds_path);
        let templates = Templates::default();
        for _ in 0..2 {
            let a = run_query(&client, &templates, &ds_path, "list tradeoff cases", &t).unwrap();
            assert_eq!(a, "answer");
        }
        assert_eq!(fs::read_to_string(&t).unwrap().lines().count(), 2);

        let tiny = ProviderConfig {
            context_window_tokens: 60,
            max_output_tokens: 10,
            ..config
        };
        let client = Client::new(tiny, stub).unwrap();
        match run_query(&client, &templates, &ds_path, "q", &t) {
            Err(Error::Provider(ProviderError::ContextOverflow {
                required,
                available,
            })) => {
                assert_eq!(available, 50);
                assert!(required > 50);
            }
            other => panic!("{other:?}"),
        }
    }
}
