#![allow(dead_code)]

pub mod canonical;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use corpus_annotate::corpus::{ingest, CorpusManifest, IngestOptions};
use corpus_annotate::prompts::PromptKind;
use corpus_annotate::provider::{
    ChatRequest, Client, Dialect, ProviderConfig, StubTransport, TransportError,
};
use corpus_annotate::records::{parse_batch_output, render_record, ExampleRecord};

pub const TAGS: [&str; 5] = ["math.AG", "math.CO", "math.NT", "math.PR", "hep-th"];

pub fn planted(i: usize) -> String {
    format!("The real reason identity {i} holds is that both sides count the same configurations of size {i}.")
}

pub fn second_planted(i: usize) -> String {
    format!("This proof of lemma {i} is short but does not explain why the bound is sharp.")
}

/// Writes `n` tiny PDFs with text sidecars into `dir` and ingests them.
pub fn write_corpus(dir: &Path, n: usize) -> CorpusManifest {
    for i in 0..n {
        let id = format!("paper{i:03}");
        let tag = TAGS[i % TAGS.len()];
        let pdf = format!("%PDF-1.4\n1 0 obj << /Title (Paper number {i}) /Author (A. Author; B. Writer) /Subject ({tag}) >> endobj\n%%EOF\n");
        fs::write(dir.join(format!("{id}.pdf")), pdf).unwrap();
        let text = format!(
            "Paper number {i}\n\nIntroduction. We study configura-\ntions in a setting where the ﬁrst case is easy. {}\n\nSection 2. {}\nMore filler text follows here.\n",
            planted(i),
            second_planted(i)
        );
        fs::write(dir.join(format!("{id}.txt")), text).unwrap();
    }
    let report = ingest(dir, None, &IngestOptions::default()).unwrap();
    assert!(report.skipped.is_empty(), "{:?}", report.skipped);
    report.manifest
}

pub fn record_for(doc_id: &str, i: usize, second: bool) -> ExampleRecord {
    ExampleRecord {
        source_doc_id: doc_id.to_string(),
        title: format!("Paper number {i}"),
        authors: Some("A. Author, B. Writer".into()),
        finding: if second {
            format!("A proof of lemma {i} is called non-explanatory.")
        } else {
            format!("Identity {i} gets a combinatorial explanation.")
        },
        quote: Some(if second {
            second_planted(i)
        } else {
            planted(i)
        }),
        commentary: "The author contrasts proving with explaining.".into(),
        page: Some(1 + i as u32 % 7),
        batch_index: 0,
        verification: None,
        quality_label: None,
    }
}

fn index_of(doc_id: &str) -> usize {
    doc_id.trim_start_matches("paper").parse().unwrap()
}

/// Model output for one batch: two records per document.
pub fn annotation_output(doc_ids: &[String]) -> String {
    let mut out = String::from("Here are the examples I found:\n\n");
    for id in doc_ids {
        let i = index_of(id);
        for second in [false, true] {
            let mut r = record_for(&format!("{id}.pdf"), i, second);
            r.source_doc_id = format!("{id}.pdf");
            out.push_str(&render_record(&r));
            out.push('\n');
        }
    }
    out
}

/// Keeps the first half (rounded down) of the records in the filter payload.
pub fn half_filter(req: &ChatRequest) -> String {
    let start = req.user.find("* **Filename:**").unwrap_or(req.user.len());
    let (records, _) = parse_batch_output(&req.user[start..], 0);
    records[..records.len() / 2]
        .iter()
        .map(render_record)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Answers annotation requests from the synthetic corpus and halves filter inputs.
pub fn synthetic_responder(req: &ChatRequest) -> Result<String, TransportError> {
    match req.kind {
        PromptKind::Annotation => Ok(annotation_output(&req.refs)),
        PromptKind::Filter => Ok(half_filter(req)),
        PromptKind::Query => Ok("answer".into()),
    }
}

pub fn stub_config() -> ProviderConfig {
    ProviderConfig {
        dialect: Dialect::Stub,
        max_inflight: 4,
        backoff_base_ms: 1,
        ..ProviderConfig::default()
    }
}

pub fn stub_client(stub: &Arc<StubTransport>) -> Client {
    Client::new(stub_config(), stub.clone()).unwrap()
}
