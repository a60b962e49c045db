//! Acceptance gate. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails.
//!
//! `cargo test -p corpus-annotate --test acceptance`

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use corpus_annotate::analytics::{
    corpus_distribution, dataset_distribution, prevalence_estimate, richness_table, TierFractions,
};
use corpus_annotate::corpus::{CorpusManifest, DocumentRef};
use corpus_annotate::prompts::{build_annotation_prompt, Templates};
use corpus_annotate::provider::StubTransport;
use corpus_annotate::records::{
    parse_batch_output, parse_dataset, render_record, save_dataset, Dataset, ExampleRecord,
    QualityLabel,
};
use corpus_annotate::runner::{
    collect_dataset, plan_batches, run_annotation, run_filter, BatchFileKind, PlanBudget,
    RunnerConfig,
};
use corpus_annotate::taxonomy::{CategoryTag, SubjectArea, Taxonomy};
use corpus_annotate::verify::{best_match, VerificationResult, DEFAULT_THRESHOLD};

use common::canonical::canonical_records;
use common::*;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn doc(id: String, tag: &str) -> DocumentRef {
    DocumentRef {
        path: PathBuf::from(format!("{id}.pdf")),
        text_path: PathBuf::from(format!("{id}.txt")),
        doc_id: id,
        title: String::new(),
        authors: vec![],
        category_tag: Some(CategoryTag::new(tag)),
        char_count: 40_000,
    }
}

fn batch_plan() -> Result<String, String> {
    let docs = (0..5000)
        .map(|i| doc(format!("p{i:05}"), "math.AG"))
        .collect();
    let manifest = CorpusManifest::new(docs).map_err(|e| e.to_string())?;
    let cfg = RunnerConfig::default();
    ensure(cfg.batch_size == 25, || {
        "default batch size is not 25".into()
    })?;
    let plan =
        plan_batches(&manifest, &cfg, &PlanBudget::unlimited()).map_err(|e| e.to_string())?;
    ensure(plan.jobs.len() == 200, || {
        format!("{} batches", plan.jobs.len())
    })?;
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    for j in &plan.jobs {
        ensure(!j.doc_ids.is_empty() && j.doc_ids.len() <= 25, || {
            format!("batch {} size {}", j.index, j.doc_ids.len())
        })?;
        for id in &j.doc_ids {
            ensure(seen.insert(id.clone()), || format!("{id} in two batches"))?;
            order.push(id.clone());
        }
    }
    let canonical: Vec<String> = manifest
        .documents()
        .iter()
        .map(|d| d.doc_id.clone())
        .collect();
    ensure(order == canonical, || {
        "batches do not cover the manifest in order".into()
    })?;
    Ok("200 disjoint covering batches".into())
}

/// Published subject-area percentages (corpus C, dataset D) and coefficients.
const PUBLISHED_TABLE: [(SubjectArea, f64, f64, &str); 8] = [
    (SubjectArea::Geometry, 33.5, 35.6, "1.06"),
    (SubjectArea::Algebra, 24.2, 23.9, "0.99"),
    (SubjectArea::Analysis, 14.3, 14.3, "1.00"),
    (SubjectArea::Topology, 10.2, 9.0, "0.88"),
    (SubjectArea::Combinatorics, 5.2, 6.2, "1.19"),
    (SubjectArea::NumberTheory, 3.8, 3.5, "0.92"),
    (SubjectArea::ProbabilityStatistics, 3.0, 2.3, "0.77"),
    (SubjectArea::LogicSetTheory, 1.9, 2.5, "1.32"),
];

fn tag_for(area: SubjectArea) -> &'static str {
    match area {
        SubjectArea::Geometry => "math.DG",
        SubjectArea::Algebra => "math.RT",
        SubjectArea::Analysis => "math.FA",
        SubjectArea::Topology => "math.GT",
        SubjectArea::Combinatorics => "math.CO",
        SubjectArea::NumberTheory => "math.NT",
        SubjectArea::ProbabilityStatistics => "math.PR",
        SubjectArea::LogicSetTheory => "math.LO",
        SubjectArea::Other => "hep-th",
    }
}

fn richness() -> Result<String, String> {
    // The oracle: the published percentages divided directly.
    for (area, c, d, printed) in PUBLISHED_TABLE {
        let oracle = format!("{:.2}", d / c);
        ensure(oracle == printed, || {
            format!("{area:?}: {oracle} vs printed {printed}")
        })?;
    }

    // A corpus of 10,000 papers realizing C, of which 1,000 contribute,
    // realizing D. Counts are the percentages per thousand, times ten for C.
    let mut docs = Vec::new();
    let mut contributors = Vec::new();
    let mut c_named = 0;
    let mut d_named = 0;
    let mut n = 0;
    let mut add =
        |area: SubjectArea, c_count: usize, d_count: usize, docs: &mut Vec<DocumentRef>| {
            for k in 0..c_count {
                let id = format!("x{n:05}");
                n += 1;
                if k < d_count {
                    contributors.push(id.clone());
                }
                docs.push(doc(id, tag_for(area)));
            }
        };
    for (area, c, d, _) in PUBLISHED_TABLE {
        let (cc, dc) = ((c * 100.0).round() as usize, (d * 10.0).round() as usize);
        c_named += cc;
        d_named += dc;
        add(area, cc, dc, &mut docs);
    }
    add(
        SubjectArea::Other,
        10_000 - c_named,
        1000 - d_named,
        &mut docs,
    );
    let manifest = CorpusManifest::new(docs).map_err(|e| e.to_string())?;
    let dataset = Dataset {
        records: contributors
            .iter()
            .flat_map(|id| {
                // each contributor appears twice; distinct counting must ignore that
                let r = ExampleRecord {
                    source_doc_id: id.clone(),
                    title: String::new(),
                    authors: None,
                    finding: "f".into(),
                    quote: Some("q".into()),
                    commentary: String::new(),
                    page: None,
                    batch_index: 0,
                    verification: None,
                    quality_label: None,
                };
                [r.clone(), r]
            })
            .collect(),
        ..Dataset::default()
    };
    let tax = Taxonomy::default();
    let c = corpus_distribution(&manifest, &tax).map_err(|e| e.to_string())?;
    let d = dataset_distribution(&dataset, &manifest, &tax);
    ensure(d.unresolved.is_empty(), || "unresolved contributors".into())?;
    let rows = richness_table(&c, &d.table);
    ensure(rows.len() == 8, || format!("{} rows", rows.len()))?;
    let mut shown = Vec::new();
    for (row, (area, cp, dp, printed)) in rows.iter().zip(PUBLISHED_TABLE) {
        ensure(row.area == area, || format!("row order: {:?}", row.area))?;
        ensure((row.corpus_share - cp / 100.0).abs() <= 1e-3, || {
            format!("{area:?} C {}", row.corpus_share)
        })?;
        ensure((row.dataset_share - dp / 100.0).abs() <= 1e-3, || {
            format!("{area:?} D {}", row.dataset_share)
        })?;
        let got = row.coefficient_display();
        ensure(got == printed, || format!("{area:?}: {got} vs {printed}"))?;
        shown.push(got);
    }
    Ok(shown.join(" "))
}

fn prevalence() -> Result<String, String> {
    let tiers = TierFractions::default();
    ensure(
        tiers
            == TierFractions {
                high: 0.20,
                borderline: 0.60,
                low: 0.20,
            },
        || "tier defaults".into(),
    )?;
    let p = prevalence_estimate(735, 5000, tiers).map_err(|e| e.to_string())?;
    let (clear, border) = (p.clear_rate * 100.0, p.borderline_or_better_rate * 100.0);
    ensure((clear - 3.0).abs() <= 0.5, || format!("clear {clear}%"))?;
    ensure((border - 12.0).abs() <= 0.5, || {
        format!("borderline {border}%")
    })?;
    ensure((p.clear_rate - 0.0294).abs() < 1e-12, || {
        format!("clear {}", p.clear_rate)
    })?;
    ensure((p.borderline_or_better_rate - 0.1176).abs() < 1e-12, || {
        format!("borderline {}", p.borderline_or_better_rate)
    })?;
    Ok(format!(
        "{clear:.2}% clear, {border:.2}% borderline or better"
    ))
}

/// The grouping as printed in the footnote.
const FOOTNOTE: [(&str, SubjectArea); 25] = [
    ("math.AG", SubjectArea::Geometry),
    ("math.DG", SubjectArea::Geometry),
    ("math.MG", SubjectArea::Geometry),
    ("math.SG", SubjectArea::Geometry),
    ("math.AC", SubjectArea::Algebra),
    ("math.CT", SubjectArea::Algebra),
    ("math.GR", SubjectArea::Algebra),
    ("math.OA", SubjectArea::Algebra),
    ("math.QA", SubjectArea::Algebra),
    ("math.RA", SubjectArea::Algebra),
    ("math.RT", SubjectArea::Algebra),
    ("math.AP", SubjectArea::Analysis),
    ("math.CA", SubjectArea::Analysis),
    ("math.CV", SubjectArea::Analysis),
    ("math.DS", SubjectArea::Analysis),
    ("math.FA", SubjectArea::Analysis),
    ("math.NA", SubjectArea::Analysis),
    ("math.AT", SubjectArea::Topology),
    ("math.GN", SubjectArea::Topology),
    ("math.GT", SubjectArea::Topology),
    ("math.CO", SubjectArea::Combinatorics),
    ("math.NT", SubjectArea::NumberTheory),
    ("math.PR", SubjectArea::ProbabilityStatistics),
    ("math.ST", SubjectArea::ProbabilityStatistics),
    ("math.LO", SubjectArea::LogicSetTheory),
];

fn taxonomy() -> Result<String, String> {
    let tax = Taxonomy::default();
    for (tag, area) in FOOTNOTE {
        let got = tax.classify(&CategoryTag::new(tag));
        ensure(got == area, || {
            format!("{tag} -> {got:?}, expected {area:?}")
        })?;
    }
    let others = [
        "math.HO", "math.GM", "math.KT", "math.OC", "math.SP", "math.IT", "math.MP", "math-ph",
        "hep-th", "cs.LG", "stat.ML", "Unknown", "", "geometry",
    ];
    for tag in others {
        let got = tax.classify(&CategoryTag::new(tag));
        ensure(got == SubjectArea::Other, || format!("{tag:?} -> {got:?}"))?;
    }
    Ok(format!(
        "{} footnote tags grouped, {} others -> Other",
        FOOTNOTE.len(),
        others.len()
    ))
}

fn end_to_end() -> Result<String, String> {
    let corpus = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_corpus(corpus.path(), 50);
    let bundle = build_annotation_prompt(None).map_err(|e| e.to_string())?;
    let stub = Arc::new(StubTransport::new().with_responder(synthetic_responder));
    let client = stub_client(&stub);
    let cfg = RunnerConfig {
        batch_size: 25,
        output_dir: out.path().to_path_buf(),
        ..RunnerConfig::default()
    };
    let mut plan = plan_batches(&manifest, &cfg, &PlanBudget::for_client(&client, &bundle))
        .map_err(|e| e.to_string())?;
    let summary =
        run_annotation(&client, &manifest, &mut plan, &bundle, &cfg).map_err(|e| e.to_string())?;
    ensure(!summary.has_failures(), || format!("{:?}", summary.failed))?;
    let files = corpus_annotate::runner::batch_files(out.path(), BatchFileKind::Output)
        .map_err(|e| e.to_string())?;
    ensure(files.len() == 2, || format!("{} batch files", files.len()))?;

    let (ds, _) = collect_dataset(out.path(), BatchFileKind::Output).map_err(|e| e.to_string())?;
    ensure(ds.records.len() == 100, || {
        format!("{} records parsed, fixture has 100", ds.records.len())
    })?;

    let stats =
        run_filter(&client, &Templates::default(), out.path(), &cfg).map_err(|e| e.to_string())?;
    ensure(stats.overall() == Some(0.5), || {
        format!("retention {:?}", stats.overall())
    })?;

    let before = stub.calls();
    let resumed = RunnerConfig {
        resume: true,
        ..cfg
    };
    let mut plan =
        plan_batches(&manifest, &resumed, &PlanBudget::unlimited()).map_err(|e| e.to_string())?;
    run_annotation(&client, &manifest, &mut plan, &bundle, &resumed).map_err(|e| e.to_string())?;
    let extra = stub.calls() - before;
    ensure(extra == 0, || format!("resume made {extra} calls"))?;
    Ok(format!(
        "2 batches, {} records, retention 0.50, 0 calls on resume",
        ds.records.len()
    ))
}

const WORDS: [&str; 24] = [
    "group", "ring", "module", "proof", "lemma", "space", "map", "orbit", "class", "field",
    "prime", "bound", "sum", "series", "graph", "cycle", "measure", "limit", "norm", "ideal",
    "sheaf", "fiber", "curve", "root",
];

fn prose(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn check(quote: &str, doc: &str, threshold: f64) -> Result<VerificationResult, String> {
    best_match(quote, doc, threshold).map_err(|e| e.to_string())
}

fn verifier() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let planted_n = 40;
    for i in 0..planted_n {
        let quote = format!(
            "The deeper reason for fact {i} is that the {} explains the {}.",
            prose(&mut rng, 4),
            prose(&mut rng, 3)
        );
        let doc = format!(
            "{} {} {}",
            prose(&mut rng, 400),
            quote,
            prose(&mut rng, 400)
        );
        let r = check(&quote, &doc, DEFAULT_THRESHOLD)?;
        ensure(r.matched && r.similarity == 1.0, || {
            format!("planted quote {i} scored {}", r.similarity)
        })?;
    }
    let fabricated_n = 40;
    for i in 0..fabricated_n {
        let doc = prose(&mut rng, 800);
        let quote = format!(
            "Remarkably, theorem {i} admits a purely conceptual explanation via {}",
            prose(&mut rng, 5)
        );
        let r = check(&quote, &doc, DEFAULT_THRESHOLD)?;
        ensure(!r.matched, || {
            format!("fabricated quote {i} accepted at {}", r.similarity)
        })?;
    }

    let fixtures = [
        (
            "A careful analysis of the configurations shows the first case.",
            "Intro. A care-\nful analy-\n  sis of the configura-\ntions shows the ﬁrst case. More.",
        ),
        (
            "The eﬃcient proof is ﬂawless",
            "We see that the efficient proof is flawless here.",
        ),
        (
            "the effective field theory",
            "so the eﬀective ﬁeld theory\r\nworks",
        ),
        ("non-trivial results", "obtaining non-\ntrivial results"),
        ("words joined here", "words jo\u{00AD}ined here"),
    ];
    for (quote, doc) in fixtures {
        let r = check(quote, doc, DEFAULT_THRESHOLD)?;
        ensure(r.matched, || format!("{quote:?} scored {}", r.similarity))?;
    }

    // Each step replaces one more quote character by a symbol that never
    // occurs in the document; similarity must never rise.
    let trials = 100;
    for t in 0..trials {
        let base = prose(&mut rng, 12);
        let doc = format!("{} {} {}", prose(&mut rng, 60), base, prose(&mut rng, 60));
        let mut quote: Vec<char> = base.chars().collect();
        let mut positions: Vec<usize> = (0..quote.len()).filter(|&p| quote[p] != ' ').collect();
        let steps = 8;
        let mut last = 1.0f64;
        for k in 0..=steps {
            if k > 0 {
                let p = positions.swap_remove(rng.random_range(0..positions.len()));
                quote[p] = '#';
            }
            let q: String = quote.iter().collect();
            let s = check(&q, &doc, 1e-9)?.similarity;
            ensure(s <= last + 1e-12, || {
                format!("trial {t}: similarity rose from {last} to {s} at step {k}")
            })?;
            let floor = 1.0 - k as f64 / quote.len() as f64;
            ensure(s + 1e-12 >= floor, || {
                format!("trial {t}: {s} below {floor} at step {k}")
            })?;
            last = s;
        }
    }
    Ok(format!(
        "{planted_n}/{planted_n} planted verified, {fabricated_n}/{fabricated_n} fabricated rejected, {} normalization fixtures, {trials} corruption trials",
        fixtures.len()
    ))
}

fn parser_round_trip() -> Result<String, String> {
    let records = canonical_records();
    ensure(records.len() == 20, || {
        format!("{} fixtures", records.len())
    })?;
    for (i, r) in records.iter().enumerate() {
        let (back, _) = parse_batch_output(&render_record(r), r.batch_index);
        ensure(back.len() == 1, || {
            format!("fixture {i}: {} records", back.len())
        })?;
        ensure(&back[0] == r, || {
            format!("fixture {i}: {:?} != {:?}", back[0], r)
        })?;
    }
    let all: String = records
        .iter()
        .map(render_record)
        .collect::<Vec<_>>()
        .join("\n");
    let (back, _) = parse_batch_output(&all, 0);
    ensure(back == records, || {
        format!("concatenated: {} records back", back.len())
    })?;
    Ok("20/20 fixtures".into())
}

fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![
        ".{0,40}",
        "\\PC{0,20}",
        Just(String::new()),
        "[\"\n\t\\\\{}]{0,6}"
    ]
}

fn arb_record() -> impl Strategy<Value = ExampleRecord> {
    let verification = prop::option::of((
        any::<bool>(),
        0.0f64..=1.0,
        prop::option::of((0usize..10_000, 0usize..10_000)),
        0.5f64..=1.0,
    ))
    .prop_map(|v| {
        v.map(
            |(matched, similarity, span, threshold_used)| VerificationResult {
                matched,
                similarity,
                span_start: span.map(|s| s.0),
                span_end: span.map(|s| s.1),
                threshold_used,
            },
        )
    });
    let label = prop::option::of(prop_oneof![
        Just(QualityLabel::High),
        Just(QualityLabel::Borderline),
        Just(QualityLabel::Low)
    ]);
    (
        (
            arb_text(),
            arb_text(),
            prop::option::of(arb_text()),
            arb_text(),
        ),
        (
            prop::option::of(arb_text()),
            arb_text(),
            prop::option::of(any::<u32>()),
            any::<usize>(),
        ),
        verification,
        label,
    )
        .prop_map(
            |((s, t, a, f), (q, c, p, b), verification, quality_label)| ExampleRecord {
                source_doc_id: s,
                title: t,
                authors: a,
                finding: f,
                quote: q,
                commentary: c,
                page: p,
                batch_index: b,
                verification,
                quality_label,
            },
        )
}

fn persistence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("ds.records.jsonl");
    let strategy = (
        prop::collection::vec(arb_record(), 0..=2000),
        "[0-9a-f]{0,64}",
        0u32..5,
    );
    let mut runner = TestRunner::new(Config {
        cases: 24,
        failure_persistence: None,
        ..Config::default()
    });
    let largest = std::cell::Cell::new(0);
    let outcome = runner.run(&strategy, |(records, hash, passes)| {
        largest.set(largest.get().max(records.len()));
        let ds = Dataset {
            records,
            source_manifest_hash: hash,
            filter_pass_count: passes,
        };
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back = parse_dataset(&text, &path).unwrap();
        prop_assert_eq!(back, ds);
        Ok(())
    });
    outcome.map_err(|e| e.to_string())?;

    // the upper end of the range, explicitly
    let mut rng = TestRunner::deterministic();
    let records = prop::collection::vec(arb_record(), 2000)
        .new_tree(&mut rng)
        .map_err(|e| e.to_string())?
        .current();
    let ds = Dataset {
        records,
        source_manifest_hash: "f".repeat(64),
        filter_pass_count: 1,
    };
    save_dataset(&ds, &path).map_err(|e| e.to_string())?;
    let back = corpus_annotate::records::load_dataset(&path).map_err(|e| e.to_string())?;
    ensure(back == ds, || {
        "2000-record dataset differs after reload".into()
    })?;
    Ok(format!(
        "24 random datasets (largest {}) and one of 2000 records",
        largest.get()
    ))
}

fn main() {
    let criteria: [(&str, Duration, Check); 8] = [
        (
            "batch plan reproduction",
            Duration::from_secs(1),
            batch_plan,
        ),
        (
            "richness table reproduction",
            Duration::from_secs(1),
            richness,
        ),
        (
            "prevalence reproduction",
            Duration::from_secs(1),
            prevalence,
        ),
        ("taxonomy table", Duration::from_secs(1), taxonomy),
        ("offline end-to-end", Duration::from_secs(10), end_to_end),
        ("verifier suite", Duration::from_secs(30), verifier),
        (
            "parser round-trip",
            Duration::from_secs(1),
            parser_round_trip,
        ),
        (
            "persistence round-trip",
            Duration::from_secs(5),
            persistence,
        ),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {elapsed:>10.2?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<30} {elapsed:>10.2?}  {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
