//! `corpus-annotate`: ingest → sample → annotate → filter → parse → verify →
//! stats → query, one subcommand per step.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use corpus_annotate::analytics::{emit_report, Report, TierFractions};
use corpus_annotate::corpus::{self, CorpusManifest, IngestOptions};
use corpus_annotate::prompts::{ContextAsset, PromptBundle, PromptKind, Templates};
use corpus_annotate::provider::{Client, Dialect};
use corpus_annotate::records::{self, load_dataset, load_dataset_checked, save_dataset};
use corpus_annotate::runner::{self, BatchFileKind, PlanBudget};
use corpus_annotate::taxonomy::Taxonomy;
use corpus_annotate::verify;

use config::{GlobalConfig, CONFIG_ENV};

/// Partial batch failure: some batches finished, others did not.
const EXIT_PARTIAL: u8 = 2;
const EXIT_USER: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "corpus-annotate",
    version,
    about = "Annotate a document corpus with a language model"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory of prompt section files overriding the built-in templates.
    #[arg(long, global = true, value_name = "DIR")]
    prompts_dir: Option<PathBuf>,

    #[command(flatten)]
    provider: ProviderFlags,

    #[command(subcommand)]
    command: Command,
}

/// Overrides for the `[provider]` table.
#[derive(Debug, Args)]
#[command(next_help_heading = "Provider")]
struct ProviderFlags {
    /// gemini, openai or stub.
    #[arg(long, global = true)]
    dialect: Option<Dialect>,
    #[arg(long, global = true, value_name = "URL")]
    base_url: Option<String>,
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long, global = true, value_name = "VAR")]
    api_key_env: Option<String>,
    #[arg(long, global = true, value_name = "TOKENS")]
    context_window: Option<u64>,
    #[arg(long, global = true, value_name = "TOKENS")]
    max_output_tokens: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    max_retries: Option<u32>,
    #[arg(long, global = true, value_name = "MS")]
    backoff_ms: Option<u64>,
    /// Concurrent requests in flight.
    #[arg(long, global = true, value_name = "N")]
    max_inflight: Option<usize>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Send persona and instructions as a system message.
    #[arg(long, global = true)]
    system_message: Option<bool>,
    #[arg(long, global = true, value_name = "SECS")]
    timeout_secs: Option<u64>,
    /// Fixture directory for the stub dialect.
    #[arg(long, global = true, value_name = "DIR")]
    stub_fixtures: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a manifest from a directory of PDFs with text sidecars.
    Ingest {
        #[arg(long, value_name = "DIR")]
        source: PathBuf,
        /// JSONL metadata keyed by document id.
        #[arg(long, value_name = "FILE")]
        metadata: Option<PathBuf>,
        /// Command producing text for a PDF; `{pdf}` and `{txt}` are substituted.
        #[arg(long, value_name = "CMD")]
        extract_command: Option<String>,
        #[arg(long, value_name = "MANIFEST")]
        out: PathBuf,
    },
    /// Draw a reproducible random subset of a manifest.
    Sample {
        #[arg(long, value_name = "MANIFEST")]
        manifest: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_name = "MANIFEST")]
        out: PathBuf,
    },
    /// Send the corpus to the model in batches.
    Annotate {
        #[arg(long, value_name = "MANIFEST")]
        manifest: PathBuf,
        /// Run directory for batch outputs and the checkpoint.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Continue a run from its checkpoint.
        #[arg(long)]
        resume: bool,
        /// Print the batch plan and token estimates without calling the model.
        #[arg(long)]
        dry_run: bool,
        /// Background text appended to the annotation prompt.
        #[arg(long, value_name = "FILE")]
        context: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        batch_size: Option<usize>,
        /// Leave out documents too large for the window instead of failing.
        #[arg(long)]
        skip_oversize: bool,
        #[command(flatten)]
        audit: AuditFlag,
    },
    /// Run the quality filter over each batch output.
    Filter {
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
        /// Print the files and token estimates without calling the model.
        #[arg(long)]
        dry_run: bool,
        #[arg(long, value_name = "N")]
        passes: Option<u32>,
        #[command(flatten)]
        audit: AuditFlag,
    },
    /// Parse batch outputs into a dataset file.
    Parse {
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
        /// Read `batch_N_filtered.txt` instead of the raw outputs.
        #[arg(long)]
        filtered: bool,
        /// Drop repeated (source, quote, finding) records.
        #[arg(long)]
        dedupe: bool,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Check every quote against its source text.
    Verify {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "MANIFEST")]
        manifest: PathBuf,
        /// Minimum similarity for a match, in (0, 1].
        #[arg(long)]
        threshold: Option<f64>,
        /// Write the dataset with verification results attached.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Write the summary as JSON.
        #[arg(long, value_name = "FILE")]
        summary: Option<PathBuf>,
    },
    /// Subject-area distributions, richness and prevalence.
    Stats {
        #[arg(long, value_name = "MANIFEST")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Directory for report.txt and report.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Quality tier fractions as `high,borderline,low`.
        #[arg(long, value_name = "H,B,L")]
        tiers: Option<TierFractions>,
        /// TOML file overriding the tag table.
        #[arg(long, value_name = "FILE")]
        taxonomy: Option<PathBuf>,
    },
    /// Ask a question about a dataset.
    Query {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long)]
        question: String,
        /// Where to append the exchange; defaults to `<dataset>.queries.jsonl`.
        #[arg(long, value_name = "FILE")]
        transcript: Option<PathBuf>,
        #[command(flatten)]
        audit: AuditFlag,
    },
    /// Render a dataset as a Markdown document.
    Export {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long)]
        dedupe: bool,
    },
    /// Inspect the prompt templates.
    Prompts {
        #[command(subcommand)]
        action: PromptsAction,
    },
}

#[derive(Debug, Args)]
struct AuditFlag {
    /// Append a redacted JSON line per provider call to this file.
    #[arg(long, value_name = "FILE")]
    audit: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum PromptsAction {
    /// Print an assembled prompt, or write the template files.
    Show {
        /// annotation, filter or query.
        #[arg(long, default_value = "annotation")]
        kind: PromptKind,
        /// Background text to include in the annotation prompt.
        #[arg(long, value_name = "FILE")]
        context: Option<PathBuf>,
        /// Write every section file under this directory instead.
        #[arg(long, value_name = "DIR")]
        write: Option<PathBuf>,
    },
}

impl ProviderFlags {
    fn apply(&self, cfg: &mut GlobalConfig) {
        let p = &mut cfg.provider;
        macro_rules! set {
            ($flag:ident => $field:ident) => {
                if let Some(v) = &self.$flag {
                    p.$field = v.clone();
                }
            };
        }
        set!(dialect => dialect);
        set!(base_url => base_url);
        set!(model => model_name);
        set!(api_key_env => api_key_env);
        set!(context_window => context_window_tokens);
        set!(max_output_tokens => max_output_tokens);
        set!(max_retries => max_retries);
        set!(backoff_ms => backoff_base_ms);
        set!(max_inflight => max_inflight);
        set!(temperature => temperature);
        set!(system_message => system_message);
        set!(timeout_secs => request_timeout_secs);
        if let Some(d) = &self.stub_fixtures {
            p.stub_fixtures = Some(d.clone());
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USER)
        }
    }
}

fn templates(cfg: &GlobalConfig) -> Result<Templates> {
    Ok(match &cfg.prompts_dir {
        Some(dir) => Templates::load_dir(dir)?,
        None => Templates::default(),
    })
}

fn client(cfg: &GlobalConfig, audit: &AuditFlag) -> Result<Client> {
    let mut client = Client::from_config(cfg.provider.clone())?;
    if let Some(path) = &audit.audit {
        client = client
            .with_audit(path)
            .with_context(|| format!("opening audit file {}", path.display()))?;
    }
    Ok(client)
}

fn context_asset(path: Option<&Path>) -> Result<Option<ContextAsset>> {
    path.map(|p| {
        let desc = p
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        ContextAsset::open(p, desc)
    })
    .transpose()
    .map_err(Into::into)
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = GlobalConfig::resolve(cli.config.as_deref())?;
    cli.provider.apply(&mut cfg);
    if let Some(dir) = cli.prompts_dir {
        cfg.prompts_dir = Some(dir);
    }

    match cli.command {
        Command::Ingest {
            source,
            metadata,
            extract_command,
            out,
        } => {
            let opts = IngestOptions { extract_command };
            let report = corpus::ingest(&source, metadata.as_deref(), &opts)?;
            for s in &report.skipped {
                log::warn!("skipped {}: {}", s.doc_id, s.reason);
            }
            report.manifest.save(&out)?;
            println!(
                "{} documents, {} skipped, manifest {}",
                report.manifest.len(),
                report.skipped.len(),
                report.manifest.digest()
            );
        }

        Command::Sample {
            manifest,
            n,
            seed,
            out,
        } => {
            let m = CorpusManifest::load(&manifest)?;
            let sampled = corpus::sample(&m, n, seed)?;
            sampled.save(&out)?;
            println!(
                "{} of {} documents, seed {seed}, manifest {}",
                sampled.len(),
                m.len(),
                sampled.digest()
            );
        }

        Command::Annotate {
            manifest,
            out,
            resume,
            dry_run,
            context,
            batch_size,
            skip_oversize,
            audit,
        } => {
            if let Some(dir) = out {
                cfg.runner.output_dir = dir;
            }
            if let Some(n) = batch_size {
                cfg.runner.batch_size = n;
            }
            cfg.runner.resume |= resume;
            cfg.runner.skip_oversize |= skip_oversize;

            let m = CorpusManifest::load(&manifest)?;
            let asset = context_asset(context.as_deref())?;
            let bundle = templates(&cfg)?.build_annotation_prompt(asset.as_ref())?;
            // Budgeted from the config alone so a dry run needs no credentials.
            let budget = PlanBudget {
                prompt_tokens: bundle.estimated_tokens,
                available: cfg.provider.input_budget(),
            };
            let mut plan = runner::plan_batches(&m, &cfg.runner, &budget)?;
            if dry_run {
                print!("{}", plan.describe(&budget));
                return Ok(0);
            }
            let client = client(&cfg, &audit)?;
            let summary = runner::run_annotation(&client, &m, &mut plan, &bundle, &cfg.runner)?;
            println!(
                "{} batches done ({} resumed), {} failed; {} calls, {} input / {} output tokens",
                summary.completed.len() + summary.resumed.len(),
                summary.resumed.len(),
                summary.failed.len(),
                summary.usage.calls,
                summary.usage.input_tokens,
                summary.usage.output_tokens
            );
            for (index, err) in &summary.failed {
                eprintln!("batch {index} failed: {err}");
            }
            if summary.has_failures() {
                return Ok(EXIT_PARTIAL);
            }
        }

        Command::Filter {
            dir,
            dry_run,
            passes,
            audit,
        } => {
            if let Some(n) = passes {
                cfg.runner.filter_passes = n;
            }
            let t = templates(&cfg)?;
            if dry_run {
                print!("{}", runner::describe_filter_plan(&dir, &t)?);
                return Ok(0);
            }
            let client = client(&cfg, &audit)?;
            let stats = runner::run_filter(&client, &t, &dir, &cfg.runner)?;
            print!("{}", stats.to_table());
            if !stats.quota_met() {
                log::warn!("the filter kept more than half of the examples");
            }
            for (index, err) in &stats.failed {
                eprintln!("batch {index} failed: {err}");
            }
            if !stats.failed.is_empty() {
                return Ok(EXIT_PARTIAL);
            }
        }

        Command::Parse {
            dir,
            filtered,
            dedupe,
            out,
        } => {
            let kind = if filtered {
                BatchFileKind::Filtered
            } else {
                BatchFileKind::Output
            };
            let (mut ds, warnings) = runner::collect_dataset(&dir, kind)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            if dedupe {
                ds = records::dedupe(&ds);
            }
            save_dataset(&ds, &out)?;
            println!("{} records, {} warnings", ds.records.len(), warnings.len());
        }

        Command::Verify {
            dataset,
            manifest,
            threshold,
            out,
            summary,
        } => {
            let threshold = threshold.unwrap_or(cfg.threshold);
            let m = CorpusManifest::load(&manifest)?;
            let (ds, warnings) = load_dataset_checked(&dataset, &m)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            let (checked, report) = verify::verify_dataset(&ds, &m, threshold)?;
            print!("{}", report.to_table());
            if let Some(path) = out {
                save_dataset(&checked, &path)?;
            }
            if let Some(path) = summary {
                let json = serde_json::to_string_pretty(&report)?;
                fs::write(&path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }

        Command::Stats {
            manifest,
            dataset,
            out,
            tiers,
            taxonomy,
        } => {
            let tiers = tiers.unwrap_or(cfg.tiers);
            let tax = match taxonomy.or(cfg.taxonomy) {
                Some(path) => Taxonomy::from_file(&path)?,
                None => Taxonomy::default(),
            };
            let m = CorpusManifest::load(&manifest)?;
            let (ds, warnings) = load_dataset_checked(&dataset, &m)?;
            for w in &warnings {
                log::warn!("{w}");
            }
            let report = Report::build(&m, &ds, &tax, tiers)?;
            let (txt, csv) = emit_report(&report, &out)?;
            print!("{}", report.render_text());
            log::info!("wrote {} and {}", txt.display(), csv.display());
        }

        Command::Query {
            dataset,
            question,
            transcript,
            audit,
        } => {
            let transcript =
                transcript.unwrap_or_else(|| runner::default_transcript_path(&dataset));
            let t = templates(&cfg)?;
            let client = client(&cfg, &audit)?;
            let answer = runner::run_query(&client, &t, &dataset, &question, &transcript)?;
            println!("{answer}");
        }

        Command::Export {
            dataset,
            out,
            dedupe,
        } => {
            let mut ds = load_dataset(&dataset)?;
            if dedupe {
                ds = records::dedupe(&ds);
            }
            fs::write(&out, records::export_document(&ds))
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{} records exported", ds.records.len());
        }

        Command::Prompts {
            action:
                PromptsAction::Show {
                    kind,
                    context,
                    write,
                },
        } => {
            let t = templates(&cfg)?;
            if let Some(dir) = write {
                t.write_dir(&dir)?;
                println!("templates written to {}", dir.display());
                return Ok(0);
            }
            let bundle = match kind {
                PromptKind::Annotation => {
                    let asset = context_asset(context.as_deref())?;
                    t.build_annotation_prompt(asset.as_ref())?
                }
                _ if context.is_some() => bail!("--context applies only to the annotation prompt"),
                PromptKind::Filter => {
                    PromptBundle::new(kind, "", t.filter_body.clone(), None, "<batch output>")
                }
                PromptKind::Query => PromptBundle::new(
                    kind,
                    "",
                    format!("{}\n\n<question>", t.query_framing),
                    None,
                    "",
                ),
            };
            println!("{}", bundle.render());
            eprintln!("~{} tokens", bundle.estimated_tokens);
        }
    }
    Ok(0)
}
