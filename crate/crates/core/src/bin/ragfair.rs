//! Command-line front end over the `ragfair` library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ragfair::corpus::{default_categories, load_categories, write_corpus};
use ragfair::fsutil::{write_atomic, write_json, write_jsonl};
use ragfair::pipeline::{
    build_dataset, check_endpoints, exit_code, load_report, load_run_config, resume_audit, run_audit,
    validate_config, write_plots, AuditOutcome, Component,
};
use ragfair::retrieval::{build_index, retrieve_for_query, Bm25Retriever, ExternalRetriever, IndexField, Retriever};
use ragfair::synth::{generate_synthetic_corpus, SynthSpec};
use ragfair::{Error, Result};

#[derive(Parser)]
#[command(name = "ragfair", version, about = "Query group fairness audits for RAG pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query set construction.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Synthetic corpora.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// BM25 index construction.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Top-k retrieval for a single query text.
    Retrieve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query: String,
        /// Retriever id from the config; defaults to the first one.
        #[arg(long)]
        retriever: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// End-to-end audits.
    Audit {
        #[command(subcommand)]
        action: AuditAction,
    },
}

#[derive(Subcommand)]
enum DatasetAction {
    /// Writes the sampled query set and its summary.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusAction {
    /// Writes a deterministic synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value = "Synthetic")]
        topic: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Category file; defaults to the built-in categories.
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        body_words: usize,
        /// Category whose groups get different answer shares.
        #[arg(long, requires = "bias_shares")]
        bias_category: Option<String>,
        /// Comma-separated answer share per group, e.g. `1,0`.
        #[arg(long, value_delimiter = ',', requires = "bias_category")]
        bias_shares: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexAction {
    /// Builds the BM25 index over the configured topic's documents.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
    Svg,
}

#[derive(Subcommand)]
enum AuditAction {
    /// Runs an audit, resuming any checkpointed stages of the same run.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Probe external endpoints before starting.
        #[arg(long)]
        check_endpoints: bool,
    },
    /// Resumes the run stored in a run directory.
    Resume {
        #[arg(long)]
        run: PathBuf,
    },
    /// Exports a finished run's report.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        /// Output directory for csv/svg; json goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_outcome(outcome: &AuditOutcome) {
    let stages: Vec<&str> = outcome.stages_run.iter().map(|s| s.name()).collect();
    eprintln!(
        "run {}: stages run [{}], {} generator calls, {} cache hits",
        outcome.run_dir.display(),
        stages.join(", "),
        outcome.generator_calls,
        outcome.cache_hits
    );
    println!("{}", outcome.run_dir.join("report/report.json").display());
}

fn config_file(path: &Path) -> Result<ragfair::pipeline::RunConfig> {
    validate_config(path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset {
            action: DatasetAction::Build { config, out },
        } => {
            let config = config_file(&config)?;
            let dataset = build_dataset(&config)?;
            write_jsonl(&out.join("queries.jsonl"), &dataset.queries)?;
            write_json(&out.join("summary.json"), &dataset.summary)?;
            eprintln!("{} queries written to {}", dataset.queries.len(), out.display());
        }
        Command::Corpus {
            action:
                CorpusAction::Synth {
                    docs,
                    topic,
                    seed,
                    categories,
                    body_words,
                    bias_category,
                    bias_shares,
                    out,
                },
        } => {
            let categories = match categories {
                Some(p) => load_categories(&p)?,
                None => default_categories(),
            };
            let mut spec = SynthSpec::balanced(docs, &topic, categories, seed);
            spec.body_words = body_words;
            if let Some(category) = bias_category {
                spec = spec.with_bias(&category, bias_shares);
            }
            let documents = generate_synthetic_corpus(&spec).map_err(|e| Error::Config(e.to_string()))?;
            write_corpus(&out, &documents)?;
            eprintln!("{} documents written to {}", documents.len(), out.display());
        }
        Command::Index {
            action: IndexAction::Build { config, out },
        } => {
            let config = config_file(&config)?;
            let dataset = build_dataset(&config)?;
            let index = build_index(&dataset.corpus, IndexField::TitleBody)?;
            write_json(&out, &index)?;
            eprintln!("indexed {} documents into {}", index.doc_count(), out.display());
        }
        Command::Retrieve {
            config,
            query,
            retriever,
            k,
        } => {
            let config = config_file(&config)?;
            let component = match retriever {
                Some(id) => config
                    .retrievers
                    .iter()
                    .find(|c| c.id() == id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("retriever {id:?} is not configured")))?,
                None => config.retrievers[0].clone(),
            };
            let dataset = build_dataset(&config)?;
            let retriever: Box<dyn Retriever> = match &component {
                Component::Builtin(_) => Box::new(Bm25Retriever::new(std::sync::Arc::new(build_index(
                    &dataset.corpus,
                    IndexField::TitleBody,
                )?))),
                Component::External(url) => {
                    Box::new(ExternalRetriever::new(component.id(), url, &dataset.corpus, config.retry)?)
                }
            };
            let q = ragfair::corpus::QueryInstance {
                query_id: "cli".into(),
                task: config.task,
                query_text: query,
                ground_truth: String::new(),
                source_doc_id: String::new(),
                labels: Default::default(),
            };
            let list = retrieve_for_query(retriever.as_ref(), &q, k.unwrap_or(config.k), false)?;
            println!("{}", serde_json::to_string_pretty(&list)?);
        }
        Command::Audit {
            action: AuditAction::Run {
                config,
                check_endpoints: probe,
            },
        } => {
            let config = config_file(&config)?;
            if probe {
                check_endpoints(&config)?;
            }
            print_outcome(&run_audit(config)?);
        }
        Command::Audit {
            action: AuditAction::Resume { run },
        } => {
            load_run_config(&run)?;
            print_outcome(&resume_audit(&run)?);
        }
        Command::Audit {
            action: AuditAction::Report { run, format, out },
        } => {
            let report = load_report(&run)?;
            match (format, out) {
                (ReportFormat::Json, None) => print!("{}", report.to_json()?),
                (ReportFormat::Json, Some(dir)) => {
                    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?
                }
                (ReportFormat::Csv, out) => {
                    let dir = out.unwrap_or_else(|| run.join("report"));
                    for p in ragfair::analysis::write_csv_exports(&report, &dir)? {
                        println!("{}", p.display());
                    }
                }
                (ReportFormat::Svg, out) => {
                    let dir = out.unwrap_or_else(|| run.join("report"));
                    for p in write_plots(&report, &dir)? {
                        println!("{}", p.display());
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
