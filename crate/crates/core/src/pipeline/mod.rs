//! End-to-end audit runs: dataset, index, retrieve, generate, attribute and
//! report stages over a checkpointed run directory.
//!
//! Layout under `<runs_dir>/<run_id>/`:
//!
//! ```text
//! config.json              resolved configuration
//! ledger.json              stage checkpoints, artifact hashes, timestamps
//! dataset/queries.jsonl    dataset/summary.json
//! index/bm25.json
//! retrieve/<retriever>.jsonl   retrieve/failures.json
//! generate/llm_only.jsonl  generate/rag_<retriever>.jsonl
//! generate/single_doc_<retriever>.jsonl   generate/failures.json
//! attribute/<retriever>.jsonl  attribute/failures.json
//! report/report.json  report/*.csv  report/*.svg
//! cache/generations.jsonl  replay cache (unless configured elsewhere)
//! ```
//!
//! Every artifact is written to a temp file and renamed into place, and a
//! stage is checkpointed only after all of its artifacts exist. Rerunning a
//! run skips checkpointed stages.

mod config;
mod ledger;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    check_endpoints, resolve, validate_config, Component, DecodingOverrides, RawConfig, RunConfig,
    GENERATOR_URL_ENV, NLI_URL_ENV,
};
pub use ledger::{RunLedger, Stage, StageCheckpoint, LEDGER_FILE};

use crate::analysis::{
    build_report, correlation_heatmap_svg, range_bars_svg, write_csv_exports, AuditReport, ReportMeta,
    RetrieverLedgers, RunLedgers,
};
use crate::attribution::{attribute, AttributionOracle, AttributionVerdict, MockOracle, NliOracle};
use crate::corpus::{
    build_queries, filter_documents, load_corpus_with_stats, sample_representatives, Corpus, ParseMode,
    QueryInstance,
};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::generation::{
    run_setting, CachedGenerator, Failure, GenerationCache, GenerationRecord, Generator, HttpGenerator,
    MockGenerator, SettingKind,
};
use crate::retrieval::{
    build_index, retrieve_for_query, Bm25Retriever, ExternalRetriever, IndexField, InvertedIndex, RankedList,
    Retriever,
};

/// Counts written to `dataset/summary.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub loaded_documents: usize,
    pub skipped_lines: Vec<usize>,
    pub filtered_documents: usize,
    pub topic_documents: usize,
    pub representatives: usize,
    pub queries: usize,
}

/// The topic corpus and query set for a configuration.
pub struct Dataset {
    pub corpus: Corpus,
    pub queries: Vec<QueryInstance>,
    pub summary: DatasetSummary,
}

/// Loads, filters and samples. The retrieval corpus is the filtered set of
/// documents of the configured topic.
pub fn build_dataset(config: &RunConfig) -> Result<Dataset> {
    let mode = if config.strict_parsing {
        ParseMode::Strict
    } else {
        ParseMode::Lenient
    };
    let loaded = load_corpus_with_stats(&config.corpus, &config.categories, mode)?;
    let filtered = filter_documents(&loaded.corpus, config.max_words);
    let reps = sample_representatives(&filtered, &config.topic, &config.categories, config.seed)?;
    let queries = build_queries(&reps, config.task);
    let topic_docs: Vec<_> = filtered
        .documents()
        .iter()
        .filter(|d| d.topic == config.topic)
        .cloned()
        .collect();
    let summary = DatasetSummary {
        loaded_documents: loaded.corpus.len(),
        skipped_lines: loaded.skipped_lines,
        filtered_documents: filtered.len(),
        topic_documents: topic_docs.len(),
        representatives: reps.len(),
        queries: queries.len(),
    };
    Ok(Dataset {
        corpus: Corpus::new(topic_docs, config.categories.clone())?,
        queries,
        summary,
    })
}

/// Result of [`AuditRunner::run`].
#[derive(Debug)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub run_dir: PathBuf,
    /// Stages executed by this invocation; checkpointed ones are skipped.
    pub stages_run: Vec<Stage>,
    pub generator_calls: usize,
    pub cache_hits: usize,
}

/// Runs or resumes an audit. Generator and attribution oracle default to the
/// configured components and can be replaced, e.g. by instrumented ones.
pub struct AuditRunner {
    config: RunConfig,
    generator: Option<Box<dyn Generator>>,
    oracle: Option<Box<dyn AttributionOracle>>,
}

fn stage_err(stage: Stage, message: impl Into<String>) -> Error {
    Error::Stage {
        stage: stage.name().into(),
        message: message.into(),
    }
}

fn pool(parallelism: usize, stage: Stage) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| stage_err(stage, e.to_string()))
}

impl AuditRunner {
    pub fn new(config: RunConfig) -> Self {
        AuditRunner {
            config,
            generator: None,
            oracle: None,
        }
    }

    pub fn with_generator(mut self, generator: Box<dyn Generator>) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn with_oracle(mut self, oracle: Box<dyn AttributionOracle>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn make_generator(&self) -> Result<Box<dyn Generator>> {
        Ok(match &self.config.generator {
            Component::External(url) => Box::new(HttpGenerator::new(url, self.config.retry)?),
            Component::Builtin(_) => Box::new(MockGenerator),
        })
    }

    fn make_oracle(&self) -> Result<Box<dyn AttributionOracle>> {
        Ok(match &self.config.attributor {
            Component::External(url) => Box::new(NliOracle::new(
                url,
                self.config.retry,
                self.config.premise_word_limit,
            )?),
            Component::Builtin(_) => Box::new(MockOracle {
                threshold: self.config.mock_threshold,
            }),
        })
    }

    /// Runs every stage not yet checkpointed in the run directory.
    pub fn run(self) -> Result<AuditOutcome> {
        let config = &self.config;
        let config_hash = config.config_hash()?;
        let run_id = config.resolved_run_id()?;
        let run_dir = config.runs_dir.join(&run_id);
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        let mut ledger = RunLedger::open(&run_dir, &run_id, &config_hash)?;
        let config_path = run_dir.join("config.json");
        if !config_path.exists() {
            write_json(&config_path, config)?;
        }
        let mut stages_run = Vec::new();

        let dataset = build_dataset(config)?;
        let corpus = dataset.corpus;

        // Dataset.
        let queries_path = run_dir.join("dataset/queries.jsonl");
        let queries: Vec<QueryInstance> = if ledger.is_complete(Stage::Dataset, &run_dir)? {
            read_jsonl(&queries_path)?
        } else {
            let summary_path = run_dir.join("dataset/summary.json");
            write_jsonl(&queries_path, &dataset.queries)?;
            write_json(&summary_path, &dataset.summary)?;
            ledger.complete(Stage::Dataset, &run_dir, &[queries_path.clone(), summary_path])?;
            stages_run.push(Stage::Dataset);
            dataset.queries
        };
        log::info!("{} queries over {} topic documents", queries.len(), corpus.len());

        // Index.
        let uses_bm25 = config.retrievers.iter().any(|r| matches!(r, Component::Builtin(_)));
        let index_path = run_dir.join("index/bm25.json");
        let index: Option<Arc<InvertedIndex>> = if ledger.is_complete(Stage::Index, &run_dir)? {
            uses_bm25.then(|| read_json(&index_path).map(Arc::new)).transpose()?
        } else {
            let mut artifacts = Vec::new();
            let index = if uses_bm25 {
                let index = build_index(&corpus, IndexField::TitleBody)?;
                write_json(&index_path, &index)?;
                artifacts.push(index_path.clone());
                Some(Arc::new(index))
            } else {
                None
            };
            ledger.complete(Stage::Index, &run_dir, &artifacts)?;
            stages_run.push(Stage::Index);
            index
        };

        // Retrieve.
        let retrievers: Vec<Box<dyn Retriever>> = config
            .retrievers
            .iter()
            .map(|c| -> Result<Box<dyn Retriever>> {
                Ok(match c {
                    Component::Builtin(_) => Box::new(Bm25Retriever::new(
                        index.clone().expect("index exists when bm25 is configured"),
                    )),
                    Component::External(url) => Box::new(ExternalRetriever::new(c.id(), url, &corpus, config.retry)?),
                })
            })
            .collect::<Result<_>>()?;
        let list_path = |c: &Component| run_dir.join(format!("retrieve/{}.jsonl", c.slug()));
        let retrieve_failures_path = run_dir.join("retrieve/failures.json");
        let mut failures: Vec<Failure> = Vec::new();
        let ranked: Vec<Vec<RankedList>> = if ledger.is_complete(Stage::Retrieve, &run_dir)? {
            failures.extend(read_json::<Vec<Failure>>(&retrieve_failures_path)?);
            config
                .retrievers
                .iter()
                .map(|c| read_jsonl(&list_path(c)))
                .collect::<Result<_>>()?
        } else {
            let pool = pool(config.parallelism, Stage::Retrieve)?;
            let mut all = Vec::new();
            let mut stage_failures = Vec::new();
            let mut artifacts = Vec::new();
            for (c, r) in config.retrievers.iter().zip(&retrievers) {
                let outcomes: Vec<Result<RankedList>> = pool.install(|| {
                    queries
                        .par_iter()
                        .map(|q| retrieve_for_query(r.as_ref(), q, config.k, config.exclude_source_doc))
                        .collect()
                });
                let mut lists = Vec::new();
                for (q, outcome) in queries.iter().zip(outcomes) {
                    match outcome {
                        Ok(list) => lists.push(list),
                        Err(e) => {
                            log::warn!("retrieval failed for {} ({}): {e}", q.query_id, c.id());
                            stage_failures.push(Failure {
                                query_id: q.query_id.clone(),
                                stage: Stage::Retrieve.name().into(),
                                detail: Some(c.id()),
                                message: e.to_string(),
                            });
                        }
                    }
                }
                let path = list_path(c);
                write_jsonl(&path, &lists)?;
                artifacts.push(path);
                all.push(lists);
            }
            self.check_tolerance(Stage::Retrieve, stage_failures.len(), queries.len() * retrievers.len())?;
            write_json(&retrieve_failures_path, &stage_failures)?;
            artifacts.push(retrieve_failures_path.clone());
            ledger.complete(Stage::Retrieve, &run_dir, &artifacts)?;
            stages_run.push(Stage::Retrieve);
            failures.extend(stage_failures);
            all
        };

        // Generate.
        let llm_path = run_dir.join("generate/llm_only.jsonl");
        let rag_path = |c: &Component| run_dir.join(format!("generate/rag_{}.jsonl", c.slug()));
        let single_path = |c: &Component| run_dir.join(format!("generate/single_doc_{}.jsonl", c.slug()));
        let generate_failures_path = run_dir.join("generate/failures.json");
        let mut generator_calls = 0;
        let mut cache_hits = 0;
        type PerRetriever = (Vec<GenerationRecord>, Vec<GenerationRecord>);
        let (llm_records, per_retriever): (Vec<GenerationRecord>, Vec<PerRetriever>) =
            if ledger.is_complete(Stage::Generate, &run_dir)? {
                failures.extend(read_json::<Vec<Failure>>(&generate_failures_path)?);
                let per = config
                    .retrievers
                    .iter()
                    .map(|c| Ok((read_jsonl(&rag_path(c))?, read_jsonl(&single_path(c))?)))
                    .collect::<Result<_>>()?;
                (read_jsonl(&llm_path)?, per)
            } else {
                let generator = match &self.generator {
                    Some(_) => None,
                    None => Some(self.make_generator()?),
                };
                let generator: &dyn Generator = match (&self.generator, &generator) {
                    (Some(g), _) => g.as_ref(),
                    (None, Some(g)) => g.as_ref(),
                    (None, None) => unreachable!(),
                };
                let cache_path = config
                    .cache
                    .clone()
                    .unwrap_or_else(|| run_dir.join("cache/generations.jsonl"));
                let cache = GenerationCache::open(&cache_path)?;
                let cached = CachedGenerator::new(generator, &cache);
                let decoding = config.decoding();
                let no_lists = HashMap::new();

                let mut stage_failures = Vec::new();
                let mut jobs = queries.len();
                let llm = run_setting(
                    &queries,
                    &no_lists,
                    &corpus,
                    &cached,
                    SettingKind::LlmOnly,
                    decoding,
                    config.parallelism,
                )?;
                stage_failures.extend(llm.failures);
                let mut per = Vec::new();
                for lists in &ranked {
                    let by_query: HashMap<String, RankedList> =
                        lists.iter().map(|l| (l.query_id.clone(), l.clone())).collect();
                    let answered: Vec<QueryInstance> = queries
                        .iter()
                        .filter(|q| by_query.contains_key(&q.query_id))
                        .cloned()
                        .collect();
                    jobs += answered.len() + lists.iter().map(RankedList::len).sum::<usize>();
                    let rag = run_setting(
                        &answered,
                        &by_query,
                        &corpus,
                        &cached,
                        SettingKind::Rag,
                        decoding,
                        config.parallelism,
                    )?;
                    let single = run_setting(
                        &answered,
                        &by_query,
                        &corpus,
                        &cached,
                        SettingKind::SingleDoc,
                        decoding,
                        config.parallelism,
                    )?;
                    stage_failures.extend(rag.failures);
                    stage_failures.extend(single.failures);
                    per.push((rag.records, single.records));
                }
                generator_calls = cached.generator_calls();
                cache_hits = cached.cache_hits();
                log::info!("generation: {generator_calls} generator calls, {cache_hits} cache hits");
                self.check_tolerance(Stage::Generate, stage_failures.len(), jobs)?;

                let mut artifacts = vec![llm_path.clone()];
                write_jsonl(&llm_path, &llm.records)?;
                for (c, (rag, single)) in config.retrievers.iter().zip(&per) {
                    write_jsonl(&rag_path(c), rag)?;
                    write_jsonl(&single_path(c), single)?;
                    artifacts.push(rag_path(c));
                    artifacts.push(single_path(c));
                }
                write_json(&generate_failures_path, &stage_failures)?;
                artifacts.push(generate_failures_path.clone());
                ledger.complete(Stage::Generate, &run_dir, &artifacts)?;
                stages_run.push(Stage::Generate);
                failures.extend(stage_failures);
                (llm.records, per)
            };

        // Attribute.
        let verdict_path = |c: &Component| run_dir.join(format!("attribute/{}.jsonl", c.slug()));
        let attribute_failures_path = run_dir.join("attribute/failures.json");
        let oracle_built = match &self.oracle {
            Some(_) => None,
            None => Some(self.make_oracle()?),
        };
        let oracle: &dyn AttributionOracle = match (&self.oracle, &oracle_built) {
            (Some(o), _) => o.as_ref(),
            (None, Some(o)) => o.as_ref(),
            (None, None) => unreachable!(),
        };
        let verdicts: Vec<Vec<AttributionVerdict>> = if ledger.is_complete(Stage::Attribute, &run_dir)? {
            failures.extend(read_json::<Vec<Failure>>(&attribute_failures_path)?);
            config
                .retrievers
                .iter()
                .map(|c| read_jsonl(&verdict_path(c)))
                .collect::<Result<_>>()?
        } else {
            let pool = pool(config.parallelism, Stage::Attribute)?;
            let mut all = Vec::new();
            let mut stage_failures = Vec::new();
            let mut artifacts = Vec::new();
            let mut jobs_total = 0;
            for ((c, lists), (rag, _)) in config.retrievers.iter().zip(&ranked).zip(&per_retriever) {
                let responses: HashMap<&str, &str> =
                    rag.iter().map(|r| (r.query_id.as_str(), r.output_text.as_str())).collect();
                let mut jobs = Vec::new();
                for list in lists {
                    let Some(response) = responses.get(list.query_id.as_str()) else {
                        continue;
                    };
                    for doc_id in list.doc_ids() {
                        let doc = corpus
                            .get(doc_id)
                            .ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
                        jobs.push((list.query_id.as_str(), doc, *response));
                    }
                }
                jobs_total += jobs.len();
                let outcomes: Vec<Result<AttributionVerdict>> = pool.install(|| {
                    jobs.par_iter()
                        .map(|(q, doc, response)| attribute(oracle, q, doc, response))
                        .collect()
                });
                let mut list = Vec::new();
                for ((q, doc, _), outcome) in jobs.iter().zip(outcomes) {
                    match outcome {
                        Ok(v) => list.push(v),
                        Err(e) => {
                            log::warn!("attribution failed for {q}/{}: {e}", doc.doc_id);
                            stage_failures.push(Failure {
                                query_id: q.to_string(),
                                stage: Stage::Attribute.name().into(),
                                detail: Some(format!("{} {}", c.id(), doc.doc_id)),
                                message: e.to_string(),
                            });
                        }
                    }
                }
                let path = verdict_path(c);
                write_jsonl(&path, &list)?;
                artifacts.push(path);
                all.push(list);
            }
            self.check_tolerance(Stage::Attribute, stage_failures.len(), jobs_total)?;
            write_json(&attribute_failures_path, &stage_failures)?;
            artifacts.push(attribute_failures_path.clone());
            ledger.complete(Stage::Attribute, &run_dir, &artifacts)?;
            stages_run.push(Stage::Attribute);
            failures.extend(stage_failures);
            all
        };

        // Report.
        let report_path = run_dir.join("report/report.json");
        let report: AuditReport = if ledger.is_complete(Stage::Report, &run_dir)? {
            read_json(&report_path)?
        } else {
            let generator_id = match &self.generator {
                Some(g) => g.id().to_string(),
                None => self.make_generator()?.id().to_string(),
            };
            let meta = ReportMeta {
                run_id: run_id.clone(),
                topic: config.topic.clone(),
                task: config.task,
                generator_id,
                attributor_id: oracle.id().to_string(),
                retriever_ids: config.retrievers.iter().map(Component::id).collect(),
                k: config.k,
                seed: config.seed,
                config_hash: config_hash.clone(),
                rouge_variant: config.rouge_variant,
                exclude_source_doc: config.exclude_source_doc,
            };
            let ledgers = RunLedgers {
                corpus: &corpus,
                categories: config.categories.clone(),
                queries: queries.clone(),
                llm_records,
                retrievers: config
                    .retrievers
                    .iter()
                    .zip(ranked)
                    .zip(per_retriever)
                    .zip(verdicts)
                    .map(|(((c, ranked_lists), (rag_records, single_doc_records)), verdicts)| RetrieverLedgers {
                        retriever_id: c.id(),
                        ranked_lists,
                        rag_records,
                        single_doc_records,
                        verdicts,
                    })
                    .collect(),
                failures,
            };
            let report = build_report(&ledgers, &meta)?;
            let report_dir = run_dir.join("report");
            write_atomic(&report_path, report.to_json()?.as_bytes())?;
            let mut artifacts = vec![report_path.clone()];
            artifacts.extend(write_csv_exports(&report, &report_dir)?);
            artifacts.extend(write_plots(&report, &report_dir)?);

            ledger.query_status = query_status(&queries, &report);
            ledger.complete(Stage::Report, &run_dir, &artifacts)?;
            stages_run.push(Stage::Report);
            report
        };

        Ok(AuditOutcome {
            report,
            run_dir,
            stages_run,
            generator_calls,
            cache_hits,
        })
    }

    fn check_tolerance(&self, stage: Stage, failed: usize, total: usize) -> Result<()> {
        if total > 0 && failed as f64 / total as f64 > self.config.failure_tolerance {
            return Err(stage_err(
                stage,
                format!(
                    "{failed} of {total} calls failed (tolerance {}); resume once the service is back",
                    self.config.failure_tolerance
                ),
            ));
        }
        Ok(())
    }
}

fn query_status(queries: &[QueryInstance], report: &AuditReport) -> BTreeMap<String, String> {
    let mut status: BTreeMap<String, String> =
        queries.iter().map(|q| (q.query_id.clone(), "ok".to_string())).collect();
    for f in &report.failures {
        if let Some(s) = status.get_mut(&f.query_id) {
            if s == "ok" {
                *s = format!("failed:{}", f.stage);
            }
        }
    }
    let excluded: HashSet<&str> = report
        .retrievers
        .iter()
        .flat_map(|r| r.excluded_queries.iter().map(String::as_str))
        .collect();
    for id in excluded {
        if let Some(s) = status.get_mut(id) {
            if s == "ok" {
                *s = "excluded".to_string();
            }
        }
    }
    status
}

/// Process exit code for an error: 2 for configuration problems, 3 for a
/// stage that can be resumed, 4 for anything else.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::UnknownTopic(_) | Error::Category(_) | Error::MissingLedger(_) => 2,
        Error::Stage { .. } => 3,
        _ => 4,
    }
}

/// Writes `range_bars.svg` and `correlations.svg` under `dir`.
pub fn write_plots(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let bars = dir.join("range_bars.svg");
    let heat = dir.join("correlations.svg");
    write_atomic(&bars, range_bars_svg(report).as_bytes())?;
    write_atomic(&heat, correlation_heatmap_svg(report).as_bytes())?;
    Ok(vec![bars, heat])
}

/// Runs or resumes the audit for `config` with its configured components.
pub fn run_audit(config: RunConfig) -> Result<AuditOutcome> {
    AuditRunner::new(config).run()
}

/// Resumes the run stored in `run_dir` from its saved configuration.
pub fn resume_audit(run_dir: &Path) -> Result<AuditOutcome> {
    let config = load_run_config(run_dir)?;
    run_audit(config)
}

/// The resolved configuration saved in a run directory. The runs directory
/// and run id are re-pointed at `run_dir` so moved runs still resume.
pub fn load_run_config(run_dir: &Path) -> Result<RunConfig> {
    let path = run_dir.join("config.json");
    if !path.exists() {
        return Err(Error::MissingLedger(path.display().to_string()));
    }
    let mut config: RunConfig = read_json(&path)?;
    let name = run_dir
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a run directory", run_dir.display())))?;
    config.run_id = Some(name.to_string_lossy().into_owned());
    config.runs_dir = run_dir.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(config)
}

/// Reads the finished report of a run.
pub fn load_report(run_dir: &Path) -> Result<AuditReport> {
    let path = run_dir.join("report/report.json");
    if !path.exists() {
        return Err(Error::MissingLedger(path.display().to_string()));
    }
    read_json(&path)
}
