use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ragmcts::config::{parse_config, ConfigFile, EngineConfig};
use ragmcts::harness::bench::{annotate_all, run_benchmark, task_seed, BenchEnv, Method};
use ragmcts::harness::inference::{infer, InferContext};
use ragmcts::harness::remote::{RemoteConfig, RemoteGenerator};
use ragmcts::harness::synthetic::{
    gen_synthetic_suite, MockGenerator, OracleScorer, SuiteSpec, SyntheticStepSpace, SyntheticTask, TaskBook,
};
use ragmcts::harness::GeneratorBackend;
use ragmcts::index::{
    build_index, build_text_index, chunk_corpus, contamination_rate, ingest_jsonl, CorpusEntry, HashEmbedder,
};
use ragmcts::mcts::{to_jsonl, PreferencePair, StepAnnotation};
use ragmcts::prm::{
    candidate_seed, log_to_csv, train_curriculum, CurriculumConfig, DpoConfig, HashStepSpace, ParametricPolicy,
    PathScorer, PolicyRecord, StepScorer, StepSpace,
};
use ragmcts::retrieval::Retriever;
use ragmcts::types::MultimodalQuery;

#[derive(Parser)]
#[command(name = "ragmcts", version, about = "Retrieval-augmented tree search for step-wise reasoning")]
struct Cli {
    /// key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. --set seed=3
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic knowledge-gated task suite
    GenSuite(GenSuiteArgs),
    /// Validate a JSONL corpus, optionally chunking long entries
    Ingest(IngestArgs),
    /// Build the text and hybrid indexes of a corpus
    Index(IndexArgs),
    /// Retrieve and screen candidates for each query
    Retrieve(RetrieveArgs),
    /// Build search trees and emit tree, pair and label JSONL
    Annotate(AnnotateArgs),
    /// Train a step scorer from annotations
    TrainPrm(TrainArgs),
    /// Guided inference, one trace per query
    Infer(InferArgs),
    /// Run baselines and guided inference over a suite
    Bench(BenchArgs),
    /// Flag corpus entries sharing an n-gram with a test set
    ContaminateCheck(ContaminateArgs),
}

#[derive(Args)]
struct GenSuiteArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    depth_min: usize,
    #[arg(long, default_value_t = 4)]
    depth_max: usize,
    #[arg(long, default_value_t = 0.9)]
    p_hi: f64,
    #[arg(long, default_value_t = 0.3)]
    p_lo: f64,
    #[arg(long, default_value_t = 3)]
    wrong_variants: usize,
    #[arg(long, default_value_t = 50)]
    distractors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write rejected lines here as JSONL
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    query_file: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    t_r: Option<f64>,
    #[arg(long)]
    t_kc: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Where queries, corpus and (for the mock) task definitions come from.
#[derive(Args, Clone)]
struct Source {
    /// Suite directory from gen-suite
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Queries JSONL (with --corpus), instead of a suite
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// mock or remote
    #[arg(long, default_value = "mock")]
    generator: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct AnnotateArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Directory holding pairs.jsonl and labels.jsonl
    #[arg(long)]
    annotations: PathBuf,
    /// synthetic or hash
    #[arg(long, default_value = "synthetic")]
    space: String,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    src: Source,
    /// `oracle` or a model file from train-prm
    #[arg(long, default_value = "oracle")]
    prm: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long, default_value = "oracle")]
    prm: String,
    #[arg(long, value_delimiter = ',', default_value = "zero_shot,self_consistency,orm,ar_mcts")]
    methods: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ContaminateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Test queries JSONL
    #[arg(long)]
    testset: PathBuf,
    #[arg(long, default_value_t = 13)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let mut cf = match &cli.config {
        Some(p) => parse_config(&read(p)?)?,
        None => ConfigFile::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{o}`"))?;
        if let Some(rest) = k.trim().strip_prefix("endpoint.") {
            cf.endpoint.push((rest.to_string(), v.trim().to_string()));
        } else {
            cf.engine.set(k.trim(), v.trim()).map_err(|e| anyhow!("--set {o}: {e}"))?;
        }
    }
    cf.engine.validate()?;
    Ok(cf)
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write(p: &Path, s: &str) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(p, s).with_context(|| format!("writing {}", p.display()))
}

fn read_jsonl<T: DeserializeOwned>(p: &Path) -> Result<Vec<T>> {
    read(p)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", p.display(), i + 1)))
        .collect()
}

fn write_json<T: Serialize>(p: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write(p, &s)
}

fn load_corpus(p: &Path) -> Result<Vec<CorpusEntry>> {
    let ing = ingest_jsonl(p)?;
    for r in &ing.rejects {
        eprintln!("{}: line {} rejected: {}", p.display(), r.line, r.reason);
    }
    Ok(ing.entries)
}

struct Loaded {
    queries: Vec<MultimodalQuery>,
    book: Option<TaskBook>,
    retriever: Retriever,
}

fn load_source(src: &Source, cfg: &EngineConfig) -> Result<Loaded> {
    let provider = Arc::new(HashEmbedder::new(cfg.embed_dim));
    let (queries, book, corpus) = match (&src.suite, &src.queries) {
        (Some(dir), None) => {
            let tasks: Vec<SyntheticTask> = read_jsonl(&dir.join("tasks.jsonl"))?;
            let corpus = load_corpus(&dir.join("corpus.jsonl"))?;
            let queries = tasks.iter().map(|t| t.query.clone()).collect();
            (queries, Some(TaskBook::new(tasks)), corpus)
        }
        (None, Some(q)) => {
            let corpus = src.corpus.as_ref().ok_or_else(|| anyhow!("--queries needs --corpus"))?;
            (read_jsonl(q)?, None, load_corpus(corpus)?)
        }
        _ => bail!("give exactly one of --suite or --queries"),
    };
    for q in &queries {
        q.validate()?;
    }
    Ok(Loaded {
        queries,
        book,
        retriever: Retriever::build(corpus, provider)?,
    })
}

fn make_generator(src: &Source, loaded: &Loaded, cf: &ConfigFile) -> Result<Box<dyn GeneratorBackend>> {
    match src.generator.as_str() {
        "mock" => {
            let book = loaded.book.clone().ok_or_else(|| anyhow!("the mock generator needs --suite"))?;
            Ok(Box::new(MockGenerator::new(book)))
        }
        "remote" => {
            let rc = RemoteConfig::from_pairs(&cf.endpoint).map_err(|e| anyhow!(e))?;
            Ok(Box::new(RemoteGenerator::new(rc)))
        }
        other => bail!("unknown generator `{other}`"),
    }
}

struct Scorers {
    step: Box<dyn StepScorer>,
    path: Box<dyn PathScorer>,
}

fn space_for(name: &str, book: Option<&TaskBook>, feature_dim: usize, vocab: usize, cfg: &EngineConfig) -> Result<Arc<dyn StepSpace>> {
    Ok(match name {
        "synthetic" => {
            let book = book.ok_or_else(|| anyhow!("the synthetic step space needs --suite"))?;
            Arc::new(SyntheticStepSpace::new(book.clone(), cfg.max_depth))
        }
        "hash" => Arc::new(HashStepSpace::new(feature_dim.saturating_sub(1).max(1), vocab.max(1))),
        other => bail!("unknown step space `{other}`"),
    })
}

fn load_scorers(spec: &str, loaded: &Loaded, cfg: &EngineConfig) -> Result<Scorers> {
    if spec == "oracle" {
        let book = loaded.book.clone().ok_or_else(|| anyhow!("the oracle scorer needs --suite"))?;
        return Ok(Scorers {
            step: Box::new(OracleScorer::new(book.clone())),
            path: Box::new(OracleScorer::new(book)),
        });
    }
    let record: PolicyRecord = serde_json::from_str(&read(Path::new(spec))?)?;
    let space = space_for(&record.space, loaded.book.as_ref(), record.feature_dim, record.vocab, cfg)?;
    let policy = ParametricPolicy::from_record(record, space)?;
    Ok(Scorers {
        step: Box::new(policy.clone()),
        path: Box::new(policy),
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cf = load_config(&cli)?;
    let cfg = &cf.engine;
    match &cli.cmd {
        Command::GenSuite(a) => {
            let spec = SuiteSpec {
                count: a.count,
                depth_min: a.depth_min,
                depth_max: a.depth_max,
                p_hi: a.p_hi,
                p_lo: a.p_lo,
                wrong_variants: a.wrong_variants,
                global_distractors: a.distractors,
                seed: a.seed,
                ..SuiteSpec::default()
            };
            let suite = gen_synthetic_suite(&spec, cfg)?;
            write(&a.out.join("tasks.jsonl"), &to_jsonl(&suite.tasks))?;
            write(&a.out.join("corpus.jsonl"), &to_jsonl(&suite.corpus))?;
            write_json(&a.out.join("spec.json"), &suite.spec)?;
            println!("{} tasks, {} corpus entries -> {}", suite.tasks.len(), suite.corpus.len(), a.out.display());
        }
        Command::Ingest(a) => {
            let ing = ingest_jsonl(&a.input)?;
            let entries = match a.chunk_size {
                Some(0) => bail!("--chunk-size must be positive"),
                Some(n) => chunk_corpus(&ing.entries, n),
                None => ing.entries,
            };
            write(&a.out, &to_jsonl(&entries))?;
            if let Some(p) = &a.rejects {
                write(p, &to_jsonl(&ing.rejects))?;
            }
            for r in &ing.rejects {
                eprintln!("line {}: {}", r.line, r.reason);
            }
            println!("{} entries kept, {} lines rejected", entries.len(), ing.rejects.len());
        }
        Command::Index(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let provider = HashEmbedder::new(cfg.embed_dim);
            #[derive(Serialize)]
            struct Indexes {
                text: ragmcts::index::VectorIndex,
                hybrid: ragmcts::index::VectorIndex,
            }
            let idx = Indexes {
                text: build_text_index(&corpus, &provider)?,
                hybrid: build_index(&corpus, &provider)?,
            };
            write(&a.out, &serde_json::to_string(&idx)?)?;
            println!("indexed {} entries (dim {})", corpus.len(), cfg.embed_dim);
        }
        Command::Retrieve(a) => {
            let mut cfg = cfg.clone();
            if let Some(k) = a.k {
                cfg.top_k_retrieve = k;
            }
            if let Some(t) = a.t_r {
                cfg.t_r = t;
            }
            if let Some(t) = a.t_kc {
                cfg.t_kc = t;
            }
            cfg.validate()?;
            let queries: Vec<MultimodalQuery> = read_jsonl(&a.query_file)?;
            let retriever = Retriever::build(load_corpus(&a.corpus)?, Arc::new(HashEmbedder::new(cfg.embed_dim)))?;
            let mut rows = Vec::new();
            for q in &queries {
                rows.extend(retriever.screen(q, &cfg)?);
            }
            write(&a.out, &to_jsonl(&rows))?;
            println!("{} screened candidates, {} kept", rows.len(), rows.iter().filter(|r| r.kept).count());
        }
        Command::Annotate(a) => {
            let loaded = load_source(&a.src, cfg)?;
            let generator = make_generator(&a.src, &loaded, &cf)?;
            let out = annotate_all(&loaded.queries, &loaded.retriever, generator.as_ref(), cfg, a.src.workers)?;
            write(&a.out.join("tree.jsonl"), &out.tree_jsonl())?;
            write(&a.out.join("pairs.jsonl"), &out.pairs_jsonl())?;
            write(&a.out.join("labels.jsonl"), &out.labels_jsonl())?;
            println!("{} nodes, {} pairs, {} labels", out.nodes.len(), out.pairs.len(), out.labels.len());
        }
        Command::TrainPrm(a) => {
            let pairs: Vec<PreferencePair> = read_jsonl(&a.annotations.join("pairs.jsonl"))?;
            let labels: Vec<StepAnnotation> = read_jsonl(&a.annotations.join("labels.jsonl"))?;
            let (queries, book) = match &a.suite {
                Some(dir) => {
                    let tasks: Vec<SyntheticTask> = read_jsonl(&dir.join("tasks.jsonl"))?;
                    (tasks.iter().map(|t| t.query.clone()).collect::<Vec<_>>(), Some(TaskBook::new(tasks)))
                }
                None => bail!("train-prm needs --suite for the query texts"),
            };
            let space = space_for(&a.space, book.as_ref(), cfg.embed_dim + 1, 4096, cfg)?;
            let config = CurriculumConfig {
                dpo: DpoConfig {
                    beta: a.beta,
                    learning_rate: a.lr,
                    epochs: a.epochs,
                },
                pft_learning_rate: a.lr,
                pft_epochs: a.epochs,
                batch_size: a.batch_size,
                seed: cfg.seed,
            };
            let by_id: std::collections::HashMap<&str, &MultimodalQuery> =
                queries.iter().map(|q| (q.id.as_str(), q)).collect();
            let lookup = |id: &str| by_id.get(id).copied();
            let (model, log) = train_curriculum(space, &pairs, &labels, &config, &lookup)?;
            write(&a.out, &serde_json::to_string(&model.to_record())?)?;
            if let Some(p) = &a.log {
                write(p, &log_to_csv(&log))?;
            }
            let last = log.last().map_or(f64::NAN, |r| r.loss);
            println!("trained on {} pairs, {} labels; final loss {last:.6}", pairs.len(), labels.len());
        }
        Command::Infer(a) => {
            let loaded = load_source(&a.src, cfg)?;
            let generator = make_generator(&a.src, &loaded, &cf)?;
            let scorers = load_scorers(&a.prm, &loaded, cfg)?;
            let traces = rayon::ThreadPoolBuilder::new()
                .num_threads(a.src.workers.max(1))
                .build()?
                .install(|| {
                    use rayon::prelude::*;
                    loaded
                        .queries
                        .par_iter()
                        .map(|q| {
                            let insights = loaded.retriever.insights_for(q, cfg)?;
                            let ctx = InferContext {
                                insights: &insights,
                                provider: loaded.retriever.provider.as_ref(),
                                generator: generator.as_ref(),
                                scorer: scorers.step.as_ref(),
                                config: cfg,
                            };
                            Ok(infer(q, &ctx, candidate_seed(task_seed(cfg.seed, &q.id), 0))?)
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
            write(&a.out, &to_jsonl(&traces))?;
            println!("{} traces", traces.len());
        }
        Command::Bench(a) => {
            let loaded = load_source(&a.src, cfg)?;
            let generator = make_generator(&a.src, &loaded, &cf)?;
            let scorers = load_scorers(&a.prm, &loaded, cfg)?;
            let methods = a
                .methods
                .iter()
                .map(|m| m.parse::<Method>().map_err(|e| anyhow!(e)))
                .collect::<Result<Vec<_>>>()?;
            let env = BenchEnv {
                retriever: &loaded.retriever,
                generator: generator.as_ref(),
                prm: scorers.step.as_ref(),
                orm: scorers.path.as_ref(),
                config: cfg,
            };
            let report = run_benchmark(&loaded.queries, &methods, &env, a.src.workers)?;
            write(&a.out.join("records.jsonl"), &report.records_jsonl())?;
            write(&a.out.join("aggregate.json"), &report.aggregate_json())?;
            for (m, agg) in &report.aggregates {
                let div = agg.diversity.map_or("-".to_string(), |d| format!("{d:.4}"));
                println!("{m:<18} acc {:.4}  pqc {:.4}  diversity {div}", agg.accuracy, agg.pqc);
            }
        }
        Command::ContaminateCheck(a) => {
            let corpus = load_corpus(&a.corpus)?;
            let tests: Vec<MultimodalQuery> = read_jsonl(&a.testset)?;
            let report = contamination_rate(&corpus, &tests, a.n)?;
            if let Some(p) = &a.out {
                write_json(p, &report)?;
            }
            println!(
                "{} of {} entries contaminated at n = {} (rate {:.4})",
                report.contaminated_ids.len(),
                corpus.len(),
                report.n,
                report.rate
            );
        }
    }
    Ok(())
}
