//! `vlr` — command-line driver for the synthetic-query retrieval pipeline.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};

use vlr_core::bm25::{Bm25Retriever, InvertedIndex};
use vlr_core::config::{BackendKind, PipelineConfig, PromptModeSetting, RecoveryRetriever};
use vlr_core::contrastive::ToyRetriever;
use vlr_core::dense::DenseIndex;
use vlr_core::late_interaction::Bits;
use vlr_core::metrics::{evaluate_run, render_table};
use vlr_core::pipeline::{self, Context};
use vlr_core::query_gen::CompletionBackend;
use vlr_core::retrieval::Retriever;
use vlr_core::Error;

#[derive(Parser, Debug)]
#[command(name = "vlr", version, about = "Synthetic query generation and retrieval evaluation for legal passages")]
struct Cli {
    /// Pipeline configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split legal documents into passages.
    Ingest {
        #[arg(long)]
        documents: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Chunk budget in tokens (0 disables chunking).
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Generate synthetic queries for every passage.
    Generate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Drop self-referencing and unrecoverable queries.
    Filter {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the JSON filter report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Recovery cutoff.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        retriever: Option<RetrieverArg>,
    },
    /// Build an index over the corpus.
    Index {
        #[arg(value_enum)]
        kind: IndexKind,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Residual bits per dimension (colbert only).
        #[arg(long, value_parser = parse_bits)]
        bits: Option<Bits>,
        #[arg(long)]
        centroids: Option<usize>,
    },
    /// Mine hard negatives for training queries.
    Mine {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dense")]
        retriever: RetrieverArg,
        #[arg(long)]
        n_neg: Option<usize>,
        #[arg(long)]
        pool_depth: Option<usize>,
    },
    /// Build masked query-as-context pre-training pairs.
    Pairs {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        encoder_ratio: Option<f64>,
        #[arg(long)]
        decoder_ratio: Option<f64>,
    },
    /// Fine-tune the toy encoder with InfoNCE.
    TrainToy(TrainArgs),
    /// Retrieve for every query and write a TREC run.
    Search {
        #[arg(value_enum)]
        kind: IndexKind,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Needed by dense indexes, which store no passage ids.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        top_k: usize,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Write qrels that mark each query's source passage relevant.
    Qrels {
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a TREC run against qrels.
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Cutoffs, comma separated.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Also write the machine-readable table here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        include_no_relevant: bool,
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Print the storage breakdown of a compressed late-interaction index.
    StorageReport {
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Run the whole pipeline on a synthetic corpus.
    Demo {
        #[arg(long, default_value = "demo_out")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Run the built-in separable toy task instead of reading inputs.
    #[arg(long)]
    separable: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Loss trace output (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum IndexKind {
    Bm25,
    Dense,
    Colbert,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum RetrieverArg {
    Bm25,
    Dense,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Aspect,
    Basic,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

fn parse_bits(s: &str) -> Result<Bits, String> {
    let n: u8 = s
        .parse()
        .map_err(|_| format!("`{s}` is not a bit width; expected one of {{1,2,4,8}}"))?;
    Bits::try_from(n).map_err(|e| match e {
        Error::Usage(m) => m,
        other => other.to_string(),
    })
}

/// A failure that maps to exit status 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| UsageError(format!("--{name} is required (or set it under [paths] in the config)")).into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Usage(_)));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn bm25_over(ctx: &Context, corpus: &vlr_core::corpus::Corpus) -> anyhow::Result<Bm25Retriever> {
    Ok(Bm25Retriever::new(InvertedIndex::build(corpus)?, ctx.bm25_params()))
}

fn retriever_over(
    ctx: &Context,
    corpus: &vlr_core::corpus::Corpus,
    kind: RetrieverArg,
) -> anyhow::Result<Box<dyn Retriever>> {
    Ok(match kind {
        RetrieverArg::Bm25 => Box::new(bm25_over(ctx, corpus)?),
        RetrieverArg::Dense => Box::new(pipeline::dense_retriever(
            ctx,
            DenseIndex::build(corpus, &ctx.embedder())?,
        )?),
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = load_config(&cli)?;
    let paths = config.paths.clone();
    match cli.command {
        Command::Ingest {
            documents,
            out,
            max_tokens,
            overlap,
        } => {
            let documents = required(documents, &paths.documents, "documents")?;
            let out = required(out, &paths.corpus, "out")?;
            if let Some(m) = max_tokens {
                config.corpus.max_tokens = m;
            }
            if let Some(o) = overlap {
                config.corpus.overlap = o;
            }
            let ctx = Context::new(config);
            let corpus = pipeline::ingest(&ctx, &documents, &out)?;
            println!("{} passages -> {}", corpus.len(), out.display());
        }
        Command::Generate {
            corpus,
            out,
            mode,
            backend,
            concurrency,
        } => {
            let corpus_path = required(corpus, &paths.corpus, "corpus")?;
            let out = required(out, &paths.queries, "out")?;
            if let Some(m) = mode {
                config.generation.mode = match m {
                    ModeArg::Aspect => PromptModeSetting::Aspect,
                    ModeArg::Basic => PromptModeSetting::Basic,
                };
            }
            if let Some(b) = backend {
                config.generation.backend = match b {
                    BackendArg::Mock => BackendKind::Mock,
                    BackendArg::Http => BackendKind::Http,
                };
            }
            if let Some(c) = concurrency {
                config.generation.concurrency = c;
            }
            let ctx = Context::new(config);
            let corpus = pipeline::load_corpus(&corpus_path)?;
            let backend: Box<dyn CompletionBackend> = match ctx.config.generation.backend {
                BackendKind::Mock => Box::new(ctx.mock_backend()),
                BackendKind::Http => Box::new(ctx.http_backend()?),
            };
            let (_, summary) =
                pipeline::generate(&ctx, &corpus, backend.as_ref(), &ctx.generation_options(), &out)?;
            println!(
                "{} queries for {} passages ({} skipped) -> {}",
                summary.queries,
                summary.passages,
                summary.skipped,
                out.display()
            );
        }
        Command::Filter {
            corpus,
            queries,
            out,
            report,
            k,
            retriever,
        } => {
            let corpus_path = required(corpus, &paths.corpus, "corpus")?;
            let queries_path = required(queries, &paths.queries, "queries")?;
            let out = required(out, &paths.filtered_queries, "out")?;
            if let Some(k) = k {
                config.filter.recovery_k = k;
            }
            if let Some(r) = retriever {
                config.filter.retriever = match r {
                    RetrieverArg::Bm25 => RecoveryRetriever::Bm25,
                    RetrieverArg::Dense => RecoveryRetriever::Dense,
                };
            }
            let ctx = Context::new(config);
            let corpus = pipeline::load_corpus(&corpus_path)?;
            let queries = pipeline::load_queries(&queries_path)?;
            let kind = match ctx.config.filter.retriever {
                RecoveryRetriever::Bm25 => RetrieverArg::Bm25,
                RecoveryRetriever::Dense => RetrieverArg::Dense,
            };
            let retriever = retriever_over(&ctx, &corpus, kind)?;
            let (_, r) = pipeline::filter(&ctx, &queries, retriever.as_ref(), &out, report.as_deref())?;
            println!(
                "kept {}/{} ({:.2}%): {} self-reference, {} recovery -> {}",
                r.kept.len(),
                r.input_count,
                100.0 * r.pass_rate,
                r.dropped_self_ref.len(),
                r.dropped_recovery.len(),
                out.display()
            );
        }
        Command::Index {
            kind,
            corpus,
            out,
            bits,
            centroids,
        } => {
            let corpus_path = required(corpus, &paths.corpus, "corpus")?;
            let out = required(out, &paths.index, "out")?;
            if let Some(b) = bits {
                config.colbert.bits = b;
            }
            if centroids.is_some() {
                config.colbert.n_centroids = centroids;
            }
            let ctx = Context::new(config);
            let corpus = pipeline::load_corpus(&corpus_path)?;
            match kind {
                IndexKind::Bm25 => {
                    let idx = pipeline::build_bm25(&ctx, &corpus, &out)?;
                    println!("bm25: {} passages, {} terms -> {}", idx.doc_count(), idx.term_count(), out.display());
                }
                IndexKind::Dense => {
                    let idx = pipeline::build_dense(&ctx, &corpus, &out)?;
                    println!("dense: {} x {} -> {}", idx.len(), idx.dim(), out.display());
                }
                IndexKind::Colbert => {
                    let docs = pipeline::encode_multi_vector(&ctx, &corpus)?;
                    let idx = pipeline::build_colbert(&ctx, &docs, ctx.config.colbert.bits, &out)?;
                    println!(
                        "colbert: {} vectors, {} centroids, {} bits -> {}",
                        idx.n_vectors(),
                        idx.n_centroids(),
                        idx.bits().get(),
                        out.display()
                    );
                }
            }
        }
        Command::Mine {
            corpus,
            queries,
            out,
            retriever,
            n_neg,
            pool_depth,
        } => {
            let corpus_path = required(corpus, &paths.corpus, "corpus")?;
            let queries_path = required(queries, &paths.filtered_queries, "queries")?;
            let out = required(out, &paths.examples, "out")?;
            if let Some(n) = n_neg {
                config.mining.n_neg = n;
            }
            if let Some(d) = pool_depth {
                config.mining.pool_depth = d;
            }
            let ctx = Context::new(config);
            let corpus = pipeline::load_corpus(&corpus_path)?;
            let queries = pipeline::load_queries(&queries_path)?;
            let r = retriever_over(&ctx, &corpus, retriever)?;
            let examples = pipeline::mine(&ctx, &queries, r.as_ref(), &out)?;
            println!("{} training examples -> {}", examples.len(), out.display());
        }
        Command::Pairs {
            corpus,
            queries,
            out,
            encoder_ratio,
            decoder_ratio,
        } => {
            let corpus_path = required(corpus, &paths.corpus, "corpus")?;
            let queries_path = required(queries, &paths.filtered_queries, "queries")?;
            let out = required(out, &paths.pairs, "out")?;
            if let Some(r) = encoder_ratio {
                config.pretrain.encoder_ratio = r;
            }
            if let Some(r) = decoder_ratio {
                config.pretrain.decoder_ratio = r;
            }
            let ctx = Context::new(config);
            let corpus = pipeline::load_corpus(&corpus_path)?;
            let queries = pipeline::load_queries(&queries_path)?;
            let (_, s) = pipeline::pairs(&ctx, &corpus, &queries, &out)?;
            println!("{} pairs ({} passages without queries) -> {}", s.pairs, s.skipped_passages, out.display());
        }
        Command::TrainToy(args) => train_toy(config, &paths, args)?,
        Command::Search {
            kind,
            index,
            queries,
            corpus,
            out,
            top_k,
            tag,
        } => {
            let index = required(index, &paths.index, "index")?;
            let queries_path = required(queries, &paths.queries, "queries")?;
            let out = required(out, &paths.run, "out")?;
            let ctx = Context::new(config);
            let queries = pipeline::load_queries(&queries_path)?;
            let retriever: Box<dyn Retriever> = match kind {
                IndexKind::Bm25 => Box::new(pipeline::load_bm25(&ctx, &index)?),
                IndexKind::Dense => {
                    let corpus_path = required(corpus, &paths.corpus, "corpus")?;
                    let corpus = pipeline::load_corpus(&corpus_path)?;
                    Box::new(pipeline::load_dense(&ctx, &index, &corpus)?)
                }
                IndexKind::Colbert => Box::new(pipeline::load_colbert(&ctx, &index)?),
            };
            let run = pipeline::run_queries(retriever.as_ref(), &queries, top_k)?;
            let tag = tag.unwrap_or_else(|| format!("{kind:?}").to_lowercase());
            pipeline::write_run(&ctx, &run, &tag, &out)?;
            println!("{} queries -> {}", run.len(), out.display());
        }
        Command::Qrels { queries, out } => {
            let queries_path = required(queries, &paths.queries, "queries")?;
            let out = required(out, &paths.qrels, "out")?;
            let ctx = Context::new(config);
            let j = pipeline::qrels_from_queries(&pipeline::load_queries(&queries_path)?)?;
            pipeline::write_qrels(&ctx, &j, &out)?;
            println!("{} judged queries -> {}", j.len(), out.display());
        }
        Command::Eval {
            run,
            qrels,
            ks,
            json,
            include_no_relevant,
            label,
        } => {
            let run_path = required(run, &paths.run, "run")?;
            let qrels_path = required(qrels, &paths.qrels, "qrels")?;
            if let Some(ks) = ks {
                config.eval.ks = ks;
            }
            if include_no_relevant {
                config.eval.include_no_relevant = true;
            }
            if config.eval.ks.is_empty() || config.eval.ks.contains(&0) {
                return Err(UsageError("--ks needs positive cutoffs".into()).into());
            }
            let ctx = Context::new(config);
            let run = pipeline::load_run(&run_path)?;
            let qrels = pipeline::load_qrels(&qrels_path)?;
            let table = evaluate_run(&run, &qrels, &ctx.config.eval.ks, ctx.eval_options())?;
            if let Some(p) = json {
                ctx.write_json(&p, "metrics", &table)?;
            }
            print!("{}", render_table(&[(label.as_str(), &table)]));
        }
        Command::StorageReport { index } => {
            let index = required(index, &paths.index, "index")?;
            let report = pipeline::read_storage_report(&index)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Demo { out } => {
            let ctx = Context::new(config);
            let report = pipeline::run_demo(&ctx, &out)
                .with_context(|| format!("demo run into {}", out.display()))?;
            print!("{}", pipeline::render_demo(&report));
        }
    }
    Ok(())
}

fn train_toy(mut config: PipelineConfig, paths: &vlr_core::config::Paths, args: TrainArgs) -> anyhow::Result<()> {
    if let Some(s) = args.steps {
        config.train.steps = s;
    }
    if let Some(b) = args.batch_size {
        config.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.train.learning_rate = lr;
    }
    if let Some(t) = args.temperature {
        config.train.temperature = t;
    }
    let ctx = Context::new(config);
    if args.separable {
        let exp = pipeline::separable_experiment(&ctx)?;
        if let Some(p) = &args.trace {
            ctx.sidecar_output(p, "loss_trace", |w| {
                vlr_core::contrastive::write_loss_trace(w, &exp.loss_trace)
            })?;
        }
        println!(
            "separable toy: MRR@10 {:.4} -> {:.4} over {} steps",
            exp.initial_mrr_at_10,
            exp.final_mrr_at_10,
            exp.loss_trace.len()
        );
        return Ok(());
    }
    let corpus = pipeline::load_corpus(&required(args.corpus, &paths.corpus, "corpus")?)?;
    let queries = pipeline::load_queries(&required(args.queries, &paths.filtered_queries, "queries")?)?;
    let examples = pipeline::load_examples(&required(args.examples, &paths.examples, "examples")?)?;
    let trained = pipeline::train(&ctx, &corpus, &queries, &examples, args.trace.as_deref())?;
    let mrr = |enc: &vlr_core::contrastive::ToyEncoder| -> anyhow::Result<f64> {
        let run = pipeline::run_queries(&ToyRetriever::new(enc.clone(), &corpus), &queries, 10)?;
        let qrels = pipeline::qrels_from_queries(&queries)?;
        Ok(evaluate_run(&run, &qrels, &[10], ctx.eval_options())?.by_k[0].mrr)
    };
    println!(
        "loss {:.4} -> {:.4}; MRR@10 on training queries {:.4} -> {:.4}",
        trained.loss_trace.first().copied().unwrap_or(0.0),
        trained.loss_trace.last().copied().unwrap_or(0.0),
        mrr(&trained.initial)?,
        mrr(&trained.trained)?
    );
    Ok(())
}
