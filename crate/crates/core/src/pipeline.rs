//! File-level stages of the workflow and the end-to-end demo.
//!
//! Stages read and write artifacts on disk. JSON-lines outputs begin with a
//! metadata record; every other output gets a `.meta.json` sidecar. Either
//! way the record names the tool version, the config hash and the seed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Params, Bm25Retriever, InvertedIndex};
use crate::config::PipelineConfig;
use crate::contrastive::{
    mine_hard_negatives, positives_from_queries, train_toy, write_examples, write_loss_trace,
    MiningParams, ToyEncoder, ToyRetriever, TrainParams, TrainingExample,
};
use crate::corpus::{read_documents, read_passages, write_documents, write_passages, Corpus, LegalDocument};
use crate::dense::{DenseIndex, DenseRetriever, PseudoEmbedder};
use crate::error::{Error, Result};
use crate::io::{create_output, open_input, write_meta_line, write_sidecar, ArtifactMeta};
use crate::late_interaction::{
    Bits, CompressedMultiVectorIndex, CompressionParams, LateInteractionRetriever,
    MultiVectorDoc, PseudoTokenEncoder, StorageReport,
};
use crate::metrics::{
    evaluate_run, hit_rates, render_table, EvalOptions, Judgments, MetricTable, QuerySource,
    RunList,
};
use crate::pretrain::{mask_all, sample_pairs, serialize_pairs, PretrainPair};
use crate::query_filter::{filter_queries, kept_queries, Blacklist, FilterReport};
use crate::query_gen::{
    generate_for_corpus, queries_by_passage, read_queries, to_synthetic_queries, write_queries,
    CompletionBackend, GenerationOptions, HttpBackend, MockBackend, PromptMode, SyntheticQuery,
};
use crate::retrieval::Retriever;
use crate::seed;
use crate::synthetic;

/// Effective configuration plus its hash, shared by every stage.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub config_hash: String,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Self {
        let config_hash = config.hash();
        Self {
            config,
            config_hash,
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn meta(&self, artifact: &str) -> ArtifactMeta {
        ArtifactMeta::new(&self.config_hash, self.config.seed, artifact)
    }

    /// Creates `path` and writes the metadata record as its first line.
    pub fn jsonl_output(&self, path: &Path, artifact: &str) -> Result<std::io::BufWriter<std::fs::File>> {
        let mut out = create_output(path)?;
        write_meta_line(&mut out, &self.meta(artifact))?;
        Ok(out)
    }

    /// Writes a non-JSONL artifact through `f`, then its sidecar.
    pub fn sidecar_output<F>(&self, path: &Path, artifact: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
    {
        let mut out = create_output(path)?;
        f(&mut out)?;
        out.flush()?;
        write_sidecar(path, &self.meta(artifact))
    }

    pub fn write_json(&self, path: &Path, artifact: &str, value: &impl Serialize) -> Result<()> {
        self.sidecar_output(path, artifact, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn write_text(&self, path: &Path, artifact: &str, text: &str) -> Result<()> {
        self.sidecar_output(path, artifact, |w| Ok(w.write_all(text.as_bytes())?))
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.config.bm25.k1,
            b: self.config.bm25.b,
        }
    }

    pub fn embedder(&self) -> PseudoEmbedder {
        PseudoEmbedder::new(self.config.dense.dim, seed::derive_seed(self.seed(), "dense"))
    }

    pub fn token_encoder(&self) -> PseudoTokenEncoder {
        let mut e = PseudoTokenEncoder::new(
            self.config.colbert.dim,
            seed::derive_seed(self.seed(), "colbert"),
        );
        e.max_doc_tokens = self.config.colbert.max_doc_tokens;
        e
    }

    pub fn compression(&self, bits: Bits) -> CompressionParams {
        CompressionParams {
            bits,
            n_centroids: self.config.colbert.n_centroids,
            kmeans_iterations: self.config.colbert.kmeans_iterations,
            seed: seed::derive_seed(self.seed(), "kmeans"),
        }
    }

    pub fn generation_options(&self) -> GenerationOptions {
        let g = &self.config.generation;
        GenerationOptions {
            mode: g.mode.into(),
            few_shot: g.few_shot.clone(),
            max_retries: g.max_retries,
            concurrency: g.concurrency,
            backoff: Duration::from_millis(g.backoff_ms),
        }
    }

    pub fn mock_backend(&self) -> MockBackend {
        MockBackend::new(seed::derive_seed(self.seed(), "mock"))
            .with_self_reference_rate(self.config.generation.self_reference_rate)
    }

    /// HTTP backend from the environment, with the configured timeout and
    /// sampling temperature.
    pub fn http_backend(&self) -> Result<HttpBackend> {
        let g = &self.config.generation;
        let backend = HttpBackend::from_env(std::time::Duration::from_secs(g.timeout_secs))?;
        Ok(match g.temperature {
            Some(t) => backend.with_option("temperature", serde_json::json!(t)),
            None => backend,
        })
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            include_no_relevant: self.config.eval.include_no_relevant,
        }
    }

    pub fn train_params(&self) -> TrainParams {
        let t = &self.config.train;
        TrainParams {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            temperature: t.temperature,
            use_in_batch: t.in_batch,
            seed: seed::derive_seed(self.seed(), "train"),
        }
    }
}

pub fn load_documents(path: &Path) -> Result<Vec<LegalDocument>> {
    read_documents(open_input(path)?)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    read_passages(open_input(path)?)
}

pub fn load_queries(path: &Path) -> Result<Vec<SyntheticQuery>> {
    read_queries(open_input(path)?)
}

pub fn load_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    crate::contrastive::read_examples(open_input(path)?)
}

pub fn load_qrels(path: &Path) -> Result<Judgments> {
    Judgments::read_qrels(open_input(path)?)
}

pub fn load_run(path: &Path) -> Result<RunList> {
    RunList::read_run(open_input(path)?)
}

/// Documents → passages, chunked to the configured token budget.
pub fn ingest(ctx: &Context, documents: &Path, out: &Path) -> Result<Corpus> {
    let docs = load_documents(documents)?;
    ingest_documents(ctx, &docs, out)
}

pub fn ingest_documents(ctx: &Context, docs: &[LegalDocument], out: &Path) -> Result<Corpus> {
    let mut corpus = crate::corpus::corpus_from_documents(docs)?;
    let c = &ctx.config.corpus;
    if c.max_tokens > 0 {
        corpus = corpus.chunked(c.max_tokens, c.overlap)?;
    }
    write_passages(ctx.jsonl_output(out, "corpus")?, &corpus)?;
    Ok(corpus)
}

pub fn write_document_file(ctx: &Context, docs: &[LegalDocument], out: &Path) -> Result<()> {
    write_documents(ctx.jsonl_output(out, "documents")?, docs)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub passages: usize,
    pub queries: usize,
    pub skipped: usize,
}

pub fn generate(
    ctx: &Context,
    corpus: &Corpus,
    backend: &dyn CompletionBackend,
    opts: &GenerationOptions,
    out: &Path,
) -> Result<(Vec<SyntheticQuery>, GenerationSummary)> {
    let output = generate_for_corpus(corpus, backend, opts)?;
    for s in &output.skipped {
        log::warn!(
            "skipped passage {} after {} attempts: {}",
            s.passage_id,
            s.attempt_count,
            s.reason
        );
    }
    let queries = to_synthetic_queries(&output.results);
    write_queries(ctx.jsonl_output(out, "queries")?, &queries)?;
    let summary = GenerationSummary {
        passages: corpus.len(),
        queries: queries.len(),
        skipped: output.skipped.len(),
    };
    Ok((queries, summary))
}

pub fn filter(
    ctx: &Context,
    queries: &[SyntheticQuery],
    retriever: &dyn Retriever,
    out: &Path,
    report_path: Option<&Path>,
) -> Result<(Vec<SyntheticQuery>, FilterReport)> {
    let blacklist = Blacklist::new(&ctx.config.filter.blacklist)?;
    let report = filter_queries(queries, Some(&blacklist), retriever, ctx.config.filter.recovery_k)?;
    let kept = kept_queries(queries, &report);
    write_queries(ctx.jsonl_output(out, "filtered_queries")?, &kept)?;
    if let Some(p) = report_path {
        ctx.write_json(p, "filter_report", &report)?;
    }
    Ok((kept, report))
}

pub fn build_bm25(ctx: &Context, corpus: &Corpus, out: &Path) -> Result<InvertedIndex> {
    let index = InvertedIndex::build(corpus)?;
    ctx.sidecar_output(out, "bm25_index", |w| index.write_to(w))?;
    Ok(index)
}

pub fn load_bm25(ctx: &Context, path: &Path) -> Result<Bm25Retriever> {
    let index = InvertedIndex::read_from(open_input(path)?)?;
    Ok(Bm25Retriever::new(index, ctx.bm25_params()))
}

pub fn build_dense(ctx: &Context, corpus: &Corpus, out: &Path) -> Result<DenseIndex> {
    let index = DenseIndex::build(corpus, &ctx.embedder())?;
    ctx.sidecar_output(out, "dense_index", |w| index.write_to(w))?;
    Ok(index)
}

/// Dense index files hold only vectors; passage ids come from the corpus.
pub fn load_dense(ctx: &Context, path: &Path, corpus: &Corpus) -> Result<DenseRetriever> {
    let index = DenseIndex::read_from(open_input(path)?, corpus.ids())?;
    dense_retriever(ctx, index)
}

pub fn dense_retriever(ctx: &Context, index: DenseIndex) -> Result<DenseRetriever> {
    let embedder = ctx.embedder();
    if index.dim() != embedder.dim {
        return Err(Error::DimensionMismatch {
            expected: embedder.dim,
            actual: index.dim(),
        });
    }
    Ok(DenseRetriever::new(index, Arc::new(embedder), ctx.config.dense.similarity))
}

pub fn encode_multi_vector(ctx: &Context, corpus: &Corpus) -> Result<Vec<MultiVectorDoc>> {
    use rayon::prelude::*;
    let enc = ctx.token_encoder();
    corpus
        .passages()
        .par_iter()
        .map(|p| enc.encode_doc(&p.id, &p.content))
        .collect()
}

pub fn build_colbert(
    ctx: &Context,
    docs: &[MultiVectorDoc],
    bits: Bits,
    out: &Path,
) -> Result<CompressedMultiVectorIndex> {
    let index = CompressedMultiVectorIndex::build(docs, ctx.compression(bits))?;
    ctx.sidecar_output(out, "colbert_index", |w| index.write_to(w))?;
    Ok(index)
}

pub fn load_colbert(ctx: &Context, path: &Path) -> Result<LateInteractionRetriever> {
    let index = CompressedMultiVectorIndex::read_from(open_input(path)?)?;
    let encoder = ctx.token_encoder();
    if index.dim() != encoder.dim {
        return Err(Error::DimensionMismatch {
            expected: encoder.dim,
            actual: index.dim(),
        });
    }
    Ok(LateInteractionRetriever { index, encoder })
}

pub fn read_storage_report(path: &Path) -> Result<StorageReport> {
    Ok(CompressedMultiVectorIndex::read_from(open_input(path)?)?.storage_report())
}

pub fn mine(
    ctx: &Context,
    queries: &[SyntheticQuery],
    retriever: &dyn Retriever,
    out: &Path,
) -> Result<Vec<TrainingExample>> {
    let params = MiningParams {
        n_neg: ctx.config.mining.n_neg,
        pool_depth: ctx.config.mining.pool_depth,
        seed: seed::derive_seed(ctx.seed(), "mining"),
        source: "synthetic".to_owned(),
    };
    let examples = mine_hard_negatives(queries, &positives_from_queries(queries), retriever, &params)?;
    write_examples(ctx.jsonl_output(out, "training_examples")?, &examples)?;
    Ok(examples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSummary {
    pub pairs: usize,
    pub skipped_passages: usize,
}

pub fn pairs(
    ctx: &Context,
    corpus: &Corpus,
    queries: &[SyntheticQuery],
    out: &Path,
) -> Result<(Vec<PretrainPair>, PairSummary)> {
    let sampled = sample_pairs(corpus, &queries_by_passage(queries), seed::derive_seed(ctx.seed(), "pairs"))?;
    let p = &ctx.config.pretrain;
    let masked = mask_all(
        &sampled.pairs,
        p.encoder_ratio,
        p.decoder_ratio,
        seed::derive_seed(ctx.seed(), "masking"),
    )?;
    serialize_pairs(ctx.jsonl_output(out, "pretrain_pairs")?, &masked)?;
    let summary = PairSummary {
        pairs: masked.len(),
        skipped_passages: sampled.skipped,
    };
    Ok((masked, summary))
}

/// Every query text that may reach the toy encoder, plus all passages.
fn encoder_texts<'a>(corpus: &'a Corpus, queries: &'a [SyntheticQuery]) -> impl Iterator<Item = &'a str> {
    corpus
        .passages()
        .iter()
        .map(|p| p.content.as_str())
        .chain(queries.iter().map(|q| q.text.as_str()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTraining {
    pub initial: ToyEncoder,
    pub trained: ToyEncoder,
    pub loss_trace: Vec<f64>,
}

/// Initializes a toy encoder over `vocab_queries` and the corpus, then
/// fine-tunes it on `examples`. Writes the loss trace when `trace_out` is set.
pub fn train(
    ctx: &Context,
    corpus: &Corpus,
    vocab_queries: &[SyntheticQuery],
    examples: &[TrainingExample],
    trace_out: Option<&Path>,
) -> Result<ToyTraining> {
    let t = &ctx.config.train;
    let initial = ToyEncoder::from_texts(
        encoder_texts(corpus, vocab_queries),
        t.dim,
        t.init_noise,
        seed::derive_seed(ctx.seed(), "encoder"),
    )?;
    let texts: HashMap<String, String> = vocab_queries
        .iter()
        .map(|q| (q.id.clone(), q.text.clone()))
        .collect();
    let mut trained = initial.clone();
    let loss_trace = train_toy(corpus, &texts, examples, &mut trained, &ctx.train_params())?;
    if let Some(p) = trace_out {
        ctx.sidecar_output(p, "loss_trace", |w| write_loss_trace(w, &loss_trace))?;
    }
    Ok(ToyTraining {
        initial,
        trained,
        loss_trace,
    })
}

/// Top-`top_k` rankings for every query.
pub fn run_queries(retriever: &dyn Retriever, queries: &[SyntheticQuery], top_k: usize) -> Result<RunList> {
    use rayon::prelude::*;
    let rankings = queries
        .par_iter()
        .map(|q| retriever.retrieve(&q.text, top_k))
        .collect::<Result<Vec<_>>>()?;
    let mut run = RunList::new();
    for (q, r) in queries.iter().zip(rankings) {
        run.insert(&q.id, r)?;
    }
    Ok(run)
}

pub fn write_run(ctx: &Context, run: &RunList, tag: &str, out: &Path) -> Result<()> {
    ctx.sidecar_output(out, "run", |w| run.write_run(w, tag))
}

/// Each query's source passage as its single relevant passage.
pub fn qrels_from_queries(queries: &[SyntheticQuery]) -> Result<Judgments> {
    let mut j = Judgments::new();
    for q in queries {
        j.insert(&q.id, &q.passage_id, 1)?;
    }
    Ok(j)
}

pub fn write_qrels(ctx: &Context, judgments: &Judgments, out: &Path) -> Result<()> {
    ctx.sidecar_output(out, "qrels", |w| judgments.write_qrels(w))
}

pub fn query_sources(queries: &[SyntheticQuery], corpus: &Corpus) -> Result<BTreeMap<String, QuerySource>> {
    queries
        .iter()
        .map(|q| {
            let p = corpus.get(&q.passage_id).ok_or_else(|| Error::UnknownPassage {
                query_id: q.id.clone(),
                passage_id: q.passage_id.clone(),
            })?;
            Ok((
                q.id.clone(),
                QuerySource {
                    passage_id: p.id.clone(),
                    doc_id: p.doc_id.clone(),
                },
            ))
        })
        .collect()
}

/// Deterministic split of queries into (train, test); roughly one in
/// `test_every` queries goes to test.
pub fn split_queries(queries: &[SyntheticQuery], seed: u64, test_every: u64) -> (Vec<SyntheticQuery>, Vec<SyntheticQuery>) {
    queries
        .iter()
        .cloned()
        .partition(|q| !seed::keyed_hash(seed, q.id.as_bytes()).is_multiple_of(test_every))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateRow {
    pub mode: String,
    pub k: usize,
    pub passage_hit_rate: f64,
    pub document_hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageRow {
    pub bits: u8,
    pub report: StorageReport,
    pub mrr_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub passages: usize,
    pub generated: BTreeMap<String, GenerationSummary>,
    pub hit_rates: Vec<HitRateRow>,
    pub filter_input: usize,
    pub filter_kept: usize,
    pub dropped_self_reference: usize,
    pub dropped_recovery: usize,
    pub pairs: PairSummary,
    pub train_queries: usize,
    pub test_queries: usize,
    pub training_examples: usize,
    pub loss_first: f64,
    pub loss_last: f64,
    pub runs: Vec<(String, MetricTable)>,
    pub storage: Vec<StorageRow>,
}

pub const DEMO_DOCUMENTS: usize = 30;
pub const DEMO_SECTIONS: usize = 6;
const HIT_RATE_KS: [usize; 3] = [10, 20, 40];

/// Paths of every artifact the demo writes, relative to its output directory.
pub const DEMO_ARTIFACTS: &[&str] = &[
    "documents.jsonl",
    "corpus.jsonl",
    "queries_aspect.jsonl",
    "queries_basic.jsonl",
    "filtered_queries.jsonl",
    "filter_report.json",
    "pairs.jsonl",
    "qrels_test.tsv",
    "bm25.vlbm",
    "dense.vlde",
    "examples.jsonl",
    "loss_trace.csv",
    "colbert_b1.vlci",
    "colbert_b2.vlci",
    "colbert_b4.vlci",
    "colbert_b8.vlci",
    "runs/bm25.trec",
    "runs/dense.trec",
    "runs/toy_init.trec",
    "runs/toy_trained.trec",
    "runs/colbert_b1.trec",
    "runs/colbert_b2.trec",
    "runs/colbert_b4.trec",
    "runs/colbert_b8.trec",
    "metrics.json",
    "metrics.txt",
];

/// Runs every stage on a seeded synthetic corpus with the mock generator and
/// writes all artifacts under `out_dir`.
pub fn run_demo(ctx: &Context, out_dir: &Path) -> Result<DemoReport> {
    let path = |name: &str| -> PathBuf { out_dir.join(name) };
    let seed = ctx.seed();

    let docs = synthetic::legal_documents(DEMO_DOCUMENTS, DEMO_SECTIONS, seed::derive_seed(seed, "corpus"));
    write_document_file(ctx, &docs, &path("documents.jsonl"))?;
    let corpus = ingest_documents(ctx, &docs, &path("corpus.jsonl"))?;
    let bm25 = Bm25Retriever::new(build_bm25(ctx, &corpus, &path("bm25.vlbm"))?, ctx.bm25_params());

    let backend = ctx.mock_backend();
    let mut generated = BTreeMap::new();
    let mut hit_rows = Vec::new();
    let passage_docs = corpus.passage_docs();
    let mut aspect_queries = Vec::new();
    for (mode, name) in [(PromptMode::AspectGuided, "aspect"), (PromptMode::Basic, "basic")] {
        let opts = GenerationOptions {
            mode,
            ..ctx.generation_options()
        };
        let (queries, summary) = generate(ctx, &corpus, &backend, &opts, &path(&format!("queries_{name}.jsonl")))?;
        generated.insert(name.to_owned(), summary);
        let run = run_queries(&bm25, &queries, *HIT_RATE_KS.iter().max().expect("non-empty"))?;
        let sources = query_sources(&queries, &corpus)?;
        for k in HIT_RATE_KS {
            let (p, d) = hit_rates(&run, &sources, &passage_docs, k)?;
            hit_rows.push(HitRateRow {
                mode: name.to_owned(),
                k,
                passage_hit_rate: p,
                document_hit_rate: d,
            });
        }
        if mode == PromptMode::AspectGuided {
            aspect_queries = queries;
        }
    }

    let (kept, report) = filter(
        ctx,
        &aspect_queries,
        &bm25,
        &path("filtered_queries.jsonl"),
        Some(&path("filter_report.json")),
    )?;
    let (_, pair_summary) = pairs(ctx, &corpus, &kept, &path("pairs.jsonl"))?;

    let (train_q, test_q) = split_queries(&kept, seed::derive_seed(seed, "split"), 5);
    let qrels = qrels_from_queries(&test_q)?;
    write_qrels(ctx, &qrels, &path("qrels_test.tsv"))?;

    let dense = dense_retriever(ctx, build_dense(ctx, &corpus, &path("dense.vlde"))?)?;
    let examples = mine(ctx, &train_q, &dense, &path("examples.jsonl"))?;
    let training = train(ctx, &corpus, &kept, &examples, Some(&path("loss_trace.csv")))?;

    let mut named_runs: Vec<(String, RunList)> = vec![
        ("bm25".into(), run_queries(&bm25, &test_q, 100)?),
        ("dense".into(), run_queries(&dense, &test_q, 100)?),
        (
            "toy_init".into(),
            run_queries(&ToyRetriever::new(training.initial.clone(), &corpus), &test_q, 100)?,
        ),
        (
            "toy_trained".into(),
            run_queries(&ToyRetriever::new(training.trained.clone(), &corpus), &test_q, 100)?,
        ),
    ];

    let mv_docs = encode_multi_vector(ctx, &corpus)?;
    let encoder = ctx.token_encoder();
    let mut storage = Vec::new();
    for bits in Bits::ALL {
        let name = format!("colbert_b{}", bits.get());
        let index = build_colbert(ctx, &mv_docs, bits, &path(&format!("{name}.vlci")))?;
        let report = index.storage_report();
        let retriever = LateInteractionRetriever { index, encoder };
        let run = run_queries(&retriever, &test_q, 100)?;
        let mrr = evaluate_run(&run, &qrels, &[10], ctx.eval_options())?.by_k[0].mrr;
        storage.push(StorageRow {
            bits: bits.get(),
            report,
            mrr_at_10: mrr,
        });
        named_runs.push((name, run));
    }

    let mut tables = Vec::new();
    for (name, run) in &named_runs {
        write_run(ctx, run, name, &path(&format!("runs/{name}.trec")))?;
        tables.push((name.clone(), evaluate_run(run, &qrels, &ctx.config.eval.ks, ctx.eval_options())?));
    }

    let demo = DemoReport {
        seed,
        passages: corpus.len(),
        generated,
        hit_rates: hit_rows,
        filter_input: report.input_count,
        filter_kept: report.kept.len(),
        dropped_self_reference: report.dropped_self_ref.len(),
        dropped_recovery: report.dropped_recovery.len(),
        pairs: pair_summary,
        train_queries: train_q.len(),
        test_queries: test_q.len(),
        training_examples: examples.len(),
        loss_first: training.loss_trace.first().copied().unwrap_or(0.0),
        loss_last: training.loss_trace.last().copied().unwrap_or(0.0),
        runs: tables,
        storage,
    };
    ctx.write_json(&path("metrics.json"), "metrics", &demo)?;
    ctx.write_text(&path("metrics.txt"), "metrics_table", &render_demo(&demo))?;
    Ok(demo)
}

/// Retrieval table, hit-rate table and storage table as aligned text.
pub fn render_demo(demo: &DemoReport) -> String {
    let rows: Vec<(&str, &MetricTable)> = demo.runs.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "seed {}  passages {}  test queries {}  training examples {}",
        demo.seed, demo.passages, demo.test_queries, demo.training_examples
    );
    let _ = writeln!(
        out,
        "filter: {} in, {} kept, {} self-reference, {} recovery",
        demo.filter_input, demo.filter_kept, demo.dropped_self_reference, demo.dropped_recovery
    );
    let _ = writeln!(out, "loss: {:.4} -> {:.4}\n", demo.loss_first, demo.loss_last);
    out.push_str(&render_table(&rows));
    let _ = writeln!(out, "\n{:<8}  {:>4}  {:>9}  {:>9}", "mode", "k", "passage%", "document%");
    for h in &demo.hit_rates {
        let _ = writeln!(
            out,
            "{:<8}  {:>4}  {:>9.2}  {:>9.2}",
            h.mode, h.k, h.passage_hit_rate, h.document_hit_rate
        );
    }
    let _ = writeln!(
        out,
        "\n{:>4}  {:>12}  {:>12}  {:>10}  {:>8}",
        "bits", "total bytes", "residuals", "per vector", "MRR@10"
    );
    for s in &demo.storage {
        let _ = writeln!(
            out,
            "{:>4}  {:>12}  {:>12}  {:>10}  {:>8.4}",
            s.bits, s.report.bytes_total, s.report.bytes_residuals, s.report.bytes_per_vector, s.mrr_at_10
        );
    }
    out
}

pub const TOY_PASSAGES: usize = 256;
pub const TOY_NOISE_WORDS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExperiment {
    pub initial_mrr_at_10: f64,
    pub final_mrr_at_10: f64,
    pub loss_trace: Vec<f64>,
}

fn mrr_at_10(retriever: &dyn Retriever, queries: &[SyntheticQuery]) -> Result<f64> {
    let run = run_queries(retriever, queries, 10)?;
    crate::metrics::mrr_at_k(&run, &qrels_from_queries(queries)?, 10, EvalOptions::default())
}

/// Fine-tunes the toy encoder on the separable task (each query shares one
/// key token with exactly its passage), with hard negatives mined by the
/// untrained encoder, and reports MRR@10 before and after.
pub fn separable_experiment(ctx: &Context) -> Result<ToyExperiment> {
    let toy = synthetic::separable_toy(TOY_PASSAGES, 1, TOY_NOISE_WORDS, seed::derive_seed(ctx.seed(), "toy"))?;
    let t = &ctx.config.train;
    let initial = ToyEncoder::from_texts(
        encoder_texts(&toy.corpus, &toy.queries),
        t.dim,
        t.init_noise,
        seed::derive_seed(ctx.seed(), "encoder"),
    )?;
    let before = ToyRetriever::new(initial.clone(), &toy.corpus);
    let initial_mrr_at_10 = mrr_at_10(&before, &toy.queries)?;
    let params = MiningParams {
        n_neg: ctx.config.mining.n_neg,
        pool_depth: ctx.config.mining.pool_depth,
        seed: seed::derive_seed(ctx.seed(), "mining"),
        source: "toy".to_owned(),
    };
    let examples = mine_hard_negatives(&toy.queries, &positives_from_queries(&toy.queries), &before, &params)?;
    let texts: HashMap<String, String> = toy
        .queries
        .iter()
        .map(|q| (q.id.clone(), q.text.clone()))
        .collect();
    let mut trained = initial;
    let loss_trace = train_toy(&toy.corpus, &texts, &examples, &mut trained, &ctx.train_params())?;
    let final_mrr_at_10 = mrr_at_10(&ToyRetriever::new(trained, &toy.corpus), &toy.queries)?;
    Ok(ToyExperiment {
        initial_mrr_at_10,
        final_mrr_at_10,
        loss_trace,
    })
}
