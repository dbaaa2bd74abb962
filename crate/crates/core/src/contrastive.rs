//! InfoNCE training: hard-negative mining, the loss and its analytic
//! gradient, and a small bag-of-tokens encoder that can be fine-tuned with it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::dense::{dot, pseudo_embed};
use crate::error::{Error, Result};
use crate::query_gen::SyntheticQuery;
use crate::retrieval::{rank_top_k, Ranking, Retriever};
use crate::seed;
use crate::text::folded_tokens;

pub const DEFAULT_NEGATIVES: usize = 7;
pub const DEFAULT_MULTI_VECTOR_NEGATIVES: usize = 15;
pub const DEFAULT_POOL_DEPTH: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
    pub source: String,
}

pub fn write_examples<W: Write>(sink: W, examples: &[TrainingExample]) -> Result<usize> {
    crate::io::write_json_lines(sink, examples)
}

pub fn read_examples<R: BufRead>(source: R) -> Result<Vec<TrainingExample>> {
    crate::io::read_json_lines(source)
}

/// Positive passages per query id, from the source passage of each query.
pub fn positives_from_queries(queries: &[SyntheticQuery]) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for q in queries {
        out.entry(q.id.clone()).or_default().insert(q.passage_id.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningParams {
    pub n_neg: usize,
    pub pool_depth: usize,
    pub seed: u64,
    pub source: String,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            n_neg: DEFAULT_NEGATIVES,
            pool_depth: DEFAULT_POOL_DEPTH,
            seed: 0,
            source: "synthetic".to_owned(),
        }
    }
}

/// One example per (query, positive) pair.
///
/// Negatives are the retriever's top `pool_depth` results minus every known
/// positive of the query, truncated to `n_neg`. Short pools are padded with
/// uniformly drawn non-positive passages from a per-query seeded stream.
/// Queries without an entry in `positives` are skipped.
pub fn mine_hard_negatives(
    queries: &[SyntheticQuery],
    positives: &BTreeMap<String, BTreeSet<String>>,
    retriever: &dyn Retriever,
    params: &MiningParams,
) -> Result<Vec<TrainingExample>> {
    use rayon::prelude::*;

    if params.n_neg == 0 {
        return Err(Error::invalid("n_neg must be at least 1"));
    }
    if params.pool_depth < params.n_neg {
        return Err(Error::invalid(format!(
            "pool_depth {} is smaller than n_neg {}",
            params.pool_depth, params.n_neg
        )));
    }
    let all_ids = retriever.passage_ids();
    let per_query: Vec<Result<Vec<TrainingExample>>> = queries
        .par_iter()
        .map(|q| {
            let Some(pos) = positives.get(&q.id) else {
                return Ok(Vec::new());
            };
            if all_ids.len() < params.n_neg + pos.len() {
                return Err(Error::invalid(format!(
                    "corpus of {} passages cannot supply {} negatives for query `{}` with {} positives",
                    all_ids.len(),
                    params.n_neg,
                    q.id,
                    pos.len()
                )));
            }
            let negatives = mine_one(q, pos, retriever, all_ids, params)?;
            Ok(pos
                .iter()
                .map(|p| TrainingExample {
                    query_id: q.id.clone(),
                    positive_id: p.clone(),
                    negative_ids: negatives.clone(),
                    source: params.source.clone(),
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_query {
        out.extend(r?);
    }
    Ok(out)
}

fn mine_one(
    q: &SyntheticQuery,
    positives: &BTreeSet<String>,
    retriever: &dyn Retriever,
    all_ids: &[String],
    params: &MiningParams,
) -> Result<Vec<String>> {
    let ranking = retriever.retrieve(&q.text, params.pool_depth)?;
    let mut chosen: Vec<String> = ranking
        .into_iter()
        .map(|r| r.passage_id)
        .filter(|id| !positives.contains(id))
        .take(params.n_neg)
        .collect();
    if chosen.len() < params.n_neg {
        let taken: HashSet<&str> = chosen.iter().map(String::as_str).collect();
        let mut pool: Vec<&String> = all_ids
            .iter()
            .filter(|id| !positives.contains(*id) && !taken.contains(id.as_str()))
            .collect();
        let mut rng = seed::keyed_rng(params.seed, &q.id);
        pool.shuffle(&mut rng);
        let missing = params.n_neg - chosen.len();
        chosen.extend(pool.into_iter().take(missing).cloned());
    }
    Ok(chosen)
}

/// Vectors for one InfoNCE evaluation.
///
/// Row `i` of `queries` is scored against `positives[i]`, its own negatives
/// `negatives[i]` and, with `use_in_batch`, every other row's positive.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceBatch {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
    pub temperature: f64,
    pub use_in_batch: bool,
}

/// Gradients with the same shapes as the batch's vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub queries: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Candidate {
    Positive(usize),
    Negative(usize, usize),
}

impl InfoNceBatch {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        let b = self.queries.len();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if self.positives.len() != b || self.negatives.len() != b {
            return Err(Error::invalid("batch rows disagree in length"));
        }
        let dim = self.queries[0].len();
        let n_neg = self.negatives[0].len();
        for i in 0..b {
            if self.negatives[i].len() != n_neg {
                return Err(Error::invalid("examples have different negative counts"));
            }
            let rows = std::iter::once(&self.queries[i])
                .chain(std::iter::once(&self.positives[i]))
                .chain(&self.negatives[i]);
            for v in rows {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("InfoNCE batch vectors"));
                }
            }
        }
        Ok(())
    }

    fn candidates(&self, i: usize) -> Vec<Candidate> {
        let mut c = vec![Candidate::Positive(i)];
        c.extend((0..self.negatives[i].len()).map(|n| Candidate::Negative(i, n)));
        if self.use_in_batch {
            c.extend((0..self.queries.len()).filter(|&j| j != i).map(Candidate::Positive));
        }
        c
    }

    fn vector(&self, c: Candidate) -> &[f64] {
        match c {
            Candidate::Positive(j) => &self.positives[j],
            Candidate::Negative(j, n) => &self.negatives[j][n],
        }
    }

    /// Softmax weights over `candidates(i)` and example `i`'s loss.
    fn example(&self, i: usize) -> (Vec<Candidate>, Vec<f64>, f64) {
        let cands = self.candidates(i);
        let logits: Vec<f64> = cands
            .iter()
            .map(|&c| dot(&self.queries[i], self.vector(c)) / self.temperature)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = max + z.ln() - logits[0];
        let weights = exps.into_iter().map(|e| e / z).collect();
        (cands, weights, loss)
    }
}

/// Mean over the batch of −log softmax probability of the positive.
pub fn infonce_loss(batch: &InfoNceBatch) -> Result<f64> {
    batch.validate()?;
    let b = batch.queries.len();
    let total: f64 = (0..b).map(|i| batch.example(i).2).sum();
    Ok(total / b as f64)
}

/// Loss together with its exact gradient.
pub fn infonce_grad(batch: &InfoNceBatch) -> Result<(f64, InfoNceGrad)> {
    batch.validate()?;
    let b = batch.queries.len();
    let dim = batch.queries[0].len();
    let zeros = || vec![0.0; dim];
    let mut grad = InfoNceGrad {
        queries: vec![zeros(); b],
        positives: vec![zeros(); b],
        negatives: batch
            .negatives
            .iter()
            .map(|n| vec![zeros(); n.len()])
            .collect(),
    };
    let scale = 1.0 / (b as f64 * batch.temperature);
    let mut total = 0.0;
    for i in 0..b {
        let (cands, weights, loss) = batch.example(i);
        total += loss;
        for (k, (&c, &w)) in cands.iter().zip(&weights).enumerate() {
            // d loss_i / d logit_c = w_c − [c is the positive]
            let coeff = (w - if k == 0 { 1.0 } else { 0.0 }) * scale;
            let v = batch.vector(c);
            for (g, x) in grad.queries[i].iter_mut().zip(v) {
                *g += coeff * x;
            }
            let target = match c {
                Candidate::Positive(j) => &mut grad.positives[j],
                Candidate::Negative(j, n) => &mut grad.negatives[j][n],
            };
            for (g, x) in target.iter_mut().zip(&batch.queries[i]) {
                *g += coeff * x;
            }
        }
    }
    Ok((total / b as f64, grad))
}

/// Trainable token vectors; a text encodes as the L2-normalized mean of its
/// known tokens' vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    dim: usize,
    vocab: BTreeMap<String, usize>,
    weights: Vec<f64>,
}

/// Forward state kept for backpropagation.
struct Encoded {
    rows: Vec<usize>,
    mean_norm: f64,
    output: Vec<f64>,
}

impl ToyEncoder {
    /// Vocabulary from `texts`; each token starts at its feature-hashed
    /// pseudo-embedding plus uniform noise of amplitude `init_noise`.
    pub fn from_texts<'a, I>(texts: I, dim: usize, init_noise: f64, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if dim < 2 {
            return Err(Error::invalid("encoder dimension must be at least 2"));
        }
        let mut vocab = BTreeMap::new();
        for t in texts {
            for tok in folded_tokens(t) {
                let next = vocab.len();
                vocab.entry(tok).or_insert(next);
            }
        }
        // Ordinals were assigned in first-seen order; reassign in sorted order
        // so the layout does not depend on text order.
        for (i, v) in vocab.values_mut().enumerate() {
            *v = i;
        }
        let mut weights = vec![0.0; vocab.len() * dim];
        for (tok, &row) in &vocab {
            let mut rng = seed::keyed_rng(seed, tok);
            let base = pseudo_embed(tok, dim, seed);
            for (w, b) in weights[row * dim..(row + 1) * dim].iter_mut().zip(base) {
                *w = b + init_noise * rng.gen_range(-1.0..1.0);
            }
        }
        Ok(Self { dim, vocab, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab
            .get(token)
            .map(|&r| &self.weights[r * self.dim..(r + 1) * self.dim])
    }

    fn forward(&self, text: &str) -> Encoded {
        let rows: Vec<usize> = folded_tokens(text)
            .iter()
            .filter_map(|t| self.vocab.get(t).copied())
            .collect();
        let mut mean = vec![0.0; self.dim];
        for &r in &rows {
            for (m, w) in mean.iter_mut().zip(&self.weights[r * self.dim..(r + 1) * self.dim]) {
                *m += w;
            }
        }
        if !rows.is_empty() {
            let n = rows.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        let mean_norm = dot(&mean, &mean).sqrt();
        if mean_norm > 0.0 {
            mean.iter_mut().for_each(|m| *m /= mean_norm);
        }
        Encoded {
            rows,
            mean_norm,
            output: mean,
        }
    }

    /// Unit vector, or zeros when no token is known or the mean vanishes.
    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.forward(text).output
    }

    /// Accumulates d loss / d weights given d loss / d output.
    fn backward(&self, enc: &Encoded, d_out: &[f64], grad: &mut [f64]) {
        if enc.mean_norm == 0.0 {
            return;
        }
        let h = &enc.output;
        let proj = dot(h, d_out);
        let scale = 1.0 / (enc.mean_norm * enc.rows.len() as f64);
        for &r in &enc.rows {
            for (j, g) in grad[r * self.dim..(r + 1) * self.dim].iter_mut().enumerate() {
                *g += (d_out[j] - h[j] * proj) * scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub temperature: f64,
    pub use_in_batch: bool,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 32,
            learning_rate: 1.0,
            momentum: 0.9,
            temperature: 1.0,
            use_in_batch: false,
            seed: 0,
        }
    }
}

/// Draws the next batch from a seeded, epoch-wise shuffled order. An example
/// whose query or positive already appears in the batch is passed over until
/// the next epoch, so no batch contains a positive twice.
struct BatchSampler<'a> {
    examples: &'a [TrainingExample],
    order: Vec<usize>,
    cursor: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    fn new(examples: &'a [TrainingExample], seed: u64) -> Self {
        let mut s = Self {
            examples,
            order: (0..examples.len()).collect(),
            cursor: 0,
            rng: seed::rng(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        let mut queries = HashSet::new();
        let mut positives = HashSet::new();
        let mut scanned = 0;
        while batch.len() < size && scanned < self.examples.len() {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let i = self.order[self.cursor];
            self.cursor += 1;
            scanned += 1;
            let ex = &self.examples[i];
            if queries.contains(ex.query_id.as_str()) || positives.contains(ex.positive_id.as_str()) {
                continue;
            }
            queries.insert(ex.query_id.as_str());
            positives.insert(ex.positive_id.as_str());
            batch.push(i);
        }
        batch
    }
}

/// SGD with momentum on the InfoNCE loss. Returns the loss of each step,
/// measured before that step's update.
pub fn train_toy(
    corpus: &Corpus,
    query_texts: &HashMap<String, String>,
    examples: &[TrainingExample],
    encoder: &mut ToyEncoder,
    params: &TrainParams,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    if params.steps == 0 || params.batch_size == 0 {
        return Err(Error::invalid("steps and batch_size must be at least 1"));
    }
    let n_neg = examples[0].negative_ids.len();
    for ex in examples {
        if ex.negative_ids.len() != n_neg {
            return Err(Error::invalid("examples have different negative counts"));
        }
        if !query_texts.contains_key(&ex.query_id) {
            return Err(Error::invalid(format!("no text for query `{}`", ex.query_id)));
        }
        for pid in std::iter::once(&ex.positive_id).chain(&ex.negative_ids) {
            if corpus.get(pid).is_none() {
                return Err(Error::UnknownPassage {
                    query_id: ex.query_id.clone(),
                    passage_id: pid.clone(),
                });
            }
        }
    }
    let passage_text = |id: &str| corpus.get(id).map_or("", |p| p.content.as_str());
    let mut sampler = BatchSampler::new(examples, params.seed);
    let mut velocity = vec![0.0; encoder.weights.len()];
    let mut trace = Vec::with_capacity(params.steps);
    for _ in 0..params.steps {
        let batch = sampler.next_batch(params.batch_size);
        let q_enc: Vec<Encoded> = batch
            .iter()
            .map(|&i| encoder.forward(&query_texts[&examples[i].query_id]))
            .collect();
        let p_enc: Vec<Encoded> = batch
            .iter()
            .map(|&i| encoder.forward(passage_text(&examples[i].positive_id)))
            .collect();
        let n_enc: Vec<Vec<Encoded>> = batch
            .iter()
            .map(|&i| {
                examples[i]
                    .negative_ids
                    .iter()
                    .map(|id| encoder.forward(passage_text(id)))
                    .collect()
            })
            .collect();
        let infonce = InfoNceBatch {
            queries: q_enc.iter().map(|e| e.output.clone()).collect(),
            positives: p_enc.iter().map(|e| e.output.clone()).collect(),
            negatives: n_enc
                .iter()
                .map(|ns| ns.iter().map(|e| e.output.clone()).collect())
                .collect(),
            temperature: params.temperature,
            use_in_batch: params.use_in_batch,
        };
        let (loss, g) = infonce_grad(&infonce)?;
        trace.push(loss);
        let mut grad = vec![0.0; encoder.weights.len()];
        for (e, d) in q_enc.iter().zip(&g.queries) {
            encoder.backward(e, d, &mut grad);
        }
        for (e, d) in p_enc.iter().zip(&g.positives) {
            encoder.backward(e, d, &mut grad);
        }
        for (es, ds) in n_enc.iter().zip(&g.negatives) {
            for (e, d) in es.iter().zip(ds) {
                encoder.backward(e, d, &mut grad);
            }
        }
        for ((w, v), g) in encoder.weights.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = params.momentum * *v + g;
            *w -= params.learning_rate * *v;
        }
    }
    Ok(trace)
}

pub fn write_loss_trace<W: Write>(mut sink: W, trace: &[f64]) -> Result<()> {
    writeln!(sink, "step,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(sink, "{},{l:.9}", i + 1)?;
    }
    sink.flush()?;
    Ok(())
}

/// Dot-product retrieval over passages encoded with a [`ToyEncoder`].
pub struct ToyRetriever {
    encoder: ToyEncoder,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ToyRetriever {
    pub fn new(encoder: ToyEncoder, corpus: &Corpus) -> Self {
        use rayon::prelude::*;
        let rows = corpus
            .passages()
            .par_iter()
            .map(|p| encoder.encode(&p.content))
            .collect();
        Self {
            encoder,
            ids: corpus.ids(),
            rows,
        }
    }
}

impl Retriever for ToyRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Ranking> {
        let q = self.encoder.encode(query);
        let scores: Vec<f64> = self.rows.iter().map(|r| dot(&q, r)).collect();
        Ok(rank_top_k(&self.ids, &scores, top_k))
    }

    fn contains(&self, passage_id: &str) -> bool {
        self.ids.iter().any(|i| i == passage_id)
    }

    fn passage_ids(&self) -> &[String] {
        &self.ids
    }
}
