//! Query-as-context pre-training data: each passage is paired with one of its
//! generated queries, and both sides get a seeded mask for masked-token
//! reconstruction by an external trainer.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::query_gen::SyntheticQuery;
use crate::seed;
use crate::text::tokenize;

pub const DEFAULT_ENCODER_RATIO: f64 = 0.30;
pub const DEFAULT_DECODER_RATIO: f64 = 0.45;

/// A passage and the query chosen as its context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPair {
    pub passage_id: String,
    pub passage_text: String,
    pub query_id: String,
    pub query_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampledPairs {
    pub pairs: Vec<SampledPair>,
    /// Passages with no surviving query.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainPair {
    pub passage_id: String,
    pub x_tokens: Vec<String>,
    pub y_tokens: Vec<String>,
    pub enc_mask: Vec<usize>,
    pub dec_mask: Vec<usize>,
    pub seed: u64,
}

/// One pair per passage that has at least one query, in corpus order. The
/// query is drawn uniformly from a stream seeded by (`seed`, passage id).
pub fn sample_pairs(
    corpus: &Corpus,
    queries: &BTreeMap<String, Vec<SyntheticQuery>>,
    seed: u64,
) -> Result<SampledPairs> {
    for (pid, qs) in queries {
        if corpus.get(pid).is_none() {
            return Err(Error::UnknownPassage {
                query_id: qs.first().map(|q| q.id.clone()).unwrap_or_default(),
                passage_id: pid.clone(),
            });
        }
    }
    let mut out = SampledPairs::default();
    for p in corpus.passages() {
        let Some(choice) = queries
            .get(&p.id)
            .and_then(|qs| qs.choose(&mut seed::keyed_rng(seed, &p.id)))
        else {
            out.skipped += 1;
            continue;
        };
        out.pairs.push(SampledPair {
            passage_id: p.id.clone(),
            passage_text: p.content.clone(),
            query_id: choice.id.clone(),
            query_text: choice.text.clone(),
        });
    }
    Ok(out)
}

/// `⌊ratio · len⌋`, tolerant of ratios like 0.3 whose binary value sits just
/// below the decimal one.
pub fn mask_count(ratio: f64, len: usize) -> usize {
    (ratio * len as f64 + 1e-9).floor() as usize
}

fn sample_mask(len: usize, ratio: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut m = index::sample(rng, len, mask_count(ratio, len)).into_vec();
    m.sort_unstable();
    m
}

/// Masks `⌊ratio·len⌋` distinct positions on each side. The mask stream is
/// seeded by (`seed`, passage id), so pairs can be masked in any order.
pub fn apply_masking(
    pair: &SampledPair,
    encoder_ratio: f64,
    decoder_ratio: f64,
    seed: u64,
) -> Result<PretrainPair> {
    for (name, r) in [("encoder", encoder_ratio), ("decoder", decoder_ratio)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::invalid(format!("{name} mask ratio must lie in (0, 1), got {r}")));
        }
    }
    let x_tokens = tokenize(&pair.passage_text);
    let y_tokens = tokenize(&pair.query_text);
    if x_tokens.len() < 2 || y_tokens.len() < 2 {
        return Err(Error::invalid(format!(
            "pair for `{}` needs at least 2 tokens per side",
            pair.passage_id
        )));
    }
    let pair_seed = seed::derive_seed(seed, &pair.passage_id);
    let mut rng = seed::rng(pair_seed);
    let enc_mask = sample_mask(x_tokens.len(), encoder_ratio, &mut rng);
    let dec_mask = sample_mask(y_tokens.len(), decoder_ratio, &mut rng);
    Ok(PretrainPair {
        passage_id: pair.passage_id.clone(),
        x_tokens,
        y_tokens,
        enc_mask,
        dec_mask,
        seed: pair_seed,
    })
}

/// Masks every pair in parallel; output order matches input order.
pub fn mask_all(
    pairs: &[SampledPair],
    encoder_ratio: f64,
    decoder_ratio: f64,
    seed: u64,
) -> Result<Vec<PretrainPair>> {
    use rayon::prelude::*;
    pairs
        .par_iter()
        .map(|p| apply_masking(p, encoder_ratio, decoder_ratio, seed))
        .collect()
}

pub fn serialize_pairs<W: Write>(sink: W, pairs: &[PretrainPair]) -> Result<usize> {
    crate::io::write_json_lines(sink, pairs)
}

pub fn read_pairs<R: BufRead>(source: R) -> Result<Vec<PretrainPair>> {
    crate::io::read_json_lines(source)
}
