//! Single-vector retrieval with exhaustive dot-product search.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::bm25::{read_u32, read_u8, write_u32};
use crate::corpus::{Corpus, Passage};
use crate::error::{Error, Result};
use crate::retrieval::{rank_top_k, Ranking, Retriever};
use crate::seed::keyed_hash;
use crate::text::folded_tokens;

pub const MAGIC: &[u8; 4] = b"VLDE";
pub const VERSION: u8 = 1;

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_query(&self, text: &str) -> Result<Vec<f64>>;

    fn embed_passage(&self, passage: &Passage) -> Result<Vec<f64>>;
}

/// Signed feature hashing of case-folded tokens into `dim` buckets,
/// L2-normalized. Text without tokens maps to the zero vector.
pub fn pseudo_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 2, "embedding dimension must be at least 2");
    let mut v = vec![0.0; dim];
    for token in folded_tokens(text) {
        let h = keyed_hash(seed, token.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    normalize_in_place(&mut v);
    v
}

/// Scales `v` to unit length; leaves the zero vector untouched.
pub fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl PseudoEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl EmbeddingProvider for PseudoEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_query(&self, text: &str) -> Result<Vec<f64>> {
        Ok(pseudo_embed(text, self.dim, self.seed))
    }

    fn embed_passage(&self, passage: &Passage) -> Result<Vec<f64>> {
        Ok(pseudo_embed(&passage.content, self.dim, self.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Dot,
    /// Normalize both sides, then dot.
    Cosine,
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Usage(format!(
                "unknown similarity `{other}` (expected dot or cosine)"
            ))),
        }
    }
}

/// Row-major `count × dim` matrix of passage embeddings, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
    ordinals: HashMap<String, usize>,
}

impl DenseIndex {
    pub fn from_rows(ids: Vec<String>, dim: usize, matrix: Vec<f32>) -> Result<Self> {
        if dim == 0 || matrix.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                actual: matrix.len(),
            });
        }
        let mut ordinals = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if ordinals.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicatePassage(id.clone()));
            }
        }
        Ok(Self {
            dim,
            ids,
            matrix,
            ordinals,
        })
    }

    pub fn build(corpus: &Corpus, provider: &dyn EmbeddingProvider) -> Result<Self> {
        use rayon::prelude::*;

        let dim = provider.dim();
        if dim < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build a dense index over an empty corpus"));
        }
        let rows: Vec<Vec<f64>> = corpus
            .passages()
            .par_iter()
            .map(|p| {
                let row = provider.embed_passage(p).map_err(|e| {
                    Error::invalid(format!("embedding passage `{}` failed: {e}", p.id))
                })?;
                if row.len() != dim {
                    return Err(Error::invalid(format!(
                        "embedding passage `{}` returned dimension {} instead of {dim}",
                        p.id,
                        row.len()
                    )));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        let matrix = rows.iter().flatten().map(|&x| x as f32).collect();
        Self::from_rows(corpus.ids(), dim, matrix)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, ordinal: usize) -> &[f32] {
        &self.matrix[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    pub fn ordinal(&self, passage_id: &str) -> Option<usize> {
        self.ordinals.get(passage_id).copied()
    }

    pub fn scores(&self, query: &[f64], similarity: Similarity) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let mut q = query.to_vec();
        if similarity == Similarity::Cosine {
            normalize_in_place(&mut q);
        }
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| {
                let s: f64 = row.iter().zip(&q).map(|(&x, y)| f64::from(x) * y).sum();
                match similarity {
                    Similarity::Dot => s,
                    Similarity::Cosine => {
                        let n = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                        if n > 0.0 {
                            s / n
                        } else {
                            0.0
                        }
                    }
                }
            })
            .collect())
    }

    pub fn search(&self, query: &[f64], top_k: usize, similarity: Similarity) -> Result<Ranking> {
        let scores = self.scores(query, similarity)?;
        Ok(rank_top_k(&self.ids, &scores, top_k))
    }

    /// Writes the embedding matrix file. Passage ids are not part of the
    /// format; rows follow corpus order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        write_u32(&mut w, self.len() as u32)?;
        write_u32(&mut w, self.dim as u32)?;
        for x in &self.matrix {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads an embedding matrix whose rows correspond to `ids` in order.
    pub fn read_from<R: Read>(mut r: R, ids: Vec<String>) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("VLDE", "bad magic"));
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(Error::format("VLDE", format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        if count != ids.len() {
            return Err(Error::format(
                "VLDE",
                format!("file holds {count} rows but {} passage ids were given", ids.len()),
            ));
        }
        let mut bytes = vec![0u8; count * dim * 4];
        r.read_exact(&mut bytes)?;
        let matrix = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_rows(ids, dim, matrix)
    }
}

/// A dense index paired with the provider that embeds queries for it.
#[derive(Clone)]
pub struct DenseRetriever {
    pub index: DenseIndex,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub similarity: Similarity,
}

impl DenseRetriever {
    pub fn new(index: DenseIndex, provider: Arc<dyn EmbeddingProvider>, similarity: Similarity) -> Self {
        Self {
            index,
            provider,
            similarity,
        }
    }
}

impl Retriever for DenseRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Ranking> {
        let q = self.provider.embed_query(query)?;
        self.index.search(&q, top_k, self.similarity)
    }

    fn contains(&self, passage_id: &str) -> bool {
        self.index.ordinal(passage_id).is_some()
    }

    fn passage_ids(&self) -> &[String] {
        self.index.ids()
    }
}
