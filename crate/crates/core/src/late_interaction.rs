//! Multi-vector MaxSim retrieval with residual compression.
//!
//! Each document token vector is stored as the id of its nearest k-means
//! centroid plus a `b`-bit-per-dimension code for the residual
//! (vector − centroid). Residual codes index uniform buckets spanning the
//! observed residual range of each dimension, so the per-dimension
//! reconstruction error is at most half a bucket width.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! header     "VLCI" u8 version, u32 C, u32 d, u8 b, u32 N       18 bytes
//! centroids  C × d f32
//! quantizer  d × (f64 lo, f64 hi)
//! offsets    u32 docs, then per doc: u32 len, id bytes, u32 start, u32 count
//! entries    N × (u32 centroid id, ⌈d·b/8⌉ code bytes)
//! ```
//!
//! [`StorageReport::bytes_total`] counts everything except the header and the
//! offset table.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::{read_str, read_u32, read_u8, write_str, write_u32};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::retrieval::{rank_top_k, Ranking, Retriever};
use crate::seed;
use crate::text::folded_tokens;

pub const MAGIC: &[u8; 4] = b"VLCI";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: u64 = 18;
pub const DEFAULT_MAX_DOC_TOKENS: usize = 512;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Row-major matrix of token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows have different dimensions"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiVectorDoc {
    pub passage_id: String,
    pub vectors: TokenMatrix,
}

impl MultiVectorDoc {
    /// Validates that the document has 1..=`max_tokens` unit-length rows.
    pub fn new(passage_id: impl Into<String>, vectors: TokenMatrix, max_tokens: usize) -> Result<Self> {
        let passage_id = passage_id.into();
        let n = vectors.rows();
        if n == 0 || n > max_tokens {
            return Err(Error::invalid(format!(
                "document `{passage_id}` has {n} token vectors (allowed 1..={max_tokens})"
            )));
        }
        for (i, row) in vectors.iter().enumerate() {
            let norm = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!(
                    "document `{passage_id}` token {i} has norm {norm}"
                )));
            }
        }
        Ok(Self {
            passage_id,
            vectors,
        })
    }
}

fn dot32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Σ over query rows of the maximum dot product with any document row.
pub fn maxsim_score(query: &TokenMatrix, doc: &TokenMatrix) -> Result<f64> {
    if doc.rows() == 0 {
        return Err(Error::invalid("MaxSim against an empty document"));
    }
    if query.rows() > 0 && query.dim() != doc.dim() {
        return Err(Error::DimensionMismatch {
            expected: doc.dim(),
            actual: query.dim(),
        });
    }
    Ok(query
        .iter()
        .map(|q| {
            doc.iter()
                .map(|d| dot32(q, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum())
}

/// Uncompressed MaxSim over every document.
pub fn exact_search(docs: &[MultiVectorDoc], query: &TokenMatrix, top_k: usize) -> Result<Ranking> {
    let ids: Vec<String> = docs.iter().map(|d| d.passage_id.clone()).collect();
    let scores = docs
        .iter()
        .map(|d| maxsim_score(query, &d.vectors))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_top_k(&ids, &scores, top_k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Bits {
    One,
    Two,
    Four,
    Eight,
}

impl Bits {
    pub const ALL: [Bits; 4] = [Bits::One, Bits::Two, Bits::Four, Bits::Eight];

    pub fn get(self) -> u8 {
        match self {
            Bits::One => 1,
            Bits::Two => 2,
            Bits::Four => 4,
            Bits::Eight => 8,
        }
    }

    pub fn buckets(self) -> u32 {
        1 << self.get()
    }

    /// Bytes needed for one vector's codes.
    pub fn code_bytes(self, dim: usize) -> usize {
        (dim * usize::from(self.get())).div_ceil(8)
    }
}

impl TryFrom<u8> for Bits {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Bits::One),
            2 => Ok(Bits::Two),
            4 => Ok(Bits::Four),
            8 => Ok(Bits::Eight),
            other => Err(Error::Usage(format!(
                "unsupported bit width {other}; expected one of {{1,2,4,8}}"
            ))),
        }
    }
}

impl From<Bits> for u8 {
    fn from(b: Bits) -> u8 {
        b.get()
    }
}

/// Per-dimension uniform scalar quantizer over a fitted `[lo, hi]` range.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualQuantizer {
    bits: Bits,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ResidualQuantizer {
    /// Fits bucket ranges from row-major residuals with `dim` columns.
    pub fn fit(residuals: &[f64], dim: usize, bits: Bits) -> Result<Self> {
        if dim == 0 || residuals.is_empty() || !residuals.len().is_multiple_of(dim) {
            return Err(Error::invalid("residual sample must be a non-empty N × d matrix"));
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for row in residuals.chunks_exact(dim) {
            for (j, &r) in row.iter().enumerate() {
                if !r.is_finite() {
                    return Err(Error::NonFinite("residuals"));
                }
                lo[j] = lo[j].min(r);
                hi[j] = hi[j].max(r);
            }
        }
        Ok(Self { bits, lo, hi })
    }

    /// Fits from one sample per dimension.
    pub fn fit_columns(columns: &[Vec<f64>], bits: Bits) -> Result<Self> {
        if columns.is_empty() || columns.iter().any(Vec::is_empty) {
            return Err(Error::invalid("every dimension needs at least one residual"));
        }
        let mut lo = Vec::with_capacity(columns.len());
        let mut hi = Vec::with_capacity(columns.len());
        for col in columns {
            if col.iter().any(|r| !r.is_finite()) {
                return Err(Error::NonFinite("residuals"));
            }
            lo.push(col.iter().copied().fold(f64::INFINITY, f64::min));
            hi.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(Self { bits, lo, hi })
    }

    pub fn bits(&self) -> Bits {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn range(&self, j: usize) -> (f64, f64) {
        (self.lo[j], self.hi[j])
    }

    pub fn bucket_width(&self, j: usize) -> f64 {
        (self.hi[j] - self.lo[j]) / f64::from(self.bits.buckets())
    }

    pub fn encode(&self, j: usize, value: f64) -> u8 {
        let width = self.bucket_width(j);
        if width <= 0.0 {
            return 0;
        }
        let max = (self.bits.buckets() - 1) as f64;
        ((value - self.lo[j]) / width).floor().clamp(0.0, max) as u8
    }

    pub fn decode(&self, j: usize, code: u8) -> f64 {
        let width = self.bucket_width(j);
        if width <= 0.0 {
            return self.lo[j];
        }
        self.lo[j] + (f64::from(code) + 0.5) * width
    }

    /// Bucket centers for dimension `j`.
    pub fn centers(&self, j: usize) -> Vec<f64> {
        (0..self.bits.buckets())
            .map(|c| self.decode(j, c as u8))
            .collect()
    }

    fn pack(&self, residual: &[f64], out: &mut [u8]) {
        let b = usize::from(self.bits.get());
        out.fill(0);
        for (j, &r) in residual.iter().enumerate() {
            let code = self.encode(j, r);
            let bit = j * b;
            out[bit / 8] |= code << (bit % 8);
        }
    }

    fn unpack_into(&self, codes: &[u8], out: &mut [f64]) {
        let b = usize::from(self.bits.get());
        let mask = ((1u16 << b) - 1) as u8;
        for (j, o) in out.iter_mut().enumerate() {
            let bit = j * b;
            let code = (codes[bit / 8] >> (bit % 8)) & mask;
            *o = self.decode(j, code);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub bytes_total: u64,
    pub bytes_centroids: u64,
    pub bytes_quantizer: u64,
    pub bytes_ids: u64,
    pub bytes_residuals: u64,
    /// Centroid id plus residual codes for one token vector.
    pub bytes_per_vector: u64,
}

/// Smallest power of two ≥ 4·√n, capped at 2^16 and at `n`.
pub fn default_centroid_count(n_vectors: usize) -> usize {
    let target = (4.0 * (n_vectors as f64).sqrt()).ceil() as usize;
    target.next_power_of_two().min(1 << 16).min(n_vectors).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMultiVectorIndex {
    dim: usize,
    centroids: Vec<f32>,
    quantizer: ResidualQuantizer,
    doc_ids: Vec<String>,
    /// (first entry, entry count) per document.
    doc_ranges: Vec<(u32, u32)>,
    centroid_ids: Vec<u32>,
    codes: Vec<u8>,
    ordinals: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionParams {
    pub bits: Bits,
    /// `None` selects [`default_centroid_count`].
    pub n_centroids: Option<usize>,
    pub kmeans_iterations: usize,
    pub seed: u64,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self {
            bits: Bits::Two,
            n_centroids: None,
            kmeans_iterations: kmeans::DEFAULT_ITERATIONS,
            seed: 0,
        }
    }
}

impl CompressedMultiVectorIndex {
    pub fn build(docs: &[MultiVectorDoc], params: CompressionParams) -> Result<Self> {
        let dim = docs
            .first()
            .map(|d| d.vectors.dim())
            .ok_or_else(|| Error::invalid("cannot compress an empty document set"))?;
        let mut data = Vec::new();
        let mut doc_ranges = Vec::with_capacity(docs.len());
        for d in docs {
            if d.vectors.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.vectors.dim(),
                });
            }
            let start = (data.len() / dim) as u32;
            data.extend_from_slice(d.vectors.as_slice());
            doc_ranges.push((start, d.vectors.rows() as u32));
        }
        let n = data.len() / dim;
        let k = params.n_centroids.unwrap_or_else(|| default_centroid_count(n));
        if k == 0 || k > n {
            return Err(Error::invalid(format!(
                "need 1 <= n_centroids <= token vectors ({n}), got {k}"
            )));
        }
        let centroids = kmeans::kmeans(&data, dim, k, params.kmeans_iterations, params.seed);
        let assignment = kmeans::assign(&data, &centroids, dim);
        let mut residuals = Vec::with_capacity(data.len());
        for (v, &c) in data.chunks_exact(dim).zip(&assignment) {
            let centroid = &centroids[c * dim..(c + 1) * dim];
            residuals.extend(
                v.iter()
                    .zip(centroid)
                    .map(|(&x, &m)| f64::from(x) - f64::from(m)),
            );
        }
        let quantizer = ResidualQuantizer::fit(&residuals, dim, params.bits)?;
        let code_len = params.bits.code_bytes(dim);
        let mut codes = vec![0u8; n * code_len];
        for (r, out) in residuals.chunks_exact(dim).zip(codes.chunks_exact_mut(code_len)) {
            quantizer.pack(r, out);
        }
        Self::from_parts(
            dim,
            centroids,
            quantizer,
            docs.iter().map(|d| d.passage_id.clone()).collect(),
            doc_ranges,
            assignment.into_iter().map(|c| c as u32).collect(),
            codes,
        )
    }

    fn from_parts(
        dim: usize,
        centroids: Vec<f32>,
        quantizer: ResidualQuantizer,
        doc_ids: Vec<String>,
        doc_ranges: Vec<(u32, u32)>,
        centroid_ids: Vec<u32>,
        codes: Vec<u8>,
    ) -> Result<Self> {
        let mut ordinals = HashMap::with_capacity(doc_ids.len());
        for (i, id) in doc_ids.iter().enumerate() {
            if ordinals.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicatePassage(id.clone()));
            }
        }
        Ok(Self {
            dim,
            centroids,
            quantizer,
            doc_ids,
            doc_ranges,
            centroid_ids,
            codes,
            ordinals,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> Bits {
        self.quantizer.bits()
    }

    pub fn quantizer(&self) -> &ResidualQuantizer {
        &self.quantizer
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn n_vectors(&self) -> usize {
        self.centroid_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn centroid_ids(&self) -> &[u32] {
        &self.centroid_ids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Dequantized residual of token vector `entry`.
    pub fn decode_residual(&self, entry: usize) -> Vec<f64> {
        let code_len = self.bits().code_bytes(self.dim);
        let mut out = vec![0.0; self.dim];
        self.quantizer
            .unpack_into(&self.codes[entry * code_len..(entry + 1) * code_len], &mut out);
        out
    }

    /// Reconstructed token vector `entry`: centroid plus decoded residual.
    pub fn decode_entry(&self, entry: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.decode_into(entry, &mut out);
        out
    }

    fn decode_into(&self, entry: usize, out: &mut [f64]) {
        let code_len = self.bits().code_bytes(self.dim);
        let codes = &self.codes[entry * code_len..(entry + 1) * code_len];
        self.quantizer.unpack_into(codes, out);
        let c = self.centroid_ids[entry] as usize;
        for (o, &m) in out.iter_mut().zip(&self.centroids[c * self.dim..(c + 1) * self.dim]) {
            *o += f64::from(m);
        }
    }

    /// Decoded token vectors of document `ordinal`, row-major.
    pub fn decode_doc(&self, ordinal: usize) -> Vec<f64> {
        let (start, count) = self.doc_ranges[ordinal];
        let mut out = vec![0.0; count as usize * self.dim];
        for (i, chunk) in out.chunks_exact_mut(self.dim).enumerate() {
            self.decode_into(start as usize + i, chunk);
        }
        out
    }

    fn doc_score(&self, ordinal: usize, query: &TokenMatrix) -> f64 {
        let decoded = self.decode_doc(ordinal);
        query
            .iter()
            .map(|q| {
                decoded
                    .chunks_exact(self.dim)
                    .map(|d| q.iter().zip(d).map(|(&x, &y)| f64::from(x) * y).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }

    /// MaxSim of `query` against every decoded document.
    pub fn scores(&self, query: &TokenMatrix) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        if query.rows() > 0 && query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok((0..self.doc_ids.len())
            .into_par_iter()
            .map(|o| self.doc_score(o, query))
            .collect())
    }

    pub fn search(&self, query: &TokenMatrix, top_k: usize) -> Result<Ranking> {
        let scores = self.scores(query)?;
        Ok(rank_top_k(&self.doc_ids, &scores, top_k))
    }

    pub fn storage_report(&self) -> StorageReport {
        let n = self.n_vectors() as u64;
        let bytes_centroids = (self.centroids.len() * 4) as u64;
        let bytes_quantizer = (self.dim * 16) as u64;
        let bytes_ids = n * 4;
        let code_len = self.bits().code_bytes(self.dim) as u64;
        let bytes_residuals = n * code_len;
        StorageReport {
            bytes_total: bytes_centroids + bytes_quantizer + bytes_ids + bytes_residuals,
            bytes_centroids,
            bytes_quantizer,
            bytes_ids,
            bytes_residuals,
            bytes_per_vector: 4 + code_len,
        }
    }

    /// Size of the doc offset table in the file.
    pub fn offset_table_bytes(&self) -> u64 {
        4 + self
            .doc_ids
            .iter()
            .map(|id| 12 + id.len() as u64)
            .sum::<u64>()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        write_u32(&mut w, self.n_centroids() as u32)?;
        write_u32(&mut w, self.dim as u32)?;
        w.write_all(&[self.bits().get()])?;
        write_u32(&mut w, self.n_vectors() as u32)?;
        for c in &self.centroids {
            w.write_all(&c.to_le_bytes())?;
        }
        for j in 0..self.dim {
            let (lo, hi) = self.quantizer.range(j);
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&hi.to_le_bytes())?;
        }
        write_u32(&mut w, self.doc_ids.len() as u32)?;
        for (id, &(start, count)) in self.doc_ids.iter().zip(&self.doc_ranges) {
            write_str(&mut w, id)?;
            write_u32(&mut w, start)?;
            write_u32(&mut w, count)?;
        }
        let code_len = self.bits().code_bytes(self.dim);
        for (id, codes) in self.centroid_ids.iter().zip(self.codes.chunks_exact(code_len)) {
            write_u32(&mut w, *id)?;
            w.write_all(codes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("VLCI", m.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        if read_u8(&mut r)? != VERSION {
            return Err(bad("unsupported version"));
        }
        let c = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let bits = Bits::try_from(read_u8(&mut r)?).map_err(|_| bad("bad bit width"))?;
        let n = read_u32(&mut r)? as usize;
        if dim == 0 || c == 0 {
            return Err(bad("empty centroid table"));
        }
        let mut buf = vec![0u8; c * dim * 4];
        r.read_exact(&mut buf)?;
        let centroids = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            lo.push(f64::from_le_bytes(b));
            r.read_exact(&mut b)?;
            hi.push(f64::from_le_bytes(b));
        }
        let quantizer = ResidualQuantizer { bits, lo, hi };
        let docs = read_u32(&mut r)? as usize;
        let mut doc_ids = Vec::with_capacity(docs);
        let mut doc_ranges = Vec::with_capacity(docs);
        for _ in 0..docs {
            doc_ids.push(read_str(&mut r, "VLCI")?);
            let start = read_u32(&mut r)?;
            let count = read_u32(&mut r)?;
            if start as usize + count as usize > n {
                return Err(bad("document range out of bounds"));
            }
            doc_ranges.push((start, count));
        }
        let code_len = bits.code_bytes(dim);
        let mut centroid_ids = Vec::with_capacity(n);
        let mut codes = vec![0u8; n * code_len];
        for chunk in codes.chunks_exact_mut(code_len) {
            let id = read_u32(&mut r)?;
            if id as usize >= c {
                return Err(bad("centroid id out of range"));
            }
            centroid_ids.push(id);
            r.read_exact(chunk)?;
        }
        Self::from_parts(dim, centroids, quantizer, doc_ids, doc_ranges, centroid_ids, codes)
    }
}

/// Deterministic contextual token vectors standing in for a late-interaction
/// encoder.
///
/// Every distinct case-folded token gets a seeded random unit direction; a
/// token's output vector mixes its own direction with those of its immediate
/// neighbours and is then L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoTokenEncoder {
    pub dim: usize,
    pub seed: u64,
    pub max_doc_tokens: usize,
    pub context_weight: f32,
}

impl PseudoTokenEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            max_doc_tokens: DEFAULT_MAX_DOC_TOKENS,
            context_weight: 0.25,
        }
    }

    fn direction(&self, token: &str) -> Vec<f32> {
        let mut rng = seed::rng(seed::keyed_hash(self.seed, token.as_bytes()));
        let v: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        normalized(v)
    }

    pub fn encode(&self, text: &str, max_tokens: usize) -> TokenMatrix {
        let tokens = folded_tokens(text);
        let tokens = &tokens[..tokens.len().min(max_tokens)];
        let dirs: Vec<Vec<f32>> = tokens.iter().map(|t| self.direction(t)).collect();
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for i in 0..dirs.len() {
            let mut v = dirs[i].clone();
            for n in [i.wrapping_sub(1), i + 1] {
                if let Some(d) = dirs.get(n) {
                    for (x, y) in v.iter_mut().zip(d) {
                        *x += self.context_weight * y;
                    }
                }
            }
            data.extend(normalized(v));
        }
        TokenMatrix {
            dim: self.dim,
            data,
        }
    }

    pub fn encode_query(&self, text: &str) -> TokenMatrix {
        self.encode(text, usize::MAX)
    }

    pub fn encode_doc(&self, passage_id: &str, text: &str) -> Result<MultiVectorDoc> {
        MultiVectorDoc::new(
            passage_id,
            self.encode(text, self.max_doc_tokens),
            self.max_doc_tokens,
        )
    }
}

fn normalized(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
    }
    v
}

/// A compressed index paired with the token encoder used for queries.
pub struct LateInteractionRetriever {
    pub index: CompressedMultiVectorIndex,
    pub encoder: PseudoTokenEncoder,
}

impl Retriever for LateInteractionRetriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Ranking> {
        self.index.search(&self.encoder.encode_query(query), top_k)
    }

    fn contains(&self, passage_id: &str) -> bool {
        self.index.ordinals.contains_key(passage_id)
    }

    fn passage_ids(&self) -> &[String] {
        &self.index.doc_ids
    }
}
