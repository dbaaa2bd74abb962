//! BM25 over an inverted index.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are summed with multiplicity. The `1 +` inside the logarithm
//! keeps every score non-negative.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retrieval::{rank_top_k, Ranking, Retriever};
use crate::text::folded_tokens;

pub const MAGIC: &[u8; 4] = b"VLBM";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    ids: Vec<String>,
    ordinals: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("cannot build a BM25 index over an empty corpus"));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (ordinal, p) in corpus.passages().iter().enumerate() {
            let tokens = folded_tokens(&p.content);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting {
                    ordinal: ordinal as u32,
                    tf,
                });
            }
        }
        Self::from_parts(corpus.ids(), doc_lengths, postings)
    }

    fn from_parts(
        ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Result<Self> {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        let mut ordinals = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if ordinals.insert(id.clone(), i as u32).is_some() {
                return Err(Error::DuplicatePassage(id.clone()));
            }
        }
        Ok(Self {
            postings,
            doc_lengths,
            avg_doc_length,
            ids,
            ordinals,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn ordinal(&self, passage_id: &str) -> Option<usize> {
        self.ordinals.get(passage_id).map(|&o| o as usize)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, ordinal: usize, params: Bm25Params) -> f64 {
        let tf = f64::from(tf);
        let dl = f64::from(self.doc_lengths[ordinal]);
        let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avg_doc_length);
        idf * tf * (params.k1 + 1.0) / (tf + norm)
    }

    /// Score of one document. Tokens must already be case-folded.
    pub fn score(&self, query_tokens: &[String], ordinal: usize, params: Bm25Params) -> f64 {
        assert!(ordinal < self.doc_count(), "ordinal {ordinal} out of range");
        let mut score = 0.0;
        for t in query_tokens {
            let postings = self.postings(t);
            if let Ok(i) = postings.binary_search_by_key(&(ordinal as u32), |p| p.ordinal) {
                score += self.term_weight(self.idf(t), postings[i].tf, ordinal, params);
            }
        }
        score
    }

    /// Scores for every document, accumulated term-at-a-time.
    pub fn score_all(&self, query_tokens: &[String], params: Bm25Params) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        for t in query_tokens {
            let postings = self.postings(t);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(t);
            for p in postings {
                let o = p.ordinal as usize;
                scores[o] += self.term_weight(idf, p.tf, o, params);
            }
        }
        scores
    }

    pub fn search(&self, query: &str, top_k: usize, params: Bm25Params) -> Ranking {
        let tokens = folded_tokens(query);
        let scores = self.score_all(&tokens, params);
        rank_top_k(&self.ids, &scores, top_k)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        write_u32(&mut w, self.doc_count() as u32)?;
        for (id, len) in self.ids.iter().zip(&self.doc_lengths) {
            write_str(&mut w, id)?;
            write_u32(&mut w, *len)?;
        }
        write_u32(&mut w, self.postings.len() as u32)?;
        for (term, list) in &self.postings {
            write_str(&mut w, term)?;
            write_u32(&mut w, list.len() as u32)?;
            for p in list {
                write_u32(&mut w, p.ordinal)?;
                write_u32(&mut w, p.tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("VLBM", "bad magic"));
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(Error::format("VLBM", format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        if n == 0 {
            return Err(Error::format("VLBM", "index holds no documents"));
        }
        let mut ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(read_str(&mut r, "VLBM")?);
            doc_lengths.push(read_u32(&mut r)?);
        }
        let terms = read_u32(&mut r)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = read_str(&mut r, "VLBM")?;
            let len = read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let ordinal = read_u32(&mut r)?;
                if ordinal as usize >= n {
                    return Err(Error::format("VLBM", "posting ordinal out of range"));
                }
                list.push(Posting {
                    ordinal,
                    tf: read_u32(&mut r)?,
                });
            }
            postings.insert(term, list);
        }
        Self::from_parts(ids, doc_lengths, postings)
    }
}

/// An [`InvertedIndex`] with fixed scoring parameters.
#[derive(Debug, Clone)]
pub struct Bm25Retriever {
    pub index: InvertedIndex,
    pub params: Bm25Params,
}

impl Bm25Retriever {
    pub fn new(index: InvertedIndex, params: Bm25Params) -> Self {
        Self { index, params }
    }
}

impl Retriever for Bm25Retriever {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Ranking> {
        Ok(self.index.search(query, top_k, self.params))
    }

    fn contains(&self, passage_id: &str) -> bool {
        self.index.ordinal(passage_id).is_some()
    }

    fn passage_ids(&self) -> &[String] {
        self.index.ids()
    }
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_str<R: Read>(r: &mut R, format: &'static str) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format(format, "string is not UTF-8"))
}
