//! Document ingestion, context-preserving passages and token-budget chunking.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::data_lines;
use crate::text::tokenize;

/// Smallest accepted chunk budget.
pub const MIN_CHUNK_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub header: Vec<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalDocument {
    pub id: String,
    pub domain: String,
    pub title: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub doc_id: String,
    pub domain: String,
    pub title: String,
    /// Header path joined with `", "`.
    pub header: String,
    pub content: String,
    #[serde(skip)]
    pub token_count: usize,
}

impl Passage {
    pub fn new(
        id: impl Into<String>,
        doc_id: impl Into<String>,
        domain: impl Into<String>,
        title: impl Into<String>,
        header: impl Into<String>,
        content: impl Into<String>,
    ) -> Self {
        let content = content.into();
        let token_count = tokenize(&content).len();
        Self {
            id: id.into(),
            doc_id: doc_id.into(),
            domain: domain.into(),
            title: title.into(),
            header: header.into(),
            content,
            token_count,
        }
    }

    fn with_content(&self, id: String, content: String, token_count: usize) -> Self {
        Self {
            id,
            doc_id: self.doc_id.clone(),
            domain: self.domain.clone(),
            title: self.title.clone(),
            header: self.header.clone(),
            content,
            token_count,
        }
    }
}

pub fn join_header(path: &[String]) -> String {
    path.join(", ")
}

/// An immutable, ordered passage collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    passages: Vec<Passage>,
    doc_index: BTreeMap<String, Vec<String>>,
    positions: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self> {
        let mut doc_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut positions = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if positions.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicatePassage(p.id.clone()));
            }
            doc_index
                .entry(p.doc_id.clone())
                .or_default()
                .push(p.id.clone());
        }
        Ok(Self {
            passages,
            doc_index,
            positions,
        })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn doc_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.doc_index
    }

    pub fn get(&self, passage_id: &str) -> Option<&Passage> {
        self.positions.get(passage_id).map(|&i| &self.passages[i])
    }

    pub fn position(&self, passage_id: &str) -> Option<usize> {
        self.positions.get(passage_id).copied()
    }

    pub fn ids(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.id.clone()).collect()
    }

    /// Passage id → document id.
    pub fn passage_docs(&self) -> HashMap<String, String> {
        self.passages
            .iter()
            .map(|p| (p.id.clone(), p.doc_id.clone()))
            .collect()
    }

    /// Re-chunks every passage to `max_tokens`, preserving order.
    pub fn chunked(&self, max_tokens: usize, overlap: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(self.passages.len());
        for p in &self.passages {
            out.extend(chunk_passage_with_overlap(p, max_tokens, overlap)?);
        }
        Self::from_passages(out)
    }
}

fn field_str(record: &Value, index: usize, field: &str) -> Result<String> {
    match record.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::MalformedRecord {
            index,
            message: format!("field `{field}` must be a string"),
        }),
        None => Err(Error::MalformedRecord {
            index,
            message: format!("missing field `{field}`"),
        }),
    }
}

fn parse_document(record: &Value, index: usize) -> Result<LegalDocument> {
    let malformed = |message: String| Error::MalformedRecord { index, message };
    let id = field_str(record, index, "id")?;
    if id.trim().is_empty() {
        return Err(malformed("field `id` is empty".into()));
    }
    let domain = field_str(record, index, "domain")?;
    let title = field_str(record, index, "title")?;
    let sections = record
        .get("sections")
        .ok_or_else(|| malformed("missing field `sections`".into()))?
        .as_array()
        .ok_or_else(|| malformed("field `sections` must be an array".into()))?;
    let mut out = Vec::with_capacity(sections.len());
    for (s, section) in sections.iter().enumerate() {
        let header = section
            .get("header")
            .ok_or_else(|| malformed(format!("section {s}: missing field `header`")))?
            .as_array()
            .ok_or_else(|| malformed(format!("section {s}: `header` must be an array")))?
            .iter()
            .map(|h| h.as_str().map(str::to_owned))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| malformed(format!("section {s}: `header` must hold strings")))?;
        let body = section
            .get("body")
            .ok_or_else(|| malformed(format!("section {s}: missing field `body`")))?
            .as_str()
            .ok_or_else(|| malformed(format!("section {s}: `body` must be a string")))?;
        if body.trim().is_empty() {
            return Err(malformed(format!("section {s}: `body` is empty")));
        }
        out.push(Section {
            header,
            body: body.to_owned(),
        });
    }
    Ok(LegalDocument {
        id,
        domain,
        title,
        sections: out,
    })
}

/// Reads one document record per line.
pub fn read_documents<R: BufRead>(source: R) -> Result<Vec<LegalDocument>> {
    let mut docs = Vec::new();
    for line in data_lines(source) {
        let (index, line) = line?;
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            index,
            message: e.to_string(),
        })?;
        docs.push(parse_document(&value, index)?);
    }
    Ok(docs)
}

/// Flattens documents into one passage per section, in document then section
/// order. Section passages are identified as `<doc_id>:<section index>`.
pub fn corpus_from_documents(docs: &[LegalDocument]) -> Result<Corpus> {
    let mut seen = std::collections::HashSet::new();
    let mut passages = Vec::new();
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(Error::DuplicateDocument(doc.id.clone()));
        }
        for (s, section) in doc.sections.iter().enumerate() {
            passages.push(Passage::new(
                format!("{}:{s}", doc.id),
                doc.id.clone(),
                doc.domain.clone(),
                doc.title.clone(),
                join_header(&section.header),
                section.body.clone(),
            ));
        }
    }
    Corpus::from_passages(passages)
}

pub fn ingest_documents<R: BufRead>(source: R) -> Result<Corpus> {
    corpus_from_documents(&read_documents(source)?)
}

/// Non-overlapping greedy chunking; see [`chunk_passage_with_overlap`].
pub fn chunk_passage(p: &Passage, max_tokens: usize) -> Result<Vec<Passage>> {
    chunk_passage_with_overlap(p, max_tokens, 0)
}

/// Splits a passage into windows of at most `max_tokens` tokens, each window
/// starting `max_tokens - overlap` tokens after the previous one. Chunks are
/// named `<parent_id>#<k>`; a passage already within budget is returned as is.
pub fn chunk_passage_with_overlap(
    p: &Passage,
    max_tokens: usize,
    overlap: usize,
) -> Result<Vec<Passage>> {
    if max_tokens < MIN_CHUNK_TOKENS {
        return Err(Error::invalid(format!(
            "max_tokens must be at least {MIN_CHUNK_TOKENS}, got {max_tokens}"
        )));
    }
    if overlap >= max_tokens {
        return Err(Error::invalid(format!(
            "overlap {overlap} must be smaller than max_tokens {max_tokens}"
        )));
    }
    let tokens = tokenize(&p.content);
    if tokens.len() <= max_tokens {
        let mut same = p.clone();
        same.token_count = tokens.len();
        return Ok(vec![same]);
    }
    let step = max_tokens - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_tokens).min(tokens.len());
        let window = &tokens[start..end];
        chunks.push(p.with_content(
            format!("{}#{}", p.id, chunks.len()),
            window.join(" "),
            window.len(),
        ));
        if end == tokens.len() {
            break;
        }
        start += step;
    }
    Ok(chunks)
}

pub fn read_passages<R: BufRead>(source: R) -> Result<Corpus> {
    let mut passages = Vec::new();
    for line in data_lines(source) {
        let (index, line) = line?;
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            index,
            message: e.to_string(),
        })?;
        passages.push(Passage::new(
            field_str(&value, index, "id")?,
            field_str(&value, index, "doc_id")?,
            field_str(&value, index, "domain")?,
            field_str(&value, index, "title")?,
            field_str(&value, index, "header")?,
            field_str(&value, index, "content")?,
        ));
    }
    Corpus::from_passages(passages)
}

pub fn write_passages<W: Write>(sink: W, corpus: &Corpus) -> Result<usize> {
    crate::io::write_json_lines(sink, corpus.passages())
}

pub fn write_documents<W: Write>(sink: W, docs: &[LegalDocument]) -> Result<usize> {
    crate::io::write_json_lines(sink, docs)
}
