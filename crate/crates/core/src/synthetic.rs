//! Seeded synthetic legal-style corpora for demos and experiments.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{corpus_from_documents, Corpus, LegalDocument, Passage, Section};
use crate::error::{Error, Result};
use crate::query_gen::{
    generate_for_corpus, to_synthetic_queries, GenerationOptions, MockBackend, PromptMode,
    SyntheticQuery,
};
use crate::seed;
use crate::text::fold;

const MAX_ROUNDS: usize = 32;

const DOMAINS: &[&str] = &[
    "Thuế - Phí - Lệ Phí",
    "Bộ máy hành chính",
    "Lao động - Tiền lương",
    "Đất đai - Nhà ở",
    "Giao thông - Vận tải",
];

const COMMON: &[&str] = &[
    "cơ", "quan", "có", "thẩm", "quyền", "theo", "quy", "định", "của", "pháp", "luật", "và",
    "các", "trường", "hợp", "được", "thực", "hiện", "trong", "thời", "hạn", "ngày", "kể", "từ",
    "khi", "nhận", "đủ", "hồ", "sơ", "hợp", "lệ", "tổ", "chức", "cá", "nhân", "trách", "nhiệm",
];

const TOPICS: &[&str] = &[
    "thanh", "tra", "thuế", "đất", "lương", "bảo", "hiểm", "xã", "hội", "giấy", "phép", "xây",
    "dựng", "đăng", "ký", "doanh", "nghiệp", "khiếu", "nại", "tố", "cáo", "xử", "phạt", "vi",
    "phạm", "hành", "chính", "công", "chứng", "hộ", "tịch", "kế", "toán", "kiểm", "toán", "ngân",
    "sách", "hải", "quan", "phí", "lệ", "môi", "trường", "giáo", "dục", "y", "tế", "dược",
    "vận", "tải", "hàng", "không", "đường", "bộ", "thủy", "sản", "lâm", "nghiệp", "khoáng",
];

/// Documents whose sections share document-level topic words and each add a
/// few section-specific ones, so passages of one document resemble each
/// other more than passages of different documents.
pub fn legal_documents(n_docs: usize, sections_per_doc: usize, seed: u64) -> Vec<LegalDocument> {
    let mut rng = seed::keyed_rng(seed, "documents");
    (0..n_docs)
        .map(|d| {
            let topic: Vec<&str> = TOPICS.choose_multiple(&mut rng, 4).copied().collect();
            let title = format!(
                "Thông tư {}/{}/TT-BTC quy định về {}",
                d + 1,
                2015 + d % 9,
                topic[..2].join(" ")
            );
            let sections = (0..sections_per_doc)
                .map(|s| {
                    let local: Vec<&str> = TOPICS.choose_multiple(&mut rng, 3).copied().collect();
                    let len = rng.gen_range(30..90);
                    let words: Vec<&str> = (0..len)
                        .map(|_| match rng.gen_range(0..10) {
                            0..=2 => *topic.choose(&mut rng).expect("non-empty"),
                            3..=5 => *local.choose(&mut rng).expect("non-empty"),
                            _ => *COMMON.choose(&mut rng).expect("non-empty"),
                        })
                        .collect();
                    Section {
                        header: vec![
                            format!("Chương {}", s / 3 + 1),
                            format!("Điều {}. {} {}", s + 1, local[0], local[1]),
                        ],
                        body: format!("{}.", words.join(" ")),
                    }
                })
                .collect();
            LegalDocument {
                id: format!("doc{:04}", d + 1),
                domain: DOMAINS[d % DOMAINS.len()].to_owned(),
                title,
                sections,
            }
        })
        .collect()
}

pub fn legal_corpus(n_docs: usize, sections_per_doc: usize, seed: u64) -> Result<Corpus> {
    corpus_from_documents(&legal_documents(n_docs, sections_per_doc, seed))
}

/// A retrieval task in which each query shares one token with exactly its
/// positive passage and nothing else distinguishes it.
#[derive(Debug, Clone)]
pub struct SeparableToy {
    pub corpus: Corpus,
    /// One query per passage, in corpus order.
    pub queries: Vec<SyntheticQuery>,
    /// The token unique to each passage, in corpus order.
    pub keys: Vec<String>,
}

fn key_token(i: usize) -> String {
    const SYLLABLES: &[&str] = &["ba", "ca", "da", "ha", "la", "ma", "na", "ta"];
    let mut s = String::from("mục");
    let mut x = i;
    for _ in 0..3 {
        s.push_str(SYLLABLES[x % SYLLABLES.len()]);
        x /= SYLLABLES.len();
    }
    s
}

/// Passages made of one unique key token (repeated `key_repeats` times) and
/// `noise_len` words from a shared vocabulary; queries come from the mock
/// generator, keeping for each passage the first generated query that
/// contains the key (regenerating with fresh mock seeds where none does).
pub fn separable_toy(
    n_passages: usize,
    key_repeats: usize,
    noise_len: usize,
    seed: u64,
) -> Result<SeparableToy> {
    if n_passages > 512 {
        return Err(Error::invalid("separable toy supports at most 512 passages"));
    }
    let mut rng = seed::keyed_rng(seed, "separable");
    let keys: Vec<String> = (0..n_passages).map(key_token).collect();
    let passages = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let mut words: Vec<&str> = vec![key.as_str(); key_repeats];
            words.extend((0..noise_len).map(|_| *COMMON.choose(&mut rng).expect("non-empty")));
            words.shuffle(&mut rng);
            Passage::new(
                format!("toy{i:03}:0"),
                format!("toy{i:03}"),
                "Tổng hợp",
                "Văn bản thử nghiệm",
                "Điều 1",
                words.join(" "),
            )
        })
        .collect();
    let corpus = Corpus::from_passages(passages)?;
    let opts = GenerationOptions {
        mode: PromptMode::AspectGuided,
        concurrency: 1,
        ..GenerationOptions::default()
    };
    let mut chosen: Vec<Option<SyntheticQuery>> = vec![None; n_passages];
    for round in 0..MAX_ROUNDS {
        let pending: Vec<Passage> = corpus
            .passages()
            .iter()
            .zip(&chosen)
            .filter(|(_, c)| c.is_none())
            .map(|(p, _)| p.clone())
            .collect();
        if pending.is_empty() {
            break;
        }
        let backend = MockBackend::new(seed::derive_seed(seed, &format!("round{round}"))).with_pairs(5);
        let pending = Corpus::from_passages(pending)?;
        let generated =
            to_synthetic_queries(&generate_for_corpus(&pending, &backend, &opts)?.results);
        for q in generated {
            let i = corpus.position(&q.passage_id).expect("generated from corpus");
            if chosen[i].is_none() && fold(&q.text).split_whitespace().any(|w| w == keys[i]) {
                chosen[i] = Some(q);
            }
        }
    }
    let queries = chosen
        .into_iter()
        .zip(corpus.passages())
        .map(|(q, p)| {
            q.ok_or_else(|| {
                Error::invalid(format!("no generated query for `{}` mentions its key", p.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparableToy {
        corpus,
        queries,
        keys,
    })
}
