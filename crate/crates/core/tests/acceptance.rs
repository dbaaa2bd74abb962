//! Acceptance suite: nine criteria, each checked against an independent
//! oracle written here, timed, and reported as one PASS/FAIL line.
//!
//! Runs with a custom harness so the report is always printed:
//! `cargo test -p vlr-core --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlr_core::bm25::{Bm25Params, Bm25Retriever, InvertedIndex};
use vlr_core::config::PipelineConfig;
use vlr_core::contrastive::{infonce_grad, infonce_loss, InfoNceBatch};
use vlr_core::corpus::{chunk_passage, Corpus, Passage};
use vlr_core::late_interaction::{
    exact_search, maxsim_score, Bits, CompressedMultiVectorIndex, CompressionParams,
    MultiVectorDoc, TokenMatrix,
};
use vlr_core::metrics::{
    evaluate_run, f_beta_at_k, hit_rates, map_at_k, mrr_at_k, recall_at_k, EvalOptions,
    Judgments, QuerySource, RunList,
};
use vlr_core::pipeline::{self, Context};
use vlr_core::query_filter::{filter_queries, Blacklist};
use vlr_core::query_gen::SyntheticQuery;
use vlr_core::retrieval::{Ranking, Retriever, ScoredPassage};

type Check = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// 1. metrics

/// Brute-force per-query metrics from a run sorted here, not by the library.
struct MetricOracle {
    /// (query, ranked passage ids) after sorting by score desc, id asc.
    ranked: BTreeMap<String, Vec<String>>,
    relevant: BTreeMap<String, BTreeSet<String>>,
}

impl MetricOracle {
    fn top(&self, q: &str, k: usize) -> Vec<&str> {
        self.ranked
            .get(q)
            .map(|r| r.iter().take(k).map(String::as_str).collect())
            .unwrap_or_default()
    }

    fn averaged(&self, include_empty: bool, f: impl Fn(&[&str], &BTreeSet<String>) -> f64) -> f64 {
        let qs: Vec<_> = self
            .relevant
            .iter()
            .filter(|(_, r)| include_empty || !r.is_empty())
            .collect();
        if qs.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for (q, rel) in &qs {
            sum += f(&self.top(q, usize::MAX), rel);
        }
        sum / qs.len() as f64
    }

    fn mrr(&self, k: usize, inc: bool) -> f64 {
        self.averaged(inc, |ranked, rel| {
            for (i, p) in ranked.iter().take(k).enumerate() {
                if rel.contains(*p) {
                    return 1.0 / (i as f64 + 1.0);
                }
            }
            0.0
        })
    }

    fn map(&self, k: usize, inc: bool) -> f64 {
        self.averaged(inc, |ranked, rel| {
            if rel.is_empty() {
                return 0.0;
            }
            let mut ap = 0.0;
            for i in 0..ranked.len().min(k) {
                if rel.contains(ranked[i]) {
                    let hits_so_far = ranked[..=i].iter().filter(|p| rel.contains(**p)).count();
                    ap += hits_so_far as f64 / (i + 1) as f64;
                }
            }
            ap / rel.len().min(k) as f64
        })
    }

    fn hits(ranked: &[&str], rel: &BTreeSet<String>, k: usize) -> f64 {
        ranked.iter().take(k).filter(|p| rel.contains(**p)).count() as f64
    }

    fn recall(&self, k: usize, inc: bool) -> f64 {
        self.averaged(inc, |ranked, rel| {
            if rel.is_empty() {
                0.0
            } else {
                Self::hits(ranked, rel, k) / rel.len() as f64
            }
        })
    }

    fn f2(&self, k: usize, inc: bool) -> f64 {
        self.averaged(inc, |ranked, rel| {
            if rel.is_empty() {
                return 0.0;
            }
            let p = Self::hits(ranked, rel, k) / k as f64;
            let r = Self::hits(ranked, rel, k) / rel.len() as f64;
            if p + r == 0.0 {
                0.0
            } else {
                5.0 * p * r / (4.0 * p + r)
            }
        })
    }
}

fn criterion_metrics() -> Check {
    let mut r = rng(0x6d65_7472);
    let mut compared = 0usize;
    for instance in 0..200 {
        let n_docs = r.gen_range(1..=20);
        let n_queries = r.gen_range(1..=10);
        let pids: Vec<String> = (0..n_docs).map(|i| format!("p{i:02}")).collect();
        let n_groups = r.gen_range(1..=n_docs.min(5));
        let doc_of: HashMap<String, String> = pids
            .iter()
            .map(|p| (p.clone(), format!("d{}", r.gen_range(0..n_groups))))
            .collect();

        let mut judgments = Judgments::new();
        let mut run = RunList::new();
        let mut oracle = MetricOracle {
            ranked: BTreeMap::new(),
            relevant: BTreeMap::new(),
        };
        let mut sources = BTreeMap::new();
        for qi in 0..n_queries {
            let q = format!("q{qi}");
            // Some queries are unjudged, some judged with nothing relevant.
            if r.gen_bool(0.85) {
                let mut rel = BTreeSet::new();
                let picks = r.gen_range(0..=n_docs.min(4));
                for p in pids.choose_multiple(&mut r, picks) {
                    let grade = r.gen_range(0..=2);
                    judgments.insert(&q, p, grade).map_err(|e| e.to_string())?;
                    if grade >= 1 {
                        rel.insert(p.clone());
                    }
                }
                if picks == 0 {
                    // Judged, but nothing relevant.
                    judgments.insert(&q, "unseen", 0).map_err(|e| e.to_string())?;
                }
                oracle.relevant.insert(q.clone(), rel);
            }
            // Some judged queries are missing from the run.
            if r.gen_bool(0.9) {
                let depth = r.gen_range(0..=n_docs);
                let mut ranking: Ranking = pids
                    .choose_multiple(&mut r, depth)
                    .map(|p| ScoredPassage::new(p.clone(), f64::from(r.gen_range(0..6u8))))
                    .collect();
                ranking.shuffle(&mut r);
                let mut sorted: Vec<(f64, String)> =
                    ranking.iter().map(|s| (s.score, s.passage_id.clone())).collect();
                sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                oracle
                    .ranked
                    .insert(q.clone(), sorted.into_iter().map(|(_, p)| p).collect());
                run.insert(&q, ranking).map_err(|e| e.to_string())?;
            }
            let src = pids.choose(&mut r).unwrap().clone();
            sources.insert(
                q.clone(),
                QuerySource {
                    doc_id: doc_of[&src].clone(),
                    passage_id: src,
                },
            );
        }

        for &k in &[1usize, 3, 5, 10, 20] {
            for inc in [false, true] {
                let opts = EvalOptions {
                    include_no_relevant: inc,
                };
                let got = [
                    mrr_at_k(&run, &judgments, k, opts),
                    map_at_k(&run, &judgments, k, opts),
                    recall_at_k(&run, &judgments, k, opts),
                    f_beta_at_k(&run, &judgments, k, 2.0, opts),
                ];
                let want = [
                    oracle.mrr(k, inc),
                    oracle.map(k, inc),
                    oracle.recall(k, inc),
                    oracle.f2(k, inc),
                ];
                let table = evaluate_run(&run, &judgments, &[k], opts).map_err(|e| e.to_string())?;
                let row = table.by_k[0];
                let from_table = [row.mrr, row.map, row.recall, row.f2];
                for (m, name) in ["MRR", "MAP", "Recall", "F2"].iter().enumerate() {
                    let g = *got[m].as_ref().map_err(|e| e.to_string())?;
                    ensure(close(g, want[m], 1e-9) && close(from_table[m], want[m], 1e-9), || {
                        format!(
                            "instance {instance}: {name}@{k} (include_no_relevant={inc}) = {g}, table {}, oracle {}",
                            from_table[m], want[m]
                        )
                    })?;
                    compared += 1;
                }
            }
            // Hit rates.
            let (ph, dh) = hit_rates(&run, &sources, &doc_of, k).map_err(|e| e.to_string())?;
            let (mut p_oracle, mut d_oracle) = (0.0, 0.0);
            for (q, s) in &sources {
                let top = oracle.top(q, k);
                if top.contains(&s.passage_id.as_str()) {
                    p_oracle += 1.0;
                }
                if top.iter().any(|p| doc_of[*p] == s.doc_id) {
                    d_oracle += 1.0;
                }
            }
            let n = sources.len() as f64;
            ensure(
                close(ph, 100.0 * p_oracle / n, 1e-9) && close(dh, 100.0 * d_oracle / n, 1e-9),
                || format!("instance {instance}: hit rates@{k} = ({ph}, {dh})"),
            )?;
            compared += 2;
        }
    }
    Ok(format!("200 instances, {compared} values within 1e-9"))
}

// ---------------------------------------------------------------------------
// 2. BM25

const WORDS: &[&str] = &[
    "thuế", "Thuế", "đất", "ĐẤT", "lương", "bảo", "hiểm", "xã", "hội", "giấy", "phép", "xây",
    "dựng", "hồ", "sơ", "Hồ", "cơ", "quan", "thẩm", "quyền", "ngày", "tháng",
];

fn oracle_bm25(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut scores = vec![0.0; docs.len()];
    for (d, doc) in docs.iter().enumerate() {
        let dl = doc.len() as f64;
        for term in query {
            let mut tf = 0.0;
            for t in doc {
                if t == term {
                    tf += 1.0;
                }
            }
            if tf == 0.0 {
                continue;
            }
            let mut df = 0.0;
            for other in docs {
                if other.contains(term) {
                    df += 1.0;
                }
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            scores[d] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
    }
    scores
}

fn oracle_order(ids: &[String], scores: &[f64]) -> Vec<String> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&x, &y| {
        scores[y]
            .partial_cmp(&scores[x])
            .unwrap()
            .then_with(|| ids[x].cmp(&ids[y]))
    });
    order.into_iter().map(|i| ids[i].clone()).collect()
}

fn lower_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn random_text(r: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = r.gen_range(min..=max);
    (0..len)
        .map(|_| *WORDS.choose(r).unwrap())
        .collect::<Vec<_>>()
        .join(if r.gen_bool(0.2) { "  " } else { " " })
}

fn criterion_bm25() -> Check {
    let mut r = rng(0x626d_3235);
    let mut queries_checked = 0;
    for instance in 0..50 {
        let n = r.gen_range(1..=50);
        let texts: Vec<String> = (0..n).map(|_| random_text(&mut r, 1, 40)).collect();
        // Shuffled ids so index order and id order disagree.
        let mut ids: Vec<String> = (0..n).map(|i| format!("d{i:03}")).collect();
        ids.shuffle(&mut r);
        let corpus = Corpus::from_passages(
            ids.iter()
                .zip(&texts)
                .map(|(id, t)| Passage::new(id.clone(), "doc", "", "", "", t.clone()))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let params = if instance % 2 == 0 {
            Bm25Params::default()
        } else {
            Bm25Params {
                k1: r.gen_range(0.3..2.5),
                b: r.gen_range(0.0..1.0),
            }
        };
        let docs: Vec<Vec<String>> = texts.iter().map(|t| lower_tokens(t)).collect();
        let index = InvertedIndex::build(&corpus).map_err(|e| e.to_string())?;
        let retriever = Bm25Retriever::new(index.clone(), params);
        for _ in 0..10 {
            let mut qtext = random_text(&mut r, 1, 6);
            if r.gen_bool(0.3) {
                qtext.push_str(" từ_lạ");
            }
            let want = oracle_bm25(&docs, &lower_tokens(&qtext), params.k1, params.b);
            let got = index.score_all(&lower_tokens(&qtext), params);
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                ensure(close(*g, *w, 1e-9), || {
                    format!("corpus {instance}, query `{qtext}`, doc {}: {g} vs {w}", ids[i])
                })?;
            }
            let ranking: Vec<String> = retriever
                .retrieve(&qtext, n)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|s| s.passage_id)
                .collect();
            let expected = oracle_order(&ids, &want);
            ensure(ranking == expected, || {
                format!("corpus {instance}, query `{qtext}`: ranking differs")
            })?;
            queries_checked += 1;
        }
    }
    Ok(format!("50 corpora, {queries_checked} queries: scores within 1e-9, rankings identical"))
}

// ---------------------------------------------------------------------------
// 3. InfoNCE

fn gaussian_vec(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn slot(b: &mut InfoNceBatch, kind: u8, i: usize, n: usize, d: usize) -> &mut f64 {
    match kind {
        0 => &mut b.queries[i][d],
        1 => &mut b.positives[i][d],
        _ => &mut b.negatives[i][n][d],
    }
}

fn criterion_infonce() -> Check {
    let mut r = rng(0x006e_6365);
    // Symmetric case: positive and 7 negatives equally similar to the query.
    let mut worst_sym: f64 = 0.0;
    for trial in 0..10 {
        let dim = r.gen_range(2..32);
        let q = gaussian_vec(&mut r, dim);
        let shared = gaussian_vec(&mut r, dim);
        let batch = InfoNceBatch {
            queries: vec![q],
            positives: vec![shared.clone()],
            negatives: vec![vec![shared; 7]],
            temperature: if trial == 0 { 1.0 } else { r.gen_range(0.05..2.0) },
            use_in_batch: false,
        };
        let loss = infonce_loss(&batch).map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max((loss - 8f64.ln()).abs());
    }
    ensure(worst_sym <= 1e-9, || format!("symmetric loss off ln 8 by {worst_sym}"))?;

    let mut worst_rel: f64 = 0.0;
    let mut coords = 0usize;
    let h = 1e-6;
    for trial in 0..50 {
        let b = r.gen_range(1..=5);
        let dim = r.gen_range(2..=12);
        let n_neg = r.gen_range(1..=7);
        let mut batch = InfoNceBatch {
            queries: (0..b).map(|_| gaussian_vec(&mut r, dim)).collect(),
            positives: (0..b).map(|_| gaussian_vec(&mut r, dim)).collect(),
            negatives: (0..b)
                .map(|_| (0..n_neg).map(|_| gaussian_vec(&mut r, dim)).collect())
                .collect(),
            temperature: r.gen_range(0.1..2.0),
            use_in_batch: trial % 2 == 0,
        };
        let (_, grad) = infonce_grad(&batch).map_err(|e| e.to_string())?;
        // Walk every coordinate of every vector.
        let mut slots: Vec<(u8, usize, usize, usize)> = Vec::new();
        for i in 0..b {
            for d in 0..dim {
                slots.push((0, i, 0, d));
                slots.push((1, i, 0, d));
                for n in 0..n_neg {
                    slots.push((2, i, n, d));
                }
            }
        }
        for (kind, i, n, d) in slots {
            let orig = *slot(&mut batch, kind, i, n, d);
            *slot(&mut batch, kind, i, n, d) = orig + h;
            let up = infonce_loss(&batch).map_err(|e| e.to_string())?;
            *slot(&mut batch, kind, i, n, d) = orig - h;
            let down = infonce_loss(&batch).map_err(|e| e.to_string())?;
            *slot(&mut batch, kind, i, n, d) = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = match kind {
                0 => grad.queries[i][d],
                1 => grad.positives[i][d],
                _ => grad.negatives[i][n][d],
            };
            // Relative error with an absolute floor for vanishing gradients,
            // where central differences bottom out around 1e-10.
            let scale = analytic.abs().max(numeric.abs()).max(1e-4);
            let rel = (analytic - numeric).abs() / scale;
            worst_rel = worst_rel.max(rel);
            coords += 1;
            ensure(rel <= 1e-4, || {
                format!("batch {trial}: coordinate ({kind},{i},{n},{d}) analytic {analytic} numeric {numeric}")
            })?;
        }
    }
    Ok(format!(
        "|loss - ln 8| <= {worst_sym:.1e}; {coords} gradient coordinates over 50 batches, worst relative error {worst_rel:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 4. toy fine-tuning

fn criterion_toy_training() -> Check {
    let ctx = Context::new(PipelineConfig::default());
    let exp = pipeline::separable_experiment(&ctx).map_err(|e| e.to_string())?;
    let steps = exp.loss_trace.len();
    ensure(steps <= 500, || format!("{steps} steps"))?;
    ensure(exp.initial_mrr_at_10 < 0.2, || {
        format!("initial MRR@10 {:.4} is not below 0.2", exp.initial_mrr_at_10)
    })?;
    ensure(exp.final_mrr_at_10 >= 0.95, || {
        format!("final MRR@10 {:.4} is below 0.95", exp.final_mrr_at_10)
    })?;
    Ok(format!(
        "256 passages: MRR@10 {:.4} -> {:.4} in {steps} steps",
        exp.initial_mrr_at_10, exp.final_mrr_at_10
    ))
}

// ---------------------------------------------------------------------------
// 5. compression

fn unit_f32(v: Vec<f64>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

/// Renormalizes in f32 until the row passes the unit-norm check.
fn unit_row(v: Vec<f64>) -> Vec<f32> {
    let mut row = unit_f32(v);
    let norm = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-7 {
        row = unit_f32(row.into_iter().map(f64::from).collect());
    }
    row
}

fn criterion_compression() -> Check {
    const DIM: usize = 32;
    let mut r = rng(0x636f_6d70);
    let topics: Vec<Vec<f64>> = (0..48).map(|_| gaussian_vec(&mut r, DIM)).collect();
    let mut docs = Vec::with_capacity(1000);
    for d in 0..1000 {
        let n_tok = r.gen_range(4..=24);
        let doc_topics: Vec<&Vec<f64>> = topics.choose_multiple(&mut r, 3).collect();
        let rows: Vec<Vec<f32>> = (0..n_tok)
            .map(|_| {
                let t = doc_topics.choose(&mut r).unwrap();
                unit_row(t.iter().map(|x| x + r.gen_range(-0.6..0.6)).collect())
            })
            .collect();
        let m = TokenMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        docs.push(MultiVectorDoc::new(format!("doc{d:04}"), m, 512).map_err(|e| e.to_string())?);
    }
    // Queries: noisy copies of a few tokens of a random document.
    let queries: Vec<TokenMatrix> = (0..60)
        .map(|_| {
            let src = &docs[r.gen_range(0..docs.len())].vectors;
            let rows: Vec<Vec<f32>> = (0..6)
                .map(|_| {
                    let base = src.row(r.gen_range(0..src.rows()));
                    unit_row(base.iter().map(|&x| f64::from(x) + r.gen_range(-0.3..0.3)).collect())
                })
                .collect();
            TokenMatrix::from_rows(&rows).unwrap()
        })
        .collect();
    let exact: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| docs.iter().map(|d| maxsim_score(q, &d.vectors).unwrap()).collect())
        .collect();
    let exact_top: Vec<BTreeSet<String>> = queries
        .iter()
        .map(|q| {
            exact_search(&docs, q, 10)
                .unwrap()
                .into_iter()
                .map(|s| s.passage_id)
                .collect()
        })
        .collect();

    let mut mean_errors = Vec::new();
    let mut totals = Vec::new();
    let mut residual_bytes = Vec::new();
    let mut overlap_b8 = 0.0;
    for bits in Bits::ALL {
        let index = CompressedMultiVectorIndex::build(
            &docs,
            CompressionParams {
                bits,
                seed: 11,
                ..CompressionParams::default()
            },
        )
        .map_err(|e| e.to_string())?;

        // (a) per-dimension reconstruction error of every stored residual.
        let q = index.quantizer();
        let mut entry = 0;
        for d in &docs {
            for row in d.vectors.iter() {
                let c = index.centroid(index.centroid_ids()[entry] as usize);
                let decoded = index.decode_residual(entry);
                for j in 0..DIM {
                    let residual = f64::from(row[j]) - f64::from(c[j]);
                    let err = (residual - decoded[j]).abs();
                    let half = q.bucket_width(j) / 2.0;
                    ensure(err <= half, || {
                        format!("b={}: entry {entry} dim {j}: error {err} > half width {half}", bits.get())
                    })?;
                }
                entry += 1;
            }
        }

        // (b) mean absolute MaxSim error over all (query, doc) pairs.
        let mut abs_err = 0.0;
        let mut overlap = 0.0;
        for (qi, query) in queries.iter().enumerate() {
            let approx = index.scores(query).map_err(|e| e.to_string())?;
            abs_err += approx.iter().zip(&exact[qi]).map(|(a, e)| (a - e).abs()).sum::<f64>();
            let top: BTreeSet<String> = index
                .search(query, 10)
                .unwrap()
                .into_iter()
                .map(|s| s.passage_id)
                .collect();
            overlap += top.intersection(&exact_top[qi]).count() as f64 / 10.0;
        }
        mean_errors.push(abs_err / (queries.len() * docs.len()) as f64);
        if bits == Bits::Eight {
            overlap_b8 = overlap / queries.len() as f64;
        }
        let report = index.storage_report();
        totals.push(report.bytes_total);
        residual_bytes.push(report.bytes_residuals);
    }
    ensure(mean_errors.windows(2).all(|w| w[1] <= w[0]), || {
        format!("mean MaxSim error not non-increasing: {mean_errors:?}")
    })?;
    ensure(overlap_b8 >= 0.95, || format!("top-10 overlap at b=8 is {overlap_b8:.4}"))?;
    let ratio = residual_bytes[3] as f64 / residual_bytes[0] as f64;
    ensure(ratio == 8.0, || format!("residual ratio b8/b1 = {ratio}"))?;
    ensure(totals.windows(2).all(|w| w[1] > w[0]), || {
        format!("total storage not strictly increasing: {totals:?}")
    })?;
    Ok(format!(
        "mean |ΔMaxSim| {} ; overlap@10 (b=8) {overlap_b8:.3}; residual ratio {ratio}; totals {totals:?}",
        mean_errors
            .iter()
            .map(|e| format!("{e:.2e}"))
            .collect::<Vec<_>>()
            .join(" → ")
    ))
}

// ---------------------------------------------------------------------------
// 6. MaxSim

fn criterion_maxsim() -> Check {
    let mut r = rng(0x6d61_7873);
    let mut worst: f64 = 0.0;
    for pair in 0..500 {
        let dim = r.gen_range(1..=128);
        let nq = r.gen_range(1..=64);
        let nd = r.gen_range(1..=64);
        let mut mat = |rows: usize| -> Vec<Vec<f32>> {
            (0..rows)
                .map(|_| (0..dim).map(|_| r.gen_range(-1.0f32..1.0)).collect())
                .collect()
        };
        let q = mat(nq);
        let d = mat(nd);
        let mut want = 0.0;
        for qi in &q {
            let mut best = f64::NEG_INFINITY;
            for dj in &d {
                let mut s = 0.0;
                for t in 0..dim {
                    s += f64::from(qi[t]) * f64::from(dj[t]);
                }
                if s > best {
                    best = s;
                }
            }
            want += best;
        }
        let got = maxsim_score(
            &TokenMatrix::from_rows(&q).map_err(|e| e.to_string())?,
            &TokenMatrix::from_rows(&d).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        ensure(close(got, want, 1e-9), || format!("pair {pair}: {got} vs {want}"))?;
    }
    Ok(format!("500 pairs up to 64×64, worst |Δ| {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 7. filter

fn criterion_filter() -> Check {
    let mut r = rng(0x6669_6c74);
    let mut kept_total = 0usize;
    let mut judged = 0usize;
    for instance in 0..100 {
        let n = r.gen_range(2..=30);
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:02}")).collect();
        let texts: Vec<String> = (0..n).map(|_| random_text(&mut r, 1, 15)).collect();
        let corpus = Corpus::from_passages(
            ids.iter()
                .zip(&texts)
                .map(|(id, t)| Passage::new(id.clone(), "doc", "", "", "", t.clone()))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let index = InvertedIndex::build(&corpus).map_err(|e| e.to_string())?;
        let retriever = Bm25Retriever::new(index.clone(), Bm25Params::default());
        let queries: Vec<SyntheticQuery> = (0..r.gen_range(1..=15))
            .map(|i| SyntheticQuery {
                id: format!("q{i}"),
                passage_id: ids.choose(&mut r).unwrap().clone(),
                aspect: String::new(),
                text: random_text(&mut r, 1, 4),
                source: "test".into(),
            })
            .collect();
        // Brute force: score every passage, sort everything, find the rank.
        let oracle_rank: HashMap<&str, usize> = queries
            .iter()
            .map(|q| {
                let tokens = lower_tokens(&q.text);
                let scores: Vec<f64> = (0..n).map(|o| index.score(&tokens, o, Bm25Params::default())).collect();
                let order = oracle_order(&ids, &scores);
                let rank = order.iter().position(|p| *p == q.passage_id).unwrap() + 1;
                (q.id.as_str(), rank)
            })
            .collect();

        let mut previous: BTreeSet<String> = BTreeSet::new();
        for k in 1..=n {
            let report = filter_queries(&queries, None, &retriever, k).map_err(|e| e.to_string())?;
            let kept: BTreeSet<String> = report.kept.iter().cloned().collect();
            let expected: BTreeSet<String> = queries
                .iter()
                .filter(|q| oracle_rank[q.id.as_str()] <= k)
                .map(|q| q.id.clone())
                .collect();
            ensure(kept == expected, || {
                format!("instance {instance}, k={k}: kept {kept:?}, oracle {expected:?}")
            })?;
            ensure(previous.is_subset(&kept), || {
                format!("instance {instance}: kept set shrank from k={} to k={k}", k - 1)
            })?;
            ensure(
                report.kept.len() + report.dropped_recovery.len() == queries.len(),
                || format!("instance {instance}, k={k}: report does not partition the input"),
            )?;
            judged += queries.len();
            kept_total += kept.len();
            previous = kept;
        }
    }

    // Blacklist: every case variant, with and without decomposed diacritics.
    let blacklist = Blacklist::default();
    let mut r = rng(0x0062_6c6b);
    let mut variants = 0;
    for phrase in ["quy định này", "thông tư này"] {
        let forms = [
            phrase.to_owned(),
            phrase.to_uppercase(),
            title_case(phrase),
            phrase.nfd_string(),
            phrase.to_uppercase().nfd_string(),
        ];
        let mut all: Vec<String> = forms.to_vec();
        for _ in 0..200 {
            all.push(
                phrase
                    .chars()
                    .map(|c| {
                        if r.gen_bool(0.5) {
                            c.to_uppercase().collect::<String>()
                        } else {
                            c.to_string()
                        }
                    })
                    .collect(),
            );
        }
        for form in all {
            let q = SyntheticQuery {
                id: "q".into(),
                passage_id: "p00".into(),
                aspect: String::new(),
                text: format!("Theo {form}, ai chịu trách nhiệm?"),
                source: "test".into(),
            };
            let corpus =
                Corpus::from_passages(vec![Passage::new("p00", "d", "", "", "", "ai chịu trách nhiệm")])
                    .unwrap();
            let retriever =
                Bm25Retriever::new(InvertedIndex::build(&corpus).unwrap(), Bm25Params::default());
            let report = filter_queries(&[q], Some(&blacklist), &retriever, 1).map_err(|e| e.to_string())?;
            ensure(report.dropped_self_ref.len() == 1 && report.kept.is_empty(), || {
                format!("blacklist missed `{form}`")
            })?;
            variants += 1;
        }
    }
    Ok(format!(
        "100 instances, {judged} (query, k) decisions ({kept_total} kept) match the oracle; monotone in k; {variants} blacklist variants dropped"
    ))
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect::<String>())
                .unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

trait Nfd {
    fn nfd_string(&self) -> String;
}

impl Nfd for str {
    fn nfd_string(&self) -> String {
        use unicode_normalization::UnicodeNormalization;
        self.nfd().collect()
    }
}

impl Nfd for String {
    fn nfd_string(&self) -> String {
        self.as_str().nfd_string()
    }
}

// ---------------------------------------------------------------------------
// 8. determinism

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_determinism() -> Check {
    let ctx = Context::new(PipelineConfig {
        seed: 7,
        ..PipelineConfig::default()
    });
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline::run_demo(&ctx, a.path()).map_err(|e| e.to_string())?;
    pipeline::run_demo(&ctx, b.path()).map_err(|e| e.to_string())?;
    let fa = collect_files(a.path());
    let fb = collect_files(b.path());
    ensure(fa.keys().eq(fb.keys()), || "the two runs wrote different file sets".into())?;
    for (name, bytes) in &fa {
        ensure(*bytes == fb[name], || format!("`{name}` differs between runs"))?;
    }
    for required in [
        "bm25.vlbm",
        "dense.vlde",
        "colbert_b2.vlci",
        "pairs.jsonl",
        "runs/bm25.trec",
        "runs/colbert_b8.trec",
        "metrics.txt",
        "metrics.json",
    ] {
        ensure(fa.get(required).is_some_and(|b| !b.is_empty()), || {
            format!("artifact `{required}` missing or empty")
        })?;
    }
    let bytes: usize = fa.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) byte-identical across two runs", fa.len()))
}

// ---------------------------------------------------------------------------
// 9. chunking

fn criterion_chunking() -> Check {
    let mut r = rng(0x6368_756e);
    let separators = [" ", "  ", "\t", "\n", " \u{3000}"];
    let mut chunks_seen = 0usize;
    for i in 0..1000 {
        let len = match i % 4 {
            0 => r.gen_range(1..=8),
            1 => r.gen_range(9..=70),
            _ => r.gen_range(70..=700),
        };
        let mut content = String::new();
        let mut original = Vec::with_capacity(len);
        for t in 0..len {
            if t > 0 || r.gen_bool(0.1) {
                content.push_str(separators.choose(&mut r).unwrap());
            }
            let w = *WORDS.choose(&mut r).unwrap();
            content.push_str(w);
            original.push(w.to_owned());
        }
        let p = Passage::new(format!("p{i}"), "d", "", "", "", content);
        for max in [8usize, 64, 256] {
            let chunks = chunk_passage(&p, max).map_err(|e| e.to_string())?;
            let mut joined = Vec::with_capacity(len);
            for c in &chunks {
                let toks: Vec<&str> = c.content.split_whitespace().collect();
                ensure(toks.len() <= max && !toks.is_empty(), || {
                    format!("passage {i}, max {max}: chunk `{}` has {} tokens", c.id, toks.len())
                })?;
                joined.extend(toks.into_iter().map(str::to_owned));
            }
            ensure(joined == original, || {
                format!("passage {i}, max {max}: chunks do not reassemble the passage")
            })?;
            chunks_seen += chunks.len();
        }
    }
    Ok(format!("1000 passages × 3 budgets, {chunks_seen} chunks reassemble exactly"))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Check, Duration);

fn main() {
    // `cargo test` passes harness flags such as `--list`; honor the listing
    // request and otherwise run everything.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 9] = [
        ("metric oracle suite", criterion_metrics, Duration::from_secs(10)),
        ("BM25 oracle suite", criterion_bm25, Duration::from_secs(10)),
        ("InfoNCE loss and gradient", criterion_infonce, Duration::from_secs(10)),
        ("toy fine-tuning", criterion_toy_training, Duration::from_secs(60)),
        ("compression trade-off", criterion_compression, Duration::from_secs(60)),
        ("MaxSim oracle", criterion_maxsim, Duration::from_secs(5)),
        ("filter contracts", criterion_filter, Duration::from_secs(10)),
        ("demo determinism", criterion_determinism, Duration::from_secs(300)),
        ("chunking reconstruction", criterion_chunking, Duration::from_secs(5)),
    ];
    let filter: Vec<&String> = args[1..].iter().filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let label = format!("{} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; but took longer than {limit:?}")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "{status} [{label}] {:.2}s (limit {}s): {detail}",
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
