//! Ranked-retrieval evaluation over TREC-style qrels and runs.
//!
//! Averages run over judged queries with at least one relevant passage
//! (optionally all judged queries). A judged query absent from the run scores
//! 0; run queries without judgments are excluded and tallied as warnings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{result_order, Ranking, ScoredPassage};

pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_KS: [usize; 2] = [10, 100];

/// Relevance grades per query; grade ≥ 1 is relevant.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Judgments {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Judgments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) -> Result<()> {
        let q = self.grades.entry(query_id.to_owned()).or_default();
        if q.insert(passage_id.to_owned(), grade).is_some() {
            return Err(Error::invalid(format!(
                "duplicate judgment for ({query_id}, {passage_id})"
            )));
        }
        Ok(())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn contains(&self, query_id: &str) -> bool {
        self.grades.contains_key(query_id)
    }

    pub fn relevant(&self, query_id: &str) -> BTreeSet<&str> {
        self.grades
            .get(query_id)
            .into_iter()
            .flatten()
            .filter(|(_, &g)| g >= 1)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    /// Reads `query_id 0 passage_id grade` lines (any whitespace separator).
    pub fn read_qrels<R: BufRead>(source: R) -> Result<Self> {
        let mut out = Self::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::format("qrels", format!("line {}: {m}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let grade = f[3].parse::<u32>().map_err(|_| bad("grade must be a non-negative integer"))?;
            out.insert(f[0], f[2], grade)
                .map_err(|e| bad(&e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write_qrels<W: Write>(&self, mut sink: W) -> Result<()> {
        for (q, ps) in &self.grades {
            for (p, g) in ps {
                writeln!(sink, "{q}\t0\t{p}\t{g}")?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}

/// Ranked results per query, kept in score-descending, id-ascending order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunList {
    rankings: BTreeMap<String, Ranking>,
}

impl RunList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sorts `ranking` into result order; repeated passages are an error.
    pub fn insert(&mut self, query_id: &str, mut ranking: Ranking) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &ranking {
            if !seen.insert(r.passage_id.as_str()) {
                return Err(Error::invalid(format!(
                    "passage `{}` appears twice for query `{query_id}`",
                    r.passage_id
                )));
            }
            if r.score.is_nan() {
                return Err(Error::NonFinite("run scores"));
            }
        }
        ranking.sort_by(result_order);
        if self.rankings.insert(query_id.to_owned(), ranking).is_some() {
            return Err(Error::invalid(format!("query `{query_id}` inserted twice")));
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str) -> Option<&Ranking> {
        self.rankings.get(query_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Ranking)> {
        self.rankings.iter().map(|(q, r)| (q.as_str(), r))
    }

    pub fn len(&self) -> usize {
        self.rankings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// Reads `query_id Q0 passage_id rank score tag` lines. Lines are grouped
    /// per query and re-sorted into result order; the rank column is ignored.
    pub fn read_run<R: BufRead>(source: R) -> Result<Self> {
        let mut grouped: BTreeMap<String, Ranking> = BTreeMap::new();
        for (n, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::format("run", format!("line {}: {m}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            f[3].parse::<usize>().map_err(|_| bad("rank must be a positive integer"))?;
            let score = f[4].parse::<f64>().map_err(|_| bad("score must be a number"))?;
            grouped
                .entry(f[0].to_owned())
                .or_default()
                .push(ScoredPassage::new(f[2], score));
        }
        let mut out = Self::new();
        for (q, r) in grouped {
            out.insert(&q, r)
                .map_err(|e| Error::format("run", e.to_string()))?;
        }
        Ok(out)
    }

    pub fn write_run<W: Write>(&self, mut sink: W, tag: &str) -> Result<()> {
        for (q, ranking) in &self.rankings {
            for (i, r) in ranking.iter().enumerate() {
                writeln!(sink, "{q}\tQ0\t{}\t{}\t{}\t{tag}", r.passage_id, i + 1, r.score)?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// Average over judged queries without relevant passages too (they score 0).
    pub include_no_relevant: bool,
}

/// Which queries a metric averages over.
struct QuerySet<'a> {
    queries: Vec<(&'a str, BTreeSet<&'a str>)>,
    unjudged: Vec<String>,
}

fn query_set<'a>(run: &'a RunList, judgments: &'a Judgments, opts: EvalOptions) -> QuerySet<'a> {
    let queries = judgments
        .query_ids()
        .map(|q| (q, judgments.relevant(q)))
        .filter(|(_, rel)| opts.include_no_relevant || !rel.is_empty())
        .collect();
    let unjudged = run
        .rankings
        .keys()
        .filter(|q| !judgments.contains(q))
        .cloned()
        .collect();
    QuerySet { queries, unjudged }
}

fn top<'a>(run: &'a RunList, query_id: &str, k: usize) -> &'a [ScoredPassage] {
    run.get(query_id).map_or(&[], |r| &r[..r.len().min(k)])
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("cutoff k must be at least 1"));
    }
    Ok(())
}

fn mean<F>(run: &RunList, set: &QuerySet, k: usize, per_query: F) -> f64
where
    F: Fn(&[ScoredPassage], &BTreeSet<&str>) -> f64,
{
    if set.queries.is_empty() {
        return 0.0;
    }
    let total: f64 = set
        .queries
        .iter()
        .map(|(q, rel)| per_query(top(run, q, k), rel))
        .sum();
    total / set.queries.len() as f64
}

fn reciprocal_rank(top: &[ScoredPassage], rel: &BTreeSet<&str>) -> f64 {
    top.iter()
        .position(|r| rel.contains(r.passage_id.as_str()))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn average_precision(top: &[ScoredPassage], rel: &BTreeSet<&str>, k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, r) in top.iter().enumerate() {
        if rel.contains(r.passage_id.as_str()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / rel.len().min(k) as f64
}

fn hits(top: &[ScoredPassage], rel: &BTreeSet<&str>) -> usize {
    top.iter().filter(|r| rel.contains(r.passage_id.as_str())).count()
}

fn recall(top: &[ScoredPassage], rel: &BTreeSet<&str>) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    hits(top, rel) as f64 / rel.len() as f64
}

fn f_beta(top: &[ScoredPassage], rel: &BTreeSet<&str>, k: usize, beta: f64) -> f64 {
    let p = hits(top, rel) as f64 / k as f64;
    let r = recall(top, rel);
    let b2 = beta * beta;
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * p * r / (b2 * p + r)
}

pub fn mrr_at_k(run: &RunList, judgments: &Judgments, k: usize, opts: EvalOptions) -> Result<f64> {
    check_k(k)?;
    let set = query_set(run, judgments, opts);
    Ok(mean(run, &set, k, reciprocal_rank))
}

/// Average precision normalized by min(|relevant|, k).
pub fn map_at_k(run: &RunList, judgments: &Judgments, k: usize, opts: EvalOptions) -> Result<f64> {
    check_k(k)?;
    let set = query_set(run, judgments, opts);
    Ok(mean(run, &set, k, |t, r| average_precision(t, r, k)))
}

pub fn recall_at_k(run: &RunList, judgments: &Judgments, k: usize, opts: EvalOptions) -> Result<f64> {
    check_k(k)?;
    let set = query_set(run, judgments, opts);
    Ok(mean(run, &set, k, recall))
}

/// F-beta with P@k = hits / k.
pub fn f_beta_at_k(
    run: &RunList,
    judgments: &Judgments,
    k: usize,
    beta: f64,
    opts: EvalOptions,
) -> Result<f64> {
    check_k(k)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let set = query_set(run, judgments, opts);
    Ok(mean(run, &set, k, |t, r| f_beta(t, r, k, beta)))
}

/// Source passage and document of a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySource {
    pub passage_id: String,
    pub doc_id: String,
}

/// Percentages of queries whose source passage / source document appears in
/// the top `k`. A query missing from the run counts as a miss on both.
pub fn hit_rates(
    run: &RunList,
    sources: &BTreeMap<String, QuerySource>,
    passage_docs: &HashMap<String, String>,
    k: usize,
) -> Result<(f64, f64)> {
    check_k(k)?;
    let unknown = |q: &str, p: &str| Error::UnknownPassage {
        query_id: q.to_owned(),
        passage_id: p.to_owned(),
    };
    let mut passage_hits = 0usize;
    let mut doc_hits = 0usize;
    for (q, src) in sources {
        if !passage_docs.contains_key(&src.passage_id) {
            return Err(unknown(q, &src.passage_id));
        }
        let mut p_hit = false;
        let mut d_hit = false;
        for r in top(run, q, k) {
            let doc = passage_docs
                .get(&r.passage_id)
                .ok_or_else(|| unknown(q, &r.passage_id))?;
            p_hit |= r.passage_id == src.passage_id;
            d_hit |= *doc == src.doc_id;
        }
        passage_hits += usize::from(p_hit);
        doc_hits += usize::from(d_hit);
    }
    if sources.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = sources.len() as f64;
    Ok((100.0 * passage_hits as f64 / n, 100.0 * doc_hits as f64 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub mrr: f64,
    pub map: f64,
    pub recall: f64,
    pub f2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub queries_evaluated: usize,
    /// Run queries without judgments (excluded from every average).
    pub unjudged_queries: usize,
    /// Judged queries absent from the run (scored 0).
    pub missing_queries: usize,
    pub by_k: Vec<MetricsAtK>,
}

impl MetricTable {
    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.by_k.iter().find(|m| m.k == k)
    }

    /// Headline columns: MRR and MAP at the first cutoff, recall at every
    /// cutoff, then F2 at the first cutoff.
    pub fn headline(&self) -> Vec<(String, f64)> {
        let Some(first) = self.by_k.first() else {
            return Vec::new();
        };
        let mut cols = vec![
            (format!("MRR@{}", first.k), first.mrr),
            (format!("MAP@{}", first.k), first.map),
        ];
        cols.extend(self.by_k.iter().map(|m| (format!("R@{}", m.k), m.recall)));
        cols.push((format!("F2@{}", first.k), first.f2));
        cols
    }
}

pub fn evaluate_run(
    run: &RunList,
    judgments: &Judgments,
    ks: &[usize],
    opts: EvalOptions,
) -> Result<MetricTable> {
    if ks.is_empty() {
        return Err(Error::invalid("at least one cutoff is required"));
    }
    let set = query_set(run, judgments, opts);
    if !set.unjudged.is_empty() {
        log::warn!(
            "{} run queries have no judgments and were excluded (first: {})",
            set.unjudged.len(),
            set.unjudged[0]
        );
    }
    let missing = set
        .queries
        .iter()
        .filter(|(q, _)| run.get(q).is_none())
        .count();
    if missing > 0 {
        log::warn!("{missing} judged queries are absent from the run and score 0");
    }
    let mut by_k = Vec::with_capacity(ks.len());
    for &k in ks {
        check_k(k)?;
        by_k.push(MetricsAtK {
            k,
            mrr: mean(run, &set, k, reciprocal_rank),
            map: mean(run, &set, k, |t, r| average_precision(t, r, k)),
            recall: mean(run, &set, k, recall),
            f2: mean(run, &set, k, |t, r| f_beta(t, r, k, DEFAULT_BETA)),
        });
    }
    Ok(MetricTable {
        queries_evaluated: set.queries.len(),
        unjudged_queries: set.unjudged.len(),
        missing_queries: missing,
        by_k,
    })
}

/// Aligned text table, one row per labelled run.
pub fn render_table(rows: &[(&str, &MetricTable)]) -> String {
    let header: Vec<String> = rows
        .first()
        .map(|(_, t)| t.headline().into_iter().map(|(n, _)| n).collect())
        .unwrap_or_default();
    let label_w = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(std::iter::once(3))
        .max()
        .unwrap_or(3);
    let col_w = header.iter().map(String::len).chain(std::iter::once(6)).max().unwrap_or(6);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "run");
    for h in &header {
        let _ = write!(out, "  {h:>col_w$}");
    }
    out.push('\n');
    for (label, table) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for (_, v) in table.headline() {
            let _ = write!(out, "  {v:>col_w$.4}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(q: &str, ids: &[&str]) -> RunList {
        let mut run = RunList::new();
        let n = ids.len() as f64;
        run.insert(
            q,
            ids.iter()
                .enumerate()
                .map(|(i, id)| ScoredPassage::new(*id, n - i as f64))
                .collect(),
        )
        .unwrap();
        run
    }

    fn qrels(q: &str, rel: &[&str]) -> Judgments {
        let mut j = Judgments::new();
        for p in rel {
            j.insert(q, p, 1).unwrap();
        }
        j
    }

    const O: EvalOptions = EvalOptions {
        include_no_relevant: false,
    };

    #[test]
    fn hand_values() {
        let run = run_of("q", &["x", "a", "y", "b"]);
        let j = qrels("q", &["a"]);
        assert_eq!(mrr_at_k(&run, &j, 10, O).unwrap(), 0.5);
        assert_eq!(mrr_at_k(&run, &j, 1, O).unwrap(), 0.0);

        let run = run_of("q", &["a", "x", "b"]);
        let j = qrels("q", &["a", "b"]);
        assert!((map_at_k(&run, &j, 10, O).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);

        let j = qrels("q", &["a", "b", "c", "d"]);
        assert_eq!(recall_at_k(&run, &j, 10, O).unwrap(), 0.5);
    }

    #[test]
    fn f2_hand_value() {
        let run = run_of("q", &["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let j = qrels("q", &["a", "b"]);
        let f2 = f_beta_at_k(&run, &j, 10, 2.0, O).unwrap();
        assert!((f2 - 5.0 * 0.2 / (4.0 * 0.2 + 1.0)).abs() < 1e-12);
        assert!(f_beta_at_k(&run, &j, 10, 0.0, O).is_err());
    }

    #[test]
    fn unjudged_and_missing_queries() {
        let mut run = run_of("q1", &["a"]);
        run.insert("zz", vec![ScoredPassage::new("a", 1.0)]).unwrap();
        let mut j = qrels("q1", &["a"]);
        j.insert("q2", "b", 1).unwrap();
        j.insert("q3", "c", 0).unwrap();
        let t = evaluate_run(&run, &j, &[10], O).unwrap();
        assert_eq!(t.queries_evaluated, 2);
        assert_eq!(t.unjudged_queries, 1);
        assert_eq!(t.missing_queries, 1);
        assert_eq!(t.by_k[0].mrr, 0.5);
        let all = EvalOptions {
            include_no_relevant: true,
        };
        assert_eq!(evaluate_run(&run, &j, &[10], all).unwrap().queries_evaluated, 3);
    }

    #[test]
    fn empty_run_scores_zero() {
        let t = evaluate_run(&RunList::new(), &qrels("q", &["a"]), &DEFAULT_KS, O).unwrap();
        assert!(t.by_k.iter().all(|m| m.mrr == 0.0 && m.recall == 0.0));
        assert!(evaluate_run(&RunList::new(), &Judgments::new(), &[], O).is_err());
    }

    #[test]
    fn hit_rate_counts() {
        let docs: HashMap<String, String> = [("a", "A"), ("b", "A"), ("c", "B"), ("d", "C")]
            .into_iter()
            .map(|(p, d)| (p.to_string(), d.to_string()))
            .collect();
        let mut run = RunList::new();
        let mut sources = BTreeMap::new();
        for (q, top1, src, doc) in [
            ("q1", "a", "a", "A"),
            ("q2", "c", "c", "B"),
            ("q3", "d", "d", "C"),
            ("q4", "b", "a", "A"),
        ] {
            run.insert(q, vec![ScoredPassage::new(top1, 1.0)]).unwrap();
            sources.insert(
                q.to_string(),
                QuerySource {
                    passage_id: src.into(),
                    doc_id: doc.into(),
                },
            );
        }
        assert_eq!(hit_rates(&run, &sources, &docs, 10).unwrap(), (75.0, 100.0));
        sources.get_mut("q1").unwrap().passage_id = "zz".into();
        assert!(hit_rates(&run, &sources, &docs, 10).is_err());
    }

    #[test]
    fn trec_round_trip() {
        let mut run = RunList::new();
        run.insert("q", vec![ScoredPassage::new("b", 0.5), ScoredPassage::new("a", 0.5)])
            .unwrap();
        let mut buf = Vec::new();
        run.write_run(&mut buf, "t").unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "q\tQ0\ta\t1\t0.5\tt\nq\tQ0\tb\t2\t0.5\tt\n");
        assert_eq!(RunList::read_run(&buf[..]).unwrap(), run);
        let dup = "q Q0 a 1 1.0 t\nq Q0 a 2 0.5 t\n";
        assert!(RunList::read_run(dup.as_bytes()).is_err());

        let j = qrels("q", &["a", "b"]);
        let mut buf = Vec::new();
        j.write_qrels(&mut buf).unwrap();
        assert_eq!(Judgments::read_qrels(&buf[..]).unwrap(), j);
        assert!(Judgments::read_qrels("q 0 a -1\n".as_bytes()).is_err());
        assert!(Judgments::read_qrels("q 0 a 1\nq 0 a 2\n".as_bytes()).is_err());
    }

    #[test]
    fn table_layout() {
        let run = run_of("q", &["a"]);
        let t = evaluate_run(&run, &qrels("q", &["a"]), &DEFAULT_KS, O).unwrap();
        let text = render_table(&[("bm25", &t)]);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["run", "MRR@10", "MAP@10", "R@10", "R@100", "F2@10"]);
        assert!(lines.next().unwrap().starts_with("bm25"));
    }
}
