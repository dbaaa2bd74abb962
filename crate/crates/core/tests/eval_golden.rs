//! Hand-computed metrics for a small fixed run.
//!
//! q1 ranks b, a, c with a and c relevant; q2 ranks its only relevant passage
//! first; q3 is judged with nothing relevant (excluded by default); q4 is
//! unjudged (excluded always).

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use vlr_core::metrics::{evaluate_run, render_table, EvalOptions, Judgments, RunList};

fn fixture(name: &str) -> BufReader<File> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    BufReader::new(File::open(p).unwrap())
}

fn load() -> (RunList, Judgments) {
    (
        RunList::read_run(fixture("golden.run")).unwrap(),
        Judgments::read_qrels(fixture("golden.qrels")).unwrap(),
    )
}

fn assert_close(got: f64, want: f64) {
    assert!((got - want).abs() < 1e-12, "{got} != {want}");
}

#[test]
fn matches_hand_computation() {
    let (run, qrels) = load();
    let t = evaluate_run(&run, &qrels, &[1, 3], EvalOptions::default()).unwrap();
    assert_eq!(t.queries_evaluated, 2);
    assert_eq!(t.unjudged_queries, 1);
    assert_eq!(t.missing_queries, 0);

    let at1 = t.at(1).unwrap();
    for v in [at1.mrr, at1.map, at1.recall, at1.f2] {
        assert_close(v, 0.5);
    }

    // q1: RR 1/2, AP (1/2 + 2/3)/2, R 1, F2 with P = 2/3 → 10/11.
    // q2: RR 1, AP 1, R 1, F2 with P = 1/3 → 5/7.
    let at3 = t.at(3).unwrap();
    assert_close(at3.mrr, 0.75);
    assert_close(at3.map, (7.0 / 12.0 + 1.0) / 2.0);
    assert_close(at3.recall, 1.0);
    assert_close(at3.f2, (10.0 / 11.0 + 5.0 / 7.0) / 2.0);
}

#[test]
fn including_empty_queries_dilutes_the_mean() {
    let (run, qrels) = load();
    let opts = EvalOptions {
        include_no_relevant: true,
    };
    let t = evaluate_run(&run, &qrels, &[3], opts).unwrap();
    assert_eq!(t.queries_evaluated, 3);
    assert_close(t.by_k[0].mrr, 1.5 / 3.0);
}

#[test]
fn renders_the_stored_table() {
    let (run, qrels) = load();
    let t = evaluate_run(&run, &qrels, &[1, 3], EvalOptions::default()).unwrap();
    let want = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_table.txt"),
    )
    .unwrap();
    assert_eq!(render_table(&[("golden", &t)]), want);
}
