//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! timing, then fails if any criterion failed.
//!
//! Run with `cargo test -p sentret --test acceptance -- --nocapture`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::{Duration, Instant};

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use common::*;
use sentret::corpus::{AnalyzerConfig, Collection};
use sentret::dialogue::Dialogue;
use sentret::eval::{
    average_precision, make_splits, mean_over, mrr, ndcg_at_k, per_query_metrics, permutation_test, Metric,
    PermutationParams, Qrels, SplitSpec,
};
use sentret::lm::{
    cross_entropy, decay_weights, dirichlet_prob, doc_mixture, future_mixture, history_mixture, sent_mixture,
    DecayParams, TermDist,
};
use sentret::ranked::write_run;
use sentret::rerank::protocol::{serve, ProtocolClient};
use sentret::rerank::{
    bm25_score, candidate_texts, ext_fuse, rerank_bm25, rerank_external, rerank_lm, rrf, sentence_idf, truncate_words,
    Bm25Params, HashEmbedder, OverlapScorer, ProcessScorer, RrfParams, Scorer, TokenBudget,
};
use sentret::retrieval::{minmax_normalize, InitialRanker, InitialRankerParams};
use sentret::weaklabel::{build_training_set, weakly_fused, FusedLmParams, Label, WeakLabelConfig};
use sentret::{Error, RankedList};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || {
        format!("{name}: got {got:.9}, want {want:.9} (tol {tol:e})")
    })
}

/// Runs one criterion, prints its line, and reports whether it passed.
fn criterion(name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let (ok, detail) = match outcome {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; over time limit")),
        Err(e) => (false, e),
    };
    println!(
        "{} {name} [{:.2} s / {} s] {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

fn tiny_collection(sentences: &[&str]) -> Collection {
    Collection::build(vec![doc("d", &[("s", sentences)])], AnalyzerConfig::default())
}

fn as_pairs(list: &RankedList) -> Vec<(String, f64)> {
    list.items().iter().map(|it| (it.item_id.clone(), it.score)).collect()
}

/// Same ids in the same order, scores within `tol`.
fn same_ranking(what: &str, got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    ensure(got.len() == want.len(), || {
        format!("{what}: {} items, reference has {}", got.len(), want.len())
    })?;
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        ensure(g.0 == w.0, || {
            format!(
                "{what}: rank {} is {} ({}), reference {} ({})",
                i + 1,
                g.0,
                g.1,
                w.0,
                w.1
            )
        })?;
        close(&format!("{what} score of {}", g.0), g.1, w.1, tol)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn formula_oracles() -> Check {
    let tol = 1e-6;
    close(
        "dirichlet",
        dirichlet_prob(2, 10, 1000.0, 0.01).map_err(|e| e.to_string())?,
        12.0 / 1010.0,
        tol,
    )?;

    let p = TermDist::from_weights([("a", 0.5), ("b", 0.5)]).unwrap();
    let ce = cross_entropy(&p, |w| if *w == "a" { 0.25 } else { 0.75 }).unwrap();
    close("cross_entropy", ce, 0.836988, tol)?;

    let alpha = decay_weights(DecayParams::new(0.01, 3, 1, 3)).unwrap();
    for (a, want) in alpha.iter().zip([0.330006, 0.333322, 0.336672]) {
        close("decay_weights", *a, want, tol)?;
    }

    let toks = |s: &str| s.split(' ').map(str::to_owned).collect::<Vec<_>>();
    let d = doc_mixture(&[toks("x x y"), toks("y")], 0.3).unwrap();
    close("doc_mixture x", d.get(&"x".into()), 0.466667, tol)?;
    close("doc_mixture y", d.get(&"y".into()), 0.533333, tol)?;

    let s = sent_mixture(&[toks("a"), toks("b"), toks("a")], 0.3, 0.01).unwrap();
    close("sent_mixture a", s.get(&"a".into()), 0.849250, tol)?;
    close("sent_mixture b", s.get(&"b".into()), 0.150750, tol)?;

    let f = future_mixture(&[toks("a"), toks("b")], 0.01).unwrap();
    close(
        "future_mixture first",
        f.get(&"a".into()),
        1.0 / (1.0 + (-0.01f64).exp()),
        tol,
    )?;
    let h = history_mixture(&[toks("a")], 0.01).unwrap();
    close("history_mixture single", h.get(&"a".into()), 1.0, tol)?;

    let list =
        |ids: &[&str]| RankedList::from_scores("q", "t", ids.iter().enumerate().map(|(i, id)| (*id, -(i as f64))));
    let one = rrf(&[&list(&["s"])], &RrfParams::uniform(60.0)).unwrap();
    close("rrf single", one.items()[0].score, 1.0 / 61.0, tol)?;
    let two = rrf(&[&list(&["s", "t"]), &list(&["t", "s"])], &RrfParams::uniform(60.0)).unwrap();
    close("rrf pair", two.items()[0].score, 0.0325232, tol)?;

    let fused = weakly_fused(
        &list(&["a", "s", "b", "c", "d"]),
        &list(&["s", "a", "b", "c", "d"]),
        &list(&["a", "b", "c", "d", "s"]),
        &FusedLmParams::default(),
    )
    .unwrap();
    let s_score = fused.items().iter().find(|it| it.item_id == "s").unwrap().score;
    close("fused_lm", s_score, 0.0162025, tol)?;

    // Ten sentences, `w` in two of them: idf = ln(3.4).
    let c = tiny_collection(&["w", "w", "a", "b", "c", "d", "e", "f", "g", "h"]);
    let idf = sentence_idf(&c.stats, "w");
    close("rsj idf", idf, 3.4f64.ln(), tol)?;
    let q = BTreeMap::from([("w".to_owned(), 1u32)]);
    let bm25 = bm25_score(&q, |_| 2, 10.0, 10.0, |_| idf, Bm25Params { k1: 1.2, b: 0.75 });
    close("bm25", bm25, 1.682691, tol)?;

    let mut qrels = Qrels::default();
    for id in ["r1", "r2"] {
        qrels.insert("q", id, true);
    }
    qrels.insert("q", "n1", false);
    let run = list(&["r1", "n1", "r2", "n2", "n3"]);
    close(
        "AP",
        average_precision(&run, &qrels, "q").unwrap(),
        (1.0 + 2.0 / 3.0) / 2.0,
        tol,
    )?;
    close("NDCG@5", ndcg_at_k(&run, &qrels, "q", 5).unwrap(), 0.919721, tol)?;
    let late = list(&["n1", "n2", "n3", "r1", "r2"]);
    close("MRR", mrr(&late, &qrels, "q").unwrap(), 0.25, tol)?;

    Ok("11 formulas within 1e-6".into())
}

fn pipeline_oracle() -> Check {
    let analyzer = sentret::corpus::Analyzer::default();
    let settings = [
        InitialRankerParams::default(),
        InitialRankerParams {
            beta: 0.6,
            gamma: 0.4,
            mu: 50.0,
            delta: 0.5,
            k_docs: 4,
            k_sents: 20,
        },
        InitialRankerParams {
            gamma: 1.0,
            k_docs: 1,
            ..InitialRankerParams::default()
        },
    ];
    let mut lists = 0;
    let mut items = 0;
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_docs = rng.gen_range(5..=50);
        let docs = random_corpus(&mut rng, n_docs, 300, 120);
        let flat = FlatCorpus::new(&docs, &analyzer);
        assert!(flat.doc_ids.len() <= 50 && flat.ids.len() <= 300);
        let collection = Collection::build(docs, AnalyzerConfig::default());
        let dialogues: Vec<Dialogue> = (0..25)
            .map(|i| random_dialogue(&mut rng, &format!("g{i}"), 140))
            .collect();
        for params in &settings {
            let ranker = InitialRanker::new(&collection, analyzer.clone(), *params).unwrap();
            for d in &dialogues {
                let got = match ranker.final_rank(d) {
                    Ok(l) => as_pairs(&l),
                    Err(Error::EmptyQuery) => Vec::new(),
                    Err(e) => return Err(format!("{}: {e}", d.dialogue_id)),
                };
                let want = reference_initial_rank(&flat, &analyzer, d, params);
                same_ranking(&format!("seed {seed} {}", d.dialogue_id), &got, &want, 1e-9)?;
                lists += 1;
                items += got.len();
            }
        }
    }
    Ok(format!("{lists} rankings, {items} items identical"))
}

fn weak_label_oracle() -> Check {
    let (docs, convs) = mini_world();
    let analyzer = sentret::corpus::Analyzer::default();
    let flat = FlatCorpus::new(&docs, &analyzer);
    let collection = Collection::build(docs, AnalyzerConfig::default());
    let config = WeakLabelConfig::default();
    let (records, report) = build_training_set(&convs, &collection, &analyzer, &config, || {
        Ok((OverlapScorer, HashEmbedder::default()))
    })
    .map_err(|e| e.to_string())?;
    ensure(report.failed == 0, || format!("{} conversations failed", report.failed))?;

    let reference_cfg = ReferenceWeakConfig {
        ranker: config.ranker,
        lambda: config.fused.lambda,
        nu: config.fused.nu,
        delta: config.fused.delta,
        m_future: config.fused.m_future,
        k: config.k_labels,
        query_words: config.budget.query_tokens,
        text_words: config.budget.text_tokens,
        embed_dim: HashEmbedder::default().dim,
    };
    let got: BTreeMap<String, BTreeSet<(String, bool)>> = records
        .iter()
        .map(|r| {
            let labels = r
                .labels
                .iter()
                .map(|l| (l.sentence.clone(), l.label == Label::PseudoRelevant))
                .collect();
            (r.conv_id.clone(), labels)
        })
        .collect();
    let want: BTreeMap<String, BTreeSet<(String, bool)>> = convs
        .iter()
        .filter_map(|c| reference_weak_labels(&flat, &analyzer, c, &reference_cfg).map(|l| (c.dialogue_id.clone(), l)))
        .collect();
    ensure(got == want, || {
        format!("label sets differ:\n got  {got:?}\n want {want:?}")
    })?;

    let pos = want.values().flatten().filter(|l| l.1).count();
    let neg = want.values().flatten().filter(|l| !l.1).count();
    ensure(pos > 0 && neg > 0 && want.len() < convs.len(), || {
        "mini-world does not exercise every branch".into()
    })?;
    Ok(format!(
        "{} of {} conversations labeled, {pos} positives, {neg} negatives identical",
        want.len(),
        convs.len()
    ))
}

fn distribution_invariants() -> Check {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let turns = vec(vec(0u8..15, 0..8), 1..6);
    let strategy = (
        turns,
        0.0f64..=1.0,
        1e-4f64..3.0,
        (-5i64..10, 0i64..6, 0i64..6),
        vec(-1e3f64..1e3, 1..20),
    );
    runner
        .run(&strategy, |(turns, beta, delta, (pivot, first, span), scores)| {
            let turns: Vec<Vec<String>> = turns
                .iter()
                .map(|t| t.iter().map(|w| format!("w{w}")).collect())
                .collect();
            let sums_to_one = |d: &TermDist<String>| (d.total() - 1.0).abs() <= 1e-9;
            let any = turns.iter().any(|t| !t.is_empty());
            for t in turns.iter().filter(|t| !t.is_empty()) {
                prop_assert!(sums_to_one(&TermDist::mle(t.iter()).unwrap()));
            }
            for d in [
                doc_mixture(&turns, beta),
                sent_mixture(&turns, beta, delta),
                history_mixture(&turns, delta),
            ] {
                match d {
                    Ok(d) => prop_assert!(sums_to_one(&d)),
                    Err(_) => prop_assert!(!any),
                }
            }
            if let Ok(f) = future_mixture(&turns, delta) {
                prop_assert!(sums_to_one(&f));
            }

            let alpha = decay_weights(DecayParams::new(delta, pivot, first, first + span)).unwrap();
            prop_assert_eq!(alpha.len() as i64, span + 1);
            prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(alpha.iter().all(|a| *a > 0.0));

            // Gibbs: H(p, q) >= H(p) for q smoothed over a superset of supp(p).
            if any {
                let p = doc_mixture(&turns, beta).unwrap();
                let q = sent_mixture(&turns, 1.0 - beta, delta).unwrap();
                let vocab = 15.0;
                let smoothed = |w: &String| 0.5 * q.get(w) + 0.5 / vocab;
                let h_pq = cross_entropy(&p, smoothed).unwrap();
                prop_assert!(h_pq >= p.entropy() - 1e-12);
                prop_assert!(cross_entropy(&p, |w| p.get(w)).unwrap().abs() - p.entropy().abs() <= 1e-12);
            }

            let norm = minmax_normalize(&scores).unwrap();
            prop_assert!(norm.iter().all(|x| (0.0..=1.0).contains(x)));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 cases".into())
}

fn permutation_calibration() -> Check {
    const TRIALS: u64 = 1000;
    const PAIRS: usize = 20;
    let mut rejections = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..TRIALS {
        let a: Vec<f64> = (0..PAIRS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..PAIRS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = permutation_test(
            &a,
            &b,
            PermutationParams {
                n_permutations: 10_000,
                seed: trial,
            },
        )
        .map_err(|e| e.to_string())?;
        rejections += usize::from(p <= 0.05);
    }
    let rate = rejections as f64 / TRIALS as f64;
    ensure((0.03..=0.07).contains(&rate), || {
        format!("rejection rate {rate:.3} outside [0.03, 0.07]")
    })?;
    Ok(format!("rejection rate {rate:.3} over {TRIALS} null trials"))
}

/// A scorer served over in-memory pipes by the reference `serve` loop.
fn piped_overlap_scorer() -> ProcessScorer {
    let (client_read, server_write) = std::io::pipe().unwrap();
    let (server_read, client_write) = std::io::pipe().unwrap();
    thread::spawn(move || {
        let handler = |req: &Value| -> Result<Map<String, Value>, String> {
            let field = |k: &str| req.get(k).and_then(Value::as_str).ok_or(format!("missing `{k}`"));
            let mut m = Map::new();
            m.insert(
                "score".into(),
                json!(OverlapScorer::overlap(field("query")?, field("text")?)),
            );
            Ok(m)
        };
        serve(
            BufReader::new(server_read),
            server_write,
            json!({ "protocol": 1 }),
            handler,
        )
    });
    ProcessScorer::from_client(ProtocolClient::connect(client_read, client_write, Duration::from_secs(30)).unwrap())
}

fn brute_force_external(query: &str, texts: &[(String, String)], budget: TokenBudget) -> Vec<(String, f64)> {
    let q = truncate_words(query, budget.query_tokens);
    rank(
        &texts
            .iter()
            .map(|(id, t)| {
                (
                    id.clone(),
                    OverlapScorer::overlap(&q, &truncate_words(t, budget.text_tokens)),
                )
            })
            .collect::<Vec<_>>(),
    )
}

fn run_bytes(lists: &[RankedList]) -> Vec<u8> {
    let mut out = Vec::new();
    write_run(lists, &mut out).unwrap();
    out
}

fn protocol_and_determinism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bench = history_heavy_benchmark(&mut rng, 8, 12);
    let collection = Collection::build(bench.docs.clone(), AnalyzerConfig::default());
    let ranker = InitialRanker::new(&collection, collection.analyzer(), InitialRankerParams::default()).unwrap();
    let mut scorer = piped_overlap_scorer();
    let budget = TokenBudget {
        query_tokens: 3,
        text_tokens: 4,
    };
    let mut compared = 0;
    for d in &bench.dialogues {
        let initial = ranker.final_rank(d).map_err(|e| e.to_string())?;
        let texts = candidate_texts(&initial, &collection).map_err(|e| e.to_string())?;
        for b in [TokenBudget::default(), budget] {
            let last = &d.turns.last().unwrap().text;
            let got = rerank_external(&d.dialogue_id, last, &texts, &mut scorer, b).map_err(|e| e.to_string())?;
            ensure(as_pairs(&got) == brute_force_external(last, &texts, b), || {
                "rerank_external differs".into()
            })?;

            let per_turn: Vec<_> = d
                .turns
                .iter()
                .map(|t| brute_force_external(&t.text, &texts, b))
                .collect();
            let weight_sets = [
                vec![1.0; d.turns.len()],
                decay(0.5, d.turns.len() as i64, 1, d.turns.len() as i64),
            ];
            for w in weight_sets {
                let params = RrfParams {
                    nu: 60.0,
                    weights: Some(w.clone()),
                };
                let got = ext_fuse(d, &texts, &mut scorer, b, &params).map_err(|e| e.to_string())?;
                let in_process = ext_fuse(d, &texts, &mut OverlapScorer, b, &params).map_err(|e| e.to_string())?;
                let want = rrf_reference(&per_turn, &w, 60.0);
                ensure(as_pairs(&got) == as_pairs(&in_process), || {
                    "piped and in-process scorers differ".into()
                })?;
                same_ranking(&format!("ext_fuse {}", d.dialogue_id), &as_pairs(&got), &want, 1e-15)?;
                compared += 1;
            }
        }
    }

    let queries: Vec<(String, bool)> = bench
        .dialogues
        .iter()
        .map(|d| (d.dialogue_id.clone(), d.grounded))
        .collect();
    let spec = SplitSpec { n_splits: 50, seed: 3 };
    let a = serde_json::to_vec(&make_splits(&queries, spec).unwrap()).unwrap();
    let b = serde_json::to_vec(&make_splits(&queries, spec).unwrap()).unwrap();
    let c = serde_json::to_vec(&make_splits(&queries, SplitSpec { seed: 4, ..spec }).unwrap()).unwrap();
    ensure(a == b, || "same seed gave different splits".into())?;
    ensure(a != c, || "different seeds gave identical splits".into())?;

    let runs = |collection: &Collection| -> Vec<u8> {
        let ranker = InitialRanker::new(collection, collection.analyzer(), InitialRankerParams::default()).unwrap();
        let lists: Vec<RankedList> = ranker
            .rank_all(&bench.dialogues)
            .into_iter()
            .map(Result::unwrap)
            .collect();
        let fused: Vec<RankedList> = bench
            .dialogues
            .iter()
            .zip(&lists)
            .map(|(d, l)| {
                let texts = candidate_texts(l, collection).unwrap();
                ext_fuse(
                    d,
                    &texts,
                    &mut OverlapScorer,
                    TokenBudget::default(),
                    &RrfParams::uniform(60.0),
                )
                .unwrap()
            })
            .collect();
        [run_bytes(&lists), run_bytes(&fused)].concat()
    };
    let first = runs(&collection);
    let rebuilt = Collection::build(bench.docs, AnalyzerConfig::default());
    ensure(first == runs(&rebuilt), || {
        "run files differ between identical invocations".into()
    })?;

    Ok(format!(
        "{compared} fused rankings match brute force; splits and run files byte-identical"
    ))
}

fn map_of(lists: &[RankedList], qrels: &Qrels) -> f64 {
    let per_query = per_query_metrics(lists, qrels).unwrap();
    let ids: Vec<String> = per_query.keys().cloned().collect();
    mean_over(&per_query, &ids, Metric::Map)
}

fn qualitative_echo() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bench = history_heavy_benchmark(&mut rng, 30, 150);
    let collection = Collection::build(bench.docs, AnalyzerConfig::default());
    let analyzer = collection.analyzer();
    let ranker = InitialRanker::new(&collection, analyzer.clone(), InitialRankerParams::default()).unwrap();
    let initial: Vec<RankedList> = ranker
        .rank_all(&bench.dialogues)
        .into_iter()
        .collect::<Result<_, _>>()
        .unwrap();

    let mut lm = Vec::new();
    let mut bm25 = Vec::new();
    let mut fused = Vec::new();
    for (d, l) in bench.dialogues.iter().zip(&initial) {
        lm.push(rerank_lm(d, l, 1000.0, &collection, &analyzer).unwrap());
        bm25.push(rerank_bm25(d, l, Bm25Params::default(), &collection, &analyzer).unwrap());
        let texts = candidate_texts(l, &collection).unwrap();
        let mut scorer: Box<dyn Scorer> = Box::new(OverlapScorer);
        fused.push(
            ext_fuse(
                d,
                &texts,
                &mut scorer,
                TokenBudget::default(),
                &RrfParams::uniform(60.0),
            )
            .unwrap(),
        );
    }
    let [m_init, m_lm, m_bm25, m_fused] = [&initial, &lm, &bm25, &fused].map(|r| map_of(r, &bench.qrels));
    let detail = format!("MAP initial {m_init:.4}, lm {m_lm:.4}, bm25 {m_bm25:.4}, extfuse {m_fused:.4}");
    ensure(m_lm < m_init && m_bm25 < m_init && m_fused > m_init, || detail.clone())?;
    Ok(detail)
}

#[test]
fn acceptance() {
    let results = [
        criterion("formula oracles", Duration::from_secs(1), formula_oracles),
        criterion("pipeline oracle", Duration::from_secs(5), pipeline_oracle),
        criterion("weak-label oracle", Duration::from_secs(5), weak_label_oracle),
        criterion(
            "distribution invariants",
            Duration::from_secs(30),
            distribution_invariants,
        ),
        criterion(
            "permutation calibration",
            Duration::from_secs(60),
            permutation_calibration,
        ),
        criterion(
            "protocol conformance and determinism",
            Duration::from_secs(60),
            protocol_and_determinism,
        ),
        criterion("qualitative echo", Duration::from_secs(60), qualitative_echo),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
