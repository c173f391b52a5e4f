//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use tracing::{info, warn};

use sentret::corpus::{ingest_corpus, Collection};
use sentret::dialogue::{
    distill_test_dialogues, enrich_first_turn, in_date_range, load_dialogues, load_threads,
    select_training_conversations, write_dialogues, Blocklist, Dialogue, DropReason, TestFilter, Thread,
};
use sentret::eval::{
    bm25_grid, dirichlet_grid, format_table, make_splits, mean_over, per_query_metrics, per_split_values,
    significance as sig_test, tune as tune_grid, Metric, MetricSummary, PerQuery, Qrels, Split, Subset,
};
use sentret::ranked::{read_run, write_run};
use sentret::rerank::{
    candidate_texts, ext_fuse, rerank_bm25, rerank_external, rerank_lm, rrf, Embedder, HashEmbedder, OverlapScorer,
    ProcessEmbedder, ProcessScorer, Scorer,
};
use sentret::retrieval::InitialRanker;
use sentret::weaklabel::build_training_set;
use sentret::{Error, RankedList};

use crate::config::Config;

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        anyhow!(
            "missing {key} path: pass --{} or set `{key}` in the config file",
            key.replace('_', "-")
        )
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_collection(config: &Config) -> Result<Collection> {
    let path = require(&config.index, "index")?;
    let collection =
        Collection::read_index(open(path)?).with_context(|| format!("reading index {}", path.display()))?;
    info!(
        docs = collection.corpus.doc_count(),
        sentences = collection.corpus.sentence_count(),
        "loaded index"
    );
    Ok(collection)
}

fn load_run(path: &Path) -> Result<Vec<RankedList>> {
    read_run(open(path)?).with_context(|| format!("reading run {}", path.display()))
}

fn save_run(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut w = create(path)?;
    write_run(lists, &mut w)?;
    w.flush()?;
    Ok(())
}

fn parse_weights(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|w| w.trim().parse::<f64>().map_err(|e| anyhow!("bad weight `{w}`: {e}")))
        .collect()
}

/// Splits a command line on whitespace; no shell quoting.
fn command(line: &str) -> Result<Command> {
    let mut parts = line.split_whitespace();
    let program = parts.next().ok_or_else(|| anyhow!("empty command"))?;
    let mut cmd = Command::new(program);
    cmd.args(parts);
    Ok(cmd)
}

fn load_filtered_threads(config: &Config, from: Option<&str>, to: Option<&str>) -> Result<Vec<Thread>> {
    let path = require(&config.threads, "threads")?;
    let threads = load_threads(path)?;
    let total = threads.len();
    let kept: Vec<Thread> = threads
        .into_iter()
        .filter(|t| in_date_range(t, from, to))
        .map(enrich_first_turn)
        .collect();
    info!(total, in_range = kept.len(), "loaded threads");
    Ok(kept)
}

pub fn index(config: &Config, out: &Path) -> Result<()> {
    let corpus = require(&config.corpus, "corpus")?;
    let collection = ingest_corpus(corpus, config.analyzer()?)?;
    let mut w = create(out)?;
    collection.write_index(&mut w)?;
    w.flush()?;
    info!(
        docs = collection.corpus.doc_count(),
        sentences = collection.corpus.sentence_count(),
        vocabulary = collection.stats.vocab_len(),
        "index written to {}",
        out.display()
    );
    Ok(())
}

pub fn distill(config: &Config, train: bool, out: &Path, from: Option<&str>, to: Option<&str>) -> Result<()> {
    let threads = load_filtered_threads(config, from, to)?;
    let dialogues = if train {
        let collection = load_collection(config)?;
        let convs = select_training_conversations(threads, |l| collection.corpus.has_section(&l.doc_id, &l.section_id));
        info!(conversations = convs.len(), "selected training conversations");
        convs
    } else {
        let (dialogues, report) = distill_test_dialogues(threads);
        let blocklist = match &config.blocklist {
            Some(p) => Blocklist::load(p)?,
            None => Blocklist::new(Vec::<String>::new()),
        };
        let mut filter = TestFilter::new(sentret::corpus::Analyzer::new(config.analyzer()?), blocklist);
        filter.min_tokens = config.min_tokens;
        filter.max_tokens = config.max_tokens;
        let mut dropped: BTreeMap<DropReason, usize> = BTreeMap::new();
        let kept: Vec<Dialogue> = dialogues
            .into_iter()
            .filter(|d| match filter.apply(d) {
                None => true,
                Some(r) => {
                    *dropped.entry(r).or_default() += 1;
                    false
                }
            })
            .map(|d| Dialogue { target: None, ..d })
            .collect();
        info!(
            distilled = report.kept,
            too_few_turns = report.too_few_turns,
            not_interleaved = report.not_interleaved,
            kept = kept.len(),
            "dropped by filter: {dropped:?}"
        );
        kept
    };
    let mut w = create(out)?;
    write_dialogues(&dialogues, &mut w)?;
    w.flush()?;
    Ok(())
}

fn skip_empty<T>(id: &str, result: sentret::Result<T>) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyQuery) => {
            warn!(dialogue = id, "no usable query terms; skipped");
            Ok(None)
        }
        Err(e) => Err(anyhow!(e).context(format!("dialogue {id}"))),
    }
}

pub fn retrieve(config: &Config, dialogues: &Path, out: &Path) -> Result<()> {
    let collection = load_collection(config)?;
    let dialogues = load_dialogues(dialogues)?;
    let ranker = InitialRanker::new(&collection, collection.analyzer(), config.ranker())?;
    let mut lists = Vec::with_capacity(dialogues.len());
    for (d, result) in dialogues.iter().zip(ranker.rank_all(&dialogues)) {
        if let Some(list) = skip_empty(&d.dialogue_id, result)? {
            lists.push(list);
        }
    }
    info!(dialogues = dialogues.len(), ranked = lists.len(), "retrieval done");
    save_run(out, &lists)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lm,
    Bm25,
    External,
    ExtFuse,
}

pub struct RerankRequest<'a> {
    pub method: Method,
    pub dialogues: &'a Path,
    pub run: &'a Path,
    pub out: &'a Path,
    pub scorer_cmd: Option<&'a str>,
    pub queries: Option<&'a Path>,
    pub weights: Option<&'a str>,
}

fn open_scorer(config: &Config, cmd: Option<&str>) -> Result<Box<dyn Scorer>> {
    Ok(match cmd {
        Some(c) => Box::new(
            ProcessScorer::spawn(&mut command(c)?, config.timeout()).with_context(|| format!("starting `{c}`"))?,
        ),
        None => {
            info!("no scorer command given; using the built-in lexical overlap scorer");
            Box::new(OverlapScorer)
        }
    })
}

fn load_queries(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, q) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected `id<TAB>query`", path.display(), i + 1))?;
        out.insert(id.to_owned(), q.to_owned());
    }
    Ok(out)
}

pub fn rerank(config: &Config, req: RerankRequest<'_>) -> Result<()> {
    let collection = load_collection(config)?;
    let analyzer = collection.analyzer();
    let dialogues: HashMap<String, Dialogue> = load_dialogues(req.dialogues)?
        .into_iter()
        .map(|d| (d.dialogue_id.clone(), d))
        .collect();
    let candidates = load_run(req.run)?;
    let queries = req.queries.map(load_queries).transpose()?;
    if queries.is_some() && req.method != Method::External {
        bail!("--queries only applies to --method external");
    }
    let weights = req.weights.map(parse_weights).transpose()?;
    let mut scorer = match req.method {
        Method::External | Method::ExtFuse => Some(open_scorer(config, req.scorer_cmd)?),
        _ => None,
    };
    let budget = config.rerank_budget();

    let mut out = Vec::with_capacity(candidates.len());
    for list in &candidates {
        let id = list.query_id.as_str();
        let Some(d) = dialogues.get(id) else {
            warn!(query = id, "run query has no dialogue; skipped");
            continue;
        };
        let result = match req.method {
            Method::Lm => rerank_lm(d, list, config.mu, &collection, &analyzer),
            Method::Bm25 => rerank_bm25(d, list, config.bm25(), &collection, &analyzer),
            Method::External => {
                let query = match queries.as_ref().and_then(|q| q.get(id)) {
                    Some(q) => q.clone(),
                    None => d.last_turn().map(|t| t.text.clone()).unwrap_or_default(),
                };
                candidate_texts(list, &collection).and_then(|texts| {
                    rerank_external(id, &query, &texts, scorer.as_deref_mut().expect("opened"), budget)
                })
            }
            Method::ExtFuse => candidate_texts(list, &collection).and_then(|texts| {
                ext_fuse(
                    d,
                    &texts,
                    scorer.as_deref_mut().expect("opened"),
                    budget,
                    &config.rrf(weights.clone()),
                )
            }),
        };
        if let Some(l) = skip_empty(id, result)? {
            out.push(l);
        }
    }
    info!(lists = out.len(), "rerank done");
    save_run(req.out, &out)
}

pub fn fuse(config: &Config, runs: &[PathBuf], weights: Option<&str>, out: &Path) -> Result<()> {
    let weights = weights.map(parse_weights).transpose()?;
    if let Some(w) = &weights {
        if w.len() != runs.len() {
            bail!("{} weights for {} runs", w.len(), runs.len());
        }
    }
    let loaded: Vec<HashMap<String, RankedList>> = runs
        .iter()
        .map(|p| Ok(load_run(p)?.into_iter().map(|l| (l.query_id.clone(), l)).collect()))
        .collect::<Result<_>>()?;
    let mut order: Vec<String> = Vec::new();
    for p in runs {
        for l in load_run(p)? {
            if !order.contains(&l.query_id) {
                order.push(l.query_id);
            }
        }
    }
    let mut fused = Vec::with_capacity(order.len());
    for q in &order {
        let mut lists = Vec::new();
        let mut w = Vec::new();
        for (i, run) in loaded.iter().enumerate() {
            if let Some(l) = run.get(q) {
                lists.push(l);
                w.push(weights.as_ref().map_or(1.0, |ws| ws[i]));
            }
        }
        let params = config.rrf(Some(w));
        fused.push(rrf(&lists, &params)?);
    }
    save_run(out, &fused)
}

pub fn weaklabel(
    config: &Config,
    out: &Path,
    scorer_cmd: Option<&str>,
    embedder_cmd: Option<&str>,
    from: Option<&str>,
    to: Option<&str>,
) -> Result<()> {
    let collection = load_collection(config)?;
    let threads = load_filtered_threads(config, from, to)?;
    let convs = select_training_conversations(threads, |l| collection.corpus.has_section(&l.doc_id, &l.section_id));
    info!(conversations = convs.len(), "selected training conversations");
    if scorer_cmd.is_none() {
        info!("no scorer command given; using the built-in lexical overlap scorer");
    }
    if embedder_cmd.is_none() {
        info!("no embedder command given; using the built-in hashing embedder");
    }
    let timeout = config.timeout();
    let make = || -> sentret::Result<(Box<dyn Scorer>, Box<dyn Embedder>)> {
        let scorer: Box<dyn Scorer> = match scorer_cmd {
            Some(c) => Box::new(ProcessScorer::spawn(
                &mut command(c).map_err(|e| Error::Protocol(e.to_string()))?,
                timeout,
            )?),
            None => Box::new(OverlapScorer),
        };
        let embedder: Box<dyn Embedder> = match embedder_cmd {
            Some(c) => Box::new(ProcessEmbedder::spawn(
                &mut command(c).map_err(|e| Error::Protocol(e.to_string()))?,
                timeout,
            )?),
            None => Box::new(HashEmbedder::default()),
        };
        Ok((scorer, embedder))
    };
    let (records, report) =
        build_training_set(&convs, &collection, &collection.analyzer(), &config.weak_label(), make)?;
    let mut w = create(out)?;
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    info!("weak labeling report: {}", serde_json::to_string(&report)?);
    if report.failed > 0 {
        bail!(
            "{} of {} conversations failed; their errors are logged above",
            report.failed,
            report.conversations
        );
    }
    Ok(())
}

fn named_runs(specs: &[String]) -> Result<Vec<(String, Vec<RankedList>)>> {
    specs
        .iter()
        .map(|s| {
            let (name, path) = match s.split_once('=') {
                Some((n, p)) if !n.is_empty() => (n.to_owned(), PathBuf::from(p)),
                _ => {
                    let p = PathBuf::from(s);
                    let n = p
                        .file_stem()
                        .map(|x| x.to_string_lossy().into_owned())
                        .unwrap_or_else(|| s.clone());
                    (n, p)
                }
            };
            Ok((name, load_run(&path)?))
        })
        .collect()
}

/// Judged queries with their grounded flag; flags default to false when no
/// dialogues are given.
fn strata(qrels: &Qrels, dialogues: Option<&Path>) -> Result<Vec<(String, bool)>> {
    let grounded: HashMap<String, bool> = match dialogues {
        Some(p) => load_dialogues(p)?
            .into_iter()
            .map(|d| (d.dialogue_id, d.grounded))
            .collect(),
        None => HashMap::new(),
    };
    Ok(qrels
        .queries()
        .filter(|q| qrels.relevant_count(q) > 0)
        .map(|q| (q.to_owned(), grounded.get(q).copied().unwrap_or(false)))
        .collect())
}

fn splits_for(config: &Config, queries: &[(String, bool)], single: bool) -> Result<Vec<Split>> {
    if single {
        return Ok(vec![Split {
            validation: Vec::new(),
            test: queries.iter().map(|(q, _)| q.clone()).collect(),
        }]);
    }
    Ok(make_splits(queries, config.splits())?)
}

fn subsets(queries: &[(String, bool)], breakdown: bool) -> Vec<Subset> {
    let g = queries.iter().filter(|(_, x)| *x).count();
    if breakdown && g > 0 && g < queries.len() {
        vec![Subset::All, Subset::Grounded, Subset::Ungrounded]
    } else {
        vec![Subset::All]
    }
}

fn write_json_lines<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn evaluate(
    config: &Config,
    qrels: &Path,
    runs: &[String],
    dialogues: Option<&Path>,
    no_splits: bool,
    json: Option<&Path>,
) -> Result<()> {
    let qrels = Qrels::load(qrels)?;
    let queries = strata(&qrels, dialogues)?;
    let splits = splits_for(config, &queries, no_splits)?;
    let grounded: HashMap<&str, bool> = queries.iter().map(|(q, g)| (q.as_str(), *g)).collect();
    let mut rows = Vec::new();
    for (name, lists) in named_runs(runs)? {
        let pq = per_query_metrics(&lists, &qrels)?;
        for subset in subsets(&queries, dialogues.is_some()) {
            for metric in Metric::ALL {
                let values = per_split_values(&pq, &splits, metric, |q| {
                    subset.admits(grounded.get(q).copied().unwrap_or(false))
                });
                rows.push(MetricSummary::new(name.clone(), metric, subset, &values));
            }
        }
    }
    emit(&format_table(&rows))?;
    if let Some(path) = json {
        write_json_lines(path, &rows)?;
    }
    Ok(())
}

pub fn tune(
    config: &Config,
    bm25: bool,
    dialogues: &Path,
    run: &Path,
    qrels_path: &Path,
    json: Option<&Path>,
) -> Result<()> {
    let collection = load_collection(config)?;
    let analyzer = collection.analyzer();
    let dialogue_list = load_dialogues(dialogues)?;
    let by_id: HashMap<&str, &Dialogue> = dialogue_list.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();
    let candidates = load_run(run)?;
    let qrels = Qrels::load(qrels_path)?;
    let queries = strata(&qrels, Some(dialogues))?;
    let splits = make_splits(&queries, config.splits())?;

    let grid: Vec<serde_json::Value> = if bm25 {
        bm25_grid().iter().map(|p| json!({ "k1": p.k1, "b": p.b })).collect()
    } else {
        dirichlet_grid().iter().map(|mu| json!({ "mu": mu })).collect()
    };
    let mut per_point: Vec<PerQuery> = Vec::with_capacity(grid.len());
    for point in &grid {
        let mut lists = Vec::new();
        for list in &candidates {
            let Some(d) = by_id.get(list.query_id.as_str()) else {
                continue;
            };
            let result = if bm25 {
                let params = sentret::rerank::Bm25Params {
                    k1: point["k1"].as_f64().expect("grid"),
                    b: point["b"].as_f64().expect("grid"),
                };
                rerank_bm25(d, list, params, &collection, &analyzer)
            } else {
                rerank_lm(d, list, point["mu"].as_f64().expect("grid"), &collection, &analyzer)
            };
            if let Some(l) = skip_empty(&list.query_id, result)? {
                lists.push(l);
            }
        }
        per_point.push(per_query_metrics(&lists, &qrels)?);
    }

    let indices: Vec<usize> = (0..grid.len()).collect();
    let mut records = Vec::new();
    let mut test_values: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
    for (j, split) in splits.iter().enumerate() {
        let (best, validation_map) = tune_grid(&indices, |&i| {
            Ok(mean_over(&per_point[i], &split.validation, Metric::Map))
        })?;
        let mut test = serde_json::Map::new();
        for metric in Metric::ALL {
            let v = mean_over(&per_point[best], &split.test, metric);
            test_values.entry(metric).or_default().push(v);
            test.insert(format!("{metric:?}").to_lowercase(), json!(v));
        }
        records.push(json!({
            "split": j,
            "params": grid[best],
            "validation_map": validation_map,
            "test": test,
        }));
    }
    let name = if bm25 { "bm25-tuned" } else { "lm-tuned" };
    let rows: Vec<MetricSummary> = test_values
        .iter()
        .map(|(m, v)| MetricSummary::new(name, *m, Subset::All, v))
        .collect();
    emit(&format_table(&rows))?;
    if let Some(path) = json {
        write_json_lines(path, &records)?;
    }
    Ok(())
}

pub fn significance(
    config: &Config,
    qrels: &Path,
    runs: &[String],
    dialogues: Option<&Path>,
    baseline: Option<&str>,
    metric: &str,
    json: Option<&Path>,
) -> Result<()> {
    let metric: Metric = metric.parse()?;
    let qrels = Qrels::load(qrels)?;
    let queries = strata(&qrels, dialogues)?;
    let splits = make_splits(&queries, config.splits())?;
    let runs = named_runs(runs)?;
    let mut systems = BTreeMap::new();
    for (name, lists) in &runs {
        let pq = per_query_metrics(lists, &qrels)?;
        systems.insert(name.clone(), per_split_values(&pq, &splits, metric, |_| true));
    }
    let names: Vec<&String> = runs.iter().map(|(n, _)| n).collect();
    let pairs: Vec<(String, String)> = match baseline {
        Some(b) => {
            if !systems.contains_key(b) {
                bail!("baseline `{b}` is not among the runs");
            }
            names
                .iter()
                .filter(|n| n.as_str() != b)
                .map(|n| (b.to_owned(), (*n).clone()))
                .collect()
        }
        None => names
            .iter()
            .enumerate()
            .flat_map(|(i, a)| names[i + 1..].iter().map(move |b| ((*a).clone(), (*b).clone())))
            .collect(),
    };
    let report = sig_test(&systems, &pairs, config.permutations(), config.alpha)?;
    let mut text = format!(
        "{} over {} splits, {} comparisons, alpha {}\n",
        metric.name(),
        splits.len(),
        report.comparisons,
        report.alpha
    );
    for p in &report.pairs {
        let _ = writeln!(
            text,
            "{} vs {}: diff {:+.4}  p {:.4}  p_adj {:.4}{}",
            p.system_a,
            p.system_b,
            p.mean_diff,
            p.p_raw,
            p.p_adjusted,
            if p.reject { "  *" } else { "" }
        );
    }
    emit(&text)?;
    if let Some(path) = json {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn stats(dialogues: &Path, qrels: &Path, run: Option<&Path>) -> Result<()> {
    let dialogues = load_dialogues(dialogues)?;
    let qrels = Qrels::load(qrels)?;
    let runs = run.map(load_run).transpose()?.unwrap_or_default();
    let stats = sentret::eval::dataset_stats(&dialogues, &qrels, &runs);
    emit(&(serde_json::to_string_pretty(&stats)? + "\n"))?;
    Ok(())
}
