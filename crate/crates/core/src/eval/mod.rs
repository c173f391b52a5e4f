//! Relevance judgments, ranking metrics and the experiment protocol around
//! them: repeated stratified splits, paired randomization tests, grid
//! search and mean ± std reporting.

mod report;
mod stats;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranked::RankedList;

pub use report::{dataset_stats, format_table, summarize, DatasetStats, Distribution, MetricSummary, Subset};
pub use stats::{
    bm25_grid, bonferroni, dirichlet_grid, make_splits, permutation_test, significance, tune, PairResult,
    PermutationParams, SignificanceReport, Split, SplitSpec,
};

/// Binary judgments, `query → item → relevant`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, bool>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: impl Into<String>, item_id: impl Into<String>, relevant: bool) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(item_id.into(), relevant);
    }

    /// Reads `query_id 0 item_id rel` lines; `rel` must be 0 or 1.
    pub fn read<R: BufRead>(reader: R) -> Result<Qrels> {
        let mut q = Qrels::default();
        for (i, line) in reader.lines().enumerate() {
            let malformed = |field: &str, message: String| Error::Malformed {
                line: i + 1,
                field: field.into(),
                message,
            };
            let line = line.map_err(|e| malformed("<line>", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(malformed("<line>", format!("expected 4 columns, found {}", cols.len())));
            }
            let rel = match cols[3] {
                "0" => false,
                "1" => true,
                other => return Err(malformed("rel", format!("`{other}` is not 0 or 1"))),
            };
            q.insert(cols[0], cols[2], rel);
        }
        Ok(q)
    }

    pub fn load(path: &Path) -> Result<Qrels> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Qrels::read(std::io::BufReader::new(f))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (q, items) in &self.judgments {
            for (item, rel) in items {
                writeln!(w, "{q} 0 {item} {}", u8::from(*rel))?;
            }
        }
        Ok(())
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn is_relevant(&self, query_id: &str, item_id: &str) -> bool {
        self.judgments
            .get(query_id)
            .and_then(|m| m.get(item_id))
            .copied()
            .unwrap_or(false)
    }

    /// Relevant items in the judged pool of a query.
    pub fn relevant_count(&self, query_id: &str) -> usize {
        self.judgments
            .get(query_id)
            .map_or(0, |m| m.values().filter(|r| **r).count())
    }

    pub fn judged_count(&self, query_id: &str) -> usize {
        self.judgments.get(query_id).map_or(0, BTreeMap::len)
    }

    fn require_relevant(&self, query_id: &str) -> Result<usize> {
        match self.relevant_count(query_id) {
            0 => Err(Error::NoRelevant(query_id.to_owned())),
            r => Ok(r),
        }
    }

    /// 1-based ranks of the relevant items in `run`.
    pub fn relevant_ranks(&self, run: &RankedList, query_id: &str) -> Vec<usize> {
        run.items()
            .iter()
            .filter(|it| self.is_relevant(query_id, &it.item_id))
            .map(|it| it.rank)
            .collect()
    }
}

/// `(1/R) Σ_{relevant at rank r} precision@r`, `R` counted in the judged
/// pool.
pub fn average_precision(run: &RankedList, qrels: &Qrels, query_id: &str) -> Result<f64> {
    let r = qrels.require_relevant(query_id)?;
    let sum: f64 = qrels
        .relevant_ranks(run, query_id)
        .iter()
        .enumerate()
        .map(|(hits, &rank)| (hits + 1) as f64 / rank as f64)
        .sum();
    Ok(sum / r as f64)
}

/// Binary-gain NDCG with discount `log2(i + 1)`.
pub fn ndcg_at_k(run: &RankedList, qrels: &Qrels, query_id: &str, k: usize) -> Result<f64> {
    let r = qrels.require_relevant(query_id)?;
    let discount = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let dcg: f64 = qrels
        .relevant_ranks(run, query_id)
        .into_iter()
        .filter(|&rank| rank <= k)
        .map(discount)
        .sum();
    let ideal: f64 = (1..=r.min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

/// Reciprocal rank of the first relevant item; 0 when none is retrieved.
pub fn mrr(run: &RankedList, qrels: &Qrels, query_id: &str) -> Result<f64> {
    qrels.require_relevant(query_id)?;
    Ok(qrels
        .relevant_ranks(run, query_id)
        .first()
        .map_or(0.0, |&rank| 1.0 / rank as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Map,
    Ndcg5,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Map, Metric::Ndcg5, Metric::Mrr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Map => "MAP",
            Metric::Ndcg5 => "NDCG@5",
            Metric::Mrr => "MRR",
        }
    }

    pub fn compute(self, run: &RankedList, qrels: &Qrels, query_id: &str) -> Result<f64> {
        match self {
            Metric::Map => average_precision(run, qrels, query_id),
            Metric::Ndcg5 => ndcg_at_k(run, qrels, query_id, 5),
            Metric::Mrr => mrr(run, qrels, query_id),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        match s.to_ascii_lowercase().as_str() {
            "map" => Ok(Metric::Map),
            "ndcg5" | "ndcg@5" | "ndcg" => Ok(Metric::Ndcg5),
            "mrr" => Ok(Metric::Mrr),
            _ => Err(Error::invalid("metric", format!("unknown metric `{s}`"))),
        }
    }
}

/// Metric values per query id.
pub type PerQuery = BTreeMap<String, [f64; 3]>;

/// Scores every judged query with a relevant item. A query missing from
/// `runs` scores 0 on every metric.
pub fn per_query_metrics(runs: &[RankedList], qrels: &Qrels) -> Result<PerQuery> {
    let by_id: BTreeMap<&str, &RankedList> = runs.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let empty = RankedList::default();
    let mut out = PerQuery::new();
    for q in qrels.queries() {
        if qrels.relevant_count(q) == 0 {
            continue;
        }
        let run = by_id.get(q).copied().unwrap_or(&empty);
        let mut vals = [0.0; 3];
        for (v, m) in vals.iter_mut().zip(Metric::ALL) {
            *v = m.compute(run, qrels, q)?;
        }
        out.insert(q.to_owned(), vals);
    }
    Ok(out)
}

/// Mean of `metric` over `ids`; ids without a value count as 0.
pub fn mean_over(per_query: &PerQuery, ids: &[String], metric: Metric) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let idx = Metric::ALL.iter().position(|m| *m == metric).expect("listed");
    ids.iter()
        .map(|q| per_query.get(q).map_or(0.0, |v| v[idx]))
        .sum::<f64>()
        / ids.len() as f64
}

/// Per-split test-half means of `metric`, keeping only queries that pass
/// `keep`. A split whose kept test half is empty yields 0.
pub fn per_split_values(
    per_query: &PerQuery,
    splits: &[Split],
    metric: Metric,
    keep: impl Fn(&str) -> bool,
) -> Vec<f64> {
    splits
        .iter()
        .map(|s| {
            let ids: Vec<String> = s.test.iter().filter(|q| keep(q)).cloned().collect();
            mean_over(per_query, &ids, metric)
        })
        .collect()
}
