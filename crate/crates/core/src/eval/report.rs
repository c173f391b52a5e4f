//! Mean ± std tables and test-set statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Metric, Qrels};
use crate::dialogue::Dialogue;
use crate::ranked::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Grounded,
    Ungrounded,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Grounded => "grounded",
            Subset::Ungrounded => "ungrounded",
        }
    }

    pub fn admits(self, grounded: bool) -> bool {
        match self {
            Subset::All => true,
            Subset::Grounded => grounded,
            Subset::Ungrounded => !grounded,
        }
    }
}

/// Mean and sample standard deviation (`n - 1`); std is 0 for one value.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One machine-readable report record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub system: String,
    pub metric: Metric,
    pub subset: Subset,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn new(system: impl Into<String>, metric: Metric, subset: Subset, per_split: &[f64]) -> Self {
        let (mean, std) = summarize(per_split);
        MetricSummary {
            system: system.into(),
            metric,
            subset,
            mean,
            std,
            n: per_split.len(),
        }
    }
}

/// Aligned text table: one row per system, one `mean ± std` column per
/// (subset, metric) present. Systems keep first-appearance order.
pub fn format_table(rows: &[MetricSummary]) -> String {
    let mut systems: Vec<&str> = Vec::new();
    let mut columns: Vec<(Subset, Metric)> = Vec::new();
    let mut cells: BTreeMap<(&str, Subset, Metric), String> = BTreeMap::new();
    for r in rows {
        if !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
        if !columns.contains(&(r.subset, r.metric)) {
            columns.push((r.subset, r.metric));
        }
        cells.insert((&r.system, r.subset, r.metric), format!("{:.4} ± {:.4}", r.mean, r.std));
    }
    columns.sort();

    let header: Vec<String> = std::iter::once("system".to_owned())
        .chain(columns.iter().map(|(s, m)| {
            if *s == Subset::All {
                m.name().to_owned()
            } else {
                format!("{} {}", m.name(), s.name())
            }
        }))
        .collect();
    let body: Vec<Vec<String>> = systems
        .iter()
        .map(|sys| {
            std::iter::once(sys.to_string())
                .chain(
                    columns
                        .iter()
                        .map(|(s, m)| cells.get(&(*sys, *s, *m)).cloned().unwrap_or_else(|| "-".into())),
                )
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|row| row[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&body) {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                let pad = w - cell.chars().count();
                if c == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Distribution> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = summarize(values);
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len().is_multiple_of(2) {
            (v[mid - 1] + v[mid]) / 2.0
        } else {
            v[mid]
        };
        Some(Distribution {
            n: values.len(),
            mean,
            median,
            std,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStats {
    pub dialogues: usize,
    pub relevant: Option<Distribution>,
    /// Rank of the first relevant item in the run, over dialogues where one
    /// was retrieved.
    pub first_relevant_rank: Option<Distribution>,
}

/// Per dialogue type: relevant-count and first-relevant-rank statistics.
pub type DatasetStats = BTreeMap<Subset, SubsetStats>;

/// Statistics of a judged test set. Types with no dialogue are omitted.
pub fn dataset_stats(dialogues: &[Dialogue], qrels: &Qrels, runs: &[RankedList]) -> DatasetStats {
    let by_id: BTreeMap<&str, &RankedList> = runs.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut out = DatasetStats::new();
    for subset in [Subset::All, Subset::Grounded, Subset::Ungrounded] {
        let chosen: Vec<&Dialogue> = dialogues.iter().filter(|d| subset.admits(d.grounded)).collect();
        if chosen.is_empty() {
            continue;
        }
        let counts: Vec<f64> = chosen
            .iter()
            .map(|d| qrels.relevant_count(&d.dialogue_id) as f64)
            .collect();
        let firsts: Vec<f64> = chosen
            .iter()
            .filter_map(|d| {
                let run = by_id.get(d.dialogue_id.as_str())?;
                qrels.relevant_ranks(run, &d.dialogue_id).first().map(|&r| r as f64)
            })
            .collect();
        out.insert(
            subset,
            SubsetStats {
                dialogues: chosen.len(),
                relevant: Distribution::of(&counts),
                first_relevant_rank: Distribution::of(&firsts),
            },
        );
    }
    out
}
