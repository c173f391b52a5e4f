//! Ranked lists and the six-column run format.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Scored items in rank order. Scores are non-increasing; ties are broken
/// by ascending item id; ranks run 1, 2, 3, ...
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub tag: String,
    items: Vec<RankedItem>,
}

impl RankedList {
    /// Sorts `(item_id, score)` pairs into a ranked list. Item ids must be
    /// unique; the first occurrence of a repeated id wins.
    pub fn from_scores<I, S>(query_id: impl Into<String>, tag: impl Into<String>, scores: I) -> RankedList
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut seen = std::collections::HashSet::new();
        let mut items: Vec<RankedItem> = scores
            .into_iter()
            .map(|(id, score)| RankedItem {
                item_id: id.into(),
                // -0.0 + 0.0 == +0.0, so signed zeros tie.
                score: score + 0.0,
                rank: 0,
            })
            .filter(|it| seen.insert(it.item_id.clone()))
            .collect();
        items.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item_id.cmp(&b.item_id)));
        for (i, it) in items.iter_mut().enumerate() {
            it.rank = i + 1;
        }
        RankedList {
            query_id: query_id.into(),
            tag: tag.into(),
            items,
        }
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|it| it.item_id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.items.truncate(k);
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    /// Item id → 1-based rank.
    pub fn rank_map(&self) -> HashMap<&str, usize> {
        self.items.iter().map(|it| (it.item_id.as_str(), it.rank)).collect()
    }

    pub fn write_run<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for it in &self.items {
            writeln!(
                w,
                "{} Q0 {} {} {} {}",
                self.query_id, it.item_id, it.rank, it.score, self.tag
            )?;
        }
        Ok(())
    }
}

pub fn write_run<'a, W, I>(lists: I, mut w: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RankedList>,
{
    for list in lists {
        list.write_run(&mut w)?;
    }
    w.flush()
}

/// Reads a run file. Lists come back in order of first appearance; items
/// within a list are ordered by the rank column.
pub fn read_run<R: BufRead>(reader: R) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut lists: HashMap<String, (String, Vec<(usize, String, f64)>)> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Malformed {
            line: line_no,
            field: "<line>".into(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::Malformed {
                line: line_no,
                field: "<columns>".into(),
                message: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let rank: usize = cols[3].parse().map_err(|_| Error::Malformed {
            line: line_no,
            field: "rank".into(),
            message: cols[3].into(),
        })?;
        let score: f64 = cols[4].parse().map_err(|_| Error::Malformed {
            line: line_no,
            field: "score".into(),
            message: cols[4].into(),
        })?;
        let entry = lists.entry(cols[0].to_owned()).or_insert_with(|| {
            order.push(cols[0].to_owned());
            (cols[5].to_owned(), Vec::new())
        });
        entry.1.push((rank, cols[2].to_owned(), score));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let (tag, mut rows) = lists.remove(&q).unwrap_or_default();
            rows.sort_by_key(|r| r.0);
            let items = rows
                .into_iter()
                .enumerate()
                .map(|(i, (_, item_id, score))| RankedItem {
                    item_id,
                    score,
                    rank: i + 1,
                })
                .collect();
            RankedList {
                query_id: q,
                tag,
                items,
            }
        })
        .collect())
}
