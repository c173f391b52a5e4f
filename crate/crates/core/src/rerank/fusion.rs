//! Reciprocal rank fusion.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ranked::RankedList;

#[derive(Debug, Clone, PartialEq)]
pub struct RrfParams {
    pub nu: f64,
    /// Per-list weights; `None` means uniform 1.0.
    pub weights: Option<Vec<f64>>,
}

impl Default for RrfParams {
    fn default() -> Self {
        RrfParams {
            nu: 60.0,
            weights: None,
        }
    }
}

impl RrfParams {
    pub fn uniform(nu: f64) -> Self {
        RrfParams { nu, weights: None }
    }
}

/// `score(s) = Σ_i w_i / (ν + rank(L_i, s))`; an item absent from a list
/// gets nothing from it.
pub fn rrf(lists: &[&RankedList], params: &RrfParams) -> Result<RankedList> {
    let first = lists.first().ok_or(Error::EmptyList)?;
    if !(params.nu > 0.0) {
        return Err(Error::invalid("nu", "must be positive"));
    }
    let weights = match &params.weights {
        Some(w) if w.len() != lists.len() => return Err(Error::LengthMismatch(w.len(), lists.len())),
        Some(w) if w.iter().any(|&x| !(x >= 0.0)) || w.iter().all(|&x| x == 0.0) => {
            return Err(Error::invalid("weights", "must be non-negative and not all zero"))
        }
        Some(w) => w.clone(),
        None => vec![1.0; lists.len()],
    };
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for (list, w) in lists.iter().zip(&weights) {
        for it in list.items() {
            *scores.entry(it.item_id.as_str()).or_default() += w / (params.nu + it.rank as f64);
        }
    }
    Ok(RankedList::from_scores(first.query_id.clone(), "rrf", scores))
}
