//! Unigram language models: maximum-likelihood estimates, Dirichlet
//! smoothing, cross entropy, exponential decay weights and the dialogue
//! mixture models built from them.
//!
//! Logs are natural throughout.

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::corpus::CollectionStats;
use crate::error::{Error, Result};

/// A sparse probability distribution over terms. Every stored probability
/// is strictly positive and the total is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDist<K = String> {
    probs: BTreeMap<K, f64>,
}

impl<K: Ord + Clone> TermDist<K> {
    /// Maximum-likelihood estimate `count(w) / len`.
    pub fn mle<'a, I>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a K>,
        K: 'a,
    {
        let mut counts: BTreeMap<K, f64> = BTreeMap::new();
        let mut len = 0usize;
        for t in tokens {
            *counts.entry(t.clone()).or_default() += 1.0;
            len += 1;
        }
        if len == 0 {
            return Err(Error::EmptyText);
        }
        let len = len as f64;
        counts.values_mut().for_each(|c| *c /= len);
        Ok(TermDist { probs: counts })
    }

    /// Normalizes non-negative weights. Zero weights are dropped.
    pub fn from_weights<I: IntoIterator<Item = (K, f64)>>(weights: I) -> Result<Self> {
        let mut probs: BTreeMap<K, f64> = BTreeMap::new();
        for (k, w) in weights {
            if w > 0.0 {
                *probs.entry(k).or_default() += w;
            }
        }
        let total: f64 = probs.values().sum();
        if probs.is_empty() || !total.is_finite() {
            return Err(Error::EmptyText);
        }
        probs.values_mut().for_each(|p| *p /= total);
        Ok(TermDist { probs })
    }

    /// Weighted sum of component distributions. Missing components (empty
    /// turns) are dropped and the remaining weights renormalized; if the
    /// remaining weights are all zero they are treated as uniform.
    pub fn mixture(components: &[(f64, Option<&TermDist<K>>)]) -> Result<Self> {
        let present: Vec<(f64, &TermDist<K>)> = components.iter().filter_map(|&(w, d)| d.map(|d| (w, d))).collect();
        if present.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let total: f64 = present.iter().map(|(w, _)| w).sum();
        let uniform = 1.0 / present.len() as f64;
        let mut probs: BTreeMap<K, f64> = BTreeMap::new();
        for (w, d) in &present {
            let w = if total > 0.0 { w / total } else { uniform };
            if w == 0.0 {
                continue;
            }
            for (k, p) in &d.probs {
                *probs.entry(k.clone()).or_default() += w * p;
            }
        }
        Ok(TermDist { probs })
    }

    pub fn get(&self, term: &K) -> f64 {
        self.probs.get(term).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> {
        self.probs.iter().map(|(k, &p)| (k, p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.values().map(|p| p * p.ln()).sum::<f64>()
    }

    /// Re-keys the distribution, dropping terms `f` maps to `None` and
    /// renormalizing. Fails when nothing survives.
    pub fn restrict<J: Ord + Clone>(&self, mut f: impl FnMut(&K) -> Option<J>) -> Result<TermDist<J>> {
        TermDist::from_weights(self.probs.iter().filter_map(|(k, &p)| f(k).map(|j| (j, p))))
    }
}

/// `(c + mu * p_c) / (len + mu)`.
pub fn dirichlet_prob(count: u32, len: u32, mu: f64, p_collection: f64) -> Result<f64> {
    if mu < 0.0 {
        return Err(Error::invalid("mu", "must be non-negative"));
    }
    if mu == 0.0 && len == 0 {
        return Err(Error::invalid("mu", "zero pseudo-count with empty text"));
    }
    Ok((f64::from(count) + mu * p_collection) / (f64::from(len) + mu))
}

/// A Dirichlet-smoothed language model of one text, over surface terms.
#[derive(Debug, Clone)]
pub struct DirichletLm<'a> {
    counts: BTreeMap<String, u32>,
    len: u32,
    mu: f64,
    stats: &'a CollectionStats,
}

impl<'a> DirichletLm<'a> {
    pub fn new(tokens: &[String], mu: f64, stats: &'a CollectionStats) -> Result<Self> {
        if stats.total_terms == 0 {
            return Err(Error::EmptyCollection);
        }
        if mu < 0.0 {
            return Err(Error::invalid("mu", "must be non-negative"));
        }
        if mu == 0.0 && tokens.is_empty() {
            return Err(Error::invalid("mu", "zero pseudo-count with empty text"));
        }
        let mut counts = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.clone()).or_default() += 1;
        }
        Ok(DirichletLm {
            counts,
            len: tokens.len() as u32,
            mu,
            stats,
        })
    }

    pub fn prob(&self, term: &str) -> f64 {
        let c = self.counts.get(term).copied().unwrap_or(0);
        let pc = match self.stats.term_id(term) {
            Some(id) => self.stats.cf(id) as f64 / self.stats.total_terms as f64,
            None => 0.0,
        };
        (f64::from(c) + self.mu * pc) / (f64::from(self.len) + self.mu)
    }
}

/// `-Σ_{w ∈ support(p)} p(w) ln q(w)`.
pub fn cross_entropy<K: Ord + Clone + Debug>(p: &TermDist<K>, q: impl Fn(&K) -> f64) -> Result<f64> {
    let mut sum = 0.0;
    for (w, pw) in p.iter() {
        let qw = q(w);
        if qw <= 0.0 || qw.is_nan() {
            return Err(Error::ZeroProbability(format!("{w:?}")));
        }
        sum += pw * qw.ln();
    }
    Ok(-sum)
}

/// Exponential decay around a pivot turn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayParams {
    pub delta: f64,
    pub pivot: i64,
    /// Inclusive index range `first..=last`.
    pub first: i64,
    pub last: i64,
}

impl DecayParams {
    pub fn new(delta: f64, pivot: i64, first: i64, last: i64) -> Self {
        DecayParams {
            delta,
            pivot,
            first,
            last,
        }
    }
}

/// `α_i = δ e^{-δ|T-i|} / Σ_j δ e^{-δ|T-j|}` over the index range.
pub fn decay_weights(params: DecayParams) -> Result<Vec<f64>> {
    if params.last < params.first {
        return Err(Error::invalid("decay", "empty index set"));
    }
    if !(params.delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let raw: Vec<f64> = (params.first..=params.last)
        .map(|i| params.delta * (-params.delta * (params.pivot - i).abs() as f64).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn turn_models<K: Ord + Clone>(turns: &[Vec<K>]) -> Vec<Option<TermDist<K>>> {
    turns.iter().map(|t| TermDist::mle(t.iter()).ok()).collect()
}

/// Document-retrieval representation of a dialogue: the first turn weighted
/// `1 - β`, the remaining turns sharing `β` equally.
pub fn doc_mixture<K: Ord + Clone>(turns: &[Vec<K>], beta: f64) -> Result<TermDist<K>> {
    check_unit("beta", beta)?;
    let models = turn_models(turns);
    let n = models.len();
    if n == 0 {
        return Err(Error::EmptyQuery);
    }
    if n == 1 {
        return TermDist::mixture(&[(1.0, models[0].as_ref())]);
    }
    let share = beta / (n - 1) as f64;
    let components: Vec<_> = models
        .iter()
        .enumerate()
        .map(|(i, m)| (if i == 0 { 1.0 - beta } else { share }, m.as_ref()))
        .collect();
    TermDist::mixture(&components)
}

/// Sentence-retrieval representation: the last turn weighted `1 - β`, the
/// earlier turns sharing `β` with decay weights pivoted at turn `n - 1`.
pub fn sent_mixture<K: Ord + Clone>(turns: &[Vec<K>], beta: f64, delta: f64) -> Result<TermDist<K>> {
    check_unit("beta", beta)?;
    let models = turn_models(turns);
    let n = models.len();
    if n == 0 {
        return Err(Error::EmptyQuery);
    }
    if n == 1 {
        return TermDist::mixture(&[(1.0, models[0].as_ref())]);
    }
    let alpha = decay_weights(DecayParams::new(delta, n as i64 - 1, 1, n as i64 - 1))?;
    let mut components: Vec<_> = models[..n - 1]
        .iter()
        .zip(&alpha)
        .map(|(m, a)| (beta * a, m.as_ref()))
        .collect();
    components.push((1.0 - beta, models[n - 1].as_ref()));
    TermDist::mixture(&components)
}

/// Decay-weighted mixture of the conversation history `t_1..t_n`, pivoted
/// at `t_n`.
pub fn history_mixture<K: Ord + Clone>(history: &[Vec<K>], delta: f64) -> Result<TermDist<K>> {
    let n = history.len() as i64;
    if n == 0 {
        return Err(Error::EmptyQuery);
    }
    let alpha = decay_weights(DecayParams::new(delta, n, 1, n))?;
    decayed(history, &alpha)
}

/// Decay-weighted mixture of future turns `t_{n+2}..t_m`, pivoted at the
/// first future turn.
pub fn future_mixture<K: Ord + Clone>(future: &[Vec<K>], delta: f64) -> Result<TermDist<K>> {
    let len = future.len() as i64;
    if len == 0 {
        return Err(Error::EmptyQuery);
    }
    // Indices n+2..m relative to T = n+2 are offsets 0..len.
    let alpha = decay_weights(DecayParams::new(delta, 0, 0, len - 1))?;
    decayed(future, &alpha)
}

fn decayed<K: Ord + Clone>(turns: &[Vec<K>], alpha: &[f64]) -> Result<TermDist<K>> {
    let models = turn_models(turns);
    let components: Vec<_> = models.iter().zip(alpha).map(|(m, &a)| (a, m.as_ref())).collect();
    TermDist::mixture(&components)
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{v} outside [0, 1]")))
    }
}
