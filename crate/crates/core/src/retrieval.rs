//! The two-stage initial ranker: documents are retrieved with the
//! first-turn-weighted dialogue model, their sentences are scored with the
//! last-turn-weighted model, and both min-max normalized scores are blended.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{Analyzer, Collection, CollectionStats, SentenceId, TermId};
use crate::dialogue::Dialogue;
use crate::error::{Error, Result};
use crate::lm::{doc_mixture, sent_mixture, TermDist};
use crate::ranked::RankedList;

pub const INITIAL_TAG: &str = "initial";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialRankerParams {
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub delta: f64,
    pub k_docs: usize,
    pub k_sents: usize,
}

impl Default for InitialRankerParams {
    fn default() -> Self {
        InitialRankerParams {
            beta: 0.3,
            gamma: 0.75,
            mu: 1000.0,
            delta: 0.01,
            k_docs: 1000,
            k_sents: 50,
        }
    }
}

impl InitialRankerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
            }
        }
        if !(self.mu >= 0.0) {
            return Err(Error::invalid("mu", "must be non-negative"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta", "must be positive"));
        }
        if self.k_docs == 0 || self.k_sents == 0 {
            return Err(Error::invalid("k", "k_docs and k_sents must be at least 1"));
        }
        Ok(())
    }
}

/// `Σ_w p(w) ln p_Dir(w | text)`, the negated cross entropy between a query
/// model and a Dirichlet-smoothed text model. Terms are visited in term-id
/// order. A zero smoothed probability (only possible with `mu = 0`) yields
/// negative infinity.
pub fn dirichlet_log_score(
    query: &TermDist<TermId>,
    tf: impl Fn(TermId) -> u32,
    len: u32,
    mu: f64,
    stats: &CollectionStats,
) -> f64 {
    let total = stats.total_terms as f64;
    let denom = f64::from(len) + mu;
    let mut score = 0.0;
    for (&w, p) in query.iter() {
        let pc = stats.cf(w) as f64 / total;
        let q = (f64::from(tf(w)) + mu * pc) / denom;
        if q <= 0.0 {
            return f64::NEG_INFINITY;
        }
        score += p * q.ln();
    }
    score
}

/// Min-max normalization to `[0, 1]`. A constant input maps to 0.5.
/// Negative infinity maps to 0 and is ignored when finding the range.
pub fn minmax_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyList);
    }
    let finite = scores.iter().copied().filter(|s| s.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)));
    Ok(scores
        .iter()
        .map(|&s| {
            if !s.is_finite() {
                0.0
            } else if hi == lo {
                0.5
            } else {
                (s - lo) / (hi - lo)
            }
        })
        .collect())
}

/// Analyzes every turn of the dialogue history with stopword removal.
pub fn analyze_turns(dialogue: &Dialogue, analyzer: &Analyzer) -> Vec<Vec<String>> {
    dialogue.turns.iter().map(|t| analyzer.analyze(&t.text, true)).collect()
}

/// Drops out-of-vocabulary terms and renormalizes. `None` when no query
/// term occurs in the collection.
pub fn to_vocab(model: &TermDist<String>, stats: &CollectionStats) -> Option<TermDist<TermId>> {
    model.restrict(|w| stats.term_id(w)).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageScores {
    /// Retrieved documents with raw scores, in rank order.
    pub docs: Vec<(u32, f64)>,
    /// Candidate sentences with raw direct scores, in corpus order.
    pub sentences: Vec<(SentenceId, f64)>,
}

/// Initial ranker bound to a collection and a query-side analyzer.
#[derive(Debug, Clone)]
pub struct InitialRanker<'a> {
    pub collection: &'a Collection,
    pub analyzer: Analyzer,
    pub params: InitialRankerParams,
}

impl<'a> InitialRanker<'a> {
    pub fn new(collection: &'a Collection, analyzer: Analyzer, params: InitialRankerParams) -> Result<Self> {
        params.validate()?;
        Ok(InitialRanker {
            collection,
            analyzer,
            params,
        })
    }

    fn stats(&self) -> &CollectionStats {
        &self.collection.stats
    }

    /// Document-stage query model over vocabulary terms.
    pub fn doc_query(&self, turns: &[Vec<String>]) -> Result<Option<TermDist<TermId>>> {
        let model = doc_mixture(turns, self.params.beta)?;
        Ok(to_vocab(&model, self.stats()))
    }

    pub fn sent_query(&self, turns: &[Vec<String>]) -> Result<Option<TermDist<TermId>>> {
        let model = sent_mixture(turns, self.params.beta, self.params.delta)?;
        Ok(to_vocab(&model, self.stats()))
    }

    /// Top `k_docs` documents among those sharing at least one term with
    /// the query model.
    pub fn score_documents(&self, turns: &[Vec<String>]) -> Result<Vec<(u32, f64)>> {
        let Some(query) = self.doc_query(turns)? else {
            return Ok(Vec::new());
        };
        let index = &self.collection.index;
        let terms: Vec<TermId> = query.iter().map(|(&t, _)| t).collect();
        let mut tfs: HashMap<u32, Vec<u32>> = HashMap::new();
        for (qi, &t) in terms.iter().enumerate() {
            for p in index.postings(t) {
                tfs.entry(p.doc).or_insert_with(|| vec![0; terms.len()])[qi] = p.tf;
            }
        }
        let mut scored: Vec<(u32, f64)> = tfs
            .into_iter()
            .map(|(doc, tf)| {
                let lookup = |w: TermId| terms.binary_search(&w).map(|i| tf[i]).unwrap_or(0);
                let s = dirichlet_log_score(&query, lookup, index.doc_len(doc), self.params.mu, self.stats());
                (doc, s + 0.0)
            })
            .collect();
        let corpus = &self.collection.corpus;
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| corpus.document(a.0).doc_id.cmp(&corpus.document(b.0).doc_id))
        });
        scored.truncate(self.params.k_docs);
        Ok(scored)
    }

    pub fn retrieve_documents(&self, dialogue: &Dialogue) -> Result<RankedList> {
        let turns = analyze_turns(dialogue, &self.analyzer);
        let docs = self.score_documents(&turns)?;
        let corpus = &self.collection.corpus;
        Ok(RankedList::from_scores(
            dialogue.dialogue_id.clone(),
            INITIAL_TAG,
            docs.into_iter().map(|(d, s)| (corpus.document(d).doc_id.clone(), s)),
        ))
    }

    /// Direct scores for every non-empty sentence of the given documents.
    pub fn score_sentences(&self, turns: &[Vec<String>], docs: &[(u32, f64)]) -> Result<StageScores> {
        let Some(query) = self.sent_query(turns)? else {
            return Ok(StageScores {
                docs: docs.to_vec(),
                sentences: Vec::new(),
            });
        };
        let index = &self.collection.index;
        let mut sentences = Vec::new();
        for &(doc, _) in docs {
            for s in self.collection.corpus.doc_sentences(doc) {
                let len = index.sentence_len(s);
                if len == 0 {
                    continue;
                }
                let score = dirichlet_log_score(&query, |w| index.sentence_tf(s, w), len, self.params.mu, self.stats());
                sentences.push((s, score + 0.0));
            }
        }
        Ok(StageScores {
            docs: docs.to_vec(),
            sentences,
        })
    }

    /// Blends normalized document and sentence scores. Returns
    /// `(sentence, final score)` for every candidate, unsorted.
    pub fn blend(&self, stages: &StageScores) -> Result<Vec<(SentenceId, f64)>> {
        if stages.sentences.is_empty() {
            return Ok(Vec::new());
        }
        let doc_raw: Vec<f64> = stages.docs.iter().map(|d| d.1).collect();
        let doc_norm: HashMap<u32, f64> = stages
            .docs
            .iter()
            .map(|d| d.0)
            .zip(minmax_normalize(&doc_raw)?)
            .collect();
        let sent_raw: Vec<f64> = stages.sentences.iter().map(|s| s.1).collect();
        let sent_norm = minmax_normalize(&sent_raw)?;
        let gamma = self.params.gamma;
        Ok(stages
            .sentences
            .iter()
            .zip(sent_norm)
            .map(|(&(s, _), ns)| {
                let doc = self.collection.corpus.slot(s).doc;
                (s, (1.0 - gamma) * doc_norm[&doc] + gamma * ns)
            })
            .collect())
    }

    /// Full two-stage ranking, truncated to `k_sents`.
    pub fn final_rank(&self, dialogue: &Dialogue) -> Result<RankedList> {
        let turns = analyze_turns(dialogue, &self.analyzer);
        let docs = self.score_documents(&turns)?;
        let stages = self.score_sentences(&turns, &docs)?;
        let blended = self.blend(&stages)?;
        let corpus = &self.collection.corpus;
        let mut list = RankedList::from_scores(
            dialogue.dialogue_id.clone(),
            INITIAL_TAG,
            blended
                .into_iter()
                .map(|(s, score)| (corpus.sentence_ref(s).to_string(), score)),
        );
        list.truncate(self.params.k_sents);
        Ok(list)
    }

    /// [`final_rank`](Self::final_rank) over many dialogues in parallel;
    /// results keep input order.
    pub fn rank_all(&self, dialogues: &[Dialogue]) -> Vec<Result<RankedList>> {
        dialogues.par_iter().map(|d| self.final_rank(d)).collect()
    }
}
