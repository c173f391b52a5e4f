//! Rerankers over an initial candidate list.
//!
//! [`rerank_lm`] and [`rerank_bm25`] use the last turn alone as the query.
//! [`rerank_external`] delegates scoring to an out-of-process model over the
//! line-delimited protocol in [`protocol`]; [`ext_fuse`] runs it once per
//! turn and fuses the per-turn lists with [`rrf`].

mod external;
mod fusion;
pub mod protocol;

use std::collections::BTreeMap;

pub use external::{
    cosine, truncate_words, Embedder, HashEmbedder, OverlapScorer, ProcessEmbedder, ProcessScorer, Scorer, TokenBudget,
};
pub use fusion::{rrf, RrfParams};

use crate::corpus::{Analyzer, Collection, CollectionStats, DfGranularity, SentenceId, SentenceRef};
use crate::dialogue::Dialogue;
use crate::error::{Error, Result};
use crate::lm::TermDist;
use crate::ranked::RankedList;
use crate::retrieval::{dirichlet_log_score, to_vocab};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) {
            return Err(Error::invalid("k1", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid("b", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Resolves the item ids of a sentence list against the corpus.
pub fn resolve_candidates(list: &RankedList, collection: &Collection) -> Result<Vec<(String, SentenceId)>> {
    list.ids()
        .map(|id| {
            let r: SentenceRef = id.parse()?;
            collection
                .corpus
                .resolve(&r)
                .map(|s| (id.to_owned(), s))
                .ok_or_else(|| Error::UnknownSentence(id.to_owned()))
        })
        .collect()
}

/// `(item_id, raw text)` for every candidate.
pub fn candidate_texts(list: &RankedList, collection: &Collection) -> Result<Vec<(String, String)>> {
    Ok(resolve_candidates(list, collection)?
        .into_iter()
        .map(|(id, s)| (id, collection.corpus.sentence_text(s).to_owned()))
        .collect())
}

fn last_turn_tokens(dialogue: &Dialogue, analyzer: &Analyzer) -> Result<Vec<String>> {
    let tokens = dialogue
        .last_turn()
        .map(|t| analyzer.analyze(&t.text, true))
        .unwrap_or_default();
    if tokens.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(tokens)
}

/// Reorders candidates by `-CE(MLE(t_n) || Dirichlet(s))`. Query terms
/// outside the vocabulary are dropped.
pub fn rerank_lm(
    dialogue: &Dialogue,
    candidates: &RankedList,
    mu: f64,
    collection: &Collection,
    analyzer: &Analyzer,
) -> Result<RankedList> {
    let tokens = last_turn_tokens(dialogue, analyzer)?;
    let query = to_vocab(&TermDist::mle(tokens.iter())?, &collection.stats);
    let index = &collection.index;
    let scored = resolve_candidates(candidates, collection)?.into_iter().map(|(id, s)| {
        let score = match &query {
            Some(q) => dirichlet_log_score(
                q,
                |w| index.sentence_tf(s, w),
                index.sentence_len(s),
                mu,
                &collection.stats,
            ),
            None => 0.0,
        };
        (id, score)
    });
    Ok(RankedList::from_scores(candidates.query_id.clone(), "lm", scored))
}

/// Okapi BM25 of one text: `Σ_w qtf · idf · tf (k1+1) / (tf + k1 (1 - b + b len/avg_len))`.
pub fn bm25_score(
    query_tf: &BTreeMap<String, u32>,
    text_tf: impl Fn(&str) -> u32,
    len: f64,
    avg_len: f64,
    idf: impl Fn(&str) -> f64,
    params: Bm25Params,
) -> f64 {
    let norm = params.k1 * (1.0 - params.b + params.b * len / avg_len);
    query_tf
        .iter()
        .map(|(w, &qtf)| {
            let tf = f64::from(text_tf(w));
            if tf == 0.0 {
                return 0.0;
            }
            f64::from(qtf) * idf(w) * tf * (params.k1 + 1.0) / (tf + norm)
        })
        .sum()
}

fn term_counts(tokens: &[String]) -> BTreeMap<String, u32> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.clone()).or_default() += 1;
    }
    m
}

/// RSJ IDF over sentences for a surface term.
pub fn sentence_idf(stats: &CollectionStats, term: &str) -> f64 {
    stats.rsj_idf(stats.term_id(term), DfGranularity::Sentence)
}

/// BM25 with the last turn as query; length statistics and IDF are
/// sentence-level over the whole collection.
pub fn rerank_bm25(
    dialogue: &Dialogue,
    candidates: &RankedList,
    params: Bm25Params,
    collection: &Collection,
    analyzer: &Analyzer,
) -> Result<RankedList> {
    params.validate()?;
    let tokens = last_turn_tokens(dialogue, analyzer)?;
    let query_tf = term_counts(&tokens);
    let stats = &collection.stats;
    let index = &collection.index;
    let scored = resolve_candidates(candidates, collection)?.into_iter().map(|(id, s)| {
        let tf = |w: &str| stats.term_id(w).map_or(0, |t| index.sentence_tf(s, t));
        let score = bm25_score(
            &query_tf,
            tf,
            f64::from(index.sentence_len(s)),
            stats.avg_sentence_len,
            |w| sentence_idf(stats, w),
            params,
        );
        (id, score)
    });
    Ok(RankedList::from_scores(candidates.query_id.clone(), "bm25", scored))
}

/// Scores `(item_id, text)` candidates with an external scorer. Query and
/// texts are cut to the token budget before sending.
pub fn rerank_external(
    query_id: &str,
    query: &str,
    candidates: &[(String, String)],
    scorer: &mut dyn Scorer,
    budget: TokenBudget,
) -> Result<RankedList> {
    let query = truncate_words(query, budget.query_tokens);
    let texts: Vec<(String, String)> = candidates
        .iter()
        .map(|(id, t)| (id.clone(), truncate_words(t, budget.text_tokens)))
        .collect();
    let scores = scorer.score(&query, &texts)?;
    if scores.len() != texts.len() {
        return Err(Error::Protocol(format!(
            "{} scores for {} candidates",
            scores.len(),
            texts.len()
        )));
    }
    Ok(RankedList::from_scores(
        query_id,
        "external",
        candidates.iter().map(|(id, _)| id.clone()).zip(scores),
    ))
}

/// One external ranking per usable turn, fused by reciprocal rank. Turns
/// without any alphanumeric token are skipped. `params.weights`, when
/// given, has one entry per history turn.
pub fn ext_fuse(
    dialogue: &Dialogue,
    candidates: &[(String, String)],
    scorer: &mut dyn Scorer,
    budget: TokenBudget,
    params: &RrfParams,
) -> Result<RankedList> {
    if let Some(w) = &params.weights {
        if w.len() != dialogue.turns.len() {
            return Err(Error::LengthMismatch(w.len(), dialogue.turns.len()));
        }
    }
    let mut lists = Vec::new();
    let mut weights = Vec::new();
    for (i, turn) in dialogue.turns.iter().enumerate() {
        if crate::corpus::analysis::tokenize(&turn.text).next().is_none() {
            continue;
        }
        lists.push(rerank_external(
            &dialogue.dialogue_id,
            &turn.text,
            candidates,
            scorer,
            budget,
        )?);
        weights.push(params.weights.as_ref().map_or(1.0, |w| w[i]));
    }
    if lists.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let fused_params = RrfParams {
        nu: params.nu,
        weights: Some(weights),
    };
    let refs: Vec<&RankedList> = lists.iter().collect();
    Ok(rrf(&refs, &fused_params)?.with_tag("extfuse"))
}
