//! Pseudo relevance labels for training conversations.
//!
//! Four annotators rank the candidate sentences that lie in the documents
//! the target turn links to: TF-IDF cosine against the target, embedding
//! cosine against the target, a language-model fusion of history, target
//! and future, and the same fusion over an external scorer. The four
//! rankings are fused by reciprocal rank; the top sentences inside the
//! linked sections become positives, the bottom sentences elsewhere in the
//! linked documents become negatives.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::corpus::{Analyzer, Collection, DfGranularity, SentenceId, SentenceRef};
use crate::dialogue::{Dialogue, GroundedLink, Turn};
use crate::error::{Error, Result};
use crate::lm::{decay_weights, future_mixture, history_mixture, DecayParams, TermDist};
use crate::ranked::RankedList;
use crate::rerank::{cosine, resolve_candidates, rrf, truncate_words, Embedder, RrfParams, Scorer, TokenBudget};
use crate::retrieval::{dirichlet_log_score, to_vocab, InitialRanker, InitialRankerParams};

pub const TFIDF: &str = "tfidf";
pub const EMBED: &str = "embed";
pub const FUSED_LM: &str = "fused_lm";
pub const FUSED_SCORER: &str = "fused_scorer";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedLmParams {
    pub lambda: f64,
    pub nu: f64,
    pub delta: f64,
    /// Future turns consumed; longer futures are cut.
    pub m_future: usize,
}

impl Default for FusedLmParams {
    fn default() -> Self {
        FusedLmParams {
            lambda: 0.3,
            nu: 60.0,
            delta: 0.01,
            m_future: 4,
        }
    }
}

impl FusedLmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda", format!("{} outside [0, 1]", self.lambda)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::invalid("nu", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid("delta", "must be positive"));
        }
        if self.m_future == 0 {
            return Err(Error::invalid("m_future", "must be at least 1"));
        }
        Ok(())
    }
}

/// A training conversation with its initial candidates.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub conversation: Dialogue,
    pub pointed_links: Vec<GroundedLink>,
    pub candidates: RankedList,
}

impl TrainingExample {
    pub fn new(conversation: Dialogue, candidates: RankedList) -> Result<Self> {
        let target = conversation.target.as_ref().ok_or_else(|| {
            Error::invalid(
                "conversation",
                format!("{} has no target turn", conversation.dialogue_id),
            )
        })?;
        let pointed_links = target.links.clone();
        Ok(TrainingExample {
            conversation,
            pointed_links,
            candidates,
        })
    }

    pub fn target(&self) -> &Turn {
        self.conversation.target.as_ref().expect("checked in new")
    }

    pub fn future(&self, m_future: usize) -> &[Turn] {
        let f = &self.conversation.future;
        &f[..f.len().min(m_future)]
    }

    fn in_pointed_section(&self, r: &SentenceRef) -> bool {
        self.pointed_links
            .iter()
            .any(|l| l.doc_id == r.doc_id && l.section_id == r.section_id)
    }

    fn in_pointed_doc(&self, r: &SentenceRef) -> bool {
        self.pointed_links.iter().any(|l| l.doc_id == r.doc_id)
    }

    /// Whether any candidate lies inside a pointed section.
    pub fn has_pointed_hit(&self) -> bool {
        self.candidates
            .ids()
            .filter_map(|id| id.parse::<SentenceRef>().ok())
            .any(|r| self.in_pointed_section(&r))
    }

    /// Candidates inside the pointed documents, in candidate order.
    pub fn pool(&self, collection: &Collection) -> Result<Vec<(String, SentenceId)>> {
        Ok(resolve_candidates(&self.candidates, collection)?
            .into_iter()
            .filter(|(id, _)| id.parse::<SentenceRef>().is_ok_and(|r| self.in_pointed_doc(&r)))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos")]
    PseudoRelevant,
    #[serde(rename = "neg")]
    PseudoNonrelevant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub sentence: SentenceRef,
    pub label: Label,
    pub fused_score: f64,
    /// Annotator name → 1-based rank in that annotator's list.
    pub provenance: BTreeMap<String, usize>,
}

fn tfidf_vector(tokens: &[String], collection: &Collection) -> BTreeMap<String, f64> {
    let stats = &collection.stats;
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.clone()).or_default() += 1.0;
    }
    for (w, v) in tf.iter_mut() {
        *v *= stats.rsj_idf(stats.term_id(w), DfGranularity::Sentence);
    }
    tf
}

/// Cosine between `tf · idf` vectors with the clamped RSJ IDF. Returns the
/// similarity and whether either vector was zero (similarity 0 then).
pub fn tfidf_cosine(target: &[String], sentence: &[String], collection: &Collection) -> (f64, bool) {
    let a = tfidf_vector(target, collection);
    let b = tfidf_vector(sentence, collection);
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    let dot: f64 = a.iter().map(|(w, x)| x * b.get(w).copied().unwrap_or(0.0)).sum();
    (dot / (na * nb), false)
}

pub fn tfidf_annotator(
    example: &TrainingExample,
    pool: &[(String, SentenceId)],
    collection: &Collection,
    analyzer: &Analyzer,
) -> RankedList {
    let target = analyzer.analyze(&example.target().text, true);
    let mut zero = 0usize;
    let scored: Vec<(String, f64)> = pool
        .iter()
        .map(|(id, s)| {
            let tokens = analyzer.analyze(collection.corpus.sentence_text(*s), true);
            let (sim, degenerate) = tfidf_cosine(&target, &tokens, collection);
            zero += usize::from(degenerate);
            (id.clone(), sim)
        })
        .collect();
    if zero > 0 {
        debug!(conv = %example.conversation.dialogue_id, zero, "tf-idf zero vectors scored 0");
    }
    RankedList::from_scores(&example.conversation.dialogue_id, TFIDF, scored)
}

/// Cosine between the embedded target and each embedded text, after
/// cutting them to the token budget. One embedder call.
pub fn embed_cosine(
    target: &str,
    texts: &[(String, String)],
    embedder: &mut dyn Embedder,
    budget: TokenBudget,
) -> Result<Vec<f64>> {
    let mut inputs = Vec::with_capacity(texts.len() + 1);
    inputs.push(truncate_words(target, budget.query_tokens));
    inputs.extend(texts.iter().map(|(_, t)| truncate_words(t, budget.text_tokens)));
    let vectors = embedder.embed(&inputs)?;
    if vectors.len() != inputs.len() {
        return Err(Error::Protocol(format!(
            "{} vectors for {} texts",
            vectors.len(),
            inputs.len()
        )));
    }
    vectors[1..].iter().map(|v| cosine(&vectors[0], v)).collect()
}

fn pool_texts(pool: &[(String, SentenceId)], collection: &Collection) -> Vec<(String, String)> {
    pool.iter()
        .map(|(id, s)| (id.clone(), collection.corpus.sentence_text(*s).to_owned()))
        .collect()
}

pub fn embed_annotator(
    example: &TrainingExample,
    texts: &[(String, String)],
    embedder: &mut dyn Embedder,
    budget: TokenBudget,
) -> Result<RankedList> {
    let sims = embed_cosine(&example.target().text, texts, embedder, budget)?;
    Ok(RankedList::from_scores(
        &example.conversation.dialogue_id,
        EMBED,
        texts.iter().map(|(id, _)| id.clone()).zip(sims),
    ))
}

/// `(λ/2)/(ν+r_h) + (1-λ)/(ν+r_target) + (λ/2)/(ν+r_f)`.
pub fn weakly_fused(
    history: &RankedList,
    target: &RankedList,
    future: &RankedList,
    params: &FusedLmParams,
) -> Result<RankedList> {
    let l = params.lambda;
    rrf(
        &[history, target, future],
        &RrfParams {
            nu: params.nu,
            weights: Some(vec![l / 2.0, 1.0 - l, l / 2.0]),
        },
    )
}

fn lm_list(
    query_id: &str,
    model: &TermDist<String>,
    pool: &[(String, SentenceId)],
    mu: f64,
    collection: &Collection,
) -> RankedList {
    let query = to_vocab(model, &collection.stats);
    let index = &collection.index;
    RankedList::from_scores(
        query_id,
        "lm",
        pool.iter().map(|(id, s)| {
            let score = match &query {
                Some(q) => dirichlet_log_score(
                    q,
                    |w| index.sentence_tf(*s, w),
                    index.sentence_len(*s),
                    mu,
                    &collection.stats,
                ),
                None => 0.0,
            };
            (id.clone(), score)
        }),
    )
}

/// Language-model annotator: the pool ranked by the history mixture, the
/// target alone and the future mixture, then weakly fused.
pub fn fused_lm(
    example: &TrainingExample,
    pool: &[(String, SentenceId)],
    params: &FusedLmParams,
    mu: f64,
    collection: &Collection,
    analyzer: &Analyzer,
) -> Result<RankedList> {
    params.validate()?;
    let qid = example.conversation.dialogue_id.as_str();
    let analyze =
        |turns: &[Turn]| -> Vec<Vec<String>> { turns.iter().map(|t| analyzer.analyze(&t.text, true)).collect() };
    let history = history_mixture(&analyze(&example.conversation.turns), params.delta)?;
    let target = TermDist::mle(analyzer.analyze(&example.target().text, true).iter())?;
    let future = future_mixture(&analyze(example.future(params.m_future)), params.delta)?;
    let lists = [&history, &target, &future].map(|m| lm_list(qid, m, pool, mu, collection));
    Ok(weakly_fused(&lists[0], &lists[1], &lists[2], params)?.with_tag(FUSED_LM))
}

/// Scorer annotator: one external ranking per turn. History lists are
/// folded with decay weights pivoted at `t_n`, future lists pivoted at
/// `t_{n+2}`, then the two folds and the target list are weakly fused.
pub fn fused_scorer(
    example: &TrainingExample,
    texts: &[(String, String)],
    scorer: &mut dyn Scorer,
    budget: TokenBudget,
    params: &FusedLmParams,
) -> Result<RankedList> {
    params.validate()?;
    let qid = example.conversation.dialogue_id.as_str();
    let mut per_turn = |turn: &Turn| crate::rerank::rerank_external(qid, &turn.text, texts, scorer, budget);

    let history: Vec<RankedList> = example
        .conversation
        .turns
        .iter()
        .map(&mut per_turn)
        .collect::<Result<_>>()?;
    let target = per_turn(example.target())?;
    let future: Vec<RankedList> = example
        .future(params.m_future)
        .iter()
        .map(&mut per_turn)
        .collect::<Result<_>>()?;

    let n = history.len() as i64;
    if n == 0 || future.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let fold = |lists: &[RankedList], alpha: Vec<f64>| -> Result<RankedList> {
        let refs: Vec<&RankedList> = lists.iter().collect();
        rrf(
            &refs,
            &RrfParams {
                nu: params.nu,
                weights: Some(alpha),
            },
        )
    };
    let h = fold(&history, decay_weights(DecayParams::new(params.delta, n, 1, n))?)?;
    let m = future.len() as i64;
    let f = fold(
        &future,
        decay_weights(DecayParams::new(params.delta, n + 2, n + 2, n + 1 + m))?,
    )?;
    Ok(weakly_fused(&h, &target, &f, params)?.with_tag(FUSED_SCORER))
}

/// Uniform reciprocal rank fusion of annotator lists that must all cover
/// the same pool.
pub fn fuse_annotators(lists: &[&RankedList], nu: f64) -> Result<RankedList> {
    let first = lists.first().ok_or(Error::EmptyList)?;
    let pool: HashSet<&str> = first.ids().collect();
    for l in &lists[1..] {
        if l.len() != pool.len() || l.ids().any(|id| !pool.contains(id)) {
            return Err(Error::PoolMismatch(format!(
                "`{}` covers a different candidate set than `{}`",
                l.tag, first.tag
            )));
        }
    }
    Ok(rrf(lists, &RrfParams::uniform(nu))?.with_tag("weak"))
}

/// Top `k` of the fused list inside pointed sections become positives;
/// the bottom `k` inside pointed documents but outside every pointed
/// section become negatives, lowest first. Items elsewhere are ignored.
pub fn select_pseudo_labels(
    example: &TrainingExample,
    fused: &RankedList,
    annotators: &[&RankedList],
    k: usize,
) -> Vec<PseudoLabel> {
    let ranks: Vec<(String, HashMap<&str, usize>)> = annotators.iter().map(|l| (l.tag.clone(), l.rank_map())).collect();
    let label = |id: &str, r: SentenceRef, score: f64, label: Label| PseudoLabel {
        sentence: r,
        label,
        fused_score: score,
        provenance: ranks
            .iter()
            .filter_map(|(tag, m)| m.get(id).map(|&rank| (tag.clone(), rank)))
            .collect(),
    };
    let parsed: Vec<(&str, SentenceRef, f64)> = fused
        .items()
        .iter()
        .filter_map(|it| it.item_id.parse().ok().map(|r| (it.item_id.as_str(), r, it.score)))
        .collect();
    let mut out: Vec<PseudoLabel> = parsed
        .iter()
        .filter(|(_, r, _)| example.in_pointed_section(r))
        .take(k)
        .map(|(id, r, s)| label(id, r.clone(), *s, Label::PseudoRelevant))
        .collect();
    out.extend(
        parsed
            .iter()
            .rev()
            .filter(|(_, r, _)| example.in_pointed_doc(r) && !example.in_pointed_section(r))
            .take(k)
            .map(|(id, r, s)| label(id, r.clone(), *s, Label::PseudoNonrelevant)),
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sentence: String,
    pub label: Label,
    pub score: f64,
    pub ranks: BTreeMap<String, usize>,
}

/// One line of the training-set output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub conv_id: String,
    pub history: Vec<String>,
    pub target: String,
    pub future: Vec<String>,
    pub labels: Vec<LabelRecord>,
}

impl TrainingRecord {
    pub fn new(example: &TrainingExample, labels: &[PseudoLabel], m_future: usize) -> Self {
        let c = &example.conversation;
        TrainingRecord {
            conv_id: c.dialogue_id.clone(),
            history: c.turns.iter().map(|t| t.text.clone()).collect(),
            target: example.target().text.clone(),
            future: example.future(m_future).iter().map(|t| t.text.clone()).collect(),
            labels: labels
                .iter()
                .map(|l| LabelRecord {
                    sentence: l.sentence.to_string(),
                    label: l.label,
                    score: l.fused_score,
                    ranks: l.provenance.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabelConfig {
    /// Candidate retrieval; `k_sents` defaults to 1000 here.
    pub ranker: InitialRankerParams,
    pub fused: FusedLmParams,
    pub budget: TokenBudget,
    /// Positives and negatives per conversation.
    pub k_labels: usize,
}

impl Default for WeakLabelConfig {
    fn default() -> Self {
        WeakLabelConfig {
            ranker: InitialRankerParams {
                k_sents: 1000,
                ..InitialRankerParams::default()
            },
            fused: FusedLmParams::default(),
            budget: TokenBudget::default(),
            k_labels: 3,
        }
    }
}

/// Labels one conversation. `Ok(None)` when no candidate falls inside a
/// pointed section.
pub fn label_conversation(
    conversation: &Dialogue,
    ranker: &InitialRanker<'_>,
    config: &WeakLabelConfig,
    scorer: &mut dyn Scorer,
    embedder: &mut dyn Embedder,
) -> Result<Option<(TrainingExample, Vec<PseudoLabel>)>> {
    let collection = ranker.collection;
    let candidates = ranker.final_rank(conversation)?;
    let example = TrainingExample::new(conversation.clone(), candidates)?;
    if !example.has_pointed_hit() {
        return Ok(None);
    }
    let pool = example.pool(collection)?;
    let texts = pool_texts(&pool, collection);
    let lists = [
        tfidf_annotator(&example, &pool, collection, &ranker.analyzer),
        embed_annotator(&example, &texts, embedder, config.budget)?,
        fused_lm(
            &example,
            &pool,
            &config.fused,
            config.ranker.mu,
            collection,
            &ranker.analyzer,
        )?,
        fused_scorer(&example, &texts, scorer, config.budget, &config.fused)?,
    ];
    let refs: Vec<&RankedList> = lists.iter().collect();
    let fused = fuse_annotators(&refs, config.fused.nu)?;
    let labels = select_pseudo_labels(&example, &fused, &refs, config.k_labels);
    Ok(Some((example, labels)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WeakLabelReport {
    pub conversations: usize,
    pub no_pointed_hit: usize,
    pub failed: usize,
    pub labeled: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Labels every training conversation in parallel. `make_handles` is
/// called per worker to open its own scorer and embedder. Records come
/// back in input order; failing conversations are logged and counted.
pub fn build_training_set<S, E, F>(
    conversations: &[Dialogue],
    collection: &Collection,
    analyzer: &Analyzer,
    config: &WeakLabelConfig,
    make_handles: F,
) -> Result<(Vec<TrainingRecord>, WeakLabelReport)>
where
    S: Scorer,
    E: Embedder,
    F: Fn() -> Result<(S, E)> + Sync,
{
    config.fused.validate()?;
    let ranker = InitialRanker::new(collection, analyzer.clone(), config.ranker)?;
    let outcomes: Vec<Result<Option<TrainingRecord>>> = conversations
        .par_iter()
        .map_init(&make_handles, |handles, conv| {
            let (scorer, embedder) = handles.as_mut().map_err(|e| Error::Protocol(e.to_string()))?;
            let labeled = label_conversation(conv, &ranker, config, scorer, embedder)?;
            Ok(labeled.map(|(ex, labels)| TrainingRecord::new(&ex, &labels, config.fused.m_future)))
        })
        .collect();

    let mut report = WeakLabelReport {
        conversations: conversations.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (conv, outcome) in conversations.iter().zip(outcomes) {
        match outcome {
            Ok(Some(r)) => {
                report.labeled += 1;
                report.positives += r.labels.iter().filter(|l| l.label == Label::PseudoRelevant).count();
                report.negatives += r.labels.iter().filter(|l| l.label == Label::PseudoNonrelevant).count();
                records.push(r);
            }
            Ok(None) => report.no_pointed_hit += 1,
            Err(e) => {
                warn!(conv = %conv.dialogue_id, error = %e, "skipping conversation");
                report.failed += 1;
            }
        }
    }
    Ok((records, report))
}

/// Distinct `(doc, section)` pairs a set of labels touches; handy for
/// audits of label scope.
pub fn labeled_sections(labels: &[PseudoLabel]) -> BTreeSet<(String, String)> {
    labels
        .iter()
        .map(|l| (l.sentence.doc_id.clone(), l.sentence.section_id.clone()))
        .collect()
}
