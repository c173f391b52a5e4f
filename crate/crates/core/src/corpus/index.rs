//! Inverted index with a sentence-level sidecar, and collection statistics.
//!
//! Term ids are assigned in lexicographic order of the term strings, so any
//! iteration in term-id order is also iteration in term order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Analyzer, AnalyzerConfig, Collection, Corpus, Document, SentenceId};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &str = "SENTRET-INDEX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Granularity used when counting "documents" for IDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DfGranularity {
    Document,
    #[default]
    Sentence,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CollectionStats {
    vocab: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, TermId>,
    pub total_terms: u64,
    pub doc_count: usize,
    pub sentence_count: usize,
    cf: Vec<u64>,
    df: Vec<u32>,
    sf: Vec<u32>,
    pub avg_doc_len: f64,
    pub avg_sentence_len: f64,
}

impl CollectionStats {
    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TermId(i as u32)))
            .collect();
    }

    pub fn term_id(&self, term: &str) -> Option<TermId> {
        self.lookup.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> &str {
        &self.vocab[id.0 as usize]
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (TermId, &str)> {
        self.vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (TermId(i as u32), t.as_str()))
    }

    pub fn cf(&self, id: TermId) -> u64 {
        self.cf[id.0 as usize]
    }

    pub fn df(&self, id: TermId) -> u32 {
        self.df[id.0 as usize]
    }

    pub fn sf(&self, id: TermId) -> u32 {
        self.sf[id.0 as usize]
    }

    /// Background probability `cf(w) / total_terms`.
    pub fn collection_prob(&self, id: TermId) -> Result<f64> {
        if self.total_terms == 0 {
            return Err(Error::EmptyCollection);
        }
        Ok(self.cf(id) as f64 / self.total_terms as f64)
    }

    /// RSJ IDF, clamped at zero: `max(0, ln((N - df + 0.5) / (df + 0.5)))`.
    /// Out-of-vocabulary terms have `df = 0`.
    pub fn rsj_idf(&self, id: Option<TermId>, granularity: DfGranularity) -> f64 {
        let (n, df) = match granularity {
            DfGranularity::Document => (self.doc_count as f64, id.map_or(0, |t| self.df(t)) as f64),
            DfGranularity::Sentence => (self.sentence_count as f64, id.map_or(0, |t| self.sf(t)) as f64),
        };
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: Vec<Vec<Posting>>,
    doc_len: Vec<u32>,
    sentence_terms: Vec<Vec<(TermId, u32)>>,
    sentence_len: Vec<u32>,
}

impl InvertedIndex {
    pub fn postings(&self, term: TermId) -> &[Posting] {
        &self.postings[term.0 as usize]
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.doc_len[doc as usize]
    }

    /// Term counts of one sentence, sorted by term id.
    pub fn sentence_terms(&self, sentence: SentenceId) -> &[(TermId, u32)] {
        &self.sentence_terms[sentence as usize]
    }

    pub fn sentence_len(&self, sentence: SentenceId) -> u32 {
        self.sentence_len[sentence as usize]
    }

    pub fn sentence_tf(&self, sentence: SentenceId, term: TermId) -> u32 {
        let terms = self.sentence_terms(sentence);
        terms
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| terms[i].1)
            .unwrap_or(0)
    }
}

pub(super) fn build(corpus: &Corpus, analyzer: &Analyzer) -> (InvertedIndex, CollectionStats) {
    let analyzed: Vec<Vec<String>> = (0..corpus.sentence_count() as u32)
        .map(|s| analyzer.analyze(corpus.sentence_text(s), false))
        .collect();

    let vocab: Vec<String> = analyzed
        .iter()
        .flatten()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .cloned()
        .collect();
    let mut stats = CollectionStats {
        vocab,
        ..Default::default()
    };
    stats.rebuild_lookup();
    let v = stats.vocab.len();
    stats.cf = vec![0; v];
    stats.df = vec![0; v];
    stats.sf = vec![0; v];

    let mut sentence_terms = Vec::with_capacity(analyzed.len());
    let mut sentence_len = Vec::with_capacity(analyzed.len());
    for tokens in &analyzed {
        let mut counts: BTreeMap<TermId, u32> = BTreeMap::new();
        for t in tokens {
            *counts.entry(stats.lookup[t]).or_default() += 1;
        }
        for (&t, &c) in &counts {
            stats.sf[t.0 as usize] += 1;
            stats.cf[t.0 as usize] += u64::from(c);
        }
        sentence_len.push(tokens.len() as u32);
        sentence_terms.push(counts.into_iter().collect::<Vec<_>>());
    }

    let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); v];
    let mut doc_len = Vec::with_capacity(corpus.doc_count());
    for d in 0..corpus.doc_count() as u32 {
        let mut counts: BTreeMap<TermId, u32> = BTreeMap::new();
        let mut len = 0u32;
        for s in corpus.doc_sentences(d) {
            len += sentence_len[s as usize];
            for &(t, c) in &sentence_terms[s as usize] {
                *counts.entry(t).or_default() += c;
            }
        }
        for (t, tf) in counts {
            stats.df[t.0 as usize] += 1;
            postings[t.0 as usize].push(Posting { doc: d, tf });
        }
        doc_len.push(len);
    }

    stats.total_terms = sentence_len.iter().map(|&l| u64::from(l)).sum();
    stats.doc_count = corpus.doc_count();
    stats.sentence_count = corpus.sentence_count();
    if stats.doc_count > 0 {
        stats.avg_doc_len = stats.total_terms as f64 / stats.doc_count as f64;
    }
    if stats.sentence_count > 0 {
        stats.avg_sentence_len = stats.total_terms as f64 / stats.sentence_count as f64;
    }

    (
        InvertedIndex {
            postings,
            doc_len,
            sentence_terms,
            sentence_len,
        },
        stats,
    )
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    analyzer: AnalyzerConfig,
    documents: Vec<Document>,
    empty_sections: Vec<(String, String)>,
    index: InvertedIndex,
    stats: CollectionStats,
}

impl Collection {
    /// Writes the versioned index file: a magic header line, a version
    /// line, then one JSON body. Output is a pure function of the input
    /// corpus and analyzer config.
    pub fn write_index<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{INDEX_MAGIC}")?;
        writeln!(w, "{INDEX_VERSION}")?;
        let file = IndexFile {
            analyzer: self.analyzer.clone(),
            documents: self.corpus.docs.clone(),
            empty_sections: self.empty_sections.clone(),
            index: self.index.clone(),
            stats: self.stats.clone(),
        };
        serde_json::to_writer(&mut w, &file)?;
        writeln!(w)?;
        w.flush()
    }

    pub fn read_index<R: BufRead>(mut r: R) -> Result<Collection> {
        let mut line = String::new();
        let io = |e| Error::IndexFormat(format!("read failed: {e}"));
        r.read_line(&mut line).map_err(io)?;
        if line.trim_end() != INDEX_MAGIC {
            return Err(Error::IndexFormat("missing magic header".into()));
        }
        line.clear();
        r.read_line(&mut line).map_err(io)?;
        let version: u32 = line
            .trim_end()
            .parse()
            .map_err(|_| Error::IndexFormat("bad version line".into()))?;
        if version != INDEX_VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let file: IndexFile = serde_json::from_reader(r).map_err(|e| Error::IndexFormat(e.to_string()))?;
        let corpus = Corpus::from_docs(file.documents);
        let mut stats = file.stats;
        stats.rebuild_lookup();
        let consistent = file.index.sentence_len.len() == corpus.sentence_count()
            && file.index.doc_len.len() == corpus.doc_count()
            && file.index.postings.len() == stats.vocab.len();
        if !consistent {
            return Err(Error::IndexFormat("index body inconsistent with documents".into()));
        }
        Ok(Collection {
            corpus,
            index: file.index,
            stats,
            analyzer: file.analyzer,
            empty_sections: file.empty_sections,
        })
    }
}
