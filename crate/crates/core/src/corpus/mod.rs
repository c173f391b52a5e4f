//! Sectioned document corpus, ingestion of the line-delimited interchange
//! format, and the inverted index with its collection statistics.

pub mod analysis;
mod index;

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use analysis::{Analyzer, AnalyzerConfig, LightStemmer, Stemmer, StemmerKind};
pub use index::{CollectionStats, DfGranularity, InvertedIndex, Posting, TermId, INDEX_MAGIC};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    #[serde(rename = "id")]
    pub section_id: String,
    pub heading: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub title: String,
    pub sections: Vec<Section>,
}

/// Address of one sentence: `(doc_id, section_id, sentence_idx)`.
///
/// Serialized as `doc_id#section_id#sentence_idx`. Ids may not contain `#`
/// or whitespace; ingestion rejects them.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub doc_id: String,
    pub section_id: String,
    pub sentence_idx: usize,
}

impl SentenceRef {
    pub fn new(doc_id: impl Into<String>, section_id: impl Into<String>, sentence_idx: usize) -> Self {
        SentenceRef {
            doc_id: doc_id.into(),
            section_id: section_id.into(),
            sentence_idx,
        }
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}#{}", self.doc_id, self.section_id, self.sentence_idx)
    }
}

impl FromStr for SentenceRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('#');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(d), Some(sec), Some(idx), None) if !d.is_empty() && !sec.is_empty() => {
                let sentence_idx = idx.parse().map_err(|_| Error::UnknownSentence(s.to_owned()))?;
                Ok(SentenceRef::new(d, sec, sentence_idx))
            }
            _ => Err(Error::UnknownSentence(s.to_owned())),
        }
    }
}

/// Dense sentence number, assigned in corpus order.
pub type SentenceId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSlot {
    pub doc: u32,
    pub section: u32,
    pub idx: u32,
}

/// The documents plus a flat sentence table.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    doc_lookup: HashMap<String, u32>,
    sentences: Vec<SentenceSlot>,
    doc_sentences: Vec<std::ops::Range<u32>>,
}

impl Corpus {
    fn from_docs(docs: Vec<Document>) -> Corpus {
        let mut doc_lookup = HashMap::with_capacity(docs.len());
        let mut sentences = Vec::new();
        let mut doc_sentences = Vec::with_capacity(docs.len());
        for (d, doc) in docs.iter().enumerate() {
            doc_lookup.insert(doc.doc_id.clone(), d as u32);
            let start = sentences.len() as u32;
            for (s, section) in doc.sections.iter().enumerate() {
                for i in 0..section.sentences.len() {
                    sentences.push(SentenceSlot {
                        doc: d as u32,
                        section: s as u32,
                        idx: i as u32,
                    });
                }
            }
            doc_sentences.push(start..sentences.len() as u32);
        }
        Corpus {
            docs,
            doc_lookup,
            sentences,
            doc_sentences,
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<u32> {
        self.doc_lookup.get(doc_id).copied()
    }

    pub fn document(&self, doc: u32) -> &Document {
        &self.docs[doc as usize]
    }

    pub fn doc_sentences(&self, doc: u32) -> std::ops::Range<u32> {
        self.doc_sentences[doc as usize].clone()
    }

    pub fn slot(&self, sentence: SentenceId) -> SentenceSlot {
        self.sentences[sentence as usize]
    }

    pub fn sentence_text(&self, sentence: SentenceId) -> &str {
        let slot = self.slot(sentence);
        &self.docs[slot.doc as usize].sections[slot.section as usize].sentences[slot.idx as usize]
    }

    pub fn sentence_ref(&self, sentence: SentenceId) -> SentenceRef {
        let slot = self.slot(sentence);
        let doc = &self.docs[slot.doc as usize];
        SentenceRef::new(
            doc.doc_id.clone(),
            doc.sections[slot.section as usize].section_id.clone(),
            slot.idx as usize,
        )
    }

    pub fn resolve(&self, r: &SentenceRef) -> Option<SentenceId> {
        let d = self.doc_index(&r.doc_id)?;
        let doc = &self.docs[d as usize];
        let mut id = self.doc_sentences[d as usize].start;
        for section in &doc.sections {
            if section.section_id == r.section_id {
                return (r.sentence_idx < section.sentences.len()).then(|| id + r.sentence_idx as u32);
            }
            id += section.sentences.len() as u32;
        }
        None
    }

    pub fn has_section(&self, doc_id: &str, section_id: &str) -> bool {
        self.doc_index(doc_id)
            .map(|d| {
                self.docs[d as usize]
                    .sections
                    .iter()
                    .any(|s| s.section_id == section_id)
            })
            .unwrap_or(false)
    }

    /// Section id of a sentence.
    pub fn section_id(&self, sentence: SentenceId) -> &str {
        let slot = self.slot(sentence);
        &self.docs[slot.doc as usize].sections[slot.section as usize].section_id
    }
}

/// Corpus, index and statistics built together from one ingestion.
#[derive(Debug, Clone)]
pub struct Collection {
    pub corpus: Corpus,
    pub index: InvertedIndex,
    pub stats: CollectionStats,
    pub analyzer: AnalyzerConfig,
    /// `(doc_id, section_id)` pairs that had no sentences.
    pub empty_sections: Vec<(String, String)>,
}

impl Collection {
    /// Builds from already-validated documents. Documents are analyzed
    /// without stopword removal.
    pub fn build(docs: Vec<Document>, analyzer: AnalyzerConfig) -> Collection {
        let empty_sections = docs
            .iter()
            .flat_map(|d| {
                d.sections
                    .iter()
                    .filter(|s| s.sentences.is_empty())
                    .map(move |s| (d.doc_id.clone(), s.section_id.clone()))
            })
            .collect();
        let corpus = Corpus::from_docs(docs);
        let (index, stats) = index::build(&corpus, &Analyzer::new(analyzer.clone()));
        Collection {
            corpus,
            index,
            stats,
            analyzer,
            empty_sections,
        }
    }

    pub fn analyzer(&self) -> Analyzer {
        Analyzer::new(self.analyzer.clone())
    }

    /// `cf(w) / total_terms` for a surface-analyzed term.
    pub fn collection_prob(&self, term: &str) -> Result<f64> {
        match self.stats.term_id(term) {
            Some(id) => self.stats.collection_prob(id),
            None if self.stats.total_terms == 0 => Err(Error::EmptyCollection),
            None => Ok(0.0),
        }
    }
}

fn field<'a>(obj: &'a Value, line: usize, name: &str, path: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::Malformed {
        line,
        field: format!("{path}{name}"),
        message: "missing".into(),
    })
}

fn str_field(obj: &Value, line: usize, name: &str, path: &str) -> Result<String> {
    field(obj, line, name, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Malformed {
            line,
            field: format!("{path}{name}"),
            message: "expected string".into(),
        })
}

fn id_field(obj: &Value, line: usize, name: &str, path: &str) -> Result<String> {
    let id = str_field(obj, line, name, path)?;
    if id.is_empty() || id.contains('#') || id.chars().any(char::is_whitespace) {
        return Err(Error::Malformed {
            line,
            field: format!("{path}{name}"),
            message: format!("id `{id}` must be non-empty without `#` or whitespace"),
        });
    }
    Ok(id)
}

/// Parses one corpus record.
pub fn parse_document(text: &str, line: usize) -> Result<Document> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Malformed {
        line,
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    let doc_id = id_field(&value, line, "id", "")?;
    let title = str_field(&value, line, "title", "")?;
    let raw_sections = field(&value, line, "sections", "")?
        .as_array()
        .ok_or_else(|| Error::Malformed {
            line,
            field: "sections".into(),
            message: "expected list".into(),
        })?;
    if raw_sections.is_empty() {
        return Err(Error::Malformed {
            line,
            field: "sections".into(),
            message: "document needs at least one section".into(),
        });
    }
    let mut sections: Vec<Section> = Vec::with_capacity(raw_sections.len());
    for (i, raw) in raw_sections.iter().enumerate() {
        let path = format!("sections[{i}].");
        let section_id = id_field(raw, line, "id", &path)?;
        if sections.iter().any(|s| s.section_id == section_id) {
            return Err(Error::Malformed {
                line,
                field: format!("{path}id"),
                message: format!("duplicate section id `{section_id}`"),
            });
        }
        let heading = str_field(raw, line, "heading", &path)?;
        let list = field(raw, line, "sentences", &path)?
            .as_array()
            .ok_or_else(|| Error::Malformed {
                line,
                field: format!("{path}sentences"),
                message: "expected list".into(),
            })?;
        let sentences = list
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.as_str().map(str::to_owned).ok_or_else(|| Error::Malformed {
                    line,
                    field: format!("{path}sentences[{j}]"),
                    message: "expected string".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sections.push(Section {
            section_id,
            heading,
            sentences,
        });
    }
    Ok(Document {
        doc_id,
        title,
        sections,
    })
}

/// Reads line-delimited corpus records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn read_documents<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document(&line, line_no)?;
        if let Some(&first) = seen.get(&doc.doc_id) {
            return Err(Error::DuplicateDocument {
                doc_id: doc.doc_id,
                first,
                second: line_no,
            });
        }
        seen.insert(doc.doc_id.clone(), line_no);
        docs.push(doc);
    }
    Ok(docs)
}

pub fn ingest_corpus(path: &Path, analyzer: AnalyzerConfig) -> Result<Collection> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let docs = read_documents(BufReader::new(file), path)?;
    let collection = Collection::build(docs, analyzer);
    for (d, s) in &collection.empty_sections {
        tracing::warn!(doc = %d, section = %s, "empty section");
    }
    Ok(collection)
}
