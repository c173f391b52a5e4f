//! Scorers and embedders: traits, the deterministic lexical stubs, and
//! adapters over child processes speaking the line protocol.

use std::collections::HashSet;
use std::process::Command;
use std::time::Duration;

use serde_json::{json, Value};

use super::protocol::ProtocolClient;
use crate::corpus::analysis::tokenize;
use crate::error::{Error, Result};

/// Scores candidate texts against a query. One score per text, in order.
pub trait Scorer {
    fn score(&mut self, query: &str, texts: &[(String, String)]) -> Result<Vec<f64>>;
}

/// Embeds texts into fixed-dimension vectors.
pub trait Embedder {
    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scorer + ?Sized> Scorer for Box<T> {
    fn score(&mut self, query: &str, texts: &[(String, String)]) -> Result<Vec<f64>> {
        (**self).score(query, texts)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed(texts)
    }
}

/// Per-request token budgets. Texts are cut to their first `n`
/// whitespace-separated words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenBudget {
    pub query_tokens: usize,
    pub text_tokens: usize,
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget {
            query_tokens: 64,
            text_tokens: 112,
        }
    }
}

pub fn truncate_words(text: &str, max_words: usize) -> String {
    if text.split_whitespace().nth(max_words).is_none() {
        return text.to_owned();
    }
    text.split_whitespace().take(max_words).collect::<Vec<_>>().join(" ")
}

fn lower_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    tokenize(text).map(str::to_lowercase)
}

/// Counts query token occurrences that also appear in the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl OverlapScorer {
    pub fn overlap(query: &str, text: &str) -> f64 {
        let vocab: HashSet<String> = lower_tokens(text).collect();
        lower_tokens(query).filter(|t| vocab.contains(t)).count() as f64
    }
}

impl Scorer for OverlapScorer {
    fn score(&mut self, query: &str, texts: &[(String, String)]) -> Result<Vec<f64>> {
        Ok(texts.iter().map(|(_, t)| OverlapScorer::overlap(query, t)).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Feature-hashing bag-of-words embedder.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 64 }
    }
}

impl HashEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for t in lower_tokens(text) {
            let h = fnv1a(t.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Cosine similarity; zero vectors give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// A scorer running as a child process.
pub struct ProcessScorer {
    client: ProtocolClient,
}

impl ProcessScorer {
    pub fn spawn(command: &mut Command, timeout: Duration) -> Result<Self> {
        Ok(ProcessScorer {
            client: ProtocolClient::spawn(command, timeout)?,
        })
    }

    pub fn from_client(client: ProtocolClient) -> Self {
        ProcessScorer { client }
    }
}

impl Scorer for ProcessScorer {
    fn score(&mut self, query: &str, texts: &[(String, String)]) -> Result<Vec<f64>> {
        let requests = texts
            .iter()
            .map(|(_, text)| json!({ "query": query, "text": text }))
            .collect();
        let responses = self.client.batch(requests)?;
        responses
            .into_iter()
            .map(|(id, r)| match r.get("score").and_then(Value::as_f64) {
                Some(s) if s.is_finite() => Ok(s),
                _ => Err(Error::Scorer {
                    id,
                    message: "missing or non-finite `score`".into(),
                }),
            })
            .collect()
    }
}

/// An embedder running as a child process. The dimension is fixed by the
/// handshake (`"dim"`) or, failing that, by the first vector received.
pub struct ProcessEmbedder {
    client: ProtocolClient,
    dim: Option<usize>,
}

impl ProcessEmbedder {
    pub fn spawn(command: &mut Command, timeout: Duration) -> Result<Self> {
        Ok(ProcessEmbedder::from_client(ProtocolClient::spawn(command, timeout)?))
    }

    pub fn from_client(client: ProtocolClient) -> Self {
        let dim = client
            .handshake_reply()
            .get("dim")
            .and_then(Value::as_u64)
            .map(|d| d as usize);
        ProcessEmbedder { client, dim }
    }
}

impl Embedder for ProcessEmbedder {
    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let requests = texts.iter().map(|t| json!({ "text": t })).collect();
        let responses = self.client.batch(requests)?;
        let mut out = Vec::with_capacity(responses.len());
        for (id, r) in responses {
            let v: Vec<f64> = r
                .get("vector")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                .ok_or_else(|| Error::Scorer {
                    id: id.clone(),
                    message: "missing or non-numeric `vector`".into(),
                })?;
            match self.dim {
                Some(d) if d != v.len() => return Err(Error::DimensionMismatch(d, v.len())),
                None => self.dim = Some(v.len()),
                _ => {}
            }
            out.push(v);
        }
        Ok(out)
    }
}
