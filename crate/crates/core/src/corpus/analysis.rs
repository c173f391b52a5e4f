//! Text analysis: tokenization, case folding, stopword removal and stemming.
//!
//! Documents are analyzed without stopword removal; dialogue turns are
//! analyzed with it. The same [`Analyzer`] serves both, the caller picks
//! via the `apply_stopwords` flag.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps a surface token to its stem.
pub trait Stemmer: Send + Sync {
    fn stem(&self, token: &str) -> String;
}

/// Leaves tokens untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityStemmer;

impl Stemmer for IdentityStemmer {
    fn stem(&self, token: &str) -> String {
        token.to_owned()
    }
}

/// A light inflectional stemmer: folds plural `-s`/`-es`/`-ies` and verbal
/// `-ed`/`-ing` endings. It never touches derivational suffixes such as
/// `-ly` or `-ness`, and leaves tokens containing non-letters alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct LightStemmer;

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u' | b'y')
}

fn has_vowel(s: &[u8]) -> bool {
    s.iter().any(|&c| is_vowel(c))
}

// "runn" -> "run", "stopp" -> "stop"; keeps "fall", "miss", "buzz".
fn undouble(stem: &str) -> &str {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        &stem[..n - 1]
    } else {
        stem
    }
}

impl Stemmer for LightStemmer {
    fn stem(&self, token: &str) -> String {
        if token.len() <= 3 || !token.bytes().all(|c| c.is_ascii_lowercase()) {
            return token.to_owned();
        }
        let b = token.as_bytes();
        let n = b.len();

        if token.ends_with("ies") && n > 4 {
            return format!("{}y", &token[..n - 3]);
        }
        if token.ends_with("sses") {
            return token[..n - 2].to_owned();
        }
        if token.ends_with("es") {
            let base = &token[..n - 2];
            if base.ends_with(['s', 'x', 'z']) || base.ends_with("ch") || base.ends_with("sh") {
                return base.to_owned();
            }
        }
        if token.ends_with('s') && !token.ends_with("ss") && !token.ends_with("us") && !token.ends_with("is") {
            return token[..n - 1].to_owned();
        }
        if token.ends_with("ing") {
            let base = &token[..n - 3];
            if base.len() >= 3 && has_vowel(base.as_bytes()) {
                return undouble(base).to_owned();
            }
            return token.to_owned();
        }
        if token.ends_with("ed") && !token.ends_with("eed") {
            let base = &token[..n - 2];
            if base.len() >= 3 && has_vowel(base.as_bytes()) {
                return undouble(base).to_owned();
            }
        }
        token.to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StemmerKind {
    None,
    #[default]
    Light,
}

impl StemmerKind {
    fn build(self) -> Arc<dyn Stemmer> {
        match self {
            StemmerKind::None => Arc::new(IdentityStemmer),
            StemmerKind::Light => Arc::new(LightStemmer),
        }
    }
}

/// Token boundary rule. Only one is shipped: maximal runs of Unicode
/// alphanumeric characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenPattern {
    #[default]
    Alphanumeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerConfig {
    pub stemmer: StemmerKind,
    pub stopwords: BTreeSet<String>,
    pub lowercase: bool,
    pub token_pattern: TokenPattern,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            stemmer: StemmerKind::Light,
            stopwords: BTreeSet::new(),
            lowercase: true,
            token_pattern: TokenPattern::Alphanumeric,
        }
    }
}

impl AnalyzerConfig {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(Into::into).collect();
        self
    }
}

/// Reads a one-term-per-line stopword file. Blank lines and lines starting
/// with `#` are skipped.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// Splits `text` into maximal alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

#[derive(Clone)]
pub struct Analyzer {
    config: AnalyzerConfig,
    stemmer: Arc<dyn Stemmer>,
}

impl std::fmt::Debug for Analyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Analyzer").field("config", &self.config).finish()
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer::new(AnalyzerConfig::default())
    }
}

impl Analyzer {
    pub fn new(config: AnalyzerConfig) -> Self {
        let stemmer = config.stemmer.build();
        Analyzer { config, stemmer }
    }

    /// Uses a custom stemmer in place of the one named by the config.
    pub fn with_stemmer(config: AnalyzerConfig, stemmer: Arc<dyn Stemmer>) -> Self {
        Analyzer { config, stemmer }
    }

    pub fn config(&self) -> &AnalyzerConfig {
        &self.config
    }

    pub fn analyze(&self, text: &str, apply_stopwords: bool) -> Vec<String> {
        let mut out = Vec::new();
        for raw in tokenize(text) {
            let token = if self.config.lowercase {
                raw.to_lowercase()
            } else {
                raw.to_owned()
            };
            if apply_stopwords && self.config.stopwords.contains(&token) {
                continue;
            }
            out.push(self.stemmer.stem(&token));
        }
        out
    }
}
