//! Run configuration: built-in defaults, overridden by a `key = value`
//! file, overridden by command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sentret::corpus::analysis::load_stopwords;
use sentret::corpus::{AnalyzerConfig, StemmerKind};
use sentret::eval::{PermutationParams, SplitSpec};
use sentret::rerank::{Bm25Params, RrfParams, TokenBudget};
use sentret::retrieval::InitialRankerParams;
use sentret::weaklabel::{FusedLmParams, WeakLabelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub threads: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,

    pub stemmer: StemmerKind,
    pub lowercase: bool,

    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub delta: f64,
    pub k_docs: usize,
    pub k_sents: usize,
    pub weak_k_sents: usize,

    pub nu: f64,
    pub lambda: f64,
    pub m_future: usize,
    pub k_labels: usize,

    pub k1: f64,
    pub b: f64,

    pub rerank_query_tokens: usize,
    pub rerank_text_tokens: usize,
    pub weak_query_tokens: usize,
    pub weak_text_tokens: usize,
    pub scorer_timeout_secs: u64,

    pub min_tokens: usize,
    pub max_tokens: usize,

    pub seed: u64,
    pub n_splits: usize,
    pub n_permutations: usize,
    pub alpha: f64,
}

impl Default for Config {
    fn default() -> Self {
        let ranker = InitialRankerParams::default();
        let fused = FusedLmParams::default();
        let bm25 = Bm25Params::default();
        Config {
            corpus: None,
            index: None,
            threads: None,
            stopwords: None,
            blocklist: None,
            stemmer: StemmerKind::default(),
            lowercase: true,
            beta: ranker.beta,
            gamma: ranker.gamma,
            mu: ranker.mu,
            delta: ranker.delta,
            k_docs: ranker.k_docs,
            k_sents: ranker.k_sents,
            weak_k_sents: 1000,
            nu: fused.nu,
            lambda: fused.lambda,
            m_future: fused.m_future,
            k_labels: 3,
            k1: bm25.k1,
            b: bm25.b,
            // 70-token turns; the rest of a 512-token input goes to the text.
            rerank_query_tokens: 70,
            rerank_text_tokens: 439,
            weak_query_tokens: 64,
            weak_text_tokens: 112,
            scorer_timeout_secs: 60,
            min_tokens: 5,
            max_tokens: 70,
            seed: 0,
            n_splits: 50,
            n_permutations: 10_000,
            alpha: 0.05,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("invalid value `{value}` for `{key}`: expected true or false"),
    }
}

fn parse_stemmer(value: &str) -> Result<StemmerKind> {
    match value {
        "none" => Ok(StemmerKind::None),
        "light" => Ok(StemmerKind::Light),
        _ => bail!("invalid value `{value}` for `stemmer`: expected none or light"),
    }
}

fn path_or_none(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "corpus" => self.corpus = path_or_none(v),
            "index" => self.index = path_or_none(v),
            "threads" => self.threads = path_or_none(v),
            "stopwords" => self.stopwords = path_or_none(v),
            "blocklist" => self.blocklist = path_or_none(v),
            "stemmer" => self.stemmer = parse_stemmer(v)?,
            "lowercase" => self.lowercase = parse_bool(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "k_docs" => self.k_docs = parse(key, v)?,
            "k_sents" => self.k_sents = parse(key, v)?,
            "weak_k_sents" => self.weak_k_sents = parse(key, v)?,
            "nu" => self.nu = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "m_future" => self.m_future = parse(key, v)?,
            "k_labels" => self.k_labels = parse(key, v)?,
            "k1" => self.k1 = parse(key, v)?,
            "b" => self.b = parse(key, v)?,
            "rerank_query_tokens" => self.rerank_query_tokens = parse(key, v)?,
            "rerank_text_tokens" => self.rerank_text_tokens = parse(key, v)?,
            "weak_query_tokens" => self.weak_query_tokens = parse(key, v)?,
            "weak_text_tokens" => self.weak_text_tokens = parse(key, v)?,
            "scorer_timeout_secs" => self.scorer_timeout_secs = parse(key, v)?,
            "min_tokens" => self.min_tokens = parse(key, v)?,
            "max_tokens" => self.max_tokens = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "n_splits" => self.n_splits = parse(key, v)?,
            "n_permutations" => self.n_permutations = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// skipped.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ranker().validate()?;
        self.weak_ranker().validate()?;
        self.fused().validate()?;
        self.bm25().validate()?;
        if !(self.nu > 0.0) {
            bail!("nu must be positive");
        }
        for (name, v) in [
            ("rerank_query_tokens", self.rerank_query_tokens),
            ("rerank_text_tokens", self.rerank_text_tokens),
            ("weak_query_tokens", self.weak_query_tokens),
            ("weak_text_tokens", self.weak_text_tokens),
            ("n_splits", self.n_splits),
            ("n_permutations", self.n_permutations),
            ("k_labels", self.k_labels),
        ] {
            if v == 0 {
                bail!("{name} must be at least 1");
            }
        }
        if self.scorer_timeout_secs == 0 {
            bail!("scorer_timeout_secs must be at least 1");
        }
        if self.min_tokens > self.max_tokens {
            bail!(
                "min_tokens ({}) exceeds max_tokens ({})",
                self.min_tokens,
                self.max_tokens
            );
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("alpha must lie in (0, 1)");
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn render(&self) -> String {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let stemmer = match self.stemmer {
            StemmerKind::None => "none",
            StemmerKind::Light => "light",
        };
        let rows: Vec<(&str, String)> = vec![
            ("corpus", p(&self.corpus)),
            ("index", p(&self.index)),
            ("threads", p(&self.threads)),
            ("stopwords", p(&self.stopwords)),
            ("blocklist", p(&self.blocklist)),
            ("stemmer", stemmer.into()),
            ("lowercase", self.lowercase.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("mu", self.mu.to_string()),
            ("delta", self.delta.to_string()),
            ("k_docs", self.k_docs.to_string()),
            ("k_sents", self.k_sents.to_string()),
            ("weak_k_sents", self.weak_k_sents.to_string()),
            ("nu", self.nu.to_string()),
            ("lambda", self.lambda.to_string()),
            ("m_future", self.m_future.to_string()),
            ("k_labels", self.k_labels.to_string()),
            ("k1", self.k1.to_string()),
            ("b", self.b.to_string()),
            ("rerank_query_tokens", self.rerank_query_tokens.to_string()),
            ("rerank_text_tokens", self.rerank_text_tokens.to_string()),
            ("weak_query_tokens", self.weak_query_tokens.to_string()),
            ("weak_text_tokens", self.weak_text_tokens.to_string()),
            ("scorer_timeout_secs", self.scorer_timeout_secs.to_string()),
            ("min_tokens", self.min_tokens.to_string()),
            ("max_tokens", self.max_tokens.to_string()),
            ("seed", self.seed.to_string()),
            ("n_splits", self.n_splits.to_string()),
            ("n_permutations", self.n_permutations.to_string()),
            ("alpha", self.alpha.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn analyzer(&self) -> Result<AnalyzerConfig> {
        let mut config = AnalyzerConfig {
            stemmer: self.stemmer,
            lowercase: self.lowercase,
            ..AnalyzerConfig::default()
        };
        if let Some(path) = &self.stopwords {
            config.stopwords = load_stopwords(path)?;
        }
        Ok(config)
    }

    pub fn ranker(&self) -> InitialRankerParams {
        InitialRankerParams {
            beta: self.beta,
            gamma: self.gamma,
            mu: self.mu,
            delta: self.delta,
            k_docs: self.k_docs,
            k_sents: self.k_sents,
        }
    }

    pub fn weak_ranker(&self) -> InitialRankerParams {
        InitialRankerParams {
            k_sents: self.weak_k_sents,
            ..self.ranker()
        }
    }

    pub fn fused(&self) -> FusedLmParams {
        FusedLmParams {
            lambda: self.lambda,
            nu: self.nu,
            delta: self.delta,
            m_future: self.m_future,
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn rrf(&self, weights: Option<Vec<f64>>) -> RrfParams {
        RrfParams { nu: self.nu, weights }
    }

    pub fn rerank_budget(&self) -> TokenBudget {
        TokenBudget {
            query_tokens: self.rerank_query_tokens,
            text_tokens: self.rerank_text_tokens,
        }
    }

    pub fn weak_label(&self) -> WeakLabelConfig {
        WeakLabelConfig {
            ranker: self.weak_ranker(),
            fused: self.fused(),
            budget: TokenBudget {
                query_tokens: self.weak_query_tokens,
                text_tokens: self.weak_text_tokens,
            },
            k_labels: self.k_labels,
        }
    }

    pub fn splits(&self) -> SplitSpec {
        SplitSpec {
            n_splits: self.n_splits,
            seed: self.seed,
        }
    }

    pub fn permutations(&self) -> PermutationParams {
        PermutationParams {
            n_permutations: self.n_permutations,
            seed: self.seed,
        }
    }

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs(self.scorer_timeout_secs)
    }
}
