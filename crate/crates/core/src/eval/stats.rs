//! Splits, significance testing and grid search.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rerank::Bm25Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { n_splits: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stratified halves: within each stratum (grounded, ungrounded) queries
/// are shuffled and cut in two. When a stratum is odd, its extra query
/// goes to validation in splits where `split + stratum` is even and to
/// test otherwise. An empty stratum is allowed; a stratum of one is not.
pub fn make_splits(queries: &[(String, bool)], spec: SplitSpec) -> Result<Vec<Split>> {
    let mut strata: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (q, grounded) in queries {
        strata[usize::from(!*grounded)].push(q);
    }
    for (k, s) in strata.iter_mut().enumerate() {
        s.sort_unstable();
        s.dedup();
        if s.len() == 1 {
            return Err(Error::SmallStratum(
                if k == 0 { "grounded" } else { "ungrounded" }.into(),
            ));
        }
    }
    Ok((0..spec.n_splits)
        .map(|j| {
            let mut rng = stream_rng(spec.seed, j as u64);
            let mut split = Split {
                validation: Vec::new(),
                test: Vec::new(),
            };
            for (k, stratum) in strata.iter().enumerate() {
                let mut s = stratum.clone();
                s.shuffle(&mut rng);
                let cut = s.len() / 2 + usize::from(s.len() % 2 == 1 && (j + k) % 2 == 0);
                split.validation.extend(s[..cut].iter().map(|q| q.to_string()));
                split.test.extend(s[cut..].iter().map(|q| q.to_string()));
            }
            split.validation.sort_unstable();
            split.test.sort_unstable();
            split
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermutationParams {
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for PermutationParams {
    fn default() -> Self {
        PermutationParams {
            n_permutations: 10_000,
            seed: 0,
        }
    }
}

/// Two-tailed paired sign-flip test on `d = a - b` with statistic
/// `|mean(d)|`. `p = (hits + 1) / (n_permutations + 1)`. Permutation `i`
/// draws its signs from its own ChaCha stream, so the result does not
/// depend on thread scheduling.
pub fn permutation_test(a: &[f64], b: &[f64], params: PermutationParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyList);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let observed = (d.iter().sum::<f64>() / n).abs();
    // Relative slack so that sign patterns equal to the observed one up to
    // summation rounding still count.
    let threshold = observed * (1.0 - 1e-12);
    let hits = (0..params.n_permutations)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = stream_rng(params.seed, i as u64);
            let s: f64 = d.iter().map(|&x| if rng.gen::<bool>() { x } else { -x }).sum();
            (s / n).abs() >= threshold
        })
        .count();
    Ok((hits + 1) as f64 / (params.n_permutations + 1) as f64)
}

/// `min(1, p · m)`.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub system_a: String,
    pub system_b: String,
    pub mean_diff: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub comparisons: usize,
    pub pairs: Vec<PairResult>,
}

/// Tests each `(a, b)` pair of per-split vectors and corrects for the
/// number of pairs.
pub fn significance(
    systems: &BTreeMap<String, Vec<f64>>,
    pairs: &[(String, String)],
    params: PermutationParams,
    alpha: f64,
) -> Result<SignificanceReport> {
    let get = |name: &str| {
        systems
            .get(name)
            .ok_or_else(|| Error::invalid("system", format!("no per-split values for `{name}`")))
    };
    let m = pairs.len();
    let results = pairs
        .iter()
        .map(|(a, b)| {
            let (va, vb) = (get(a)?, get(b)?);
            let p = permutation_test(va, vb, params)?;
            let mean_diff = va.iter().zip(vb).map(|(x, y)| x - y).sum::<f64>() / va.len() as f64;
            let adj = bonferroni(p, m);
            Ok(PairResult {
                system_a: a.clone(),
                system_b: b.clone(),
                mean_diff,
                p_raw: p,
                p_adjusted: adj,
                reject: adj < alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignificanceReport {
        alpha,
        comparisons: m,
        pairs: results,
    })
}

/// Index and value of the best grid point; the first wins ties.
pub fn tune<P>(grid: &[P], mut objective: impl FnMut(&P) -> Result<f64>) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in grid.iter().enumerate() {
        let v = objective(p)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.ok_or(Error::EmptyList)
}

pub fn bm25_grid() -> Vec<Bm25Params> {
    let mut grid = Vec::with_capacity(20);
    for k1 in [1.2, 2.0, 4.0, 8.0, 12.0] {
        for b in [0.25, 0.5, 0.75, 1.0] {
            grid.push(Bm25Params { k1, b });
        }
    }
    grid
}

pub fn dirichlet_grid() -> Vec<f64> {
    vec![1000.0, 2000.0]
}
