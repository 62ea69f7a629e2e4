//! Next-item ranking evaluation: full-catalog and 99-negative protocols.
//!
//! Ties are broken against the target: a candidate with a score equal to the
//! target's counts as ranked ahead of it.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitSequences;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::BsaRec;

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];
pub const SAMPLED_NEGATIVES: usize = 99;

/// Anything that scores the whole catalog from a user history.
pub trait Scorer: Sync {
    fn num_items(&self) -> usize;

    /// Scores indexed by item id; entry 0 is ignored.
    fn score_history(&self, history: &[usize]) -> Result<Array1<f64>>;
}

impl Scorer for BsaRec {
    fn num_items(&self) -> usize {
        self.config().num_items
    }

    fn score_history(&self, history: &[usize]) -> Result<Array1<f64>> {
        BsaRec::score_history(self, history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Full,
    #[serde(rename = "sampled-99")]
    Sampled99,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::Full => "full",
            Protocol::Sampled99 => "sampled-99",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Protocol::Full),
            "sampled-99" | "sampled" => Ok(Protocol::Sampled99),
            other => Err(Error::InvalidArgument(format!(
                "protocol must be `full` or `sampled-99`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub seed: Option<u64>,
    pub users: usize,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub mrr: f64,
}

impl MetricsReport {
    pub fn hr_at(&self, k: usize) -> f64 {
        self.hr[&k]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[&k]
    }

    /// Metric rows `HR@k` then `NDCG@k`, then `MRR`, one per line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>10}", "metric", self.protocol.as_str());
        for (k, v) in &self.hr {
            let _ = writeln!(out, "{:<10}{:>10.4}", format!("HR@{k}"), v);
        }
        for (k, v) in &self.ndcg {
            let _ = writeln!(out, "{:<10}{:>10.4}", format!("NDCG@{k}"), v);
        }
        let _ = writeln!(out, "{:<10}{:>10.4}", "MRR", self.mrr);
        let _ = writeln!(out, "{:<10}{:>10}", "users", self.users);
        out
    }
}

/// `1 +` the number of other candidates scoring at least as high as the
/// target.
pub fn rank_of_target(scores: &[f64], target: usize, candidates: &[usize]) -> Result<usize> {
    if !candidates.contains(&target) {
        return Err(Error::InvalidArgument(format!("target {target} is not among the candidates")));
    }
    let t = *scores
        .get(target)
        .ok_or_else(|| Error::InvalidArgument(format!("target {target} has no score")))?;
    if t.is_nan() {
        return Ok(candidates.len());
    }
    let ahead = candidates
        .iter()
        .filter(|&&c| c != target && scores.get(c).is_some_and(|&s| s >= t))
        .count();
    Ok(1 + ahead)
}

/// Rank over the whole catalog `1..scores.len()`, skipping `excluded` items
/// other than the target.
pub fn rank_full(scores: &[f64], target: usize, excluded: &HashSet<usize>) -> Result<usize> {
    if target == 0 || target >= scores.len() {
        return Err(Error::InvalidArgument(format!("target {target} outside the catalog")));
    }
    let t = scores[target];
    if t.is_nan() {
        return Ok(scores.len() - 1 - excluded.iter().filter(|&&e| e != target && e < scores.len()).count());
    }
    let ahead = (1..scores.len())
        .filter(|&c| c != target && !excluded.contains(&c) && scores[c] >= t)
        .count();
    Ok(1 + ahead)
}

pub fn compute_metrics(ranks: &[usize], cutoffs: &[usize], protocol: Protocol, seed: Option<u64>) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if let Some(bad) = ranks.iter().find(|&&r| r == 0) {
        return Err(Error::InvalidArgument(format!("rank {bad} is not 1-based")));
    }
    let n = ranks.len() as f64;
    let mut hr = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in cutoffs {
        let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
        let gain: f64 = ranks
            .iter()
            .filter(|&&r| r <= k)
            .map(|&r| 1.0 / ((r + 1) as f64).log2())
            .sum();
        hr.insert(k, hits / n);
        ndcg.insert(k, gain / n);
    }
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    Ok(MetricsReport {
        protocol,
        seed,
        users: ranks.len(),
        hr,
        ndcg,
        mrr,
    })
}

/// One ranking query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalQuery {
    pub history: Vec<usize>,
    pub target: usize,
    /// Every item the user interacted with; never drawn as a negative.
    pub interacted: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validation,
    Test,
}

pub fn queries(splits: &SplitSequences, stage: Stage) -> Vec<EvalQuery> {
    splits
        .users
        .iter()
        .map(|u| {
            let (history, target) = match stage {
                Stage::Validation => (u.valid_history().to_vec(), u.valid),
                Stage::Test => (u.test_history(), u.test),
            };
            EvalQuery {
                history,
                target,
                interacted: u.full_sequence(),
            }
        })
        .collect()
}

/// Ranks every target against the full catalog. With `mask_history`, items in
/// the query history (other than the target) are removed from the candidates.
pub fn evaluate_full<S: Scorer>(
    scorer: &S,
    queries: &[EvalQuery],
    mask_history: bool,
    exec: Exec,
) -> Result<MetricsReport> {
    let ranks = exec
        .map(queries, |q| {
            let scores = scorer.score_history(&q.history)?;
            let excluded: HashSet<usize> = if mask_history {
                q.history.iter().copied().collect()
            } else {
                HashSet::new()
            };
            rank_full(scores.as_slice().expect("contiguous scores"), q.target, &excluded)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&ranks, &DEFAULT_CUTOFFS, Protocol::Full, None)
}

fn user_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Target plus 99 uniform negatives the user never interacted with, drawn
/// from a generator seeded by `(seed, query index)`.
pub fn sampled_candidates(query: &EvalQuery, num_items: usize, seed: u64, index: usize) -> Result<Vec<usize>> {
    let seen: HashSet<usize> = query.interacted.iter().copied().chain([query.target]).collect();
    let available = (1..=num_items).filter(|i| !seen.contains(i)).count();
    if available < SAMPLED_NEGATIVES {
        return Err(Error::InvalidConfig(format!(
            "user with {} interactions leaves only {available} negatives in a catalog of {num_items}",
            seen.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(seed, index));
    let mut chosen = HashSet::with_capacity(SAMPLED_NEGATIVES);
    let mut out = Vec::with_capacity(SAMPLED_NEGATIVES + 1);
    out.push(query.target);
    while out.len() <= SAMPLED_NEGATIVES {
        let item = rng.random_range(1..=num_items);
        if !seen.contains(&item) && chosen.insert(item) {
            out.push(item);
        }
    }
    Ok(out)
}

pub fn sampled_eval_99<S: Scorer>(scorer: &S, queries: &[EvalQuery], seed: u64, exec: Exec) -> Result<MetricsReport> {
    let num_items = scorer.num_items();
    if num_items < SAMPLED_NEGATIVES + 1 {
        return Err(Error::InvalidConfig(format!(
            "sampled protocol needs at least {} items, catalog has {num_items}",
            SAMPLED_NEGATIVES + 1
        )));
    }
    let indexed: Vec<(usize, &EvalQuery)> = queries.iter().enumerate().collect();
    let ranks = exec
        .map(&indexed, |&(i, q)| {
            let candidates = sampled_candidates(q, num_items, seed, i)?;
            let scores = scorer.score_history(&q.history)?;
            rank_of_target(scores.as_slice().expect("contiguous scores"), q.target, &candidates)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&ranks, &DEFAULT_CUTOFFS, Protocol::Sampled99, Some(seed))
}

pub fn evaluate<S: Scorer>(
    scorer: &S,
    queries: &[EvalQuery],
    protocol: Protocol,
    mask_history: bool,
    seed: u64,
    exec: Exec,
) -> Result<MetricsReport> {
    match protocol {
        Protocol::Full => evaluate_full(scorer, queries, mask_history, exec),
        Protocol::Sampled99 => sampled_eval_99(scorer, queries, seed, exec),
    }
}
