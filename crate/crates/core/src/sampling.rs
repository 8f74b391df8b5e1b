//! Per-epoch paragraph sampling for training on multiple paragraphs.
//!
//! Each question keeps a ranked pool of its top paragraphs. Every epoch a
//! few distinct paragraphs are drawn by sequential weighted sampling without
//! replacement, with the highest-ranked answer paragraph weighted up.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{rank_linear, LinearRanker, PreparedQuestion};
use crate::error::{Error, Result};

/// Redraws allowed before the answer paragraph is forced into a sample.
pub const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingPlan {
    pub pool_size: usize,
    pub draws_per_epoch: usize,
    pub oversample_factor: f64,
    /// Every sample must contain an answer paragraph.
    pub require_answer: bool,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self::single_document()
    }
}

impl SamplingPlan {
    /// Top 4 paragraphs of one document.
    pub fn single_document() -> Self {
        SamplingPlan {
            pool_size: 4,
            draws_per_epoch: 2,
            oversample_factor: 2.0,
            require_answer: false,
        }
    }

    /// Top 16 paragraphs across several documents.
    pub fn multi_document() -> Self {
        SamplingPlan {
            pool_size: 16,
            ..Self::single_document()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.draws_per_epoch == 0 {
            return Err(Error::Config(
                "pool_size and draws_per_epoch must be positive".into(),
            ));
        }
        if self.draws_per_epoch > self.pool_size {
            return Err(Error::Config(format!(
                "draws_per_epoch {} exceeds pool_size {}",
                self.draws_per_epoch, self.pool_size
            )));
        }
        if !(self.oversample_factor >= 1.0 && self.oversample_factor.is_finite()) {
            return Err(Error::Config(format!(
                "oversample_factor must be >= 1, got {}",
                self.oversample_factor
            )));
        }
        Ok(())
    }
}

/// How pools are ordered: TF-IDF (the prepared order) or a trained ranker.
#[derive(Debug, Clone, Copy)]
pub enum PoolRanker<'a> {
    Tfidf,
    Linear(&'a LinearRanker),
}

/// A question restricted to its top paragraphs. `flagged` indexes the
/// highest-ranked paragraph that contains an answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub question: PreparedQuestion,
    pub flagged: usize,
}

/// Keeps the top `pool_size` groups under `ranker`. If no kept group has an
/// answer but a lower-ranked one does, the best such group replaces the last
/// slot. Returns `None` when the question has no answer paragraph at all.
pub fn build_pool(
    question: &PreparedQuestion,
    plan: &SamplingPlan,
    ranker: PoolRanker<'_>,
) -> Option<Pool> {
    let ranked = match ranker {
        PoolRanker::Tfidf => question.groups.clone(),
        PoolRanker::Linear(r) => {
            rank_linear(r, &question.question, question.groups.clone(), usize::MAX)
        }
    };
    let best_answer = ranked.iter().position(|g| g.has_answer)?;
    let k = plan.pool_size.min(ranked.len());
    let mut groups: Vec<_> = ranked[..k].to_vec();
    let flagged = if best_answer < k {
        best_answer
    } else {
        groups[k - 1] = ranked[best_answer].clone();
        k - 1
    };
    Some(Pool {
        question: PreparedQuestion {
            groups,
            ..question.clone()
        },
        flagged,
    })
}

/// Pools for every question with an answer paragraph, plus the number of
/// questions dropped for having none.
pub fn build_pools(
    questions: &[PreparedQuestion],
    plan: &SamplingPlan,
    ranker: PoolRanker<'_>,
) -> (Vec<Pool>, usize) {
    let mut pools = Vec::with_capacity(questions.len());
    let mut dropped = 0;
    for q in questions {
        match build_pool(q, plan, ranker) {
            Some(p) => pools.push(p),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} questions without an answer paragraph");
    }
    (pools, dropped)
}

/// Sequential draws without replacement; weights renormalize after each.
fn weighted_draws<R: Rng>(weights: &[f64], draws: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws.min(weights.len()) {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (slot, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = slot;
                break;
            }
            u -= weights[i];
        }
        out.push(remaining.remove(pick));
    }
    out
}

/// Indices into `pool.question.groups` for one epoch, in draw order. A pool
/// no larger than `draws_per_epoch` is returned whole.
pub fn epoch_sample<R: Rng>(pool: &Pool, plan: &SamplingPlan, rng: &mut R) -> Vec<usize> {
    let groups = &pool.question.groups;
    if groups.len() <= plan.draws_per_epoch {
        return (0..groups.len()).collect();
    }
    let weights: Vec<f64> = (0..groups.len())
        .map(|i| {
            if i == pool.flagged {
                plan.oversample_factor
            } else {
                1.0
            }
        })
        .collect();
    let mut sample = weighted_draws(&weights, plan.draws_per_epoch, rng);
    if plan.require_answer {
        let mut tries = 0;
        while !sample.iter().any(|&i| groups[i].has_answer) {
            if tries == MAX_REJECTIONS {
                let last = sample.len() - 1;
                sample[last] = pool.flagged;
                break;
            }
            sample = weighted_draws(&weights, plan.draws_per_epoch, rng);
            tries += 1;
        }
    }
    sample
}
