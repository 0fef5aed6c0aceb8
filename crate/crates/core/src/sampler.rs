//! Rejection-filled batch sampling over the probability list.
//!
//! Candidates are drawn uniformly from the prompts not yet in the batch and
//! kept with probability `min(1, w_category * p_list)`. A rejected candidate
//! goes back into the pool. If `max_attempts` trials pass without filling the
//! batch, the remaining slots are taken greedily by acceptance probability and
//! the batch is flagged.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::curriculum::{ProbabilityList, PromptId};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        SamplerConfig {
            batch_size,
            max_attempts: batch_size.saturating_mul(2000),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_attempts < self.batch_size {
            return Err(Error::Config(format!(
                "max_attempts ({}) must be at least batch_size ({})",
                self.max_attempts, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub prompt_ids: Vec<PromptId>,
    /// Positions of the sampled prompts in the probability list, in
    /// acceptance order.
    pub indices: Vec<usize>,
    pub attempts_used: usize,
    pub iter: u64,
    /// Set when the attempt cap ran out and slots were filled greedily.
    pub fallback: bool,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `min(1, w * p_list)`.
#[inline]
pub fn acceptance_probability(p_list: f64, w: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_list) && w >= 0.0);
    (w * p_list).min(1.0)
}

/// Samples with a fresh generator seeded from `config.seed`.
pub fn sample_batch(list: &ProbabilityList, weights: &[f64], config: &SamplerConfig) -> Result<SampledBatch> {
    let mut rng = StreamRng::seed_from_u64(config.seed);
    sample_batch_with_rng(list, weights, config, &mut rng)
}

/// `weights[c]` is the calibration weight of category `c`.
pub fn sample_batch_with_rng<R: Rng + ?Sized>(
    list: &ProbabilityList,
    weights: &[f64],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<SampledBatch> {
    config.validate()?;
    let n = list.len();
    if config.batch_size > n {
        return Err(Error::InvalidInput(format!(
            "batch_size {} exceeds the {n} prompts available",
            config.batch_size
        )));
    }
    let accept: Vec<f64> = list
        .records()
        .iter()
        .map(|r| {
            let w = *weights.get(r.category).ok_or_else(|| {
                Error::InvalidInput(format!("no calibration weight for category {}", r.category))
            })?;
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidInput(format!("calibration weight {w} is invalid")));
            }
            Ok(acceptance_probability(r.p_list, w))
        })
        .collect::<Result<_>>()?;

    let mut pool: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::with_capacity(config.batch_size);
    let mut attempts = 0;
    while chosen.len() < config.batch_size && attempts < config.max_attempts {
        attempts += 1;
        let slot = rng.random_range(0..pool.len());
        let candidate = pool[slot];
        if rng.random::<f64>() < accept[candidate] {
            chosen.push(candidate);
            pool.swap_remove(slot);
        }
    }

    let fallback = chosen.len() < config.batch_size;
    if fallback {
        // highest acceptance first, list order among ties
        pool.sort_by(|&a, &b| accept[b].total_cmp(&accept[a]).then(a.cmp(&b)));
        let missing = config.batch_size - chosen.len();
        chosen.extend_from_slice(&pool[..missing]);
    }

    Ok(SampledBatch {
        prompt_ids: chosen.iter().map(|&i| list.record(i).id.clone()).collect(),
        indices: chosen,
        attempts_used: attempts,
        iter: list.iter(),
        fallback,
    })
}
