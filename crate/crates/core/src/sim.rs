//! Synthetic learner standing in for a generative model and its reward model.
//!
//! Each prompt has a latent difficulty `d`. The learner has a global
//! capability `theta` and, optionally, one offset per category; a prompt is
//! solved with probability `sigmoid(slope * (theta + offset_c - d))`. Group
//! rewards are independent draws around that probability, so the expected
//! group variance in Bernoulli mode is `p (1 - p)`, largest at `p = 0.5`.
//!
//! Training moves capability by `learn_rate * sum_batch p (1 - p)`: prompts
//! the learner always or never solves teach it nothing. None of these
//! dynamics are measured from a real model; they are a controlled
//! environment for exercising the sampler.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::curriculum::{PromptId, RewardGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimPrompt {
    pub id: PromptId,
    pub category: usize,
    pub difficulty: f64,
    /// Index into the tier list the dataset was built from.
    pub tier: usize,
}

/// One difficulty stratum: `size` prompts with difficulty uniform in
/// `[low, high)`, all in `category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub size: usize,
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub category: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    #[default]
    Bernoulli,
    /// `Normal(p, sigma)` clipped to `[0, 1]`.
    Gaussian,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Learning signal of a prompt solved with probability `p`.
#[inline]
pub fn gain(p: f64) -> f64 {
    p * (1.0 - p)
}

/// Validates tier ranges: each tier non-empty with `low <= high`, and tiers
/// of the same category listed in increasing, non-overlapping order.
pub fn validate_tiers(tiers: &[TierSpec]) -> Result<()> {
    if tiers.is_empty() {
        return Err(Error::Config("environment needs at least one tier".into()));
    }
    for (i, t) in tiers.iter().enumerate() {
        if t.size == 0 {
            return Err(Error::Config(format!("tier {} is empty", i + 1)));
        }
        if !(t.low.is_finite() && t.high.is_finite() && t.low <= t.high) {
            return Err(Error::Config(format!(
                "tier {} has invalid difficulty range [{}, {}]",
                i + 1,
                t.low,
                t.high
            )));
        }
        if let Some(prev) = tiers[..i].iter().rev().find(|p| p.category == t.category) {
            if prev.high > t.low {
                return Err(Error::Config(format!(
                    "tier {} overlaps or precedes the previous tier of category {}",
                    i + 1,
                    t.category
                )));
            }
        }
    }
    Ok(())
}

/// Builds the prompt set, tier by tier. Ids are `t<tier>-<n>` with 1-based
/// tier numbers.
pub fn make_tiered_dataset<R: Rng + ?Sized>(tiers: &[TierSpec], rng: &mut R) -> Result<Vec<SimPrompt>> {
    validate_tiers(tiers)?;
    let mut prompts = Vec::with_capacity(tiers.iter().map(|t| t.size).sum());
    for (tier, spec) in tiers.iter().enumerate() {
        for n in 0..spec.size {
            let difficulty = if spec.high > spec.low {
                rng.random_range(spec.low..spec.high)
            } else {
                spec.low
            };
            prompts.push(SimPrompt {
                id: PromptId(format!("t{}-{:03}", tier + 1, n)),
                category: spec.category,
                difficulty,
                tier,
            });
        }
    }
    Ok(prompts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLearner {
    pub capability: f64,
    /// Empty when per-category skills are disabled.
    pub category_offsets: Vec<f64>,
    pub slope: f64,
    pub learn_rate: f64,
    pub category_learn_rate: f64,
}

impl SimLearner {
    pub fn new(capability: f64, slope: f64, learn_rate: f64) -> Result<Self> {
        if !(slope > 0.0 && learn_rate > 0.0 && capability.is_finite()) {
            return Err(Error::Config(format!(
                "learner needs slope > 0 and learn_rate > 0 (got {slope}, {learn_rate})"
            )));
        }
        Ok(SimLearner {
            capability,
            category_offsets: Vec::new(),
            slope,
            learn_rate,
            category_learn_rate: 0.0,
        })
    }

    /// Enables per-category skills starting at `offsets`.
    pub fn with_category_skills(mut self, offsets: Vec<f64>, learn_rate: f64) -> Result<Self> {
        if !(learn_rate >= 0.0) || offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("invalid per-category learner settings".into()));
        }
        self.category_offsets = offsets;
        self.category_learn_rate = learn_rate;
        Ok(self)
    }

    pub fn effective_capability(&self, category: usize) -> f64 {
        self.capability + self.category_offsets.get(category).copied().unwrap_or(0.0)
    }

    pub fn success_probability(&self, prompt: &SimPrompt) -> f64 {
        sigmoid(self.slope * (self.effective_capability(prompt.category) - prompt.difficulty))
    }

    /// `group_size` independent rewards for `prompt`.
    pub fn generate_rewards<R: Rng + ?Sized>(
        &self,
        prompt: &SimPrompt,
        group_size: usize,
        mode: RewardMode,
        sigma: f64,
        rng: &mut R,
    ) -> Result<RewardGroup> {
        let p = self.success_probability(prompt);
        let rewards = match mode {
            RewardMode::Bernoulli => (0..group_size)
                .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect(),
            RewardMode::Gaussian => {
                if !(sigma > 0.0) {
                    return Err(Error::Config(format!("reward sigma must be positive, got {sigma}")));
                }
                let normal = Normal::new(p, sigma)
                    .map_err(|e| Error::Config(format!("reward sigma {sigma}: {e}")))?;
                (0..group_size)
                    .map(|_| normal.sample(rng).clamp(0.0, 1.0))
                    .collect()
            }
        };
        RewardGroup::new(prompt.id.clone(), rewards)
    }

    /// Applies one policy update for `batch` and returns the change in global
    /// capability. Gains are evaluated at the pre-update state.
    pub fn train_step(&mut self, batch: &[&SimPrompt]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("training batch is empty".into()));
        }
        let gains: Vec<(usize, f64)> = batch
            .iter()
            .map(|p| (p.category, gain(self.success_probability(p))))
            .collect();
        let delta = self.learn_rate * gains.iter().map(|(_, g)| g).sum::<f64>();
        self.capability += delta;
        if !self.category_offsets.is_empty() {
            for (cat, g) in gains {
                if let Some(off) = self.category_offsets.get_mut(cat) {
                    *off += self.category_learn_rate * g;
                }
            }
        }
        Ok(delta)
    }

    /// Expected reward on the whole prompt set, averaged within each category
    /// and then across categories.
    pub fn expected_reward(&self, prompts: &[SimPrompt], category_count: usize) -> f64 {
        let mut sums = vec![0.0; category_count];
        let mut counts = vec![0usize; category_count];
        for p in prompts {
            sums[p.category] += self.success_probability(p);
            counts[p.category] += 1;
        }
        let (total, seen) = sums
            .iter()
            .zip(&counts)
            .filter(|(_, &n)| n > 0)
            .fold((0.0, 0usize), |(t, k), (s, &n)| (t + s / n as f64, k + 1));
        total / seen as f64
    }
}
