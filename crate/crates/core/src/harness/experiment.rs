//! The training loop against the synthetic learner.
//!
//! One iteration runs four stages in order: sample a batch with the
//! probabilities left by the previous iteration; generate reward groups and
//! take a learner step; turn group variances into batch-rescaled proposals;
//! update the probability list and the category state.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;

use crate::calibration::{CalibrationSchedule, CategoryState};
use crate::curriculum::{compute_advantages, compute_variance, rescale_values, ProbabilityList, RewardGroup};
use crate::error::{Error, Result};
use crate::harness::analysis::tier_occupancy;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{ExperimentConfig, StrategyKind};
use crate::harness::metrics::{IterationMetrics, MetricsHeader, MetricsWriter, METRICS_SCHEMA, METRICS_VERSION};
use crate::par;
use crate::rng::{control_rng, dataset_rng, reward_rng, RngState, StreamRng};
use crate::sampler::{sample_batch_with_rng, SamplerConfig};
use crate::sim::{make_tiered_dataset, SimLearner, SimPrompt};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    config_hash: String,
    prompts: Vec<SimPrompt>,
    tier_sizes: Vec<usize>,
    category_count: usize,
    list: ProbabilityList,
    categories: CategoryState,
    learner: SimLearner,
    rng: StreamRng,
}

/// In-memory result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub header: MetricsHeader,
    pub metrics: Vec<IterationMetrics>,
    pub checkpoint: Checkpoint,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = &config.environment;
        let prompts = make_tiered_dataset(&env.tiers, &mut dataset_rng(config.run.seed))?;
        let list = ProbabilityList::new(prompts.iter().map(|p| (p.id.clone(), p.category)))?;
        let category_count = env.category_count();
        let categories = CategoryState::with_schedule(
            category_count,
            config.calibration.lambda,
            config.calibration.reward_floor,
            CalibrationSchedule {
                period: config.calibration.period,
                smoothing: config.calibration.smoothing,
            },
        )?;
        let mut learner = SimLearner::new(env.initial_capability, env.slope, env.learn_rate)?;
        if !env.category_offsets.is_empty() || env.category_learn_rate > 0.0 {
            let offsets = if env.category_offsets.is_empty() {
                vec![0.0; category_count]
            } else {
                env.category_offsets.clone()
            };
            learner = learner.with_category_skills(offsets, env.category_learn_rate)?;
        }
        Ok(Experiment {
            config_hash: config.trajectory_hash(),
            tier_sizes: env.tiers.iter().map(|t| t.size).collect(),
            rng: control_rng(config.run.seed),
            config,
            prompts,
            category_count,
            list,
            categories,
            learner,
        })
    }

    /// Rebuilds a run from a checkpoint taken under the same config.
    pub fn from_checkpoint(config: ExperimentConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut exp = Experiment::new(config)?;
        if ckpt.config_hash != exp.config_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written under config {} but this config hashes to {}",
                ckpt.config_hash, exp.config_hash
            )));
        }
        let list = ckpt.probability_list()?;
        let same_prompts = list.len() == exp.prompts.len()
            && list
                .records()
                .iter()
                .zip(&exp.prompts)
                .all(|(r, p)| r.id == p.id && r.category == p.category);
        if !same_prompts {
            return Err(Error::Checkpoint("probability list does not match the prompt set".into()));
        }
        if ckpt.categories.category_count() != exp.category_count {
            return Err(Error::Checkpoint("category count mismatch".into()));
        }
        exp.list = list;
        exp.categories = ckpt.categories.clone();
        exp.learner = ckpt.learner.clone();
        exp.rng = ckpt.rng.restore()?;
        Ok(exp)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn iter(&self) -> u64 {
        self.list.iter()
    }

    pub fn is_finished(&self) -> bool {
        self.iter() >= self.config.run.total_iterations
    }

    pub fn prompts(&self) -> &[SimPrompt] {
        &self.prompts
    }

    pub fn probability_list(&self) -> &ProbabilityList {
        &self.list
    }

    pub fn category_state(&self) -> &CategoryState {
        &self.categories
    }

    pub fn learner(&self) -> &SimLearner {
        &self.learner
    }

    pub fn header(&self) -> MetricsHeader {
        MetricsHeader {
            schema: METRICS_SCHEMA.into(),
            version: METRICS_VERSION,
            config_hash: self.config_hash.clone(),
            strategy: self.config.strategy.label(),
            seed: self.config.run.seed,
            total_iterations: self.config.run.total_iterations,
            high_prob_threshold: self.config.run.high_prob_threshold,
            tier_sizes: self.tier_sizes.clone(),
            category_count: self.category_count,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            self.config_hash.clone(),
            &self.list,
            self.categories.clone(),
            self.learner.clone(),
            RngState::capture(&self.rng),
        )
    }

    fn calibration_active(&self) -> bool {
        let s = &self.config.strategy;
        // with a single category the fairness problem is trivial (q = 1) and
        // a uniform multiplier 1 + lambda would only inflate every acceptance
        s.kind == StrategyKind::Cgpo && s.category_calibration && self.category_count >= 2
    }

    /// Weights the sampler will use in the next iteration.
    pub fn applied_weights(&self) -> Vec<f64> {
        if self.calibration_active() {
            self.categories.weights.clone()
        } else {
            vec![1.0; self.category_count]
        }
    }

    fn should_log(&self, iter: u64) -> bool {
        iter.is_multiple_of(self.config.run.metrics_every) || iter == self.config.run.total_iterations
    }

    /// Metrics of the current state with no batch statistics (used for the
    /// initialization row).
    pub fn snapshot_metrics(&self) -> IterationMetrics {
        self.metrics_row(None)
    }

    fn metrics_row(&self, batch: Option<BatchStats>) -> IterationMetrics {
        let n_tiers = self.tier_sizes.len();
        let tiers: Vec<usize> = self.prompts.iter().map(|p| p.tier).collect();
        let (batch_tiers, batch_categories) = match &batch {
            Some(b) => {
                let mut t = vec![0; n_tiers];
                let mut c = vec![0; self.category_count];
                for &i in &b.indices {
                    t[self.prompts[i].tier] += 1;
                    c[self.prompts[i].category] += 1;
                }
                (t, c)
            }
            None => (vec![0; n_tiers], vec![0; self.category_count]),
        };
        let records = self.list.records();
        IterationMetrics {
            iter: self.iter(),
            reward_avg: batch.as_ref().map(|b| b.reward_avg),
            reward_std_mean: batch.as_ref().map(|b| b.reward_std_mean),
            eval_reward: self.learner.expected_reward(&self.prompts, self.category_count),
            capability: self.learner.capability,
            mean_p_list: records.iter().map(|r| r.p_list).sum::<f64>() / records.len() as f64,
            tier_high_prob: tier_occupancy(&self.list, &tiers, n_tiers, self.config.run.high_prob_threshold),
            never_sampled: records.iter().filter(|r| r.last_sampled_iter.is_none()).count(),
            category_mean_rewards: self.categories.mean_rewards.clone(),
            category_weights: batch
                .as_ref()
                .map_or_else(|| self.applied_weights(), |b| b.weights.clone()),
            batch_tiers,
            batch_categories,
            degenerate_groups: batch.as_ref().map(|b| b.degenerate_groups),
            sampler_attempts: batch.as_ref().map(|b| b.attempts),
            fallback: batch.as_ref().is_some_and(|b| b.fallback),
        }
    }

    fn draw_batch(&mut self, weights: &[f64]) -> Result<(Vec<usize>, usize, bool)> {
        let s = &self.config.sampler;
        match self.config.strategy.kind {
            StrategyKind::Cgpo | StrategyKind::Uniform => {
                let cfg = SamplerConfig {
                    batch_size: s.batch_size,
                    max_attempts: s.max_attempts,
                    seed: self.config.run.seed,
                };
                let b = sample_batch_with_rng(&self.list, weights, &cfg, &mut self.rng)?;
                Ok((b.indices, b.attempts_used, b.fallback))
            }
            StrategyKind::StaticCurriculum => {
                let phase = self.static_phase();
                // current tier first, then later tiers, then earlier ones
                let n_tiers = self.tier_sizes.len();
                let order: Vec<usize> = (phase..n_tiers).chain(0..phase).collect();
                let mut chosen = Vec::with_capacity(s.batch_size);
                for tier in order {
                    let need = s.batch_size - chosen.len();
                    if need == 0 {
                        break;
                    }
                    let pool: Vec<usize> = (0..self.prompts.len())
                        .filter(|&i| self.prompts[i].tier == tier)
                        .collect();
                    let take = need.min(pool.len());
                    chosen.extend(sample_indices(&mut self.rng, pool.len(), take).into_iter().map(|j| pool[j]));
                }
                let attempts = chosen.len();
                Ok((chosen, attempts, false))
            }
        }
    }

    /// Tier the static curriculum trains on in the upcoming iteration.
    fn static_phase(&self) -> usize {
        let n_tiers = self.tier_sizes.len();
        let t = self.iter();
        let switches = &self.config.strategy.switch_points;
        let phase = if switches.is_empty() {
            let total = self.config.run.total_iterations.max(1);
            (t * n_tiers as u64 / total) as usize
        } else {
            switches.iter().filter(|&&s| t >= s).count()
        };
        phase.min(n_tiers - 1)
    }

    /// Runs one iteration and returns its metrics row.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let iter_no = self.iter() + 1;
        self.step_inner(iter_no).map_err(|e| e.at_iter(iter_no))
    }

    fn step_inner(&mut self, iter_no: u64) -> Result<IterationMetrics> {
        let weights = self.applied_weights();

        // 1. sampling
        let (indices, attempts, fallback) = self.draw_batch(&weights)?;

        // 2. rewards, advantages, learner update
        let seed = self.config.run.seed;
        let env = &self.config.environment;
        let group_size = self.config.sampler.group_size;
        let learner = &self.learner;
        let prompts = &self.prompts;
        let groups: Vec<RewardGroup> = par::map_slice(&indices, |&i| {
            let mut rng = reward_rng(seed, iter_no, i);
            learner.generate_rewards(&prompts[i], group_size, env.reward_mode, env.reward_sigma, &mut rng)
        })
        .into_iter()
        .collect::<Result<_>>()?;

        let mut degenerate = 0;
        for g in &groups {
            if compute_advantages(g, self.config.sampler.advantage_epsilon)?.is_degenerate() {
                degenerate += 1;
            }
        }
        let batch_prompts: Vec<&SimPrompt> = indices.iter().map(|&i| &self.prompts[i]).collect();
        self.learner.train_step(&batch_prompts)?;

        // 3. proposals from batch-rescaled variances
        let variances: Vec<f64> = groups.iter().map(compute_variance).collect();
        let proposals = rescale_values(&variances)?;

        // 4. probability and category updates
        let strategy = &self.config.strategy;
        if strategy.kind == StrategyKind::Cgpo && strategy.probability_sampling {
            let pairs: Vec<(usize, f64)> = indices.iter().copied().zip(proposals).collect();
            self.list.update_by_index(&pairs, strategy.exploration_balance)?;
        } else {
            self.list.record_batch(&indices)?;
        }
        let mut by_category: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&i, g) in indices.iter().zip(&groups) {
            by_category.entry(self.prompts[i].category).or_default().push(g.mean());
        }
        self.categories.update(&by_category)?;

        let total: f64 = groups.iter().flat_map(|g| g.rewards()).sum();
        let count: usize = groups.iter().map(|g| g.group_size()).sum();
        let stats = BatchStats {
            reward_avg: total / count as f64,
            reward_std_mean: groups.iter().map(|g| g.std()).sum::<f64>() / groups.len() as f64,
            degenerate_groups: degenerate,
            attempts,
            fallback,
            weights,
            indices,
        };
        Ok(self.metrics_row(Some(stats)))
    }

    /// Runs to `total_iterations`, handing every logged row to `on_row`.
    pub fn run_with<F>(&mut self, mut on_row: F) -> Result<()>
    where
        F: FnMut(&Experiment, &IterationMetrics) -> Result<()>,
    {
        while !self.is_finished() {
            let row = self.step()?;
            if self.should_log(row.iter) {
                on_row(self, &row)?;
            }
        }
        Ok(())
    }
}

struct BatchStats {
    reward_avg: f64,
    reward_std_mean: f64,
    degenerate_groups: usize,
    attempts: usize,
    fallback: bool,
    weights: Vec<f64>,
    indices: Vec<usize>,
}

/// Runs a config from scratch and keeps everything in memory. The first
/// metrics row is the initialization state at iteration 0.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut exp = Experiment::new(config.clone())?;
    let mut metrics = vec![exp.snapshot_metrics()];
    exp.run_with(|_, row| {
        metrics.push(row.clone());
        Ok(())
    })?;
    Ok(RunOutput {
        header: exp.header(),
        metrics,
        checkpoint: exp.checkpoint(),
    })
}

/// Runs a config writing `metrics.jsonl`, periodic checkpoints and the final
/// `checkpoint.json` into `out_dir`.
pub fn run_to_dir(config: &ExperimentConfig, out_dir: &Path) -> Result<Experiment> {
    std::fs::create_dir_all(out_dir)?;
    let mut exp = Experiment::new(config.clone())?;
    let file = File::create(out_dir.join(METRICS_FILE))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file), &exp.header())?;
    writer.write(&exp.snapshot_metrics())?;
    drive(&mut exp, &mut writer, out_dir)?;
    Ok(exp)
}

/// Continues a run from `checkpoint`. Rows after the checkpoint's iteration
/// are dropped from an existing `metrics.jsonl` in `out_dir` and regenerated.
pub fn resume_to_dir(config: &ExperimentConfig, checkpoint: &Path, out_dir: &Path) -> Result<Experiment> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut exp = Experiment::from_checkpoint(config.clone(), &ckpt)?;
    let log_path = out_dir.join(METRICS_FILE);
    let mut writer = if log_path.exists() {
        let keep = truncate_log_after(&log_path, ckpt.iter)?;
        let mut file = OpenOptions::new().write(true).open(&log_path)?;
        file.set_len(keep)?;
        file.seek(SeekFrom::End(0))?;
        MetricsWriter::append(BufWriter::new(file))
    } else {
        let file = File::create(&log_path)?;
        MetricsWriter::new(BufWriter::new(file), &exp.header())?
    };
    drive(&mut exp, &mut writer, out_dir)?;
    Ok(exp)
}

fn drive<W: Write>(exp: &mut Experiment, writer: &mut MetricsWriter<W>, out_dir: &Path) -> Result<()> {
    let every = exp.config.run.checkpoint_every;
    while !exp.is_finished() {
        let row = exp.step()?;
        if exp.should_log(row.iter) {
            writer.write(&row)?;
        }
        if every > 0 && row.iter % every == 0 {
            writer.flush()?;
            exp.checkpoint().save(&periodic_checkpoint_path(out_dir, row.iter))?;
        }
    }
    writer.flush()?;
    exp.checkpoint().save(&out_dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

pub fn periodic_checkpoint_path(out_dir: &Path, iter: u64) -> PathBuf {
    out_dir.join(format!("checkpoint-{iter:06}.json"))
}

/// Byte length of the log prefix holding the header and rows up to `iter`.
fn truncate_log_after(path: &Path, iter: u64) -> Result<u64> {
    #[derive(serde::Deserialize)]
    struct IterOnly {
        iter: u64,
    }
    let mut reader = BufReader::new(File::open(path)?);
    let mut keep = 0u64;
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !first {
            let row: IterOnly = serde_json::from_str(&line)?;
            if row.iter > iter {
                break;
            }
        }
        first = false;
        keep += n as u64;
    }
    Ok(keep)
}
