//! Line-delimited metrics log: one JSON header line followed by one JSON
//! object per logged iteration.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "cgpo-metrics";
pub const METRICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub schema: String,
    pub version: u32,
    pub config_hash: String,
    pub strategy: String,
    pub seed: u64,
    pub total_iterations: u64,
    pub high_prob_threshold: f64,
    pub tier_sizes: Vec<usize>,
    pub category_count: usize,
}

/// Snapshot after one iteration. Iteration 0 is the initial state and has
/// no batch, so its batch statistics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: u64,
    /// Mean of all rewards in the batch.
    pub reward_avg: Option<f64>,
    /// Mean of the per-group population standard deviations.
    pub reward_std_mean: Option<f64>,
    /// Expected reward of the learner over the whole prompt set,
    /// category-balanced.
    pub eval_reward: f64,
    pub capability: f64,
    pub mean_p_list: f64,
    /// Per tier, prompts with `p_list` above the high-probability threshold.
    pub tier_high_prob: Vec<usize>,
    pub never_sampled: usize,
    pub category_mean_rewards: Vec<f64>,
    /// Weights the sampler used this iteration.
    pub category_weights: Vec<f64>,
    pub batch_tiers: Vec<usize>,
    pub batch_categories: Vec<usize>,
    pub degenerate_groups: Option<usize>,
    pub sampler_attempts: Option<usize>,
    pub fallback: bool,
}

/// Writes the header on creation, then one line per row.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, header: &MetricsHeader) -> Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(MetricsWriter { out })
    }

    /// Continues an existing log without writing a header.
    pub fn append(out: W) -> Self {
        MetricsWriter { out }
    }

    pub fn write(&mut self, row: &IterationMetrics) -> Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A parsed metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub header: MetricsHeader,
    pub rows: Vec<IterationMetrics>,
}

impl MetricsLog {
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("metrics log is empty".into()))??;
        let header: MetricsHeader = serde_json::from_str(&first)?;
        if header.schema != METRICS_SCHEMA || header.version != METRICS_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported metrics schema {} v{}",
                header.schema, header.version
            )));
        }
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                rows.push(serde_json::from_str(&line)?);
            }
        }
        Ok(MetricsLog { header, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::read(std::io::BufReader::new(file)).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}
