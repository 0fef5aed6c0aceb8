//! One experiment per value of a single config key.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::RunOutput;
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub key: String,
    pub values: Vec<String>,
}

impl Grid {
    /// Parses `key=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid `{spec}` is not key=v1,v2,...")))?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_owned())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid for `{}` has no values", key.trim())));
        }
        Ok(Grid {
            key: key.trim().to_owned(),
            values,
        })
    }

    /// One config per grid value. Fails only if the key does not exist.
    pub fn configs(&self, base: &ExperimentConfig) -> Result<Vec<Result<ExperimentConfig>>> {
        // probe with the first value so a misspelt key is a hard error
        if let Err(e @ Error::UnknownKey(_)) = base.with_overrides(&[format!("{}={}", self.key, self.values[0])]) {
            return Err(e);
        }
        Ok(self
            .values
            .iter()
            .map(|v| base.with_overrides(&[format!("{}={v}", self.key)]))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub final_eval_reward: Option<f64>,
    pub final_reward_avg: Option<f64>,
    pub error: Option<String>,
}

/// Runs every grid point (in parallel when enabled). A failing point is
/// recorded and the others still run. `run` receives the point's index and
/// config.
pub fn run_sweep<F>(base: &ExperimentConfig, grid: &Grid, run: F) -> Result<Vec<SweepPoint>>
where
    F: Fn(usize, &ExperimentConfig) -> Result<RunOutput> + Sync + Send,
{
    let configs = grid.configs(base)?;
    let points = par::map_indexed(configs.len(), |i| {
        let value = grid.values[i].clone();
        let outcome = configs[i].as_ref().map_err(|e| e.to_string()).and_then(|cfg| {
            run(i, cfg).map_err(|e| e.to_string())
        });
        match outcome {
            Ok(out) => {
                let last = out.metrics.last();
                SweepPoint {
                    value,
                    final_eval_reward: last.map(|m| m.eval_reward),
                    final_reward_avg: last.and_then(|m| m.reward_avg),
                    error: None,
                }
            }
            Err(e) => SweepPoint {
                value,
                final_eval_reward: None,
                final_reward_avg: None,
                error: Some(e),
            },
        }
    });
    Ok(points)
}
