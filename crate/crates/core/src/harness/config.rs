//! Experiment configuration: a TOML tree with `run`, `strategy`, `sampler`,
//! `calibration` and `environment` sections. Every field has a default, so a
//! config file only needs the keys it changes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{validate_tiers, RewardMode, TierSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub strategy: StrategyConfig,
    pub sampler: SamplerSection,
    pub calibration: CalibrationSection,
    pub environment: EnvironmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub total_iterations: u64,
    pub seed: u64,
    /// Emit a metrics row every this many iterations (the last iteration is
    /// always logged).
    pub metrics_every: u64,
    /// Write an intermediate checkpoint every this many iterations; 0 keeps
    /// only the final one.
    pub checkpoint_every: u64,
    pub high_prob_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            total_iterations: 3000,
            seed: 0,
            metrics_every: 1,
            checkpoint_every: 0,
            high_prob_threshold: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[default]
    Cgpo,
    Uniform,
    StaticCurriculum,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Cgpo => "cgpo",
            StrategyKind::Uniform => "uniform",
            StrategyKind::StaticCurriculum => "static-curriculum",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgpo" => Ok(StrategyKind::Cgpo),
            "uniform" => Ok(StrategyKind::Uniform),
            "static-curriculum" => Ok(StrategyKind::StaticCurriculum),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Variance-driven list probabilities. Off means every prompt stays at 1.
    pub probability_sampling: bool,
    /// `+1/N` increment for prompts left out of a batch.
    pub exploration_balance: bool,
    /// Category weights `w = 1 + lambda v` on acceptance probabilities.
    pub category_calibration: bool,
    /// Iterations at which the static curriculum moves to the next tier.
    /// Empty splits the run into equal phases, one per tier.
    pub switch_points: Vec<u64>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Cgpo,
            probability_sampling: true,
            exploration_balance: true,
            category_calibration: true,
            switch_points: Vec::new(),
        }
    }
}

impl StrategyConfig {
    /// Short name used in logs and reports.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Cgpo => {
                let parts: Vec<&str> = [
                    (self.probability_sampling, "probability-sampling"),
                    (self.exploration_balance, "exploration-balance"),
                    (self.category_calibration, "category-calibration"),
                ]
                .iter()
                .filter_map(|&(on, name)| on.then_some(name))
                .collect();
                if parts.len() == 3 {
                    "cgpo".to_owned()
                } else {
                    format!("cgpo[{}]", parts.join("+"))
                }
            }
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub batch_size: usize,
    pub group_size: usize,
    pub max_attempts: usize,
    pub advantage_epsilon: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            batch_size: 48,
            group_size: 24,
            max_attempts: 100_000,
            advantage_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub lambda: f64,
    pub reward_floor: f64,
    /// Iterations per calibration refresh.
    pub period: u64,
    /// Blend factor for the period average; 1 replaces the previous mean.
    pub smoothing: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            lambda: crate::calibration::DEFAULT_LAMBDA,
            reward_floor: crate::calibration::DEFAULT_REWARD_FLOOR,
            period: 1,
            smoothing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub slope: f64,
    pub learn_rate: f64,
    pub initial_capability: f64,
    /// Starting per-category skill offsets; empty disables them.
    pub category_offsets: Vec<f64>,
    pub category_learn_rate: f64,
    pub reward_mode: RewardMode,
    pub reward_sigma: f64,
    pub tiers: Vec<TierSpec>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        // At the starting capability the tier centres sit near success
        // probabilities 0.6, 0.3 and 0.1.
        EnvironmentConfig {
            slope: 3.0,
            learn_rate: 4.0e-5,
            initial_capability: 0.0,
            category_offsets: Vec::new(),
            category_learn_rate: 0.0,
            reward_mode: RewardMode::Bernoulli,
            reward_sigma: 0.15,
            tiers: vec![
                TierSpec { size: 160, low: -0.35, high: 0.08, category: 0 },
                TierSpec { size: 160, low: 0.08, high: 0.49, category: 0 },
                TierSpec { size: 160, low: 0.49, high: 0.97, category: 0 },
            ],
        }
    }
}

impl EnvironmentConfig {
    pub fn category_count(&self) -> usize {
        let from_tiers = self.tiers.iter().map(|t| t.category + 1).max().unwrap_or(1);
        from_tiers.max(self.category_offsets.len())
    }

    pub fn prompt_count(&self) -> usize {
        self.tiers.iter().map(|t| t.size).sum()
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(message) => Error::Format {
                path: path.to_owned(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let r = &self.run;
        if r.metrics_every == 0 {
            return bad("run.metrics_every must be positive".into());
        }
        if !(r.high_prob_threshold > 0.0 && r.high_prob_threshold < 1.0) {
            return bad(format!("run.high_prob_threshold {} not in (0, 1)", r.high_prob_threshold));
        }
        let s = &self.sampler;
        if s.batch_size == 0 || s.group_size < 2 {
            return bad("sampler.batch_size must be >= 1 and sampler.group_size >= 2".into());
        }
        if s.max_attempts < s.batch_size {
            return bad("sampler.max_attempts must be at least sampler.batch_size".into());
        }
        if !(s.advantage_epsilon > 0.0) {
            return bad("sampler.advantage_epsilon must be positive".into());
        }
        let c = &self.calibration;
        if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
            return bad(format!("calibration.lambda {} must be >= 0", c.lambda));
        }
        if !(c.reward_floor > 0.0) || c.period == 0 || !(c.smoothing > 0.0 && c.smoothing <= 1.0) {
            return bad("calibration needs reward_floor > 0, period >= 1, smoothing in (0, 1]".into());
        }
        let e = &self.environment;
        validate_tiers(&e.tiers)?;
        if !(e.slope > 0.0 && e.learn_rate > 0.0 && e.category_learn_rate >= 0.0) {
            return bad("environment.slope and learn_rate must be positive".into());
        }
        if e.reward_mode == RewardMode::Gaussian && !(e.reward_sigma > 0.0) {
            return bad("environment.reward_sigma must be positive in gaussian mode".into());
        }
        if !e.category_offsets.is_empty() && e.category_offsets.len() != e.category_count() {
            return bad(format!(
                "environment.category_offsets has {} entries for {} categories",
                e.category_offsets.len(),
                e.category_count()
            ));
        }
        if s.batch_size > e.prompt_count() {
            return bad(format!(
                "sampler.batch_size {} exceeds the {} prompts in the environment",
                s.batch_size,
                e.prompt_count()
            ));
        }
        if self.strategy.switch_points.windows(2).any(|w| w[0] > w[1]) {
            return bad("strategy.switch_points must be non-decreasing".into());
        }
        Ok(())
    }

    /// Applies `key=value` overrides with dotted keys (`sampler.batch_size`,
    /// `environment.tiers.0.size`). The key must already exist; the value is
    /// read as a TOML literal, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
            let key = key.trim();
            let slot = lookup_mut(&mut tree, key).ok_or_else(|| Error::UnknownKey(key.to_owned()))?;
            *slot = parse_literal(value.trim());
        }
        let cfg: ExperimentConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Digest of everything that shapes the trajectory. Run length and
    /// checkpoint cadence are left out so a run can be resumed and extended.
    pub fn trajectory_hash(&self) -> String {
        let mut canon = self.clone();
        canon.run.total_iterations = 0;
        canon.run.checkpoint_every = 0;
        let json = serde_json::to_vec(&canon).expect("config serializes to JSON");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// True when two configs describe the same environment and training
    /// budget, differing at most in strategy and seed.
    pub fn same_setup(&self, other: &Self) -> bool {
        let strip = |c: &Self| {
            let mut c = c.clone();
            c.strategy = StrategyConfig::default();
            c.run.seed = 0;
            c.run.checkpoint_every = 0;
            c
        };
        strip(self) == strip(other)
    }
}

fn lookup_mut<'a>(mut node: &'a mut toml::Value, dotted: &str) -> Option<&'a mut toml::Value> {
    for part in dotted.split('.') {
        node = match node {
            toml::Value::Table(t) => t.get_mut(part)?,
            toml::Value::Array(a) => a.get_mut(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(node)
}

fn parse_literal(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(c.sampler.batch_size, 48);
        assert_eq!(c.sampler.group_size, 24);
        assert_eq!(c.calibration.lambda, 10.0);
        assert_eq!(c.run.high_prob_threshold, 0.7);
        assert_eq!(c.environment.tiers.len(), 3);
        assert!(c.environment.tiers.iter().all(|t| t.size == 160));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let partial = ExperimentConfig::from_toml_str("[strategy]\nkind = \"uniform\"\n").unwrap();
        assert_eq!(partial.strategy.kind, StrategyKind::Uniform);
        assert_eq!(partial.sampler, SamplerSection::default());
        assert!(ExperimentConfig::from_toml_str("[sampler]\nbatchsize = 3\n").is_err());
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "strategy.kind=uniform",
                "calibration.lambda=5",
                "environment.tiers.1.size=10",
                "run.seed = 9",
            ])
            .unwrap();
        assert_eq!(c.strategy.kind, StrategyKind::Uniform);
        assert_eq!(c.calibration.lambda, 5.0);
        assert_eq!(c.environment.tiers[1].size, 10);
        assert_eq!(c.run.seed, 9);

        let err = ExperimentConfig::default()
            .with_overrides(&["sampler.batch_sise=3"])
            .unwrap_err();
        assert!(matches!(err, Error::UnknownKey(k) if k == "sampler.batch_sise"));
        assert!(ExperimentConfig::default().with_overrides(&["sampler.batch_size"]).is_err());
        assert!(ExperimentConfig::default()
            .with_overrides(&["sampler.batch_size=many"])
            .is_err());
        assert!(ExperimentConfig::default()
            .with_overrides(&["strategy.kind=greedy"])
            .is_err());
    }

    #[test]
    fn labels() {
        let mut s = StrategyConfig::default();
        assert_eq!(s.label(), "cgpo");
        s.category_calibration = false;
        assert_eq!(s.label(), "cgpo[probability-sampling+exploration-balance]");
        s.kind = StrategyKind::StaticCurriculum;
        assert_eq!(s.label(), "static-curriculum");
    }

    #[test]
    fn hash_ignores_run_length_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.run.total_iterations = 17;
        b.run.checkpoint_every = 5;
        assert_eq!(a.trajectory_hash(), b.trajectory_hash());
        b.run.seed = 1;
        assert_ne!(a.trajectory_hash(), b.trajectory_hash());
        assert!(!a.same_setup(&b));
        b.run.total_iterations = a.run.total_iterations;
        b.strategy.kind = StrategyKind::Uniform;
        assert!(a.same_setup(&b));
        b.sampler.group_size = 8;
        assert!(!a.same_setup(&b));
    }

    #[test]
    fn validation_errors() {
        assert!(ExperimentConfig::default().with_overrides(&["run.high_prob_threshold=1.0"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["sampler.group_size=1"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["sampler.batch_size=481"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["calibration.lambda=-1"]).is_err());
    }
}
