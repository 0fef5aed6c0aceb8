//! Probability list and the per-iteration update mathematics.
//!
//! Every prompt starts with list probability `1`. After each iteration the
//! sampled prompts receive a proposal derived from the variance of their
//! reward group (min-max rescaled within the batch) and take the mean of
//! their last three proposals; prompts left out of the batch drift upwards
//! by `1/N` so that none of them is neglected forever.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of proposals kept for smoothing.
pub const HISTORY_LEN: usize = 3;

/// Opaque prompt identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub String);

impl PromptId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PromptId {
    fn from(s: &str) -> Self {
        PromptId(s.to_owned())
    }
}

impl From<String> for PromptId {
    fn from(s: String) -> Self {
        PromptId(s)
    }
}

/// One prompt's entry in the probability list.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecord {
    pub id: PromptId,
    pub category: usize,
    pub p_list: f64,
    var_history: VecDeque<f64>,
    pub last_sampled_iter: Option<u64>,
    // p_list = min(1, anchor + idle / N); kept apart so the increments do
    // not accumulate rounding error.
    anchor: f64,
    idle: u64,
}

impl PromptRecord {
    fn new(id: PromptId, category: usize) -> Self {
        PromptRecord {
            id,
            category,
            p_list: 1.0,
            var_history: VecDeque::with_capacity(HISTORY_LEN),
            last_sampled_iter: None,
            anchor: 1.0,
            idle: 0,
        }
    }

    /// Most recent proposals, oldest first.
    pub fn var_history(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.var_history.iter().copied()
    }

    fn push_proposal(&mut self, proposal: f64) {
        if self.var_history.len() == HISTORY_LEN {
            self.var_history.pop_front();
        }
        self.var_history.push_back(proposal);
    }

    fn smoothed(&self) -> f64 {
        self.var_history.iter().sum::<f64>() / self.var_history.len() as f64
    }

    fn set_anchor(&mut self, p: f64) {
        self.anchor = p;
        self.idle = 0;
        self.p_list = p;
    }

    fn explore(&mut self, n: usize) {
        self.idle += 1;
        self.p_list = (self.anchor + self.idle as f64 / n as f64).min(1.0);
    }
}

/// All prompts with their list probabilities, plus the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityList {
    records: Vec<PromptRecord>,
    index: HashMap<PromptId, usize>,
    iter: u64,
}

impl ProbabilityList {
    /// Every prompt starts at probability 1 with an empty history.
    pub fn new<I, S>(prompts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<PromptId>,
    {
        let records: Vec<PromptRecord> = prompts
            .into_iter()
            .map(|(id, cat)| PromptRecord::new(id.into(), cat))
            .collect();
        Self::from_records(records, 0)
    }

    fn from_records(records: Vec<PromptRecord>, iter: u64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("probability list needs at least one prompt".into()));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let id = r.id.as_str();
            if id.is_empty() || id.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidInput(format!(
                    "prompt id {id:?} must be non-empty and free of tabs and newlines"
                )));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.0.clone()));
            }
        }
        Ok(ProbabilityList { records, index, iter })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of completed updates.
    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn records(&self) -> &[PromptRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &PromptRecord {
        &self.records[idx]
    }

    pub fn get(&self, id: &PromptId) -> Option<&PromptRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn index_of(&self, id: &PromptId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Overwrites a probability directly. Used by tests and tooling; training
    /// goes through [`update_probabilities`](Self::update_probabilities).
    pub fn set_probability(&mut self, idx: usize, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        self.records[idx].set_anchor(p);
        Ok(())
    }

    /// Applies one update with the exploration increment enabled.
    pub fn update_probabilities(&mut self, proposals: &BTreeMap<PromptId, f64>) -> Result<()> {
        self.update_probabilities_with(proposals, true)
    }

    /// One update step. The batch is the key set of `proposals`.
    ///
    /// Batch members push their proposal into the history and take the mean
    /// of what the history holds (one to three entries). Everyone else gets
    /// `min(1, p + 1/N)` when `exploration_balance` is set and is left alone
    /// otherwise. Validation happens before any record is touched.
    pub fn update_probabilities_with(
        &mut self,
        proposals: &BTreeMap<PromptId, f64>,
        exploration_balance: bool,
    ) -> Result<()> {
        let mut batch = Vec::with_capacity(proposals.len());
        for (id, &p) in proposals {
            let idx = self
                .index_of(id)
                .ok_or_else(|| Error::UnknownId(id.0.clone()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "proposal {p} for `{id}` outside [0, 1]"
                )));
            }
            batch.push((idx, p));
        }
        self.apply_update(&batch, exploration_balance);
        Ok(())
    }

    /// Index-based form of the update for callers that already resolved ids.
    /// Indices must be distinct and in range; proposals in `[0, 1]`.
    pub fn update_by_index(&mut self, batch: &[(usize, f64)], exploration_balance: bool) -> Result<()> {
        let mut seen = vec![false; self.records.len()];
        for &(idx, p) in batch {
            if idx >= self.records.len() {
                return Err(Error::InvalidInput(format!("prompt index {idx} out of range")));
            }
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::DuplicateId(self.records[idx].id.0.clone()));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("proposal {p} outside [0, 1]")));
            }
        }
        self.apply_update(batch, exploration_balance);
        Ok(())
    }

    /// Advances the iteration counter and marks `indices` as sampled without
    /// touching any probability. Used by strategies that keep the list fixed.
    pub fn record_batch(&mut self, indices: &[usize]) -> Result<()> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.records.len()) {
            return Err(Error::InvalidInput(format!("prompt index {bad} out of range")));
        }
        self.iter += 1;
        for &i in indices {
            self.records[i].last_sampled_iter = Some(self.iter);
        }
        Ok(())
    }

    fn apply_update(&mut self, batch: &[(usize, f64)], exploration_balance: bool) {
        let next_iter = self.iter + 1;
        let mut in_batch = vec![false; self.records.len()];
        for &(idx, proposal) in batch {
            in_batch[idx] = true;
            let rec = &mut self.records[idx];
            rec.push_proposal(proposal);
            let p = rec.smoothed().clamp(0.0, 1.0);
            rec.set_anchor(p);
            rec.last_sampled_iter = Some(next_iter);
        }
        if exploration_balance {
            let n = self.records.len();
            for (rec, _) in self.records.iter_mut().zip(&in_batch).filter(|(_, &b)| !b) {
                rec.explore(n);
            }
        }
        self.iter = next_iter;
    }

    /// Writes the line-oriented checkpoint: a header with `iter` and `N`,
    /// then one tab-separated record per prompt (id, category, p_list,
    /// history, last sampled iteration, exploration anchor, idle updates).
    /// Floats are written with 17 significant digits so a read-back is
    /// bit-exact.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "cgpo-plist\tv1\titer={}\tn={}", self.iter, self.records.len())?;
        for r in &self.records {
            let hist = if r.var_history.is_empty() {
                "-".to_owned()
            } else {
                r.var_history
                    .iter()
                    .map(|h| format!("{h:.16e}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let last = r
                .last_sampled_iter
                .map_or_else(|| "-".to_owned(), |t| t.to_string());
            writeln!(
                w,
                "{}\t{}\t{:.16e}\t{}\t{}\t{:.16e}\t{}",
                r.id, r.category, r.p_list, hist, last, r.anchor, r.idle
            )?;
        }
        Ok(())
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("checkpoint is ASCII plus prompt ids")
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty probability list".into()))??;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 4 || fields[0] != "cgpo-plist" || fields[1] != "v1" {
            return Err(bad(format!("unrecognised header {header:?}")));
        }
        let iter: u64 = parse_kv(fields[2], "iter")?;
        let n: usize = parse_kv(fields[3], "n")?;

        let mut records = Vec::with_capacity(n);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(bad(format!("record {}: expected 7 columns, got {}", lineno + 1, cols.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| bad(format!("record {}: bad number {s:?}: {e}", lineno + 1)))
            };
            let mut rec = PromptRecord::new(PromptId(cols[0].to_owned()), 0);
            rec.category = cols[1]
                .parse()
                .map_err(|e| bad(format!("record {}: bad category: {e}", lineno + 1)))?;
            rec.p_list = num(cols[2])?;
            if !(0.0..=1.0).contains(&rec.p_list) {
                return Err(bad(format!("record {}: p_list outside [0, 1]", lineno + 1)));
            }
            if cols[3] != "-" {
                for h in cols[3].split(',') {
                    let h = num(h)?;
                    if !(0.0..=1.0).contains(&h) || rec.var_history.len() == HISTORY_LEN {
                        return Err(bad(format!("record {}: invalid history", lineno + 1)));
                    }
                    rec.var_history.push_back(h);
                }
            }
            if cols[4] != "-" {
                rec.last_sampled_iter = Some(
                    cols[4]
                        .parse()
                        .map_err(|e| bad(format!("record {}: bad iteration: {e}", lineno + 1)))?,
                );
            }
            rec.anchor = num(cols[5])?;
            if !(0.0..=1.0).contains(&rec.anchor) {
                return Err(bad(format!("record {}: anchor outside [0, 1]", lineno + 1)));
            }
            rec.idle = cols[6]
                .parse()
                .map_err(|e| bad(format!("record {}: bad idle count: {e}", lineno + 1)))?;
            records.push(rec);
        }
        if records.len() != n {
            return Err(bad(format!("header declares {n} records, found {}", records.len())));
        }
        Self::from_records(records, iter)
    }
}

fn parse_kv<T: std::str::FromStr>(field: &str, key: &str) -> Result<T> {
    field
        .strip_prefix(key)
        .and_then(|s| s.strip_prefix('='))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("expected `{key}=<value>`, got {field:?}")))
}

/// The `G` rewards one prompt received in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardGroup {
    pub prompt_id: PromptId,
    rewards: Vec<f64>,
}

impl RewardGroup {
    pub fn new(prompt_id: impl Into<PromptId>, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() < 2 {
            return Err(Error::InvalidGroup(format!(
                "group size {} is below the minimum of 2",
                rewards.len()
            )));
        }
        if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidGroup(format!("non-finite reward {bad}")));
        }
        Ok(RewardGroup {
            prompt_id: prompt_id.into(),
            rewards,
        })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn group_size(&self) -> usize {
        self.rewards.len()
    }

    pub fn mean(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        compute_variance(self).sqrt()
    }
}

/// Group-relative advantages, aligned with the rewards they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
}

impl AdvantageVector {
    /// True when the group carried no signal and all advantages are zero.
    pub fn is_degenerate(&self) -> bool {
        self.values.iter().all(|&a| a == 0.0)
    }
}

/// `(r_i - mean) / max(std, epsilon)` with population std; all zeros when the
/// group's std is below `epsilon`.
pub fn compute_advantages(group: &RewardGroup, epsilon: f64) -> Result<AdvantageVector> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let mean = group.mean();
    let std = group.std();
    let values = if std < epsilon {
        vec![0.0; group.group_size()]
    } else {
        group.rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageVector { values })
}

/// Population variance `(1/G) * sum (r_i - mean)^2`.
pub fn compute_variance(group: &RewardGroup) -> f64 {
    let mean = group.mean();
    let ss: f64 = group.rewards.iter().map(|r| (r - mean) * (r - mean)).sum();
    ss / group.group_size() as f64
}

/// Min-max rescales batch variances into proposal probabilities. When every
/// variance is equal the batch carries no ranking and all proposals are 0.5.
pub fn rescale_batch_variances(variances: &BTreeMap<PromptId, f64>) -> Result<BTreeMap<PromptId, f64>> {
    let values: Vec<f64> = variances.values().copied().collect();
    let scaled = rescale_values(&values)?;
    Ok(variances.keys().cloned().zip(scaled).collect())
}

/// Slice form of [`rescale_batch_variances`].
pub fn rescale_values(variances: &[f64]) -> Result<Vec<f64>> {
    if variances.is_empty() {
        return Err(Error::InvalidInput("cannot rescale an empty batch".into()));
    }
    if let Some(bad) = variances.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidInput(format!("variance {bad} is not a finite non-negative number")));
    }
    let min = variances.iter().copied().fold(f64::INFINITY, f64::min);
    let max = variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Ok(vec![0.5; variances.len()]);
    }
    Ok(variances
        .iter()
        .map(|v| ((v - min) / range).clamp(0.0, 1.0))
        .collect())
}
