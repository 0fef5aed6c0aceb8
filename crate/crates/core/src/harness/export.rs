//! CSV views of a metrics log.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::metrics::MetricsLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    /// `iter,reward_avg,reward_std_mean,eval_reward`
    RewardCurve,
    /// `iter,tier1,tier2,...`
    TierOccupancy,
    /// `iter,mean_reward_0..,weight_0..`
    CategoryWeights,
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward-curve" => Ok(ExportKind::RewardCurve),
            "tier-occupancy" => Ok(ExportKind::TierOccupancy),
            "category-weights" => Ok(ExportKind::CategoryWeights),
            other => Err(Error::Config(format!(
                "unknown export kind `{other}` (expected reward-curve, tier-occupancy or category-weights)"
            ))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes one CSV row per logged iteration, with a header row.
pub fn export_csv<W: Write>(log: &MetricsLog, kind: ExportKind, out: W) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let n_tiers = log.header.tier_sizes.len();
    let n_cats = log.header.category_count;
    let header: Vec<String> = match kind {
        ExportKind::RewardCurve => ["iter", "reward_avg", "reward_std_mean", "eval_reward"]
            .map(String::from)
            .to_vec(),
        ExportKind::TierOccupancy => std::iter::once("iter".to_owned())
            .chain((1..=n_tiers).map(|k| format!("tier{k}")))
            .collect(),
        ExportKind::CategoryWeights => std::iter::once("iter".to_owned())
            .chain((0..n_cats).map(|c| format!("mean_reward_{c}")))
            .chain((0..n_cats).map(|c| format!("weight_{c}")))
            .collect(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for row in &log.rows {
        let record: Vec<String> = match kind {
            ExportKind::RewardCurve => vec![
                row.iter.to_string(),
                opt(row.reward_avg),
                opt(row.reward_std_mean),
                row.eval_reward.to_string(),
            ],
            ExportKind::TierOccupancy => std::iter::once(row.iter.to_string())
                .chain(row.tier_high_prob.iter().map(|c| c.to_string()))
                .collect(),
            ExportKind::CategoryWeights => std::iter::once(row.iter.to_string())
                .chain(row.category_mean_rewards.iter().map(|r| r.to_string()))
                .chain(row.category_weights.iter().map(|x| x.to_string()))
                .collect(),
        };
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(log.rows.len())
}
