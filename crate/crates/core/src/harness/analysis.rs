//! Read-only views over probability lists and metrics series.

use crate::curriculum::ProbabilityList;
use crate::harness::metrics::IterationMetrics;

/// Per tier, the number of prompts whose list probability exceeds
/// `threshold`. `tiers[i]` is the tier of record `i`.
pub fn tier_occupancy(list: &ProbabilityList, tiers: &[usize], n_tiers: usize, threshold: f64) -> Vec<usize> {
    let mut counts = vec![0; n_tiers];
    for (rec, &tier) in list.records().iter().zip(tiers) {
        if rec.p_list > threshold {
            counts[tier] += 1;
        }
    }
    counts
}

/// First logged iteration at which every prompt has been sampled at least
/// once, i.e. the end of the all-ones start-up phase.
pub fn warmup_end(rows: &[IterationMetrics]) -> Option<u64> {
    rows.iter().find(|r| r.never_sampled == 0).map(|r| r.iter)
}

/// Centred moving average with a window of `2 * half + 1` (shrunk at the
/// edges).
pub fn moving_average(values: &[f64], half: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// For each tier, the iteration at which its smoothed high-probability count
/// is largest, considering only rows from `from_iter` on. Ties go to the
/// earliest iteration.
pub fn occupancy_peaks(rows: &[IterationMetrics], from_iter: u64, half_window: usize) -> Vec<Option<u64>> {
    let window: Vec<&IterationMetrics> = rows.iter().filter(|r| r.iter >= from_iter).collect();
    let n_tiers = rows.first().map_or(0, |r| r.tier_high_prob.len());
    (0..n_tiers)
        .map(|tier| {
            let series: Vec<f64> = window.iter().map(|r| r.tier_high_prob[tier] as f64).collect();
            let smooth = moving_average(&series, half_window);
            let mut best: Option<(f64, u64)> = None;
            for (v, row) in smooth.iter().zip(&window) {
                if best.is_none_or(|(b, _)| *v > b) {
                    best = Some((*v, row.iter));
                }
            }
            best.map(|(_, it)| it)
        })
        .collect()
}

/// First logged iteration whose `eval_reward` reaches `target`.
pub fn iterations_to_target(rows: &[IterationMetrics], target: f64) -> Option<u64> {
    rows.iter().find(|r| r.eval_reward >= target).map(|r| r.iter)
}
