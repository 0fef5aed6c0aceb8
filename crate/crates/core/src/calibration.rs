//! Category calibration by proportional fairness.
//!
//! Given per-category mean rewards `r`, the reference `v_i ∝ 1/r_i` favours
//! weak categories. The allocation `q` maximises
//!
//! ```text
//! sum_i log q_i - lambda * KL(v || q)   subject to q on the simplex
//! ```
//!
//! whose stationary point is `q_i = (1 + lambda v_i) / (c + lambda)`. The
//! sampler uses the unnormalised weights `w_i = 1 + lambda v_i = (c + lambda) q_i`
//! as multipliers on list probabilities.
//!
//! [`numerical_oracle_q`] solves the same problem by projected gradient ascent
//! and shares no code with [`closed_form_q`]; it exists to check the closed
//! form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_REWARD_FLOOR: f64 = 1e-6;
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// A point on the probability simplex returned by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessSolution {
    pub q: Vec<f64>,
}

/// `v_i = (1/max(r_i, eps)) / sum_j (1/max(r_j, eps))`.
pub fn reference_from_rewards(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("need at least one category".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("reward floor must be positive, got {epsilon}")));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite category reward {r}")));
    }
    let inv: Vec<f64> = rewards.iter().map(|r| 1.0 / r.max(epsilon)).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|x| x / total).collect())
}

fn check_reference(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("reference vector is empty".into()));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput("reference entries must be finite and non-negative".into()));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("reference sums to {s}, expected 1")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// `q_i = (1 + lambda v_i) / (c + lambda)`.
pub fn closed_form_q(v: &[f64], lambda: f64) -> Result<FairnessSolution> {
    check_reference(v)?;
    check_lambda(lambda)?;
    let denom = v.len() as f64 + lambda;
    Ok(FairnessSolution {
        q: v.iter().map(|vi| (1.0 + lambda * vi) / denom).collect(),
    })
}

/// `w_i = 1 + lambda v_i`.
pub fn weights_from_q(v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_reference(v)?;
    check_lambda(lambda)?;
    Ok(v.iter().map(|vi| 1.0 + lambda * vi).collect())
}

/// `sum_i log q_i - lambda * sum_i v_i log(v_i / q_i)`, with `0 log 0 = 0`.
pub fn objective_value(q: &[f64], v: &[f64], lambda: f64) -> Result<f64> {
    if q.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "q has {} entries but v has {}",
            q.len(),
            v.len()
        )));
    }
    let mut log_sum = 0.0;
    let mut kl = 0.0;
    for (i, (&qi, &vi)) in q.iter().zip(v).enumerate() {
        if qi <= 0.0 {
            return Err(Error::Domain(format!("q[{i}] = {qi}; log q is -inf")));
        }
        log_sum += qi.ln();
        if vi > 0.0 {
            kl += vi * (vi / qi).ln();
        }
    }
    Ok(log_sum - lambda * kl)
}

/// Euclidean projection onto the probability simplex.
fn project_to_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `sum_i (g_i - mean(g)) d_i`. Steps on the simplex have `sum d = 0`, so
/// centring drops the rounding residue of that sum.
fn centered_dot(g: &[f64], d: &[f64]) -> f64 {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().zip(d).map(|(gi, di)| (gi - mean) * di).sum()
}

/// Maximises the fairness objective numerically.
///
/// Projected gradient ascent with Armijo backtracking, started from the
/// uniform point. The optimum is interior, where every partial derivative
/// `(1 + lambda v_i) / q_i` is equal; iteration stops once their relative
/// spread drops below `tol`.
pub fn numerical_oracle_q(v: &[f64], lambda: f64, tol: f64) -> Result<FairnessSolution> {
    const MAX_ITERS: usize = 200_000;
    const ARMIJO: f64 = 1e-4;

    check_reference(v)?;
    check_lambda(lambda)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let c = v.len();
    let f = |q: &[f64]| objective_value(q, v, lambda).unwrap_or(f64::NEG_INFINITY);
    let grad = |q: &[f64]| -> Vec<f64> { q.iter().zip(v).map(|(qi, vi)| (1.0 + lambda * vi) / qi).collect() };

    let mut q = vec![1.0 / c as f64; c];
    let mut fq = f(&q);
    let mut step = 1e-2;
    let mut residual = f64::INFINITY;

    for _ in 0..MAX_ITERS {
        let g = grad(&q);
        let scale: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        residual = (gmax - gmin) / scale;
        if residual < tol {
            return Ok(FairnessSolution { q });
        }

        let mut t = step;
        loop {
            let trial: Vec<f64> = q.iter().zip(&g).map(|(qi, gi)| qi + t * gi).collect();
            let cand = project_to_simplex(&trial);
            let step_dir: Vec<f64> = cand.iter().zip(&q).map(|(a, b)| a - b).collect();
            let ascent = centered_dot(&g, &step_dir);
            let fc = f(&cand);
            // by concavity g(cand)·(cand - q) >= 0 implies f(cand) >= f(q); this
            // stays informative once objective differences drown in rounding
            let slope_at_cand = if fc.is_finite() {
                centered_dot(&grad(&cand), &step_dir)
            } else {
                f64::NEG_INFINITY
            };
            if fc >= fq + ARMIJO * ascent || (ascent > 0.0 && slope_at_cand >= 0.0) {
                q = cand;
                fq = fc.max(fq);
                break;
            }
            t *= 0.5;
            if t < 1e-300 {
                return Err(Error::NotConverged {
                    iterations: 0,
                    residual,
                });
            }
        }
        step = t * 2.0;
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERS,
        residual,
    })
}

/// How often category rewards are folded into the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSchedule {
    /// Number of updates accumulated before `v` and `w` are recomputed.
    pub period: u64,
    /// Weight of the new period average; `1.0` replaces the old mean.
    pub smoothing: f64,
}

impl Default for CalibrationSchedule {
    fn default() -> Self {
        CalibrationSchedule {
            period: 1,
            smoothing: 1.0,
        }
    }
}

/// Per-category rewards, reference and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryState {
    pub lambda: f64,
    pub reward_floor: f64,
    pub schedule: CalibrationSchedule,
    pub mean_rewards: Vec<f64>,
    pub reference: Vec<f64>,
    pub weights: Vec<f64>,
    observed: Vec<bool>,
    pending_sum: Vec<f64>,
    pending_count: Vec<u64>,
    /// Number of calls to [`update`](Self::update).
    pub updates: u64,
}

impl CategoryState {
    /// All categories start with equal rewards, hence a uniform reference.
    pub fn new(category_count: usize, lambda: f64) -> Result<Self> {
        Self::with_schedule(category_count, lambda, DEFAULT_REWARD_FLOOR, CalibrationSchedule::default())
    }

    pub fn with_schedule(
        category_count: usize,
        lambda: f64,
        reward_floor: f64,
        schedule: CalibrationSchedule,
    ) -> Result<Self> {
        if category_count == 0 {
            return Err(Error::InvalidInput("category count must be at least 1".into()));
        }
        check_lambda(lambda)?;
        if schedule.period == 0 || !(schedule.smoothing > 0.0 && schedule.smoothing <= 1.0) {
            return Err(Error::InvalidInput(
                "calibration period must be >= 1 and smoothing in (0, 1]".into(),
            ));
        }
        let mut state = CategoryState {
            lambda,
            reward_floor,
            schedule,
            mean_rewards: vec![1.0; category_count],
            reference: Vec::new(),
            weights: Vec::new(),
            observed: vec![false; category_count],
            pending_sum: vec![0.0; category_count],
            pending_count: vec![0; category_count],
            updates: 0,
        };
        state.recompute()?;
        Ok(state)
    }

    pub fn category_count(&self) -> usize {
        self.mean_rewards.len()
    }

    fn recompute(&mut self) -> Result<()> {
        self.reference = reference_from_rewards(&self.mean_rewards, self.reward_floor)?;
        self.weights = weights_from_q(&self.reference, self.lambda)?;
        Ok(())
    }

    /// Folds one iteration's group-mean rewards, keyed by category, into the
    /// state. At the end of each period, categories seen during the period
    /// take the period average (blended by `smoothing` once a category has a
    /// prior value); unseen categories keep their previous mean.
    pub fn update(&mut self, batch_rewards: &BTreeMap<usize, Vec<f64>>) -> Result<()> {
        for (&cat, means) in batch_rewards {
            if cat >= self.category_count() {
                return Err(Error::InvalidInput(format!(
                    "category {cat} out of range (c = {})",
                    self.category_count()
                )));
            }
            for &m in means {
                if !m.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite reward {m} for category {cat}")));
                }
                self.pending_sum[cat] += m;
                self.pending_count[cat] += 1;
            }
        }
        self.updates += 1;
        if !self.updates.is_multiple_of(self.schedule.period) {
            return Ok(());
        }
        for cat in 0..self.category_count() {
            if self.pending_count[cat] == 0 {
                continue;
            }
            let avg = self.pending_sum[cat] / self.pending_count[cat] as f64;
            self.mean_rewards[cat] = if self.observed[cat] {
                let s = self.schedule.smoothing;
                (1.0 - s) * self.mean_rewards[cat] + s * avg
            } else {
                avg
            };
            self.observed[cat] = true;
            self.pending_sum[cat] = 0.0;
            self.pending_count[cat] = 0;
        }
        self.recompute()
    }

    /// `q = w / (c + lambda)`.
    pub fn fairness_solution(&self) -> Result<FairnessSolution> {
        closed_form_q(&self.reference, self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn reference_examples() {
        assert_eq!(reference_from_rewards(&[0.5, 0.5], 1e-6).unwrap(), vec![0.5, 0.5]);
        let v = reference_from_rewards(&[0.5, 0.25], 1e-6).unwrap();
        assert!(close(&v, &[1.0 / 3.0, 2.0 / 3.0], 1e-15));
        let v = reference_from_rewards(&[1.0, 0.0], 1e-6).unwrap();
        // inverses 1 and 1e6
        assert!(close(&v, &[1.0 / 1_000_001.0, 1e6 / 1_000_001.0], 1e-15));
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(reference_from_rewards(&[-3.0, 0.5], 1e-6).unwrap()[0] > 0.99);
        assert!(reference_from_rewards(&[], 1e-6).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let uniform = closed_form_q(&[0.7, 0.2, 0.1], 0.0).unwrap();
        assert!(close(&uniform.q, &[1.0 / 3.0; 3], 1e-15));

        let q = closed_form_q(&[0.5, 0.3, 0.2], 10.0).unwrap();
        assert!(close(&q.q, &[6.0 / 13.0, 4.0 / 13.0, 3.0 / 13.0], 1e-15));

        let q = closed_form_q(&[1.0, 0.0], 1e6).unwrap();
        assert!(close(&q.q, &[1.0, 0.0], 1e-5));

        assert!(closed_form_q(&[0.5, 0.5], -1.0).is_err());
        assert!(closed_form_q(&[0.6, 0.6], 1.0).is_err());
    }

    #[test]
    fn oracle_examples() {
        let q = numerical_oracle_q(&[0.5, 0.5], 5.0, 1e-10).unwrap();
        assert!(close(&q.q, &[0.5, 0.5], 1e-9));
        let q = numerical_oracle_q(&[0.5, 0.3, 0.2], 10.0, 1e-10).unwrap();
        assert!(close(&q.q, &[6.0 / 13.0, 4.0 / 13.0, 3.0 / 13.0], 1e-4));
        let q = numerical_oracle_q(&[0.1, 0.2, 0.3, 0.4], 0.0, 1e-10).unwrap();
        assert!(close(&q.q, &[0.25; 4], 1e-8));
    }

    #[test]
    fn objective_examples() {
        let ln_half = 0.5f64.ln();
        for lambda in [0.0, 1.0, 37.0] {
            let f = objective_value(&[0.5, 0.5], &[0.5, 0.5], lambda).unwrap();
            assert!((f - 2.0 * ln_half).abs() < 1e-15);
        }
        let third = 1.0 / 3.0;
        let f = objective_value(&[third; 3], &[0.5, 0.3, 0.2], 0.0).unwrap();
        assert!((f - 3.0 * third.ln()).abs() < 1e-14);
        assert!(matches!(objective_value(&[1.0, 0.0], &[0.5, 0.5], 1.0), Err(Error::Domain(_))));
        assert!(objective_value(&[1.0], &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weights_from_q(&[0.3, 0.7], 0.0).unwrap(), vec![1.0, 1.0]);
        let w = weights_from_q(&[1.0 / 3.0, 2.0 / 3.0], 10.0).unwrap();
        assert!(close(&w, &[13.0 / 3.0, 23.0 / 3.0], 1e-14));
        assert!((w.iter().sum::<f64>() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.2, 0.2, 0.2]);
        assert!(close(&p, &[1.0 / 3.0; 3], 1e-15));
        let p = project_to_simplex(&[3.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn state_update_retains_absent_categories() {
        let mut s = CategoryState::new(3, 10.0).unwrap();
        s.update(&BTreeMap::from([(1, vec![0.5]), (2, vec![0.25])])).unwrap();
        s.update(&BTreeMap::from([(0, vec![0.2, 0.4])])).unwrap();
        assert!(close(&s.mean_rewards, &[0.30000000000000004, 0.5, 0.25], 1e-15));
        assert_eq!(s.updates, 2);
    }

    #[test]
    fn state_update_two_categories() {
        let mut s = CategoryState::new(2, 10.0).unwrap();
        s.update(&BTreeMap::from([(0, vec![0.5, 0.5]), (1, vec![0.2, 0.3])])).unwrap();
        assert!(close(&s.reference, &[1.0 / 3.0, 2.0 / 3.0], 1e-15));
        assert!(close(&s.weights, &[13.0 / 3.0, 23.0 / 3.0], 1e-14));
        let q = s.fairness_solution().unwrap();
        assert!(close(&q.q, &[13.0 / 36.0, 23.0 / 36.0], 1e-15));
    }

    #[test]
    fn empty_update_only_ticks() {
        let mut s = CategoryState::new(2, 10.0).unwrap();
        s.update(&BTreeMap::from([(0, vec![0.9])])).unwrap();
        let before = s.clone();
        s.update(&BTreeMap::new()).unwrap();
        assert_eq!(s.updates, before.updates + 1);
        assert_eq!(s.mean_rewards, before.mean_rewards);
        assert_eq!(s.weights, before.weights);
    }

    #[test]
    fn periodic_smoothed_schedule() {
        let sched = CalibrationSchedule {
            period: 2,
            smoothing: 0.5,
        };
        let mut s = CategoryState::with_schedule(1, 10.0, 1e-6, sched).unwrap();
        s.update(&BTreeMap::from([(0, vec![0.2])])).unwrap();
        assert_eq!(s.mean_rewards, vec![1.0]);
        s.update(&BTreeMap::from([(0, vec![0.4])])).unwrap();
        assert!((s.mean_rewards[0] - 0.3).abs() < 1e-15);
        s.update(&BTreeMap::from([(0, vec![0.7])])).unwrap();
        s.update(&BTreeMap::from([(0, vec![0.7])])).unwrap();
        assert!((s.mean_rewards[0] - 0.5).abs() < 1e-15);
        assert!(CategoryState::with_schedule(1, 1.0, 1e-6, CalibrationSchedule { period: 0, smoothing: 1.0 }).is_err());
        assert!(s.update(&BTreeMap::from([(3, vec![0.7])])).is_err());
    }
}
