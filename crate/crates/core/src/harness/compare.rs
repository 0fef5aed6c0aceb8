//! Strategy comparison over seeds.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::harness::analysis::iterations_to_target;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::{run_experiment, RunOutput};
use crate::par;

/// Reward level a strategy must reach for the iterations-to-target table.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Absolute(f64),
    /// `fraction` of the named strategy's mean final reward.
    FractionOfFinal { reference: String, fraction: f64 },
    /// `fraction` of the best mean final reward across strategies.
    FractionOfBest(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub iter: u64,
    pub eval_reward: MeanStd,
    pub reward_avg: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub final_eval_reward: MeanStd,
    pub final_reward_avg: Option<MeanStd>,
    /// Per seed; `None` when the target was never reached.
    pub iterations_to_target: Vec<Option<u64>>,
    /// Over seeds, with unreached runs counted at the run length.
    pub iterations_to_target_stats: MeanStd,
    pub series: Vec<SeriesPoint>,
}

/// One-sided Welch test that `label` needs fewer iterations than `reference`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceTest {
    pub label: String,
    pub reference: String,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub target_reward: f64,
    pub total_iterations: u64,
    pub strategies: Vec<StrategySummary>,
    pub tests: Vec<SignificanceTest>,
}

impl ComparisonReport {
    pub fn strategy(&self, label: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.label == label)
    }

    pub fn test(&self, label: &str) -> Option<&SignificanceTest> {
        self.tests.iter().find(|t| t.label == label)
    }

    /// Plain-text table: one row per strategy.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "target eval_reward {:.4} over {} iterations\n{:<48} {:>5} {:>18} {:>20} {:>8}\n",
            self.target_reward, self.total_iterations, "strategy", "seeds", "final eval", "iters to target", "p"
        );
        for s in &self.strategies {
            let p = self
                .test(&s.label)
                .map_or_else(|| "-".to_owned(), |t| format!("{:.4}", t.p_value));
            out.push_str(&format!(
                "{:<48} {:>5} {:>9.4} ± {:<6.4} {:>10.1} ± {:<7.1} {:>8}\n",
                s.label,
                s.seeds.len(),
                s.final_eval_reward.mean,
                s.final_eval_reward.std,
                s.iterations_to_target_stats.mean,
                s.iterations_to_target_stats.std,
                p
            ));
        }
        out
    }
}

/// Welch's unequal-variance t-test, one-sided for `mean(a) < mean(b)`.
pub fn welch_one_sided_less(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let sa = MeanStd::of(a);
    let sb = MeanStd::of(b);
    let va = sa.std.powi(2) / sa.n as f64;
    let vb = sb.std.powi(2) / sb.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = match sa.mean.total_cmp(&sb.mean) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Greater => 1.0,
        };
        return (f64::NAN, f64::NAN, p);
    }
    let t = (sb.mean - sa.mean) / se2.sqrt();
    let mut df_den = 0.0;
    if sa.n > 1 {
        df_den += va.powi(2) / (sa.n - 1) as f64;
    }
    if sb.n > 1 {
        df_den += vb.powi(2) / (sb.n - 1) as f64;
    }
    let df = if df_den > 0.0 { se2.powi(2) / df_den } else { 1.0 };
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (t, df, 1.0 - dist.cdf(t))
}

/// Runs every config (in parallel when enabled) and summarises by strategy.
pub fn compare_strategies(configs: &[ExperimentConfig], target: &Target) -> Result<ComparisonReport> {
    check_setups(configs)?;
    let outputs: Vec<RunOutput> = par::map_slice(configs, run_experiment)
        .into_iter()
        .collect::<Result<_>>()?;
    let runs: Vec<(&ExperimentConfig, &RunOutput)> = configs.iter().zip(&outputs).collect();
    summarize(&runs, target)
}

fn check_setups(configs: &[ExperimentConfig]) -> Result<()> {
    let first = configs
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to compare".into()))?;
    if let Some(bad) = configs.iter().position(|c| !c.same_setup(first)) {
        return Err(Error::Config(format!(
            "config {} differs from config 0 in more than strategy and seed",
            bad
        )));
    }
    Ok(())
}

/// Summarises finished runs. Runs sharing a strategy label are treated as
/// seeds of that strategy; labels keep their first-seen order.
pub fn summarize(runs: &[(&ExperimentConfig, &RunOutput)], target: &Target) -> Result<ComparisonReport> {
    let configs: Vec<ExperimentConfig> = runs.iter().map(|(c, _)| (*c).clone()).collect();
    check_setups(&configs)?;
    let total_iterations = configs[0].run.total_iterations;

    let mut labels: Vec<String> = Vec::new();
    for (c, _) in runs {
        let l = c.strategy.label();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let group = |label: &str| -> Vec<&RunOutput> {
        runs.iter()
            .filter(|(c, _)| c.strategy.label() == label)
            .map(|(_, o)| *o)
            .collect()
    };
    let final_mean = |label: &str| -> f64 {
        let finals: Vec<f64> = group(label)
            .iter()
            .map(|o| o.metrics.last().map_or(f64::NAN, |m| m.eval_reward))
            .collect();
        MeanStd::of(&finals).mean
    };

    let target_reward = match target {
        Target::Absolute(v) => *v,
        Target::FractionOfFinal { reference, fraction } => {
            if !labels.contains(reference) {
                return Err(Error::InvalidInput(format!("no runs for reference strategy `{reference}`")));
            }
            fraction * final_mean(reference)
        }
        Target::FractionOfBest(fraction) => {
            fraction * labels.iter().map(|l| final_mean(l)).fold(f64::NEG_INFINITY, f64::max)
        }
    };

    let mut strategies = Vec::new();
    for label in &labels {
        let outs = group(label);
        let seeds = runs
            .iter()
            .filter(|(c, _)| &c.strategy.label() == label)
            .map(|(c, _)| c.run.seed)
            .collect();
        let finals: Vec<f64> = outs.iter().map(|o| o.metrics.last().unwrap().eval_reward).collect();
        let final_avgs: Vec<f64> = outs
            .iter()
            .filter_map(|o| o.metrics.last().and_then(|m| m.reward_avg))
            .collect();
        let hits: Vec<Option<u64>> = outs
            .iter()
            .map(|o| iterations_to_target(&o.metrics, target_reward))
            .collect();
        let hit_values: Vec<f64> = hits
            .iter()
            .map(|h| h.unwrap_or(total_iterations) as f64)
            .collect();
        let len = outs.iter().map(|o| o.metrics.len()).min().unwrap_or(0);
        let series = (0..len)
            .map(|k| {
                let evals: Vec<f64> = outs.iter().map(|o| o.metrics[k].eval_reward).collect();
                let avgs: Vec<f64> = outs.iter().filter_map(|o| o.metrics[k].reward_avg).collect();
                SeriesPoint {
                    iter: outs[0].metrics[k].iter,
                    eval_reward: MeanStd::of(&evals),
                    reward_avg: (!avgs.is_empty()).then(|| MeanStd::of(&avgs)),
                }
            })
            .collect();
        strategies.push(StrategySummary {
            label: label.clone(),
            seeds,
            final_eval_reward: MeanStd::of(&finals),
            final_reward_avg: (!final_avgs.is_empty()).then(|| MeanStd::of(&final_avgs)),
            iterations_to_target: hits,
            iterations_to_target_stats: MeanStd::of(&hit_values),
            series,
        });
    }

    let reference = match target {
        Target::FractionOfFinal { reference, .. } => Some(reference.clone()),
        _ => labels.iter().find(|l| l.as_str() == "uniform").cloned(),
    };
    let mut tests = Vec::new();
    if let Some(reference) = reference {
        let values = |label: &str| -> Vec<f64> {
            group(label)
                .iter()
                .map(|o| iterations_to_target(&o.metrics, target_reward).unwrap_or(total_iterations) as f64)
                .collect()
        };
        let ref_values = values(&reference);
        for label in labels.iter().filter(|l| **l != reference) {
            let (t, df, p) = welch_one_sided_less(&values(label), &ref_values);
            tests.push(SignificanceTest {
                label: label.clone(),
                reference: reference.clone(),
                t_statistic: t,
                degrees_of_freedom: df,
                p_value: p,
            });
        }
    }

    Ok(ComparisonReport {
        target_reward,
        total_iterations,
        strategies,
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean, 5.0);
        assert!((m.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[3.0]).std, 0.0);
    }

    #[test]
    fn welch_against_reference_values() {
        // a: mean 10, var 2.5; b: mean 20, var 2.5; n = 5 each
        // t = 10 / sqrt(1) = 10, df = 8
        let (t, df, p) = welch_one_sided_less(&[8.0, 9.0, 10.0, 11.0, 12.0], &[18.0, 19.0, 20.0, 21.0, 22.0]);
        assert!((t - 10.0).abs() < 1e-12);
        assert!((df - 8.0).abs() < 1e-12);
        // P(T_8 > 10) ≈ 4.2e-6
        assert!(p > 1e-6 && p < 1e-5, "p = {p}");
        let (_, _, p) = welch_one_sided_less(&[20.0, 21.0], &[10.0, 11.0]);
        assert!(p > 0.9);
        let (_, _, p) = welch_one_sided_less(&[1.0, 1.0], &[2.0, 2.0]);
        assert_eq!(p, 0.0);
    }

    fn tiny(kind: &str, seed: u64) -> ExperimentConfig {
        ExperimentConfig::default()
            .with_overrides(&[
                format!("strategy.kind={kind}"),
                format!("run.seed={seed}"),
                "run.total_iterations=20".into(),
                "environment.tiers.0.size=10".into(),
                "environment.tiers.1.size=10".into(),
                "environment.tiers.2.size=10".into(),
                "sampler.batch_size=6".into(),
                "sampler.group_size=4".into(),
            ])
            .unwrap()
    }

    #[test]
    fn single_config_gives_one_row() {
        let r = compare_strategies(&[tiny("cgpo", 0)], &Target::FractionOfBest(0.9)).unwrap();
        assert_eq!(r.strategies.len(), 1);
        assert_eq!(r.strategies[0].series.len(), 21);
        assert!(r.tests.is_empty());
        assert_eq!(r.to_table().lines().count(), 3);
    }

    #[test]
    fn seeds_aggregate_and_get_tested() {
        let configs: Vec<_> = (0..5)
            .flat_map(|s| [tiny("cgpo", s), tiny("uniform", s)])
            .collect();
        let r = compare_strategies(
            &configs,
            &Target::FractionOfFinal {
                reference: "uniform".into(),
                fraction: 0.9,
            },
        )
        .unwrap();
        assert_eq!(r.strategies.len(), 2);
        for s in &r.strategies {
            assert_eq!(s.seeds, vec![0, 1, 2, 3, 4]);
            assert_eq!(s.final_eval_reward.n, 5);
            assert!(s.final_eval_reward.std > 0.0);
        }
        assert_eq!(r.tests.len(), 1);
        assert_eq!(r.tests[0].label, "cgpo");
    }

    #[test]
    fn mismatched_environments_are_rejected() {
        let a = tiny("cgpo", 0);
        let b = a.with_overrides(&["environment.slope=1.0"]).unwrap();
        assert!(compare_strategies(&[a, b], &Target::Absolute(0.5)).is_err());
        assert!(compare_strategies(&[], &Target::Absolute(0.5)).is_err());
    }
}
