use cgpo_core::curriculum::{compute_variance, ProbabilityList, PromptId};
use cgpo_core::harness::analysis::moving_average;
use cgpo_core::harness::export::{export_csv, ExportKind};
use cgpo_core::harness::sweep::{run_sweep, Grid};
use cgpo_core::harness::{run_experiment, run_to_dir, Checkpoint, Experiment, ExperimentConfig, MetricsLog};
use cgpo_core::rng::reward_rng;
use cgpo_core::sampler::{sample_batch, sample_batch_with_rng, SamplerConfig};
use cgpo_core::sim::{RewardMode, SimLearner, SimPrompt};

fn short(extra: &[&str]) -> ExperimentConfig {
    let mut o = vec!["run.total_iterations=150"];
    o.extend_from_slice(extra);
    ExperimentConfig::default().with_overrides(&o).unwrap()
}

#[test]
fn acceptance_rate_matches_bernoulli_parameter() {
    let mut list = ProbabilityList::new(vec![("x", 0)]).unwrap();
    list.set_probability(0, 0.25).unwrap();
    let (mut trials, mut accepted) = (0usize, 0usize);
    let mut seed = 0;
    while trials < 100_000 {
        let cfg = SamplerConfig { batch_size: 1, max_attempts: usize::MAX, seed };
        trials += sample_batch(&list, &[1.0], &cfg).unwrap().attempts_used;
        accepted += 1;
        seed += 1;
    }
    let rate = accepted as f64 / trials as f64;
    assert!((rate - 0.25).abs() <= 0.01, "rate {rate}");
}

#[test]
fn mean_group_variance_tracks_bernoulli_variance() {
    // E[population variance of G Bernoulli(p) draws] = p(1-p)(G-1)/G;
    // difficulty 0 puts p at exactly 0.5
    let g = 24;
    let learner = SimLearner::new(0.0, 3.0, 1e-3).unwrap();
    for difficulty in [0.0, -0.5, 0.7] {
        let prompt = SimPrompt { id: PromptId::from("x"), category: 0, difficulty, tier: 0 };
        let p = learner.success_probability(&prompt);
        let total: f64 = (0..10_000)
            .map(|k| {
                let mut rng = reward_rng(3, k, 0);
                compute_variance(&learner.generate_rewards(&prompt, g, RewardMode::Bernoulli, 0.0, &mut rng).unwrap())
            })
            .sum();
        let mean = total / 10_000.0;
        let expected = p * (1.0 - p) * (g - 1) as f64 / g as f64;
        assert!((mean - expected).abs() <= 0.01, "p {p}: mean {mean} vs {expected}");
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let a = run_experiment(&short(&[])).unwrap();
    let b = run_experiment(&short(&[])).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.checkpoint, b.checkpoint);
    let c = run_experiment(&short(&["run.seed=1"])).unwrap();
    assert_ne!(a.metrics, c.metrics);
}

#[test]
fn sampling_uses_the_previous_iterations_probabilities() {
    let cfg = ExperimentConfig::from_toml_str(include_str!("../../../configs/ablation.toml"))
        .unwrap()
        .with_overrides(&["run.total_iterations=60"])
        .unwrap();
    let mut exp = Experiment::new(cfg.clone()).unwrap();
    for _ in 0..60 {
        let ckpt: Checkpoint = exp.checkpoint();
        let list = ckpt.probability_list().unwrap();
        let weights = exp.applied_weights();
        let mut rng = ckpt.rng.restore().unwrap();
        let sampler = SamplerConfig {
            batch_size: cfg.sampler.batch_size,
            max_attempts: cfg.sampler.max_attempts,
            seed: cfg.run.seed,
        };
        let expected = sample_batch_with_rng(&list, &weights, &sampler, &mut rng).unwrap();
        let mut categories = vec![0; 2];
        let mut tiers = vec![0; 3];
        for &i in &expected.indices {
            categories[exp.prompts()[i].category] += 1;
            tiers[exp.prompts()[i].tier] += 1;
        }
        let row = exp.step().unwrap();
        assert_eq!(row.batch_categories, categories);
        assert_eq!(row.batch_tiers, tiers);
        assert_eq!(row.category_weights, weights);
        assert_eq!(row.sampler_attempts, Some(expected.attempts_used));
    }
}

#[test]
fn batch_reward_trends_upward_under_the_default_setup() {
    let out = run_experiment(&ExperimentConfig::default()).unwrap();
    let rewards: Vec<f64> = out.metrics.iter().filter_map(|m| m.reward_avg).collect();
    let smooth = moving_average(&rewards, 100);
    // compare successive 200-iteration window means
    let blocks: Vec<f64> = smooth.chunks(200).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in blocks.windows(2) {
        assert!(w[1] >= w[0] - 0.01, "trend broke: {blocks:?}");
    }
    assert!(blocks.last().unwrap() > blocks.first().unwrap());
}

#[test]
fn exported_csvs_parse_and_match_the_log() {
    let dir = tempfile::tempdir().unwrap();
    run_to_dir(&short(&[]), dir.path()).unwrap();
    let log = MetricsLog::load(&dir.path().join("metrics.jsonl")).unwrap();
    for kind in [ExportKind::RewardCurve, ExportKind::TierOccupancy, ExportKind::CategoryWeights] {
        let mut buf = Vec::new();
        let rows = export_csv(&log, kind, &mut buf).unwrap();
        assert_eq!(rows, log.rows.len());
        let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(buf.as_slice());
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        assert_eq!(records.len(), rows);
        match kind {
            ExportKind::RewardCurve => assert_eq!(&header[..3], ["iter", "reward_avg", "reward_std_mean"]),
            ExportKind::TierOccupancy => {
                assert_eq!(header, ["iter", "tier1", "tier2", "tier3"]);
                assert_eq!(&records[0].iter().collect::<Vec<_>>(), &["0", "160", "160", "160"]);
            }
            ExportKind::CategoryWeights => assert_eq!(header, ["iter", "mean_reward_0", "weight_0"]),
        }
    }
}

#[test]
fn lambda_zero_sweep_point_logs_unit_weights() {
    let base = ExperimentConfig::from_toml_str(include_str!("../../../configs/ablation.toml"))
        .unwrap()
        .with_overrides(&["run.total_iterations=40"])
        .unwrap();
    let grid = Grid::parse("calibration.lambda=0,10").unwrap();
    let mut logs = std::sync::Mutex::new(Vec::new());
    let points = run_sweep(&base, &grid, |i, cfg| {
        let out = run_experiment(cfg)?;
        logs.lock().unwrap().push((i, out.metrics.clone()));
        Ok(out)
    })
    .unwrap();
    assert_eq!(points.len(), 2);
    assert!(points.iter().all(|p| p.error.is_none()));
    let logs = logs.get_mut().unwrap();
    logs.sort_by_key(|(i, _)| *i);
    assert!(logs[0].1.iter().all(|m| m.category_weights.iter().all(|&w| w == 1.0)));
    assert!(logs[1].1.iter().skip(1).any(|m| m.category_weights.iter().any(|&w| w > 1.0)));
}
