use nash_prox::harness::config::{GameConfig, PolicyKind};
use nash_prox::harness::run::{aggregate, parse_records, records_to_csv, CSV_COLUMNS};
use nash_prox::harness::{preset, rng_split, run_experiment, run_seed, write_outputs, ExperimentConfig, PRESETS};
use rand::Rng;

fn short(name: &str, steps: u64, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = preset(name).unwrap();
    cfg.run.steps = steps;
    cfg.run.eval_every = 25;
    cfg.run.seeds = seeds;
    cfg
}

fn low_rank_short() -> ExperimentConfig {
    let mut cfg = short("lowrank-nashprox", 20, vec![4, 1]);
    cfg.policy.hidden = vec![16, 16];
    cfg.run.eval_every = 5;
    cfg.run.eval_contexts = 32;
    cfg.schedule.batch = "fixed:8".into();
    cfg
}

#[test]
fn presets_round_trip_through_toml() {
    for name in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{name}");
    }
}

#[test]
fn csv_has_the_documented_header_and_parses_back() {
    let run = run_seed(&short("rps-stochastic-nashprox", 120, vec![0]), 0).unwrap();
    let text = records_to_csv(&run);
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(
        CSV_COLUMNS,
        ["step", "exploitability", "kl_to_ref", "grad_norm", "clipped_fraction", "kappa", "lr", "batch_size", "wall_ms"]
    );
    let (records, abort) = parse_records(&text).unwrap();
    assert!(abort.is_none());
    assert_eq!(records, run.records);
}

#[test]
fn steps_increase_and_exploitability_is_nonnegative() {
    for name in ["rps-stochastic-spg", "rps-pp-spg", "rps-exact-nashprox"] {
        let run = run_seed(&short(name, 200, vec![2]), 2).unwrap();
        let steps: Vec<u64> = run.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 25, 50, 75, 100, 125, 150, 175, 200], "{name}");
        assert!(run.records.iter().all(|r| r.exploitability >= -1e-10 && r.exploitability.is_finite()), "{name}");
    }
    let run = run_seed(&low_rank_short(), 4).unwrap();
    assert!(run.records.windows(2).all(|w| w[0].step < w[1].step));
    assert!(run.records.iter().all(|r| r.exploitability >= -1e-10));
}

#[test]
fn zero_steps_write_only_the_initial_row() {
    let run = run_seed(&short("rps-exact-spg", 0, vec![0]), 0).unwrap();
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.records[0].step, 0);
}

#[test]
fn aggregate_matches_a_recomputation_from_the_seed_files() {
    let cfg = short("rps-stochastic-spg", 100, vec![0, 1, 2, 3]);
    let runs = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&cfg, &runs, dir.path()).unwrap();
    let per_seed: Vec<Vec<_>> = cfg
        .run
        .seeds
        .iter()
        .map(|s| parse_records(&std::fs::read_to_string(dir.path().join(format!("seed_{s}.csv"))).unwrap()).unwrap().0)
        .collect();
    let text = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,seeds,exploitability_mean,exploitability_stderr,kl_to_ref_mean,kl_to_ref_stderr"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), per_seed[0].len());
    for (i, row) in rows.iter().enumerate() {
        let gaps: Vec<f64> = per_seed.iter().map(|r| r[i].exploitability).collect();
        let kls: Vec<f64> = per_seed.iter().map(|r| r[i].kl_to_ref).collect();
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        };
        let (gm, gs) = stats(&gaps);
        let (km, ks) = stats(&kls);
        assert_eq!(row[0] as u64, per_seed[0][i].step);
        assert_eq!(row[1], 4.0);
        for (got, want) in row[2..].iter().zip([gm, gs, km, ks]) {
            assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "row {i}: {got} vs {want}");
        }
    }
    assert_eq!(aggregate(&runs).len(), rows.len());
    let saved = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn permuting_seeds_permutes_outputs() {
    let forward = run_experiment(&short("rps-stochastic-nashprox", 150, vec![5, 6, 7])).unwrap();
    let backward = run_experiment(&short("rps-stochastic-nashprox", 150, vec![7, 5, 6])).unwrap();
    for run in &forward {
        let other = backward.iter().find(|r| r.seed == run.seed).unwrap();
        assert_eq!(run.records.len(), other.records.len());
        assert!(run.records.iter().zip(&other.records).all(|(a, b)| a.same_values(b)));
    }
    assert!(!forward[0].records[1].same_values(&forward[1].records[1]));
}

#[test]
fn low_rank_runs_repeat_exactly() {
    let cfg = low_rank_short();
    let a = run_seed(&cfg, 4).unwrap();
    let b = run_seed(&cfg, 4).unwrap();
    assert!(a.records.iter().zip(&b.records).all(|(x, y)| x.same_values(y)));
}

#[test]
fn diverging_steps_abort_with_a_marker() {
    let mut cfg = low_rank_short();
    cfg.schedule.lr = "const:1e308".into();
    let run = run_seed(&cfg, 1).unwrap();
    assert!(run.abort.is_some());
    let text = records_to_csv(&run);
    assert!(text.lines().last().unwrap().starts_with("#abort,"));
    let (records, abort) = parse_records(&text).unwrap();
    assert_eq!(abort, run.abort);
    assert_eq!(records, run.records);
}

#[test]
fn theory_schedules_resolve_on_random_games() {
    let mut cfg = short("rps-stochastic-spg", 30, vec![3]);
    cfg.game = GameConfig::RandomMatrix { actions: 4 };
    cfg.spec.beta = 1.0;
    cfg.spec.reference = nash_prox::harness::config::ReferenceConfig::Named("uniform".into());
    cfg.algorithm.name = nash_prox::harness::config::Algorithm::Spg;
    cfg.algorithm.improvement = "tau0".into();
    cfg.schedule.lr = "theory".into();
    cfg.schedule.batch = "theory:64".into();
    cfg.schedule.clip = "theory:0.01".into();
    cfg.validate().unwrap();
    let run = run_seed(&cfg, 3).unwrap();
    assert!(run.abort.is_none());
    let last = run.records.last().unwrap();
    assert!(last.lr > 0.0 && last.batch_size >= 1 && last.batch_size <= 64);
    assert!(run.records.iter().all(|r| r.exploitability >= -1e-10));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = preset("rps-exact-spg").unwrap();
    cfg.spec.beta = -1.0;
    assert!(cfg.validate().is_err());
    let mut cfg = preset("lowrank-nashprox").unwrap();
    cfg.schedule.lr = "theory".into();
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = preset("rps-exact-spg").unwrap();
    cfg.policy.kind = PolicyKind::Mlp;
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn rng_streams_look_uniform() {
    let mut rng = rng_split(42, "train");
    let mut bins = [0u32; 100];
    let draws = 100_000;
    for _ in 0..draws {
        bins[(rng.random::<f64>() * 100.0) as usize] += 1;
    }
    let expected = draws as f64 / 100.0;
    let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
    // 99 degrees of freedom, upper 1% point
    assert!(chi2 < 134.64, "chi-square {chi2}");
}
