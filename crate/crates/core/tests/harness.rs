use clipvi::envs::{EnvKind, EnvSpec};
use clipvi::harness::{
    algo_config, prepare, run_experiment, run_seed, series_csv, summary_csv, Algorithm,
    ExperimentConfig, ExperimentOracle,
};
use clipvi::oracle::{solve_discounted, DEFAULT_TOL};
use clipvi::Error;

fn linear_config(horizon: usize, seeds: Vec<u64>) -> ExperimentConfig {
    let env = EnvSpec {
        kind: EnvKind::RandomLinear,
        states: 6,
        actions: 3,
        dim: 4,
        seed: 3,
        ..EnvSpec::default()
    };
    ExperimentConfig::new(env, Algorithm::LinearLscviUcb, horizon, seeds)
}

#[test]
fn episode_count_example() {
    let out = run_experiment(&linear_config(2000, vec![0, 1])).unwrap();
    let bound = 4.0 * (1.0f64 + 500.0).log2();
    for row in out.rows() {
        assert!(row.episode_count >= 1);
        assert!((row.episode_count as f64) <= bound, "{row:?}");
        assert!(row.final_regret.is_finite());
    }
}

#[test]
fn cached_oracle_matches_per_seed_solves() {
    let config = linear_config(300, vec![4, 2, 9]);
    let shared = run_experiment(&config).unwrap();
    for (seed, cached) in config.seeds.iter().zip(&shared.runs) {
        // Solve everything again from scratch for this seed alone.
        let (env, average, truth) = prepare(&config).unwrap();
        let probe = algo_config(&config, &env, average.span, Some(0.0)).unwrap();
        let discounted = solve_discounted(&truth, probe.gamma, DEFAULT_TOL).unwrap();
        let algo = algo_config(&config, &env, average.span, None).unwrap();
        let oracle = ExperimentOracle {
            truth,
            average,
            discounted,
        };
        let fresh = run_seed(&env, &oracle, &algo, *seed).unwrap();
        assert_eq!(fresh.record, cached.record);
        assert_eq!(fresh.row.final_regret.to_bits(), cached.row.final_regret.to_bits());
        assert_eq!(fresh.row.flags, cached.row.flags);
        assert_eq!(series_csv(&fresh.record), series_csv(&cached.record));
    }
}

#[test]
fn repeated_runs_write_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut config = ExperimentConfig::new(
        EnvSpec::default(),
        Algorithm::TabularUcbCvi,
        400,
        vec![0, 1, 2],
    );
    for dir in &dirs {
        config.out_dir = Some(dir.path().to_path_buf());
        run_experiment(&config).unwrap();
    }
    for name in ["summary.csv", "series_seed0.csv", "series_seed1.csv", "series_seed2.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
        assert!(!a.contains(&b'\r'));
    }
    let timing = std::fs::read_to_string(dirs[0].path().join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 4);
}

#[test]
fn series_columns_are_consistent() {
    let out = run_experiment(&linear_config(250, vec![0])).unwrap();
    let run = &out.runs[0];
    let csv = series_csv(&run.record);
    let mut prev = 0.0;
    let mut last_episode = 1;
    for (i, line) in csv.lines().skip(1).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0].parse::<usize>().unwrap(), i + 1);
        let reward: f64 = cols[1].parse().unwrap();
        let cum: f64 = cols[2].parse().unwrap();
        let episode: usize = cols[3].parse().unwrap();
        assert!((cum - prev - (out.j_star - reward)).abs() < 1e-9);
        assert!(episode >= last_episode);
        assert_eq!(episode, run.record.episode_at(i + 1));
        prev = cum;
        last_episode = episode;
    }
    assert_eq!(summary_csv(&out).lines().count(), 2);
}

#[test]
fn error_paths() {
    let mut empty = linear_config(10, vec![0]);
    empty.seeds.clear();
    assert!(matches!(run_experiment(&empty), Err(Error::Config(_))));

    let mut zero = linear_config(10, vec![0]);
    zero.horizon = 0;
    assert!(matches!(run_experiment(&zero), Err(Error::Config(_))));

    // The linear recipe needs ln T > 0.
    let one = linear_config(1, vec![0]);
    assert!(matches!(run_experiment(&one), Err(Error::InvalidHorizon { .. })));

    let mut bad_env = linear_config(10, vec![0]);
    bad_env.env.dim = 0;
    assert!(run_experiment(&bad_env).is_err());
}
