//! Experiment runner and lemma-check suite.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checks::{InvariantFlags, LinearMonitor, Slack, TabularMonitor};
use crate::envs::{make_random_tabular, Env, EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::format::{format_float, Document};
use crate::linear::{default_linear_config, run_linear_observed, DEFAULT_C_BETA};
use crate::mdp::{AlgoConfig, ClipMode, RunRecord, TabularMdp};
use crate::oracle::{
    check_discounted_approx_with_ratio, solve_average_reward, solve_discounted,
    AverageRewardSolution, DiscountedSolution, DEFAULT_TOL,
};
use crate::tabular::{default_tabular_config, run_tabular_observed, DEFAULT_C};

pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    TabularUcbCvi,
    LinearLscviUcb,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::TabularUcbCvi => "tabular_ucb_cvi",
            Algorithm::LinearLscviUcb => "linear_lscvi_ucb",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "tabular_ucb_cvi" => Some(Algorithm::TabularUcbCvi),
            "linear_lscvi_ucb" => Some(Algorithm::LinearLscviUcb),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClipSetting {
    #[default]
    MinOfVTilde,
    /// Use the oracle's `min_s V*(s)` at the run's discount factor.
    MinOfVStar,
}

/// Values that replace the recipe defaults when set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub span_bound: Option<f64>,
    pub bonus_factor: Option<f64>,
    /// Multiplies the bonus factor after all other settings are applied.
    pub bonus_scale: Option<f64>,
    pub delta: Option<f64>,
    pub c: Option<f64>,
    pub c_beta: Option<f64>,
    pub clip_mode: Option<ClipSetting>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub algorithm: Algorithm,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub overrides: Overrides,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, algorithm: Algorithm, horizon: usize, seeds: Vec<u64>) -> Self {
        Self {
            env,
            algorithm,
            horizon,
            seeds,
            overrides: Overrides::default(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let linear_env = matches!(self.env.kind, EnvKind::RandomLinear | EnvKind::OnehotOfTabular);
        if self.algorithm == Algorithm::LinearLscviUcb && !linear_env {
            return Err(Error::Config(format!(
                "{} needs a linear environment, got {}",
                self.algorithm.name(),
                self.env.kind.name()
            )));
        }
        self.env.validate()
    }

    /// Parses the `[experiment]`, `[env]` and `[overrides]` sections.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let exp = doc.require_section("experiment")?;
        let algo_name: String = exp.require("algorithm")?;
        let algorithm = Algorithm::parse(&algo_name)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{algo_name}`")))?;
        let horizon = exp.require("horizon")?;
        let seeds = match exp.get("seeds")? {
            Some((_, v)) => parse_seeds(v)?,
            None => vec![0],
        };
        let out_dir = exp.get("out")?.map(|(_, v)| PathBuf::from(v));

        let mut env = EnvSpec::default();
        if let Some(sec) = doc.section("env") {
            if let Some((_, kind)) = sec.get("kind")? {
                env.kind = EnvKind::parse(kind)
                    .ok_or_else(|| Error::Config(format!("unknown env kind `{kind}`")))?;
            }
            if let Some((_, base)) = sec.get("base")? {
                env.base = EnvKind::parse(base)
                    .ok_or_else(|| Error::Config(format!("unknown base env `{base}`")))?;
            }
            env.states = sec.parse_value("states")?.unwrap_or(env.states);
            env.actions = sec.parse_value("actions")?.unwrap_or(env.actions);
            env.dim = sec.parse_value("dim")?.unwrap_or(env.dim);
            env.seed = sec.parse_value("seed")?.unwrap_or(env.seed);
            env.slip = sec.parse_value("slip")?.unwrap_or(env.slip);
            env.concentration = sec.parse_value("concentration")?.unwrap_or(env.concentration);
        }

        let mut overrides = Overrides::default();
        if let Some(sec) = doc.section("overrides") {
            overrides.gamma = sec.parse_value("gamma")?;
            overrides.lambda = sec.parse_value("lambda")?;
            overrides.span_bound = sec.parse_value("span_bound")?;
            overrides.bonus_factor = sec.parse_value("bonus_factor")?;
            overrides.bonus_scale = sec.parse_value("bonus_scale")?;
            overrides.delta = sec.parse_value("delta")?;
            overrides.c = sec.parse_value("c")?;
            overrides.c_beta = sec.parse_value("c_beta")?;
            overrides.clip_mode = match sec.get("clip_mode")? {
                None => None,
                Some((_, "min_of_vtilde")) => Some(ClipSetting::MinOfVTilde),
                Some((_, "min_of_vstar")) => Some(ClipSetting::MinOfVStar),
                Some((line, other)) => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown clip_mode `{other}`"),
                    })
                }
            };
        }

        let config = Self {
            env,
            algorithm,
            horizon,
            seeds,
            overrides,
            out_dir,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Accepts `0,1,2`, `0..10` (exclusive) or a mix of both.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
            seeds.extend(lo..hi);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Oracle quantities shared by every seed of an experiment.
#[derive(Clone, Debug)]
pub struct ExperimentOracle {
    pub truth: TabularMdp,
    pub average: AverageRewardSolution,
    pub discounted: DiscountedSolution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub horizon: usize,
    pub final_regret: f64,
    pub episode_count: usize,
    pub runtime_ms: u128,
    pub flags: InvariantFlags,
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub row: ResultRow,
    pub record: RunRecord,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub algo: AlgoConfig,
    pub j_star: f64,
    pub span_v_star: f64,
    pub runs: Vec<SeedOutcome>,
}

impl ExperimentOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.runs.iter().map(|r| &r.row)
    }

    pub fn mean_regret(&self) -> f64 {
        self.rows().map(|r| r.final_regret).sum::<f64>() / self.runs.len() as f64
    }
}

/// Builds the environment and solves the average-reward problem once.
pub fn prepare(config: &ExperimentConfig) -> Result<(Env, AverageRewardSolution, TabularMdp)> {
    config.validate()?;
    let env = config.env.build()?;
    let truth = env.to_tabular()?;
    let average = solve_average_reward(&truth, DEFAULT_TOL)?;
    Ok((env, average, truth))
}

/// Recipe parameters for `algorithm`, then the overrides.
pub fn algo_config(
    config: &ExperimentConfig,
    env: &Env,
    sp_v_star: f64,
    min_v_star: Option<f64>,
) -> Result<AlgoConfig> {
    let o = &config.overrides;
    let delta = o.delta.unwrap_or(DEFAULT_DELTA);
    let mut algo = match (config.algorithm, env) {
        (Algorithm::TabularUcbCvi, Env::Tabular(mdp)) => default_tabular_config(
            mdp.num_states(),
            mdp.num_actions(),
            sp_v_star,
            config.horizon,
            delta,
            o.c.unwrap_or(DEFAULT_C),
        ),
        (Algorithm::TabularUcbCvi, Env::Linear(lin)) => default_tabular_config(
            lin.num_states(),
            lin.num_actions(),
            sp_v_star,
            config.horizon,
            delta,
            o.c.unwrap_or(DEFAULT_C),
        ),
        (Algorithm::LinearLscviUcb, Env::Linear(lin)) => default_linear_config(
            lin.dim(),
            sp_v_star,
            config.horizon,
            delta,
            o.c_beta.unwrap_or(DEFAULT_C_BETA),
        )?,
        (Algorithm::LinearLscviUcb, Env::Tabular(_)) => {
            return Err(Error::Config("linear learner needs a linear environment".into()))
        }
    };
    if let Some(g) = o.gamma {
        algo.gamma = g;
    }
    if let Some(l) = o.lambda {
        algo.lambda = l;
    }
    if let Some(h) = o.span_bound {
        algo.span_bound = h;
    }
    if let Some(b) = o.bonus_factor {
        algo.bonus_factor = b;
    }
    if let Some(scale) = o.bonus_scale {
        algo.bonus_factor *= scale;
    }
    if o.clip_mode == Some(ClipSetting::MinOfVStar) {
        let m = min_v_star.ok_or_else(|| Error::Config("min V* unavailable".into()))?;
        algo.clip_mode = ClipMode::MinOfVStar(m);
    }
    algo.validate()?;
    Ok(algo)
}

/// Runs one seed against pre-solved oracle data.
pub fn run_seed(
    env: &Env,
    oracle: &ExperimentOracle,
    base: &AlgoConfig,
    seed: u64,
) -> Result<SeedOutcome> {
    let algo = AlgoConfig {
        seed,
        ..base.clone()
    };
    let start = Instant::now();
    let (mut record, mut flags) = match env {
        Env::Tabular(mdp) => {
            let mut monitor = TabularMonitor::new(mdp.num_states(), mdp.num_actions(), &algo)
                .with_optimum(&oracle.discounted.v, &oracle.discounted.q);
            let record = run_tabular_observed(mdp, &algo, &mut monitor)?;
            (record, monitor.flags())
        }
        Env::Linear(lin) => {
            let mut monitor = LinearMonitor::new(lin.dim(), &algo).with_optimum(&oracle.discounted.v);
            let record = run_linear_observed(lin, &algo, &mut monitor)?;
            (record, monitor.flags())
        }
    };
    let runtime_ms = start.elapsed().as_millis();
    let j_star = oracle.average.j_star;
    let final_regret = record.attach_regret(j_star);
    let consistent = record
        .regret_series
        .iter()
        .zip(&record.rewards)
        .scan(0.0, |prev, (&cum, &r)| {
            let ok = ((cum - *prev) - (j_star - r)).abs() <= 1e-9;
            *prev = cum;
            Some(ok)
        })
        .all(|ok| ok);
    flags.record(InvariantFlags::REGRET_CONSISTENT, consistent);
    Ok(SeedOutcome {
        row: ResultRow {
            seed,
            horizon: algo.horizon,
            final_regret,
            episode_count: record.episode_count(),
            runtime_ms,
            flags,
        },
        record,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (env, average, truth) = prepare(config)?;
    // gamma comes from the recipe; min V* is only needed for the oracle clip.
    let probe = algo_config(config, &env, average.span, Some(0.0))?;
    let discounted = solve_discounted(&truth, probe.gamma, DEFAULT_TOL)?;
    let min_v = crate::mdp::min_of(&discounted.v);
    let algo = algo_config(config, &env, average.span, Some(min_v))?;
    let oracle = ExperimentOracle {
        truth,
        average,
        discounted,
    };

    // collect() keeps seed order regardless of completion order.
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&env, &oracle, &algo, seed))
        .collect::<Result<Vec<_>>>()?;

    let outcome = ExperimentOutcome {
        algo,
        j_star: oracle.average.j_star,
        span_v_star: oracle.average.span,
        runs,
    };
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, &outcome)?;
    }
    Ok(outcome)
}

pub const SERIES_HEADER: &str = "t,reward,cumulative_regret,episode_index";
pub const SUMMARY_HEADER: &str =
    "seed,T,final_regret,episode_count,invariants_checked,invariants_passed";

pub fn series_csv(record: &RunRecord) -> String {
    let mut out = String::with_capacity(record.len() * 64);
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for (i, (&r, &cum)) in record.rewards.iter().zip(&record.regret_series).enumerate() {
        let t = i + 1;
        out.push_str(&format!(
            "{t},{},{},{}\n",
            format_float(r),
            format_float(cum),
            record.episode_at(t)
        ));
    }
    out
}

pub fn summary_csv(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for row in outcome.rows() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.seed,
            row.horizon,
            format_float(row.final_regret),
            row.episode_count,
            row.flags.checked,
            row.flags.passed
        ));
    }
    out
}

pub fn series_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("series_seed{seed}.csv"))
}

/// Writes one series file per seed, `summary.csv` and `timing.csv`. Only
/// `timing.csv` depends on wall-clock time.
pub fn write_outputs(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in &outcome.runs {
        fs::write(series_path(dir, run.row.seed), series_csv(&run.record))?;
    }
    fs::write(dir.join("summary.csv"), summary_csv(outcome))?;
    let mut timing = String::from("seed,runtime_ms\n");
    for row in outcome.rows() {
        timing.push_str(&format!("{},{}\n", row.seed, row.runtime_ms));
    }
    fs::write(dir.join("timing.csv"), timing)?;
    Ok(())
}

/// Scope of the lemma suite. The defaults reproduce the full sweep.
#[derive(Clone, Debug)]
pub struct LemmaSuiteConfig {
    pub random_mdps: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub mdp_seed: u64,
    pub gammas: Vec<f64>,
    /// Additional named MDPs for the discounted-approximation checks.
    pub extra_mdps: Vec<(String, TabularMdp)>,
    /// Ratio in `sp(V*) <= ratio * sp(v*)`; the true bound uses 2.
    pub span_ratio: f64,
    pub tol: f64,
    pub tabular_env: Option<EnvSpec>,
    pub tabular_horizon: usize,
    pub linear_dims: Vec<usize>,
    pub linear_horizons: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        Self {
            random_mdps: 20,
            max_states: 5,
            max_actions: 3,
            mdp_seed: 0,
            gammas: vec![0.9, 0.99],
            extra_mdps: Vec::new(),
            span_ratio: 2.0,
            tol: 1e-8,
            tabular_env: Some(EnvSpec {
                kind: EnvKind::Chain,
                states: 5,
                actions: 2,
                slip: 0.1,
                ..EnvSpec::default()
            }),
            tabular_horizon: 5000,
            linear_dims: vec![2, 4, 8],
            linear_horizons: vec![1000, 5000],
            seeds: (0..10).collect(),
        }
    }
}

impl LemmaSuiteConfig {
    /// Only the discounted-approximation checks, on the given MDPs.
    pub fn discounted_only(mdps: Vec<(String, TabularMdp)>) -> Self {
        Self {
            random_mdps: 0,
            extra_mdps: mdps,
            tabular_env: None,
            linear_dims: Vec::new(),
            ..Self::default()
        }
    }

    /// Sizes of the `i`-th random MDP in the sweep.
    pub fn sweep_shape(&self, i: usize) -> (usize, usize) {
        (1 + i % self.max_states, 1 + (i / self.max_states) % self.max_actions)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub cases: usize,
    pub worst_slack: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for LemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<28} cases={:<5} worst_slack={:.6e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.worst_slack
            )?;
        }
        Ok(())
    }
}

pub const LEMMA_SPAN_RATIO: &str = "discounted-span-ratio";
pub const LEMMA_GAIN_GAP: &str = "discounted-gain-gap";
pub const LEMMA_BONUS_SUM: &str = "tabular-bonus-sum";
pub const LEMMA_EPISODE_COUNT: &str = "linear-episode-count";
pub const LEMMA_WEIGHT_NORM: &str = "linear-weight-norm";
pub const LEMMA_ELLIPTICAL: &str = "elliptical-potential";
pub const LEMMA_FINAL_POTENTIAL: &str = "final-potential";
pub const LEMMA_DET_RATIO: &str = "det-ratio-norm";

struct Accumulator {
    name: &'static str,
    cases: usize,
    slack: Slack,
    tol: f64,
}

impl Accumulator {
    fn new(name: &'static str, tol: f64) -> Self {
        Self {
            name,
            cases: 0,
            slack: Slack::default(),
            tol,
        }
    }

    fn observe(&mut self, bound: f64, value: f64) {
        self.cases += 1;
        self.slack.observe(bound, value);
    }

    fn finish(self) -> LemmaCheck {
        let worst = if self.cases == 0 { 0.0 } else { self.slack.0 };
        LemmaCheck {
            name: self.name,
            cases: self.cases,
            worst_slack: worst,
            pass: worst >= -self.tol,
        }
    }
}

pub fn lemma_suite(config: &LemmaSuiteConfig) -> Result<LemmaReport> {
    let mut report = LemmaReport::default();

    let mut mdps: Vec<TabularMdp> = (0..config.random_mdps)
        .map(|i| {
            let (s, a) = config.sweep_shape(i);
            make_random_tabular(s, a, 1.0, config.mdp_seed + i as u64)
        })
        .collect::<Result<_>>()?;
    mdps.extend(config.extra_mdps.iter().map(|(_, m)| m.clone()));
    if !mdps.is_empty() {
        let mut span_acc = Accumulator::new(LEMMA_SPAN_RATIO, config.tol);
        let mut gap_acc = Accumulator::new(LEMMA_GAIN_GAP, config.tol);
        for mdp in &mdps {
            for &gamma in &config.gammas {
                let rep =
                    check_discounted_approx_with_ratio(mdp, gamma, DEFAULT_TOL, config.span_ratio)?;
                span_acc.observe(config.span_ratio * rep.span_v_star, rep.span_discounted);
                gap_acc.observe((1.0 - gamma) * rep.span_v_star, rep.max_gain_gap);
            }
        }
        report.checks.push(span_acc.finish());
        report.checks.push(gap_acc.finish());
    }

    if let Some(env) = &config.tabular_env {
        let exp = ExperimentConfig::new(
            env.clone(),
            Algorithm::TabularUcbCvi,
            config.tabular_horizon,
            config.seeds.clone(),
        );
        let (env, average, _) = prepare(&exp)?;
        let algo = algo_config(&exp, &env, average.span, None)?;
        let Env::Tabular(mdp) = &env else {
            return Err(Error::Config("bonus-sum check needs a tabular env".into()));
        };
        let monitors = config
            .seeds
            .par_iter()
            .map(|&seed| {
                let cfg = AlgoConfig {
                    seed,
                    ..algo.clone()
                };
                let mut m = TabularMonitor::new(mdp.num_states(), mdp.num_actions(), &cfg);
                run_tabular_observed(mdp, &cfg, &mut m).map(|_| m)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut acc = Accumulator::new(LEMMA_BONUS_SUM, 0.0);
        for m in &monitors {
            acc.observe(m.bonus_sum_bound(), m.bonus_sum);
        }
        report.checks.push(acc.finish());
    }

    if !config.linear_dims.is_empty() && !config.linear_horizons.is_empty() {
        let mut episodes = Accumulator::new(LEMMA_EPISODE_COUNT, 0.0);
        let mut weights = Accumulator::new(LEMMA_WEIGHT_NORM, crate::checks::WEIGHT_TOL);
        let mut elliptical = Accumulator::new(LEMMA_ELLIPTICAL, 0.0);
        let mut final_pot = Accumulator::new(LEMMA_FINAL_POTENTIAL, crate::checks::POTENTIAL_TOL);
        let mut det_ratio = Accumulator::new(LEMMA_DET_RATIO, 1e-12);
        for &dim in &config.linear_dims {
            for &horizon in &config.linear_horizons {
                let monitors = linear_monitors(dim, horizon, &config.seeds)?;
                for m in &monitors {
                    episodes.observe(m.episode_bound(), m.episodes as f64);
                    weights.observe(0.0, -m.weight_slack.0);
                    elliptical.observe(m.potential_bound(), m.potential_sum);
                    final_pot.observe(dim as f64, m.final_potential());
                    det_ratio.observe(0.0, -m.det_ratio_slack.0);
                }
            }
        }
        report.checks.extend([
            episodes.finish(),
            weights.finish(),
            elliptical.finish(),
            final_pot.finish(),
            det_ratio.finish(),
        ]);
    }
    Ok(report)
}

/// Environment used for the linear sweeps: a random linear MDP with
/// 8 states and 3 actions.
pub fn linear_sweep_env(dim: usize) -> EnvSpec {
    EnvSpec {
        kind: EnvKind::RandomLinear,
        states: 8,
        actions: 3,
        dim,
        seed: 0,
        ..EnvSpec::default()
    }
}

fn linear_monitors(dim: usize, horizon: usize, seeds: &[u64]) -> Result<Vec<LinearMonitor>> {
    let exp = ExperimentConfig::new(
        linear_sweep_env(dim),
        Algorithm::LinearLscviUcb,
        horizon,
        seeds.to_vec(),
    );
    let (env, average, _) = prepare(&exp)?;
    let algo = algo_config(&exp, &env, average.span, None)?;
    let Env::Linear(lin) = &env else {
        unreachable!("linear sweep env is linear")
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = AlgoConfig {
                seed,
                ..algo.clone()
            };
            let mut m = LinearMonitor::new(dim, &cfg);
            run_linear_observed(lin, &cfg, &mut m).map(|_| m)
        })
        .collect()
}
