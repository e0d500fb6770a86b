//! Least-squares clipped value iteration for linear MDPs.
//!
//! The learner acts greedily against a plan computed at the start of each
//! episode. A new episode begins whenever the determinant of the running
//! Gram matrix exceeds twice its value at the last episode start; the plan
//! is then rebuilt by backward value iteration from the end of the horizon.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covariance::{quad_form, CovarianceState};
use crate::envs::sample_index;
use crate::error::{Error, Result};
use crate::mdp::{
    argmax_lowest, linear_to_tabular, min_of, AlgoConfig, ClipMode, LinearMdpEnv, RunRecord,
};

pub const DEFAULT_C_BETA: f64 = 1.0;

/// Slack allowed on regression targets before they are reported as out of
/// `[0, H]`.
pub const TARGET_TOL: f64 = 1e-9;

/// Features and rewards of an environment, as seen by the learner.
#[derive(Clone, Debug)]
pub struct FeatureTable {
    num_states: usize,
    num_actions: usize,
    features: Vec<DVector<f64>>,
    rewards: Vec<f64>,
}

impl FeatureTable {
    pub fn from_env(env: &LinearMdpEnv) -> Self {
        let (ns, na) = (env.num_states(), env.num_actions());
        let mut features = Vec::with_capacity(ns * na);
        let mut rewards = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                features.push(DVector::from_column_slice(env.feature(s, a)));
                rewards.push(env.reward(s, a));
            }
        }
        Self {
            num_states: ns,
            num_actions: na,
            features,
            rewards,
        }
    }

    pub fn phi(&self, s: usize, a: usize) -> &DVector<f64> {
        &self.features[s * self.num_actions + a]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Sufficient statistics of the transition history for regression against
/// any value function on next states: `sum_{tau: s_{tau+1} = s'} phi_tau`
/// per next state `s'`.
#[derive(Clone, Debug)]
pub struct TransitionHistory {
    next_state_sums: Vec<DVector<f64>>,
    visited: Vec<bool>,
    len: usize,
}

impl TransitionHistory {
    pub fn new(dim: usize, num_states: usize) -> Self {
        Self {
            next_state_sums: vec![DVector::zeros(dim); num_states],
            visited: vec![false; num_states],
            len: 0,
        }
    }

    pub fn push(&mut self, phi: &DVector<f64>, s_next: usize) {
        self.next_state_sums[s_next] += phi;
        self.visited[s_next] = true;
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `sum_tau phi_tau (value(s_{tau+1}) - offset)`, checking every target
    /// that actually occurs against `[0, bound]` when a bound is given.
    fn weighted_sum(&self, value: &[f64], offset: f64, bound: Option<f64>) -> Result<DVector<f64>> {
        let dim = self.next_state_sums.first().map_or(0, |x| x.len());
        let mut acc = DVector::zeros(dim);
        for (sn, sum) in self.next_state_sums.iter().enumerate() {
            if !self.visited[sn] {
                continue;
            }
            let target = value[sn] - offset;
            if let Some(bound) = bound {
                check_target(sn, target, bound)?;
            }
            acc.axpy(target, sum, 1.0);
        }
        Ok(acc)
    }
}

fn check_target(index: usize, target: f64, bound: f64) -> Result<()> {
    if target < -TARGET_TOL || target > bound + TARGET_TOL || target.is_nan() {
        return Err(Error::TargetOutOfRange {
            index,
            target,
            bound,
        });
    }
    Ok(())
}

/// Ridge solution `Lambda_k^{-1} sum_tau phi_tau target_tau` over an explicit
/// sample list. With `span_bound = Some(H)` every target must lie in `[0, H]`.
pub fn ridge_regress(
    cov: &CovarianceState,
    samples: &[(DVector<f64>, f64)],
    span_bound: Option<f64>,
) -> Result<DVector<f64>> {
    let mut rhs = DVector::zeros(cov.dim());
    for (i, (phi, target)) in samples.iter().enumerate() {
        if let Some(bound) = span_bound {
            check_target(i, *target, bound)?;
        }
        rhs.axpy(*target, phi, 1.0);
    }
    Ok(cov.inv_episode() * rhs)
}

/// Pre-computed action values for steps `start_time..=horizon` of one
/// episode. `weights[i]` and `offsets[i]` are the regression weight and
/// added-back minimum that produced the tables at step `start_time + i`.
#[derive(Clone, Debug)]
pub struct EpisodePlan {
    pub episode_index: usize,
    pub start_time: usize,
    pub horizon: usize,
    num_states: usize,
    num_actions: usize,
    pub weights: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
    q_tables: Vec<f64>,
    v_tables: Vec<f64>,
    v_tilde_tables: Vec<f64>,
}

impl EpisodePlan {
    /// The initial plan: every action value equals `value_cap` and nothing
    /// was regressed.
    pub fn constant(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        value_cap: f64,
    ) -> Self {
        let steps = horizon;
        Self {
            episode_index: 1,
            start_time: 1,
            horizon,
            num_states,
            num_actions,
            weights: Vec::new(),
            offsets: Vec::new(),
            q_tables: vec![value_cap; steps * num_states * num_actions],
            v_tables: vec![value_cap; steps * num_states],
            v_tilde_tables: vec![value_cap; steps * num_states],
        }
    }

    pub fn steps(&self) -> usize {
        self.horizon + 1 - self.start_time
    }

    /// Time steps covered by this plan, in increasing order.
    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        self.start_time..=self.horizon
    }

    fn offset_of(&self, t: usize) -> usize {
        assert!(
            (self.start_time..=self.horizon).contains(&t),
            "time {t} outside plan range {}..={}",
            self.start_time,
            self.horizon
        );
        t - self.start_time
    }

    pub fn q_table(&self, t: usize) -> &[f64] {
        let sa = self.num_states * self.num_actions;
        let i = self.offset_of(t);
        &self.q_tables[i * sa..(i + 1) * sa]
    }

    pub fn q_row(&self, t: usize, s: usize) -> &[f64] {
        &self.q_table(t)[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn v_table(&self, t: usize) -> &[f64] {
        let i = self.offset_of(t);
        &self.v_tables[i * self.num_states..(i + 1) * self.num_states]
    }

    pub fn v_tilde_table(&self, t: usize) -> &[f64] {
        let i = self.offset_of(t);
        &self.v_tilde_tables[i * self.num_states..(i + 1) * self.num_states]
    }

    /// Regression weight `w_{t+1}` used to build the step-`t` tables, if any.
    pub fn weight(&self, t: usize) -> Option<&DVector<f64>> {
        self.weights.get(self.offset_of(t))
    }

    pub fn offset(&self, t: usize) -> Option<f64> {
        self.offsets.get(self.offset_of(t)).copied()
    }

    pub fn act(&self, t: usize, s: usize) -> usize {
        argmax_lowest(self.q_row(t, s))
    }
}

pub fn act_linear(plan: &EpisodePlan, t: usize, s: usize) -> usize {
    plan.act(t, s)
}

/// Backward clipped value iteration for steps `T, T-1, ..., t_k` using the
/// frozen episode matrix in `cov` and the transitions in `history`.
pub fn plan_episode(
    table: &FeatureTable,
    history: &TransitionHistory,
    cov: &CovarianceState,
    config: &AlgoConfig,
    episode_index: usize,
    start_time: usize,
) -> Result<EpisodePlan> {
    let horizon = config.horizon;
    if start_time == 0 || start_time > horizon {
        return Err(Error::Config(format!(
            "episode start {start_time} outside 1..={horizon}"
        )));
    }
    let (ns, na) = (table.num_states(), table.num_actions());
    let cap = config.value_cap();
    let gamma = config.gamma;
    let h = config.span_bound;
    let steps = horizon + 1 - start_time;

    let bonus: Vec<f64> = (0..ns * na)
        .map(|i| config.bonus_factor * cov.episode_norm(&table.features[i]))
        .collect();
    // Targets are only guaranteed to lie in [0, H] under the default clip.
    let target_bound = match config.clip_mode {
        ClipMode::MinOfVTilde => Some(h),
        ClipMode::MinOfVStar(_) => None,
    };

    let mut weights = vec![DVector::zeros(0); steps];
    let mut offsets = vec![0.0; steps];
    let mut q_tables = vec![0.0; steps * ns * na];
    let mut v_tables = vec![0.0; steps * ns];
    let mut v_tilde_tables = vec![0.0; steps * ns];

    let mut v_next = vec![cap; ns];
    let mut v_tilde_next = vec![cap; ns];
    for i in (0..steps).rev() {
        let offset = match config.clip_mode {
            ClipMode::MinOfVTilde => min_of(&v_tilde_next),
            ClipMode::MinOfVStar(m) => m,
        };
        let rhs = history.weighted_sum(&v_next, offset, target_bound)?;
        let w = cov.inv_episode() * rhs;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite regression weight".into()));
        }

        let q = &mut q_tables[i * ns * na..(i + 1) * ns * na];
        for (j, qj) in q.iter_mut().enumerate() {
            let estimate = table.features[j].dot(&w) + offset + bonus[j];
            *qj = (table.rewards[j] + gamma * estimate).min(cap);
        }
        let v_tilde = &mut v_tilde_tables[i * ns..(i + 1) * ns];
        for (s, vt) in v_tilde.iter_mut().enumerate() {
            *vt = q[s * na..(s + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let anchor = match config.clip_mode {
            ClipMode::MinOfVTilde => min_of(v_tilde),
            ClipMode::MinOfVStar(m) => m,
        };
        let v = &mut v_tables[i * ns..(i + 1) * ns];
        for (vs, &vt) in v.iter_mut().zip(v_tilde.iter()) {
            *vs = vt.min(anchor + h);
        }

        v_next.copy_from_slice(v);
        v_tilde_next.copy_from_slice(v_tilde);
        weights[i] = w;
        offsets[i] = offset;
    }

    Ok(EpisodePlan {
        episode_index,
        start_time,
        horizon,
        num_states: ns,
        num_actions: na,
        weights,
        offsets,
        q_tables,
        v_tables,
        v_tilde_tables,
    })
}

/// Per-step quantities handed to a [`LinearObserver`].
pub struct LinearStep<'a> {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub phi: &'a DVector<f64>,
    /// `phi^T Lambda_bar_{t-1}^{-1} phi`.
    pub potential: f64,
    /// `phi^T Lambda_k^{-1} phi` for the episode in effect at time `t`.
    pub episode_quad: f64,
    /// `phi^T Lambda_bar_t^{-1} phi`, after this step's update.
    pub updated_quad: f64,
    /// Whether the doubling test fired at this step.
    pub advanced: bool,
    pub cov: &'a CovarianceState,
}

pub trait LinearObserver {
    fn on_plan(&mut self, _plan: &EpisodePlan, _cov: &CovarianceState) {}
    fn on_step(&mut self, _step: &LinearStep<'_>) {}
}

impl LinearObserver for () {}

pub fn run_linear(env: &LinearMdpEnv, config: &AlgoConfig) -> Result<RunRecord> {
    run_linear_observed(env, config, &mut ())
}

pub fn run_linear_observed<O: LinearObserver + ?Sized>(
    env: &LinearMdpEnv,
    config: &AlgoConfig,
    observer: &mut O,
) -> Result<RunRecord> {
    config.validate()?;
    let truth = linear_to_tabular(env)?;
    let table = FeatureTable::from_env(env);
    let horizon = config.horizon;
    let mut cov = CovarianceState::new(env.dim(), config.lambda);
    let mut history = TransitionHistory::new(env.dim(), env.num_states());
    let mut plan = EpisodePlan::constant(
        horizon,
        env.num_states(),
        env.num_actions(),
        config.value_cap(),
    );
    observer.on_plan(&plan, &cov);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut record = RunRecord {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        episode_starts: vec![1],
        regret_series: Vec::new(),
    };

    let mut s = env.initial_state();
    for t in 1..=horizon {
        let a = plan.act(t, s);
        let u: f64 = rng.random();
        let s_next = sample_index(truth.transition_row(s, a), u);
        record.states.push(s);
        record.actions.push(a);
        record.rewards.push(table.reward(s, a));

        let phi = table.phi(s, a);
        let potential = cov.rank_one_update(phi)?;
        history.push(phi, s_next);
        let advanced = cov.should_advance_episode();
        observer.on_step(&LinearStep {
            t,
            state: s,
            action: a,
            phi,
            potential,
            episode_quad: quad_form(cov.inv_episode(), phi),
            updated_quad: quad_form(cov.inv_bar(), phi),
            advanced,
            cov: &cov,
        });

        if advanced {
            let start = t + 1;
            cov.freeze_episode();
            record.episode_starts.push(start);
            if start <= horizon {
                plan = plan_episode(
                    &table,
                    &history,
                    &cov,
                    config,
                    record.episode_starts.len(),
                    start,
                )?;
                observer.on_plan(&plan, &cov);
            }
        }
        s = s_next;
    }
    Ok(record)
}

/// Parameter recipe: `gamma = 1 - sqrt(ln T / T)`, `lambda = 1`,
/// `H = 2 sp(v*)` and `beta = 2 c_beta sp(v*) d sqrt(ln(d T / delta))`.
pub fn default_linear_config(
    dim: usize,
    sp_v_star: f64,
    horizon: usize,
    delta: f64,
    c_beta: f64,
) -> Result<AlgoConfig> {
    let t = horizon as f64;
    let gamma = 1.0 - (t.ln() / t).sqrt();
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidHorizon { horizon, gamma });
    }
    let d = dim as f64;
    Ok(AlgoConfig {
        horizon,
        gamma,
        lambda: 1.0,
        span_bound: 2.0 * sp_v_star,
        bonus_factor: 2.0 * c_beta * sp_v_star * d * (d * t / delta).ln().sqrt(),
        delta,
        c_beta,
        ..AlgoConfig::default()
    })
}

/// Upper bound on the number of episodes, `d log2(1 + T / (lambda d))`.
pub fn episode_bound(dim: usize, horizon: usize, lambda: f64) -> f64 {
    let d = dim as f64;
    d * (1.0 + horizon as f64 / (lambda * d)).log2()
}

/// Upper bound on a ridge weight fit to targets in `[0, B]` from `n`
/// samples: `B sqrt(d n / lambda)`.
pub fn weight_norm_bound(target_bound: f64, dim: usize, n: usize, lambda: f64) -> f64 {
    target_bound * (dim as f64 * n as f64 / lambda).sqrt()
}

/// `lambda I + sum phi phi^T` over a sample list.
pub fn gram(dim: usize, lambda: f64, phis: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::identity(dim, dim) * lambda;
    for phi in phis {
        m.ger(1.0, phi, phi, 1.0);
    }
    m
}
