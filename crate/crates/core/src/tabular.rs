//! Optimistic clipped value iteration for tabular MDPs.
//!
//! Every step performs a full-table optimistic backup against the empirical
//! model, takes the elementwise minimum with the previous estimate, and then
//! clips the state values to a span of at most `H`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::sample_index;
use crate::error::Result;
use crate::mdp::{argmax_lowest, min_of, AlgoConfig, RunRecord, TabularMdp};

pub const DEFAULT_C: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct TabularAgent {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    span_bound: f64,
    bonus_factor: f64,
    reward: Vec<f64>,
    /// `N(s, a)`, starting at 1.
    counts: Vec<u64>,
    /// `N(s, a, s')`, starting at 0.
    triple_counts: Vec<u64>,
    /// `N(s, a, s') / N(s, a)`. Rows sum to `1 - 1 / N(s, a)`.
    p_hat: Vec<f64>,
    q: Vec<f64>,
    v: Vec<f64>,
    v_tilde: Vec<f64>,
}

impl TabularAgent {
    pub fn new(mdp: &TabularMdp, config: &AlgoConfig) -> Result<Self> {
        config.validate()?;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let cap = config.value_cap();
        Ok(Self {
            num_states: ns,
            num_actions: na,
            gamma: config.gamma,
            span_bound: config.span_bound,
            bonus_factor: config.bonus_factor,
            reward: mdp.rewards().to_vec(),
            counts: vec![1; ns * na],
            triple_counts: vec![0; ns * na * ns],
            p_hat: vec![0.0; ns * na * ns],
            q: vec![cap; ns * na],
            v: vec![cap; ns],
            v_tilde: vec![cap; ns],
        })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_tilde(&self) -> &[f64] {
        &self.v_tilde
    }

    pub fn count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.num_actions + a]
    }

    pub fn triple_count(&self, s: usize, a: usize, s_next: usize) -> u64 {
        self.triple_counts[(s * self.num_actions + a) * self.num_states + s_next]
    }

    pub fn p_hat_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.p_hat[start..start + self.num_states]
    }

    pub fn act(&self, s: usize) -> usize {
        argmax_lowest(self.q_row(s))
    }

    /// Records the transition and runs one clipped optimistic backup over
    /// all state-action pairs.
    pub fn update(&mut self, s: usize, a: usize, s_next: usize) {
        let (ns, na) = (self.num_states, self.num_actions);
        let sa = s * na + a;
        self.counts[sa] += 1;
        self.triple_counts[sa * ns + s_next] += 1;
        // Only the visited row of the empirical model changes.
        let n = self.counts[sa] as f64;
        for sn in 0..ns {
            self.p_hat[sa * ns + sn] = self.triple_counts[sa * ns + sn] as f64 / n;
        }

        for i in 0..ns * na {
            let row = &self.p_hat[i * ns..(i + 1) * ns];
            let next_value: f64 = row.iter().zip(&self.v).map(|(p, v)| p * v).sum();
            let bonus = self.bonus_factor / (self.counts[i] as f64).sqrt();
            let backup = self.reward[i] + self.gamma * next_value + bonus;
            self.q[i] = backup.min(self.q[i]);
        }

        for st in 0..ns {
            let best = self.q[st * na..(st + 1) * na]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            self.v_tilde[st] = best.min(self.v[st]);
        }
        let ceiling = min_of(&self.v_tilde) + self.span_bound;
        for (v, &vt) in self.v.iter_mut().zip(&self.v_tilde) {
            *v = vt.min(ceiling);
        }
    }
}

/// Hook into a tabular run. Called after every update with the count
/// `N_{t-1}(s_t, a_t)` from before the increment.
pub trait TabularObserver {
    fn on_step(&mut self, t: usize, s: usize, a: usize, count_before: u64, agent: &TabularAgent);
}

impl TabularObserver for () {
    fn on_step(&mut self, _: usize, _: usize, _: usize, _: u64, _: &TabularAgent) {}
}

pub fn run_tabular(mdp: &TabularMdp, config: &AlgoConfig) -> Result<RunRecord> {
    run_tabular_observed(mdp, config, &mut ())
}

pub fn run_tabular_observed<O: TabularObserver + ?Sized>(
    mdp: &TabularMdp,
    config: &AlgoConfig,
    observer: &mut O,
) -> Result<RunRecord> {
    let mut agent = TabularAgent::new(mdp, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let horizon = config.horizon;
    let mut record = RunRecord {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        episode_starts: vec![1],
        regret_series: Vec::new(),
    };
    let mut s = mdp.initial_state();
    for t in 1..=horizon {
        let a = agent.act(s);
        let u: f64 = rng.random();
        let s_next = sample_index(mdp.transition_row(s, a), u);
        record.states.push(s);
        record.actions.push(a);
        record.rewards.push(mdp.reward(s, a));
        let count_before = agent.count(s, a);
        agent.update(s, a, s_next);
        observer.on_step(t, s, a, count_before, &agent);
        s = s_next;
    }
    Ok(record)
}

/// Parameter recipe: `gamma = 1 - sqrt(1/T)`, `H = 2 sp(v*)` and
/// `beta = c H sqrt(S ln(S A T / delta))`.
pub fn default_tabular_config(
    num_states: usize,
    num_actions: usize,
    sp_v_star: f64,
    horizon: usize,
    delta: f64,
    c: f64,
) -> AlgoConfig {
    let t = horizon as f64;
    let span_bound = 2.0 * sp_v_star;
    let s = num_states as f64;
    let a = num_actions as f64;
    AlgoConfig {
        horizon,
        gamma: 1.0 - (1.0 / t).sqrt(),
        span_bound,
        bonus_factor: c * span_bound * (s * (s * a * t / delta).ln()).sqrt(),
        delta,
        c_beta: c,
        ..AlgoConfig::default()
    }
}
