//! Domain types shared by the agents, oracles and harness.
//!
//! Both environment types store their tables as flat row-major vectors. A
//! [`TabularMdp`] transition row for `(s, a)` is the contiguous slice
//! `transition[(s * A + a) * S..][..S]`.

use std::fmt;

use crate::error::{Error, Result};

/// Tolerance used for every "is this a probability distribution" check.
pub const PROB_TOL: f64 = 1e-12;

/// Span semi-norm `max v - min v`. Zero for an empty slice.
pub fn span(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

pub(crate) fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Index of the first maximal entry; ties go to the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_state: usize,
}

impl TabularMdp {
    /// Builds an MDP from flat tables. Only shapes are checked here; use
    /// [`validate_tabular`] for the value-level invariants.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Shape("S and A must be positive".into()));
        }
        let sa = num_states * num_actions;
        if transition.len() != sa * num_states {
            return Err(Error::Shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                sa * num_states
            )));
        }
        if reward.len() != sa {
            return Err(Error::Shape(format!(
                "reward has {} entries, expected {sa}",
                reward.len()
            )));
        }
        if initial_state >= num_states {
            return Err(Error::Shape(format!(
                "initial state {initial_state} out of range for S = {num_states}"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            initial_state,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Next-state distribution `P(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `[P v](s, a)`.
    pub fn expect(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearMdpEnv {
    dim: usize,
    num_states: usize,
    num_actions: usize,
    features: Vec<f64>,
    measures: Vec<f64>,
    theta: Vec<f64>,
    initial_state: usize,
}

impl LinearMdpEnv {
    /// `features` is `(s, a, j)` row-major with `S * A * d` entries,
    /// `measures` is `(j, s')` row-major with `d * S` entries.
    pub fn new(
        dim: usize,
        num_states: usize,
        num_actions: usize,
        features: Vec<f64>,
        measures: Vec<f64>,
        theta: Vec<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        if dim == 0 || num_states == 0 || num_actions == 0 {
            return Err(Error::Shape("d, S and A must be positive".into()));
        }
        if features.len() != num_states * num_actions * dim {
            return Err(Error::Shape(format!(
                "features have {} entries, expected {}",
                features.len(),
                num_states * num_actions * dim
            )));
        }
        if measures.len() != dim * num_states {
            return Err(Error::Shape(format!(
                "measures have {} entries, expected {}",
                measures.len(),
                dim * num_states
            )));
        }
        if theta.len() != dim {
            return Err(Error::Shape(format!(
                "theta has {} entries, expected {dim}",
                theta.len()
            )));
        }
        if initial_state >= num_states {
            return Err(Error::Shape(format!(
                "initial state {initial_state} out of range for S = {num_states}"
            )));
        }
        Ok(Self {
            dim,
            num_states,
            num_actions,
            features,
            measures,
            theta,
            initial_state,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn feature(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.dim;
        &self.features[start..start + self.dim]
    }

    /// Discrete measure `mu_j(.)` over next states.
    pub fn measure(&self, j: usize) -> &[f64] {
        &self.measures[j * self.num_states..(j + 1) * self.num_states]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    /// `r(s, a) = <phi(s, a), theta>`.
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        dot(self.feature(s, a), &self.theta)
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    RowSum,
    NegativeProbability,
    RewardRange,
    FeatureNorm,
    ThetaNorm,
    MeasureMassNorm,
    NegativeMeasure,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ViolationKind::RowSum => "row-sum",
            ViolationKind::NegativeProbability => "negative-probability",
            ViolationKind::RewardRange => "reward-range",
            ViolationKind::FeatureNorm => "feature-norm",
            ViolationKind::ThetaNorm => "theta-norm",
            ViolationKind::MeasureMassNorm => "measure-mass-norm",
            ViolationKind::NegativeMeasure => "negative-measure",
        };
        f.write_str(name)
    }
}

/// A single failed invariant. `index` locates the offending entry
/// (`[s, a]`, `[s, a, s']`, `[j, s']` or empty for global quantities) and
/// `magnitude` is how far it lies outside the admissible range.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: Vec<usize>,
    pub magnitude: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, index: Vec<usize>, magnitude: f64) {
        self.violations.push(Violation {
            kind,
            index,
            magnitude,
        });
    }
}

fn range_excess(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo - x
    } else if x > hi {
        x - hi
    } else {
        0.0
    }
}

fn check_rows<'a>(
    report: &mut ValidationReport,
    rows: impl Iterator<Item = ((usize, usize), &'a [f64])>,
) {
    for ((s, a), row) in rows {
        for (sn, &p) in row.iter().enumerate() {
            if p < -PROB_TOL {
                report.push(ViolationKind::NegativeProbability, vec![s, a, sn], -p);
            }
        }
        let dev = (row.iter().sum::<f64>() - 1.0).abs();
        if dev > PROB_TOL {
            report.push(ViolationKind::RowSum, vec![s, a], dev);
        }
    }
}

fn check_rewards(report: &mut ValidationReport, rewards: impl Iterator<Item = ((usize, usize), f64)>) {
    for ((s, a), r) in rewards {
        let excess = range_excess(r, 0.0, 1.0);
        if excess > 0.0 || r.is_nan() {
            report.push(ViolationKind::RewardRange, vec![s, a], excess);
        }
    }
}

fn pairs(num_states: usize, num_actions: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..num_states).flat_map(move |s| (0..num_actions).map(move |a| (s, a)))
}

pub fn validate_tabular(mdp: &TabularMdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    check_rows(
        &mut report,
        pairs(ns, na).map(|(s, a)| ((s, a), mdp.transition_row(s, a))),
    );
    check_rewards(&mut report, pairs(ns, na).map(|(s, a)| ((s, a), mdp.reward(s, a))));
    report
}

pub fn validate_linear(env: &LinearMdpEnv) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (d, ns, na) = (env.dim, env.num_states, env.num_actions);
    let sqrt_d = (d as f64).sqrt();

    for (s, a) in pairs(ns, na) {
        let excess = norm2(env.feature(s, a)) - 1.0;
        if excess > PROB_TOL {
            report.push(ViolationKind::FeatureNorm, vec![s, a], excess);
        }
    }
    let excess = norm2(&env.theta) - sqrt_d;
    if excess > PROB_TOL {
        report.push(ViolationKind::ThetaNorm, vec![], excess);
    }
    for j in 0..d {
        for (sn, &m) in env.measure(j).iter().enumerate() {
            if m < 0.0 {
                report.push(ViolationKind::NegativeMeasure, vec![j, sn], -m);
            }
        }
    }
    let masses: Vec<f64> = (0..d).map(|j| env.measure(j).iter().sum()).collect();
    let excess = norm2(&masses) - sqrt_d;
    if excess > PROB_TOL {
        report.push(ViolationKind::MeasureMassNorm, vec![], excess);
    }

    let transition = reconstruct_transition(env);
    check_rows(
        &mut report,
        pairs(ns, na).map(|(s, a)| {
            let start = (s * na + a) * ns;
            ((s, a), &transition[start..start + ns])
        }),
    );
    check_rewards(&mut report, pairs(ns, na).map(|(s, a)| ((s, a), env.reward(s, a))));
    report
}

fn reconstruct_transition(env: &LinearMdpEnv) -> Vec<f64> {
    let (d, ns, na) = (env.dim, env.num_states, env.num_actions);
    let mut transition = vec![0.0; ns * na * ns];
    for (s, a) in pairs(ns, na) {
        let phi = env.feature(s, a);
        let row = &mut transition[(s * na + a) * ns..][..ns];
        for (j, &weight) in phi.iter().enumerate().take(d) {
            for (p, &m) in row.iter_mut().zip(env.measure(j)) {
                *p += weight * m;
            }
        }
    }
    transition
}

/// Materializes `P(s'|s,a) = <phi(s,a), mu(s')>` and `r = <phi, theta>`.
pub fn linear_to_tabular(env: &LinearMdpEnv) -> Result<TabularMdp> {
    let transition = reconstruct_transition(env);
    if let Some((i, &p)) = transition
        .iter()
        .enumerate()
        .find(|(_, &p)| p < -PROB_TOL)
    {
        return Err(Error::InvalidEnv(format!(
            "reconstructed probability {p:e} at flat index {i} is negative"
        )));
    }
    let reward = pairs(env.num_states, env.num_actions)
        .map(|(s, a)| env.reward(s, a))
        .collect();
    TabularMdp::new(
        env.num_states,
        env.num_actions,
        transition,
        reward,
        env.initial_state,
    )
}

/// One-hot embedding with `d = S * A`; coordinate `s * A + a` carries the
/// pair `(s, a)`.
pub fn tabular_to_onehot_linear(mdp: &TabularMdp) -> LinearMdpEnv {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let d = ns * na;
    let mut features = vec![0.0; ns * na * d];
    for j in 0..d {
        features[j * d + j] = 1.0;
    }
    LinearMdpEnv {
        dim: d,
        num_states: ns,
        num_actions: na,
        features,
        measures: mdp.transition.clone(),
        theta: mdp.reward.clone(),
        initial_state: mdp.initial_state,
    }
}

/// Which minimum anchors the span clip in the linear planner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClipMode {
    /// Clip at `min_s' Vtilde(s') + H` (the default algorithm).
    MinOfVTilde,
    /// Clip at `min_s' V*(s') + H` using an oracle-supplied minimum.
    MinOfVStar(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgoConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub span_bound: f64,
    pub bonus_factor: f64,
    pub delta: f64,
    pub c_beta: f64,
    pub seed: u64,
    pub clip_mode: ClipMode,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            horizon: 1,
            gamma: 0.9,
            lambda: 1.0,
            span_bound: 1.0,
            bonus_factor: 0.0,
            delta: 0.1,
            c_beta: 1.0,
            seed: 0,
            clip_mode: ClipMode::MinOfVTilde,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if !(self.lambda > 0.0) {
            return fail(format!("lambda {} must be positive", self.lambda));
        }
        if !(self.span_bound >= 0.0) {
            return fail(format!("span bound {} must be nonnegative", self.span_bound));
        }
        if !(self.bonus_factor >= 0.0) {
            return fail(format!("bonus factor {} must be nonnegative", self.bonus_factor));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta {} not in (0, 1)", self.delta));
        }
        Ok(())
    }

    /// Value-function ceiling `1 / (1 - gamma)`.
    pub fn value_cap(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }
}

/// One trajectory. Time is 1-based in `episode_starts`; the vectors are
/// indexed from 0 so `rewards[t - 1]` is the reward at time `t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub episode_starts: Vec<usize>,
    /// Cumulative regret after each step; empty until
    /// [`RunRecord::attach_regret`] is called.
    pub regret_series: Vec<f64>,
}

impl RunRecord {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode_count(&self) -> usize {
        self.episode_starts.len()
    }

    pub fn attach_regret(&mut self, j_star: f64) -> f64 {
        let regret = crate::oracle::regret_of(self, j_star);
        self.regret_series = regret.series;
        regret.total
    }

    /// 1-based episode index in effect at (1-based) time `t`.
    pub fn episode_at(&self, t: usize) -> usize {
        self.episode_starts.partition_point(|&start| start <= t)
    }
}
