//! In-line invariant monitors for both learners.
//!
//! Each monitor plugs into a run as an observer, records the worst slack of
//! every invariant it tracks, and summarizes them as [`InvariantFlags`].

use nalgebra::DVector;

use crate::covariance::{quad_form, spd_inverse, CovarianceState};
use crate::linear::{episode_bound, weight_norm_bound, EpisodePlan, LinearObserver, LinearStep};
use crate::mdp::{span, AlgoConfig, ClipMode};
use crate::tabular::{TabularAgent, TabularObserver};

/// Floating-point slack for span and cap comparisons.
pub const SPAN_TOL: f64 = 1e-9;
/// Slack for the tabular optimism comparison against the oracle.
pub const TABULAR_OPTIMISM_TOL: f64 = 1e-9;
/// Slack for the linear optimism comparison against the oracle.
pub const LINEAR_OPTIMISM_TOL: f64 = 1e-6;
pub const WEIGHT_TOL: f64 = 1e-9;
pub const POTENTIAL_TOL: f64 = 1e-6;

/// Bitset of invariants. A bit in `checked` means the invariant was
/// evaluated on the run; the same bit in `passed` means it held.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InvariantFlags {
    pub checked: u32,
    pub passed: u32,
}

impl InvariantFlags {
    pub const MONOTONE: u32 = 1 << 0;
    pub const SPAN_CLIP: u32 = 1 << 1;
    pub const VALUE_RANGE: u32 = 1 << 2;
    pub const BONUS_SUM: u32 = 1 << 3;
    pub const OPTIMISM: u32 = 1 << 4;
    pub const EPISODE_COUNT: u32 = 1 << 5;
    pub const WEIGHT_NORM: u32 = 1 << 6;
    pub const ELLIPTICAL_POTENTIAL: u32 = 1 << 7;
    pub const FINAL_POTENTIAL: u32 = 1 << 8;
    pub const DET_RATIO_NORM: u32 = 1 << 9;
    pub const REGRET_CONSISTENT: u32 = 1 << 10;

    /// Invariants that must hold on every run regardless of the random
    /// draws. Optimism is a high-probability event and is excluded.
    pub const DETERMINISTIC: u32 = !Self::OPTIMISM;

    pub fn record(&mut self, bit: u32, ok: bool) {
        self.checked |= bit;
        if ok {
            self.passed |= bit;
        } else {
            self.passed &= !bit;
        }
    }

    pub fn held(&self, bit: u32) -> bool {
        self.checked & bit != 0 && self.passed & bit != 0
    }

    /// Every checked deterministic invariant passed.
    pub fn deterministic_ok(&self) -> bool {
        let mask = self.checked & Self::DETERMINISTIC;
        self.passed & mask == mask
    }

    pub fn names(bits: u32) -> Vec<&'static str> {
        const NAMES: [(u32, &str); 11] = [
            (InvariantFlags::MONOTONE, "monotone"),
            (InvariantFlags::SPAN_CLIP, "span-clip"),
            (InvariantFlags::VALUE_RANGE, "value-range"),
            (InvariantFlags::BONUS_SUM, "bonus-sum"),
            (InvariantFlags::OPTIMISM, "optimism"),
            (InvariantFlags::EPISODE_COUNT, "episode-count"),
            (InvariantFlags::WEIGHT_NORM, "weight-norm"),
            (InvariantFlags::ELLIPTICAL_POTENTIAL, "elliptical-potential"),
            (InvariantFlags::FINAL_POTENTIAL, "final-potential"),
            (InvariantFlags::DET_RATIO_NORM, "det-ratio-norm"),
            (InvariantFlags::REGRET_CONSISTENT, "regret-consistent"),
        ];
        NAMES
            .iter()
            .filter(|(b, _)| bits & b != 0)
            .map(|(_, n)| *n)
            .collect()
    }
}

/// Worst-case slack of a `value <= bound` family; negative means violated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slack(pub f64);

impl Default for Slack {
    fn default() -> Self {
        Slack(f64::INFINITY)
    }
}

impl Slack {
    pub fn observe(&mut self, bound: f64, value: f64) {
        self.0 = self.0.min(bound - value);
    }
}

#[derive(Clone, Debug)]
pub struct TabularMonitor {
    cap: f64,
    span_bound: f64,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    prev_q: Vec<f64>,
    prev_v: Vec<f64>,
    v_star: Option<Vec<f64>>,
    q_star: Option<Vec<f64>>,
    pub monotone: bool,
    pub span_slack: Slack,
    pub range_ok: bool,
    pub bonus_sum: f64,
    /// `min_t min (V_t - V*, Q_t - Q*)`, when the oracle was supplied.
    pub optimism_gap: f64,
}

impl TabularMonitor {
    pub fn new(num_states: usize, num_actions: usize, config: &AlgoConfig) -> Self {
        let cap = config.value_cap();
        Self {
            cap,
            span_bound: config.span_bound,
            num_states,
            num_actions,
            horizon: config.horizon,
            prev_q: vec![cap; num_states * num_actions],
            prev_v: vec![cap; num_states],
            v_star: None,
            q_star: None,
            monotone: true,
            span_slack: Slack::default(),
            range_ok: true,
            bonus_sum: 0.0,
            optimism_gap: f64::INFINITY,
        }
    }

    /// Also compare every iterate against the discounted optimum.
    pub fn with_optimum(mut self, v_star: &[f64], q_star: &[f64]) -> Self {
        self.v_star = Some(v_star.to_vec());
        self.q_star = Some(q_star.to_vec());
        self
    }

    pub fn bonus_sum_bound(&self) -> f64 {
        2.0 * ((self.num_states * self.num_actions * self.horizon) as f64).sqrt()
    }

    pub fn flags(&self) -> InvariantFlags {
        let mut f = InvariantFlags::default();
        f.record(InvariantFlags::MONOTONE, self.monotone);
        f.record(InvariantFlags::SPAN_CLIP, self.span_slack.0 >= -SPAN_TOL);
        f.record(InvariantFlags::VALUE_RANGE, self.range_ok);
        f.record(InvariantFlags::BONUS_SUM, self.bonus_sum <= self.bonus_sum_bound());
        if self.v_star.is_some() {
            f.record(
                InvariantFlags::OPTIMISM,
                self.optimism_gap >= -TABULAR_OPTIMISM_TOL,
            );
        }
        f
    }
}

impl TabularObserver for TabularMonitor {
    fn on_step(&mut self, _t: usize, _s: usize, _a: usize, count_before: u64, agent: &TabularAgent) {
        self.bonus_sum += 1.0 / (count_before as f64).sqrt();
        let q = agent.q();
        let v = agent.v();
        self.monotone &= q.iter().zip(&self.prev_q).all(|(n, o)| n <= o)
            && v.iter().zip(&self.prev_v).all(|(n, o)| n <= o);
        self.range_ok &= q.iter().chain(v).all(|&x| (0.0..=self.cap).contains(&x));
        self.span_slack.observe(self.span_bound, span(v));
        for s in 0..self.num_states {
            let row = agent.q_row(s);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            self.range_ok &= v[s] <= agent.v_tilde()[s] && agent.v_tilde()[s] <= best;
        }
        if let (Some(vs), Some(qs)) = (&self.v_star, &self.q_star) {
            let gap_v = v.iter().zip(vs).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
            let gap_q = q.iter().zip(qs).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
            self.optimism_gap = self.optimism_gap.min(gap_v).min(gap_q);
        }
        self.prev_q.copy_from_slice(q);
        self.prev_v.copy_from_slice(v);
    }
}

#[derive(Clone, Debug)]
pub struct LinearMonitor {
    dim: usize,
    horizon: usize,
    lambda: f64,
    cap: f64,
    span_bound: f64,
    clip_mode: ClipMode,
    v_star: Option<Vec<f64>>,
    phis: Vec<DVector<f64>>,
    pub plans: usize,
    pub episodes: usize,
    pub weight_slack: Slack,
    pub cap_ok: bool,
    pub span_slack: Slack,
    pub table_order_ok: bool,
    pub potential_sum: f64,
    pub det_ratio_slack: Slack,
    pub optimism_gap: f64,
}

impl LinearMonitor {
    pub fn new(dim: usize, config: &AlgoConfig) -> Self {
        Self {
            dim,
            horizon: config.horizon,
            lambda: config.lambda,
            cap: config.value_cap(),
            span_bound: config.span_bound,
            clip_mode: config.clip_mode,
            v_star: None,
            phis: Vec::with_capacity(config.horizon),
            plans: 0,
            episodes: 1,
            weight_slack: Slack::default(),
            cap_ok: true,
            span_slack: Slack::default(),
            table_order_ok: true,
            potential_sum: 0.0,
            det_ratio_slack: Slack::default(),
            optimism_gap: f64::INFINITY,
        }
    }

    pub fn with_optimum(mut self, v_star: &[f64]) -> Self {
        self.v_star = Some(v_star.to_vec());
        self
    }

    pub fn episode_bound(&self) -> f64 {
        episode_bound(self.dim, self.horizon, self.lambda)
    }

    pub fn potential_bound(&self) -> f64 {
        2.0 * self.dim as f64 * (1.0 + self.horizon as f64).ln()
    }

    /// `sum_i phi_i^T Lambda_bar_T^{-1} phi_i` over the whole history, with
    /// the final matrix inverted from scratch.
    pub fn final_potential(&self) -> f64 {
        if self.phis.is_empty() {
            return 0.0;
        }
        let gram = crate::linear::gram(self.dim, self.lambda, &self.phis);
        let inv = spd_inverse(&gram).expect("Gram matrix is positive definite");
        self.phis.iter().map(|phi| quad_form(&inv, phi)).sum()
    }

    pub fn flags(&self) -> InvariantFlags {
        let mut f = InvariantFlags::default();
        f.record(
            InvariantFlags::EPISODE_COUNT,
            self.episodes as f64 <= self.episode_bound(),
        );
        if self.clip_mode == ClipMode::MinOfVTilde {
            f.record(InvariantFlags::WEIGHT_NORM, self.weight_slack.0 >= -WEIGHT_TOL);
        }
        f.record(
            InvariantFlags::SPAN_CLIP,
            self.span_slack.0 >= -SPAN_TOL,
        );
        f.record(InvariantFlags::VALUE_RANGE, self.cap_ok && self.table_order_ok);
        f.record(
            InvariantFlags::ELLIPTICAL_POTENTIAL,
            self.potential_sum <= self.potential_bound(),
        );
        f.record(
            InvariantFlags::FINAL_POTENTIAL,
            self.final_potential() <= self.dim as f64 + POTENTIAL_TOL,
        );
        f.record(InvariantFlags::DET_RATIO_NORM, self.det_ratio_slack.0 >= -1e-12);
        if self.v_star.is_some() {
            f.record(
                InvariantFlags::OPTIMISM,
                self.optimism_gap >= -LINEAR_OPTIMISM_TOL,
            );
        }
        f
    }
}

impl LinearObserver for LinearMonitor {
    fn on_plan(&mut self, plan: &EpisodePlan, cov: &CovarianceState) {
        self.plans += 1;
        let n = plan.start_time - 1;
        let weight_bound = weight_norm_bound(self.span_bound, self.dim, n, cov.lambda());
        for w in &plan.weights {
            self.weight_slack.observe(weight_bound, w.norm());
        }
        for t in plan.times() {
            let q = plan.q_table(t);
            let v = plan.v_table(t);
            let vt = plan.v_tilde_table(t);
            self.cap_ok &= q.iter().all(|&x| x <= self.cap);
            self.span_slack.observe(self.span_bound, span(v));
            self.table_order_ok &= v.iter().zip(vt).all(|(a, b)| a <= b);
            let na = q.len() / v.len();
            for (s, &best) in vt.iter().enumerate() {
                let row_max = q[s * na..(s + 1) * na]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                self.table_order_ok &= best == row_max;
            }
            if let Some(vs) = &self.v_star {
                let gap = v.iter().zip(vs).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
                self.optimism_gap = self.optimism_gap.min(gap);
            }
        }
    }

    fn on_step(&mut self, step: &LinearStep<'_>) {
        self.potential_sum += step.potential;
        self.phis.push(step.phi.clone());
        if step.advanced {
            self.episodes += 1;
        } else {
            // ||phi||_{Lambda_k^{-1}} <= sqrt(2) ||phi||_{Lambda_bar_t^{-1}}
            self.det_ratio_slack
                .observe(2.0 * step.updated_quad, step.episode_quad);
        }
    }
}
