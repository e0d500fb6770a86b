//! Exact reference solvers used for regret accounting and invariant checks.

use crate::error::{Error, Result};
use crate::mdp::{span, RunRecord, TabularMdp};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const ITERATION_CAP: u64 = 10_000_000;

/// Self-loop weight of the aperiodicity transform applied before relative
/// value iteration. `P' = tau I + (1 - tau) P` keeps the optimal gain and
/// scales the bias by `1 / (1 - tau)`.
const APERIODICITY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscountedSolution {
    pub gamma: f64,
    pub v: Vec<f64>,
    /// `(s, a)` row-major.
    pub q: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AverageRewardSolution {
    pub j_star: f64,
    /// Bias normalized so that `min_s v*(s) = 0`.
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub span: f64,
}

/// Average-reward and discounted optima of one MDP.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub j_star: f64,
    pub v_star: Vec<f64>,
    pub q_star: Vec<f64>,
    pub span_v_star: f64,
    pub discounted_v_star: Vec<f64>,
    pub discounted_q_star: Vec<f64>,
    pub gamma_used: f64,
}

impl OracleSolution {
    pub fn solve(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<Self> {
        let avg = solve_average_reward(mdp, tol)?;
        let disc = solve_discounted(mdp, gamma, tol)?;
        Ok(Self {
            j_star: avg.j_star,
            v_star: avg.v,
            q_star: avg.q,
            span_v_star: avg.span,
            discounted_v_star: disc.v,
            discounted_q_star: disc.q,
            gamma_used: gamma,
        })
    }

    pub fn min_discounted_v(&self) -> f64 {
        crate::mdp::min_of(&self.discounted_v_star)
    }
}

fn bellman_q(mdp: &TabularMdp, v: &[f64], gamma: f64, q: &mut [f64]) {
    let na = mdp.num_actions();
    for s in 0..mdp.num_states() {
        for a in 0..na {
            q[s * na + a] = mdp.reward(s, a) + gamma * mdp.expect(s, a, v);
        }
    }
}

fn row_max(q: &[f64], na: usize, out: &mut [f64]) {
    for (s, v) in out.iter_mut().enumerate() {
        *v = q[s * na..(s + 1) * na]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
    }
}

/// Value iteration from `V = 0` until successive iterates are within
/// `tol (1 - gamma) / gamma`, which puts the result within `tol` of the
/// fixed point.
pub fn solve_discounted(mdp: &TabularMdp, gamma: f64, tol: f64) -> Result<DiscountedSolution> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma {gamma} not in [0, 1)")));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    };
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut gap = f64::INFINITY;
    for _ in 0..ITERATION_CAP {
        bellman_q(mdp, &v, gamma, &mut q);
        row_max(&q, na, &mut next);
        gap = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if gap <= threshold {
            bellman_q(mdp, &v, gamma, &mut q);
            row_max(&q, na, &mut v);
            return Ok(DiscountedSolution { gamma, v, q });
        }
    }
    Err(Error::NonConvergence {
        iterations: ITERATION_CAP,
        gap,
    })
}

/// Relative value iteration with reference state 0 on the aperiodic
/// transform of `mdp`. Stops once the span of `T h - h` is at most `tol`.
pub fn solve_average_reward(mdp: &TabularMdp, tol: f64) -> Result<AverageRewardSolution> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let tau = APERIODICITY;
    let mut h = vec![0.0; ns];
    let mut th = vec![0.0; ns];
    let mut diff = vec![0.0; ns];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let gain = loop {
        if iterations == ITERATION_CAP {
            return Err(Error::NonConvergence {
                iterations: ITERATION_CAP,
                gap,
            });
        }
        iterations += 1;
        for s in 0..ns {
            th[s] = (0..na)
                .map(|a| mdp.reward(s, a) + tau * h[s] + (1.0 - tau) * mdp.expect(s, a, &h))
                .fold(f64::NEG_INFINITY, f64::max);
            diff[s] = th[s] - h[s];
        }
        gap = span(&diff);
        if gap <= tol {
            let lo = diff.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            break 0.5 * (lo + hi);
        }
        let reference = th[0];
        for (x, &y) in h.iter_mut().zip(&th) {
            *x = y - reference;
        }
    };

    // Undo the transform: v* = (1 - tau) h.
    let shift = crate::mdp::min_of(&h);
    let bias: Vec<f64> = h.iter().map(|x| (1.0 - tau) * (x - shift)).collect();
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = mdp.reward(s, a) + mdp.expect(s, a, &bias) - gain;
        }
    }
    let mut v = vec![0.0; ns];
    row_max(&q, na, &mut v);
    let shift = crate::mdp::min_of(&v);
    for x in v.iter_mut() {
        *x -= shift;
    }
    for x in q.iter_mut() {
        *x -= shift;
    }
    let span = span(&v);
    Ok(AverageRewardSolution {
        j_star: gain,
        v,
        q,
        span,
    })
}

/// `max_{s,a} |J* + q*(s,a) - r(s,a) - [P v*](s,a)|`.
pub fn average_reward_residual(mdp: &TabularMdp, sol: &AverageRewardSolution) -> f64 {
    let na = mdp.num_actions();
    let mut worst = 0.0f64;
    for s in 0..mdp.num_states() {
        for a in 0..na {
            let lhs = sol.j_star + sol.q[s * na + a];
            let rhs = mdp.reward(s, a) + mdp.expect(s, a, &sol.v);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// `max_{s,a} |Q*(s,a) - r(s,a) - gamma [P V*](s,a)|`.
pub fn discounted_residual(mdp: &TabularMdp, sol: &DiscountedSolution) -> f64 {
    let na = mdp.num_actions();
    let mut worst = 0.0f64;
    for s in 0..mdp.num_states() {
        for a in 0..na {
            let rhs = mdp.reward(s, a) + sol.gamma * mdp.expect(s, a, &sol.v);
            worst = worst.max((sol.q[s * na + a] - rhs).abs());
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscountedApproxReport {
    pub gamma: f64,
    pub span_v_star: f64,
    pub span_discounted: f64,
    pub max_gain_gap: f64,
    /// `ratio * sp(v*) - sp(V*)`, where `ratio` is 2 for the true bound.
    pub max_span_ratio_slack: f64,
    /// `(1 - gamma) sp(v*) - max_s |(1 - gamma) V*(s) - J*|`.
    pub max_j_gap_slack: f64,
    pub pass: bool,
}

pub fn check_discounted_approx(
    mdp: &TabularMdp,
    gamma: f64,
    tol: f64,
) -> Result<DiscountedApproxReport> {
    check_discounted_approx_with_ratio(mdp, gamma, tol, 2.0)
}

/// Same as [`check_discounted_approx`] with the span ratio as a parameter,
/// so the check can be run against a deliberately wrong bound.
pub fn check_discounted_approx_with_ratio(
    mdp: &TabularMdp,
    gamma: f64,
    tol: f64,
    ratio: f64,
) -> Result<DiscountedApproxReport> {
    let avg = solve_average_reward(mdp, tol)?;
    let disc = solve_discounted(mdp, gamma, tol)?;
    let span_discounted = span(&disc.v);
    let max_gain_gap = disc
        .v
        .iter()
        .map(|&v| ((1.0 - gamma) * v - avg.j_star).abs())
        .fold(0.0, f64::max);
    let max_span_ratio_slack = ratio * avg.span - span_discounted;
    let max_j_gap_slack = (1.0 - gamma) * avg.span - max_gain_gap;
    Ok(DiscountedApproxReport {
        gamma,
        span_v_star: avg.span,
        span_discounted,
        max_gain_gap,
        max_span_ratio_slack,
        max_j_gap_slack,
        pass: max_span_ratio_slack >= -tol && max_j_gap_slack >= -tol,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regret {
    pub series: Vec<f64>,
    pub total: f64,
}

/// Partial sums of `J* - r_t`, accumulated left to right.
pub fn regret_of(record: &RunRecord, j_star: f64) -> Regret {
    let mut acc = 0.0;
    let series: Vec<f64> = record
        .rewards
        .iter()
        .map(|r| {
            acc += j_star - r;
            acc
        })
        .collect();
    Regret {
        total: series.last().copied().unwrap_or(0.0),
        series,
    }
}
