//! Seeded benchmark environments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{Error, Result};
use crate::mdp::{tabular_to_onehot_linear, LinearMdpEnv, TabularMdp};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Reward for pushing right at the far end of the chain.
pub const CHAIN_FAR_REWARD: f64 = 1.0;
/// Reward for pulling left at the near end of the chain.
pub const CHAIN_NEAR_REWARD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Chain,
    RandomTabular,
    RandomLinear,
    OnehotOfTabular,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Chain => "chain",
            EnvKind::RandomTabular => "random_tabular",
            EnvKind::RandomLinear => "random_linear",
            EnvKind::OnehotOfTabular => "onehot_of_tabular",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            EnvKind::Chain,
            EnvKind::RandomTabular,
            EnvKind::RandomLinear,
            EnvKind::OnehotOfTabular,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

/// Recipe for an environment. `OnehotOfTabular` embeds a random tabular MDP
/// unless `base` is `Chain`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub states: usize,
    pub actions: usize,
    pub dim: usize,
    pub seed: u64,
    pub slip: f64,
    pub concentration: f64,
    pub base: EnvKind,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            kind: EnvKind::Chain,
            states: 5,
            actions: 2,
            dim: 4,
            seed: 0,
            slip: 0.1,
            concentration: 1.0,
            base: EnvKind::RandomTabular,
        }
    }
}

/// A built environment: either a tabular MDP or a linear one.
#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    Tabular(TabularMdp),
    Linear(LinearMdpEnv),
}

impl Env {
    /// Ground-truth tabular view, used by the oracle.
    pub fn to_tabular(&self) -> Result<TabularMdp> {
        match self {
            Env::Tabular(mdp) => Ok(mdp.clone()),
            Env::Linear(env) => crate::mdp::linear_to_tabular(env),
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 || self.dim == 0 {
            return Err(Error::Config("environment sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::Config(format!("slip {} not in [0, 1]", self.slip)));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::Config("concentration must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Env> {
        self.validate()?;
        let tabular = |kind| match kind {
            EnvKind::Chain => make_chain(self.states, self.slip),
            _ => make_random_tabular(self.states, self.actions, self.concentration, self.seed),
        };
        Ok(match self.kind {
            EnvKind::Chain | EnvKind::RandomTabular => Env::Tabular(tabular(self.kind)?),
            EnvKind::RandomLinear => Env::Linear(make_random_linear(
                self.dim,
                self.states,
                self.actions,
                self.seed,
            )?),
            EnvKind::OnehotOfTabular => Env::Linear(tabular_to_onehot_linear(&tabular(self.base)?)),
        })
    }
}

/// Exploration chain with actions `LEFT` and `RIGHT`, starting at state 0.
///
/// `LEFT` moves one state down (staying at 0). `RIGHT` moves one state up
/// with probability `1 - slip` and otherwise one state down (staying at 0);
/// at the last state a successful `RIGHT` stays put. The only rewards are
/// [`CHAIN_FAR_REWARD`] at `(S-1, RIGHT)` and [`CHAIN_NEAR_REWARD`] at
/// `(0, LEFT)`.
pub fn make_chain(num_states: usize, slip: f64) -> Result<TabularMdp> {
    if num_states < 2 {
        return Err(Error::Config("chain needs at least 2 states".into()));
    }
    if !(0.0..=0.5).contains(&slip) {
        return Err(Error::Config(format!("chain slip {slip} not in [0, 0.5]")));
    }
    let ns = num_states;
    let mut transition = vec![0.0; ns * 2 * ns];
    let mut reward = vec![0.0; ns * 2];
    for s in 0..ns {
        let down = s.saturating_sub(1);
        let up = (s + 1).min(ns - 1);
        transition[(s * 2 + LEFT) * ns + down] = 1.0;
        let row = &mut transition[(s * 2 + RIGHT) * ns..][..ns];
        row[up] += 1.0 - slip;
        row[down] += slip;
    }
    reward[LEFT] = CHAIN_NEAR_REWARD;
    reward[(ns - 1) * 2 + RIGHT] = CHAIN_FAR_REWARD;
    TabularMdp::new(ns, 2, transition, reward, 0)
}

/// Normalized gamma variates with shape `concentration`; every entry is
/// strictly positive.
fn dirichlet_row(rng: &mut ChaCha8Rng, gamma: &Gamma<f64>, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE))
        .collect();
    normalize(&mut row);
    row
}

fn simplex_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| {
            let x: f64 = Exp1.sample(rng);
            x.max(f64::MIN_POSITIVE)
        })
        .collect();
    normalize(&mut row);
    row
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub fn make_random_tabular(
    num_states: usize,
    num_actions: usize,
    concentration: f64,
    seed: u64,
) -> Result<TabularMdp> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::Config(format!("concentration {concentration}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(dirichlet_row(&mut rng, &gamma, num_states));
    }
    let reward = (0..num_states * num_actions)
        .map(|_| rng.random::<f64>())
        .collect();
    TabularMdp::new(num_states, num_actions, transition, reward, 0)
}

/// Random linear MDP: simplex features, probability-distribution measures
/// and `theta` uniform on `[0, 1]^d`.
pub fn make_random_linear(
    dim: usize,
    num_states: usize,
    num_actions: usize,
    seed: u64,
) -> Result<LinearMdpEnv> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(num_states * num_actions * dim);
    for _ in 0..num_states * num_actions {
        features.extend(simplex_row(&mut rng, dim));
    }
    let mut measures = Vec::with_capacity(dim * num_states);
    for _ in 0..dim {
        measures.extend(simplex_row(&mut rng, num_states));
    }
    let theta = (0..dim).map(|_| rng.random::<f64>()).collect();
    LinearMdpEnv::new(dim, num_states, num_actions, features, measures, theta, 0)
}

/// Inverse-CDF draw from `row` with a single uniform `u` in `[0, 1)`.
pub fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // state with positive mass.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}
