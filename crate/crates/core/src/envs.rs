//! Seeded instance generators: the slippery Gridworld family and small
//! random MDPs for property tests.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TupleDataset;
use crate::error::{Error, Result};
use crate::mdp::{sample_trajectory_with, FiniteMdp, TimedPolicy};
use crate::rng::{dirichlet_ones, RngSpec};
use crate::tables::{ActionTable, Dims};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

fn default_slip() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    /// Side length; the grid is `n x n` and the horizon is `n`.
    pub n: usize,
    #[serde(default = "default_slip")]
    pub slip: f64,
    #[serde(default)]
    pub reward_seed: u64,
    #[serde(default)]
    pub policy_seed: u64,
}

impl GridworldSpec {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            slip: default_slip(),
            reward_seed: 0,
            policy_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("gridworld", format!("n = {} must be at least 2", self.n)));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::invalid("gridworld", format!("slip = {} must lie in [0, 1]", self.slip)));
        }
        Ok(())
    }

    /// Cell reached by moving `dir` from `cell`; blocked moves stay put.
    pub fn move_from(&self, cell: usize, dir: usize) -> usize {
        let (row, col) = (cell / self.n, cell % self.n);
        let (row, col) = match dir {
            UP if row > 0 => (row - 1, col),
            DOWN if row + 1 < self.n => (row + 1, col),
            LEFT if col > 0 => (row, col - 1),
            RIGHT if col + 1 < self.n => (row, col + 1),
            _ => (row, col),
        };
        row * self.n + col
    }
}

/// States are cells `row * n + col`; the episode starts in the top-left cell.
/// The intended move happens with probability `1 - slip`; otherwise one of the
/// four moves is taken uniformly at random.
pub fn build_gridworld(spec: &GridworldSpec) -> Result<FiniteMdp> {
    spec.validate()?;
    let ns = spec.n * spec.n;
    let na = 4;
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            for dir in 0..na {
                let mass = spec.slip / 4.0 + if dir == a { 1.0 - spec.slip } else { 0.0 };
                row[spec.move_from(s, dir)] += mass;
            }
        }
    }
    let mut rng = RngSpec::from_seed(spec.reward_seed).rng();
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let mut p0 = vec![0.0; ns];
    p0[0] = 1.0;
    FiniteMdp::new(Dims::new(ns, na, spec.n), transition, reward, p0)
}

fn random_policy<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> TimedPolicy {
    let mut table = ActionTable::zeros(dims);
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            table.row_mut(t, s).copy_from_slice(&dirichlet_ones(rng, dims.num_actions));
        }
    }
    TimedPolicy::new_unchecked(table)
}

/// `count` policies with independent Dirichlet(1) rows; policy `k` depends
/// only on `(seed, k)`.
pub fn random_target_policies(mdp: &FiniteMdp, count: usize, seed: u64) -> Result<Vec<TimedPolicy>> {
    if count == 0 {
        return Err(Error::invalid("policy count", "need at least one policy"));
    }
    let root = RngSpec::from_seed(seed);
    Ok((0..count)
        .map(|k| random_policy(&mut root.split(k as u64).rng(), mdp.dims()))
        .collect())
}

/// Complete episodes from the logging policies in turn, flattened into
/// tuples and shuffled.
pub fn generate_offline_log(
    mdp: &FiniteMdp,
    logging_policies: &[TimedPolicy],
    episodes: usize,
    seed: u64,
) -> Result<TupleDataset> {
    if logging_policies.is_empty() {
        return Err(Error::invalid("logging policies", "need at least one policy"));
    }
    for p in logging_policies {
        p.check_dims(mdp.dims(), "logging")?;
    }
    let root = RngSpec::from_seed(seed);
    let mut data = TupleDataset::default();
    for i in 0..episodes {
        let policy = &logging_policies[i % logging_policies.len()];
        let traj = sample_trajectory_with(mdp, policy, &mut root.split(i as u64).rng());
        data.extend_from_trajectory(&traj);
    }
    data.records.shuffle(&mut root.split(u64::MAX).rng());
    Ok(data)
}

/// A random model with Dirichlet(1) transition rows and initial
/// distribution, uniform `[0, 1]` rewards, and a random target policy.
pub fn random_mdp(dims: Dims, seed: u64) -> Result<(FiniteMdp, TimedPolicy)> {
    dims.check_positive()?;
    let mut rng = RngSpec::from_seed(seed).rng();
    let (ns, na) = (dims.num_states, dims.num_actions);
    let transition: Vec<f64> = (0..ns * na).flat_map(|_| dirichlet_ones(&mut rng, ns)).collect();
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let p0 = dirichlet_ones(&mut rng, ns);
    let mdp = FiniteMdp::new(dims, transition, reward, p0)?;
    let policy = random_policy(&mut rng, dims);
    Ok((mdp, policy))
}

/// Inclusive size ranges for random instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub states: (usize, usize),
    pub actions: (usize, usize),
    pub horizon: (usize, usize),
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            states: (2, 4),
            actions: (2, 3),
            horizon: (2, 3),
        }
    }
}

impl InstanceShape {
    pub fn draw_dims(&self, seed: u64) -> Dims {
        let mut rng = RngSpec::new(seed, 1).rng();
        Dims::new(
            rng.random_range(self.states.0..=self.states.1),
            rng.random_range(self.actions.0..=self.actions.1),
            rng.random_range(self.horizon.0..=self.horizon.1),
        )
    }

    /// Random instance number `index` of the family seeded by `seed`.
    pub fn instance(&self, seed: u64, index: u64) -> Result<(FiniteMdp, TimedPolicy)> {
        let key = RngSpec::from_seed(seed).split(index).seed;
        random_mdp(self.draw_dims(key), key)
    }
}

/// Random behavior policy with Dirichlet(1) rows, for challengers and logs.
pub fn random_behavior(dims: Dims, spec: &RngSpec) -> TimedPolicy {
    random_policy(&mut spec.rng(), dims)
}
