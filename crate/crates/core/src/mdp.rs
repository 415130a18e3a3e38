//! Finite-horizon MDPs, time-indexed policies, trajectories and sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_categorical, RngSpec};
use crate::tables::{ActionTable, Dims};

/// Tolerance for probability rows summing to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Anything the backward recursions can run on: the true model or an
/// empirical one estimated from logged tuples.
pub trait Dynamics {
    fn dims(&self) -> Dims;

    fn reward(&self, t: usize, s: usize, a: usize) -> f64;

    /// `sum_{s'} p(s'|s,a) f(s')` for the transition taken at step `t`.
    fn expect_next<F: Fn(usize) -> f64>(&self, t: usize, s: usize, a: usize, f: F) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// p[s][a][s'] row-major.
    transition: Vec<f64>,
    /// r[s][a] row-major.
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
}

impl TryFrom<RawMdp> for FiniteMdp {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        FiniteMdp::new(
            Dims::new(raw.num_states, raw.num_actions, raw.horizon),
            raw.transition,
            raw.reward,
            raw.initial_dist,
        )
    }
}

impl From<FiniteMdp> for RawMdp {
    fn from(m: FiniteMdp) -> Self {
        RawMdp {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            transition: m.transition,
            reward: m.reward,
            initial_dist: m.initial_dist,
        }
    }
}

fn check_simplex(row: &[f64], what: &'static str, at: impl Fn() -> String) -> Result<()> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::invalid(what, format!("{}: entry {p} is negative or not finite", at())));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(what, format!("{}: row sums to {sum}", at())));
    }
    Ok(())
}

impl FiniteMdp {
    pub fn new(dims: Dims, transition: Vec<f64>, reward: Vec<f64>, initial_dist: Vec<f64>) -> Result<Self> {
        dims.check_positive()?;
        let (ns, na) = (dims.num_states, dims.num_actions);
        if transition.len() != ns * na * ns {
            return Err(Error::Shape(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                ns * na * ns
            )));
        }
        if reward.len() != ns * na {
            return Err(Error::Shape(format!("reward has {} entries, expected {}", reward.len(), ns * na)));
        }
        if initial_dist.len() != ns {
            return Err(Error::Shape(format!(
                "initial distribution has {} entries, expected {ns}",
                initial_dist.len()
            )));
        }
        for (i, row) in transition.chunks(ns).enumerate() {
            check_simplex(row, "transition", || format!("p(.|s={}, a={})", i / na, i % na))?;
        }
        check_simplex(&initial_dist, "initial distribution", || "p0".into())?;
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(Error::invalid("reward", format!("r(s={}, a={}) is not finite", i / na, i % na)));
        }
        Ok(Self {
            num_states: ns,
            num_actions: na,
            horizon: dims.horizon,
            transition,
            reward,
            initial_dist,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.num_states, self.num_actions, self.horizon)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.num_actions + a) * self.num_states;
        &self.transition[i..i + self.num_states]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward_sa(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    /// Same model with every reward replaced.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        FiniteMdp::new(self.dims(), self.transition.clone(), reward, self.initial_dist.clone())
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut dims = self.dims();
        dims.horizon = horizon;
        FiniteMdp::new(dims, self.transition.clone(), self.reward.clone(), self.initial_dist.clone())
    }
}

impl Dynamics for FiniteMdp {
    fn dims(&self) -> Dims {
        FiniteMdp::dims(self)
    }

    fn reward(&self, _t: usize, s: usize, a: usize) -> f64 {
        self.reward_sa(s, a)
    }

    fn expect_next<F: Fn(usize) -> f64>(&self, _t: usize, s: usize, a: usize, f: F) -> f64 {
        self.transition_row(s, a)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s2, &p)| p * f(s2))
            .sum()
    }
}

/// Time-indexed stochastic policy `pi_t(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActionTable", into = "ActionTable")]
pub struct TimedPolicy {
    probs: ActionTable,
}

impl TryFrom<ActionTable> for TimedPolicy {
    type Error = Error;

    fn try_from(probs: ActionTable) -> Result<Self> {
        TimedPolicy::new(probs)
    }
}

impl From<TimedPolicy> for ActionTable {
    fn from(p: TimedPolicy) -> Self {
        p.probs
    }
}

impl TimedPolicy {
    /// Builds a policy, rejecting any row that is not a probability simplex.
    pub fn new(probs: ActionTable) -> Result<Self> {
        probs.dims.check_positive()?;
        if probs.data.len() != probs.dims.action_cells() {
            return Err(Error::Shape("policy table length does not match its dimensions".into()));
        }
        let policy = Self { probs };
        let report = policy.validation_report();
        if let Some(issue) = report.issues.first() {
            return Err(Error::invalid("policy", issue.to_string()));
        }
        Ok(policy)
    }

    /// Wraps a table without checking it; use [`validate_policy`] to inspect it.
    pub fn new_unchecked(probs: ActionTable) -> Self {
        Self { probs }
    }

    pub fn uniform(dims: Dims) -> Self {
        let p = 1.0 / dims.num_actions as f64;
        Self {
            probs: ActionTable {
                dims,
                data: vec![p; dims.action_cells()],
            },
        }
    }

    pub fn dims(&self) -> Dims {
        self.probs.dims
    }

    #[inline]
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs.get(t, s, a)
    }

    #[inline]
    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        self.probs.row(t, s)
    }

    pub fn table(&self) -> &ActionTable {
        &self.probs
    }

    pub fn check_dims(&self, expected: Dims, role: &str) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::Shape(format!(
                "{role} policy has dims {:?}, model has {:?}",
                self.dims(),
                expected
            )));
        }
        Ok(())
    }

    fn validation_report(&self) -> ValidationReport {
        let dims = self.dims();
        let mut issues = Vec::new();
        for t in 0..dims.horizon {
            for s in 0..dims.num_states {
                let row = self.row(t, s);
                for (a, &p) in row.iter().enumerate() {
                    if !p.is_finite() || p < 0.0 {
                        issues.push(PolicyIssue::Negative { t, s, a, value: p });
                    }
                }
                let residual = 1.0 - row.iter().sum::<f64>();
                if residual.is_nan() || residual.abs() > SIMPLEX_TOL {
                    issues.push(PolicyIssue::Sum { t, s, residual });
                }
            }
        }
        ValidationReport { issues }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyIssue {
    /// `residual = 1 - sum_a pi(a|s)`.
    Sum { t: usize, s: usize, residual: f64 },
    Negative { t: usize, s: usize, a: usize, value: f64 },
    Shape { detail: String },
}

impl std::fmt::Display for PolicyIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyIssue::Sum { t, s, residual } => {
                write!(f, "row (t={t}, s={s}) misses the simplex by {residual:e}")
            }
            PolicyIssue::Negative { t, s, a, value } => {
                write!(f, "entry (t={t}, s={s}, a={a}) = {value} is negative or not finite")
            }
            PolicyIssue::Shape { detail } => f.write_str(detail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<PolicyIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Lists every row of `policy` that is not a valid distribution over the
/// actions of `mdp`. Never fails.
pub fn validate_policy(policy: &TimedPolicy, mdp: &FiniteMdp) -> ValidationReport {
    if policy.dims() != mdp.dims() || policy.probs.data.len() != mdp.dims().action_cells() {
        return ValidationReport {
            issues: vec![PolicyIssue::Shape {
                detail: format!("policy dims {:?} vs model dims {:?}", policy.dims(), mdp.dims()),
            }],
        };
    }
    policy.validation_report()
}

/// `pi_t(a|s) / mu_t(a|s)`, with 0/0 taken as 0.
pub fn importance_ratio(target: &TimedPolicy, behavior: &TimedPolicy, t: usize, s: usize, a: usize) -> Result<f64> {
    ratio(target.prob(t, s, a), behavior.prob(t, s, a)).ok_or(Error::Coverage {
        t,
        s,
        a,
        target_prob: target.prob(t, s, a),
    })
}

#[inline]
pub(crate) fn ratio(pi: f64, mu: f64) -> Option<f64> {
    if mu > 0.0 {
        Some(pi / mu)
    } else if pi == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A (possibly suffix) trajectory; a full one starts at `t = 0` and has
/// exactly `horizon` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Checks the chaining and time-index invariants of a full trajectory.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.steps.len() != horizon {
            return Err(Error::invalid(
                "trajectory",
                format!("length {} differs from horizon {horizon}", self.steps.len()),
            ));
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.t != i {
                return Err(Error::invalid("trajectory", format!("step {i} carries t={}", step.t)));
            }
            if let Some(next) = self.steps.get(i + 1) {
                if next.state != step.next_state {
                    return Err(Error::invalid("trajectory", format!("break in the chain after step {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Samples one episode of `mdp` under `behavior` from the stream `rng`.
pub fn sample_trajectory(mdp: &FiniteMdp, behavior: &TimedPolicy, rng: &RngSpec) -> Result<Trajectory> {
    behavior.check_dims(mdp.dims(), "behavior")?;
    Ok(sample_trajectory_with(mdp, behavior, &mut rng.rng()))
}

/// Sampling core; dimensions must already agree.
pub fn sample_trajectory_with<R: Rng + ?Sized>(mdp: &FiniteMdp, behavior: &TimedPolicy, rng: &mut R) -> Trajectory {
    let mut state = sample_categorical(rng, mdp.initial_dist());
    let mut steps = Vec::with_capacity(mdp.horizon());
    for t in 0..mdp.horizon() {
        let action = sample_categorical(rng, behavior.row(t, state));
        let next_state = sample_categorical(rng, mdp.transition_row(state, action));
        steps.push(Step {
            t,
            state,
            action,
            reward: mdp.reward_sa(state, action),
            next_state,
        });
        state = next_state;
    }
    Trajectory { steps }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(horizon: usize) -> FiniteMdp {
        FiniteMdp::new(Dims::new(1, 1, horizon), vec![1.0], vec![1.0], vec![1.0]).unwrap()
    }

    /// 2 states, 2 actions, horizon 2; every row has full support.
    pub(crate) fn two_by_two() -> (FiniteMdp, TimedPolicy) {
        let dims = Dims::new(2, 2, 2);
        let mdp = FiniteMdp::new(
            dims,
            vec![0.7, 0.3, 0.2, 0.8, 0.5, 0.5, 0.1, 0.9],
            vec![1.0, 0.0, 0.5, 2.0],
            vec![0.6, 0.4],
        )
        .unwrap();
        let pi = TimedPolicy::new(ActionTable::from_vec(dims, vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5, 0.9, 0.1]).unwrap())
            .unwrap();
        (mdp, pi)
    }

    #[test]
    fn single_state_chain_rewards() {
        let mdp = chain(3);
        let pi = TimedPolicy::uniform(mdp.dims());
        let traj = sample_trajectory(&mdp, &pi, &RngSpec::from_seed(0)).unwrap();
        assert_eq!(traj.steps.iter().map(|s| s.reward).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
        traj.validate(3).unwrap();
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let (mdp, pi) = two_by_two();
        let spec = RngSpec::new(99, 4);
        let a = sample_trajectory(&mdp, &pi, &spec).unwrap();
        let b = sample_trajectory(&mdp, &pi, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_trajectories_chain_and_match_rewards() {
        let (mdp, pi) = two_by_two();
        for k in 0..200 {
            let traj = sample_trajectory(&mdp, &pi, &RngSpec::new(3, k)).unwrap();
            traj.validate(2).unwrap();
            for step in &traj.steps {
                assert_eq!(step.reward, mdp.reward_sa(step.state, step.action));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let (mdp, _) = two_by_two();
        let wrong = TimedPolicy::uniform(Dims::new(3, 2, 2));
        assert!(matches!(
            sample_trajectory(&mdp, &wrong, &RngSpec::from_seed(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn ratio_cases() {
        let dims = Dims::new(1, 2, 1);
        let pi = TimedPolicy::new(ActionTable::from_vec(dims, vec![0.8, 0.2]).unwrap()).unwrap();
        let mu = TimedPolicy::new(ActionTable::from_vec(dims, vec![0.4, 0.6]).unwrap()).unwrap();
        assert_eq!(importance_ratio(&pi, &mu, 0, 0, 0).unwrap(), 2.0);
        assert_eq!(importance_ratio(&pi, &pi, 0, 0, 1).unwrap(), 1.0);

        let pi = TimedPolicy::new(ActionTable::from_vec(dims, vec![0.5, 0.5]).unwrap()).unwrap();
        let mu = TimedPolicy::new(ActionTable::from_vec(dims, vec![1.0, 0.0]).unwrap()).unwrap();
        assert!(matches!(
            importance_ratio(&pi, &mu, 0, 0, 1),
            Err(Error::Coverage { a: 1, .. })
        ));

        let pi = TimedPolicy::new(ActionTable::from_vec(dims, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(importance_ratio(&pi, &mu, 0, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn validation_report_cases() {
        let (mdp, _) = two_by_two();
        let uniform = TimedPolicy::uniform(mdp.dims());
        assert!(validate_policy(&uniform, &mdp).is_empty());

        let mut table = uniform.table().clone();
        table.set(1, 0, 0, 0.49);
        let report = validate_policy(&TimedPolicy::new_unchecked(table), &mdp);
        assert_eq!(report.issues.len(), 1);
        match report.issues[0] {
            PolicyIssue::Sum { t, s, residual } => {
                assert_eq!((t, s), (1, 0));
                assert!((residual - 0.01).abs() < 1e-12);
            }
            ref other => panic!("unexpected {other:?}"),
        }

        let mut table = uniform.table().clone();
        table.set(0, 1, 0, -0.1);
        table.set(0, 1, 1, 1.1);
        let report = validate_policy(&TimedPolicy::new_unchecked(table), &mdp);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, PolicyIssue::Negative { t: 0, s: 1, a: 0, .. })));
    }

    #[test]
    fn loader_revalidates() {
        let (mdp, _) = two_by_two();
        let mut json: serde_json::Value = serde_json::to_value(&mdp).unwrap();
        json["transition"][0] = serde_json::json!(0.9);
        assert!(serde_json::from_value::<FiniteMdp>(json).is_err());
    }

    /// Forward occupancy P(S_t = s) under `pi`.
    fn occupancy(mdp: &FiniteMdp, pi: &TimedPolicy) -> Vec<Vec<f64>> {
        let ns = mdp.num_states();
        let mut out = vec![mdp.initial_dist().to_vec()];
        for t in 0..mdp.horizon() - 1 {
            let mut next = vec![0.0; ns];
            for (s, &mass) in out[t].iter().enumerate() {
                for a in 0..mdp.num_actions() {
                    let w = mass * pi.prob(t, s, a);
                    for (s2, p) in mdp.transition_row(s, a).iter().enumerate() {
                        next[s2] += w * p;
                    }
                }
            }
            out.push(next);
        }
        out
    }

    #[test]
    fn visit_frequencies_match_forward_occupancy() {
        let (mdp, pi) = two_by_two();
        let exact = occupancy(&mdp, &pi);
        let n = 100_000;
        let mut counts = vec![vec![0usize; 2]; 2];
        let mut rng = RngSpec::new(17, 0).rng();
        for _ in 0..n {
            let traj = sample_trajectory_with(&mdp, &pi, &mut rng);
            for step in &traj.steps {
                counts[step.t][step.state] += 1;
            }
        }
        for t in 0..2 {
            for s in 0..2 {
                let p = exact[t][s];
                let freq = counts[t][s] as f64 / n as f64;
                let se = (p * (1.0 - p) / n as f64).sqrt();
                assert!((freq - p).abs() < 3.0 * se + 1e-12, "t={t} s={s}: {freq} vs {p}");
            }
        }
    }

    #[test]
    fn action_marginals_pass_chi_square() {
        let dims = Dims::new(1, 3, 1);
        let mdp = FiniteMdp::new(dims, vec![1.0, 1.0, 1.0], vec![0.0; 3], vec![1.0]).unwrap();
        let mu = TimedPolicy::new(ActionTable::from_vec(dims, vec![0.2, 0.5, 0.3]).unwrap()).unwrap();
        let n = 100_000;
        let mut counts = [0f64; 3];
        let mut rng = RngSpec::new(23, 1).rng();
        for _ in 0..n {
            counts[sample_trajectory_with(&mdp, &mu, &mut rng).steps[0].action] += 1.0;
        }
        let chi2: f64 = (0..3)
            .map(|a| {
                let e = n as f64 * mu.prob(0, 0, a);
                (counts[a] - e).powi(2) / e
            })
            .sum();
        // chi-square, 2 degrees of freedom, significance 0.001
        assert!(chi2 < 13.816, "chi2 = {chi2}");
    }
}
