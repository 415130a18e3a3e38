//! Exact backward recursions on a known model.
//!
//! Everything here is deterministic and closed form: value tables, the
//! next-state value variance `nu`, the behavior weight `u`, the optimal
//! behavior policy and baseline, coverage-set membership, and the exact
//! per-state variance of the baseline-corrected importance-sampling return.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ratio, Dynamics, FiniteMdp, TimedPolicy};
use crate::tables::{ActionTable, Dims, StateTable};

/// q, v, nu and u for one target policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub q: ActionTable,
    pub v: StateTable,
    pub nu: ActionTable,
    /// `u` for the optimal baseline `b* = q`.
    pub u: ActionTable,
}

impl ValueTables {
    pub fn solve<M: Dynamics>(model: &M, target: &TimedPolicy) -> Result<Self> {
        let (q, v) = compute_q_v(model, target)?;
        let nu = compute_nu(model, target, &v)?;
        let u = compute_u_bstar_recursive(model, target, &nu)?;
        Ok(Self { q, v, nu, u })
    }
}

/// A per-(t, s, a) control variate and its target-policy average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub b: ActionTable,
    pub b_bar: StateTable,
}

impl Baseline {
    /// Attaches `b_bar_t(s) = sum_a pi_t(a|s) b_t(s,a)`.
    pub fn new(b: ActionTable, target: &TimedPolicy) -> Result<Self> {
        target.check_dims(b.dims, "target")?;
        if let Some(x) = b.data.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid("baseline", format!("entry {x} is not finite")));
        }
        let dims = b.dims;
        let mut b_bar = StateTable::zeros(dims);
        for t in 0..dims.horizon {
            for s in 0..dims.num_states {
                b_bar.set(t, s, dot(target.row(t, s), b.row(t, s)));
            }
        }
        Ok(Self { b, b_bar })
    }

    pub fn zero(dims: Dims) -> Self {
        Self {
            b: ActionTable::zeros(dims),
            b_bar: StateTable::zeros(dims),
        }
    }

    pub fn dims(&self) -> Dims {
        self.b.dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub in_lambda_minus: bool,
    pub in_lambda: bool,
    /// (t, s, a) triples breaking the smallest set the policy fails.
    pub violations: Vec<(usize, usize, usize)>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_target<M: Dynamics>(model: &M, target: &TimedPolicy) -> Result<Dims> {
    let dims = model.dims();
    target.check_dims(dims, "target")?;
    Ok(dims)
}

/// Backward evaluation of `q_t` and `v_t`.
pub fn compute_q_v<M: Dynamics>(model: &M, target: &TimedPolicy) -> Result<(ActionTable, StateTable)> {
    let dims = check_target(model, target)?;
    let mut q = ActionTable::zeros(dims);
    let mut v = StateTable::zeros(dims);
    for t in (0..dims.horizon).rev() {
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                let future = if t + 1 < dims.horizon {
                    model.expect_next(t, s, a, |s2| v.get(t + 1, s2))
                } else {
                    0.0
                };
                q.set(t, s, a, model.reward(t, s, a) + future);
            }
            v.set(t, s, dot(target.row(t, s), q.row(t, s)));
        }
    }
    Ok((q, v))
}

/// `J(pi) = sum_s p0(s) v_0(s)`.
pub fn policy_performance(mdp: &FiniteMdp, target: &TimedPolicy) -> Result<f64> {
    let (_, v) = compute_q_v(mdp, target)?;
    Ok(dot(mdp.initial_dist(), v.step(0)))
}

/// Variance of `v_{t+1}(S')` given `(s, a)`; zero at the last step.
pub fn compute_nu<M: Dynamics>(model: &M, target: &TimedPolicy, v: &StateTable) -> Result<ActionTable> {
    let dims = check_target(model, target)?;
    let mut nu = ActionTable::zeros(dims);
    for t in 0..dims.horizon.saturating_sub(1) {
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                let mean = model.expect_next(t, s, a, |s2| v.get(t + 1, s2));
                let var = model.expect_next(t, s, a, |s2| {
                    let d = v.get(t + 1, s2) - mean;
                    d * d
                });
                nu.set(t, s, a, var);
            }
        }
    }
    Ok(nu)
}

/// Fills `out` with `mu*(.|s)` proportional to `pi(.|s) sqrt(u(s,.))`,
/// uniform when every weight is zero.
pub fn mu_star_row(pi: &[f64], u: &[f64], out: &mut [f64]) {
    let mut total = 0.0;
    for ((o, &p), &w) in out.iter_mut().zip(pi).zip(u) {
        *o = p * w.max(0.0).sqrt();
        total += *o;
    }
    if total > 0.0 {
        out.iter_mut().for_each(|o| *o /= total);
    } else {
        let uniform = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|o| *o = uniform);
    }
}

pub fn derive_mu_star(target: &TimedPolicy, u: &ActionTable) -> Result<TimedPolicy> {
    target.check_dims(u.dims, "target")?;
    let dims = u.dims;
    let mut probs = ActionTable::zeros(dims);
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            mu_star_row(target.row(t, s), u.row(t, s), probs.row_mut(t, s));
        }
    }
    Ok(TimedPolicy::new_unchecked(probs))
}

/// `b* = q`, so that `b_bar* = v`.
pub fn derive_b_star(target: &TimedPolicy, q: &ActionTable) -> Result<Baseline> {
    Baseline::new(q.clone(), target)
}

pub fn coverage_check(behavior: &TimedPolicy, target: &TimedPolicy, u: &ActionTable) -> CoverageReport {
    let dims = target.dims();
    let mut minus = Vec::new();
    let mut lambda = Vec::new();
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                let (pi, mu) = (target.prob(t, s, a), behavior.prob(t, s, a));
                if mu == 0.0 && pi > 0.0 {
                    minus.push((t, s, a));
                    if pi * u.get(t, s, a) > 0.0 {
                        lambda.push((t, s, a));
                    }
                }
            }
        }
    }
    let in_lambda = lambda.is_empty();
    CoverageReport {
        in_lambda_minus: minus.is_empty(),
        in_lambda,
        violations: if in_lambda { minus } else { lambda },
    }
}

/// One step of the recursive variance identity:
/// `sum_{a: mu>0} (pi^2/mu) [(q-b)^2 + nu + E Var_{t+1}(S')] - (v - b_bar)^2`.
/// Actions with `mu = 0` are never taken and contribute nothing.
#[allow(clippy::too_many_arguments)]
fn variance_at<M: Dynamics>(
    model: &M,
    target: &TimedPolicy,
    behavior_row: &[f64],
    values: &ExactSolver<'_, M>,
    baseline: &Baseline,
    next_var: Option<&[f64]>,
    t: usize,
    s: usize,
) -> f64 {
    let mut second = 0.0;
    for (a, &mu) in behavior_row.iter().enumerate() {
        if mu <= 0.0 {
            continue;
        }
        let pi = target.prob(t, s, a);
        if pi == 0.0 {
            continue;
        }
        let gap = values.q.get(t, s, a) - baseline.b.get(t, s, a);
        let mut inner = gap * gap + values.nu.get(t, s, a);
        if let Some(nv) = next_var {
            inner += model.expect_next(t, s, a, |s2| nv[s2]);
        }
        second += pi * pi / mu * inner;
    }
    let centre = values.v.get(t, s) - baseline.b_bar.get(t, s);
    second - centre * centre
}

/// Output of the alternating backward sweep `u_{T-1}, mu*_{T-1}, u_{T-2}, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSolution {
    pub u: ActionTable,
    pub mu_star: TimedPolicy,
    /// Conditional variance of the baseline-corrected return under `mu_star`.
    pub variance: StateTable,
}

/// Per-state exact variances plus the total over the initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorVariance {
    pub per_step: StateTable,
    pub total: f64,
}

/// Caches q, v and nu for one (model, target) pair.
pub struct ExactSolver<'a, M: Dynamics> {
    pub model: &'a M,
    pub target: &'a TimedPolicy,
    pub q: ActionTable,
    pub v: StateTable,
    pub nu: ActionTable,
}

impl<'a, M: Dynamics> ExactSolver<'a, M> {
    pub fn new(model: &'a M, target: &'a TimedPolicy) -> Result<Self> {
        let (q, v) = compute_q_v(model, target)?;
        let nu = compute_nu(model, target, &v)?;
        Ok(Self { model, target, q, v, nu })
    }

    pub fn dims(&self) -> Dims {
        self.model.dims()
    }

    pub fn b_star(&self) -> Baseline {
        // b_bar* is exactly v: both are the same dot product of pi with q
        Baseline {
            b: self.q.clone(),
            b_bar: self.v.clone(),
        }
    }

    /// u, mu* and the variance of G^b under mu*, for an arbitrary baseline.
    pub fn optimal_behavior(&self, baseline: &Baseline) -> Result<BehaviorSolution> {
        self.optimal_behavior_with(baseline, |_, _, pi, u, out| mu_star_row(pi, u, out))
    }

    /// The same sweep with a caller-supplied rule `(t, s, pi_row, u_row, out)`
    /// turning each row of `u` into behavior probabilities.
    pub fn optimal_behavior_with<F>(&self, baseline: &Baseline, mut row_rule: F) -> Result<BehaviorSolution>
    where
        F: FnMut(usize, usize, &[f64], &[f64], &mut [f64]),
    {
        let dims = self.dims();
        if baseline.dims() != dims {
            return Err(Error::Shape("baseline dims differ from the model".into()));
        }
        let mut u = ActionTable::zeros(dims);
        let mut mu = ActionTable::zeros(dims);
        let mut variance = StateTable::zeros(dims);
        for t in (0..dims.horizon).rev() {
            let next_var: Option<Vec<f64>> = (t + 1 < dims.horizon).then(|| variance.step(t + 1).to_vec());
            for s in 0..dims.num_states {
                for a in 0..dims.num_actions {
                    let gap = self.q.get(t, s, a) - baseline.b.get(t, s, a);
                    let mut value = gap * gap + self.nu.get(t, s, a);
                    if let Some(nv) = &next_var {
                        value += self.model.expect_next(t, s, a, |s2| nv[s2]);
                    }
                    u.set(t, s, a, value);
                }
                row_rule(t, s, self.target.row(t, s), u.row(t, s), mu.row_mut(t, s));
                let var = variance_at(
                    self.model,
                    self.target,
                    mu.row(t, s),
                    self,
                    baseline,
                    next_var.as_deref(),
                    t,
                    s,
                );
                variance.set(t, s, var);
            }
        }
        Ok(BehaviorSolution {
            u,
            mu_star: TimedPolicy::new_unchecked(mu),
            variance,
        })
    }

    /// Exact `Var(G^b | S_t = s)` under `behavior` for every (t, s).
    /// Fails unless `behavior` lies in the enlarged coverage set for `baseline`.
    pub fn estimator_variance(&self, behavior: &TimedPolicy, baseline: &Baseline) -> Result<StateTable> {
        let dims = self.dims();
        behavior.check_dims(dims, "behavior")?;
        let solution = self.optimal_behavior(baseline)?;
        let report = coverage_check(behavior, self.target, &solution.u);
        if let Some(&(t, s, a)) = report.violations.first().filter(|_| !report.in_lambda) {
            return Err(Error::Coverage {
                t,
                s,
                a,
                target_prob: self.target.prob(t, s, a),
            });
        }
        Ok(self.variance_unchecked(behavior, baseline))
    }

    /// The variance recursion without the coverage check. Only meaningful
    /// when `behavior` lies in the enlarged coverage set for `baseline`.
    pub fn variance_unchecked(&self, behavior: &TimedPolicy, baseline: &Baseline) -> StateTable {
        let dims = self.dims();
        let mut variance = StateTable::zeros(dims);
        for t in (0..dims.horizon).rev() {
            let next_var: Option<Vec<f64>> = (t + 1 < dims.horizon).then(|| variance.step(t + 1).to_vec());
            for s in 0..dims.num_states {
                let var = variance_at(
                    self.model,
                    self.target,
                    behavior.row(t, s),
                    self,
                    baseline,
                    next_var.as_deref(),
                    t,
                    s,
                );
                variance.set(t, s, var);
            }
        }
        variance
    }
}

impl ExactSolver<'_, FiniteMdp> {
    /// Law of total variance over `S_0 ~ p0`.
    pub fn total_variance(&self, per_step: &StateTable) -> f64 {
        let p0 = self.model.initial_dist();
        let v0 = self.v.step(0);
        let mean = dot(p0, v0);
        let spread: f64 = p0.iter().zip(v0).map(|(p, v)| p * (v - mean) * (v - mean)).sum();
        dot(p0, per_step.step(0)) + spread
    }
}

/// `u` for an arbitrary baseline via the alternating sweep, with the future
/// variance term evaluated exactly by the variance recursion.
pub fn compute_u<M: Dynamics>(model: &M, target: &TimedPolicy, baseline: &Baseline) -> Result<ActionTable> {
    Ok(ExactSolver::new(model, target)?.optimal_behavior(baseline)?.u)
}

/// `u` for `b* = q` by the short recursion
/// `u_t = nu_t + sum_{s',a'} rho_{t+1} p(s'|s,a) pi_{t+1}(a'|s') u_{t+1}(s',a')`,
/// where `rho_{t+1}` is taken against the `mu*` built from `u_{t+1}`.
pub fn compute_u_bstar_recursive<M: Dynamics>(
    model: &M,
    target: &TimedPolicy,
    nu: &ActionTable,
) -> Result<ActionTable> {
    let dims = check_target(model, target)?;
    let mut u = ActionTable::zeros(dims);
    let mut mu_row = vec![0.0; dims.num_actions];
    let mut carried = vec![0.0; dims.num_states];
    for t in (0..dims.horizon.saturating_sub(1)).rev() {
        // sum_{a'} rho pi u at step t+1, per successor state
        for (s2, slot) in carried.iter_mut().enumerate() {
            let pi = target.row(t + 1, s2);
            let next = u.row(t + 1, s2);
            mu_star_row(pi, next, &mut mu_row);
            *slot = (0..dims.num_actions)
                .map(|a| {
                    let rho = ratio(pi[a], mu_row[a]).unwrap_or(0.0);
                    rho * pi[a] * next[a]
                })
                .sum();
        }
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                let future = model.expect_next(t, s, a, |s2| carried[s2]);
                u.set(t, s, a, nu.get(t, s, a) + future);
            }
        }
    }
    Ok(u)
}

/// Exact variance of the baseline-corrected return under `behavior`.
pub fn exact_estimator_variance(
    mdp: &FiniteMdp,
    target: &TimedPolicy,
    behavior: &TimedPolicy,
    baseline: &Baseline,
) -> Result<EstimatorVariance> {
    let solver = ExactSolver::new(mdp, target)?;
    let per_step = solver.estimator_variance(behavior, baseline)?;
    let total = solver.total_variance(&per_step);
    Ok(EstimatorVariance { per_step, total })
}
