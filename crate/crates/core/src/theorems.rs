//! Numeric checks of the variance-gap decompositions between the doubly
//! optimal estimator and its three baselines.
//!
//! Each report compares, at every `(t, s)`, a left side built from two exact
//! variance recursions with right-side terms computed independently. The
//! delta terms come from their own expectations of future variance gaps,
//! never as residuals.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{dot, Baseline, ExactSolver};
use crate::error::Result;
use crate::mdp::{FiniteMdp, TimedPolicy};
use crate::rng::{dirichlet_ones, RngSpec};
use crate::tables::{ActionTable, StateTable};

pub const RESIDUAL_TOL: f64 = 1e-9;
pub const DELTA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// On-policy Monte Carlo.
    OnPolicy,
    /// PDIS under the variance-optimal behavior for the plain estimator.
    Odi,
    /// Baseline `q` under the target policy.
    Dr,
}

impl Comparison {
    /// Whether the decomposition is an identity or a lower bound.
    pub fn is_equality(self) -> bool {
        !matches!(self, Comparison::Odi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub t: usize,
    pub s: usize,
    pub lhs_gap: f64,
    pub rhs_terms: BTreeMap<String, f64>,
    /// `lhs_gap - sum(rhs_terms)`.
    pub residual: f64,
    pub delta_nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub comparison: Comparison,
    pub entries: Vec<GapEntry>,
}

impl GapReport {
    pub fn max_abs_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual.abs()).fold(0.0, f64::max)
    }

    /// Smallest `lhs - rhs`; the quantity bounded below for inequalities.
    pub fn min_slack(&self) -> f64 {
        self.entries.iter().map(|e| e.residual).fold(f64::INFINITY, f64::min)
    }

    pub fn min_delta(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.rhs_terms.get("delta").copied().unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        let relation = if self.comparison.is_equality() {
            self.max_abs_residual() <= RESIDUAL_TOL
        } else {
            self.min_slack() >= -RESIDUAL_TOL
        };
        relation && self.entries.iter().all(|e| e.delta_nonnegative)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Deliberate corruption used to show the checks can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    FlipDeltaSign,
}

/// Exact per-state variances of the four estimators for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFamily {
    pub q: ActionTable,
    pub v: StateTable,
    /// `u` for `b = q`.
    pub u_star: ActionTable,
    pub mu_star: TimedPolicy,
    /// Variance-optimal behavior for the plain (no-baseline) estimator.
    pub mu_pdis: TimedPolicy,
    pub on_policy: StateTable,
    pub odi: StateTable,
    pub dr: StateTable,
    pub dopt: StateTable,
    /// Totals over the initial distribution.
    pub totals: BTreeMap<String, f64>,
}

impl VarianceFamily {
    pub fn compute(mdp: &FiniteMdp, target: &TimedPolicy) -> Result<Self> {
        let solver = ExactSolver::new(mdp, target)?;
        let dims = solver.dims();
        let b_star = solver.b_star();
        let zero = Baseline::zero(dims);
        let opt = solver.optimal_behavior(&b_star)?;
        let pdis = solver.optimal_behavior(&zero)?;
        let on_policy = solver.variance_unchecked(target, &zero);
        let dr = solver.variance_unchecked(target, &b_star);
        let mut totals = BTreeMap::new();
        for (name, table) in [
            ("on_policy", &on_policy),
            ("odi", &pdis.variance),
            ("dr", &dr),
            ("dopt", &opt.variance),
        ] {
            totals.insert(name.to_string(), solver.total_variance(table));
        }
        Ok(Self {
            q: solver.q,
            v: solver.v,
            u_star: opt.u,
            mu_star: opt.mu_star,
            mu_pdis: pdis.mu_star,
            on_policy,
            odi: pdis.variance,
            dr,
            dopt: opt.variance,
            totals,
        })
    }
}

/// `sum_a pi u - (sum_a pi sqrt(u))^2`.
fn var_sqrt_u(pi: &[f64], u: &[f64]) -> f64 {
    let mean: f64 = pi.iter().zip(u).map(|(p, x)| p * x.max(0.0).sqrt()).sum();
    dot(pi, u) - mean * mean
}

/// `sum_a pi q^2 - v^2`.
fn var_q(pi: &[f64], q: &[f64], v: f64) -> f64 {
    pi.iter().zip(q).map(|(p, x)| p * x * x).sum::<f64>() - v * v
}

/// `E_{s'}[a_{t+1}(s') - b_{t+1}(s')]` for one (t, s, a); zero at the last step.
fn future_gap(mdp: &FiniteMdp, t: usize, s: usize, a: usize, a_tab: &StateTable, b_tab: &StateTable) -> f64 {
    if t + 1 >= mdp.horizon() {
        return 0.0;
    }
    mdp.transition_row(s, a)
        .iter()
        .enumerate()
        .map(|(s2, p)| p * (a_tab.get(t + 1, s2) - b_tab.get(t + 1, s2)))
        .sum()
}

fn sign(mutation: Mutation) -> f64 {
    match mutation {
        Mutation::None => 1.0,
        Mutation::FlipDeltaSign => -1.0,
    }
}

fn entry(t: usize, s: usize, lhs_gap: f64, terms: Vec<(&str, f64)>) -> GapEntry {
    let total: f64 = terms.iter().map(|(_, x)| x).sum();
    let delta = terms.iter().find(|(n, _)| *n == "delta").map_or(0.0, |(_, x)| *x);
    GapEntry {
        t,
        s,
        lhs_gap,
        residual: lhs_gap - total,
        delta_nonnegative: delta >= -DELTA_TOL,
        rhs_terms: terms.into_iter().map(|(n, x)| (n.to_string(), x)).collect(),
    }
}

/// On-policy MC minus the doubly optimal estimator:
/// `Var_pi(sqrt u) + Var_pi(q) + delta`, with
/// `delta = E_{a~pi, s'}[Var^on_{t+1} - Var^opt_{t+1}]`.
pub fn gap_vs_on_policy(mdp: &FiniteMdp, target: &TimedPolicy) -> Result<GapReport> {
    gap_vs_on_policy_from(mdp, target, &VarianceFamily::compute(mdp, target)?, Mutation::None)
}

pub fn gap_vs_on_policy_from(
    mdp: &FiniteMdp,
    target: &TimedPolicy,
    fam: &VarianceFamily,
    mutation: Mutation,
) -> Result<GapReport> {
    let dims = mdp.dims();
    let mut entries = Vec::with_capacity(dims.horizon * dims.num_states);
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            let pi = target.row(t, s);
            let delta: f64 = (0..dims.num_actions)
                .map(|a| pi[a] * future_gap(mdp, t, s, a, &fam.on_policy, &fam.dopt))
                .sum();
            entries.push(entry(
                t,
                s,
                fam.on_policy.get(t, s) - fam.dopt.get(t, s),
                vec![
                    ("var_sqrt_u", var_sqrt_u(pi, fam.u_star.row(t, s))),
                    ("var_q", var_q(pi, fam.q.row(t, s), fam.v.get(t, s))),
                    ("delta", sign(mutation) * delta),
                ],
            ));
        }
    }
    Ok(GapReport {
        comparison: Comparison::OnPolicy,
        entries,
    })
}

/// Plain PDIS under its own optimal behavior `mu_p` minus the doubly optimal
/// estimator, bounded below by `Var_{mu_p}(rho q) + delta` with
/// `delta = E_{a~mu_p}[rho^2 E_{s'}(Var^odi_{t+1} - Var^opt_{t+1})]`.
pub fn gap_vs_odi(mdp: &FiniteMdp, target: &TimedPolicy) -> Result<GapReport> {
    gap_vs_odi_from(mdp, target, &VarianceFamily::compute(mdp, target)?, Mutation::None)
}

pub fn gap_vs_odi_from(
    mdp: &FiniteMdp,
    target: &TimedPolicy,
    fam: &VarianceFamily,
    mutation: Mutation,
) -> Result<GapReport> {
    let dims = mdp.dims();
    let mut entries = Vec::with_capacity(dims.horizon * dims.num_states);
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            let (pi, mu, q) = (target.row(t, s), fam.mu_pdis.row(t, s), fam.q.row(t, s));
            let (mut second, mut mean, mut delta) = (0.0, 0.0, 0.0);
            for a in (0..dims.num_actions).filter(|&a| mu[a] > 0.0) {
                let w = pi[a] * pi[a] / mu[a];
                second += w * q[a] * q[a];
                mean += pi[a] * q[a];
                delta += w * future_gap(mdp, t, s, a, &fam.odi, &fam.dopt);
            }
            entries.push(entry(
                t,
                s,
                fam.odi.get(t, s) - fam.dopt.get(t, s),
                vec![("var_rho_q", second - mean * mean), ("delta", sign(mutation) * delta)],
            ));
        }
    }
    Ok(GapReport {
        comparison: Comparison::Odi,
        entries,
    })
}

/// Baseline `q` under the target policy minus the doubly optimal estimator:
/// `Var_pi(sqrt u) + delta`, `delta = E_{a~pi, s'}[Var^dr_{t+1} - Var^opt_{t+1}]`.
pub fn gap_vs_dr(mdp: &FiniteMdp, target: &TimedPolicy) -> Result<GapReport> {
    gap_vs_dr_from(mdp, target, &VarianceFamily::compute(mdp, target)?, Mutation::None)
}

pub fn gap_vs_dr_from(
    mdp: &FiniteMdp,
    target: &TimedPolicy,
    fam: &VarianceFamily,
    mutation: Mutation,
) -> Result<GapReport> {
    let dims = mdp.dims();
    let mut entries = Vec::with_capacity(dims.horizon * dims.num_states);
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            let pi = target.row(t, s);
            let delta: f64 = (0..dims.num_actions)
                .map(|a| pi[a] * future_gap(mdp, t, s, a, &fam.dr, &fam.dopt))
                .sum();
            entries.push(entry(
                t,
                s,
                fam.dr.get(t, s) - fam.dopt.get(t, s),
                vec![
                    ("var_sqrt_u", var_sqrt_u(pi, fam.u_star.row(t, s))),
                    ("delta", sign(mutation) * delta),
                ],
            ));
        }
    }
    Ok(GapReport {
        comparison: Comparison::Dr,
        entries,
    })
}

/// All three reports sharing one set of variance tables.
pub fn all_gaps(mdp: &FiniteMdp, target: &TimedPolicy, mutation: Mutation) -> Result<(VarianceFamily, Vec<GapReport>)> {
    let fam = VarianceFamily::compute(mdp, target)?;
    let reports = vec![
        gap_vs_on_policy_from(mdp, target, &fam, mutation)?,
        gap_vs_odi_from(mdp, target, &fam, mutation)?,
        gap_vs_dr_from(mdp, target, &fam, mutation)?,
    ];
    Ok((fam, reports))
}

/// A random `(behavior, baseline)` pair whose behavior lies in the enlarged
/// coverage set for that baseline, sometimes strictly outside the classic one.
///
/// About a third of the baseline entries equal `q`; wherever that makes
/// `u = 0` the behavior may drop the action.
pub fn random_challenger(solver: &ExactSolver<'_, FiniteMdp>, spec: &RngSpec) -> Result<(TimedPolicy, Baseline)> {
    let dims = solver.dims();
    let mut rng = spec.rng();
    let mut b = solver.q.clone();
    for x in b.data.iter_mut() {
        if rng.random::<f64>() >= 1.0 / 3.0 {
            *x += rng.random_range(-1.0..1.0);
        }
    }
    let baseline = Baseline::new(b, solver.target)?;
    let u = solver.optimal_behavior(&baseline)?.u;
    let mut mu = ActionTable::zeros(dims);
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            let mut row = dirichlet_ones(&mut rng, dims.num_actions);
            let pi = solver.target.row(t, s);
            for a in 0..dims.num_actions {
                let droppable = pi[a] * u.get(t, s, a) == 0.0;
                if droppable && rng.random::<bool>() && row.iter().filter(|&&x| x > 0.0).count() > 1 {
                    row[a] = 0.0;
                }
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
            mu.row_mut(t, s).copy_from_slice(&row);
        }
    }
    Ok((TimedPolicy::new_unchecked(mu), baseline))
}
