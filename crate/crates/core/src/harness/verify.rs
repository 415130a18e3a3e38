//! The exact-identity suite over seeded random instances.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{
    compute_u, coverage_check, exact_estimator_variance, policy_performance, Baseline, ExactSolver, ValueTables,
};
use crate::enumerate::{enumerate_trajectories, exact_moments, DEFAULT_ENUMERATION_CAP};
use crate::envs::{random_behavior, InstanceShape};
use crate::error::Result;
use crate::estimators::{baseline_return, on_policy_return, pdis_return};
use crate::mdp::{FiniteMdp, TimedPolicy};
use crate::rng::RngSpec;
use crate::theorems::{all_gaps, random_challenger, Mutation, DELTA_TOL, RESIDUAL_TOL};

pub const TABLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    /// Random (behavior, baseline) challengers per instance for the optimality check.
    pub challengers: usize,
    pub shape: InstanceShape,
    pub enumeration_cap: usize,
    pub mutation: Mutation,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 1,
            challengers: 50,
            shape: InstanceShape::default(),
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            mutation: Mutation::None,
        }
    }
}

/// Aggregate outcome of one named check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    /// Largest violation measure seen (residual, or negative slack).
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance: usize,
    pub check: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub checks: BTreeMap<String, CheckSummary>,
    pub failures: Vec<InstanceFailure>,
    pub all_passed: bool,
}

/// One check outcome: `measure` is compared against `tol` (`measure <= tol` passes).
struct Outcome {
    check: &'static str,
    measure: Option<f64>,
    tol: f64,
}

fn outcome(check: &'static str, measure: f64, tol: f64) -> Outcome {
    Outcome {
        check,
        measure: Some(measure),
        tol,
    }
}

fn skipped(check: &'static str) -> Outcome {
    Outcome {
        check,
        measure: None,
        tol: 0.0,
    }
}

enum Case<'a> {
    OnPolicy,
    Pdis,
    Baseline(&'a Baseline),
}

fn check_instance(config: &SuiteConfig, index: usize, mdp: &FiniteMdp, pi: &TimedPolicy) -> Result<Vec<Outcome>> {
    let dims = mdp.dims();
    let last = dims.horizon - 1;
    let mut out = Vec::new();
    let stream = RngSpec::from_seed(config.seed).split(index as u64);

    // value-table invariants
    let tables = ValueTables::solve(mdp, pi)?;
    let mut v_err: f64 = 0.0;
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            let v: f64 = pi.row(t, s).iter().zip(tables.q.row(t, s)).map(|(p, q)| p * q).sum();
            v_err = v_err.max((v - tables.v.get(t, s)).abs());
        }
    }
    out.push(outcome("value_consistency", v_err, TABLE_TOL));
    let neg_nu = tables.nu.data.iter().fold(0.0f64, |m, &x| m.max(-x));
    let neg_u = tables.u.data.iter().fold(0.0f64, |m, &x| m.max(-x));
    out.push(outcome("nonnegative_nu_u", neg_nu.max(neg_u), 0.0));
    let terminal: f64 = (0..dims.num_states)
        .flat_map(|s| tables.nu.row(last, s).iter().chain(tables.u.row(last, s)).copied())
        .map(f64::abs)
        .fold(0.0, f64::max);
    out.push(outcome("terminal_nu_u_zero", terminal, 0.0));

    // short recursion for u against the full sweep
    let solver = ExactSolver::new(mdp, pi)?;
    let b_star = solver.b_star();
    let u_sweep = compute_u(mdp, pi, &b_star)?;
    out.push(outcome("u_recursion_agreement", u_sweep.max_abs_diff(&tables.u), RESIDUAL_TOL));

    // gap decompositions
    let (fam, reports) = all_gaps(mdp, pi, config.mutation)?;
    for report in &reports {
        let name = match report.comparison {
            crate::theorems::Comparison::OnPolicy => "gap_vs_on_policy",
            crate::theorems::Comparison::Odi => "gap_vs_odi",
            crate::theorems::Comparison::Dr => "gap_vs_dr",
        };
        let measure = if report.comparison.is_equality() {
            report.max_abs_residual()
        } else {
            (-report.min_slack()).max(0.0)
        };
        out.push(outcome(name, measure, RESIDUAL_TOL));
        out.push(outcome(
            match name {
                "gap_vs_on_policy" => "delta_on_policy_nonnegative",
                "gap_vs_odi" => "delta_odi_nonnegative",
                _ => "delta_dr_nonnegative",
            },
            (-report.min_delta()).max(0.0),
            DELTA_TOL,
        ));
    }
    let dopt = fam.totals["dopt"];
    let worst = ["on_policy", "odi", "dr"]
        .iter()
        .map(|k| dopt - fam.totals[*k])
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(outcome("variance_ordering", worst.max(0.0), RESIDUAL_TOL));

    // optimality against random challengers and coverage nesting
    let opt_var = &fam.dopt;
    let mut worst_excess: f64 = 0.0;
    let mut nesting_violations = 0.0;
    let mut challengers = Vec::with_capacity(config.challengers);
    for k in 0..config.challengers {
        let (mu, b) = random_challenger(&solver, &stream.split(k as u64))?;
        let u_b = solver.optimal_behavior(&b)?.u;
        let report = coverage_check(&mu, pi, &u_b);
        if report.in_lambda_minus && !report.in_lambda {
            nesting_violations += 1.0;
        }
        let var = solver.estimator_variance(&mu, &b)?;
        for (x, y) in opt_var.data.iter().zip(&var.data) {
            worst_excess = worst_excess.max(x - y);
        }
        challengers.push((mu, b));
    }
    out.push(outcome("optimality_vs_challengers", worst_excess, RESIDUAL_TOL));
    out.push(outcome("coverage_nesting", nesting_violations, 0.0));

    // enumeration oracles
    let truth = policy_performance(mdp, pi)?;
    let classic = random_behavior(dims, &stream.split(u64::MAX));
    let zero = Baseline::zero(dims);
    let mut cases = vec![(pi, Case::OnPolicy), (&classic, Case::Pdis)];
    if let Some((mu, b)) = challengers.first() {
        cases.push((mu, Case::Baseline(b)));
    }
    cases.push((&fam.mu_star, Case::Baseline(&b_star)));
    let mut bias: f64 = 0.0;
    let mut var_gap: f64 = 0.0;
    let mut feasible = true;
    for (behavior, case) in cases {
        let paths = match enumerate_trajectories(mdp, behavior, config.enumeration_cap) {
            Ok(p) => p,
            Err(e) if e.is_infeasible() => {
                feasible = false;
                break;
            }
            Err(e) => return Err(e),
        };
        let (m, var) = match case {
            Case::OnPolicy => exact_moments(&paths, |tr| Ok(on_policy_return(tr)))?,
            Case::Pdis => exact_moments(&paths, |tr| pdis_return(tr, pi, behavior))?,
            Case::Baseline(b) => exact_moments(&paths, |tr| baseline_return(tr, pi, behavior, b))?,
        };
        bias = bias.max((m - truth).abs());
        let baseline = match case {
            Case::Baseline(b) => b,
            _ => &zero,
        };
        let exact = exact_estimator_variance(mdp, pi, behavior, baseline)?;
        var_gap = var_gap.max((exact.total - var).abs());
    }
    if feasible {
        out.push(outcome("unbiased_by_enumeration", bias, RESIDUAL_TOL));
        out.push(outcome("variance_by_enumeration", var_gap, RESIDUAL_TOL));
    } else {
        out.push(skipped("unbiased_by_enumeration"));
        out.push(skipped("variance_by_enumeration"));
    }
    Ok(out)
}

/// Runs every check over `config.instances` random instances.
pub fn run_theorem_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let per_instance: Vec<Vec<Outcome>> = (0..config.instances)
        .into_par_iter()
        .map(|i| {
            let (mdp, pi) = config.shape.instance(config.seed, i as u64)?;
            check_instance(config, i, &mdp, &pi)
        })
        .collect::<Result<_>>()?;
    let mut checks: BTreeMap<String, CheckSummary> = BTreeMap::new();
    let mut failures = Vec::new();
    for (i, outcomes) in per_instance.into_iter().enumerate() {
        for o in outcomes {
            let entry = checks.entry(o.check.to_string()).or_default();
            match o.measure {
                None => entry.skipped += 1,
                Some(m) => {
                    entry.max_residual = entry.max_residual.max(m);
                    if m <= o.tol {
                        entry.passed += 1;
                    } else {
                        entry.failed += 1;
                        failures.push(InstanceFailure {
                            instance: i,
                            check: o.check.to_string(),
                            value: m,
                        });
                    }
                }
            }
        }
    }
    let all_passed = failures.is_empty();
    Ok(SuiteReport {
        config: config.clone(),
        checks,
        failures,
        all_passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_mutation_fails() {
        let config = SuiteConfig {
            instances: 6,
            challengers: 5,
            ..SuiteConfig::default()
        };
        let report = run_theorem_suite(&config).unwrap();
        assert!(report.all_passed, "{:?}", report.failures);
        assert!(report.checks.values().all(|c| c.passed + c.skipped == 6));

        let mutated = run_theorem_suite(&SuiteConfig {
            mutation: Mutation::FlipDeltaSign,
            ..config
        })
        .unwrap();
        assert!(!mutated.all_passed);
        assert!(mutated.checks["gap_vs_on_policy"].failed > 0);
    }
}
