//! Learning the behavior policy and baseline from logged tuples.
//!
//! The tuples are reduced to an empirical model (counts, normalized
//! transitions, mean rewards). Tabular fitted Q-evaluation is then backward
//! DP on that model, `nu` is fitted from squared successor values, and `u`
//! follows the short recursion for the optimal baseline.

use serde::{Deserialize, Serialize};

use crate::dataset::TupleDataset;
use crate::dp::{compute_q_v, mu_star_row, Baseline, ExactSolver};
use crate::error::Result;
use crate::mdp::{ratio, Dynamics, TimedPolicy};
use crate::tables::{ActionTable, Dims, StateTable};

/// How logged tuples are grouped into model cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One cell per `(t, s, a)`.
    #[default]
    PerStep,
    /// One cell per `(s, a)`, shared by every step. Only sound when the
    /// dynamics and rewards do not depend on `t`.
    TimeHomogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub pooling: Pooling,
    /// Visits every target action of a row needs before the row's learned
    /// weights are used; thinner rows fall back to the target policy.
    pub min_row_visits: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            pooling: Pooling::PerStep,
            min_row_visits: 1,
        }
    }
}

/// Count-based model of the logged dynamics. Unvisited cells have zero
/// reward and no successors, and are reported by [`Self::visited`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalModel {
    dims: Dims,
    pooling: Pooling,
    visit_counts: Vec<u64>,
    /// Sparse successor counts per cell, sorted by successor state.
    transition_counts: Vec<Vec<(usize, u64)>>,
    reward_sums: Vec<f64>,
    r_hat: Vec<f64>,
}

impl EmpiricalModel {
    #[inline]
    fn cell(&self, t: usize, s: usize, a: usize) -> usize {
        let t = match self.pooling {
            Pooling::PerStep => t,
            Pooling::TimeHomogeneous => 0,
        };
        (t * self.dims.num_states + s) * self.dims.num_actions + a
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn visits(&self, t: usize, s: usize, a: usize) -> u64 {
        self.visit_counts[self.cell(t, s, a)]
    }

    pub fn visited(&self, t: usize, s: usize, a: usize) -> bool {
        self.visits(t, s, a) > 0
    }

    pub fn visit_counts(&self) -> &[u64] {
        &self.visit_counts
    }

    pub fn transition_counts(&self, t: usize, s: usize, a: usize) -> &[(usize, u64)] {
        &self.transition_counts[self.cell(t, s, a)]
    }

    pub fn reward_sum(&self, t: usize, s: usize, a: usize) -> f64 {
        self.reward_sums[self.cell(t, s, a)]
    }

    /// Estimated `p(s'|s, a)` at step `t`; `None` for an unvisited cell.
    pub fn p_hat(&self, t: usize, s: usize, a: usize, s_next: usize) -> Option<f64> {
        let n = self.visits(t, s, a);
        (n > 0).then(|| {
            self.transition_counts(t, s, a)
                .iter()
                .find(|(s2, _)| *s2 == s_next)
                .map_or(0.0, |&(_, c)| c as f64 / n as f64)
        })
    }

    pub fn r_hat(&self, t: usize, s: usize, a: usize) -> Option<f64> {
        self.visited(t, s, a).then(|| self.r_hat[self.cell(t, s, a)])
    }

    pub fn unvisited_cells(&self) -> usize {
        self.visit_counts.iter().filter(|&&n| n == 0).count()
    }

    /// Whether every action the target may take in row `(t, s)` was logged
    /// at least `min_visits` times (and at least once).
    pub fn row_covers(&self, target: &TimedPolicy, t: usize, s: usize, min_visits: u64) -> bool {
        let need = min_visits.max(1);
        target
            .row(t, s)
            .iter()
            .enumerate()
            .all(|(a, &p)| p == 0.0 || self.visits(t, s, a) >= need)
    }
}

impl Dynamics for EmpiricalModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn reward(&self, t: usize, s: usize, a: usize) -> f64 {
        self.r_hat[self.cell(t, s, a)]
    }

    fn expect_next<F: Fn(usize) -> f64>(&self, t: usize, s: usize, a: usize, f: F) -> f64 {
        let i = self.cell(t, s, a);
        let n = self.visit_counts[i];
        if n == 0 {
            return 0.0;
        }
        let n = n as f64;
        self.transition_counts[i]
            .iter()
            .map(|&(s2, c)| c as f64 / n * f(s2))
            .sum()
    }
}

/// Aggregates the tuples; a record outside `dims` is rejected with its
/// 1-based position.
pub fn build_empirical_model(dataset: &TupleDataset, dims: Dims) -> Result<EmpiricalModel> {
    build_pooled_model(dataset, dims, Pooling::PerStep)
}

pub fn build_pooled_model(dataset: &TupleDataset, dims: Dims, pooling: Pooling) -> Result<EmpiricalModel> {
    dims.check_positive()?;
    dataset.validate(dims)?;
    let steps = match pooling {
        Pooling::PerStep => dims.horizon,
        Pooling::TimeHomogeneous => 1,
    };
    let cells = steps * dims.num_states * dims.num_actions;
    let mut visit_counts = vec![0u64; cells];
    let mut reward_sums = vec![0.0; cells];
    // incremental mean: a constant reward is reproduced exactly
    let mut r_hat = vec![0.0; cells];
    let mut successor_counts: Vec<Vec<(usize, u64)>> = vec![Vec::new(); cells];
    for rec in &dataset.records {
        let t = if steps == 1 { 0 } else { rec.t };
        let i = (t * dims.num_states + rec.s) * dims.num_actions + rec.a;
        visit_counts[i] += 1;
        reward_sums[i] += rec.r;
        r_hat[i] += (rec.r - r_hat[i]) / visit_counts[i] as f64;
        let list = &mut successor_counts[i];
        match list.binary_search_by_key(&rec.s_next, |&(s2, _)| s2) {
            Ok(k) => list[k].1 += 1,
            Err(k) => list.insert(k, (rec.s_next, 1)),
        }
    }
    Ok(EmpiricalModel {
        dims,
        pooling,
        visit_counts,
        transition_counts: successor_counts,
        reward_sums,
        r_hat,
    })
}

/// Tabular FQE: backward evaluation on the empirical model. Unvisited cells
/// get `q_hat = 0`.
pub fn fitted_q_evaluation(model: &EmpiricalModel, target: &TimedPolicy) -> Result<(ActionTable, StateTable)> {
    compute_q_v(model, target)
}

/// `nu_hat = mean over logged successors of v_hat_{t+1}(s')^2, minus (q_hat - r_hat)^2`.
///
/// Tabular FQE makes `q_hat - r_hat` exactly the logged mean `m` of
/// `v_hat_{t+1}(s')`, so this is evaluated in the centred form
/// `mean of (v_hat(s') - m)^2`: the same quantity, free of the cancellation
/// in the raw form and never negative.
pub fn construct_nu_targets(model: &EmpiricalModel, v_hat: &StateTable) -> ActionTable {
    let dims = model.dims;
    let mut nu = ActionTable::zeros(dims);
    for t in 0..dims.horizon.saturating_sub(1) {
        for s in 0..dims.num_states {
            for a in (0..dims.num_actions).filter(|&a| model.visited(t, s, a)) {
                let mean = model.expect_next(t, s, a, |s2| v_hat.get(t + 1, s2));
                let centred = model.expect_next(t, s, a, |s2| {
                    let d = v_hat.get(t + 1, s2) - mean;
                    d * d
                });
                nu.set(t, s, a, centred.max(0.0));
            }
        }
    }
    nu
}

/// Whether row `(t, s)` keeps its learned weights: every target action is
/// logged often enough, and `u_hat` is either zero across the target's
/// support or positive on all of it. A learned zero next to positive
/// weights would drop an action the target takes on evidence that cannot
/// rule out its contribution, so such rows are not trusted.
pub fn row_trusted(model: &EmpiricalModel, target: &TimedPolicy, t: usize, s: usize, u: &[f64], min_visits: u64) -> bool {
    if !model.row_covers(target, t, s, min_visits) {
        return false;
    }
    let pi = target.row(t, s);
    let zeros = pi.iter().zip(u).filter(|&(&p, &x)| p > 0.0 && x <= 0.0).count();
    let support = pi.iter().filter(|&&p| p > 0.0).count();
    zeros == 0 || zeros == support
}

/// Behavior row used with learned tables: proportional to `pi sqrt(u_hat)`
/// (uniform if all weights vanish) on trusted rows, the target row
/// otherwise.
pub fn learned_row(
    model: &EmpiricalModel,
    target: &TimedPolicy,
    t: usize,
    s: usize,
    u: &[f64],
    min_visits: u64,
    out: &mut [f64],
) {
    let pi = target.row(t, s);
    if row_trusted(model, target, t, s, u, min_visits) {
        mu_star_row(pi, u, out);
    } else {
        out.copy_from_slice(pi);
    }
}

/// `u_hat_t = nu_hat_t + sum_{s'} p_hat(s'|s,a) sum_{a'} rho_{t+1} pi_{t+1} u_hat_{t+1}`,
/// where `rho_{t+1}` is taken against the learned behavior row at `s'`.
/// The last step and unvisited cells are zero.
pub fn fit_u(model: &EmpiricalModel, target: &TimedPolicy, nu_hat: &ActionTable, min_visits: u64) -> Result<ActionTable> {
    let dims = model.dims;
    target.check_dims(dims, "target")?;
    let mut u = ActionTable::zeros(dims);
    let mut mu_row = vec![0.0; dims.num_actions];
    let mut carried = vec![0.0; dims.num_states];
    for t in (0..dims.horizon.saturating_sub(1)).rev() {
        for (s2, slot) in carried.iter_mut().enumerate() {
            let pi = target.row(t + 1, s2);
            let next = u.row(t + 1, s2);
            learned_row(model, target, t + 1, s2, next, min_visits, &mut mu_row);
            *slot = (0..dims.num_actions)
                .map(|a| ratio(pi[a], mu_row[a]).unwrap_or(0.0) * pi[a] * next[a])
                .sum();
        }
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                if model.visited(t, s, a) {
                    let future = model.expect_next(t, s, a, |s2| carried[s2]);
                    u.set(t, s, a, nu_hat.get(t, s, a) + future);
                }
            }
        }
    }
    Ok(u)
}

fn learned_policy(model: &EmpiricalModel, target: &TimedPolicy, u: &ActionTable, min_visits: u64) -> (TimedPolicy, usize) {
    let dims = model.dims;
    let mut probs = ActionTable::zeros(dims);
    let mut fallback = 0;
    for t in 0..dims.horizon {
        for s in 0..dims.num_states {
            fallback += usize::from(!row_trusted(model, target, t, s, u.row(t, s), min_visits));
            learned_row(model, target, t, s, u.row(t, s), min_visits, probs.row_mut(t, s));
        }
    }
    (TimedPolicy::new_unchecked(probs), fallback)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub tuples: usize,
    pub unvisited_cells: usize,
    pub total_cells: usize,
    pub unvisited_fraction: f64,
    /// Rows where the behavior fell back to the target policy.
    pub fallback_rows: usize,
    /// Largest Bellman residual of `q_hat` on the empirical model.
    pub q_bellman_residual: f64,
    /// Largest gap between the short recursion for `u_hat` and the full
    /// variance sweep on the empirical model.
    pub u_recursion_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedArtifacts {
    pub q_hat: ActionTable,
    pub v_hat: StateTable,
    pub nu_hat: ActionTable,
    pub u_hat: ActionTable,
    pub mu_hat_star: TimedPolicy,
    pub b_hat_star: Baseline,
    pub diagnostics: Diagnostics,
}

/// Behavior learned for the plain estimator (no baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedOdi {
    pub u_hat: ActionTable,
    pub mu_hat: TimedPolicy,
}

/// Shared first stage: empirical model, `q_hat`, `v_hat` and `nu_hat`.
pub struct OfflineFit<'a> {
    pub model: EmpiricalModel,
    pub target: &'a TimedPolicy,
    pub q_hat: ActionTable,
    pub v_hat: StateTable,
    pub nu_hat: ActionTable,
    pub options: FitOptions,
    tuples: usize,
}

impl<'a> OfflineFit<'a> {
    pub fn new(dataset: &TupleDataset, target: &'a TimedPolicy, dims: Dims) -> Result<Self> {
        Self::with_options(dataset, target, dims, FitOptions::default())
    }

    pub fn with_options(dataset: &TupleDataset, target: &'a TimedPolicy, dims: Dims, options: FitOptions) -> Result<Self> {
        target.check_dims(dims, "target")?;
        let model = build_pooled_model(dataset, dims, options.pooling)?;
        let mut fit = Self::from_model(model, target, dataset.len())?;
        fit.options = options;
        Ok(fit)
    }

    /// Fits with default options on a prebuilt model; its pooling is kept.
    pub fn from_model(model: EmpiricalModel, target: &'a TimedPolicy, tuples: usize) -> Result<Self> {
        target.check_dims(model.dims, "target")?;
        let (q_hat, v_hat) = fitted_q_evaluation(&model, target)?;
        let nu_hat = construct_nu_targets(&model, &v_hat);
        let model_pooling = model.pooling;
        Ok(Self {
            model,
            target,
            q_hat,
            v_hat,
            nu_hat,
            options: FitOptions {
                pooling: model_pooling,
                ..FitOptions::default()
            },
            tuples,
        })
    }

    fn solver(&self) -> ExactSolver<'_, EmpiricalModel> {
        ExactSolver {
            model: &self.model,
            target: self.target,
            q: self.q_hat.clone(),
            v: self.v_hat.clone(),
            nu: self.nu_hat.clone(),
        }
    }

    fn bellman_residual(&self) -> f64 {
        let dims = self.model.dims;
        let mut worst: f64 = 0.0;
        for t in 0..dims.horizon {
            for s in 0..dims.num_states {
                for a in (0..dims.num_actions).filter(|&a| self.model.visited(t, s, a)) {
                    let future = if t + 1 < dims.horizon {
                        self.model.expect_next(t, s, a, |s2| self.v_hat.get(t + 1, s2))
                    } else {
                        0.0
                    };
                    let r = self.model.reward(t, s, a) + future - self.q_hat.get(t, s, a);
                    worst = worst.max(r.abs());
                }
            }
        }
        worst
    }

    /// Behavior and baseline for the doubly optimal estimator.
    pub fn dopt(&self) -> Result<LearnedArtifacts> {
        let k = self.options.min_row_visits;
        let u_hat = fit_u(&self.model, self.target, &self.nu_hat, k)?;
        let (mu_hat_star, fallback_rows) = learned_policy(&self.model, self.target, &u_hat, k);
        let b_hat_star = Baseline::new(self.q_hat.clone(), self.target)?;
        let sweep = self
            .solver()
            .optimal_behavior_with(&b_hat_star, |t, s, _, u, out| {
                learned_row(&self.model, self.target, t, s, u, k, out)
            })?;
        let total_cells = self.model.visit_counts.len();
        let unvisited_cells = self.model.unvisited_cells();
        let diagnostics = Diagnostics {
            tuples: self.tuples,
            unvisited_cells,
            total_cells,
            unvisited_fraction: unvisited_cells as f64 / total_cells as f64,
            fallback_rows,
            q_bellman_residual: self.bellman_residual(),
            u_recursion_residual: u_hat.max_abs_diff(&sweep.u),
        };
        Ok(LearnedArtifacts {
            q_hat: self.q_hat.clone(),
            v_hat: self.v_hat.clone(),
            nu_hat: self.nu_hat.clone(),
            u_hat,
            mu_hat_star,
            b_hat_star,
            diagnostics,
        })
    }

    /// Behavior for the plain estimator, from `u` with a zero baseline.
    pub fn odi(&self) -> Result<LearnedOdi> {
        let zero = Baseline::zero(self.model.dims);
        let k = self.options.min_row_visits;
        let sweep = self
            .solver()
            .optimal_behavior_with(&zero, |t, s, _, u, out| learned_row(&self.model, self.target, t, s, u, k, out))?;
        Ok(LearnedOdi {
            u_hat: sweep.u,
            mu_hat: sweep.mu_star,
        })
    }
}

pub fn learn_dopt(dataset: &TupleDataset, target: &TimedPolicy, dims: Dims) -> Result<LearnedArtifacts> {
    OfflineFit::new(dataset, target, dims)?.dopt()
}

pub fn learn_odi(dataset: &TupleDataset, target: &TimedPolicy, dims: Dims) -> Result<LearnedOdi> {
    OfflineFit::new(dataset, target, dims)?.odi()
}

impl LearnedArtifacts {
    /// Diagnostics as pretty JSON.
    pub fn diagnostics_json(&self) -> String {
        serde_json::to_string_pretty(&self.diagnostics).expect("diagnostics serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Transition;
    use crate::dp::{compute_nu, ValueTables};
    use crate::error::Error;
    use crate::mdp::FiniteMdp;

    /// Every (t, s, a, s') of a deterministic model logged once.
    fn exhaustive(mdp: &FiniteMdp) -> TupleDataset {
        let d = mdp.dims();
        let mut records = Vec::new();
        for t in 0..d.horizon {
            for s in 0..d.num_states {
                for a in 0..d.num_actions {
                    for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            records.push(Transition { t, s, a, r: mdp.reward_sa(s, a), s_next: s2 });
                        }
                    }
                }
            }
        }
        TupleDataset::new(records)
    }

    fn det() -> FiniteMdp {
        FiniteMdp::new(
            Dims::new(2, 2, 3),
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.3, 0.2, 0.9],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_log_recovers_deterministic_model() {
        let mdp = det();
        let model = build_empirical_model(&exhaustive(&mdp), mdp.dims()).unwrap();
        for t in 0..3 {
            for s in 0..2 {
                for a in 0..2 {
                    assert_eq!(model.r_hat(t, s, a), Some(mdp.reward_sa(s, a)));
                    for s2 in 0..2 {
                        assert_eq!(model.p_hat(t, s, a, s2), Some(mdp.transition_row(s, a)[s2]));
                    }
                }
            }
        }
        let pi = TimedPolicy::uniform(mdp.dims());
        let fit = OfflineFit::from_model(model, &pi, 12).unwrap();
        let exact = ValueTables::solve(&mdp, &pi).unwrap();
        assert!(fit.q_hat.max_abs_diff(&exact.q) < 1e-12);
        assert!(fit.nu_hat.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_log_falls_back_to_target() {
        let dims = Dims::new(2, 2, 3);
        let pi = TimedPolicy::new(
            ActionTable::from_vec(dims, vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5, 0.9, 0.1, 0.2, 0.8, 0.4, 0.6]).unwrap(),
        )
        .unwrap();
        let art = learn_dopt(&TupleDataset::default(), &pi, dims).unwrap();
        assert_eq!(art.mu_hat_star, pi);
        assert!(art.b_hat_star.b.data.iter().all(|&x| x == 0.0));
        assert_eq!(art.diagnostics.unvisited_fraction, 1.0);
        assert_eq!(art.diagnostics.fallback_rows, 6);
        assert!(art.u_hat.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_tuple_nu_formula() {
        // one tuple at (0, 0, 0) landing in state 1; values at t = 1 from the log
        let dims = Dims::new(2, 1, 2);
        let data = TupleDataset::new(vec![
            Transition { t: 0, s: 0, a: 0, r: 0.5, s_next: 1 },
            Transition { t: 1, s: 1, a: 0, r: 2.0, s_next: 0 },
        ]);
        let model = build_empirical_model(&data, dims).unwrap();
        let pi = TimedPolicy::uniform(dims);
        let (q, v) = fitted_q_evaluation(&model, &pi).unwrap();
        let nu = construct_nu_targets(&model, &v);
        let expected = (v.get(1, 1).powi(2) - (q.get(0, 0, 0) - 0.5).powi(2)).max(0.0);
        assert!((nu.get(0, 0, 0) - expected).abs() < 1e-12);
        assert_eq!(q.get(1, 0, 0), 0.0);
    }

    #[test]
    fn zero_reward_log_gives_zero_q() {
        let mdp = det().with_rewards(vec![0.0; 4]).unwrap();
        let pi = TimedPolicy::uniform(mdp.dims());
        let model = build_empirical_model(&exhaustive(&mdp), mdp.dims()).unwrap();
        let (q, _) = fitted_q_evaluation(&model, &pi).unwrap();
        assert!(q.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_range_record_is_rejected_with_position() {
        let dims = Dims::new(2, 2, 2);
        let data = TupleDataset::new(vec![
            Transition { t: 0, s: 0, a: 0, r: 0.0, s_next: 1 },
            Transition { t: 2, s: 0, a: 0, r: 0.0, s_next: 1 },
        ]);
        assert!(matches!(build_empirical_model(&data, dims), Err(Error::Dataset { line: 2, .. })));
    }

    #[test]
    fn single_step_u_is_zero() {
        let dims = Dims::new(2, 2, 1);
        let data = TupleDataset::new(vec![Transition { t: 0, s: 0, a: 1, r: 1.0, s_next: 1 }]);
        let pi = TimedPolicy::uniform(dims);
        let model = build_empirical_model(&data, dims).unwrap();
        let u = fit_u(&model, &pi, &ActionTable::zeros(dims), 1).unwrap();
        assert!(u.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn nu_targets_match_two_pass_variance_on_exact_counts() {
        let mdp = det();
        let pi = TimedPolicy::uniform(mdp.dims());
        let model = build_empirical_model(&exhaustive(&mdp), mdp.dims()).unwrap();
        let (_, v) = fitted_q_evaluation(&model, &pi).unwrap();
        let nu = construct_nu_targets(&model, &v);
        let reference = compute_nu(&model, &pi, &v).unwrap();
        assert!(nu.max_abs_diff(&reference) < 1e-12);
    }
}
