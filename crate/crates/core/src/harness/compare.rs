//! Estimator comparison: relative-error curves, variance ratios and
//! episodes-to-accuracy over many target policies and independent runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{save_json, ArtifactSource, ExperimentConfig, GroundTruth, Method, EXACT_TRUTH_LIMIT};
use crate::dp::{policy_performance, ExactSolver};
use crate::envs::{generate_offline_log, random_target_policies};
use crate::error::{Error, Result};
use crate::estimators::{run_evaluation, EstimatorSpec, EvalRun};
use crate::mdp::{FiniteMdp, TimedPolicy};
use crate::offline::OfflineFit;
use crate::rng::RngSpec;
use crate::tables::Dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_rel_error: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub method: Method,
    pub curve: Vec<CurvePoint>,
    /// Policy-averaged ratio of mean sample variances against on-policy MC.
    pub variance_ratio: f64,
    /// Standard error of `variance_ratio` across policies.
    pub variance_ratio_stderr: f64,
    pub episodes_to_accuracy: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub truths: Vec<f64>,
    /// Per-policy mean first-episode error of on-policy MC.
    pub normalizers: Vec<f64>,
    pub reference_budget: usize,
    pub estimators: Vec<EstimatorSummary>,
}

impl ComparisonResult {
    pub fn get(&self, method: Method) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.method == method)
    }
}

/// Error trajectory of one (policy, run, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// `|running mean after k episodes - truth|`, for k = 1..=episodes.
    pub abs_errors: Vec<f64>,
    pub sample_variance: f64,
}

impl RunTrace {
    pub fn from_run(run: &EvalRun, truth: f64) -> Self {
        Self {
            abs_errors: run.cumulative_means().iter().map(|m| (m - truth).abs()).collect(),
            sample_variance: run.running_variance,
        }
    }
}

/// `traces[policy][run][method]`, methods in `methods` order.
pub type TraceGrid = Vec<Vec<Vec<RunTrace>>>;

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let run = EvalRun::from_samples(xs);
    run.running_mean
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let run = EvalRun::from_samples(xs.iter().copied());
    (run.running_mean, (run.running_variance / xs.len() as f64).sqrt())
}

/// Aggregates traces into curves and ratios. `methods` must contain
/// on-policy MC, which supplies both normalizers.
///
/// Per policy the curve is the run-mean error divided by that policy's
/// run-mean first-episode MC error, then averaged over policies; the MC curve
/// therefore starts at exactly 1. A zero normalizer (MC is exact from the
/// first episode) leaves errors unnormalized.
pub fn aggregate(truths: Vec<f64>, methods: &[Method], traces: &TraceGrid, reference_budget: usize) -> Result<ComparisonResult> {
    let mc = methods
        .iter()
        .position(|&m| m == Method::OnPolicyMc)
        .ok_or_else(|| Error::Config("on_policy_mc is required".into()))?;
    let policies = traces.len();
    let episodes = traces
        .first()
        .and_then(|p| p.first())
        .map_or(0, |r| r[mc].abs_errors.len());
    if policies == 0 || episodes == 0 {
        return Err(Error::invalid("comparison", "no runs to aggregate"));
    }
    let normalizers: Vec<f64> = traces
        .iter()
        .map(|runs| mean(runs.iter().map(|r| r[mc].abs_errors[0])))
        .collect();
    let scale = |i: usize| if normalizers[i] > 0.0 { normalizers[i] } else { 1.0 };

    let mut estimators = Vec::with_capacity(methods.len());
    for (e, &method) in methods.iter().enumerate() {
        let mut curve = Vec::with_capacity(episodes);
        let mut cell = Vec::new();
        for k in 0..episodes {
            cell.clear();
            let mut per_policy = Vec::with_capacity(policies);
            for (i, runs) in traces.iter().enumerate() {
                let m = mean(runs.iter().map(|r| r[e].abs_errors[k]));
                per_policy.push(m / scale(i));
                cell.extend(runs.iter().map(|r| r[e].abs_errors[k] / scale(i)));
            }
            let stderr = mean_and_stderr(&cell).1;
            curve.push(CurvePoint {
                episode: k + 1,
                mean_rel_error: per_policy.iter().sum::<f64>() / policies as f64,
                stderr,
            });
        }
        let ratios: Vec<f64> = traces
            .iter()
            .map(|runs| {
                let num = mean(runs.iter().map(|r| r[e].sample_variance));
                let den = mean(runs.iter().map(|r| r[mc].sample_variance));
                ratio_or_zero(num, den)
            })
            .collect();
        let (variance_ratio, variance_ratio_stderr) = mean_and_stderr(&ratios);
        estimators.push(EstimatorSummary {
            method,
            curve,
            variance_ratio,
            variance_ratio_stderr,
            episodes_to_accuracy: None,
        });
    }
    let mut result = ComparisonResult {
        truths,
        normalizers,
        reference_budget,
        estimators,
    };
    let reached = episodes_to_accuracy(&result, Method::OnPolicyMc, reference_budget)?;
    for est in result.estimators.iter_mut() {
        est.episodes_to_accuracy = reached[&est.method];
    }
    Ok(result)
}

/// Smallest episode count at which each curve is at or below the reference
/// curve's value at `reference_budget`; `None` when never reached.
pub fn episodes_to_accuracy(
    result: &ComparisonResult,
    reference: Method,
    reference_budget: usize,
) -> Result<BTreeMap<Method, Option<usize>>> {
    let curve = &result
        .get(reference)
        .ok_or_else(|| Error::invalid("reference", format!("{} is not in the result", reference.name())))?
        .curve;
    if reference_budget == 0 || reference_budget > curve.len() {
        return Err(Error::invalid(
            "reference budget",
            format!("{reference_budget} outside 1..={}", curve.len()),
        ));
    }
    let level = curve[reference_budget - 1].mean_rel_error;
    Ok(result
        .estimators
        .iter()
        .map(|e| {
            let k = e.curve.iter().find(|p| p.mean_rel_error <= level).map(|p| p.episode);
            (e.method, k)
        })
        .collect())
}

/// Behavior/baseline pairs for every method, for one (policy, run) cell.
fn specs_for(
    config: &ExperimentConfig,
    mdp: &FiniteMdp,
    target: &TimedPolicy,
    exact: Option<&BTreeMap<Method, EstimatorSpec>>,
    log_seed: u64,
) -> Result<BTreeMap<Method, EstimatorSpec>> {
    if let Some(specs) = exact {
        return Ok(specs.clone());
    }
    let p = &config.protocol;
    let logging = random_target_policies(mdp, p.logging_policies, log_seed)?;
    let log = generate_offline_log(mdp, &logging, p.offline_episodes, log_seed.wrapping_add(1))?;
    let fit = OfflineFit::with_options(&log, target, mdp.dims(), p.fit)?;
    let dopt = fit.dopt()?;
    let odi = fit.odi()?;
    Ok(methods_map(target, dopt.mu_hat_star, odi.mu_hat, dopt.b_hat_star))
}

fn methods_map(
    target: &TimedPolicy,
    mu_star: TimedPolicy,
    mu_pdis: TimedPolicy,
    b_star: crate::dp::Baseline,
) -> BTreeMap<Method, EstimatorSpec> {
    BTreeMap::from([
        (Method::OnPolicyMc, EstimatorSpec::on_policy(target)),
        (Method::Odi, EstimatorSpec::pdis(mu_pdis)),
        (Method::Dr, EstimatorSpec::baseline_corrected(target.clone(), b_star.clone())),
        (Method::Dopt, EstimatorSpec::baseline_corrected(mu_star, b_star)),
    ])
}

fn exact_specs(mdp: &FiniteMdp, target: &TimedPolicy) -> Result<BTreeMap<Method, EstimatorSpec>> {
    let solver = ExactSolver::new(mdp, target)?;
    let b_star = solver.b_star();
    let opt = solver.optimal_behavior(&b_star)?;
    let pdis = solver.optimal_behavior(&crate::dp::Baseline::zero(mdp.dims()))?;
    Ok(methods_map(target, opt.mu_star, pdis.mu_star, b_star))
}

/// Refuses exact ground truth on models too large for backward DP.
pub fn check_exact_truth(dims: Dims) -> Result<()> {
    let size = dims.horizon as f64 * (dims.num_states as f64).powi(2) * dims.num_actions as f64;
    if size > EXACT_TRUTH_LIMIT {
        return Err(Error::Infeasible(format!(
            "exact ground truth needs {size:e} transition evaluations (limit {EXACT_TRUTH_LIMIT:e}); \
             use ground_truth kind = \"monte_carlo\" with an episode count, or a smaller model"
        )));
    }
    Ok(())
}

pub fn ground_truth(config: &ExperimentConfig, mdp: &FiniteMdp, target: &TimedPolicy, key: &RngSpec) -> Result<f64> {
    match config.ground_truth {
        GroundTruth::Exact => {
            check_exact_truth(mdp.dims())?;
            policy_performance(mdp, target)
        }
        GroundTruth::MonteCarlo { episodes } => {
            let run = run_evaluation(mdp, target, &EstimatorSpec::on_policy(target), episodes, key)?;
            Ok(run.running_mean)
        }
    }
}

/// Runs the full protocol. Work fans out over (policy, run) cells; every
/// random stream is keyed by its cell, so results do not depend on the
/// number of worker threads.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ComparisonResult> {
    config.validate()?;
    if let (GroundTruth::Exact, Some(dims)) = (config.ground_truth, config.declared_dims()) {
        check_exact_truth(dims)?;
    }
    let mdp = config.build_mdp()?;
    let targets = config.build_targets(&mdp)?;
    let root = RngSpec::from_seed(config.seed);
    let p = &config.protocol;

    let truths: Vec<f64> = targets
        .par_iter()
        .enumerate()
        .map(|(i, pi)| ground_truth(config, &mdp, pi, &root.split(0).split(i as u64)))
        .collect::<Result<_>>()?;
    let exact: Vec<Option<BTreeMap<Method, EstimatorSpec>>> = match p.artifacts {
        ArtifactSource::Exact => targets
            .par_iter()
            .map(|pi| exact_specs(&mdp, pi).map(Some))
            .collect::<Result<_>>()?,
        ArtifactSource::Learned => vec![None; targets.len()],
    };

    let cells: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|i| (0..p.runs).map(move |j| (i, j)))
        .collect();
    let flat: Vec<Vec<RunTrace>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cell = root.split(1 + i as u64).split(j as u64);
            let specs = specs_for(config, &mdp, &targets[i], exact[i].as_ref(), cell.split(0).seed)?;
            p.estimators
                .iter()
                .map(|m| {
                    let run = run_evaluation(&mdp, &targets[i], &specs[m], p.episodes, &cell.split(1 + *m as u64))?;
                    Ok(RunTrace::from_run(&run, truths[i]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut grid: TraceGrid = vec![Vec::with_capacity(p.runs); targets.len()];
    for ((i, _), traces) in cells.into_iter().zip(flat) {
        grid[i].push(traces);
    }
    aggregate(truths, &p.estimators, &grid, config.reference_budget())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub policies: usize,
    pub runs: usize,
    pub episodes: usize,
    pub normalizers: Vec<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    reference_budget: usize,
    truths: &'a [f64],
    estimators: Vec<SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    method: Method,
    variance_ratio: f64,
    variance_ratio_stderr: f64,
    episodes_to_accuracy: Option<usize>,
    final_mean_rel_error: f64,
}

/// Writes `<method>.csv`, `summary.json` and `manifest.json` under `out`.
pub fn write_outputs(result: &ComparisonResult, config: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for est in &result.estimators {
        let path = out.join(format!("{}.csv", est.method.name()));
        let mut text = String::from("episode,mean_rel_error,stderr\n");
        for p in &est.curve {
            text.push_str(&format!("{},{},{}\n", p.episode, p.mean_rel_error, p.stderr));
        }
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    let summary = Summary {
        reference_budget: result.reference_budget,
        truths: &result.truths,
        estimators: result
            .estimators
            .iter()
            .map(|e| SummaryRow {
                method: e.method,
                variance_ratio: e.variance_ratio,
                variance_ratio_stderr: e.variance_ratio_stderr,
                episodes_to_accuracy: e.episodes_to_accuracy,
                final_mean_rel_error: e.curve.last().map_or(0.0, |p| p.mean_rel_error),
            })
            .collect(),
    };
    save_json(&out.join("summary.json"), &summary)?;
    let manifest = Manifest {
        tool: "dopt-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config.sha256(),
        master_seed: config.seed,
        policies: result.truths.len(),
        runs: config.protocol.runs,
        episodes: config.protocol.episodes,
        normalizers: result.normalizers.clone(),
    };
    save_json(&out.join("manifest.json"), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(errors: Vec<f64>, var: f64) -> RunTrace {
        RunTrace {
            abs_errors: errors,
            sample_variance: var,
        }
    }

    #[test]
    fn mc_curve_starts_at_one() {
        let methods = [Method::OnPolicyMc, Method::Dopt];
        let grid = vec![
            vec![
                vec![trace(vec![0.3, 0.2], 1.0), trace(vec![0.1, 0.1], 0.2)],
                vec![trace(vec![0.7, 0.4], 3.0), trace(vec![0.2, 0.1], 0.4)],
            ],
            vec![
                vec![trace(vec![0.1, 0.05], 2.0), trace(vec![0.0, 0.01], 0.5)],
                vec![trace(vec![0.13, 0.1], 2.0), trace(vec![0.02, 0.02], 0.5)],
            ],
        ];
        let r = aggregate(vec![0.0, 0.0], &methods, &grid, 2).unwrap();
        assert_eq!(r.get(Method::OnPolicyMc).unwrap().curve[0].mean_rel_error, 1.0);
        let dopt = r.get(Method::Dopt).unwrap();
        assert!((dopt.variance_ratio - (0.15 + 0.25) / 2.0).abs() < 1e-12);
        assert_eq!(r.get(Method::OnPolicyMc).unwrap().variance_ratio, 1.0);
        assert_eq!(dopt.episodes_to_accuracy, Some(1));
    }

    #[test]
    fn identical_estimator_needs_the_reference_budget() {
        let errors: Vec<f64> = (1..=50).map(|k| 1.0 / (k as f64).sqrt()).collect();
        let grid = vec![vec![vec![trace(errors.clone(), 1.0), trace(errors, 1.0)]]];
        let r = aggregate(vec![0.0], &[Method::OnPolicyMc, Method::Dr], &grid, 30).unwrap();
        let reached = episodes_to_accuracy(&r, Method::OnPolicyMc, 30).unwrap();
        assert_eq!(reached[&Method::Dr], Some(30));
        assert_eq!(reached[&Method::OnPolicyMc], Some(30));
    }

    #[test]
    fn zero_normalizer_keeps_zero_errors() {
        let grid = vec![vec![vec![trace(vec![0.0, 0.0], 0.0)]]];
        let r = aggregate(vec![1.0], &[Method::OnPolicyMc], &grid, 2).unwrap();
        assert!(r.estimators[0].curve.iter().all(|p| p.mean_rel_error == 0.0));
        assert_eq!(r.estimators[0].variance_ratio, 0.0);
    }
}
