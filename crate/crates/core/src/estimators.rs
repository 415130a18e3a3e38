//! Per-trajectory return estimators and batched Monte Carlo evaluation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dp::Baseline;
use crate::error::{Error, Result};
use crate::mdp::{ratio, sample_trajectory_with, FiniteMdp, TimedPolicy, Trajectory};
use crate::rng::RngSpec;

fn step_ratio(target: &TimedPolicy, behavior: &TimedPolicy, t: usize, s: usize, a: usize) -> Result<f64> {
    let pi = target.prob(t, s, a);
    ratio(pi, behavior.prob(t, s, a)).ok_or(Error::Coverage { t, s, a, target_prob: pi })
}

/// Plain return, accumulated backwards.
pub fn on_policy_return(trajectory: &Trajectory) -> f64 {
    trajectory.steps.iter().rev().fold(0.0, |g, step| step.reward + g)
}

/// Per-decision importance sampling: `G_t = rho_t (R_{t+1} + G_{t+1})`.
pub fn pdis_return(trajectory: &Trajectory, target: &TimedPolicy, behavior: &TimedPolicy) -> Result<f64> {
    let mut g = 0.0;
    for step in trajectory.steps.iter().rev() {
        let rho = step_ratio(target, behavior, step.t, step.state, step.action)?;
        g = rho * (step.reward + g);
    }
    Ok(g)
}

/// Baseline-corrected PDIS:
/// `G_t = rho_t (R_{t+1} + G_{t+1} - b_t(S_t, A_t)) + b_bar_t(S_t)`.
pub fn baseline_return(
    trajectory: &Trajectory,
    target: &TimedPolicy,
    behavior: &TimedPolicy,
    baseline: &Baseline,
) -> Result<f64> {
    let mut g = 0.0;
    for step in trajectory.steps.iter().rev() {
        let (t, s, a) = (step.t, step.state, step.action);
        let rho = step_ratio(target, behavior, t, s, a)?;
        g = rho * (step.reward + g - baseline.b.get(t, s, a)) + baseline.b_bar.get(t, s);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    OnPolicyMc,
    Pdis,
    BaselineCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub behavior: TimedPolicy,
    pub baseline: Option<Baseline>,
}

impl EstimatorSpec {
    pub fn on_policy(target: &TimedPolicy) -> Self {
        Self {
            kind: EstimatorKind::OnPolicyMc,
            behavior: target.clone(),
            baseline: None,
        }
    }

    pub fn pdis(behavior: TimedPolicy) -> Self {
        Self {
            kind: EstimatorKind::Pdis,
            behavior,
            baseline: None,
        }
    }

    pub fn baseline_corrected(behavior: TimedPolicy, baseline: Baseline) -> Self {
        Self {
            kind: EstimatorKind::BaselineCorrected,
            behavior,
            baseline: Some(baseline),
        }
    }

    pub fn validate(&self, target: &TimedPolicy) -> Result<()> {
        self.behavior.check_dims(target.dims(), "behavior")?;
        match (self.kind, &self.baseline) {
            (EstimatorKind::BaselineCorrected, None) => {
                Err(Error::invalid("estimator", "baseline-corrected estimator needs a baseline"))
            }
            (EstimatorKind::BaselineCorrected, Some(b)) if b.dims() != target.dims() => {
                Err(Error::Shape("baseline dims differ from the target policy".into()))
            }
            (EstimatorKind::OnPolicyMc | EstimatorKind::Pdis, Some(_)) => {
                Err(Error::invalid("estimator", "only the baseline-corrected estimator takes a baseline"))
            }
            (EstimatorKind::OnPolicyMc, None) if &self.behavior != target => {
                Err(Error::invalid("estimator", "on-policy Monte Carlo must run the target policy"))
            }
            _ => Ok(()),
        }
    }

    pub fn estimate(&self, trajectory: &Trajectory, target: &TimedPolicy) -> Result<f64> {
        match self.kind {
            EstimatorKind::OnPolicyMc => Ok(on_policy_return(trajectory)),
            EstimatorKind::Pdis => pdis_return(trajectory, target, &self.behavior),
            EstimatorKind::BaselineCorrected => {
                let baseline = self
                    .baseline
                    .as_ref()
                    .ok_or_else(|| Error::invalid("estimator", "missing baseline"))?;
                baseline_return(trajectory, target, &self.behavior, baseline)
            }
        }
    }
}

/// Per-episode estimates with one-pass running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub samples: Vec<f64>,
    pub running_mean: f64,
    /// Unbiased sample variance (zero for a single sample).
    pub running_variance: f64,
    pub episodes: usize,
    m2: f64,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self::new()
    }
}

impl EvalRun {
    pub fn new() -> Self {
        Self {
            samples: Vec::new(),
            running_mean: 0.0,
            running_variance: 0.0,
            episodes: 0,
            m2: 0.0,
        }
    }

    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let mut run = Self::new();
        samples.into_iter().for_each(|x| run.push(x));
        run
    }

    /// Welford update. A constant stream keeps its mean exactly.
    pub fn push(&mut self, x: f64) {
        let old_mean = self.running_mean;
        self.episodes += 1;
        self.samples.push(x);
        self.running_mean = old_mean + (x - old_mean) / self.episodes as f64;
        self.m2 += (x - old_mean) * (x - self.running_mean);
        self.refresh_variance();
    }

    fn refresh_variance(&mut self) {
        self.running_variance = if self.episodes > 1 {
            self.m2.max(0.0) / (self.episodes - 1) as f64
        } else {
            0.0
        };
    }

    /// Combines two runs (parallel-variance merge).
    pub fn merge(mut self, other: EvalRun) -> EvalRun {
        if other.episodes == 0 {
            return self;
        }
        if self.episodes == 0 {
            return other;
        }
        let (na, nb) = (self.episodes as f64, other.episodes as f64);
        let delta = other.running_mean - self.running_mean;
        let n = na + nb;
        self.m2 = self.m2 + other.m2 + delta * delta * na * nb / n;
        self.episodes += other.episodes;
        self.running_mean += delta * nb / n;
        self.samples.extend(other.samples);
        self.refresh_variance();
        self
    }

    /// Running mean after each episode.
    pub fn cumulative_means(&self) -> Vec<f64> {
        let mut acc = EvalRun::new();
        self.samples
            .iter()
            .map(|&x| {
                acc.push(x);
                acc.running_mean
            })
            .collect()
    }

    /// CSV with columns `episode_index,estimate,running_mean,running_abs_error_vs_truth`.
    pub fn write_csv<W: Write>(&self, mut out: W, truth: f64) -> std::io::Result<()> {
        writeln!(out, "episode_index,estimate,running_mean,running_abs_error_vs_truth")?;
        for (i, (x, m)) in self.samples.iter().zip(self.cumulative_means()).enumerate() {
            writeln!(out, "{},{},{},{}", i + 1, x, m, (m - truth).abs())?;
        }
        Ok(())
    }
}

/// Runs `episodes` independent episodes of `spec.behavior`; episode `i`
/// draws from the stream `rng.split(i)`.
pub fn run_evaluation(
    mdp: &FiniteMdp,
    target: &TimedPolicy,
    spec: &EstimatorSpec,
    episodes: usize,
    rng: &RngSpec,
) -> Result<EvalRun> {
    if episodes == 0 {
        return Err(Error::invalid("episodes", "need at least one episode"));
    }
    target.check_dims(mdp.dims(), "target")?;
    spec.validate(target)?;
    let mut run = EvalRun::new();
    for i in 0..episodes {
        let traj = sample_trajectory_with(mdp, &spec.behavior, &mut rng.split(i as u64).rng());
        let x = spec.estimate(&traj, target).map_err(|e| Error::Episode {
            episode: i,
            source: Box::new(e),
        })?;
        run.push(x);
    }
    Ok(run)
}
