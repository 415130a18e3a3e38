//! Brute-force trajectory enumeration, used as an exact oracle for
//! expectations and variances of trajectory functionals.

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, Step, TimedPolicy, Trajectory};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Every positive-probability trajectory from `S_0 ~ p0`, with its probability.
pub fn enumerate_trajectories(
    mdp: &FiniteMdp,
    behavior: &TimedPolicy,
    cap: usize,
) -> Result<Vec<(Trajectory, f64)>> {
    behavior.check_dims(mdp.dims(), "behavior")?;
    check_cap(mdp, 0, cap)?;
    let mut out = Vec::new();
    let mut steps = Vec::with_capacity(mdp.horizon());
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        if p > 0.0 {
            walk(mdp, behavior, 0, s, p, &mut steps, &mut out);
        }
    }
    Ok(out)
}

/// Every positive-probability suffix trajectory starting in `state` at step `t`.
pub fn enumerate_from(
    mdp: &FiniteMdp,
    behavior: &TimedPolicy,
    t: usize,
    state: usize,
    cap: usize,
) -> Result<Vec<(Trajectory, f64)>> {
    behavior.check_dims(mdp.dims(), "behavior")?;
    if t >= mdp.horizon() || state >= mdp.num_states() {
        return Err(Error::invalid("start", format!("(t={t}, s={state}) is out of range")));
    }
    check_cap(mdp, t, cap)?;
    let mut out = Vec::new();
    let mut steps = Vec::with_capacity(mdp.horizon() - t);
    walk(mdp, behavior, t, state, 1.0, &mut steps, &mut out);
    Ok(out)
}

fn check_cap(mdp: &FiniteMdp, from: usize, cap: usize) -> Result<()> {
    let branching = (mdp.num_states() * mdp.num_actions()) as f64;
    let required = branching.powi((mdp.horizon() - from) as i32);
    if required > cap as f64 {
        return Err(Error::EnumerationCap { required, cap });
    }
    Ok(())
}

fn walk(
    mdp: &FiniteMdp,
    behavior: &TimedPolicy,
    t: usize,
    state: usize,
    prob: f64,
    steps: &mut Vec<Step>,
    out: &mut Vec<(Trajectory, f64)>,
) {
    for (action, &pa) in behavior.row(t, state).iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        for (next_state, &ps) in mdp.transition_row(state, action).iter().enumerate() {
            if ps <= 0.0 {
                continue;
            }
            steps.push(Step {
                t,
                state,
                action,
                reward: mdp.reward_sa(state, action),
                next_state,
            });
            let p = prob * pa * ps;
            if t + 1 == mdp.horizon() {
                out.push((Trajectory { steps: steps.clone() }, p));
            } else {
                walk(mdp, behavior, t + 1, next_state, p, steps, out);
            }
            steps.pop();
        }
    }
}

/// Exact mean and variance of `f` over enumerated paths.
pub fn exact_moments<F>(paths: &[(Trajectory, f64)], mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(&Trajectory) -> Result<f64>,
{
    let values: Vec<(f64, f64)> = paths
        .iter()
        .map(|(traj, p)| f(traj).map(|x| (x, *p)))
        .collect::<Result<_>>()?;
    let mean: f64 = values.iter().map(|(x, p)| p * x).sum();
    let var: f64 = values.iter().map(|(x, p)| p * (x - mean) * (x - mean)).sum();
    Ok((mean, var))
}
