//! C interface to the dopt-lab core.
//!
//! Models and policies cross the boundary as opaque handles. Every fallible
//! call returns a [`DoptStatus`]; on failure the message is kept per thread
//! and can be copied out with [`dopt_last_error`]. Tables are flat `double`
//! arrays in row-major `(t, s, a)` order.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dopt_lab::dp::{exact_estimator_variance, policy_performance, Baseline, ExactSolver};
use dopt_lab::envs::{build_gridworld, random_target_policies, GridworldSpec};
use dopt_lab::{ActionTable, Dims, Error, FiniteMdp, TimedPolicy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    CoverageViolation = 4,
    Infeasible = 5,
    Panic = 6,
}

/// Opaque finite-horizon MDP.
pub struct DoptMdp {
    inner: FiniteMdp,
}

/// Opaque time-indexed policy.
pub struct DoptPolicy {
    inner: TimedPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(err: &Error) -> DoptStatus {
    match err {
        Error::Shape(_) => DoptStatus::ShapeMismatch,
        Error::Coverage { .. } => DoptStatus::CoverageViolation,
        e if e.is_infeasible() => DoptStatus::Infeasible,
        _ => DoptStatus::InvalidArgument,
    }
}

fn guard<F>(f: F) -> DoptStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DoptStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("{name} is null"));
            DoptStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DoptStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, want: usize, name: &str) -> Result<(), Failure> {
    if got != want {
        return Err(Error::Shape(format!("{name} has {got} entries, expected {want}")).into());
    }
    Ok(())
}

fn out_ptr<T>(out: *mut *mut T, name: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(())
}

fn table_len(d: Dims) -> usize {
    d.horizon * d.num_states * d.num_actions
}

/// Copies the last error message of this thread into `buf`, NUL-terminated
/// and truncated to fit. Returns the full message length in bytes, not
/// counting the terminator, so a caller can size a second attempt.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn dopt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds an MDP from flat arrays: `transition[s][a][s']`, `reward[s][a]`
/// and `initial[s]`.
///
/// # Safety
/// Each array pointer must be valid for its stated length and `out` must be
/// a valid place to store the handle.
#[no_mangle]
pub unsafe extern "C" fn dopt_mdp_new(
    states: usize,
    actions: usize,
    horizon: usize,
    transition: *const f64,
    transition_len: usize,
    reward: *const f64,
    reward_len: usize,
    initial: *const f64,
    initial_len: usize,
    out: *mut *mut DoptMdp,
) -> DoptStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let transition = slice(transition, transition_len, "transition")?.to_vec();
        let reward = slice(reward, reward_len, "reward")?.to_vec();
        let initial = slice(initial, initial_len, "initial")?.to_vec();
        let inner = FiniteMdp::new(Dims::new(states, actions, horizon), transition, reward, initial)?;
        *out = Box::into_raw(Box::new(DoptMdp { inner }));
        Ok(())
    })
}

/// The `n x n` slippery gridworld with horizon `n`.
///
/// # Safety
/// `out` must be a valid place to store the handle.
#[no_mangle]
pub unsafe extern "C" fn dopt_mdp_gridworld(n: usize, slip: f64, reward_seed: u64, out: *mut *mut DoptMdp) -> DoptStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let spec = GridworldSpec {
            n,
            slip,
            reward_seed,
            policy_seed: 0,
        };
        let inner = build_gridworld(&spec)?;
        *out = Box::into_raw(Box::new(DoptMdp { inner }));
        Ok(())
    })
}

/// # Safety
/// `mdp` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dopt_mdp_free(mdp: *mut DoptMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a live handle; each output pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn dopt_mdp_dims(
    mdp: *const DoptMdp,
    states: *mut usize,
    actions: *mut usize,
    horizon: *mut usize,
) -> DoptStatus {
    guard(|| {
        let d = deref(mdp, "mdp")?.inner.dims();
        if states.is_null() || actions.is_null() || horizon.is_null() {
            return Err(Failure::Null("dims output"));
        }
        *states = d.num_states;
        *actions = d.num_actions;
        *horizon = d.horizon;
        Ok(())
    })
}

/// Builds a policy from `probs[t][s][a]`; each row must be a distribution.
///
/// # Safety
/// `probs` must be valid for `len` reads and `out` a valid place to store the
/// handle.
#[no_mangle]
pub unsafe extern "C" fn dopt_policy_new(
    states: usize,
    actions: usize,
    horizon: usize,
    probs: *const f64,
    len: usize,
    out: *mut *mut DoptPolicy,
) -> DoptStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let dims = Dims::new(states, actions, horizon);
        let data = slice(probs, len, "probs")?.to_vec();
        let inner = TimedPolicy::new(ActionTable::from_vec(dims, data)?)?;
        *out = Box::into_raw(Box::new(DoptPolicy { inner }));
        Ok(())
    })
}

/// A random target policy for `mdp`, drawn from `seed`.
///
/// # Safety
/// `mdp` must be a live handle and `out` a valid place to store the handle.
#[no_mangle]
pub unsafe extern "C" fn dopt_policy_random(mdp: *const DoptMdp, seed: u64, out: *mut *mut DoptPolicy) -> DoptStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let mdp = deref(mdp, "mdp")?;
        let inner = random_target_policies(&mdp.inner, 1, seed)?.remove(0);
        *out = Box::into_raw(Box::new(DoptPolicy { inner }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dopt_policy_free(policy: *mut DoptPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Copies the probabilities of `policy` into `out`, which must hold exactly
/// `horizon * states * actions` values.
///
/// # Safety
/// `policy` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dopt_policy_probs(policy: *const DoptPolicy, out: *mut f64, len: usize) -> DoptStatus {
    guard(|| {
        let policy = deref(policy, "policy")?;
        let data = &policy.inner.table().data;
        check_len(len, data.len(), "output buffer")?;
        slice_mut(out, len, "out")?.copy_from_slice(data);
        Ok(())
    })
}

/// Expected total reward of `target` from the initial distribution.
///
/// # Safety
/// Both handles must be live and `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dopt_policy_performance(mdp: *const DoptMdp, target: *const DoptPolicy, out: *mut f64) -> DoptStatus {
    guard(|| {
        let (mdp, target) = (deref(mdp, "mdp")?, deref(target, "target")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = policy_performance(&mdp.inner, &target.inner)?;
        Ok(())
    })
}

/// The variance-optimal behavior policy for `target` paired with the optimal
/// baseline. When `variance` is not null it receives the estimator variance
/// under that pair.
///
/// # Safety
/// Both handles must be live, `out` a valid place to store the new handle and
/// `variance` null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dopt_optimal_behavior(
    mdp: *const DoptMdp,
    target: *const DoptPolicy,
    out: *mut *mut DoptPolicy,
    variance: *mut f64,
) -> DoptStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (mdp, target) = (deref(mdp, "mdp")?, deref(target, "target")?);
        let solver = ExactSolver::new(&mdp.inner, &target.inner)?;
        let sol = solver.optimal_behavior(&solver.b_star())?;
        if !variance.is_null() {
            *variance = solver.total_variance(&sol.variance);
        }
        *out = Box::into_raw(Box::new(DoptPolicy { inner: sol.mu_star }));
        Ok(())
    })
}

/// Writes the optimal baseline (the action values of `target`) into `out`.
///
/// # Safety
/// Both handles must be live and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dopt_optimal_baseline(
    mdp: *const DoptMdp,
    target: *const DoptPolicy,
    out: *mut f64,
    len: usize,
) -> DoptStatus {
    guard(|| {
        let (mdp, target) = (deref(mdp, "mdp")?, deref(target, "target")?);
        let solver = ExactSolver::new(&mdp.inner, &target.inner)?;
        let b = solver.b_star().b;
        check_len(len, b.data.len(), "output buffer")?;
        slice_mut(out, len, "out")?.copy_from_slice(&b.data);
        Ok(())
    })
}

/// Exact variance of the baseline-corrected return when sampling from
/// `behavior`. A null `baseline` means the zero baseline, which gives plain
/// per-decision importance sampling.
///
/// # Safety
/// The handles must be live, `baseline` null or valid for `baseline_len`
/// reads and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dopt_exact_variance(
    mdp: *const DoptMdp,
    target: *const DoptPolicy,
    behavior: *const DoptPolicy,
    baseline: *const f64,
    baseline_len: usize,
    out: *mut f64,
) -> DoptStatus {
    guard(|| {
        let mdp = deref(mdp, "mdp")?;
        let (target, behavior) = (deref(target, "target")?, deref(behavior, "behavior")?);
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let dims = mdp.inner.dims();
        let baseline = if baseline.is_null() {
            Baseline::zero(dims)
        } else {
            check_len(baseline_len, table_len(dims), "baseline")?;
            let b = ActionTable::from_vec(dims, slice(baseline, baseline_len, "baseline")?.to_vec())?;
            Baseline::new(b, &target.inner)?
        };
        *out = exact_estimator_variance(&mdp.inner, &target.inner, &behavior.inner, &baseline)?.total;
        Ok(())
    })
}
