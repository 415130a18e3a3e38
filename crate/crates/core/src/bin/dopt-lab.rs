use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dopt_lab::dataset::TupleDataset;
use dopt_lab::dp::{exact_estimator_variance, policy_performance, Baseline, ValueTables};
use dopt_lab::envs::{build_gridworld, generate_offline_log, random_mdp, random_target_policies, GridworldSpec};
use dopt_lab::estimators::{run_evaluation, EstimatorSpec};
use dopt_lab::harness::config::{load_json, save_json};
use dopt_lab::harness::{run_comparison, run_theorem_suite, write_outputs, ExperimentConfig, SuiteConfig};
use dopt_lab::offline::{FitOptions, OfflineFit, Pooling};
use dopt_lab::theorems::{Mutation, VarianceFamily};
use dopt_lab::{Dims, FiniteMdp, RngSpec, TimedPolicy};

#[derive(Parser, Debug)]
#[command(name = "dopt-lab", version, about = "Variance-optimal off-policy evaluation on tabular finite-horizon MDPs")]
struct Cli {
    /// Master seed (each subcommand documents its default).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build environments, target policies and offline logs.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Exact q, v, nu, u, the optimal behavior and baseline, and estimator variances.
    Solve(ModelArgs),
    /// Learn the behavior policy and baseline from a logged dataset.
    Learn(LearnArgs),
    /// Run one estimator and write its per-episode CSV.
    Evaluate(EvaluateArgs),
    /// Compare estimators over many target policies and runs.
    Compare,
    /// Run the exact-identity suite on random instances.
    Verify(VerifyArgs),
    /// Print value tables and the optimal behavior as JSON.
    Dump(ModelArgs),
}

#[derive(Subcommand, Debug)]
enum EnvCommand {
    /// Write an MDP (and optionally target policies) to `--out`.
    Build(BuildArgs),
    /// Sample an offline JSONL log from random logging policies.
    Log(LogArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Gridworld side length.
    #[arg(long, conflicts_with = "random")]
    grid: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    slip: f64,
    /// Random MDP as STATES,ACTIONS,HORIZON.
    #[arg(long, value_parser = parse_dims)]
    random: Option<Dims>,
    /// Number of random target policies to write alongside the model.
    #[arg(long, default_value_t = 0)]
    policies: usize,
}

#[derive(Args, Debug)]
struct LogArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 5)]
    logging_policies: usize,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    target: PathBuf,
}

#[derive(Args, Debug)]
struct LearnArgs {
    /// JSONL tuples `{t, s, a, r, s_next}`.
    #[arg(long)]
    dataset: PathBuf,
    /// Target policy; its shape fixes the model dimensions.
    #[arg(long)]
    target: PathBuf,
    /// Share model cells across time steps (time-homogeneous environments only).
    #[arg(long)]
    pool_time: bool,
    /// Visits each target action needs before a row's learned weights are used.
    #[arg(long, default_value_t = 1)]
    min_row_visits: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    OnPolicy,
    Pdis,
    Baseline,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    mdp: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value = "on-policy")]
    estimator: EstimatorArg,
    /// Behavior policy (defaults to the target).
    #[arg(long)]
    behavior: Option<PathBuf>,
    /// Baseline JSON (`{b, b_bar}`); required for `--estimator baseline`.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MutationArg {
    None,
    FlipDeltaSign,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 50)]
    instances: usize,
    #[arg(long, default_value_t = 50)]
    challengers: usize,
    /// Deliberately break the suite to confirm it can fail.
    #[arg(long, value_enum, default_value = "none")]
    mutation: MutationArg,
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [states, actions, horizon] => Ok(Dims::new(states, actions, horizon)),
        _ => Err("expected STATES,ACTIONS,HORIZON".into()),
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().context("--out is required for this command")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_model(args: &ModelArgs) -> Result<(FiniteMdp, TimedPolicy)> {
    let mdp: FiniteMdp = load_json(&args.mdp)?;
    let target: TimedPolicy = load_json(&args.target)?;
    target.check_dims(mdp.dims(), "target")?;
    Ok((mdp, target))
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    match out {
        Some(path) => save_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn env_build(cli: &Cli, args: &BuildArgs) -> Result<()> {
    let out = require_out(&cli.out)?;
    let seed = cli.seed.unwrap_or(0);
    let mdp = match (args.grid, args.random) {
        (Some(n), None) => build_gridworld(&GridworldSpec {
            n,
            slip: args.slip,
            reward_seed: seed,
            policy_seed: seed.wrapping_add(1),
        })?,
        (None, Some(dims)) => random_mdp(dims, seed)?.0,
        _ => bail!("pass exactly one of --grid N or --random S,A,T"),
    };
    ensure_dir(out)?;
    save_json(&out.join("mdp.json"), &mdp)?;
    let policies = random_target_policies(&mdp, args.policies, seed.wrapping_add(1))?;
    for (k, pi) in policies.iter().enumerate() {
        save_json(&out.join(format!("policy_{k}.json")), pi)?;
    }
    let d = mdp.dims();
    eprintln!(
        "wrote {} ({} states, {} actions, horizon {}) and {} policies",
        out.display(),
        d.num_states,
        d.num_actions,
        d.horizon,
        policies.len()
    );
    Ok(())
}

fn env_log(cli: &Cli, args: &LogArgs) -> Result<()> {
    let out = require_out(&cli.out)?;
    let seed = cli.seed.unwrap_or(0);
    let mdp: FiniteMdp = load_json(&args.mdp)?;
    let logging = random_target_policies(&mdp, args.logging_policies, seed)?;
    let log = generate_offline_log(&mdp, &logging, args.episodes, seed.wrapping_add(1))?;
    log.save(out)?;
    eprintln!("wrote {} tuples to {}", log.len(), out.display());
    Ok(())
}

fn solve(cli: &Cli, args: &ModelArgs) -> Result<()> {
    let out = require_out(&cli.out)?;
    let (mdp, target) = load_model(args)?;
    let fam = VarianceFamily::compute(&mdp, &target)?;
    let tables = ValueTables::solve(&mdp, &target)?;
    let b_star = Baseline::new(tables.q.clone(), &target)?;
    ensure_dir(out)?;
    save_json(&out.join("value_tables.json"), &tables)?;
    save_json(&out.join("mu_star.json"), &fam.mu_star)?;
    save_json(&out.join("b_star.json"), &b_star)?;
    save_json(&out.join("mu_pdis.json"), &fam.mu_pdis)?;
    let summary = serde_json::json!({
        "performance": policy_performance(&mdp, &target)?,
        "variances": fam.totals,
    });
    save_json(&out.join("solution.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn learn(cli: &Cli, args: &LearnArgs) -> Result<()> {
    let out = require_out(&cli.out)?;
    let target: TimedPolicy = load_json(&args.target)?;
    let dims = target.dims();
    let data = TupleDataset::load(&args.dataset, dims)?;
    let options = FitOptions {
        pooling: if args.pool_time { Pooling::TimeHomogeneous } else { Pooling::PerStep },
        min_row_visits: args.min_row_visits,
    };
    let fit = OfflineFit::with_options(&data, &target, dims, options)?;
    let learned = fit.dopt()?;
    let odi = fit.odi()?;
    ensure_dir(out)?;
    save_json(&out.join("mu_hat_star.json"), &learned.mu_hat_star)?;
    save_json(&out.join("b_hat_star.json"), &learned.b_hat_star)?;
    save_json(&out.join("mu_hat_odi.json"), &odi.mu_hat)?;
    save_json(&out.join("diagnostics.json"), &learned.diagnostics)?;
    save_json(&out.join("artifacts.json"), &learned)?;
    println!("{}", learned.diagnostics_json());
    Ok(())
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let mdp: FiniteMdp = load_json(&args.mdp)?;
    let target: TimedPolicy = load_json(&args.target)?;
    target.check_dims(mdp.dims(), "target")?;
    let behavior = match &args.behavior {
        Some(p) => load_json(p)?,
        None => target.clone(),
    };
    let spec = match args.estimator {
        EstimatorArg::OnPolicy => EstimatorSpec::on_policy(&target),
        EstimatorArg::Pdis => EstimatorSpec::pdis(behavior),
        EstimatorArg::Baseline => {
            let path = args.baseline.as_ref().context("--estimator baseline needs --baseline")?;
            let raw: Baseline = load_json(path)?;
            EstimatorSpec::baseline_corrected(behavior, Baseline::new(raw.b, &target)?)
        }
    };
    let rng = RngSpec::from_seed(cli.seed.unwrap_or(0));
    let run = run_evaluation(&mdp, &target, &spec, args.episodes, &rng)?;
    let truth = policy_performance(&mdp, &target)?;
    match &cli.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            run.write_csv(std::io::BufWriter::new(file), truth)?;
        }
        None => run.write_csv(std::io::stdout().lock(), truth)?,
    }
    let exact = exact_estimator_variance(
        &mdp,
        &target,
        &spec.behavior,
        spec.baseline.as_ref().unwrap_or(&Baseline::zero(mdp.dims())),
    )?;
    eprintln!(
        "mean {:.6} (truth {:.6}), sample variance {:.6} (exact {:.6})",
        run.running_mean, truth, run.running_variance, exact.total
    );
    Ok(())
}

fn compare(cli: &Cli) -> Result<()> {
    let path = cli.config.as_deref().context("compare needs --config FILE")?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(|d| config.resolve(d)))
        .context("compare needs --out DIR or out_dir in the config")?;
    let result = run_comparison(&config)?;
    write_outputs(&result, &config, &out)?;
    for e in &result.estimators {
        let reached = e.episodes_to_accuracy.map_or("not reached".to_string(), |k| k.to_string());
        println!(
            "{:<13} variance ratio {:.4} +/- {:.4}  episodes to match: {}",
            e.method.name(),
            e.variance_ratio,
            e.variance_ratio_stderr,
            reached
        );
    }
    Ok(())
}

/// Returns whether every check passed.
fn verify(cli: &Cli, args: &VerifyArgs) -> Result<bool> {
    let config = SuiteConfig {
        instances: args.instances,
        seed: cli.seed.unwrap_or(1),
        challengers: args.challengers,
        mutation: match args.mutation {
            MutationArg::None => Mutation::None,
            MutationArg::FlipDeltaSign => Mutation::FlipDeltaSign,
        },
        ..SuiteConfig::default()
    };
    let report = run_theorem_suite(&config)?;
    emit(cli.out.as_deref(), &report)?;
    for (name, c) in &report.checks {
        eprintln!(
            "{:<30} passed {:>3} failed {:>3} skipped {:>3} max {:.3e}",
            name, c.passed, c.failed, c.skipped, c.max_residual
        );
    }
    Ok(report.all_passed)
}

fn dump(cli: &Cli, args: &ModelArgs) -> Result<()> {
    let (mdp, target) = load_model(args)?;
    let fam = VarianceFamily::compute(&mdp, &target)?;
    let tables = ValueTables::solve(&mdp, &target)?;
    let value = serde_json::json!({
        "value_tables": tables,
        "target": target,
        "mu_star": fam.mu_star,
    });
    emit(cli.out.as_deref(), &value)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Env(EnvCommand::Build(a)) => env_build(cli, a)?,
        Command::Env(EnvCommand::Log(a)) => env_log(cli, a)?,
        Command::Solve(a) => solve(cli, a)?,
        Command::Learn(a) => learn(cli, a)?,
        Command::Evaluate(a) => evaluate(cli, a)?,
        Command::Compare => compare(cli)?,
        Command::Verify(a) => return verify(cli, a),
        Command::Dump(a) => dump(cli, a)?,
    }
    Ok(true)
}

/// The error chain, skipping causes whose text the previous layer already printed.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            let infeasible = err
                .downcast_ref::<dopt_lab::Error>()
                .is_some_and(dopt_lab::Error::is_infeasible);
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}
