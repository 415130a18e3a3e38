//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{build_gridworld, random_mdp, random_target_policies, GridworldSpec};
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, TimedPolicy};
use crate::offline::FitOptions;
use crate::tables::Dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Gridworld(GridworldSpec),
    /// A JSON model file, relative to the config file.
    File { path: PathBuf },
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSource {
    /// Dirichlet(1) policies; the seed defaults to the gridworld policy seed,
    /// then to the master seed.
    Random { count: usize, seed: Option<u64> },
    Files { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OnPolicyMc,
    Odi,
    Dr,
    Dopt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::OnPolicyMc, Method::Odi, Method::Dr, Method::Dopt];

    pub fn name(self) -> &'static str {
        match self {
            Method::OnPolicyMc => "on_policy_mc",
            Method::Odi => "odi",
            Method::Dr => "dr",
            Method::Dopt => "dopt",
        }
    }
}

/// Where the behavior policies and baselines come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactSource {
    /// Learned from a fresh offline log per run.
    #[default]
    Learned,
    /// Computed exactly from the true model.
    Exact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// Backward DP on the model.
    #[default]
    Exact,
    /// Mean of a long on-policy run.
    MonteCarlo { episodes: usize },
}

fn default_offline_episodes() -> usize {
    1000
}

fn default_logging_policies() -> usize {
    5
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub runs: usize,
    pub episodes: usize,
    #[serde(default = "default_offline_episodes")]
    pub offline_episodes: usize,
    #[serde(default = "default_logging_policies")]
    pub logging_policies: usize,
    #[serde(default = "default_methods")]
    pub estimators: Vec<Method>,
    #[serde(default)]
    pub artifacts: ArtifactSource,
    /// Offline fitting options for learned artifacts.
    #[serde(default)]
    pub fit: FitOptions,
    /// Budget of the reference curve for episodes-to-accuracy; defaults to `episodes`.
    pub reference_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub environment: EnvironmentSpec,
    pub targets: TargetSource,
    pub protocol: Protocol,
    #[serde(default)]
    pub ground_truth: GroundTruth,
    /// Output directory; the command line `--out` takes precedence.
    pub out_dir: Option<PathBuf>,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Model sizes above which exact ground truth is refused, in `T * S^2 * A` terms.
pub const EXACT_TRUTH_LIMIT: f64 = 2e9;

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        if p.runs == 0 || p.episodes == 0 {
            return Err(Error::Config("runs and episodes must both be at least 1".into()));
        }
        if !p.estimators.contains(&Method::OnPolicyMc) {
            return Err(Error::Config("the estimator list must include on_policy_mc, the error normalizer".into()));
        }
        if let Some(b) = p.reference_budget {
            if b == 0 || b > p.episodes {
                return Err(Error::Config(format!("reference_budget {b} must lie in 1..={}", p.episodes)));
            }
        }
        if p.artifacts == ArtifactSource::Learned && (p.offline_episodes == 0 || p.logging_policies == 0) {
            return Err(Error::Config("learned artifacts need offline_episodes and logging_policies >= 1".into()));
        }
        let mut files = Vec::new();
        if let EnvironmentSpec::File { path } = &self.environment {
            files.push(path);
        }
        match &self.targets {
            TargetSource::Files { paths } if paths.is_empty() => {
                return Err(Error::Config("targets.paths is empty".into()));
            }
            TargetSource::Files { paths } => files.extend(paths),
            TargetSource::Random { count: 0, .. } => {
                return Err(Error::Config("targets.count must be at least 1".into()));
            }
            TargetSource::Random { .. } => {}
        }
        for f in files {
            let full = self.resolve(f);
            if !full.is_file() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        if let EnvironmentSpec::Gridworld(g) = &self.environment {
            g.validate()?;
        }
        Ok(())
    }

    pub fn reference_budget(&self) -> usize {
        self.protocol.reference_budget.unwrap_or(self.protocol.episodes)
    }

    /// SHA-256 of the canonical JSON form (independent of file layout and location).
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Model dimensions known without building the model (not for files).
    pub fn declared_dims(&self) -> Option<Dims> {
        match &self.environment {
            EnvironmentSpec::Gridworld(g) => Some(Dims::new(g.n * g.n, 4, g.n)),
            EnvironmentSpec::Random {
                states,
                actions,
                horizon,
                ..
            } => Some(Dims::new(*states, *actions, *horizon)),
            EnvironmentSpec::File { .. } => None,
        }
    }

    pub fn build_mdp(&self) -> Result<FiniteMdp> {
        match &self.environment {
            EnvironmentSpec::Gridworld(spec) => build_gridworld(spec),
            EnvironmentSpec::File { path } => load_json(&self.resolve(path)),
            EnvironmentSpec::Random {
                states,
                actions,
                horizon,
                seed,
            } => Ok(random_mdp(Dims::new(*states, *actions, *horizon), *seed)?.0),
        }
    }

    pub fn build_targets(&self, mdp: &FiniteMdp) -> Result<Vec<TimedPolicy>> {
        match &self.targets {
            TargetSource::Random { count, seed } => {
                let seed = seed.unwrap_or(match &self.environment {
                    EnvironmentSpec::Gridworld(g) => g.policy_seed,
                    _ => self.seed,
                });
                random_target_policies(mdp, *count, seed)
            }
            TargetSource::Files { paths } => paths
                .iter()
                .map(|p| {
                    let policy: TimedPolicy = load_json(&self.resolve(p))?;
                    policy.check_dims(mdp.dims(), "target")?;
                    Ok(policy)
                })
                .collect(),
        }
    }
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
seed = 3

[environment]
kind = "gridworld"
n = 3
reward_seed = 1
policy_seed = 2

[targets]
kind = "random"
count = 2

[protocol]
runs = 2
episodes = 10
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(GRID, Path::new(".")).unwrap();
        assert_eq!(c.protocol.estimators, Method::ALL.to_vec());
        assert_eq!(c.protocol.offline_episodes, 1000);
        assert_eq!(c.reference_budget(), 10);
        assert_eq!(c.ground_truth, GroundTruth::Exact);
        match c.environment {
            EnvironmentSpec::Gridworld(g) => assert_eq!(g.slip, 0.1),
            _ => panic!(),
        }
        assert_eq!(c.sha256(), ExperimentConfig::from_toml(GRID, Path::new("/elsewhere")).unwrap().sha256());
    }

    #[test]
    fn rejects_bad_values() {
        let zero_runs = GRID.replace("runs = 2", "runs = 0");
        assert!(matches!(ExperimentConfig::from_toml(&zero_runs, Path::new(".")), Err(Error::Config(_))));
        let no_mc = GRID.replace("episodes = 10", "episodes = 10\nestimators = [\"dopt\"]");
        assert!(ExperimentConfig::from_toml(&no_mc, Path::new(".")).is_err());
        let missing = GRID.replace(
            "kind = \"random\"\ncount = 2",
            "kind = \"files\"\npaths = [\"nope.json\"]",
        );
        assert!(matches!(ExperimentConfig::from_toml(&missing, Path::new(".")), Err(Error::Io { .. })));
        assert!(ExperimentConfig::from_toml("seed = ", Path::new(".")).is_err());
    }
}
