//! Run configuration files.
//!
//! A run is described by a TOML document with a few top-level keys and four
//! sections:
//!
//! ```toml
//! seed = 1
//! output_dir = "ct-d2-npn"
//! checkpoint_every = 50
//!
//! [env]
//! name = "ctgraph"     # or "nav2d"
//! branch = 2
//! depth = 2
//!
//! [policy]
//! layer_kind = "neuromodulated"
//! gate_mode = "magnitude"
//!
//! [meta]
//! n_iterations = 500
//!
//! [analysis]
//! n_tasks = 8
//! ```
//!
//! Any key left out of `[policy]` or `[meta]` takes the published setting
//! for the chosen environment (see [`policy_defaults`] and
//! [`meta_defaults`]). Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{CtGraphConfig, EnvFamily, EnvSpec};
use crate::layers::{GateMode, LayerKind, PolicySpec};
use crate::meta::MetaConfig;

/// Environment variable naming the directory relative output paths resolve against.
pub const OUTPUT_ROOT_VAR: &str = "NMRL_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Network architecture apart from the environment-determined input and head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub layer_kind: LayerKind,
    pub gate_mode: GateMode,
    pub context_dim: usize,
    pub hidden_sizes: Vec<usize>,
    /// Modulator width per hidden layer (neuromodulated layers only).
    pub nm_sizes: Vec<usize>,
}

impl PolicyConfig {
    pub fn resolve(&self, family: &EnvFamily) -> PolicySpec {
        PolicySpec {
            input_dim: family.obs_dim(),
            context_dim: self.context_dim,
            hidden_sizes: self.hidden_sizes.clone(),
            nm_sizes: self.nm_sizes.clone(),
            layer_kind: self.layer_kind,
            gate_mode: self.gate_mode,
            head: family.head(),
        }
    }
}

/// Settings for the representation-similarity analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Tasks compared in each heatmap. The CT-graph always uses one task
    /// per leaf.
    pub n_tasks: usize,
    /// Inner steps after which representations are captured (0 included).
    pub n_steps: usize,
    /// Probe grid side for 2D navigation (`side²` probe positions).
    pub probe_grid_side: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_tasks: 8,
            n_steps: 4,
            probe_grid_side: 16,
        }
    }
}

/// A fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Where the run writes its files. Relative paths resolve against
    /// `$NMRL_OUTPUT_ROOT`, or the working directory if that is unset.
    pub output_dir: PathBuf,
    /// Save a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub env: EnvSpec,
    pub policy: PolicyConfig,
    pub meta: MetaConfig,
    pub analysis: AnalysisConfig,
}

/// Published architecture for an environment (hidden width, modulator width
/// and context size per environment column).
pub fn policy_defaults(env: &EnvSpec) -> PolicyConfig {
    let (context_dim, hidden, nm) = match env {
        EnvSpec::Nav2d(_) => (5, 100, 4),
        EnvSpec::CtGraph(CtGraphConfig { depth, .. }) => match depth {
            0..=2 => (5, 200, 8),
            3 => (10, 300, 16),
            _ => (20, 600, 32),
        },
    };
    PolicyConfig {
        layer_kind: LayerKind::Neuromodulated,
        gate_mode: GateMode::Magnitude,
        context_dim,
        hidden_sizes: vec![hidden; 2],
        nm_sizes: vec![nm; 2],
    }
}

/// Published meta-training settings for an environment.
pub fn meta_defaults(env: &EnvSpec) -> MetaConfig {
    let base = MetaConfig::default();
    let (n_iterations, meta_batch_size, n_traj_train, n_traj_test) = match env {
        EnvSpec::Nav2d(_) => (500, 20, 20, 20),
        EnvSpec::CtGraph(CtGraphConfig { depth, .. }) => match depth {
            0..=2 => (500, 20, 20, 20),
            3 => (700, 25, 25, 40),
            _ => (1500, 20, 60, 100),
        },
    };
    MetaConfig {
        n_iterations,
        meta_batch_size,
        n_traj_train,
        n_traj_test,
        ..base
    }
}

/// Overlays `user` onto the serialized `defaults`, rejecting keys the
/// defaults do not have.
fn overlay<T>(section: &str, defaults: &T, user: Option<toml::Value>) -> Result<T, ConfigError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut table = match toml::Value::try_from(defaults) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("config sections serialize to tables"),
    };
    match user {
        None => {}
        Some(toml::Value::Table(user)) => {
            for (key, value) in user {
                if !table.contains_key(&key) {
                    return Err(ConfigError::Parse(format!("unknown key `{key}` in [{section}]")));
                }
                table.insert(key, value);
            }
        }
        Some(_) => return Err(ConfigError::Parse(format!("[{section}] must be a table"))),
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(format!("[{section}]: {}", e.message())))
}

impl RunConfig {
    /// Parses a config document, fills in defaults and validates it.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let take = |root: &mut toml::Table, key: &str| root.remove(key);

        let env: EnvSpec = take(&mut root, "env")
            .ok_or_else(|| ConfigError::Parse("missing [env] section".into()))?
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("[env]: {}", e.message())))?;
        let policy = overlay("policy", &policy_defaults(&env), take(&mut root, "policy"))?;
        let meta = overlay("meta", &meta_defaults(&env), take(&mut root, "meta"))?;
        let analysis = overlay("analysis", &AnalysisConfig::default(), take(&mut root, "analysis"))?;

        let seed = match take(&mut root, "seed") {
            None => 0,
            Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
            Some(v) => return Err(ConfigError::Parse(format!("seed must be a non-negative integer, got {v}"))),
        };
        let output_dir = match take(&mut root, "output_dir") {
            None => PathBuf::from("runs"),
            Some(toml::Value::String(s)) => PathBuf::from(s),
            Some(v) => return Err(ConfigError::Parse(format!("output_dir must be a string, got {v}"))),
        };
        let checkpoint_every = match take(&mut root, "checkpoint_every") {
            None => 50,
            Some(toml::Value::Integer(n)) if n >= 0 => n as usize,
            Some(v) => {
                return Err(ConfigError::Parse(format!(
                    "checkpoint_every must be a non-negative integer, got {v}"
                )))
            }
        };
        if let Some(key) = root.keys().next() {
            return Err(ConfigError::Parse(format!("unknown top-level key `{key}`")));
        }
        let config = RunConfig {
            seed,
            output_dir,
            checkpoint_every,
            env,
            policy,
            meta,
            analysis,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// The resolved configuration as TOML; parsing it back gives `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let family = self.env.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.policy
            .resolve(&family)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.meta
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.analysis.n_tasks == 0 || self.analysis.probe_grid_side == 0 {
            return Err(ConfigError::Invalid(
                "analysis needs at least one task and one probe".into(),
            ));
        }
        Ok(())
    }

    pub fn family(&self) -> Result<EnvFamily, ConfigError> {
        self.env.build().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn policy_spec(&self) -> Result<PolicySpec, ConfigError> {
        Ok(self.policy.resolve(&self.family()?))
    }

    /// `output_dir` resolved against the output root.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

/// Resolves a relative path against `$NMRL_OUTPUT_ROOT` when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
