//! Run configuration: a TOML file with one table per section, read as a flat
//! map of `section.key` entries so that command-line flags can override any
//! of them by the same name.
//!
//! ```toml
//! [run]
//! seed = 3
//! horizon = 16
//!
//! [env]
//! maze = "maze.txt"
//!
//! [planner]
//! cost = "pcost"
//! expansions = 64
//! gamma = 2.0
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! See [`KEYS`] for every key and its default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::inference::{FutureBeliefs, InferenceMode, InferenceSettings};
use crate::planner::{ActionRule, CostKind, PlannerConfig, Propagation};

/// Every accepted key, with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("run.seed", "0", "seed for the agent and the environment"),
    ("run.horizon", "20", "maximum number of actions per episode"),
    ("run.out", "stdout", "CSV output path"),
    ("env.maze", "", "maze file ('#' wall, '.' free, 'S' start, 'G' goal)"),
    ("env.model", "", "model file with the true matrices of a POMDP"),
    ("env.obs_noise", "0.0", "maze observation noise"),
    ("env.actions", "5", "maze actions: 4 (no stay) or 5"),
    ("env.terminal_state", "", "POMDP state that ends an episode"),
    ("agent.model", "", "the agent's model file; defaults to the true matrices"),
    ("agent.learn", "false", "learn A, B and D from Dirichlet priors"),
    ("agent.prior_concentration", "1.0", "prior concentration when learning"),
    ("target.obs", "", "preferred observation distribution; maze default: goal"),
    ("target.states", "", "preferred state distribution; maze default: goal"),
    ("planner.cost", "pcost", "classic | feef | pcost"),
    ("planner.propagation", "backward", "forward | backward | min_backward"),
    ("planner.expansions", "64", "planning iterations K"),
    ("planner.cp", "0.7071067811865476", "exploration constant C_p"),
    ("planner.rollouts", "0", "rollouts N per new node"),
    ("planner.rollout_depth", "0", "rollout depth K_r"),
    ("planner.gamma", "1.0", "action precision"),
    ("planner.action_rule", "softmax_avg_cost", "softmax_avg_cost | visit_count_max | visit_count_softmax"),
    ("inference.mode", "local", "local | global"),
    ("inference.future", "variational", "variational | predictive"),
    ("inference.max_sweeps", "16", "maximum sweeps per inference call"),
    ("inference.tolerance", "1e-6", "stop when the free energy changes less"),
    ("benchmark.horizons", "[4, 5, 6, 7, 8, 9]", "policy horizons to time"),
    ("benchmark.timeout_ms", "60000", "abandon a cell after this long"),
    ("benchmark.min_sample_ms", "50", "repeat runs until this much time is measured"),
    ("benchmark.model", "", "model file; defaults to a fixed random 8-state 4-action POMDP"),
    ("oracle.models", "20", "random models in the cost-equivalence check"),
    ("oracle.trees", "50", "random trees in the propagation checks"),
    ("oracle.nodes", "100", "random nodes in the cost-variant check"),
    ("output.wall_time", "true", "write measured times; false writes zeros"),
    ("output.vfe_trace", "", "CSV path for free energy per inference sweep"),
];

fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, Value>,
    base_dir: PathBuf,
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut values = BTreeMap::new();
        for (section, body) in table {
            let Value::Table(body) = body else {
                return Err(Error::Config(format!("`{section}` must be a [section]")));
            };
            for (key, value) in body {
                let full = format!("{section}.{key}");
                if !is_known(&full) {
                    return Err(Error::Config(format!("unknown key `{full}`")));
                }
                values.insert(full, value);
            }
        }
        Ok(Self {
            values,
            base_dir: base_dir.to_owned(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir)
    }

    /// Overrides one key. `value` is read as a TOML value, falling back to a
    /// bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(value.to_owned()));
        self.values.insert(key.to_owned(), parsed);
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn wrong(key: &str, want: &str, got: &Value) -> Error {
        Error::Config(format!("`{key}` must be {want}, got {got}"))
    }

    pub fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(Self::wrong(key, "a string", other)),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.values.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(other) => Err(Self::wrong(key, "a non-negative integer", other)),
        }
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        if self.contains(key) {
            self.usize(key, 0).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(Value::Float(x)) => Ok(*x),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(other) => Err(Self::wrong(key, "a number", other)),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(other) => Err(Self::wrong(key, "true or false", other)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    other => Err(Self::wrong(key, "a list of numbers", other)),
                })
                .collect::<Result<_>>()
                .map(Some),
            Some(other) => Err(Self::wrong(key, "a list of numbers", other)),
        }
    }

    pub fn usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    other => Err(Self::wrong(key, "a list of non-negative integers", other)),
                })
                .collect(),
            Some(other) => Err(Self::wrong(key, "a list of integers", other)),
        }
    }

    /// A path-valued key, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.str(key)?.map(|p| self.base_dir.join(p)))
    }

    fn choice<T: Copy>(&self, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
        let Some(name) = self.str(key)? else {
            return Ok(default);
        };
        options
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("`{key}` must be one of {}, got `{name}`", names.join(", ")))
            })
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.usize("run.seed", 0)? as u64)
    }

    pub fn inference(&self) -> Result<InferenceSettings> {
        let d = InferenceSettings::default();
        let settings = InferenceSettings {
            max_sweeps: self.usize("inference.max_sweeps", d.max_sweeps)?,
            vfe_tolerance: self.f64("inference.tolerance", d.vfe_tolerance)?,
            mode: self.choice(
                "inference.mode",
                d.mode,
                &[("local", InferenceMode::Local), ("global", InferenceMode::Global)],
            )?,
            future: self.choice(
                "inference.future",
                d.future,
                &[
                    ("variational", FutureBeliefs::Variational),
                    ("predictive", FutureBeliefs::Predictive),
                ],
            )?,
        };
        settings.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(settings)
    }

    pub fn planner(&self) -> Result<PlannerConfig> {
        let d = PlannerConfig::default();
        let config = PlannerConfig {
            exploration: self.f64("planner.cp", d.exploration)?,
            max_expansions: self.usize("planner.expansions", d.max_expansions)?,
            cost: self.choice(
                "planner.cost",
                d.cost,
                &[
                    ("classic", CostKind::Classic),
                    ("feef", CostKind::Feef),
                    ("pcost", CostKind::Pcost),
                ],
            )?,
            propagation: self.choice(
                "planner.propagation",
                d.propagation,
                &[
                    ("forward", Propagation::Forward),
                    ("backward", Propagation::Backward),
                    ("min_backward", Propagation::MinBackward),
                ],
            )?,
            rollouts: self.usize("planner.rollouts", d.rollouts)?,
            rollout_depth: self.usize("planner.rollout_depth", d.rollout_depth)?,
            gamma: self.f64("planner.gamma", d.gamma)?,
            action_rule: self.choice(
                "planner.action_rule",
                d.action_rule,
                &[
                    ("softmax_avg_cost", ActionRule::SoftmaxAvgCost),
                    ("visit_count_max", ActionRule::VisitCountMax),
                    ("visit_count_softmax", ActionRule::VisitCountSoftmax),
                ],
            )?,
            inference: self.inference()?,
        };
        config.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }
}
