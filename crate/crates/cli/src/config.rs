//! Flat run configuration: defaults, overridden by a `key = value` file,
//! overridden by flags.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use cadrl::net::TrainHyper;
use cadrl::orca::OrcaParams;
use cadrl::policy::PolicyConfig;
use cadrl::sim::SimConfig;
use cadrl::training::{DatasetConfig, TargetMode, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // Simulation
    pub dt: f64,
    pub timeout: f64,

    // Policy
    pub lookahead: f64,
    pub filter_window: f64,
    pub random_actions: usize,
    pub gamma: f64,
    pub goal_tol: f64,

    // ORCA
    pub orca_time_horizon: f64,
    pub orca_neighbor_dist: f64,

    // Dataset
    pub dataset_trajectories: usize,
    pub dataset_domain: f64,
    pub sample_interval: f64,

    // Supervised initialization
    pub sup_iterations: usize,
    pub sup_batch: usize,
    pub sup_learning_rate: f64,
    pub sup_decay_window: usize,
    pub init_scale: f64,

    // Reinforcement learning
    pub episodes: usize,
    pub cases_per_episode: usize,
    pub sync_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    pub coop_lower: f64,
    pub coop_upper: f64,
    pub coop_penalty: f64,
    pub capacity: usize,
    pub rl_batch: usize,
    pub updates_per_episode: usize,
    pub rl_learning_rate: f64,
    pub rl_decay_window: usize,
    pub rl_min_learning_rate: f64,
    pub target_mode: TargetMode,
    pub train_domain: f64,

    // Benchmark
    pub bench_agents: usize,
    pub bench_cases: usize,
    pub bench_domain: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let pol = PolicyConfig::default();
        let orca = OrcaParams::default();
        let ds = DatasetConfig::default();
        let sup = TrainHyper::default();
        let rl = TrainConfig::default();
        Self {
            seed: 0,
            dt: sim.dt,
            timeout: sim.timeout,
            lookahead: pol.lookahead,
            filter_window: pol.filter_window,
            random_actions: pol.random_actions,
            gamma: pol.gamma,
            goal_tol: pol.goal_tol,
            orca_time_horizon: orca.time_horizon,
            orca_neighbor_dist: orca.neighbor_dist,
            dataset_trajectories: ds.trajectories,
            dataset_domain: ds.domain_side,
            sample_interval: ds.sample_interval,
            sup_iterations: sup.iterations,
            sup_batch: sup.batch_size,
            sup_learning_rate: sup.learning_rate,
            sup_decay_window: sup.decay_window,
            init_scale: sup.init_scale,
            episodes: rl.episodes,
            cases_per_episode: rl.cases_per_episode,
            sync_period: rl.sync_period,
            epsilon_start: rl.epsilon_start,
            epsilon_end: rl.epsilon_end,
            epsilon_decay_episodes: rl.epsilon_decay_episodes,
            coop_lower: rl.coop_lower,
            coop_upper: rl.coop_upper,
            coop_penalty: rl.coop_penalty,
            capacity: rl.capacity,
            rl_batch: rl.batch_size,
            updates_per_episode: rl.updates_per_episode,
            rl_learning_rate: rl.learning_rate,
            rl_decay_window: rl.decay_window,
            rl_min_learning_rate: rl.min_learning_rate,
            target_mode: rl.target_mode,
            train_domain: rl.domain_side,
            bench_agents: 2,
            bench_cases: 100,
            bench_domain: 4.0,
        }
    }
}

/// Accumulates overrides on top of the defaults.
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn new() -> Self {
        match serde_json::to_value(RunConfig::default()) {
            Ok(Value::Object(m)) => Self(m),
            _ => unreachable!("RunConfig serializes to an object"),
        }
    }

    /// Sets `key` from its textual value, typed after the default.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let current = self
            .0
            .get(key)
            .ok_or_else(|| anyhow!("unknown config key '{key}'"))?;
        let raw = raw.trim();
        let value = match current {
            Value::String(_) => Value::String(raw.trim_matches('"').to_string()),
            Value::Bool(_) => Value::Bool(raw.parse().with_context(|| format!("{key}: expected true/false"))?),
            Value::Number(n) if n.is_f64() => {
                let x: f64 = raw.parse().with_context(|| format!("{key}: expected a number, got '{raw}'"))?;
                serde_json::Number::from_f64(x)
                    .map(Value::Number)
                    .ok_or_else(|| anyhow!("{key}: value must be finite"))?
            }
            Value::Number(_) => {
                let x: u64 = raw
                    .parse()
                    .with_context(|| format!("{key}: expected a non-negative integer, got '{raw}'"))?;
                Value::Number(x.into())
            }
            other => bail!("{key}: unsupported config value {other}"),
        };
        self.0.insert(key.to_string(), value);
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected 'key = value'", n + 1))?;
            self.set(k.trim(), v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn resolve(self) -> Result<RunConfig> {
        Ok(serde_json::from_value(Value::Object(self.0))?)
    }
}

impl RunConfig {
    pub fn sim(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            timeout: self.timeout,
            policy: PolicyConfig {
                lookahead: self.lookahead,
                filter_window: self.filter_window,
                random_actions: self.random_actions,
                seed: self.seed,
                gamma: self.gamma,
                goal_tol: self.goal_tol,
                ..PolicyConfig::default()
            },
            orca: OrcaParams {
                time_horizon: self.orca_time_horizon,
                neighbor_dist: self.orca_neighbor_dist,
                time_step: self.dt,
                ..OrcaParams::default()
            },
            epsilon: 0.0,
            stop_on_collision: false,
        }
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            trajectories: self.dataset_trajectories,
            domain_side: self.dataset_domain,
            sample_interval: self.sample_interval,
            gamma: self.gamma,
            seed: self.seed,
            sim: self.sim(),
        }
    }

    pub fn supervised(&self) -> TrainHyper {
        TrainHyper {
            learning_rate: self.sup_learning_rate,
            batch_size: self.sup_batch,
            iterations: self.sup_iterations,
            init_scale: self.init_scale,
            seed: self.seed,
            decay_window: self.sup_decay_window,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            cases_per_episode: self.cases_per_episode,
            sync_period: self.sync_period,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            epsilon_decay_episodes: self.epsilon_decay_episodes,
            coop_lower: self.coop_lower,
            coop_upper: self.coop_upper,
            coop_penalty: self.coop_penalty,
            capacity: self.capacity,
            batch_size: self.rl_batch,
            updates_per_episode: self.updates_per_episode,
            learning_rate: self.rl_learning_rate,
            decay_window: self.rl_decay_window,
            min_learning_rate: self.rl_min_learning_rate,
            target_mode: self.target_mode,
            n_agents: 2,
            domain_side: self.train_domain,
            sample_interval: self.sample_interval,
            horizon: self.lookahead,
            gamma: self.gamma,
            seed: self.seed,
            sim: self.sim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flag_precedence() {
        let mut o = Overrides::new();
        o.apply_text("# comment\nepisodes = 10\ngamma = 0.9 # trailing\n").unwrap();
        o.set("episodes", "20").unwrap();
        let c = o.resolve().unwrap();
        assert_eq!(c.episodes, 20);
        assert_eq!(c.gamma, 0.9);
        assert_eq!(c.dt, RunConfig::default().dt);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        let mut o = Overrides::new();
        assert!(o.set("no_such_key", "1").is_err());
        assert!(o.set("episodes", "-1").is_err());
        assert!(o.set("gamma", "abc").is_err());
        assert!(o.apply_text("episodes 10").is_err());
    }

    #[test]
    fn enum_keys_parse() {
        let mut o = Overrides::new();
        o.set("target_mode", "monte-carlo").unwrap();
        assert_eq!(o.resolve().unwrap().target_mode, TargetMode::MonteCarlo);
        let mut o = Overrides::new();
        o.set("target_mode", "sideways").unwrap();
        assert!(o.resolve().is_err());
    }
}
