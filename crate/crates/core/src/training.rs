//! Deep V-learning: ORCA-seeded supervised initialization, then refinement
//! with an experience set, a frozen target network and epsilon-greedy
//! rollouts.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{extra_time_metric, CaseMetrics};
use crate::net::{StagnationDecay, TrainHyper, TrainingPair, ValueNetwork};
use crate::reward::{discount_exponent, reward_from, RewardKind, COLLISION_REWARD, DEFAULT_GAMMA, GOAL_REWARD};
use crate::rng::substream;
use crate::scenario::{crossing_testcase, random_testcase, swap_testcase, TestCase};
use crate::sim::{simulate, step_separation, Episode, Outcome, PolicyKind, SimConfig, TrajectoryRecord};
use crate::state::{rotate_to_agent_frame, AgentCentricState, JointState, INPUT_DIM};

pub const DATASET_MAGIC: &[u8] = b"CADRLSET1";
pub const TARGET_RANGE: (f64, f64) = (-0.35, 1.0);

/// Bounded pool of training pairs; once full, each insertion overwrites the
/// oldest entry.
#[derive(Clone, Debug)]
pub struct ExperienceSet {
    pairs: Vec<TrainingPair>,
    capacity: usize,
    cursor: usize,
}

impl ExperienceSet {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "experience capacity must be positive");
        Self {
            pairs: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn assimilate<I: IntoIterator<Item = TrainingPair>>(&mut self, new: I) {
        for p in new {
            if self.pairs.len() < self.capacity {
                self.pairs.push(p);
            } else {
                self.pairs[self.cursor] = p;
            }
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Entries oldest first.
    pub fn ordered(&self) -> Vec<TrainingPair> {
        if self.pairs.len() < self.capacity {
            return self.pairs.clone();
        }
        let mut out = self.pairs[self.cursor..].to_vec();
        out.extend_from_slice(&self.pairs[..self.cursor]);
        out
    }

    /// Random subset without replacement (everything if smaller than `n`).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<TrainingPair> {
        let k = n.min(self.pairs.len());
        sample_indices(rng, self.pairs.len(), k)
            .into_iter()
            .map(|i| self.pairs[i])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// One-step targets through the target network.
    Bootstrapped,
    /// Discounted outcome of the recorded trajectory.
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub cases_per_episode: usize,
    /// Target sync and evaluation period (episodes).
    pub sync_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    pub coop_lower: f64,
    pub coop_upper: f64,
    pub coop_penalty: f64,
    pub capacity: usize,
    pub batch_size: usize,
    pub updates_per_episode: usize,
    pub learning_rate: f64,
    /// Updates per loss window for the stagnation decay.
    pub decay_window: usize,
    /// Lowest learning rate the decay may reach.
    pub min_learning_rate: f64,
    pub target_mode: TargetMode,
    pub n_agents: usize,
    pub domain_side: f64,
    /// Spacing of value samples along a trajectory (s).
    pub sample_interval: f64,
    /// Bootstrap horizon (s); matches the policy look-ahead.
    pub horizon: f64,
    pub gamma: f64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            cases_per_episode: 2,
            sync_period: 50,
            epsilon_start: 0.5,
            epsilon_end: 0.1,
            epsilon_decay_episodes: 400,
            coop_lower: 1.0,
            coop_upper: 2.0,
            coop_penalty: 0.1,
            capacity: 100_000,
            batch_size: 500,
            updates_per_episode: 16,
            learning_rate: 0.01,
            decay_window: 200,
            min_learning_rate: 0.001,
            target_mode: TargetMode::Bootstrapped,
            n_agents: 2,
            domain_side: 4.0,
            sample_interval: 0.2,
            horizon: 1.0,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            sim: SimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cases_per_episode", self.cases_per_episode),
            ("sync_period", self.sync_period),
            ("capacity", self.capacity),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {e}")));
            }
        }
        if self.n_agents != 2 {
            return Err(Error::invalid("training uses two-agent cases"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("sample_interval", self.sample_interval),
            ("horizon", self.horizon),
            ("coop_lower", self.coop_lower),
            ("coop_upper", self.coop_upper),
            ("domain_side", self.domain_side),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        self.sim.policy.validate()
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let span = self.epsilon_decay_episodes.max(1) as f64;
        let frac = (episode as f64).min(span) / span;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    fn steps(&self, seconds: f64) -> usize {
        ((seconds / self.sim.dt).round() as usize).max(1)
    }
}

// ---------------------------------------------------------------------------
// Supervised data from ORCA

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub trajectories: usize,
    pub domain_side: f64,
    pub sample_interval: f64,
    pub gamma: f64,
    pub seed: u64,
    pub sim: SimConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            trajectories: 500,
            domain_side: 4.0,
            sample_interval: 0.2,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<TrainingPair>,
    pub kept: usize,
    pub discarded: usize,
}

/// Simulates random ORCA-vs-ORCA episodes and labels every sampled state
/// with its discounted time to goal, from both agents' perspectives.
/// Episodes that time out or collide are discarded.
pub fn generate_orca_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.trajectories == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let episodes: Vec<Result<Episode>> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, "dataset-case", i as u64);
            let case = random_testcase(2, cfg.domain_side, &mut rng)?;
            simulate(&case, &[PolicyKind::Orca; 2], None, &cfg.sim, i as u64)
        })
        .collect();
    let stride = ((cfg.sample_interval / cfg.sim.dt).round() as usize).max(1);
    let mut pairs = Vec::new();
    let (mut kept, mut discarded) = (0, 0);
    for (i, ep) in episodes.into_iter().enumerate() {
        let ep = ep?;
        if !ep.all_reached() {
            log::info!("dataset episode {i} discarded: {:?}", outcomes(&ep));
            discarded += 1;
            continue;
        }
        kept += 1;
        for (a, b) in [(0, 1), (1, 0)] {
            pairs.extend(time_to_goal_pairs(&ep.trajectories[a], &ep.trajectories[b], stride, cfg.gamma));
        }
    }
    Ok(Dataset { pairs, kept, discarded })
}

fn outcomes(ep: &Episode) -> Vec<Outcome> {
    ep.trajectories.iter().map(|t| t.outcome).collect()
}

fn time_to_goal_pairs(me: &TrajectoryRecord, other: &TrajectoryRecord, stride: usize, gamma: f64) -> Vec<TrainingPair> {
    let t_g = match me.outcome {
        Outcome::ReachedGoal { time } => time,
        _ => return Vec::new(),
    };
    let v = me.initial().pref_speed();
    let mut out = Vec::new();
    let mut k = 0;
    while k < me.states.len() && me.times[k] <= t_g {
        out.push(TrainingPair {
            input: joint_input(me, other, k),
            target: discount_exponent(gamma, t_g - me.times[k], v),
        });
        k += stride;
    }
    out
}

fn joint_input(me: &TrajectoryRecord, other: &TrajectoryRecord, k: usize) -> AgentCentricState {
    rotate_to_agent_frame(&JointState {
        self_state: me.states[k],
        other: other.states[k.min(other.states.len() - 1)].observable,
    })
}

pub fn write_dataset<W: Write>(mut w: W, pairs: &[TrainingPair]) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(INPUT_DIM as u32)?;
    w.write_u64::<LittleEndian>(pairs.len() as u64)?;
    for p in pairs {
        for x in p.input.0 {
            w.write_f64::<LittleEndian>(x)?;
        }
        w.write_f64::<LittleEndian>(p.target)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<TrainingPair>> {
    let mut magic = vec![0u8; DATASET_MAGIC.len()];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("dataset file too short".into()))?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim != INPUT_DIM {
        return Err(Error::Shape(format!("dataset input width {dim}, expected {INPUT_DIM}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut pairs = Vec::with_capacity(n.min(1 << 20));
    let mut row = [0.0; INPUT_DIM + 1];
    for _ in 0..n {
        r.read_f64_into::<LittleEndian>(&mut row)
            .map_err(|_| Error::Shape("dataset truncated".into()))?;
        let mut input = [0.0; INPUT_DIM];
        input.copy_from_slice(&row[..INPUT_DIM]);
        pairs.push(TrainingPair {
            input: AgentCentricState(input),
            target: row[INPUT_DIM],
        });
    }
    Ok(pairs)
}

pub fn save_dataset(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    write_dataset(std::io::BufWriter::new(std::fs::File::create(path)?), pairs)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TrainingPair>> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

// ---------------------------------------------------------------------------
// Supervised initialization

#[derive(Clone, Debug)]
pub struct SupervisedReport {
    pub net: ValueNetwork,
    pub holdout_rms: f64,
    pub train_rms: f64,
    /// (iteration, batch loss, learning rate) every 100 iterations.
    pub trace: Vec<(usize, f64, f64)>,
}

/// Fits a fresh network to `pairs` by mini-batch SGD on a 90/10 split. On
/// divergence the last stable weights are written to `fallback` (if given)
/// before the error is returned.
pub fn supervised_init(
    pairs: &[TrainingPair],
    widths: &[usize],
    hyper: &TrainHyper,
    fallback: Option<&Path>,
) -> Result<SupervisedReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    if hyper.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = substream(hyper.seed, "split", 0);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_hold = pairs.len() / 10;
    let holdout: Vec<TrainingPair> = order[..n_hold].iter().map(|&i| pairs[i]).collect();
    let train: Vec<TrainingPair> = order[n_hold..].iter().map(|&i| pairs[i]).collect();

    let mut net = ValueNetwork::init(widths, hyper.init_scale, hyper.seed)?;
    let mut stable = net.clone();
    let mut decay = StagnationDecay::new(hyper.learning_rate, hyper.decay_window);
    let mut batch_rng = substream(hyper.seed, "batch", 0);
    let mut trace = Vec::new();
    for it in 0..hyper.iterations {
        let batch: Vec<TrainingPair> = sample_indices(&mut batch_rng, train.len(), hyper.batch_size.min(train.len()))
            .into_iter()
            .map(|i| train[i])
            .collect();
        let lr = decay.lr();
        let loss = match net.backprop_batch(&batch, lr) {
            Ok(l) if net.is_finite() => l,
            Ok(l) => return diverged(&stable, fallback, it, format!("non-finite weights after loss {l}")),
            Err(e) => return diverged(&stable, fallback, it, e.to_string()),
        };
        decay.observe(loss);
        if it % 100 == 0 {
            stable = net.clone();
            trace.push((it, loss, lr));
        }
    }
    let train_rms = net.mse(&train).sqrt();
    let holdout_rms = if holdout.is_empty() {
        train_rms
    } else {
        net.mse(&holdout).sqrt()
    };
    Ok(SupervisedReport {
        net,
        holdout_rms,
        train_rms,
        trace,
    })
}

fn diverged<T>(stable: &ValueNetwork, fallback: Option<&Path>, iteration: usize, reason: String) -> Result<T> {
    if let Some(path) = fallback {
        stable.save(path)?;
        log::error!("training diverged at iteration {iteration}; last stable weights in {}", path.display());
    }
    Err(Error::Diverged { iteration, reason })
}

// ---------------------------------------------------------------------------
// Value targets from rollouts

/// Training pairs for both agents of a two-agent episode. Targets come from
/// `target_net` (bootstrapped mode) or the recorded outcome (Monte-Carlo),
/// then the cooperation penalty is applied and targets are clamped.
pub fn find_values(target_net: &ValueNetwork, ep: &Episode, cfg: &TrainConfig) -> Result<Vec<TrainingPair>> {
    let trs = &ep.trajectories;
    if trs.len() != 2 {
        return Err(Error::invalid(format!("expected two trajectories, got {}", trs.len())));
    }
    let end = cfg.sim.timeout - 0.5 * ep.dt;
    for tr in trs {
        if tr.outcome == Outcome::Timeout && tr.times.last().copied().unwrap_or(0.0) < end {
            return Err(Error::Unterminated(tr.agent_id));
        }
    }
    let te: Vec<f64> = trs
        .iter()
        .map(|t| t.extra_time().unwrap_or(f64::INFINITY))
        .collect();
    let mut out = Vec::new();
    for (a, b) in [(0, 1), (1, 0)] {
        let mut pairs = agent_targets(target_net, &trs[a], &trs[b], ep.dt, cfg);
        let penalty = if cooperation_penalty_applies(te[a], te[b], cfg.coop_lower, cfg.coop_upper) {
            cfg.coop_penalty
        } else {
            0.0
        };
        for p in &mut pairs {
            p.target = (p.target - penalty).clamp(TARGET_RANGE.0, TARGET_RANGE.1);
        }
        out.extend(pairs);
    }
    Ok(out)
}

/// The fast agent is penalized when it finished well ahead of a slow
/// partner.
pub fn cooperation_penalty_applies(te_self: f64, te_other: f64, lower: f64, upper: f64) -> bool {
    te_self < lower && te_other > upper
}

/// Active span of a trajectory and its terminal reward: (end time, reward).
fn terminal(tr: &TrajectoryRecord) -> (f64, f64) {
    match tr.outcome {
        Outcome::ReachedGoal { time } => (time, GOAL_REWARD),
        Outcome::Collision { time } => (time, COLLISION_REWARD),
        Outcome::Timeout => (f64::INFINITY, 0.0),
    }
}

fn agent_targets(
    target_net: &ValueNetwork,
    me: &TrajectoryRecord,
    other: &TrajectoryRecord,
    dt: f64,
    cfg: &TrainConfig,
) -> Vec<TrainingPair> {
    let stride = cfg.steps(cfg.sample_interval);
    let h = cfg.steps(cfg.horizon);
    let v = me.initial().pref_speed();
    let (t_end, final_reward) = terminal(me);
    let last = me.states.len() - 1;
    let at = |tr: &TrajectoryRecord, k: usize| tr.states[k.min(tr.states.len() - 1)];

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut next_inputs = Vec::new();
    let mut next_slots = Vec::new();
    let mut k = 0;
    while k < last && me.times[k] < t_end {
        let t = me.times[k];
        inputs.push(joint_input(me, other, k));
        let target = match cfg.target_mode {
            TargetMode::MonteCarlo => {
                if t_end.is_finite() {
                    final_reward * discount_exponent(cfg.gamma, t_end - t, v)
                } else {
                    0.0
                }
            }
            TargetMode::Bootstrapped => {
                let e = (k + h).min(last);
                if t_end <= me.times[e] + 1e-9 * dt {
                    // The episode ends for this agent inside the window.
                    if final_reward == GOAL_REWARD {
                        let mut d_min = f64::INFINITY;
                        for j in k..e {
                            if me.times[j] >= t_end {
                                break;
                            }
                            d_min = d_min.min(step_separation(&at(me, j), &at(me, j + 1), &at(other, j), &at(other, j + 1), dt));
                        }
                        let r = reward_from(d_min, true);
                        if r.kind == RewardKind::Goal {
                            r.value
                        } else {
                            next_slots.push(targets.len());
                            next_inputs.push(joint_input(me, other, e));
                            r.value
                        }
                    } else {
                        final_reward
                    }
                } else {
                    let mut d_min = f64::INFINITY;
                    for j in k..e {
                        d_min = d_min.min(step_separation(&at(me, j), &at(me, j + 1), &at(other, j), &at(other, j + 1), dt));
                    }
                    let r = reward_from(d_min, false);
                    if e == last && me.outcome == Outcome::Timeout {
                        // Timeouts contribute their reward to date only.
                        r.value
                    } else {
                        next_slots.push(targets.len());
                        next_inputs.push(joint_input(me, other, e));
                        r.value
                    }
                }
            }
        };
        targets.push(target);
        k += stride;
    }
    if !next_inputs.is_empty() {
        let disc = discount_exponent(cfg.gamma, h as f64 * dt, v);
        let values = target_net.forward_rows(&next_inputs);
        for (slot, value) in next_slots.into_iter().zip(values.iter()) {
            targets[slot] += disc * value;
        }
    }
    inputs
        .into_iter()
        .zip(targets)
        .map(|(input, target)| TrainingPair { input, target })
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation and the RL loop

/// Fixed evaluation suite: the head-on swap plus right-angle and oblique
/// crossings.
pub fn default_eval_cases() -> Vec<TestCase> {
    vec![swap_testcase(), crossing_testcase(90.0), crossing_testcase(135.0)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episode: usize,
    /// Value of agent 0's initial joint state in each evaluation case.
    pub values: Vec<f64>,
    /// Mean extra time over completed cases.
    pub avg_extra_time: Option<f64>,
    pub min_separations: Vec<f64>,
    pub collisions: usize,
    pub timeouts: usize,
}

/// Values of the initial states plus greedy rollouts of every case. Pure in
/// its inputs.
pub fn evaluate(net: &ValueNetwork, cases: &[TestCase], sim: &SimConfig, episode: usize) -> Result<EvalReport> {
    let mut values = Vec::with_capacity(cases.len());
    let mut sum = 0.0;
    let mut done = 0;
    let mut min_separations = Vec::new();
    let (mut collisions, mut timeouts) = (0, 0);
    let cfg = SimConfig { epsilon: 0.0, ..sim.clone() };
    for (i, case) in cases.iter().enumerate() {
        if case.len() >= 2 {
            let s0 = case.agents[0].initial_state();
            let o0 = case.agents[1].initial_state().observable;
            let v = net.forward(&rotate_to_agent_frame(&JointState { self_state: s0, other: o0 }));
            if !v.is_finite() {
                return Err(Error::NonFinite("evaluation value"));
            }
            values.push(v);
        }
        let ep = simulate(case, &case.policies(PolicyKind::Cadrl), Some(net), &cfg, i as u64)?;
        let m = CaseMetrics::from_episode(&ep);
        collisions += m.collision as usize;
        timeouts += m.timeout as usize;
        min_separations.push(m.min_separation);
        if let Some(te) = m.extra_time {
            sum += te;
            done += 1;
        }
    }
    Ok(EvalReport {
        episode,
        values,
        avg_extra_time: (done > 0).then(|| sum / done as f64),
        min_separations,
        collisions,
        timeouts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    pub loss: f64,
    pub learning_rate: f64,
    pub new_pairs: usize,
    pub mean_extra_time: Option<f64>,
    pub collisions: usize,
}

#[derive(Clone, Debug)]
pub struct RlOutcome {
    pub net: ValueNetwork,
    pub trace: Vec<EvalReport>,
    pub log: Vec<EpisodeLog>,
}

/// Refines `init` by deep V-learning. The experience set starts from
/// `seed_pairs` (the supervised data). Episodes `start_episode..cfg.episodes`
/// are run, so a resumed run continues the same random streams. `on_sync` is
/// called with each evaluation and the current network.
pub fn rl_train<F>(
    cfg: &TrainConfig,
    init: &ValueNetwork,
    seed_pairs: &[TrainingPair],
    eval_cases: &[TestCase],
    start_episode: usize,
    mut on_sync: F,
) -> Result<RlOutcome>
where
    F: FnMut(&EvalReport, &ValueNetwork) -> Result<()>,
{
    cfg.validate()?;
    let mut net = init.clone();
    let mut target = init.clone();
    let mut experience = ExperienceSet::new(cfg.capacity);
    experience.assimilate(seed_pairs.iter().copied());
    let mut trace = Vec::new();
    let mut log = Vec::new();
    let mut schedule = StagnationDecay::new(cfg.learning_rate, cfg.decay_window).with_floor(cfg.min_learning_rate);
    if start_episode >= cfg.episodes {
        return Ok(RlOutcome { net, trace, log });
    }

    for episode in start_episode..cfg.episodes {
        let epsilon = cfg.epsilon_at(episode);
        let sim = SimConfig {
            epsilon,
            ..cfg.sim.clone()
        };
        let rollouts: Vec<Result<Episode>> = (0..cfg.cases_per_episode)
            .into_par_iter()
            .map(|c| {
                let id = (episode * cfg.cases_per_episode + c) as u64;
                let mut rng = substream(cfg.seed, "train-case", id);
                let case = random_testcase(cfg.n_agents, cfg.domain_side, &mut rng)?;
                simulate(&case, &[PolicyKind::Cadrl; 2], Some(&net), &sim, id)
            })
            .collect();
        let mut new_pairs = 0;
        let mut te_sum = 0.0;
        let mut te_n = 0;
        let mut collisions = 0;
        for ep in rollouts {
            let ep = ep?;
            let pairs = find_values(&target, &ep, cfg)?;
            new_pairs += pairs.len();
            experience.assimilate(pairs);
            collisions += ep.collisions;
            if let Ok(te) = extra_time_metric(&ep.trajectories) {
                te_sum += te;
                te_n += 1;
            }
        }

        let mut loss = f64::NAN;
        let mut rng = substream(cfg.seed, "train-batch", episode as u64);
        for _ in 0..cfg.updates_per_episode {
            let batch = experience.sample(cfg.batch_size, &mut rng);
            loss = net.backprop_batch(&batch, schedule.lr()).map_err(|e| match e {
                Error::Diverged { reason, .. } => Error::Diverged {
                    iteration: episode,
                    reason,
                },
                other => other,
            })?;
            if !net.is_finite() {
                return Err(Error::Diverged {
                    iteration: episode,
                    reason: "non-finite weights".into(),
                });
            }
            schedule.observe(loss);
        }
        log.push(EpisodeLog {
            episode,
            epsilon,
            loss,
            learning_rate: schedule.lr(),
            new_pairs,
            mean_extra_time: (te_n > 0).then(|| te_sum / te_n as f64),
            collisions,
        });

        if (episode + 1) % cfg.sync_period == 0 {
            target = net.clone();
            let report = evaluate(&net, eval_cases, &cfg.sim, episode + 1)?;
            log::info!(
                "episode {}: values {:?} extra time {:?} loss {:.5}",
                episode + 1,
                report.values,
                report.avg_extra_time,
                loss
            );
            on_sync(&report, &net)?;
            trace.push(report);
        }
    }
    Ok(RlOutcome { net, trace, log })
}
