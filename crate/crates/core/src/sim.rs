//! Synchronous fixed-step episode simulator for mixed policies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{min_separation, segment_approach, Vec2};
use crate::net::ValueNetwork;
use crate::orca::{orca_velocity_weighted, OrcaParams};
use crate::policy::{epsilon_greedy, KinematicConstraints, Neighbor, PolicyConfig, VelocitySample};
use crate::rng::substream_seed;
use crate::scenario::TestCase;
use crate::state::{propagate, propagate_constrained, Action, AgentState, ObservableState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Cadrl,
    CadrlConstrained,
    Orca,
    /// Drives straight at its goal, ignoring everyone.
    ConstantVelocity,
    Stationary,
}

impl PolicyKind {
    pub fn uses_network(self) -> bool {
        matches!(self, PolicyKind::Cadrl | PolicyKind::CadrlConstrained)
    }

    /// Whether the agent adapts to others (shares avoidance responsibility).
    pub fn reacts(self) -> bool {
        matches!(self, PolicyKind::Cadrl | PolicyKind::CadrlConstrained | PolicyKind::Orca)
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Cadrl => "cadrl",
            PolicyKind::CadrlConstrained => "cadrl-constrained",
            PolicyKind::Orca => "orca",
            PolicyKind::ConstantVelocity => "constant-velocity",
            PolicyKind::Stationary => "stationary",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    ReachedGoal { time: f64 },
    Collision { time: f64 },
    Timeout,
}

impl Outcome {
    pub fn goal_time(&self) -> Option<f64> {
        match self {
            Outcome::ReachedGoal { time } => Some(*time),
            _ => None,
        }
    }
}

/// One agent's rollout. `states[k]` is the state at `times[k]`; `actions[k]`
/// was executed from `times[k]` to `times[k + 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub agent_id: usize,
    pub policy: PolicyKind,
    pub times: Vec<f64>,
    pub states: Vec<AgentState>,
    pub actions: Vec<Action>,
    pub outcome: Outcome,
}

impl TrajectoryRecord {
    pub fn initial(&self) -> &AgentState {
        &self.states[0]
    }

    /// Index of the last snapshot at which the agent was still moving under
    /// its own control.
    pub fn active_steps(&self, dt: f64) -> usize {
        let end = match self.outcome {
            Outcome::ReachedGoal { time } | Outcome::Collision { time } => time,
            Outcome::Timeout => f64::INFINITY,
        };
        self.times.iter().take_while(|&&t| t < end - 1e-9 * dt).count()
    }

    /// Extra time over the straight-line lower bound, if the goal was reached.
    pub fn extra_time(&self) -> Option<f64> {
        let s0 = self.initial();
        self.outcome
            .goal_time()
            .map(|t| t - s0.dist_to_goal() / s0.pref_speed())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub timeout: f64,
    pub policy: PolicyConfig,
    pub orca: OrcaParams,
    /// Exploration rate for value-network agents.
    pub epsilon: f64,
    /// End the episode at the first collision instead of freezing the pair.
    pub stop_on_collision: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            timeout: 60.0,
            policy: PolicyConfig::default(),
            orca: OrcaParams::default(),
            epsilon: 0.0,
            stop_on_collision: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub dt: f64,
    pub trajectories: Vec<TrajectoryRecord>,
    /// Smallest surface separation over all pairs and the whole episode.
    pub min_separation: f64,
    pub collisions: usize,
    /// Constraint violations by agents running in constrained mode.
    pub constraint_violations: Vec<String>,
    /// Number of value-network decisions taken.
    pub network_decisions: usize,
}

impl Episode {
    pub fn all_reached(&self) -> bool {
        self.trajectories
            .iter()
            .all(|t| matches!(t.outcome, Outcome::ReachedGoal { .. }))
    }

    pub fn any_timeout(&self) -> bool {
        self.trajectories.iter().any(|t| t.outcome == Outcome::Timeout)
    }
}

struct Live {
    state: AgentState,
    done: Option<Outcome>,
    history: Vec<VelocitySample>,
    rng: ChaCha8Rng,
}

/// Rolls out `case` with one policy per agent. Agents that reach their goal
/// stop there and remain as stationary obstacles; colliding agents freeze.
pub fn simulate(
    case: &TestCase,
    policies: &[PolicyKind],
    net: Option<&ValueNetwork>,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Episode> {
    let n = case.agents.len();
    if policies.len() != n {
        return Err(Error::invalid(format!(
            "{} policies for {} agents",
            policies.len(),
            n
        )));
    }
    if !(cfg.dt > 0.0) || !(cfg.timeout > 0.0) {
        return Err(Error::invalid("time step and timeout must be positive"));
    }
    if policies.iter().any(|p| p.uses_network()) && net.is_none() {
        return Err(Error::invalid("value-network policy requested without a network"));
    }
    cfg.policy.validate()?;

    let dt = cfg.dt;
    let window_samples = ((cfg.policy.filter_window / dt).ceil() as usize).max(1) + 1;
    let constraints = KinematicConstraints::default();
    let mut live: Vec<Live> = case
        .agents
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let state = spec.initial_state();
            Live {
                state,
                done: None,
                history: vec![VelocitySample {
                    dt,
                    velocity: state.velocity(),
                }],
                rng: ChaCha8Rng::seed_from_u64(substream_seed(seed, "agent", i as u64)),
            }
        })
        .collect();
    let mut records: Vec<TrajectoryRecord> = live
        .iter()
        .enumerate()
        .map(|(i, l)| TrajectoryRecord {
            agent_id: i,
            policy: policies[i],
            times: vec![0.0],
            states: vec![l.state],
            actions: Vec::new(),
            outcome: Outcome::Timeout,
        })
        .collect();

    for (i, l) in live.iter_mut().enumerate() {
        if policies[i] == PolicyKind::Stationary || l.state.dist_to_goal() < cfg.policy.goal_tol {
            l.done = Some(Outcome::ReachedGoal { time: 0.0 });
        }
    }

    let mut min_sep = f64::INFINITY;
    if n < 2 {
        min_sep = f64::INFINITY;
    }
    let mut collisions = 0;
    let mut violations = Vec::new();
    let mut decisions = 0;
    let steps = (cfg.timeout / dt).round() as usize;

    for k in 0..steps {
        if live.iter().all(|l| l.done.is_some()) {
            break;
        }
        let t = k as f64 * dt;

        // Decide synchronously from the states at time t.
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let action = if live[i].done.is_some() {
                Action::zero(live[i].state.heading())
            } else {
                decide(i, &mut live, policies, net, cfg, &mut decisions)?
            };
            actions.push(action);
        }

        // Move.
        let before: Vec<AgentState> = live.iter().map(|l| l.state).collect();
        for i in 0..n {
            if live[i].done.is_some() {
                let mut s = live[i].state;
                s.observable.velocity = Vec2::ZERO;
                live[i].state = s;
                continue;
            }
            let a = actions[i];
            let next = if policies[i] == PolicyKind::CadrlConstrained {
                let next = propagate_constrained(&before[i], &a, dt)?;
                if let Some(v) = constraints.check(&before[i], &a, &next, dt) {
                    violations.push(format!("agent {i} at t={t:.1}: {v}"));
                }
                next
            } else {
                propagate(&before[i], &a, dt)?
            };
            let travel = (next.position() - before[i].position()) / dt;
            let (goal_dist, tau) = segment_approach(before[i].position(), travel, dt, before[i].goal());
            if goal_dist < cfg.policy.goal_tol {
                let mut s = next;
                s.observable.position = before[i].position() + travel * tau;
                live[i].state = s;
                live[i].done = Some(Outcome::ReachedGoal { time: t + tau });
            } else {
                live[i].state = next;
            }
        }

        // Separation over the step, from the recorded endpoints.
        let end_t = (k + 1) as f64 * dt;
        let mut hit = vec![false; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = step_separation(&before[i], &live[i].state, &before[j], &live[j].state, dt);
                if d < min_sep {
                    min_sep = d;
                }
                if d < 0.0 {
                    hit[i] = true;
                    hit[j] = true;
                }
            }
        }
        let mut any_hit = false;
        for i in 0..n {
            if hit[i] && live[i].done.is_none() {
                live[i].done = Some(Outcome::Collision { time: end_t });
                collisions += 1;
                any_hit = true;
            }
        }

        for i in 0..n {
            let l = &mut live[i];
            let moved = (l.state.position() - before[i].position()) / dt;
            if l.done.is_some() {
                l.state.observable.velocity = Vec2::ZERO;
            }
            l.history.push(VelocitySample { dt, velocity: moved });
            if l.history.len() > window_samples {
                let excess = l.history.len() - window_samples;
                l.history.drain(..excess);
            }
            records[i].times.push(end_t);
            records[i].states.push(l.state);
            records[i].actions.push(actions[i]);
        }

        if any_hit && cfg.stop_on_collision {
            break;
        }
    }

    for (i, l) in live.iter().enumerate() {
        records[i].outcome = l.done.unwrap_or(Outcome::Timeout);
    }
    Ok(Episode {
        dt,
        trajectories: records,
        min_separation: min_sep,
        collisions,
        constraint_violations: violations,
        network_decisions: decisions,
    })
}

fn decide(
    i: usize,
    live: &mut [Live],
    policies: &[PolicyKind],
    net: Option<&ValueNetwork>,
    cfg: &SimConfig,
    decisions: &mut usize,
) -> Result<Action> {
    let me = live[i].state;
    match policies[i] {
        PolicyKind::Stationary => Ok(Action::zero(me.heading())),
        PolicyKind::ConstantVelocity => Ok(Action::new(me.pref_speed(), me.goal_direction())),
        PolicyKind::Orca => {
            let neighbors: Vec<(ObservableState, f64)> = live
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, l)| {
                    let share = if l.done.is_none() && policies[j].reacts() { 0.5 } else { 1.0 };
                    (l.state.observable, share)
                })
                .collect();
            let sol = orca_velocity_weighted(&me, &neighbors, &cfg.orca);
            let mut a = Action::from_velocity(sol.velocity);
            if a.speed == 0.0 {
                a.direction = me.heading();
            }
            Ok(a)
        }
        kind @ (PolicyKind::Cadrl | PolicyKind::CadrlConstrained) => {
            let net = net.expect("checked above");
            let mut pcfg = cfg.policy.clone();
            pcfg.constrained = kind == PolicyKind::CadrlConstrained;
            let (left, rest) = live.split_at_mut(i);
            let (mine, right) = rest.split_first_mut().expect("index in range");
            let neighbors: Vec<Neighbor<'_>> = left
                .iter()
                .chain(right.iter())
                .map(|l| Neighbor {
                    state: l.state.observable,
                    history: &l.history,
                })
                .collect();
            *decisions += 1;
            let d = epsilon_greedy(&me, &neighbors, net, &pcfg, cfg.epsilon, &mut mine.rng)?;
            Ok(d.action)
        }
    }
}

/// Minimum separation over one step, moving each agent linearly between its
/// recorded endpoints.
pub fn step_separation(a0: &AgentState, a1: &AgentState, b0: &AgentState, b1: &AgentState, dt: f64) -> f64 {
    let va = (a1.position() - a0.position()) / dt;
    let vb = (b1.position() - b0.position()) / dt;
    min_separation(a0.position(), va, b0.position(), vb, a0.radius(), b0.radius(), dt)
}
