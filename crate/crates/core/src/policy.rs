//! The value-network policy: filter each neighbor's recent velocity, project
//! everyone one look-ahead step, and pick the candidate action whose worst
//! neighbor outcome scores highest.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::net::ValueNetwork;
use crate::reward::{discount_exponent, reward_detail, DEFAULT_GAMMA, DEFAULT_GOAL_TOL};
use crate::state::{
    propagate, propagate_constrained, propagate_observable, rotate_to_agent_frame, Action,
    AgentCentricState, AgentState, JointState, ObservableState, MAX_DIRECTION_DEVIATION,
    STRICT_MARGIN,
};

/// Size of the fixed candidate list built by [`build_action_set`].
pub const PRECOMPUTED_ACTIONS: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Look-ahead horizon (s).
    pub lookahead: f64,
    /// Neighbor velocity averaging window (s).
    pub filter_window: f64,
    pub precomputed_actions: usize,
    pub random_actions: usize,
    pub seed: u64,
    /// Apply the heading-relative direction limit and turning-rate limit.
    pub constrained: bool,
    pub gamma: f64,
    pub goal_tol: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            lookahead: 1.0,
            filter_window: 0.5,
            precomputed_actions: PRECOMPUTED_ACTIONS,
            random_actions: 10,
            seed: 0,
            constrained: false,
            gamma: DEFAULT_GAMMA,
            goal_tol: DEFAULT_GOAL_TOL,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead > 0.0) {
            return Err(Error::invalid(format!("lookahead must be positive, got {}", self.lookahead)));
        }
        if !(self.filter_window > 0.0) {
            return Err(Error::invalid(format!(
                "filter window must be positive, got {}",
                self.filter_window
            )));
        }
        if self.precomputed_actions > PRECOMPUTED_ACTIONS {
            return Err(Error::invalid(format!(
                "at most {PRECOMPUTED_ACTIONS} precomputed actions, got {}",
                self.precomputed_actions
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.goal_tol > 0.0) {
            return Err(Error::invalid(format!("goal tolerance must be positive, got {}", self.goal_tol)));
        }
        Ok(())
    }

    /// `gamma^(lookahead * v_pref)`.
    pub fn step_discount(&self, pref_speed: f64) -> f64 {
        discount_exponent(self.gamma, self.lookahead, pref_speed)
    }
}

/// Rotational limits on executed actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicConstraints {
    /// Bound on `|direction - heading|` (rad).
    pub max_deviation: f64,
}

impl Default for KinematicConstraints {
    fn default() -> Self {
        Self {
            max_deviation: MAX_DIRECTION_DEVIATION,
        }
    }
}

impl KinematicConstraints {
    /// Checks one executed step: the action direction stays within the
    /// deviation bound of the heading before the step, the speed stays below
    /// the preferred speed, and the heading changed by less than
    /// `dt * v_pref`. Returns a description of the first violation.
    pub fn check(&self, before: &AgentState, action: &Action, after: &AgentState, dt: f64) -> Option<String> {
        let dev = wrap_angle(action.direction - before.heading()).abs();
        if !(dev < self.max_deviation) {
            return Some(format!("direction deviates {dev:.6} rad from heading"));
        }
        if !(action.speed < before.pref_speed()) {
            return Some(format!(
                "speed {} not below preferred {}",
                action.speed,
                before.pref_speed()
            ));
        }
        let turn = wrap_angle(after.heading() - before.heading()).abs();
        if !(turn < dt * before.pref_speed()) {
            return Some(format!("heading turned {turn:.6} rad in {dt} s"));
        }
        None
    }
}

/// A velocity held for `dt` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub dt: f64,
    pub velocity: Vec2,
}

/// Time-weighted mean of the samples inside the trailing `window` seconds
/// (`history` is oldest first). Uses the whole history when it is shorter.
pub fn filtered_velocity(history: &[VelocitySample], window: f64) -> Result<Vec2> {
    let last = history.last().ok_or_else(|| Error::invalid("empty velocity history"))?;
    let mut remaining = window;
    let mut acc = Vec2::ZERO;
    let mut weight = 0.0;
    for s in history.iter().rev() {
        if remaining <= 0.0 {
            break;
        }
        let w = s.dt.max(0.0).min(remaining);
        acc += s.velocity * w;
        weight += w;
        remaining -= w;
    }
    if weight > 0.0 {
        Ok(acc / weight)
    } else {
        Ok(last.velocity)
    }
}

/// A neighbor as seen by the deciding agent.
#[derive(Clone, Copy, Debug)]
pub struct Neighbor<'a> {
    pub state: ObservableState,
    pub history: &'a [VelocitySample],
}

impl Neighbor<'_> {
    fn filtered(&self, window: f64) -> Vec2 {
        filtered_velocity(self.history, window).unwrap_or(self.state.velocity)
    }
}

/// Candidate actions. The fixed part comes first (best-priority first, the
/// full-speed move toward the goal leading), followed by random draws.
pub fn build_action_set<R: Rng + ?Sized>(state: &AgentState, cfg: &PolicyConfig, rng: &mut R) -> Vec<Action> {
    let mut actions = if cfg.constrained {
        constrained_grid(state)
    } else {
        free_grid(state)
    };
    actions.truncate(cfg.precomputed_actions);
    let v = state.pref_speed();
    for _ in 0..cfg.random_actions {
        let speed = v * rng.gen::<f64>().sqrt();
        if cfg.constrained {
            let dev = MAX_DIRECTION_DEVIATION * (1.0 - STRICT_MARGIN);
            let dir = state.heading() + rng.gen_range(-dev..=dev);
            actions.push(Action::new(speed * (1.0 - STRICT_MARGIN), dir));
        } else {
            let dir = rng.gen_range(-PI..PI);
            actions.push(Action::new(speed, dir));
        }
    }
    actions
}

const SPEED_FRACTIONS: [f64; 4] = [1.0, 0.75, 0.5, 0.25];

// Goal-anchored fan of speeds x directions, the stop action, and moves
// along the current heading.
fn free_grid(state: &AgentState) -> Vec<Action> {
    let v = state.pref_speed();
    let goal_dir = state.goal_direction();
    let offsets = [-PI / 6.0, PI / 6.0, -PI / 3.0, PI / 3.0];
    let mut out = Vec::with_capacity(PRECOMPUTED_ACTIONS);
    for f in SPEED_FRACTIONS {
        out.push(Action::new(v * f, goal_dir));
    }
    for f in SPEED_FRACTIONS {
        for off in offsets {
            out.push(Action::new(v * f, goal_dir + off));
        }
    }
    out.push(Action::zero(state.heading()));
    for f in SPEED_FRACTIONS {
        out.push(Action::new(v * f, state.heading()));
    }
    out
}

// Directions within the cone about the heading, spin-in-place turns, and
// the full-speed move as close to the goal as the cone allows.
fn constrained_grid(state: &AgentState) -> Vec<Action> {
    let v = state.pref_speed() * (1.0 - STRICT_MARGIN);
    let theta = state.heading();
    let dev = MAX_DIRECTION_DEVIATION * (1.0 - STRICT_MARGIN);
    let toward_goal = theta + wrap_angle(state.goal_direction() - theta).clamp(-dev, dev);
    let offsets = [0.0, -0.5 * dev, 0.5 * dev, -dev, dev];
    let mut out = Vec::with_capacity(PRECOMPUTED_ACTIONS);
    out.push(Action::new(v, toward_goal));
    for f in SPEED_FRACTIONS {
        for off in offsets {
            out.push(Action::new(v * f, theta + off));
        }
    }
    out.push(Action::zero(toward_goal));
    out.push(Action::zero(theta - dev));
    out.push(Action::zero(theta + dev));
    out.push(Action::zero(theta));
    out
}

/// The selected action with its score broken into reward and discounted
/// value for the neighbor that attained the minimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub index: usize,
    pub score: f64,
    pub reward: f64,
    pub discounted_value: f64,
    /// Neighbor index attaining the minimum, if any neighbor was present.
    pub critical_neighbor: Option<usize>,
}

/// Projects `state` one step under `action` with the configured kinematics.
pub fn project(state: &AgentState, action: &Action, cfg: &PolicyConfig) -> Result<AgentState> {
    if cfg.constrained {
        propagate_constrained(state, action, cfg.lookahead)
    } else {
        propagate(state, action, cfg.lookahead)
    }
}

/// Greedy one-step look-ahead with freshly sampled candidates.
pub fn cadrl_action<R: Rng + ?Sized>(
    state: &AgentState,
    neighbors: &[Neighbor<'_>],
    net: &ValueNetwork,
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Result<Decision> {
    let actions = build_action_set(state, cfg, rng);
    select_action(state, neighbors, net, cfg, &actions)
}

/// Greedy one-step look-ahead over a given candidate list. Ties go to the
/// earliest candidate.
pub fn select_action(
    state: &AgentState,
    neighbors: &[Neighbor<'_>],
    net: &ValueNetwork,
    cfg: &PolicyConfig,
    actions: &[Action],
) -> Result<Decision> {
    if actions.is_empty() {
        return Err(Error::invalid("empty action set"));
    }
    if neighbors.is_empty() {
        return Ok(unobstructed(state, cfg, actions));
    }
    let scores = score_actions(state, neighbors, net, cfg, actions)?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.0 > scores[best].0 {
            best = i;
        }
    }
    let (score, reward, value, who) = scores[best];
    Ok(Decision {
        action: actions[best],
        index: best,
        score,
        reward,
        discounted_value: value,
        critical_neighbor: Some(who),
    })
}

// With nobody around, head for the goal (or the closest permitted
// approximation of it in constrained mode).
fn unobstructed(state: &AgentState, cfg: &PolicyConfig, actions: &[Action]) -> Decision {
    let pref = state.preferred_velocity();
    let (index, action) = if cfg.constrained {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, a) in actions.iter().enumerate() {
            let d = a.velocity().dot(pref);
            if d > best_dot {
                best = i;
                best_dot = d;
            }
        }
        (best, actions[best])
    } else {
        (0, Action::new(state.pref_speed(), state.goal_direction()))
    };
    Decision {
        action,
        index,
        score: f64::NAN,
        reward: 0.0,
        discounted_value: f64::NAN,
        critical_neighbor: None,
    }
}

/// Per action: (score, reward term, discounted value term, critical neighbor).
/// A step that collides, or reaches the goal without a separation penalty, is
/// terminal and contributes no value term.
pub fn score_actions(
    state: &AgentState,
    neighbors: &[Neighbor<'_>],
    net: &ValueNetwork,
    cfg: &PolicyConfig,
    actions: &[Action],
) -> Result<Vec<(f64, f64, f64, usize)>> {
    let discount = cfg.step_discount(state.pref_speed());
    // Neighbors are assumed to hold their filtered velocity over the step.
    let current: Vec<ObservableState> = neighbors
        .iter()
        .map(|n| ObservableState {
            velocity: n.filtered(cfg.filter_window),
            ..n.state
        })
        .collect();
    let projected: Vec<ObservableState> = current
        .iter()
        .map(|o| propagate_observable(o, o.velocity, cfg.lookahead))
        .collect();

    let n = neighbors.len();
    let mut rewards = vec![0.0; actions.len() * n];
    let mut terminal = vec![false; actions.len() * n];
    let mut inputs: Vec<AgentCentricState> = Vec::with_capacity(actions.len() * n);
    let mut slots: Vec<usize> = Vec::with_capacity(actions.len() * n);
    for (ai, a) in actions.iter().enumerate() {
        let next = project(state, a, cfg)?;
        for ni in 0..n {
            let joint = JointState {
                self_state: *state,
                other: current[ni],
            };
            let r = reward_detail(&joint, a, cfg.lookahead, cfg.goal_tol);
            let k = ai * n + ni;
            rewards[k] = r.value;
            if r.is_terminal() {
                terminal[k] = true;
            } else {
                inputs.push(rotate_to_agent_frame(&JointState {
                    self_state: next,
                    other: projected[ni],
                }));
                slots.push(k);
            }
        }
    }

    let mut values = vec![0.0; actions.len() * n];
    if !inputs.is_empty() {
        let out = net.forward_rows(&inputs);
        for (slot, v) in slots.iter().zip(out.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite("value network output"));
            }
            values[*slot] = discount * v;
        }
    }

    let mut scores = Vec::with_capacity(actions.len());
    for ai in 0..actions.len() {
        let mut best = (f64::INFINITY, 0.0, 0.0, 0);
        for ni in 0..n {
            let k = ai * n + ni;
            let v = if terminal[k] { 0.0 } else { values[k] };
            let s = rewards[k] + v;
            if s < best.0 {
                best = (s, rewards[k], v, ni);
            }
        }
        scores.push(best);
    }
    Ok(scores)
}

/// With probability `epsilon` a uniformly random candidate, otherwise the
/// greedy choice. With `epsilon == 0` no extra random draw is made.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    state: &AgentState,
    neighbors: &[Neighbor<'_>],
    net: &ValueNetwork,
    cfg: &PolicyConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<Decision> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    let actions = build_action_set(state, cfg, rng);
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let index = rng.gen_range(0..actions.len());
        return Ok(Decision {
            action: actions[index],
            index,
            score: f64::NAN,
            reward: f64::NAN,
            discounted_value: f64::NAN,
            critical_neighbor: None,
        });
    }
    select_action(state, neighbors, net, cfg, &actions)
}
