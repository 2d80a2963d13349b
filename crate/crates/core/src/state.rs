//! Agent state, actions, kinematics and the agent-centric network input.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};

/// Largest travel-direction deviation from the current heading allowed under
/// rotational constraints (rad).
pub const MAX_DIRECTION_DEVIATION: f64 = PI / 6.0;

// Actions generated at a constraint boundary are pulled inside by this
// relative amount so the strict inequalities hold after rounding.
pub(crate) const STRICT_MARGIN: f64 = 1e-6;

/// The part of an agent's state every other agent can measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

/// The part of an agent's state known only to itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    pub goal: Vec2,
    pub pref_speed: f64,
    /// Heading in (-pi, pi].
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub observable: ObservableState,
    pub hidden: HiddenState,
}

impl AgentState {
    pub fn new(
        position: Vec2,
        velocity: Vec2,
        radius: f64,
        goal: Vec2,
        pref_speed: f64,
        heading: f64,
    ) -> Self {
        Self {
            observable: ObservableState {
                position,
                velocity,
                radius,
            },
            hidden: HiddenState {
                goal,
                pref_speed,
                heading: wrap_angle(heading),
            },
        }
    }

    #[inline]
    pub fn position(&self) -> Vec2 {
        self.observable.position
    }

    #[inline]
    pub fn velocity(&self) -> Vec2 {
        self.observable.velocity
    }

    #[inline]
    pub fn radius(&self) -> f64 {
        self.observable.radius
    }

    #[inline]
    pub fn goal(&self) -> Vec2 {
        self.hidden.goal
    }

    #[inline]
    pub fn pref_speed(&self) -> f64 {
        self.hidden.pref_speed
    }

    #[inline]
    pub fn heading(&self) -> f64 {
        self.hidden.heading
    }

    pub fn dist_to_goal(&self) -> f64 {
        self.goal().distance(self.position())
    }

    /// Direction to the goal, or the current heading when already on it.
    pub fn goal_direction(&self) -> f64 {
        let d = self.goal() - self.position();
        if d.norm_sq() > 0.0 {
            d.angle()
        } else {
            self.heading()
        }
    }

    /// Velocity straight at the goal at preferred speed.
    pub fn preferred_velocity(&self) -> Vec2 {
        (self.goal() - self.position()).normalized() * self.pref_speed()
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.observable;
        let h = &self.hidden;
        let finite = o.position.is_finite()
            && o.velocity.is_finite()
            && o.radius.is_finite()
            && h.goal.is_finite()
            && h.pref_speed.is_finite()
            && h.heading.is_finite();
        if !finite {
            return Err(Error::NonFinite("agent state"));
        }
        if o.radius <= 0.0 {
            return Err(Error::invalid(format!("radius must be positive, got {}", o.radius)));
        }
        if h.pref_speed <= 0.0 {
            return Err(Error::invalid(format!(
                "preferred speed must be positive, got {}",
                h.pref_speed
            )));
        }
        Ok(())
    }
}

/// An agent's full state paired with one neighbor's observable state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointState {
    pub self_state: AgentState,
    pub other: ObservableState,
}

/// A commanded velocity, stored as speed and travel direction so that a
/// zero-speed action can still carry a turn (spin in place).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub speed: f64,
    pub direction: f64,
}

impl Action {
    pub fn new(speed: f64, direction: f64) -> Self {
        Self {
            speed,
            direction: wrap_angle(direction),
        }
    }

    pub fn zero(direction: f64) -> Self {
        Self::new(0.0, direction)
    }

    pub fn from_velocity(v: Vec2) -> Self {
        Self {
            speed: v.norm(),
            direction: if v.norm_sq() > 0.0 { v.angle() } else { 0.0 },
        }
    }

    #[inline]
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.direction) * self.speed
    }
}

/// Advances `state` by `dt` under `action`. Heading snaps to the direction of
/// travel; a zero action keeps the previous heading.
pub fn propagate(state: &AgentState, action: &Action, dt: f64) -> Result<AgentState> {
    check_step(state, action, dt)?;
    let v = action.velocity();
    let mut next = *state;
    next.observable.position = state.position() + v * dt;
    next.observable.velocity = v;
    if action.speed > 0.0 {
        next.hidden.heading = wrap_angle(action.direction);
    }
    Ok(next)
}

/// Largest heading change allowed over `dt` under the turning-rate limit
/// (rate `pref_speed` rad/s, i.e. a 1 m minimum turning radius).
#[inline]
pub fn max_turn(pref_speed: f64, dt: f64) -> f64 {
    dt * pref_speed
}

/// Advances `state` by `dt` under rotational constraints: the heading turns
/// toward the action direction by strictly less than `dt * pref_speed`.
pub fn propagate_constrained(state: &AgentState, action: &Action, dt: f64) -> Result<AgentState> {
    check_step(state, action, dt)?;
    let v = action.velocity();
    let limit = max_turn(state.pref_speed(), dt) * (1.0 - STRICT_MARGIN);
    let delta = wrap_angle(action.direction - state.heading()).clamp(-limit, limit);
    let mut next = *state;
    next.observable.position = state.position() + v * dt;
    next.observable.velocity = v;
    next.hidden.heading = wrap_angle(state.heading() + delta);
    Ok(next)
}

fn check_step(state: &AgentState, action: &Action, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if !action.speed.is_finite() || !action.direction.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    state.validate()
}

/// Moves an observable state at constant velocity for `dt`.
pub fn propagate_observable(other: &ObservableState, velocity: Vec2, dt: f64) -> ObservableState {
    ObservableState {
        position: other.position + velocity * dt,
        velocity,
        radius: other.radius,
    }
}

/// Number of components in [`AgentCentricState`].
pub const INPUT_DIM: usize = 15;

/// The rotation- and translation-invariant network input, in this order:
/// `[d_g, v_pref, v'x, v'y, r, theta', v~'x, v~'y, p~'x, p~'y, r~, r + r~,
/// cos theta', sin theta', d_a]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCentricState(pub [f64; INPUT_DIM]);

impl AgentCentricState {
    pub const DIST_TO_GOAL: usize = 0;
    pub const PREF_SPEED: usize = 1;
    pub const VX: usize = 2;
    pub const VY: usize = 3;
    pub const RADIUS: usize = 4;
    pub const HEADING: usize = 5;
    pub const OTHER_VX: usize = 6;
    pub const OTHER_VY: usize = 7;
    pub const OTHER_PX: usize = 8;
    pub const OTHER_PY: usize = 9;
    pub const OTHER_RADIUS: usize = 10;
    pub const RADIUS_SUM: usize = 11;
    pub const COS_HEADING: usize = 12;
    pub const SIN_HEADING: usize = 13;
    pub const DIST_TO_OTHER: usize = 14;

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Expresses a joint state in the frame centered on the agent with the x-axis
/// pointing at its goal. An agent sitting on its goal keeps the world
/// orientation.
pub fn rotate_to_agent_frame(joint: &JointState) -> AgentCentricState {
    let s = &joint.self_state;
    let o = &joint.other;
    let to_goal = s.goal() - s.position();
    let d_g = to_goal.norm();
    let frame = if d_g > 0.0 { to_goal.angle() } else { 0.0 };

    let v = s.velocity().rotated(-frame);
    let ov = o.velocity.rotated(-frame);
    let rel = o.position - s.position();
    let op = rel.rotated(-frame);
    let theta = wrap_angle(s.heading() - frame);
    let (sin_t, cos_t) = theta.sin_cos();
    let r = s.radius();

    AgentCentricState([
        d_g,
        s.pref_speed(),
        v.x,
        v.y,
        r,
        theta,
        ov.x,
        ov.y,
        op.x,
        op.y,
        o.radius,
        r + o.radius,
        cos_t,
        sin_t,
        rel.norm(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(p: Vec2, v: Vec2, goal: Vec2, heading: f64) -> AgentState {
        AgentState::new(p, v, 0.3, goal, 1.0, heading)
    }

    #[test]
    fn unit_advance() {
        let s = agent(Vec2::ZERO, Vec2::ZERO, Vec2::new(5.0, 0.0), 0.0);
        let n = propagate(&s, &Action::from_velocity(Vec2::new(1.0, 0.0)), 1.0).unwrap();
        assert_eq!(n.position(), Vec2::new(1.0, 0.0));
        assert_eq!(n.velocity(), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn zero_action_keeps_heading() {
        let s = agent(Vec2::new(2.0, 3.0), Vec2::new(0.5, 0.0), Vec2::ZERO, 1.1);
        let n = propagate(&s, &Action::from_velocity(Vec2::ZERO), 0.5).unwrap();
        assert_eq!(n.position(), Vec2::new(2.0, 3.0));
        assert_eq!(n.heading(), 1.1);
        assert_eq!(n.velocity(), Vec2::ZERO);
    }

    #[test]
    fn oblique_step() {
        let s = agent(Vec2::ZERO, Vec2::ZERO, Vec2::new(5.0, 5.0), 0.0);
        let n = propagate(&s, &Action::from_velocity(Vec2::new(0.6, 0.8)), 0.1).unwrap();
        assert!((n.position().x - 0.06).abs() < 1e-12);
        assert!((n.position().y - 0.08).abs() < 1e-12);
        assert!((n.heading() - 0.8_f64.atan2(0.6)).abs() < 1e-12);
        assert_eq!(n.goal(), s.goal());
        assert_eq!(n.pref_speed(), s.pref_speed());
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = agent(Vec2::ZERO, Vec2::ZERO, Vec2::new(1.0, 0.0), 0.0);
        let a = Action::new(1.0, 0.0);
        assert!(propagate(&s, &a, 0.0).is_err());
        assert!(propagate(&s, &Action::new(f64::NAN, 0.0), 0.1).is_err());
        let mut bad = s;
        bad.observable.position.x = f64::INFINITY;
        assert!(propagate(&bad, &a, 0.1).is_err());
    }

    #[test]
    fn constrained_turn_is_rate_limited() {
        let s = agent(Vec2::ZERO, Vec2::ZERO, Vec2::new(0.0, 5.0), 0.0);
        // Spin in place toward +y.
        let n = propagate_constrained(&s, &Action::zero(PI / 2.0), 0.1).unwrap();
        assert_eq!(n.position(), Vec2::ZERO);
        assert!(n.heading() > 0.0 && n.heading() < 0.1);
        // Small turn completes.
        let n = propagate_constrained(&s, &Action::new(1.0, 0.05), 0.1).unwrap();
        assert!((n.heading() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn aligned_frame() {
        let joint = JointState {
            self_state: agent(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), 0.0),
            other: ObservableState {
                position: Vec2::new(2.0, 0.0),
                velocity: Vec2::ZERO,
                radius: 0.3,
            },
        };
        let x = rotate_to_agent_frame(&joint).0;
        assert_eq!(x[AgentCentricState::DIST_TO_GOAL], 1.0);
        assert_eq!(x[AgentCentricState::VX], 1.0);
        assert_eq!(x[AgentCentricState::VY], 0.0);
        assert_eq!(x[AgentCentricState::HEADING], 0.0);
        assert_eq!(x[AgentCentricState::COS_HEADING], 1.0);
        assert_eq!(x[AgentCentricState::SIN_HEADING], 0.0);
        assert_eq!(x[AgentCentricState::OTHER_PX], 2.0);
        assert_eq!(x[AgentCentricState::OTHER_PY], 0.0);
        assert_eq!(x[AgentCentricState::DIST_TO_OTHER], 2.0);
        assert_eq!(x[AgentCentricState::RADIUS_SUM], 0.6);
    }

    #[test]
    fn goal_up_rotates_clockwise() {
        let joint = JointState {
            self_state: agent(Vec2::ZERO, Vec2::new(0.0, 1.0), Vec2::new(0.0, 1.0), PI / 2.0),
            other: ObservableState {
                position: Vec2::new(-1.0, 0.0),
                velocity: Vec2::new(0.0, 0.5),
                radius: 0.4,
            },
        };
        let x = rotate_to_agent_frame(&joint).0;
        // Rotation by -pi/2: (x, y) -> (y, -x).
        assert!((x[AgentCentricState::VX] - 1.0).abs() < 1e-12);
        assert!(x[AgentCentricState::VY].abs() < 1e-12);
        assert!((x[AgentCentricState::OTHER_PX] - 0.0).abs() < 1e-12);
        assert!((x[AgentCentricState::OTHER_PY] - 1.0).abs() < 1e-12);
        assert!((x[AgentCentricState::OTHER_VX] - 0.5).abs() < 1e-12);
        assert!(x[AgentCentricState::HEADING].abs() < 1e-12);
    }

    #[test]
    fn agent_on_goal_keeps_world_frame() {
        let joint = JointState {
            self_state: agent(Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0), Vec2::new(1.0, 1.0), 0.3),
            other: ObservableState {
                position: Vec2::new(2.0, 1.0),
                velocity: Vec2::ZERO,
                radius: 0.3,
            },
        };
        let x = rotate_to_agent_frame(&joint).0;
        assert_eq!(x[AgentCentricState::DIST_TO_GOAL], 0.0);
        assert_eq!(x[AgentCentricState::VY], 1.0);
        assert_eq!(x[AgentCentricState::HEADING], 0.3);
        assert_eq!(x[AgentCentricState::OTHER_PX], 1.0);
    }
}
