//! Reward and discounting.

use crate::geom::{min_separation, segment_approach};
use crate::state::{Action, JointState};

pub const COLLISION_REWARD: f64 = -0.25;
pub const GOAL_REWARD: f64 = 1.0;
/// Separation below which the discomfort penalty applies (m).
pub const DISCOMFORT_DIST: f64 = 0.2;
pub const DEFAULT_GOAL_TOL: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.9;

/// Which branch of the reward fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardKind {
    Collision,
    Discomfort,
    Goal,
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardDetail {
    pub value: f64,
    pub kind: RewardKind,
    pub d_min: f64,
}

impl RewardDetail {
    /// True when the step ends the episode successfully.
    pub fn is_terminal_goal(&self) -> bool {
        self.kind == RewardKind::Goal
    }

    /// True when the step ends the episode, by reaching the goal or by
    /// collision.
    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, RewardKind::Goal | RewardKind::Collision)
    }
}

/// Piecewise reward given the minimum separation over the step and whether
/// the step reaches the goal. Penalties take precedence over the goal bonus.
pub fn reward_from(d_min: f64, reaches_goal: bool) -> RewardDetail {
    let (value, kind) = if d_min < 0.0 {
        (COLLISION_REWARD, RewardKind::Collision)
    } else if d_min < DISCOMFORT_DIST {
        (-0.1 - d_min / 2.0, RewardKind::Discomfort)
    } else if reaches_goal {
        (GOAL_REWARD, RewardKind::Goal)
    } else {
        (0.0, RewardKind::Neutral)
    };
    RewardDetail { value, kind, d_min }
}

/// Reward for taking `action` over `dt` from `joint`, with the neighbor held
/// at its observed velocity. The goal counts as reached when the straight
/// path over the step passes within `goal_tol` of it.
pub fn reward_detail(joint: &JointState, action: &Action, dt: f64, goal_tol: f64) -> RewardDetail {
    let s = &joint.self_state;
    let o = &joint.other;
    let v = action.velocity();
    let d_min = min_separation(
        s.position(),
        v,
        o.position,
        o.velocity,
        s.radius(),
        o.radius,
        dt,
    );
    let (goal_dist, _) = segment_approach(s.position(), v, dt, s.goal());
    reward_from(d_min, goal_dist < goal_tol)
}

pub fn reward(joint: &JointState, action: &Action, dt: f64, goal_tol: f64) -> f64 {
    reward_detail(joint, action, dt, goal_tol).value
}

/// `gamma^(t * v_pref)`; the preferred speed normalizes the exponent.
#[inline]
pub fn discount_exponent(gamma: f64, t: f64, pref_speed: f64) -> f64 {
    gamma.powf(t * pref_speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use crate::state::{AgentState, ObservableState};

    fn joint(p: Vec2, goal: Vec2, other: Vec2, other_v: Vec2) -> JointState {
        JointState {
            self_state: AgentState::new(p, Vec2::ZERO, 0.3, goal, 1.0, 0.0),
            other: ObservableState {
                position: other,
                velocity: other_v,
                radius: 0.3,
            },
        }
    }

    #[test]
    fn branch_constants() {
        assert_eq!(reward_from(-0.05, true).value, -0.25);
        assert!((reward_from(0.1, true).value + 0.15).abs() < 1e-15);
        assert_eq!(reward_from(0.5, true).value, 1.0);
        assert_eq!(reward_from(0.5, false).value, 0.0);
        assert_eq!(reward_from(0.2, false).kind, RewardKind::Neutral);
    }

    #[test]
    fn step_onto_goal() {
        let j = joint(Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(-5.0, 0.0), Vec2::ZERO);
        let r = reward(&j, &Action::new(1.0, 0.0), 1.0, DEFAULT_GOAL_TOL);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn overlap_projected() {
        // Head-on, meeting within the window.
        let j = joint(Vec2::ZERO, Vec2::new(5.0, 0.0), Vec2::new(1.5, 0.0), Vec2::new(-1.0, 0.0));
        let r = reward_detail(&j, &Action::new(1.0, 0.0), 1.0, DEFAULT_GOAL_TOL);
        assert_eq!(r.kind, RewardKind::Collision);
        assert_eq!(r.value, -0.25);
    }

    #[test]
    fn discount() {
        assert_eq!(discount_exponent(0.97, 0.0, 1.3), 1.0);
        assert!((discount_exponent(0.97, 1.0, 1.0) - 0.97).abs() < 1e-15);
        assert!((discount_exponent(0.97, 10.0, 0.5) - 0.97_f64.powi(5)).abs() < 1e-12);
    }
}
