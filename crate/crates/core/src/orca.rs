//! Optimal reciprocal collision avoidance: per-neighbor velocity half-planes
//! and the incremental 2D linear program that picks the permitted velocity
//! closest to the preferred one.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::state::{AgentState, ObservableState};

/// Lateral nudge applied to the preferred velocity so exactly symmetric
/// encounters resolve to a consistent side (m/s).
pub const SYMMETRY_NUDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrcaParams {
    /// Collision look-ahead (s).
    pub time_horizon: f64,
    /// Neighbors farther than this are ignored (m).
    pub neighbor_dist: f64,
    pub epsilon: f64,
    /// Extra clearance kept between discs (m). Without it the optimal
    /// velocity grazes the neighbor and rounding turns contact into overlap.
    pub safety_margin: f64,
    /// Control period used by the overlap-recovery branch (s).
    pub time_step: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        Self {
            time_horizon: 2.0,
            neighbor_dist: 10.0,
            epsilon: 1e-5,
            safety_margin: 0.1,
            time_step: 0.1,
        }
    }
}

/// Velocities `v` with `(v - point) · normal >= 0` are permitted; `normal`
/// points out of the velocity obstacle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfPlane {
    pub point: Vec2,
    pub normal: Vec2,
}

impl HalfPlane {
    /// Positive inside the permitted side.
    #[inline]
    pub fn signed_distance(&self, v: Vec2) -> f64 {
        (v - self.point).dot(self.normal)
    }

    #[inline]
    pub fn contains(&self, v: Vec2) -> bool {
        self.signed_distance(v) >= 0.0
    }

    // Boundary direction with the permitted side on its left.
    #[inline]
    fn direction(&self) -> Vec2 {
        Vec2::new(self.normal.y, -self.normal.x)
    }

    fn from_direction(point: Vec2, direction: Vec2) -> Self {
        Self {
            point,
            normal: direction.perp(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrcaSolution {
    pub velocity: Vec2,
    /// Set when the constraints were infeasible and had to be relaxed.
    pub relaxed: bool,
}

/// Half-plane of velocities for `agent` that avoid `other` for
/// `time_horizon` when `agent` takes `responsibility` of the required change
/// (0.5 for a reciprocating neighbor). Overlapping agents get a constraint
/// that separates them within one `time_step`.
pub fn orca_halfplane(
    agent: &ObservableState,
    other: &ObservableState,
    time_horizon: f64,
    time_step: f64,
    responsibility: f64,
    epsilon: f64,
) -> HalfPlane {
    let mut rel_pos = other.position - agent.position;
    if rel_pos.norm_sq() < epsilon * epsilon {
        rel_pos = Vec2::new(epsilon, 0.0);
    }
    let rel_vel = agent.velocity - other.velocity;
    let dist_sq = rel_pos.norm_sq();
    let combined = agent.radius + other.radius;
    let combined_sq = combined * combined;

    let direction;
    let u;
    if dist_sq > combined_sq {
        let inv_tau = 1.0 / time_horizon;
        // From the cutoff-circle center to the relative velocity.
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_sq * w_len_sq {
            // Closest boundary point lies on the cutoff circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined * inv_tau - w_len);
        } else {
            // Closest boundary point lies on a leg of the cone.
            let leg = (dist_sq - combined_sq).sqrt();
            direction = if rel_pos.cross(w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined,
                    rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined,
                    -rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            };
            u = direction * rel_vel.dot(direction) - rel_vel;
        }
    } else {
        // Already overlapping: resolve within one step.
        let inv_dt = 1.0 / time_step;
        let mut w = rel_vel - rel_pos * inv_dt;
        if w.norm_sq() < epsilon * epsilon {
            w = -rel_pos.normalized() * epsilon;
        }
        let w_len = w.norm();
        let unit_w = w / w_len;
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined * inv_dt - w_len);
    }
    HalfPlane::from_direction(agent.velocity + u * responsibility, direction)
}

/// Velocity closest to the preferred velocity (straight at the goal at
/// preferred speed) that satisfies every reciprocal constraint and the speed
/// limit. All neighbors are assumed to reciprocate.
pub fn orca_velocity(agent: &AgentState, neighbors: &[ObservableState], params: &OrcaParams) -> OrcaSolution {
    let weighted: Vec<(ObservableState, f64)> = neighbors.iter().map(|n| (*n, 0.5)).collect();
    orca_velocity_weighted(agent, &weighted, params)
}

/// Like [`orca_velocity`] with an explicit share of responsibility per
/// neighbor; a neighbor that will not react should get `1.0`.
pub fn orca_velocity_weighted(
    agent: &AgentState,
    neighbors: &[(ObservableState, f64)],
    params: &OrcaParams,
) -> OrcaSolution {
    let max_speed = agent.pref_speed();
    let pref = agent.preferred_velocity();
    let cutoff_sq = params.neighbor_dist * params.neighbor_dist;
    let me = ObservableState {
        radius: agent.radius() + 0.5 * params.safety_margin,
        ..agent.observable
    };
    let mut lines: Vec<HalfPlane> = Vec::with_capacity(neighbors.len());
    for (other, share) in neighbors {
        if (other.position - agent.position()).norm_sq() > cutoff_sq {
            continue;
        }
        let other = ObservableState {
            radius: other.radius + 0.5 * params.safety_margin,
            ..*other
        };
        lines.push(orca_halfplane(
            &me,
            &other,
            params.time_horizon,
            params.time_step,
            *share,
            params.epsilon,
        ));
    }

    if lines.is_empty() {
        return OrcaSolution {
            velocity: pref,
            relaxed: false,
        };
    }
    let nudged = pref + pref.normalized().perp() * SYMMETRY_NUDGE;
    let (mut velocity, relaxed) = solve(&lines, max_speed, nudged, params.epsilon);
    let speed = velocity.norm();
    if speed > max_speed {
        velocity = velocity * (max_speed / speed);
    }
    OrcaSolution { velocity, relaxed }
}

/// Solves the LP over `lines` within a disc of `radius`, falling back to the
/// velocity minimizing the largest constraint violation when infeasible.
pub fn solve(lines: &[HalfPlane], radius: f64, preferred: Vec2, epsilon: f64) -> (Vec2, bool) {
    let (fail, mut result) = linear_program2(lines, radius, preferred, false, epsilon);
    if fail < lines.len() {
        linear_program3(lines, fail, radius, &mut result, epsilon);
        (result, true)
    } else {
        (result, false)
    }
}

// Optimizes along the boundary of line `line_no` subject to lines before it.
fn linear_program1(
    lines: &[HalfPlane],
    line_no: usize,
    radius: f64,
    opt: Vec2,
    direction_opt: bool,
    epsilon: f64,
) -> Option<Vec2> {
    let line = &lines[line_no];
    let dir = line.direction();
    let dot = line.point.dot(dir);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < 0.0 {
        // Line misses the speed disc entirely.
        return None;
    }
    let sq = disc.sqrt();
    let mut t_left = -dot - sq;
    let mut t_right = -dot + sq;

    for other in &lines[..line_no] {
        let odir = other.direction();
        let denom = dir.cross(odir);
        let numer = odir.cross(line.point - other.point);
        if denom.abs() <= epsilon {
            // Parallel lines.
            if numer < 0.0 {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let result = if direction_opt {
        if opt.dot(dir) > 0.0 {
            line.point + dir * t_right
        } else {
            line.point + dir * t_left
        }
    } else {
        let t = dir.dot(opt - line.point);
        if t < t_left {
            line.point + dir * t_left
        } else if t > t_right {
            line.point + dir * t_right
        } else {
            line.point + dir * t
        }
    };
    Some(result)
}

// Returns the index of the first line that could not be satisfied (or
// `lines.len()` on success) and the best velocity found so far.
fn linear_program2(
    lines: &[HalfPlane],
    radius: f64,
    opt: Vec2,
    direction_opt: bool,
    epsilon: f64,
) -> (usize, Vec2) {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if lines[i].direction().cross(lines[i].point - result) > 0.0 {
            match linear_program1(lines, i, radius, opt, direction_opt, epsilon) {
                Some(r) => result = r,
                None => return (i, result),
            }
        }
    }
    (lines.len(), result)
}

// Minimizes the maximum violation over lines from `begin` on.
fn linear_program3(lines: &[HalfPlane], begin: usize, radius: f64, result: &mut Vec2, epsilon: f64) {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        let li = &lines[i];
        let di = li.direction();
        if di.cross(li.point - *result) <= distance {
            continue;
        }
        let mut projected: Vec<HalfPlane> = Vec::with_capacity(i);
        for lj in &lines[..i] {
            let dj = lj.direction();
            let det = di.cross(dj);
            let point = if det.abs() <= epsilon {
                if di.dot(dj) > 0.0 {
                    // Same direction; already implied.
                    continue;
                }
                (li.point + lj.point) * 0.5
            } else {
                li.point + di * (dj.cross(li.point - lj.point) / det)
            };
            let dir = (dj - di).normalized();
            projected.push(HalfPlane::from_direction(point, dir));
        }
        let temp = *result;
        let (fail, r) = linear_program2(&projected, radius, di.perp(), true, epsilon);
        *result = if fail < projected.len() { temp } else { r };
        distance = di.cross(li.point - *result);
    }
}
