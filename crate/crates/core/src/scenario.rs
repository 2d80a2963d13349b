//! Test-case generators: random rooms, the two-agent crossing sweep, circle
//! swaps and a few fixed showcase layouts.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{min_separation, Vec2};
use crate::reward::DISCOMFORT_DIST;
use crate::sim::PolicyKind;
use crate::state::AgentState;

pub const PREF_SPEED_RANGE: (f64, f64) = (0.5, 1.5);
pub const RADIUS_RANGE: (f64, f64) = (0.3, 0.5);
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Half-length of each path in the crossing scenario (m).
pub const CROSSING_HALF_LENGTH: f64 = 2.5;
/// Clearance kept between initial discs where a layout must be adjusted (m).
const START_CLEARANCE: f64 = 0.1;
/// Random starts keep at least this surface gap, so nobody begins inside
/// another agent's discomfort band (m).
pub const RANDOM_START_GAP: f64 = DISCOMFORT_DIST;
/// Extra spacing between goals, so an agent parked on its goal never blocks
/// another agent from reaching its own (m).
const GOAL_CLEARANCE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub position: Vec2,
    pub goal: Vec2,
    pub pref_speed: f64,
    pub radius: f64,
    pub heading: f64,
}

impl AgentSpec {
    /// Starts at rest facing the goal.
    pub fn toward_goal(position: Vec2, goal: Vec2, pref_speed: f64, radius: f64) -> Self {
        let d = goal - position;
        let heading = if d.norm_sq() > 0.0 { d.angle() } else { 0.0 };
        Self {
            position,
            goal,
            pref_speed,
            radius,
            heading,
        }
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::new(
            self.position,
            Vec2::ZERO,
            self.radius,
            self.goal,
            self.pref_speed,
            self.heading,
        )
    }

    /// Lower bound on time to goal.
    pub fn nominal_time(&self) -> f64 {
        self.position.distance(self.goal) / self.pref_speed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub agents: Vec<AgentSpec>,
    /// Side of the square domain centered on the origin (m).
    pub domain_side: f64,
    pub label: String,
    /// Optional per-agent policy override (static obstacles, scripted agents).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_policies: Option<Vec<Option<PolicyKind>>>,
}

impl TestCase {
    pub fn new(label: impl Into<String>, domain_side: f64, agents: Vec<AgentSpec>) -> Self {
        Self {
            agents,
            domain_side,
            label: label.into(),
            fixed_policies: None,
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Policy per agent: the fixed override where present, else `default`.
    pub fn policies(&self, default: PolicyKind) -> Vec<PolicyKind> {
        match &self.fixed_policies {
            Some(fixed) => fixed.iter().map(|p| p.unwrap_or(default)).collect(),
            None => vec![default; self.agents.len()],
        }
    }

    /// Whether any two initial discs overlap.
    pub fn has_initial_overlap(&self) -> bool {
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                if a.position.distance(b.position) <= a.radius + b.radius {
                    return true;
                }
            }
        }
        false
    }
}

/// Random room with `n_agents`: speeds and radii uniform in their ranges,
/// starts at least [`RANDOM_START_GAP`] apart, goals pushed radially onto the boundary. Cases in
/// which nobody would collide by driving straight to their goals are
/// resampled, so every case needs some avoidance.
pub fn random_testcase<R: Rng + ?Sized>(n_agents: usize, domain_side: f64, rng: &mut R) -> Result<TestCase> {
    random_testcase_with(n_agents, domain_side, true, rng)
}

pub fn random_testcase_with<R: Rng + ?Sized>(
    n_agents: usize,
    domain_side: f64,
    require_conflict: bool,
    rng: &mut R,
) -> Result<TestCase> {
    if n_agents < 2 {
        return Err(Error::invalid(format!("need at least two agents, got {n_agents}")));
    }
    if !(domain_side > 2.0 * RADIUS_RANGE.1) {
        return Err(Error::invalid(format!("domain side {domain_side} too small")));
    }
    let half = domain_side / 2.0;
    'attempt: for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut agents: Vec<AgentSpec> = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            let v = rng.gen_range(PREF_SPEED_RANGE.0..=PREF_SPEED_RANGE.1);
            let r = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
            let p = Vec2::new(rng.gen_range(-half + r..half - r), rng.gen_range(-half + r..half - r));
            let q = Vec2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
            let g = project_to_boundary(q, half);
            for o in &agents {
                if p.distance(o.position) < r + o.radius + RANDOM_START_GAP || g.distance(o.goal) <= r + o.radius + GOAL_CLEARANCE {
                    continue 'attempt;
                }
            }
            agents.push(AgentSpec::toward_goal(p, g, v, r));
        }
        let case = TestCase::new(format!("random-{n_agents}"), domain_side, agents);
        if !require_conflict || straight_line_conflict(&case) {
            return Ok(case);
        }
    }
    Err(Error::Crowded {
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

// Scales `q` from the origin until it touches the square of half-side `half`.
fn project_to_boundary(q: Vec2, half: f64) -> Vec2 {
    let m = q.x.abs().max(q.y.abs());
    if m <= 0.0 {
        return Vec2::new(half, 0.0);
    }
    q * (half / m)
}

/// True when some pair would overlap if every agent drove straight to its
/// goal at preferred speed and then stopped.
pub fn straight_line_conflict(case: &TestCase) -> bool {
    for (i, a) in case.agents.iter().enumerate() {
        for b in &case.agents[i + 1..] {
            if straight_pair_separation(a, b) < 0.0 {
                return true;
            }
        }
    }
    false
}

fn straight_pair_separation(a: &AgentSpec, b: &AgentSpec) -> f64 {
    let va = (a.goal - a.position).normalized() * a.pref_speed;
    let vb = (b.goal - b.position).normalized() * b.pref_speed;
    let (ta, tb) = (a.nominal_time(), b.nominal_time());
    let t1 = ta.min(tb);
    let first = min_separation(a.position, va, b.position, vb, a.radius, b.radius, t1.max(0.0));
    let (pa, pb) = (a.position + va * t1, b.position + vb * t1);
    let (va2, vb2) = if ta <= tb { (Vec2::ZERO, vb) } else { (va, Vec2::ZERO) };
    let second = min_separation(pa, va2, pb, vb2, a.radius, b.radius, (ta.max(tb) - t1).max(0.0));
    first.min(second)
}

/// Two identical agents (radius 0.3 m, 1 m/s) whose straight paths cross at
/// the origin at the same instant. One travels along +x; the other's
/// direction of travel is rotated by `alpha_deg` from it, so 180 is a
/// head-on swap. Paths are lengthened at shallow angles so the starts do not
/// overlap; at exactly 0 the second agent starts alongside the first.
pub fn crossing_testcase(alpha_deg: f64) -> TestCase {
    let r = 0.3;
    let alpha = alpha_deg.clamp(0.0, 180.0).to_radians();
    let min_gap = 2.0 * r + START_CLEARANCE;
    let chord = 2.0 * (alpha / 2.0).sin();
    let mut agents = Vec::with_capacity(2);
    let red_start = Vec2::new(-CROSSING_HALF_LENGTH, 0.0);
    if chord * CROSSING_HALF_LENGTH > min_gap {
        let d = CROSSING_HALF_LENGTH;
        let dir = Vec2::from_angle(alpha);
        agents.push(AgentSpec::toward_goal(red_start, -red_start, 1.0, r));
        agents.push(AgentSpec::toward_goal(-dir * d, dir * d, 1.0, r));
    } else if chord > 0.0 {
        let d = min_gap / chord;
        let dir = Vec2::from_angle(alpha);
        agents.push(AgentSpec::toward_goal(Vec2::new(-d, 0.0), Vec2::new(d, 0.0), 1.0, r));
        agents.push(AgentSpec::toward_goal(-dir * d, dir * d, 1.0, r));
    } else {
        let off = Vec2::new(0.0, min_gap);
        agents.push(AgentSpec::toward_goal(red_start, -red_start, 1.0, r));
        agents.push(AgentSpec::toward_goal(red_start + off, -red_start + off, 1.0, r));
    }
    TestCase::new(format!("crossing-{alpha_deg}"), 2.0 * CROSSING_HALF_LENGTH + 2.0, agents)
}

/// `n` agents evenly spaced on a circle, each heading to the antipode.
pub fn circle_testcase(n_agents: usize, radius: f64) -> Result<TestCase> {
    if n_agents < 2 {
        return Err(Error::invalid(format!("need at least two agents, got {n_agents}")));
    }
    let agents = (0..n_agents)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n_agents as f64;
            let p = Vec2::from_angle(a) * radius;
            AgentSpec::toward_goal(p, -p, 1.0, 0.3)
        })
        .collect();
    let case = TestCase::new(format!("circle-{n_agents}"), 2.0 * radius + 2.0, agents);
    if case.has_initial_overlap() {
        return Err(Error::invalid(format!(
            "circle of radius {radius} too small for {n_agents} agents"
        )));
    }
    Ok(case)
}

/// Head-on swap of two identical agents.
pub fn swap_testcase() -> TestCase {
    let a = Vec2::new(-CROSSING_HALF_LENGTH, 0.0);
    TestCase::new(
        "swap",
        2.0 * CROSSING_HALF_LENGTH + 2.0,
        vec![
            AgentSpec::toward_goal(a, -a, 1.0, 0.3),
            AgentSpec::toward_goal(-a, a, 1.0, 0.3),
        ],
    )
}

/// One agent crossing a row of stationary obstacles.
pub fn static_field_testcase() -> TestCase {
    let mut agents = vec![AgentSpec::toward_goal(Vec2::new(-4.0, 0.0), Vec2::new(4.0, 0.0), 1.0, 0.3)];
    let obstacles = [
        (Vec2::new(-2.0, 0.3), 0.4),
        (Vec2::new(-0.5, -0.6), 0.3),
        (Vec2::new(0.3, 0.8), 0.35),
        (Vec2::new(1.6, -0.1), 0.4),
        (Vec2::new(2.8, 1.0), 0.3),
    ];
    for (p, r) in obstacles {
        agents.push(AgentSpec::toward_goal(p, p, 1.0, r));
    }
    let mut fixed = vec![None];
    fixed.extend(std::iter::repeat(Some(PolicyKind::Stationary)).take(obstacles.len()));
    TestCase {
        agents,
        domain_side: 10.0,
        label: "static-field".into(),
        fixed_policies: Some(fixed),
    }
}

/// One agent against a scripted agent that drives straight through.
pub fn non_cooperative_testcase() -> TestCase {
    let a = Vec2::new(-CROSSING_HALF_LENGTH, 0.0);
    TestCase {
        agents: vec![
            AgentSpec::toward_goal(a, -a, 1.0, 0.3),
            AgentSpec::toward_goal(-a + Vec2::new(0.0, 0.05), a + Vec2::new(0.0, 0.05), 1.0, 0.3),
        ],
        domain_side: 2.0 * CROSSING_HALF_LENGTH + 2.0,
        label: "non-cooperative".into(),
        fixed_policies: Some(vec![None, Some(PolicyKind::ConstantVelocity)]),
    }
}

/// Named layouts available from the command line.
pub const NAMED_SCENARIOS: &[&str] = &[
    "swap",
    "crossing",
    "circle6",
    "static-field",
    "non-cooperative",
    "random2",
    "random4",
];

/// Builds a layout by name. `alpha_deg` is used by "crossing" only; the
/// random layouts draw from `rng`.
pub fn named_scenario<R: Rng + ?Sized>(name: &str, alpha_deg: f64, rng: &mut R) -> Result<TestCase> {
    match name {
        "swap" => Ok(swap_testcase()),
        "crossing" => {
            if !(0.0..=180.0).contains(&alpha_deg) {
                return Err(Error::invalid(format!("alpha must be in [0, 180], got {alpha_deg}")));
            }
            Ok(crossing_testcase(alpha_deg))
        }
        "circle6" => circle_testcase(6, 3.0),
        "static-field" => Ok(static_field_testcase()),
        "non-cooperative" => Ok(non_cooperative_testcase()),
        "random2" => random_testcase(2, 4.0, rng),
        "random4" => random_testcase(4, 5.0, rng),
        other => Err(Error::invalid(format!(
            "unknown scenario '{other}'; available: {}",
            NAMED_SCENARIOS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_ranges_and_boundary_goals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let c = random_testcase(4, 5.0, &mut rng).unwrap();
            assert_eq!(c.len(), 4);
            assert!(!c.has_initial_overlap());
            assert!(straight_line_conflict(&c));
            for a in &c.agents {
                assert!((0.5..=1.5).contains(&a.pref_speed));
                assert!((0.3..=0.5).contains(&a.radius));
                let m = a.goal.x.abs().max(a.goal.y.abs());
                assert!((m - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_is_seeded() {
        let a = random_testcase(2, 4.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_testcase(2, 4.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crowded_room_reports_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(random_testcase(40, 2.0, &mut rng), Err(Error::Crowded { .. })));
        assert!(random_testcase(1, 4.0, &mut rng).is_err());
    }

    #[test]
    fn crossing_head_on() {
        let c = crossing_testcase(180.0);
        let (a, b) = (c.agents[0], c.agents[1]);
        assert!((a.position - b.goal).norm() < 1e-12);
        assert!((b.position - a.goal).norm() < 1e-12);
    }

    #[test]
    fn crossing_perpendicular_meets_at_origin() {
        let c = crossing_testcase(90.0);
        for s in &c.agents {
            assert_eq!(s.radius, 0.3);
            assert_eq!(s.pref_speed, 1.0);
            let dir = (s.goal - s.position).normalized();
            let t = s.nominal_time() / 2.0;
            assert!((s.position + dir * t).norm() < 1e-9);
        }
        let d0 = (c.agents[0].goal - c.agents[0].position).normalized();
        let d1 = (c.agents[1].goal - c.agents[1].position).normalized();
        assert!(d0.dot(d1).abs() < 1e-12);
    }

    #[test]
    fn crossing_never_overlaps() {
        for a in (0..=180).step_by(5) {
            let c = crossing_testcase(a as f64);
            assert!(!c.has_initial_overlap(), "alpha {a}");
        }
    }

    #[test]
    fn circle_is_regular() {
        let c = circle_testcase(6, 3.0).unwrap();
        for s in &c.agents {
            assert!((s.goal + s.position).norm() < 1e-12);
        }
        let d: Vec<f64> = (0..6)
            .map(|i| c.agents[i].position.distance(c.agents[(i + 1) % 6].position))
            .collect();
        for x in &d {
            assert!((x - d[0]).abs() < 1e-12);
        }
        let two = circle_testcase(2, 2.5).unwrap();
        assert!((two.agents[0].position - two.agents[1].goal).norm() < 1e-12);
    }
}
