use std::f64::consts::PI;

use cadrl::geom::{min_separation, wrap_angle, Vec2};
use cadrl::metrics::percentile_nearest_rank;
use cadrl::net::ValueNetwork;
use cadrl::orca::{orca_velocity, OrcaParams};
use cadrl::policy::{
    build_action_set, filtered_velocity, score_actions, select_action, Neighbor, PolicyConfig, VelocitySample,
};
use cadrl::reward::{reward_detail, reward_from, RewardKind};
use cadrl::state::{
    rotate_to_agent_frame, Action, AgentState, JointState, ObservableState, MAX_DIRECTION_DEVIATION,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

fn agent() -> impl Strategy<Value = AgentState> {
    (vec2(4.0), vec2(1.5), 0.2..0.6f64, vec2(4.0), 0.5..1.5f64, -PI..PI)
        .prop_map(|(p, v, r, g, vp, th)| AgentState::new(p, v, r, g, vp, th))
}

fn observable() -> impl Strategy<Value = ObservableState> {
    (vec2(4.0), vec2(1.5), 0.2..0.6f64).prop_map(|(position, velocity, radius)| ObservableState {
        position,
        velocity,
        radius,
    })
}

// Rigid transform: rotate by `theta`, then translate.
fn moved(p: Vec2, theta: f64, t: Vec2) -> Vec2 {
    p.rotated(theta) + t
}

fn transform_agent(s: &AgentState, theta: f64, t: Vec2) -> AgentState {
    AgentState::new(
        moved(s.position(), theta, t),
        s.velocity().rotated(theta),
        s.radius(),
        moved(s.goal(), theta, t),
        s.pref_speed(),
        s.heading() + theta,
    )
}

fn grid_oracle(p: Vec2, v: Vec2, q: Vec2, w: Vec2, r: f64, dt: f64) -> f64 {
    let steps = (dt / 1e-4).round() as usize;
    (0..=steps)
        .map(|k| {
            let tau = dt * k as f64 / steps as f64;
            (q + w * tau).distance(p + v * tau) - r
        })
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn min_separation_matches_grid(p in vec2(3.0), v in vec2(2.0), q in vec2(3.0), w in vec2(2.0), r in 0.2..1.0f64, dt in 0.1..2.0f64) {
        let d = min_separation(p, v, q, w, r / 2.0, r / 2.0, dt);
        let oracle = grid_oracle(p, v, q, w, r, dt);
        prop_assert!(d <= oracle + 1e-12);
        prop_assert!((d - oracle).abs() < 1e-3, "analytic {d} oracle {oracle}");
    }

    #[test]
    fn agent_frame_is_rigid_invariant(s in agent(), o in observable(), theta in -PI..PI, t in vec2(50.0)) {
        let a = rotate_to_agent_frame(&JointState { self_state: s, other: o });
        let o2 = ObservableState {
            position: moved(o.position, theta, t),
            velocity: o.velocity.rotated(theta),
            radius: o.radius,
        };
        let b = rotate_to_agent_frame(&JointState { self_state: transform_agent(&s, theta, t), other: o2 });
        for k in 0..a.0.len() {
            let (x, y) = (a.0[k], b.0[k]);
            // The heading component is an angle; compare on the circle.
            let diff = if k == 5 { wrap_angle(x - y).abs() } else { (x - y).abs() };
            prop_assert!(diff < 1e-9, "component {k}: {x} vs {y}");
        }
    }

    #[test]
    fn agent_frame_puts_goal_on_x_axis(s in agent(), o in observable()) {
        prop_assume!(s.dist_to_goal() > 1e-6);
        let x = rotate_to_agent_frame(&JointState { self_state: s, other: o });
        prop_assert!((x.0[0] - s.dist_to_goal()).abs() < 1e-12);
        let rel = (o.position - s.position()).rotated(-s.goal_direction());
        prop_assert!((x.0[8] - rel.x).abs() < 1e-9 && (x.0[9] - rel.y).abs() < 1e-9);
    }

    #[test]
    fn reward_bounds(s in agent(), o in observable(), speed in 0.0..1.5f64, dir in -PI..PI, dt in 0.1..2.0f64) {
        let a = Action::new(speed, dir);
        let r = reward_detail(&JointState { self_state: s, other: o }, &a, dt, 0.1);
        prop_assert!(r.value <= 1.0);
        prop_assert!(r.value >= -0.25);
        prop_assert_eq!(r.value == -0.25, r.d_min < 0.0);
        if r.kind == RewardKind::Discomfort {
            prop_assert!((-0.2..=-0.1).contains(&r.value));
        }
    }

    #[test]
    fn reward_branch_order(d in -1.0..1.0f64, goal in any::<bool>()) {
        let r = reward_from(d, goal);
        let expected = if d < 0.0 {
            -0.25
        } else if d < 0.2 {
            -0.1 - d / 2.0
        } else if goal {
            1.0
        } else {
            0.0
        };
        prop_assert_eq!(r.value, expected);
    }

    #[test]
    fn orca_speed_bound(s in agent(), others in prop::collection::vec(observable(), 0..6)) {
        let sol = orca_velocity(&s, &others, &OrcaParams::default());
        prop_assert!(sol.velocity.norm() <= s.pref_speed() + 1e-9);
        prop_assert!(sol.velocity.is_finite());
    }

    #[test]
    fn orca_without_neighbors_is_preferred(s in agent()) {
        let sol = orca_velocity(&s, &[], &OrcaParams::default());
        prop_assert_eq!(sol.velocity, s.preferred_velocity());
    }

    #[test]
    fn action_set_respects_limits(s in agent(), seed in any::<u64>(), constrained in any::<bool>()) {
        let cfg = PolicyConfig { constrained, ..PolicyConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions = build_action_set(&s, &cfg, &mut rng);
        prop_assert_eq!(actions.len(), 35);
        for a in &actions {
            prop_assert!(a.speed >= 0.0 && a.speed <= s.pref_speed() + 1e-12);
            if constrained {
                prop_assert!(wrap_angle(a.direction - s.heading()).abs() < MAX_DIRECTION_DEVIATION);
            }
        }
        prop_assert!(actions.iter().any(|a| a.speed == 0.0));
    }

    #[test]
    fn filter_of_constant_history(v in vec2(2.0), n in 1usize..12, window in 0.05..2.0f64) {
        let h = vec![VelocitySample { dt: 0.1, velocity: v }; n];
        let f = filtered_velocity(&h, window).unwrap();
        prop_assert!((f - v).norm() < 1e-12);
    }

    #[test]
    fn nearest_rank_is_a_member(mut xs in prop::collection::vec(-10.0..10.0f64, 1..200), p in 0.0..=100.0f64) {
        xs.sort_by(f64::total_cmp);
        let q = percentile_nearest_rank(&xs, p);
        prop_assert!(xs.contains(&q));
        let below = xs.iter().filter(|&&x| x <= q).count();
        prop_assert!(below as f64 >= p / 100.0 * xs.len() as f64);
    }
}

fn random_net(seed: u64) -> ValueNetwork {
    ValueNetwork::init(&[15, 24, 16, 1], 1.0, seed).unwrap()
}

#[test]
fn selection_ignores_neighbor_order_and_duplicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = PolicyConfig::default();
    for seed in 0..50 {
        let net = random_net(seed);
        let s = AgentState::new(Vec2::ZERO, Vec2::new(0.5, 0.0), 0.3, Vec2::new(4.0, 0.5), 1.0, 0.0);
        let h1 = [VelocitySample { dt: 0.5, velocity: Vec2::new(-0.8, 0.1) }];
        let h2 = [VelocitySample { dt: 0.5, velocity: Vec2::new(0.0, 0.7) }];
        let n1 = Neighbor {
            state: ObservableState { position: Vec2::new(2.0, 0.3), velocity: Vec2::new(-0.8, 0.1), radius: 0.4 },
            history: &h1,
        };
        let n2 = Neighbor {
            state: ObservableState { position: Vec2::new(1.5, -1.5), velocity: Vec2::new(0.0, 0.7), radius: 0.3 },
            history: &h2,
        };
        let actions = build_action_set(&s, &cfg, &mut rng);
        let a = select_action(&s, &[n1, n2], &net, &cfg, &actions).unwrap();
        let b = select_action(&s, &[n2, n1], &net, &cfg, &actions).unwrap();
        assert_eq!(a.action, b.action);
        assert_eq!(a.score, b.score);
        let single = select_action(&s, &[n1], &net, &cfg, &actions).unwrap();
        let doubled = select_action(&s, &[n1, n1], &net, &cfg, &actions).unwrap();
        assert_eq!(single.action, doubled.action);
        assert_eq!(single.score, doubled.score);
    }
}

#[test]
fn score_decomposes_into_reward_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = PolicyConfig::default();
    let net = random_net(3);
    let s = AgentState::new(Vec2::ZERO, Vec2::ZERO, 0.4, Vec2::new(3.0, 0.0), 1.2, 0.0);
    let h = [VelocitySample { dt: 0.5, velocity: Vec2::new(-1.0, 0.0) }];
    let n = Neighbor {
        state: ObservableState { position: Vec2::new(1.8, 0.2), velocity: Vec2::new(-1.0, 0.0), radius: 0.4 },
        history: &h,
    };
    let actions = build_action_set(&s, &cfg, &mut rng);
    let scores = score_actions(&s, &[n], &net, &cfg, &actions).unwrap();
    for (score, r, v, _) in &scores {
        assert!((score - (r + v)).abs() < 1e-12);
    }
    let d = select_action(&s, &[n], &net, &cfg, &actions).unwrap();
    assert!((d.score - (d.reward + d.discounted_value)).abs() < 1e-12);
    let best = scores.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(d.score, best);
}

#[test]
fn orca_symmetric_pair_mirrors() {
    let p = OrcaParams::default();
    let a = AgentState::new(Vec2::new(-2.0, 0.0), Vec2::new(1.0, 0.0), 0.3, Vec2::new(2.0, 0.0), 1.0, 0.0);
    let b = AgentState::new(Vec2::new(2.0, 0.0), Vec2::new(-1.0, 0.0), 0.3, Vec2::new(-2.0, 0.0), 1.0, PI);
    let va = orca_velocity(&a, &[b.observable], &p).velocity;
    let vb = orca_velocity(&b, &[a.observable], &p).velocity;
    // Point reflection through the origin maps one agent onto the other.
    assert!((va + vb).norm() < 1e-6, "{va:?} vs {vb:?}");
}
