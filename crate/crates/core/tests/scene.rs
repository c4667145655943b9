use std::f64::consts::PI;
use std::time::Instant;

use planar_gatr_core::pga::wrap_angle;
use planar_gatr_core::scene::{
    agent_deltas, build_kdisk_vocab, delta_distance, dynamics_step, generate_synthetic_scene, local_delta, recenter_scene, select_radius,
    transform_scene, transitions_by_class, AgentClass, Delta, Scene, SceneGenConfig, DEFAULT_HEADING_WEIGHT,
};
use planar_gatr_core::Pose2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize, seed: u64) -> Vec<Scene> {
    let cfg = SceneGenConfig::default();
    (0..n as u64).map(|i| generate_synthetic_scene(&cfg, seed + i).unwrap()).collect()
}

fn pose_close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && wrap_angle(a.theta - b.theta).abs() <= tol
}

#[test]
fn kdisk_packing_and_covering_by_brute_force() {
    let start = Instant::now();
    let scenes = corpus(160, 100);
    let t = transitions_by_class(&scenes);
    let total: usize = t.iter().map(Vec::len).sum();
    assert!(total <= 10_000, "{total}");
    let w = DEFAULT_HEADING_WEIGHT;
    let r = select_radius(&t, 64, w, 7).unwrap();
    let v = build_kdisk_vocab(&t, r, 64, w, 7).unwrap();
    for class in AgentClass::ALL {
        let c = class.index();
        let entries = &v.deltas[c];
        assert!(!entries.is_empty() && entries.len() <= 64);
        for i in 0..entries.len() {
            for j in 0..i {
                assert!(delta_distance(&entries[i], &entries[j], w) > r[c], "{class:?} entries {i},{j} too close");
            }
        }
        for d in &t[c] {
            let near = entries.iter().map(|e| delta_distance(d, e, w)).fold(f64::INFINITY, f64::min);
            assert!(near <= r[c], "{class:?}: transition {d:?} uncovered ({near} > {})", r[c]);
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn vocab_build_is_seed_deterministic() {
    let scenes = corpus(20, 5);
    let t = transitions_by_class(&scenes);
    let a = build_kdisk_vocab(&t, [0.1; 3], 32, 1.0, 3).unwrap();
    let b = build_kdisk_vocab(&t, [0.1; 3], 32, 1.0, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dynamics_inverts_local_delta() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let p = Pose2::new(r.random_range(-500.0..500.0), r.random_range(-500.0..500.0), r.random_range(-PI..PI));
        let q = Pose2::new(p.x + r.random_range(-5.0..5.0), p.y + r.random_range(-5.0..5.0), r.random_range(-PI..PI));
        let d = local_delta(&p, &q);
        let (next, speed) = dynamics_step(&p, &d, 0.5).unwrap();
        assert!(pose_close(&next, &q, 1e-9));
        assert!((speed - d.dx.hypot(d.dy) / 0.5).abs() < 1e-12);
    }
    assert!(dynamics_step(&Pose2::new(0.0, 0.0, 0.0), &Delta::ZERO, 0.0).is_err());
}

#[test]
fn token_replay_tracks_trajectories() {
    let scenes = corpus(40, 200);
    let t = transitions_by_class(&scenes);
    let r = select_radius(&t, 64, 1.0, 0).unwrap();
    let v = build_kdisk_vocab(&t, r, 64, 1.0, 0).unwrap();
    for s in &scenes[..5] {
        for a in &s.agents {
            // Replaying one step from the true pose lands within the class radius.
            for w in a.states.windows(2) {
                let tok = v.tokenize(&local_delta(&w[0].pose, &w[1].pose), a.class).unwrap();
                let (next, _) = dynamics_step(&w[0].pose, &v.detokenize(tok, a.class).unwrap(), s.dt).unwrap();
                let rel = local_delta(&w[1].pose, &next);
                assert!(delta_distance(&rel, &Delta::ZERO, 1.0) <= r[a.class.index()] + 1e-9);
            }
        }
    }
}

#[test]
fn local_deltas_ignore_global_motion() {
    let s = &corpus(1, 9)[0];
    let g = Pose2::new(100.0, 0.0, std::f64::consts::FRAC_PI_2);
    let moved = transform_scene(s, &g);
    for (a, b) in s.agents.iter().zip(&moved.agents) {
        for (x, y) in agent_deltas(&a.states).iter().zip(agent_deltas(&b.states)) {
            assert!(delta_distance(x, &y, 1.0) < 1e-9);
        }
    }
}

#[test]
fn recentering_puts_ego_at_origin_and_undoes_motion() {
    let s = &corpus(1, 11)[0];
    let (c, m) = recenter_scene(s).unwrap();
    let ego = c.ego().unwrap().state_at(0).unwrap().pose;
    assert!(pose_close(&ego, &Pose2::new(0.0, 0.0, 0.0), 1e-12));
    let back = transform_scene(&c, &m.to_pose());
    for (a, b) in s.agents.iter().zip(&back.agents) {
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(pose_close(&x.pose, &y.pose, 1e-9));
        }
    }
    // Any prior global motion is removed by recentering.
    let g = Pose2::new(-40.0, 75.0, 2.0);
    let (c2, _) = recenter_scene(&transform_scene(s, &g)).unwrap();
    for (a, b) in c.agents.iter().zip(&c2.agents) {
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(pose_close(&x.pose, &y.pose, 1e-9));
        }
    }
}

#[test]
fn generated_scenes_validate() {
    for s in corpus(50, 300) {
        s.validate().unwrap();
        assert_eq!(s.agents.len(), 4);
    }
}
