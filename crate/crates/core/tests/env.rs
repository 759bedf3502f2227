//! Episode contract: initial-state sampling, termination, determinism,
//! special re-grasp fixtures and the displacement trigger.

use regrasp::dynamics::{detect_contacts, self_collision, ActuationCommand, World};
use regrasp::env::{
    special_initial_state, EpisodeConfig, GraspEnv, InitialState, ScheduledDisturbance, SpecialState,
    TerminationReason,
};
use regrasp::geometry::{cuboid_key_points, hand_hull_slab, ObservedCloud};
use regrasp::reward::r_topology;
use regrasp::Error;

fn count_special(cfg: EpisodeConfig, seed: u64, n: usize) -> (usize, Vec<InitialState>) {
    let mut env = GraspEnv::new(cfg, seed).unwrap();
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        env.reset();
        kinds.push(env.initial_state());
    }
    (kinds.iter().filter(|k| matches!(k, InitialState::Special(_))).count(), kinds)
}

#[test]
fn beta_one_never_special() {
    let cfg = EpisodeConfig { beta: 1.0, ..Default::default() };
    assert_eq!(count_special(cfg, 3, 2000).0, 0);
}

#[test]
fn beta_zero_is_all_special_and_seeded() {
    let cfg = EpisodeConfig { beta: 0.0, ..Default::default() };
    let (n, a) = count_special(cfg.clone(), 4, 200);
    let (_, b) = count_special(cfg, 4, 200);
    assert_eq!(n, 200);
    assert_eq!(a, b);
    let close = a.iter().filter(|k| **k == InitialState::Special(SpecialState::CloseFingers)).count();
    assert!(close > 60 && close < 140, "both kinds drawn: {close}");
}

#[test]
fn special_fraction_matches_beta() {
    let (n, _) = count_special(EpisodeConfig::default(), 5, 10_000);
    let frac = n as f64 / 10_000.0;
    assert!((frac - 0.30).abs() <= 0.02, "special fraction {frac}");
}

#[test]
fn special_states_flag_disables_them() {
    let cfg = EpisodeConfig { beta: 0.0, special_states: false, ..Default::default() };
    assert_eq!(count_special(cfg, 6, 500).0, 0);
}

#[test]
fn idle_episode_hits_horizon() {
    let mut env = GraspEnv::new(EpisodeConfig::default(), 7).unwrap();
    env.reset_with(InitialState::Normal);
    let mut steps = 0;
    loop {
        let r = env.step(&ActuationCommand::default()).unwrap();
        steps += 1;
        assert_eq!(r.done, steps == 400);
        if r.done {
            assert_eq!(r.termination, Some(TerminationReason::Horizon));
            break;
        }
    }
    assert!(matches!(env.step(&ActuationCommand::default()), Err(Error::InvalidState(_))));
}

#[test]
fn persistent_closing_ends_at_joint_limit() {
    let mut env = GraspEnv::new(EpisodeConfig::default(), 8).unwrap();
    env.reset_with(InitialState::Normal);
    let close = ActuationCommand::new([0.0; 3], [2.0; 3]);
    let mut last = None;
    for _ in 0..400 {
        let r = env.step(&close).unwrap();
        if r.done {
            last = r.termination;
            break;
        }
    }
    assert_eq!(last, Some(TerminationReason::JointLimit));
    assert!(env.step_index() < 100);
}

#[test]
fn same_seed_same_stream() {
    let run = |seed: u64| {
        let mut env = GraspEnv::new(EpisodeConfig::default(), seed).unwrap();
        let mut out = Vec::new();
        for ep in 0..3 {
            env.reset();
            for t in 0..120 {
                let s = (t as f64 * 0.1 + ep as f64).sin();
                let a = ActuationCommand::new([0.3 * s, 0.1, -0.2 * s], [0.5 * s, 0.3, -0.1]);
                let r = env.step(&a).unwrap();
                out.push(r);
                if out.last().unwrap().done {
                    break;
                }
            }
        }
        out
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a, run(10));
}

#[test]
fn observation_layout() {
    let mut env = GraspEnv::new(EpisodeConfig { observation_sigma: 0.0, ..Default::default() }, 11).unwrap();
    let obs = env.reset_with(InitialState::Normal);
    assert!(obs.is_finite());
    assert_eq!(obs.finger_angles(), [0.0; 3]);
    assert_eq!(obs.forces(), [0.0; 4]);
    // The object spawns in front of the hand.
    assert!(obs.object_position()[0] > 0.0);
    assert!(obs.tip_distances().iter().all(|d| *d > 0.0));
}

#[test]
fn scheduled_disturbance_fires_once() {
    let mut env = GraspEnv::new(EpisodeConfig::default(), 12).unwrap();
    env.reset_with(InitialState::Normal);
    let d = env.scheduled_disturbance().expect("normal episodes carry a disturbance");
    assert!(d.step < 200 && (3.0..=8.0).contains(&d.magnitude));
    env.set_disturbance(Some(ScheduledDisturbance { step: 3, ..d }));
    let mut fired = Vec::new();
    for t in 0..20 {
        if env.step(&ActuationCommand::default()).unwrap().events.disturbance {
            fired.push(t);
        }
    }
    assert_eq!(fired, vec![3]);
}

#[test]
fn close_fingers_fixture_collides_when_opened_in_place() {
    let cfg = EpisodeConfig::default();
    let w = special_initial_state(SpecialState::CloseFingers, &cfg, cfg.hand_start);
    let r0 = detect_contacts(&w);
    assert_eq!((r0.n_con, r0.n_c), (0, 0), "starts just clear of the object");
    assert!(!self_collision(&w));

    // Swept geometric check: some intermediate opening angle overlaps the
    // object with the back of a finger.
    let mut any = false;
    for k in 0..=40 {
        let mut o = w.clone();
        o.hand.q = [2.0 * (1.0 - k as f64 / 40.0); 3];
        any |= detect_contacts(&o).n_c >= 1;
    }
    assert!(any);

    // And in simulation.
    let mut env = GraspEnv::new(cfg, 13).unwrap();
    env.set_disturbance(None);
    env.reset_to_world(w);
    let open = ActuationCommand::new([0.0; 3], [-2.0; 3]);
    let hit = (0..20).any(|_| env.step(&open).unwrap().report.n_c >= 1);
    assert!(hit);
}

#[test]
fn shallow_fixture_encloses_few_points() {
    let cfg = EpisodeConfig::default();
    let w: World = special_initial_state(SpecialState::ShallowGrasp, &cfg, cfg.hand_start);
    let o = &w.object;
    let cloud = cuboid_key_points(o.center3(), o.half_extents, o.pose.yaw).unwrap();
    let topo = r_topology(&hand_hull_slab(&w.hand, &w.geom), &ObservedCloud::complete(&cloud));
    assert!(topo < 4.0 / 27.0, "topology {topo}");
    let r = detect_contacts(&w);
    assert!(r.n_con >= 2 && r.n_c == 0, "{r:?}");
    assert!(!self_collision(&w));
    assert!(w.hand.q.iter().all(|q| (0.0..=2.4).contains(q)));
}

#[test]
fn displacement_trigger() {
    // Never reached: fingers stay open far from the object.
    let mut env = GraspEnv::new(EpisodeConfig::default(), 14).unwrap();
    env.reset_with(InitialState::Normal);
    env.set_disturbance(None);
    env.arm_displacement(0.0);
    for _ in 0..30 {
        assert!(!env.step(&ActuationCommand::default()).unwrap().events.displaced);
    }
    assert!(env.displacement().unwrap().fired_at.is_none());

    // Reached on the first step with a generous trigger.
    env.reset_with(InitialState::Normal);
    env.set_disturbance(None);
    env.arm_displacement(10.0);
    let start = env.world.object.pose.position();
    let mut fired = 0;
    for t in 0..10 {
        let r = env.step(&ActuationCommand::default()).unwrap();
        fired += r.events.displaced as usize;
        if t == 0 {
            assert!(r.events.displaced);
        }
    }
    // 10 steps = 0.2 s.
    let moved = (env.world.object.pose.position() - start).norm();
    assert!(moved >= 0.12, "moved {moved}");
    for _ in 0..20 {
        fired += env.step(&ActuationCommand::default()).unwrap().events.displaced as usize;
    }
    assert_eq!(fired, 1);
}

#[test]
fn invalid_config_rejected() {
    let bad = EpisodeConfig { beta: 1.5, ..Default::default() };
    assert!(GraspEnv::new(bad, 0).is_err());
    let bad = EpisodeConfig { horizon: 0, ..Default::default() };
    assert!(GraspEnv::new(bad, 0).is_err());
}

#[test]
fn object_leaving_workspace_ends_episode() {
    let mut env = GraspEnv::new(EpisodeConfig::default(), 15).unwrap();
    env.reset_with(InitialState::Normal);
    env.set_disturbance(None);
    let mut w = env.world.clone();
    w.object.pose.y = w.params.workspace_half - 0.001;
    w.object.velocity.vy = 1.0;
    env.reset_to_world(w);
    let mut reason = None;
    for _ in 0..50 {
        let r = env.step(&ActuationCommand::default()).unwrap();
        if r.done {
            reason = r.termination;
            break;
        }
    }
    assert_eq!(reason, Some(TerminationReason::ObjectLost));
}

#[test]
fn spawns_stay_inside_margin() {
    let cfg = EpisodeConfig::default();
    let limit = cfg.physics.workspace_half - cfg.spawn_margin;
    let mut env = GraspEnv::new(cfg, 16).unwrap();
    for _ in 0..2000 {
        env.reset_with(InitialState::Normal);
        let p = env.world.object.pose;
        assert!(p.x.abs() <= limit && p.y.abs() <= limit);
        let d = (p.position() - env.world.hand.pose.position()).norm();
        assert!((0.15..=0.45).contains(&d));
    }
}
