//! Simulator behaviour: velocity tracking, impulse balance, disturbances,
//! contact classification, dissipation, joint limits and determinism.

use proptest::prelude::*;
use regrasp::dynamics::{
    apply_action, apply_disturbance, detect_contacts, substep, ActuationCommand, HandState, Pose2, Twist, World,
};
use regrasp::Vec2;

fn far_world() -> World {
    // Object well out of the hand's path.
    World::with_cube(Pose2::new(-0.2, 0.0, 0.0), [0.0; 3], Pose2::new(0.0, -0.25, 0.0))
}

#[test]
fn velocity_tracking_over_one_second() {
    let mut w = far_world();
    let start = w.hand.pose.x;
    let cmd = ActuationCommand::new([0.5, 0.0, 0.0], [0.0; 3]);
    for _ in 0..50 {
        apply_action(&mut w, &cmd).unwrap();
    }
    let moved = w.hand.pose.x - start;
    assert!((moved - 0.5).abs() <= 0.02 * 0.5, "displacement {moved}");
    assert!(w.hand.pose.y.abs() < 1e-12);
    assert!((w.hand.velocity.vx - 0.5).abs() < 1e-6);
}

#[test]
fn zero_command_is_equilibrium() {
    let mut w = far_world();
    let before = w.clone();
    for _ in 0..20 {
        apply_action(&mut w, &ActuationCommand::default()).unwrap();
    }
    assert!((w.hand.pose.x - before.hand.pose.x).abs() < 1e-12);
    assert!((w.object.pose.x - before.object.pose.x).abs() < 1e-12);
    assert!(w.hand.q.iter().all(|q| q.abs() < 1e-12));
}

#[test]
fn pushing_conserves_impulse() {
    // Palm driven straight into the cube.
    let mut w = World::with_cube(Pose2::new(-0.1, 0.0, 0.0), [0.0; 3], Pose2::new(0.0, 0.0, 0.0));
    let p0 = w.object.velocity.linear() * w.object.mass;
    let cmd = ActuationCommand::new([0.4, 0.0, 0.0], [0.0; 3]);
    let mut touched = false;
    for _ in 0..40 {
        let r = apply_action(&mut w, &cmd).unwrap();
        touched |= r.sensor_forces[3] > 0.0;
    }
    assert!(touched, "palm never touched the object");
    assert!(w.object.velocity.vx > 0.1, "object pushed along the normal: {:?}", w.object.velocity);
    let dp = w.object.velocity.linear() * w.object.mass - p0;
    let j = w.impulses.total();
    assert!((dp - j).norm() <= 0.05 * dp.norm(), "dp {dp:?} vs impulses {j:?}");
    assert!(w.impulses.contact.x > 0.0 && w.impulses.ground_friction.x < 0.0);
}

fn slide_distance(magnitude: f64, mass: f64) -> Vec2 {
    let mut w = far_world();
    w.object.mass = mass;
    let start = w.object.pose.position();
    apply_disturbance(&mut w, Vec2::new(0.6, 0.8), magnitude, 0.3);
    for _ in 0..100 {
        apply_action(&mut w, &ActuationCommand::default()).unwrap();
    }
    w.object.pose.position() - start
}

#[test]
fn light_object_slides_along_push() {
    // 5 N against 0.1 kg * 9.81 * 0.5 = 0.49 N of friction.
    let d = slide_distance(5.0, 0.1);
    assert!(d.norm() > 0.1);
    assert!((d.normalize() - Vec2::new(0.6, 0.8)).norm() < 1e-9);
}

#[test]
fn harder_push_moves_further() {
    for mass in [0.1, 1.0] {
        let d5 = slide_distance(5.0, mass).norm();
        let d8 = slide_distance(8.0, mass).norm();
        assert!(d8 > d5, "mass {mass}: 8 N {d8} vs 5 N {d5}");
    }
}

#[test]
fn zero_push_changes_nothing() {
    let mut a = far_world();
    let mut b = far_world();
    apply_disturbance(&mut b, Vec2::new(1.0, 0.0), 0.0, 0.3);
    let cmd = ActuationCommand::new([0.2, 0.1, 0.3], [0.5, -0.2, 1.0]);
    for _ in 0..30 {
        apply_action(&mut a, &cmd).unwrap();
        apply_action(&mut b, &cmd).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn disturbance_lasts_150_substeps() {
    let mut w = far_world();
    apply_disturbance(&mut w, Vec2::new(1.0, 0.0), 20.0, 0.3);
    assert_eq!(w.disturbance.unwrap().remaining_substeps, 150);
    for _ in 0..15 {
        apply_action(&mut w, &ActuationCommand::default()).unwrap();
    }
    assert!(w.disturbance.is_none());
    assert!((w.impulses.external.x - 20.0 * 0.3).abs() < 1e-9);
}

#[test]
fn contact_classification_fixtures() {
    // Nothing touching.
    let w = far_world();
    let r = detect_contacts(&w);
    assert_eq!((r.n_con, r.n_c, r.sensor_forces), (0, 0, [0.0; 4]));

    // Cube resting against the palm's inner face.
    let w = World::with_cube(Pose2::new(0.0, 0.0, 0.0), [0.0; 3], Pose2::new(0.04 + 0.03 - 0.001, 0.0, 0.0));
    let r = detect_contacts(&w);
    assert!(r.n_con >= 1 && r.sensor_forces[3] > 0.0 && r.n_c == 0, "{r:?}");

    // Cube pressed against the back of the thumb's proximal link.
    let hand = HandState::at_rest(Pose2::new(0.0, 0.0, 0.0), [2.0; 3]);
    let w0 = World::with_cube(Pose2::new(0.0, 0.0, 0.0), [2.0; 3], Pose2::new(1.0, 1.0, 0.0));
    let f = w0.geom.finger_frame(&hand, 2);
    let mid = f.base + (f.knuckle - f.base) * 0.5;
    let out = -f.proximal_inner;
    let center = mid + out * (w0.geom.link_radius + 0.03 - 0.001);
    let yaw = out.y.atan2(out.x);
    let mut w = w0.clone();
    w.object.pose = Pose2::new(center.x, center.y, yaw);
    let r = detect_contacts(&w);
    assert!(r.n_c >= 1 && r.n_con == 0, "{r:?}");
}

#[test]
fn free_motion_dissipates_energy() {
    let mut w = far_world();
    w.object.velocity = Twist { vx: 0.4, vy: -0.2, omega: 3.0 };
    w.hand.qd = [3.0, -2.0, 1.0];
    w.hand.q = [1.0; 3];
    let mut e = w.kinetic_energy();
    let dt = w.params.dt;
    for _ in 0..2000 {
        substep(&mut w, &ActuationCommand::default(), dt).unwrap();
        let e1 = w.kinetic_energy();
        assert!(e1 <= e + 1e-12, "energy rose from {e} to {e1}");
        e = e1;
    }
}

#[test]
fn joint_limits_saturate() {
    let mut w = far_world();
    for _ in 0..100 {
        apply_action(&mut w, &ActuationCommand::new([0.0; 3], [2.0, 2.0, 2.0])).unwrap();
        assert!(w.hand.q.iter().all(|q| (0.0..=2.4).contains(q)));
    }
    assert!(w.hand.q.iter().all(|q| *q == 2.4));
    assert!(w.hand.qd.iter().all(|v| *v == 0.0));
    for _ in 0..100 {
        apply_action(&mut w, &ActuationCommand::new([0.0; 3], [-2.0, -2.0, -2.0])).unwrap();
    }
    assert!(w.hand.q.iter().all(|q| *q == 0.0));
}

#[test]
fn clamp_to_limits() {
    let p = far_world().params;
    let big = ActuationCommand::new([10.0, -10.0, 10.0], [20.0, -20.0, 20.0]);
    let c = big.clamped(&p);
    assert_eq!(c.hand_velocity, [1.0, -1.0, 1.0]);
    assert_eq!(c.finger_torques, [2.0, -2.0, 2.0]);
    assert_eq!(c.clamped(&p), c);
    let mut w = far_world();
    apply_action(&mut w, &big).unwrap();
    assert_eq!(w.last_command, c);
}

#[test]
fn trace_has_one_row_per_substep() {
    let mut w = far_world();
    w.trace = Some(Vec::new());
    for _ in 0..3 {
        apply_action(&mut w, &ActuationCommand::new([0.1, 0.0, 0.0], [0.0; 3])).unwrap();
    }
    let rows = w.trace.take().unwrap();
    assert_eq!(rows.len(), 30);
    let mut buf = Vec::new();
    regrasp::dynamics::write_trace_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("time,hand_x,hand_y,hand_yaw,q0,q1,q2,obj_x,obj_y,obj_yaw,n_con,n_c,f0,f1,f2,f3"));
    assert_eq!(text.lines().count(), 31);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn commands_are_deterministic_and_within_limits(
        cmds in prop::collection::vec(prop::array::uniform6(-5.0..5.0f64), 1..40),
        ox in -0.1..0.2f64, oy in -0.15..0.15f64, oyaw in -3.0..3.0f64,
    ) {
        let make = || World::with_cube(Pose2::new(-0.2, 0.0, 0.0), [0.0; 3], Pose2::new(ox, oy, oyaw));
        let mut a = make();
        let mut b = make();
        for c in &cmds {
            let cmd = ActuationCommand::from_slice(c);
            let ra = apply_action(&mut a, &cmd);
            let rb = apply_action(&mut b, &cmd);
            prop_assert_eq!(ra.is_ok(), rb.is_ok());
            if ra.is_err() {
                break;
            }
            prop_assert_eq!(&a, &b);
            let e = a.last_command;
            prop_assert!(e.hand_velocity.iter().take(2).all(|v| v.abs() <= 1.0));
            prop_assert!(e.hand_velocity[2].abs() <= 1.0);
            prop_assert!(e.finger_torques.iter().all(|t| t.abs() <= 2.0));
            prop_assert!(a.hand.q.iter().all(|q| (0.0..=2.4).contains(q)));
            let r = ra.unwrap();
            prop_assert!(r.n_con <= 4 && r.sensor_forces.iter().all(|f| *f >= 0.0));
        }
    }
}
