//! Planar rigid-body world: a velocity-controlled floating hand with three
//! single-joint fingers and a free cuboid sliding on the ground.
//!
//! Hand parts are modelled as chains of discs (radius `link_radius`) along
//! the palm outline and along each finger link. Every disc that overlaps the
//! object box produces a spring-damper normal force and a regularized Coulomb
//! tangential force. The object additionally feels Coulomb ground friction
//! and any external force (disturbances, test loads).
//!
//! Control runs at two rates: [`apply_action`] is the 50 Hz high-level step
//! and runs ten [`substep`]s of 2 ms, in which the hand velocity target is
//! tracked by a proportional velocity loop and finger torques are applied
//! directly.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::HandKeyPoints;
use crate::{Error, Result, Vec2, Vec3};

fn rot(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Planar pose: position in metres and yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.position() + rot(local, self.yaw)
    }

    pub fn to_local(&self, world: Vec2) -> Vec2 {
        rot(world - self.position(), -self.yaw)
    }
}

/// Planar twist: linear velocity (m/s) and yaw rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist {
    pub fn linear(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }
}

/// Fixed hand dimensions. Fingers 0 and 1 sit stacked on the `+y` palm
/// corner at different heights, finger 2 (the thumb) opposes them on the
/// `-y` corner. Finger angle `q = 0` is fully spread; increasing `q` closes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandGeometry {
    /// Half side of the square palm.
    pub palm_half: f64,
    pub proximal_len: f64,
    pub distal_len: f64,
    /// Fixed flexion of the distal link relative to the proximal one.
    pub distal_flex: f64,
    /// Outward spread of the proximal link at `q = 0`.
    pub spread: f64,
    pub link_radius: f64,
    pub link_half_height: f64,
    pub q_max: f64,
    /// Lateral side of each finger base: +1 on the `+y` corner, -1 opposite.
    pub finger_side: [f64; 3],
    /// Height of each finger relative to the grasp plane.
    pub finger_z: [f64; 3],
    /// Height of the grasp plane above the ground.
    pub grasp_height: f64,
    /// Half height of the hand slab used for hull containment.
    pub slab_half_height: f64,
}

impl Default for HandGeometry {
    fn default() -> Self {
        Self {
            palm_half: 0.04,
            proximal_len: 0.07,
            distal_len: 0.05,
            distal_flex: 40f64.to_radians(),
            spread: 0.8,
            link_radius: 0.01,
            link_half_height: 0.008,
            q_max: 2.4,
            finger_side: [1.0, 1.0, -1.0],
            finger_z: [0.018, -0.018, 0.0],
            grasp_height: 0.03,
            slab_half_height: 0.04,
        }
    }
}

/// World-frame placement of one finger.
#[derive(Debug, Clone, Copy)]
pub struct FingerFrame {
    pub base: Vec2,
    pub knuckle: Vec2,
    pub tip: Vec2,
    pub proximal_dir: Vec2,
    pub distal_dir: Vec2,
    /// Unit normals of the inner (grasping) side of each link.
    pub proximal_inner: Vec2,
    pub distal_inner: Vec2,
}

impl HandGeometry {
    pub fn finger_base_local(&self, i: usize) -> Vec2 {
        Vec2::new(self.palm_half, self.finger_side[i] * self.palm_half)
    }

    /// Local direction angle of the proximal link of finger `i`.
    fn proximal_angle(&self, i: usize, q: f64) -> f64 {
        self.finger_side[i] * (self.spread - q)
    }

    pub fn finger_frame(&self, hand: &HandState, i: usize) -> FingerFrame {
        let side = self.finger_side[i];
        let a_prox = hand.pose.yaw + self.proximal_angle(i, hand.q[i]);
        let a_dist = a_prox - side * self.distal_flex;
        let proximal_dir = Vec2::new(a_prox.cos(), a_prox.sin());
        let distal_dir = Vec2::new(a_dist.cos(), a_dist.sin());
        let base = hand.pose.to_world(self.finger_base_local(i));
        let knuckle = base + proximal_dir * self.proximal_len;
        let tip = knuckle + distal_dir * self.distal_len;
        // Closing rotates the link clockwise for side +1, so the inner side
        // is the clockwise normal.
        let proximal_inner = -perp(proximal_dir) * side;
        let distal_inner = -perp(distal_dir) * side;
        FingerFrame { base, knuckle, tip, proximal_dir, distal_dir, proximal_inner, distal_inner }
    }

    pub fn palm_corners(&self, pose: &Pose2) -> [Vec2; 4] {
        let h = self.palm_half;
        [
            pose.to_world(Vec2::new(h, h)),
            pose.to_world(Vec2::new(-h, h)),
            pose.to_world(Vec2::new(-h, -h)),
            pose.to_world(Vec2::new(h, -h)),
        ]
    }

    /// The ten hull generators: 3 fingertips, 3 finger base joints and the 4
    /// palm corners, projected onto the ground plane.
    pub fn hull_generators(&self, hand: &HandState) -> Vec<Vec2> {
        let mut g = Vec::with_capacity(10);
        for i in 0..3 {
            let f = self.finger_frame(hand, i);
            g.push(f.tip);
            g.push(f.base);
        }
        g.extend_from_slice(&self.palm_corners(&hand.pose));
        g
    }

    /// Fingertips followed by the palm centre (centre of the inner face),
    /// with the inner normal of each.
    pub fn key_points(&self, hand: &HandState) -> HandKeyPoints {
        let mut positions = [Vec3::zeros(); 4];
        let mut normals = [Vec3::zeros(); 4];
        for i in 0..3 {
            let f = self.finger_frame(hand, i);
            positions[i] = Vec3::new(f.tip.x, f.tip.y, self.grasp_height + self.finger_z[i]);
            normals[i] = Vec3::new(f.distal_inner.x, f.distal_inner.y, 0.0);
        }
        let palm = hand.pose.to_world(Vec2::new(self.palm_half, 0.0));
        let fwd = rot(Vec2::x(), hand.pose.yaw);
        positions[3] = Vec3::new(palm.x, palm.y, self.grasp_height);
        normals[3] = Vec3::new(fwd.x, fwd.y, 0.0);
        HandKeyPoints { positions, normals }
    }

    pub fn fingertips(&self, hand: &HandState) -> [Vec3; 3] {
        let kp = self.key_points(hand);
        [kp.positions[0], kp.positions[1], kp.positions[2]]
    }
}

/// Hand configuration: base pose and twist plus finger joint state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub pose: Pose2,
    pub velocity: Twist,
    pub q: [f64; 3],
    pub qd: [f64; 3],
}

impl HandState {
    pub fn at_rest(pose: Pose2, q: [f64; 3]) -> Self {
        Self { pose, velocity: Twist::default(), q, qd: [0.0; 3] }
    }
}

/// The free cuboid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pose: Pose2,
    pub velocity: Twist,
    pub half_extents: Vec3,
    pub mass: f64,
}

impl ObjectState {
    pub fn center3(&self) -> Vec3 {
        Vec3::new(self.pose.x, self.pose.y, self.half_extents.z)
    }

    pub fn yaw_inertia(&self) -> f64 {
        let (a, b) = (self.half_extents.x, self.half_extents.y);
        self.mass * (a * a + b * b) / 3.0
    }

    pub fn speed(&self) -> f64 {
        self.velocity.linear().norm()
    }

    /// Signed distance from a world point to the box outline (negative
    /// inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let l = self.pose.to_local(p);
        let d = Vec2::new(l.x.abs() - self.half_extents.x, l.y.abs() - self.half_extents.y);
        let outside = Vec2::new(d.x.max(0.0), d.y.max(0.0)).norm();
        outside + d.x.max(d.y).min(0.0)
    }
}

/// Contact summary: inner patches touching, outer finger links touching, and
/// the four sensor force magnitudes (fingers 0..3, then palm).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactReport {
    pub n_con: usize,
    pub n_c: usize,
    pub sensor_forces: [f64; 4],
}

/// Hand-frame velocity target and finger torques.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuationCommand {
    /// Forward, lateral (m/s) and yaw rate (rad/s), in the hand frame.
    pub hand_velocity: [f64; 3],
    /// Finger joint torques (N·m); positive closes.
    pub finger_torques: [f64; 3],
}

impl ActuationCommand {
    pub fn new(hand_velocity: [f64; 3], finger_torques: [f64; 3]) -> Self {
        Self { hand_velocity, finger_torques }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self { hand_velocity: [a[0], a[1], a[2]], finger_torques: [a[3], a[4], a[5]] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let v = self.hand_velocity;
        let t = self.finger_torques;
        [v[0], v[1], v[2], t[0], t[1], t[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Saturate every channel at the actuation limits.
    pub fn clamped(&self, p: &PhysicsParams) -> Self {
        let v = self.hand_velocity;
        Self {
            hand_velocity: [
                v[0].clamp(-p.max_hand_speed, p.max_hand_speed),
                v[1].clamp(-p.max_hand_speed, p.max_hand_speed),
                v[2].clamp(-p.max_yaw_rate, p.max_yaw_rate),
            ],
            finger_torques: self.finger_torques.map(|t| t.clamp(-p.max_torque, p.max_torque)),
        }
    }
}

/// Mass of the standard cube (kg).
pub const DEFAULT_OBJECT_MASS: f64 = 1.0;

/// Physical constants of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub dt: f64,
    pub substeps: usize,
    pub gravity: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Hand/object Coulomb coefficient.
    pub contact_friction: f64,
    /// Viscous regularization of hand/object friction (N·s/m).
    pub contact_friction_damping: f64,
    pub ground_friction: f64,
    pub hand_mass: f64,
    pub hand_yaw_inertia: f64,
    /// Proportional gain of the velocity loop (1/s).
    pub velocity_gain: f64,
    pub finger_inertia: f64,
    pub finger_damping: f64,
    /// The hand centre is clamped to this half-width square.
    pub workspace_half: f64,
    pub max_hand_speed: f64,
    pub max_yaw_rate: f64,
    pub max_torque: f64,
    pub divergence_limit: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            dt: 0.002,
            substeps: 10,
            gravity: 9.81,
            contact_stiffness: 5000.0,
            contact_damping: 50.0,
            contact_friction: 0.5,
            contact_friction_damping: 20.0,
            ground_friction: 0.5,
            hand_mass: 1.0,
            hand_yaw_inertia: 0.005,
            velocity_gain: 50.0,
            finger_inertia: 1e-3,
            finger_damping: 0.05,
            workspace_half: 0.4,
            max_hand_speed: 1.0,
            max_yaw_rate: 1.0,
            max_torque: 2.0,
            divergence_limit: 1e3,
        }
    }
}

/// A timed external force on the object's centre of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedForce {
    pub force: Vec2,
    pub remaining_substeps: usize,
}

/// Prescribed object slide (used to pull the object out of the hand).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slide {
    pub velocity: Vec2,
    pub remaining_substeps: usize,
}

/// Running sums of impulses delivered to the object, by source.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpulseLedger {
    pub contact: Vec2,
    pub ground_friction: Vec2,
    pub external: Vec2,
}

impl ImpulseLedger {
    pub fn total(&self) -> Vec2 {
        self.contact + self.ground_friction + self.external
    }
}

/// One row of the optional per-substep trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time: f64,
    pub hand_x: f64,
    pub hand_y: f64,
    pub hand_yaw: f64,
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub obj_x: f64,
    pub obj_y: f64,
    pub obj_yaw: f64,
    pub n_con: usize,
    pub n_c: usize,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

/// Complete simulation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub hand: HandState,
    pub object: ObjectState,
    pub geom: HandGeometry,
    pub params: PhysicsParams,
    pub time: f64,
    pub disturbance: Option<TimedForce>,
    /// Constant external force on the object (test loads).
    pub external_force: Vec2,
    pub slide: Option<Slide>,
    /// Hand base held still (lift/shake tests).
    pub hand_frozen: bool,
    /// Ground contact enabled (disabled while the object is "lifted").
    pub ground_contact: bool,
    /// Command executed by the most recent substep, after clamping.
    pub last_command: ActuationCommand,
    pub impulses: ImpulseLedger,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRow>>,
}

impl World {
    pub fn new(hand: HandState, object: ObjectState, geom: HandGeometry, params: PhysicsParams) -> Self {
        Self {
            hand,
            object,
            geom,
            params,
            time: 0.0,
            disturbance: None,
            external_force: Vec2::zeros(),
            slide: None,
            hand_frozen: false,
            ground_contact: true,
            last_command: ActuationCommand::default(),
            impulses: ImpulseLedger::default(),
            trace: None,
        }
    }

    /// Standard cube (side 0.06 m, [`DEFAULT_OBJECT_MASS`]) at `object_pose`, hand at rest.
    pub fn with_cube(hand_pose: Pose2, q: [f64; 3], object_pose: Pose2) -> Self {
        let object = ObjectState {
            pose: object_pose,
            velocity: Twist::default(),
            half_extents: Vec3::new(0.03, 0.03, 0.03),
            mass: DEFAULT_OBJECT_MASS,
        };
        Self::new(
            HandState::at_rest(hand_pose, q),
            object,
            HandGeometry::default(),
            PhysicsParams::default(),
        )
    }

    pub fn kinetic_energy(&self) -> f64 {
        let p = &self.params;
        let h = &self.hand;
        let o = &self.object;
        0.5 * p.hand_mass * h.velocity.linear().norm_squared()
            + 0.5 * p.hand_yaw_inertia * h.velocity.omega.powi(2)
            + 0.5 * p.finger_inertia * h.qd.iter().map(|w| w * w).sum::<f64>()
            + 0.5 * o.mass * o.velocity.linear().norm_squared()
            + 0.5 * o.yaw_inertia() * o.velocity.omega.powi(2)
    }

    pub fn key_points(&self) -> HandKeyPoints {
        self.geom.key_points(&self.hand)
    }

    /// Ground-truth gap between each fingertip disc and the object box.
    pub fn fingertip_gaps(&self) -> [f64; 3] {
        std::array::from_fn(|i| {
            let f = self.geom.finger_frame(&self.hand, i);
            self.object.signed_distance(f.tip) - self.geom.link_radius
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Palm { front: bool },
    Finger { finger: usize, distal: bool },
}

/// A contact disc on the hand, sampled along the palm outline or a link.
#[derive(Debug, Clone, Copy)]
struct Disc {
    center: Vec2,
    part: Part,
    /// Inner normal of the surface this disc belongs to.
    inner: Vec2,
    /// Lever arm from the finger base (zero for palm discs).
    lever: Vec2,
    z_lo: f64,
    z_hi: f64,
}

fn hand_discs(world: &World, out: &mut Vec<Disc>) {
    out.clear();
    let g = &world.geom;
    let hand = &world.hand;
    let r = g.link_radius;
    let spacing = r;

    // Palm outline: discs inset by r so the outer boundary is the square.
    let inset = g.palm_half - r;
    let n = ((2.0 * inset) / spacing).round().max(1.0) as usize;
    let fwd = rot(Vec2::x(), hand.pose.yaw);
    let (pz_lo, pz_hi) = (g.grasp_height - g.slab_half_height, g.grasp_height + g.slab_half_height);
    for k in 0..=n {
        let t = -inset + 2.0 * inset * k as f64 / n as f64;
        for (local, front) in [
            (Vec2::new(inset, t), true),
            (Vec2::new(-inset, t), false),
            (Vec2::new(t, inset), false),
            (Vec2::new(t, -inset), false),
        ] {
            out.push(Disc {
                center: hand.pose.to_world(local),
                part: Part::Palm { front },
                inner: fwd,
                lever: Vec2::zeros(),
                z_lo: pz_lo,
                z_hi: pz_hi,
            });
        }
    }

    for i in 0..3 {
        let f = g.finger_frame(hand, i);
        let z = g.grasp_height + g.finger_z[i];
        let (z_lo, z_hi) = (z - g.link_half_height, z + g.link_half_height);
        for (start, dir, len, inner, distal) in [
            (f.base, f.proximal_dir, g.proximal_len, f.proximal_inner, false),
            (f.knuckle, f.distal_dir, g.distal_len, f.distal_inner, true),
        ] {
            let m = (len / spacing).round().max(1.0) as usize;
            let first = if distal { 1 } else { 0 };
            for k in first..=m {
                let c = start + dir * (len * k as f64 / m as f64);
                out.push(Disc {
                    center: c,
                    part: Part::Finger { finger: i, distal },
                    inner,
                    lever: c - f.base,
                    z_lo,
                    z_hi,
                });
            }
        }
    }
}

/// Forces produced by all hand/object contacts in the current state.
#[derive(Debug, Clone, Copy, Default)]
struct ContactEval {
    report: ContactReport,
    object_force: Vec2,
    object_torque: f64,
    hand_force: Vec2,
    hand_torque: f64,
    finger_torque: [f64; 3],
}

fn evaluate_contacts(world: &World, discs: &mut Vec<Disc>) -> ContactEval {
    hand_discs(world, discs);
    let p = &world.params;
    let g = &world.geom;
    let hand = &world.hand;
    let obj = &world.object;
    let r = g.link_radius;
    let reach = r + obj.half_extents.x.hypot(obj.half_extents.y);
    let obj_pos = obj.pose.position();
    let obj_top = 2.0 * obj.half_extents.z;

    let mut eval = ContactEval::default();
    let mut inner_patch = [false; 4];
    let mut outer_link = [[false; 2]; 3];

    for d in discs.iter() {
        if (d.center - obj_pos).norm() > reach || d.z_hi < 0.0 || d.z_lo > obj_top {
            continue;
        }
        // Disc centre in the box frame.
        let l = obj.pose.to_local(d.center);
        let (a, b) = (obj.half_extents.x, obj.half_extents.y);
        let clamped = Vec2::new(l.x.clamp(-a, a), l.y.clamp(-b, b));
        let (normal_local, pen) = if clamped != l {
            let delta = l - clamped;
            let dist = delta.norm();
            if dist >= r {
                continue;
            }
            // Normal from the disc towards the object.
            (-delta / dist, r - dist)
        } else {
            let dx = a - l.x.abs();
            let dy = b - l.y.abs();
            if dx < dy {
                (Vec2::new(-l.x.signum(), 0.0), r + dx)
            } else {
                (Vec2::new(0.0, -l.y.signum()), r + dy)
            }
        };
        let n = rot(normal_local, obj.pose.yaw);
        let contact = d.center + n * (r - 0.5 * pen);

        // Velocity of the disc material point.
        let rel_hand = contact - hand.pose.position();
        let mut v_part = hand.velocity.linear() + perp(rel_hand) * hand.velocity.omega;
        let mut part_mass = p.hand_mass;
        if let Part::Finger { finger, .. } = d.part {
            let joint_rate = -g.finger_side[finger] * hand.qd[finger];
            v_part += perp(d.lever) * joint_rate;
            let lever = d.lever.norm().max(0.02);
            part_mass = p.finger_inertia / (lever * lever);
        }
        let rel_obj = contact - obj_pos;
        let v_obj = obj.velocity.linear() + perp(rel_obj) * obj.velocity.omega;
        let v_rel = v_part - v_obj;
        let reduced = 1.0 / (1.0 / part_mass + 1.0 / obj.mass);
        let cap = 0.5 * reduced / p.dt;

        let closing = v_rel.dot(&n);
        let damping = (p.contact_damping * closing).clamp(-cap * closing.abs(), cap * closing.abs());
        let fn_mag = (p.contact_stiffness * pen + damping).max(0.0);
        let v_t = v_rel - n * closing;
        let vt = v_t.norm();
        let ft = if vt > 1e-12 {
            let mag = (p.contact_friction_damping * vt).min(cap * vt).min(p.contact_friction * fn_mag);
            v_t / vt * mag
        } else {
            Vec2::zeros()
        };
        // Force on the object; the hand receives the opposite.
        let f_obj = n * fn_mag + ft;
        eval.object_force += f_obj;
        eval.object_torque += cross2(rel_obj, f_obj);
        eval.hand_force -= f_obj;
        eval.hand_torque -= cross2(rel_hand, f_obj);

        let inner = n.dot(&d.inner) >= 0.0;
        match d.part {
            Part::Palm { front } => {
                if front && inner {
                    inner_patch[3] = true;
                    eval.report.sensor_forces[3] += fn_mag;
                }
            }
            Part::Finger { finger, distal } => {
                let tz = cross2(d.lever, -f_obj);
                eval.finger_torque[finger] += -g.finger_side[finger] * tz;
                if inner {
                    inner_patch[finger] = true;
                    eval.report.sensor_forces[finger] += fn_mag;
                } else {
                    outer_link[finger][distal as usize] = true;
                }
            }
        }
    }
    eval.report.n_con = inner_patch.iter().filter(|x| **x).count();
    eval.report.n_c = outer_link.iter().flatten().filter(|x| **x).count();
    eval
}

/// Classify every hand/object overlap in the current state.
pub fn detect_contacts(world: &World) -> ContactReport {
    let mut discs = Vec::new();
    evaluate_contacts(world, &mut discs).report
}

/// True if any two finger links overlap (planar overlap with overlapping
/// vertical extents). Fingers sharing a base corner are a stacked pair and
/// are not checked against each other.
pub fn self_collision(world: &World) -> bool {
    let g = &world.geom;
    let frames: Vec<FingerFrame> = (0..3).map(|i| g.finger_frame(&world.hand, i)).collect();
    for i in 0..3 {
        for j in (i + 1)..3 {
            if g.finger_side[i] == g.finger_side[j] {
                continue;
            }
            if (g.finger_z[i] - g.finger_z[j]).abs() >= 2.0 * g.link_half_height {
                continue;
            }
            let segs_i = [(frames[i].base, frames[i].knuckle), (frames[i].knuckle, frames[i].tip)];
            let segs_j = [(frames[j].base, frames[j].knuckle), (frames[j].knuckle, frames[j].tip)];
            for (a0, a1) in segs_i {
                for (b0, b1) in segs_j {
                    if segment_distance(a0, a1, b0, b1) < 2.0 * g.link_radius {
                        return true;
                    }
                }
            }
        }
    }
    false
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = if ab.norm_squared() > 0.0 { ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

fn segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
    let d1 = cross2(a1 - a0, b0 - a0);
    let d2 = cross2(a1 - a0, b1 - a0);
    let d3 = cross2(b1 - b0, a0 - b0);
    let d4 = cross2(b1 - b0, a1 - b0);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

fn check_finite(world: &World) -> Result<()> {
    let h = &world.hand;
    let o = &world.object;
    let lim = world.params.divergence_limit;
    let values = [
        h.pose.x, h.pose.y, h.pose.yaw, h.velocity.vx, h.velocity.vy, h.velocity.omega,
        h.q[0], h.q[1], h.q[2], h.qd[0], h.qd[1], h.qd[2],
        o.pose.x, o.pose.y, o.pose.yaw, o.velocity.vx, o.velocity.vy, o.velocity.omega,
    ];
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || v.abs() > lim) {
        return Err(Error::SimulationDiverged {
            time: world.time,
            detail: format!("state component {bad} outside ±{lim}"),
        });
    }
    Ok(())
}

/// Advance the world by one low-level step of `dt` seconds. The command is
/// expected to be within limits already; it is clamped again regardless.
pub fn substep(world: &mut World, command: &ActuationCommand, dt: f64) -> Result<ContactReport> {
    let mut discs = Vec::with_capacity(96);
    substep_with(world, command, dt, &mut discs)
}

fn substep_with(
    world: &mut World,
    command: &ActuationCommand,
    dt: f64,
    discs: &mut Vec<Disc>,
) -> Result<ContactReport> {
    check_finite(world)?;
    let cmd = command.clamped(&world.params);
    world.last_command = cmd;
    let contact = evaluate_contacts(world, discs);
    let p = world.params.clone();

    // Hand base: proportional velocity loop in the world frame.
    {
        let h = &mut world.hand;
        if world.hand_frozen {
            h.velocity = Twist::default();
        } else {
            let target = rot(Vec2::new(cmd.hand_velocity[0], cmd.hand_velocity[1]), h.pose.yaw);
            let acc = (target - h.velocity.linear()) * p.velocity_gain + contact.hand_force / p.hand_mass;
            let alpha = p.velocity_gain * (cmd.hand_velocity[2] - h.velocity.omega)
                + contact.hand_torque / p.hand_yaw_inertia;
            h.velocity.vx += dt * acc.x;
            h.velocity.vy += dt * acc.y;
            h.velocity.omega += dt * alpha;
            // Saturate the realized twist in the hand frame.
            let local = rot(h.velocity.linear(), -h.pose.yaw);
            let local = Vec2::new(
                local.x.clamp(-p.max_hand_speed, p.max_hand_speed),
                local.y.clamp(-p.max_hand_speed, p.max_hand_speed),
            );
            let world_v = rot(local, h.pose.yaw);
            h.velocity.vx = world_v.x;
            h.velocity.vy = world_v.y;
            h.velocity.omega = h.velocity.omega.clamp(-p.max_yaw_rate, p.max_yaw_rate);

            h.pose.x += dt * h.velocity.vx;
            h.pose.y += dt * h.velocity.vy;
            h.pose.yaw += dt * h.velocity.omega;
            let w = p.workspace_half;
            if h.pose.x.abs() > w {
                h.pose.x = h.pose.x.clamp(-w, w);
                h.velocity.vx = 0.0;
            }
            if h.pose.y.abs() > w {
                h.pose.y = h.pose.y.clamp(-w, w);
                h.velocity.vy = 0.0;
            }
        }
        for i in 0..3 {
            let acc = (cmd.finger_torques[i] - p.finger_damping * h.qd[i] + contact.finger_torque[i])
                / p.finger_inertia;
            h.qd[i] += dt * acc;
            h.q[i] += dt * h.qd[i];
            if h.q[i] < 0.0 {
                h.q[i] = 0.0;
                h.qd[i] = h.qd[i].max(0.0);
            } else if h.q[i] > world.geom.q_max {
                h.q[i] = world.geom.q_max;
                h.qd[i] = h.qd[i].min(0.0);
            }
        }
    }

    // Object: contacts, external loads, then Coulomb ground friction computed
    // as the force that would stop the body, saturated at mu * m * g.
    {
        let o = &mut world.object;
        let mut external = world.external_force;
        if let Some(d) = world.disturbance.as_mut() {
            if d.remaining_substeps > 0 {
                external += d.force;
                d.remaining_substeps -= 1;
            }
        }
        if world.disturbance.is_some_and(|d| d.remaining_substeps == 0) {
            world.disturbance = None;
        }
        let other = contact.object_force + external;
        let inertia = o.yaw_inertia();
        let mut friction = Vec2::zeros();
        let mut friction_torque = 0.0;
        if world.ground_contact {
            let normal = o.mass * p.gravity;
            let v_pred = o.velocity.linear() + other * (dt / o.mass);
            let stop = -v_pred * (o.mass / dt);
            let max_f = p.ground_friction * normal;
            friction = if stop.norm() <= max_f { stop } else { stop * (max_f / stop.norm()) };
            let w_pred = o.velocity.omega + dt * contact.object_torque / inertia;
            let stop_t = -w_pred * inertia / dt;
            let r_eff = 0.3826 * (o.half_extents.x + o.half_extents.y);
            let max_t = max_f * r_eff;
            friction_torque = stop_t.clamp(-max_t, max_t);
        }
        let total = other + friction;
        o.velocity.vx += dt * total.x / o.mass;
        o.velocity.vy += dt * total.y / o.mass;
        o.velocity.omega += dt * (contact.object_torque + friction_torque) / inertia;
        world.impulses.contact += contact.object_force * dt;
        world.impulses.ground_friction += friction * dt;
        world.impulses.external += external * dt;

        if let Some(s) = world.slide.as_mut() {
            o.velocity.vx = s.velocity.x;
            o.velocity.vy = s.velocity.y;
            o.velocity.omega = 0.0;
            s.remaining_substeps -= 1;
            if s.remaining_substeps == 0 {
                world.slide = None;
                o.pose.x += dt * o.velocity.vx;
                o.pose.y += dt * o.velocity.vy;
                o.velocity = Twist::default();
            } else {
                o.pose.x += dt * o.velocity.vx;
                o.pose.y += dt * o.velocity.vy;
            }
        } else {
            o.pose.x += dt * o.velocity.vx;
            o.pose.y += dt * o.velocity.vy;
            o.pose.yaw += dt * o.velocity.omega;
        }
    }

    world.time += dt;
    if world.trace.is_some() {
        let row = trace_row(world, &contact.report);
        if let Some(t) = world.trace.as_mut() {
            t.push(row);
        }
    }
    check_finite(world)?;
    Ok(contact.report)
}

fn trace_row(world: &World, report: &ContactReport) -> TraceRow {
    let h = &world.hand;
    let o = &world.object;
    let f = report.sensor_forces;
    TraceRow {
        time: world.time,
        hand_x: h.pose.x,
        hand_y: h.pose.y,
        hand_yaw: h.pose.yaw,
        q0: h.q[0],
        q1: h.q[1],
        q2: h.q[2],
        obj_x: o.pose.x,
        obj_y: o.pose.y,
        obj_yaw: o.pose.yaw,
        n_con: report.n_con,
        n_c: report.n_c,
        f0: f[0],
        f1: f[1],
        f2: f[2],
        f3: f[3],
    }
}

/// High-level step: clamp the command, run `substeps` substeps of `dt` and
/// return the contact report of the last one.
pub fn apply_action(world: &mut World, command: &ActuationCommand) -> Result<ContactReport> {
    if !command.is_finite() {
        return Err(crate::error::invalid("non-finite actuation command"));
    }
    let cmd = command.clamped(&world.params);
    let dt = world.params.dt;
    let mut discs = Vec::with_capacity(96);
    for _ in 0..world.params.substeps {
        substep_with(world, &cmd, dt, &mut discs)?;
    }
    Ok(evaluate_contacts(world, &mut discs).report)
}

/// Register a force of `magnitude` newtons along `direction` on the object's
/// centre of mass for the next `duration` seconds.
pub fn apply_disturbance(world: &mut World, direction: Vec2, magnitude: f64, duration: f64) {
    let n = direction.norm();
    let dir = if n > 0.0 { direction / n } else { Vec2::zeros() };
    let substeps = (duration / world.params.dt).round() as usize;
    if magnitude <= 0.0 || substeps == 0 {
        return;
    }
    world.disturbance = Some(TimedForce { force: dir * magnitude, remaining_substeps: substeps });
}

/// Write a trace as CSV with a header row.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn far_world() -> World {
        World::with_cube(Pose2::new(-0.2, 0.0, 0.0), [0.0; 3], Pose2::new(0.2, 0.0, 0.0))
    }

    #[test]
    fn zero_command_is_equilibrium() {
        let mut w = far_world();
        let before = w.clone();
        for _ in 0..50 {
            apply_action(&mut w, &ActuationCommand::default()).unwrap();
        }
        assert!((w.hand.pose.x - before.hand.pose.x).abs() < 1e-12);
        assert!((w.object.pose.x - before.object.pose.x).abs() < 1e-12);
        assert_eq!(w.hand.q, before.hand.q);
    }

    #[test]
    fn command_clamp_is_idempotent_and_saturates() {
        let p = PhysicsParams::default();
        let at = ActuationCommand::new([1.0, -1.0, 1.0], [2.0, -2.0, 2.0]);
        assert_eq!(at.clamped(&p), at);
        let over = ActuationCommand::new([10.0, -10.0, 10.0], [20.0, -20.0, 20.0]);
        assert_eq!(over.clamped(&p), at);
    }

    #[test]
    fn no_overlap_means_empty_report() {
        let r = detect_contacts(&far_world());
        assert_eq!(r, ContactReport::default());
    }

    #[test]
    fn object_against_palm_is_inner_contact() {
        // Palm front face at x = 0.04; cube face penetrates by 2 mm.
        let w = World::with_cube(Pose2::new(0.0, 0.0, 0.0), [0.0; 3], Pose2::new(0.068, 0.0, 0.0));
        let r = detect_contacts(&w);
        assert!(r.n_con >= 1);
        assert!(r.sensor_forces[3] > 0.0);
        assert_eq!(r.n_c, 0);
    }

    #[test]
    fn joint_limits_saturate() {
        let mut w = far_world();
        for _ in 0..30 {
            apply_action(&mut w, &ActuationCommand::new([0.0; 3], [2.0, 2.0, -2.0])).unwrap();
        }
        assert_eq!(w.hand.q[0], w.geom.q_max);
        assert_eq!(w.hand.q[2], 0.0);
        assert_eq!(w.hand.qd[0], 0.0);
    }

    #[test]
    fn non_finite_command_rejected() {
        let mut w = far_world();
        let cmd = ActuationCommand::new([f64::NAN, 0.0, 0.0], [0.0; 3]);
        assert!(apply_action(&mut w, &cmd).is_err());
    }

    #[test]
    fn divergent_state_is_reported() {
        let mut w = far_world();
        w.object.velocity.vx = 1e6;
        let err = substep(&mut w, &ActuationCommand::default(), 0.002).unwrap_err();
        assert!(matches!(err, Error::SimulationDiverged { .. }));
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }
}
