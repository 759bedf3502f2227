//! Episode wrapper around the simulator.
//!
//! An episode starts either from a normal state (hand open at a fixed start
//! pose, cube at a random spot in front of it) with probability `beta`, or
//! from one of the two special re-grasp states. Normal episodes carry one
//! lateral push on the object somewhere in the first half of the episode.
//! Each step clamps and executes the action at 50 Hz, re-observes the
//! object's key points through noise, scores the reward and checks
//! termination.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_action, apply_disturbance, self_collision, wrap_angle, ActuationCommand, ContactReport, HandGeometry,
    HandState, ObjectState, PhysicsParams, Pose2, Slide, Twist, World,
};
use crate::error::invalid;
use crate::geometry::{cuboid_key_points, hand_hull_slab, nearest_key_point_distance, observe, KeyPointCloud, ObservedCloud};
use crate::reward::{total_reward, RewardBreakdown, RewardWeights};
use crate::{Error, Result, Vec2, Vec3};

pub const OBS_DIM: usize = 14;
pub const ACT_DIM: usize = 6;

/// Flat observation: estimated object position in the hand frame (3), hand
/// yaw (1), finger angles (3), fingertip-to-nearest-key-point distances (3)
/// and sensor forces (4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn object_position(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn yaw(&self) -> f64 {
        self.0[3]
    }

    pub fn finger_angles(&self) -> [f64; 3] {
        [self.0[4], self.0[5], self.0[6]]
    }

    pub fn tip_distances(&self) -> [f64; 3] {
        [self.0[7], self.0[8], self.0[9]]
    }

    pub fn forces(&self) -> [f64; 4] {
        [self.0[10], self.0[11], self.0[12], self.0[13]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecialState {
    /// Fingers nearly closed with the object just in front of them.
    CloseFingers,
    /// Object pinched only at the fingertip pads, centre outside the hull.
    ShallowGrasp,
}

impl SpecialState {
    pub fn name(self) -> &'static str {
        match self {
            SpecialState::CloseFingers => "close_fingers",
            SpecialState::ShallowGrasp => "shallow_grasp",
        }
    }
}

impl FromStr for SpecialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "close_fingers" => Ok(SpecialState::CloseFingers),
            "shallow_grasp" => Ok(SpecialState::ShallowGrasp),
            other => Err(invalid(format!("unknown special initial state `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Normal,
    Special(SpecialState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    Horizon,
    SelfCollision,
    JointLimit,
    /// The object centre left the workspace square.
    ObjectLost,
    Diverged,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationReason::Horizon => "horizon",
            TerminationReason::SelfCollision => "self_collision",
            TerminationReason::JointLimit => "joint_limit",
            TerminationReason::ObjectLost => "object_lost",
            TerminationReason::Diverged => "diverged",
        })
    }
}

/// Episode parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub horizon: usize,
    /// Probability of a normal initial state.
    pub beta: f64,
    /// Include the special re-grasp states at all (`false` forces normal).
    pub special_states: bool,
    pub disturbance_min: f64,
    pub disturbance_max: f64,
    pub disturbance_duration: f64,
    /// Number of evenly spaced push directions; 0 draws a uniform angle.
    pub disturbance_directions: usize,
    pub hand_start: Pose2,
    pub spawn_min_radius: f64,
    pub spawn_max_radius: f64,
    /// Objects spawn within this bearing of the hand's forward axis.
    pub spawn_half_angle: f64,
    /// Object centres are kept this far inside the workspace edge.
    pub spawn_margin: f64,
    pub observation_sigma: f64,
    pub object_half_extents: [f64; 3],
    pub object_mass: f64,
    /// Consecutive steps pressed against the closing limit before the
    /// episode is terminated.
    pub joint_limit_patience: usize,
    pub weights: RewardWeights,
    pub physics: PhysicsParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            horizon: 400,
            beta: 0.7,
            special_states: true,
            disturbance_min: 3.0,
            disturbance_max: 8.0,
            disturbance_duration: 0.3,
            disturbance_directions: 4,
            hand_start: Pose2::new(-0.2, 0.0, 0.0),
            spawn_min_radius: 0.15,
            spawn_max_radius: 0.45,
            spawn_half_angle: std::f64::consts::FRAC_PI_3,
            spawn_margin: 0.15,
            observation_sigma: 0.02,
            object_half_extents: [0.03, 0.03, 0.03],
            object_mass: crate::dynamics::DEFAULT_OBJECT_MASS,
            joint_limit_patience: 10,
            weights: RewardWeights::default(),
            physics: PhysicsParams::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta must lie in [0, 1]"));
        }
        if self.disturbance_min < 0.0 || self.disturbance_max < self.disturbance_min {
            return Err(invalid("disturbance range must satisfy 0 <= min <= max"));
        }
        if self.observation_sigma < 0.0 {
            return Err(invalid("observation sigma must be non-negative"));
        }
        if self.object_half_extents.iter().any(|h| *h <= 0.0) {
            return Err(invalid("object half extents must be positive"));
        }
        if !(self.spawn_margin >= 0.0 && self.spawn_margin < self.physics.workspace_half) {
            return Err(invalid("spawn margin must lie in [0, workspace half-width)"));
        }
        Ok(())
    }
}

/// A push scheduled at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledDisturbance {
    pub step: usize,
    pub direction: Vec2,
    pub magnitude: f64,
}

/// One-shot trigger that slides the object out of a closing hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementTrigger {
    pub trigger_distance: f64,
    pub slide_distance: f64,
    pub slide_duration: f64,
    pub fired_at: Option<f64>,
}

impl DisplacementTrigger {
    pub fn new(trigger_distance: f64) -> Self {
        Self { trigger_distance, slide_distance: 0.15, slide_duration: 0.1, fired_at: None }
    }
}

/// Things that happened during a step, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepEvents {
    pub disturbance: bool,
    pub displaced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub termination: Option<TerminationReason>,
    pub report: ContactReport,
    /// Command actually executed (after clamping).
    pub executed: ActuationCommand,
    pub events: StepEvents,
}

/// The grasping MDP.
#[derive(Debug, Clone)]
pub struct GraspEnv {
    pub config: EpisodeConfig,
    pub world: World,
    rng: ChaCha8Rng,
    step_index: usize,
    done: bool,
    initial: InitialState,
    disturbance: Option<ScheduledDisturbance>,
    displacement: Option<DisplacementTrigger>,
    observed: ObservedCloud,
    report: ContactReport,
    limit_counters: [usize; 3],
}

fn object_state(config: &EpisodeConfig, pose: Pose2) -> ObjectState {
    let h = config.object_half_extents;
    ObjectState {
        pose,
        velocity: Twist::default(),
        half_extents: Vec3::new(h[0], h[1], h[2]),
        mass: config.object_mass,
    }
}

/// Finger angle at which the fingertip of finger `i` reaches lateral offset
/// `y` (hand frame), by bisection over the closing range.
fn angle_for_tip_lateral(geom: &HandGeometry, i: usize, y: f64) -> f64 {
    let side = geom.finger_side[i];
    let tip_y = |q: f64| {
        let hand = HandState::at_rest(Pose2::new(0.0, 0.0, 0.0), [q; 3]);
        geom.finger_frame(&hand, i).tip.y * side
    };
    let (mut lo, mut hi) = (0.0, geom.spread);
    // tip_y decreases as the finger closes over [0, spread].
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if tip_y(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Build one of the two special re-grasp worlds with the hand at `hand_pose`.
pub fn special_initial_state(kind: SpecialState, config: &EpisodeConfig, hand_pose: Pose2) -> World {
    let geom = HandGeometry::default();
    let h = config.object_half_extents;
    let r = geom.link_radius;
    let (q, object_local) = match kind {
        SpecialState::CloseFingers => {
            let q = [2.0; 3];
            let hand = HandState::at_rest(Pose2::new(0.0, 0.0, 0.0), q);
            // Foremost outer finger surface, then a 3 mm gap to the object.
            let front = (0..3)
                .flat_map(|i| {
                    let f = geom.finger_frame(&hand, i);
                    [f.knuckle.x, f.tip.x, f.base.x]
                })
                .fold(f64::MIN, f64::max)
                + r;
            (q, Vec2::new(front + 0.003 + h[0], 0.0))
        }
        SpecialState::ShallowGrasp => {
            // Fingertip discs press 2 mm past the object's side faces while
            // the rear face sits 1 mm beyond the fingertip line.
            let tip_y = h[1] + r - 0.002;
            let q: [f64; 3] = std::array::from_fn(|i| angle_for_tip_lateral(&geom, i, tip_y));
            let hand = HandState::at_rest(Pose2::new(0.0, 0.0, 0.0), q);
            let tip_x = (0..3).map(|i| geom.finger_frame(&hand, i).tip.x).fold(f64::MIN, f64::max);
            (q, Vec2::new(tip_x + 0.001 + h[0], 0.0))
        }
    };
    let object_pose = {
        let p = hand_pose.to_world(object_local);
        Pose2::new(p.x, p.y, hand_pose.yaw)
    };
    World::new(HandState::at_rest(hand_pose, q), object_state(config, object_pose), geom, config.physics.clone())
}

impl GraspEnv {
    pub fn new(config: EpisodeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let world = World::new(
            HandState::at_rest(config.hand_start, [0.0; 3]),
            object_state(&config, Pose2::new(0.0, 0.0, 0.0)),
            HandGeometry::default(),
            config.physics.clone(),
        );
        let mut env = Self {
            config,
            world,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step_index: 0,
            done: true,
            initial: InitialState::Normal,
            disturbance: None,
            displacement: None,
            observed: ObservedCloud::from_points(vec![]),
            report: ContactReport::default(),
            limit_counters: [0; 3],
        };
        env.reset();
        Ok(env)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn initial_state(&self) -> InitialState {
        self.initial
    }

    pub fn scheduled_disturbance(&self) -> Option<ScheduledDisturbance> {
        self.disturbance
    }

    pub fn set_disturbance(&mut self, d: Option<ScheduledDisturbance>) {
        self.disturbance = d;
    }

    pub fn arm_displacement(&mut self, trigger_distance: f64) {
        self.displacement = Some(DisplacementTrigger::new(trigger_distance));
    }

    pub fn displacement(&self) -> Option<DisplacementTrigger> {
        self.displacement
    }

    pub fn observed(&self) -> &ObservedCloud {
        &self.observed
    }

    pub fn last_report(&self) -> ContactReport {
        self.report
    }

    /// Sample an initial state per the episode distribution and reset.
    pub fn reset(&mut self) -> Observation {
        let normal = !self.config.special_states || self.rng.random::<f64>() < self.config.beta;
        let initial = if normal {
            InitialState::Normal
        } else if self.rng.random::<bool>() {
            InitialState::Special(SpecialState::CloseFingers)
        } else {
            InitialState::Special(SpecialState::ShallowGrasp)
        };
        self.reset_with(initial)
    }

    /// Reset into a specific kind of initial state.
    pub fn reset_with(&mut self, initial: InitialState) -> Observation {
        let world = match initial {
            InitialState::Normal => {
                let pose = self.sample_object_pose();
                World::new(
                    HandState::at_rest(self.config.hand_start, [0.0; 3]),
                    object_state(&self.config, pose),
                    HandGeometry::default(),
                    self.config.physics.clone(),
                )
            }
            InitialState::Special(kind) => special_initial_state(kind, &self.config, self.config.hand_start),
        };
        self.disturbance = match initial {
            InitialState::Normal => self.sample_disturbance(),
            InitialState::Special(_) => None,
        };
        self.initial = initial;
        self.reset_to_world(world)
    }

    /// Start an episode from an explicit world. The disturbance schedule is
    /// left as is.
    pub fn reset_to_world(&mut self, world: World) -> Observation {
        self.world = world;
        self.step_index = 0;
        self.done = false;
        self.displacement = None;
        self.limit_counters = [0; 3];
        self.report = crate::dynamics::detect_contacts(&self.world);
        self.refresh_observation();
        self.observation()
    }

    fn sample_object_pose(&mut self) -> Pose2 {
        let c = &self.config;
        let start = c.hand_start;
        let limit = c.physics.workspace_half - c.spawn_margin;
        loop {
            // Uniform by area over the annular sector.
            let (r0, r1) = (c.spawn_min_radius, c.spawn_max_radius);
            let u: f64 = self.rng.random();
            let radius = (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt();
            let bearing = start.yaw + self.rng.random_range(-c.spawn_half_angle..=c.spawn_half_angle);
            let yaw = self.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let x = start.x + radius * bearing.cos();
            let y = start.y + radius * bearing.sin();
            if x.abs() <= limit && y.abs() <= limit {
                return Pose2::new(x, y, yaw);
            }
        }
    }

    fn sample_disturbance(&mut self) -> Option<ScheduledDisturbance> {
        let c = &self.config;
        let half = (c.horizon / 2).max(1);
        let step = self.rng.random_range(0..half);
        let angle = if c.disturbance_directions == 0 {
            self.rng.random_range(0.0..2.0 * std::f64::consts::PI)
        } else {
            let k = self.rng.random_range(0..c.disturbance_directions);
            2.0 * std::f64::consts::PI * k as f64 / c.disturbance_directions as f64
        };
        let magnitude = if c.disturbance_max > c.disturbance_min {
            self.rng.random_range(c.disturbance_min..=c.disturbance_max)
        } else {
            c.disturbance_min
        };
        Some(ScheduledDisturbance { step, direction: Vec2::new(angle.cos(), angle.sin()), magnitude })
    }

    /// Ground-truth key points of the object in its current pose.
    pub fn true_key_points(&self) -> KeyPointCloud {
        let o = &self.world.object;
        cuboid_key_points(o.center3(), o.half_extents, o.pose.yaw).expect("positive extents")
    }

    fn hand_position3(&self) -> Vec3 {
        let p = self.world.hand.pose;
        Vec3::new(p.x, p.y, self.world.geom.grasp_height)
    }

    fn refresh_observation(&mut self) {
        let cloud = self.true_key_points();
        let hand = self.hand_position3();
        self.observed = observe(&cloud, hand, self.config.observation_sigma, &mut self.rng);
    }

    /// Assemble the observation vector from the current world and cloud.
    pub fn observation(&self) -> Observation {
        let w = &self.world;
        let pose = w.hand.pose;
        let rel = pose.to_local(Vec2::new(self.observed.estimated_center.x, self.observed.estimated_center.y));
        let rel_z = self.observed.estimated_center.z - w.geom.grasp_height;
        let tips = w.geom.fingertips(&w.hand);
        let d: [f64; 3] =
            std::array::from_fn(|i| nearest_key_point_distance(tips[i], &self.observed).unwrap_or(0.0));
        let f = self.report.sensor_forces;
        Observation([
            rel.x,
            rel.y,
            rel_z,
            wrap_angle(pose.yaw),
            w.hand.q[0],
            w.hand.q[1],
            w.hand.q[2],
            d[0],
            d[1],
            d[2],
            f[0],
            f[1],
            f[2],
            f[3],
        ])
    }

    fn reward(&self) -> Result<RewardBreakdown> {
        let w = &self.world;
        let slab = hand_hull_slab(&w.hand, &w.geom);
        total_reward(&self.config.weights, &w.key_points(), &self.observed, &slab, &self.report, &w.object)
    }

    /// Execute one 50 Hz action.
    pub fn step(&mut self, action: &ActuationCommand) -> Result<StepResult> {
        if self.done {
            return Err(Error::InvalidState("step called on a finished episode".into()));
        }
        let mut events = StepEvents::default();
        if let Some(d) = self.disturbance {
            if d.step == self.step_index {
                let dur = self.config.disturbance_duration;
                apply_disturbance(&mut self.world, d.direction, d.magnitude, dur);
                events.disturbance = true;
            }
        }

        let executed = action.clamped(&self.world.params);
        self.step_index += 1;
        match apply_action(&mut self.world, &executed) {
            Ok(report) => self.report = report,
            Err(Error::SimulationDiverged { .. }) => {
                self.done = true;
                return Ok(StepResult {
                    observation: Observation([0.0; OBS_DIM]),
                    reward: RewardBreakdown::default(),
                    done: true,
                    termination: Some(TerminationReason::Diverged),
                    report: ContactReport::default(),
                    executed,
                    events,
                });
            }
            Err(e) => return Err(e),
        }

        if let Some(trigger) = self.displacement.as_mut() {
            if trigger.fired_at.is_none() {
                let gap = self.world.fingertip_gaps().into_iter().fold(f64::MAX, f64::min);
                if gap < trigger.trigger_distance {
                    let base = self.world.hand.pose.yaw;
                    let angle = base + self.rng.random_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2);
                    let dt = self.world.params.dt;
                    let substeps = (trigger.slide_duration / dt).round().max(1.0) as usize;
                    let speed = trigger.slide_distance / (substeps as f64 * dt);
                    self.world.slide = Some(Slide {
                        velocity: Vec2::new(angle.cos(), angle.sin()) * speed,
                        remaining_substeps: substeps,
                    });
                    trigger.fired_at = Some(self.world.time);
                    events.displaced = true;
                }
            }
        }

        self.refresh_observation();
        let reward = self.reward()?;
        let observation = self.observation();

        for i in 0..3 {
            let pressed = self.world.hand.q[i] >= self.world.geom.q_max - 1e-9 && executed.finger_torques[i] > 0.0;
            self.limit_counters[i] = if pressed { self.limit_counters[i] + 1 } else { 0 };
        }
        let o = self.world.object.pose;
        let bound = self.world.params.workspace_half;
        let termination = if self_collision(&self.world) {
            Some(TerminationReason::SelfCollision)
        } else if o.x.abs() > bound || o.y.abs() > bound {
            Some(TerminationReason::ObjectLost)
        } else if self.limit_counters.iter().any(|c| *c >= self.config.joint_limit_patience) {
            Some(TerminationReason::JointLimit)
        } else if self.step_index >= self.config.horizon {
            Some(TerminationReason::Horizon)
        } else {
            None
        };
        self.done = termination.is_some();
        Ok(StepResult { observation, reward, done: self.done, termination, report: self.report, executed, events })
    }
}

/// One row of the per-step episode CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLogRow {
    pub step: usize,
    pub obs: [f64; OBS_DIM],
    pub action: [f64; ACT_DIM],
    pub r_dist_tips: f64,
    pub r_vector: f64,
    pub r_contact: f64,
    pub r_topology: f64,
    pub p_collision: f64,
    pub p_obj_vel: f64,
    pub total: f64,
    pub disturbance: bool,
    pub displaced: bool,
    pub termination: String,
}

impl EpisodeLogRow {
    pub fn new(step: usize, result: &StepResult) -> Self {
        let r = &result.reward;
        Self {
            step,
            obs: result.observation.0,
            action: result.executed.to_array(),
            r_dist_tips: r.dist_tips,
            r_vector: r.vector,
            r_contact: r.contact,
            r_topology: r.topology,
            p_collision: r.collision,
            p_obj_vel: r.obj_vel,
            total: r.total,
            disturbance: result.events.disturbance,
            displaced: result.events.displaced,
            termination: result.termination.map(|t| t.to_string()).unwrap_or_default(),
        }
    }
}

/// Write an episode log with an explicit header row.
pub fn write_episode_csv<W: Write>(rows: &[EpisodeLogRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let mut header: Vec<String> = vec!["step".into()];
    header.extend((0..OBS_DIM).map(|i| format!("obs{i}")));
    header.extend((0..ACT_DIM).map(|i| format!("act{i}")));
    header.extend(
        ["r_distTips", "r_vector", "r_contact", "r_topology", "p_collision", "p_objVel", "total", "disturbance", "displaced", "termination"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
