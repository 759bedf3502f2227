//! Evaluation protocol: task scenarios, lift and shake tests, recovery time,
//! peak-actuation audit, reward-ablation capabilities and unseen boxes.
//!
//! The planar world has no vertical axis to lift along, so a "lift" freezes
//! the hand base, switches off ground friction and pulls the object out of
//! the hand along the palm normal with its own weight for ten seconds. A
//! shake adds a force of fixed magnitude whose direction is re-drawn every
//! half second. A hold succeeds when the fraction of ground-truth key points
//! inside the hand hull never falls below half its starting value and inner
//! contact is never lost for longer than half a second.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply_disturbance, detect_contacts, ActuationCommand, World};
use crate::env::{special_initial_state, EpisodeConfig, GraspEnv, InitialState, Observation, ScheduledDisturbance, SpecialState};
use crate::error::invalid;
use crate::geometry::{cuboid_key_points, hand_hull_slab};
use crate::nn::{policy_forward, NetworkParams};
use crate::ppo::derive_seed;
use crate::reward::RewardTerm;
use crate::{Error, Result, Vec2, Vec3};

/// Minimum executed torque on every finger for a grasp attempt (N·m).
pub const GRASP_TORQUE: f64 = 0.2;
/// Minimum inner contacts for a grasp attempt.
pub const GRASP_CONTACTS: usize = 2;
/// Steps between repeated lift attempts within one trial.
pub const LIFT_RETRY_STEPS: usize = 25;
/// Fingertip distance below which a trial counts as having reached (m).
pub const REACH_DISTANCE: f64 = 0.05;

/// Something that maps observations to commands.
pub trait Policy {
    fn act(&self, obs: &Observation) -> Result<ActuationCommand>;
}

/// Deterministic policy: the mean of the network's action distribution.
impl Policy for NetworkParams {
    fn act(&self, obs: &Observation) -> Result<ActuationCommand> {
        Ok(ActuationCommand::from_slice(&policy_forward(self, obs.as_slice())?.mean))
    }
}

/// Wraps a closure as a [`Policy`].
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&Observation) -> ActuationCommand> Policy for FnPolicy<F> {
    fn act(&self, obs: &Observation) -> Result<ActuationCommand> {
        Ok((self.0)(obs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Static,
    Dynamic5N,
    Dynamic8N,
    CloseFingersRegrasp,
    ShallowGraspRegrasp,
    DynamicRegrasp,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Static,
        TaskKind::Dynamic5N,
        TaskKind::Dynamic8N,
        TaskKind::CloseFingersRegrasp,
        TaskKind::ShallowGraspRegrasp,
        TaskKind::DynamicRegrasp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Static => "static",
            TaskKind::Dynamic5N => "dynamic_5N",
            TaskKind::Dynamic8N => "dynamic_8N",
            TaskKind::CloseFingersRegrasp => "close_fingers_regrasp",
            TaskKind::ShallowGraspRegrasp => "shallow_grasp_regrasp",
            TaskKind::DynamicRegrasp => "dynamic_regrasp",
        }
    }

    pub fn is_regrasp(self) -> bool {
        matches!(self, TaskKind::CloseFingersRegrasp | TaskKind::ShallowGraspRegrasp | TaskKind::DynamicRegrasp)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub trials: usize,
    /// Full object dimensions (m).
    pub object_size: [f64; 3],
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, trials: usize, seed: u64) -> Self {
        Self { kind, trials, object_size: [0.06; 3], seed }
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|i| derive_seed(self.seed, 0xE7A1, i)).collect()
    }
}

/// Parameters of the hold tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldTest {
    pub duration: f64,
    /// Containment may not fall below this fraction of its starting value.
    pub min_containment_ratio: f64,
    pub max_contact_loss: f64,
    /// Shake force direction is re-drawn at this period (s).
    pub redraw_period: f64,
}

impl Default for HoldTest {
    fn default() -> Self {
        Self { duration: 10.0, min_containment_ratio: 0.5, max_contact_loss: 0.5, redraw_period: 0.5 }
    }
}

/// Running maxima of the executed command, hand frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Peaks {
    pub torques: [f64; 3],
    /// Forward, lateral and yaw rate.
    pub velocities: [f64; 3],
}

impl Peaks {
    pub fn record(&mut self, c: &ActuationCommand) {
        for i in 0..3 {
            self.torques[i] = self.torques[i].max(c.finger_torques[i].abs());
            self.velocities[i] = self.velocities[i].max(c.hand_velocity[i].abs());
        }
    }

    pub fn merge(&mut self, other: &Peaks) {
        for i in 0..3 {
            self.torques[i] = self.torques[i].max(other.torques[i]);
            self.velocities[i] = self.velocities[i].max(other.velocities[i]);
        }
    }

    pub fn within_limits(&self, max_speed: f64, max_yaw_rate: f64, max_torque: f64) -> bool {
        self.torques.iter().all(|t| *t <= max_torque)
            && self.velocities[0] <= max_speed
            && self.velocities[1] <= max_speed
            && self.velocities[2] <= max_yaw_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldOutcome {
    pub success: bool,
    /// Simulated seconds into the test when it failed.
    pub failure_time: Option<f64>,
    pub start_containment: f64,
    pub min_containment: f64,
    pub peaks: Peaks,
}

/// Fraction of the object's ground-truth key points inside the hand hull.
pub fn containment_fraction(world: &World) -> f64 {
    let o = &world.object;
    let cloud = cuboid_key_points(o.center3(), o.half_extents, o.pose.yaw).expect("positive extents");
    let slab = hand_hull_slab(&world.hand, &world.geom);
    slab.count_enclosed(&cloud.points) as f64 / cloud.count() as f64
}

/// Whether the world holds a grasp attempt: every finger executing more
/// than [`GRASP_TORQUE`] of closing torque and at least [`GRASP_CONTACTS`]
/// inner contacts.
pub fn grasp_precondition(world: &World) -> bool {
    world.last_command.finger_torques.iter().all(|t| *t > GRASP_TORQUE)
        && detect_contacts(world).n_con >= GRASP_CONTACTS
}

/// Unit palm normal in the world frame, pointing out of the hand.
fn palm_normal(world: &World) -> Vec2 {
    let yaw = world.hand.pose.yaw;
    Vec2::new(yaw.cos(), yaw.sin())
}

fn hold_env(world: &World, config: &EpisodeConfig, seed: u64, steps: usize) -> Result<GraspEnv> {
    let cfg = EpisodeConfig {
        horizon: steps,
        special_states: false,
        joint_limit_patience: usize::MAX,
        ..config.clone()
    };
    let mut env = GraspEnv::new(cfg, seed)?;
    env.set_disturbance(None);
    let mut w = world.clone();
    w.hand_frozen = true;
    w.ground_contact = false;
    w.hand.velocity = Default::default();
    w.external_force = palm_normal(&w) * (w.object.mass * w.params.gravity);
    w.disturbance = None;
    w.slide = None;
    w.trace = None;
    env.reset_to_world(w);
    Ok(env)
}

fn hold(world: &World, policy: &dyn Policy, config: &EpisodeConfig, shake: f64, seed: u64, test: &HoldTest) -> Result<HoldOutcome> {
    if !grasp_precondition(world) {
        return Err(Error::InvalidState(
            "hold test needs all finger torques engaged and at least two inner contacts".into(),
        ));
    }
    let dt = world.params.dt * world.params.substeps as f64;
    let steps = (test.duration / dt).round() as usize;
    let redraw = ((test.redraw_period / dt).round() as usize).max(1);
    let mut env = hold_env(world, config, seed, steps)?;
    let mut force_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5A4E, 0));
    let start = containment_fraction(&env.world);
    let threshold = test.min_containment_ratio * start;
    let mut min_c = start;
    let mut peaks = Peaks::default();
    let mut lost_since: Option<f64> = None;
    let mut obs = env.observation();
    for k in 0..steps {
        if shake > 0.0 && k % redraw == 0 {
            let a = force_rng.random_range(0.0..2.0 * std::f64::consts::PI);
            apply_disturbance(&mut env.world, Vec2::new(a.cos(), a.sin()), shake, test.redraw_period);
        }
        let cmd = policy.act(&obs)?;
        let r = env.step(&cmd)?;
        peaks.record(&r.executed);
        let t = (k + 1) as f64 * dt;
        let fail = |peaks, min_c| HoldOutcome { success: false, failure_time: Some(t), start_containment: start, min_containment: min_c, peaks };
        if r.done && r.termination != Some(crate::env::TerminationReason::Horizon) {
            return Ok(fail(peaks, min_c));
        }
        let c = containment_fraction(&env.world);
        min_c = min_c.min(c);
        if c < threshold {
            return Ok(fail(peaks, min_c));
        }
        if r.report.n_con == 0 {
            let since = *lost_since.get_or_insert(t - dt);
            if t - since > test.max_contact_loss + 1e-9 {
                return Ok(fail(peaks, min_c));
            }
        } else {
            lost_since = None;
        }
        if r.done {
            break;
        }
        obs = r.observation;
    }
    Ok(HoldOutcome { success: true, failure_time: None, start_containment: start, min_containment: min_c, peaks })
}

/// Hold against an extraction load of the object's weight for
/// `test.duration` seconds with the hand base frozen.
pub fn lift_test(world: &World, policy: &dyn Policy, config: &EpisodeConfig, seed: u64, test: &HoldTest) -> Result<HoldOutcome> {
    hold(world, policy, config, 0.0, seed, test)
}

/// As [`lift_test`] plus a force of `magnitude` newtons in a random direction
/// re-drawn every `test.redraw_period`.
pub fn shake_test(
    world: &World,
    policy: &dyn Policy,
    config: &EpisodeConfig,
    magnitude: f64,
    seed: u64,
    test: &HoldTest,
) -> Result<HoldOutcome> {
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(invalid("shake magnitude must be finite and non-negative"));
    }
    hold(world, policy, config, magnitude, seed, test)
}

/// Per-trial record written to the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// Whether the lift-test precondition was ever met.
    pub grasped: bool,
    pub grasp_time: Option<f64>,
    pub lift: bool,
    pub shake12: bool,
    pub shake15: bool,
    /// Time of the lift-passing grasp from the failure onset (displacement)
    /// for `dynamic_regrasp`, from episode start otherwise.
    pub recovery_time: Option<f64>,
    pub recovery_from_start: Option<f64>,
    pub displacement_time: Option<f64>,
    /// Onsets of outer-finger contact over the whole trial.
    pub nc_events: usize,
    /// Onsets of outer-finger contact before the lift-passing grasp.
    pub nc_events_before_grasp: usize,
    pub final_tip_distance: f64,
    pub steps: usize,
    pub termination: String,
    pub peaks: Peaks,
}

impl TrialRecord {
    /// Lift-passing grasp reached without any outer-finger contact event.
    pub fn clean_regrasp(&self) -> bool {
        self.lift && self.nc_events_before_grasp == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: TaskKind,
    pub object_size: [f64; 3],
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub lift_rate: f64,
    pub shake12_rate: f64,
    pub shake15_rate: f64,
    pub grasp_rate: f64,
    pub reach_rate: f64,
    pub clean_regrasp_rate: f64,
    pub mean_recovery_time: Option<f64>,
    pub mean_recovery_from_start: Option<f64>,
    pub peak_torques: [f64; 3],
    pub peak_velocities: [f64; 3],
    pub records: Vec<TrialRecord>,
}

impl TaskMetrics {
    pub fn from_records(task: TaskKind, object_size: [f64; 3], records: Vec<TrialRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let rate = |f: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / n;
        let mean = |v: Vec<f64>| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
        let mut peaks = Peaks::default();
        for r in &records {
            peaks.merge(&r.peaks);
        }
        Self {
            task,
            object_size,
            trials: records.len(),
            seeds: records.iter().map(|r| r.seed).collect(),
            lift_rate: rate(&|r| r.lift),
            shake12_rate: rate(&|r| r.shake12),
            shake15_rate: rate(&|r| r.shake15),
            grasp_rate: rate(&|r| r.grasped),
            reach_rate: rate(&|r| r.final_tip_distance < REACH_DISTANCE),
            clean_regrasp_rate: rate(&|r| r.clean_regrasp()),
            mean_recovery_time: mean(records.iter().filter_map(|r| r.recovery_time).collect()),
            mean_recovery_from_start: mean(records.iter().filter_map(|r| r.recovery_from_start).collect()),
            peak_torques: peaks.torques,
            peak_velocities: peaks.velocities,
            records,
        }
    }
}

fn mean_tip_distance(env: &GraspEnv) -> f64 {
    let w = &env.world;
    let cloud = env.true_key_points();
    let tips = w.geom.fingertips(&w.hand);
    tips.iter()
        .map(|t| cloud.points.iter().map(|p| (p - t).norm()).fold(f64::MAX, f64::min))
        .sum::<f64>()
        / 3.0
}

fn task_env(kind: TaskKind, config: &EpisodeConfig, seed: u64) -> Result<GraspEnv> {
    let cfg = EpisodeConfig { special_states: false, ..config.clone() };
    let mut env = GraspEnv::new(cfg, seed)?;
    match kind {
        TaskKind::Static | TaskKind::DynamicRegrasp => {
            env.reset_with(InitialState::Normal);
            env.set_disturbance(None);
            if kind == TaskKind::DynamicRegrasp {
                env.arm_displacement(0.01);
            }
        }
        TaskKind::Dynamic5N | TaskKind::Dynamic8N => {
            env.reset_with(InitialState::Normal);
            let magnitude = if kind == TaskKind::Dynamic5N { 5.0 } else { 8.0 };
            let a = env.rng().random_range(0.0..2.0 * std::f64::consts::PI);
            env.set_disturbance(Some(ScheduledDisturbance { step: 0, direction: Vec2::new(a.cos(), a.sin()), magnitude }));
        }
        TaskKind::CloseFingersRegrasp | TaskKind::ShallowGraspRegrasp => {
            let special =
                if kind == TaskKind::CloseFingersRegrasp { SpecialState::CloseFingers } else { SpecialState::ShallowGrasp };
            let w = special_initial_state(special, &env.config, env.config.hand_start);
            env.set_disturbance(None);
            env.reset_to_world(w);
        }
    }
    Ok(env)
}

/// One seeded trial of `kind`: run the policy until a grasp passes the lift
/// test (attempted when the precondition holds, at most every
/// [`LIFT_RETRY_STEPS`] steps) or the horizon ends, then shake-test the
/// passing grasp at 12 N and 15 N.
pub fn run_trial(kind: TaskKind, policy: &dyn Policy, config: &EpisodeConfig, seed: u64, test: &HoldTest) -> Result<TrialRecord> {
    let mut env = task_env(kind, config, seed)?;
    let mut obs = env.observation();
    let mut peaks = Peaks::default();
    let mut rec = TrialRecord {
        seed,
        grasped: false,
        grasp_time: None,
        lift: false,
        shake12: false,
        shake15: false,
        recovery_time: None,
        recovery_from_start: None,
        displacement_time: None,
        nc_events: 0,
        nc_events_before_grasp: 0,
        final_tip_distance: 0.0,
        steps: 0,
        termination: String::new(),
        peaks,
    };
    let mut nc_prev = env.last_report().n_c > 0;
    let mut last_attempt: Option<usize> = None;
    let mut attempt = 0u64;
    loop {
        let cmd = policy.act(&obs)?;
        let r = env.step(&cmd)?;
        rec.steps += 1;
        peaks.record(&r.executed);
        let nc_now = r.report.n_c > 0;
        if nc_now && !nc_prev {
            rec.nc_events += 1;
        }
        nc_prev = nc_now;
        if let Some(t) = env.displacement().and_then(|d| d.fired_at) {
            rec.displacement_time.get_or_insert(t);
        }
        let t = env.world.time;
        let armed = kind != TaskKind::DynamicRegrasp || rec.displacement_time.is_some();
        if armed && !r.done && grasp_precondition(&env.world) {
            if !rec.grasped {
                rec.grasped = true;
                rec.grasp_time = Some(t);
            }
            let due = last_attempt.is_none_or(|s| rec.steps - s >= LIFT_RETRY_STEPS);
            if due {
                last_attempt = Some(rec.steps);
                let s = derive_seed(seed, 0x11F7, attempt);
                attempt += 1;
                let lift = lift_test(&env.world, policy, &env.config, s, test)?;
                peaks.merge(&lift.peaks);
                if lift.success {
                    rec.lift = true;
                    rec.recovery_from_start = Some(t);
                    rec.recovery_time = Some(match rec.displacement_time {
                        Some(d) if kind == TaskKind::DynamicRegrasp => t - d,
                        _ => t,
                    });
                    rec.nc_events_before_grasp = rec.nc_events;
                    let s12 = shake_test(&env.world, policy, &env.config, 12.0, derive_seed(seed, 0x5E12, 0), test)?;
                    let s15 = shake_test(&env.world, policy, &env.config, 15.0, derive_seed(seed, 0x5E15, 0), test)?;
                    peaks.merge(&s12.peaks);
                    peaks.merge(&s15.peaks);
                    rec.shake12 = s12.success;
                    rec.shake15 = s15.success;
                    rec.termination = "lifted".into();
                    break;
                }
            }
        }
        if r.done {
            rec.termination = r.termination.map(|t| t.to_string()).unwrap_or_default();
            break;
        }
        obs = r.observation;
    }
    if !rec.lift {
        rec.nc_events_before_grasp = rec.nc_events;
    }
    rec.final_tip_distance = mean_tip_distance(&env);
    rec.peaks = peaks;
    Ok(rec)
}

/// Run `spec.trials` seeded trials and aggregate.
pub fn run_task(spec: &TaskSpec, policy: &dyn Policy, config: &EpisodeConfig) -> Result<TaskMetrics> {
    if spec.trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let cfg = EpisodeConfig { object_half_extents: spec.object_size.map(|s| 0.5 * s), ..config.clone() };
    let test = HoldTest::default();
    let records = spec
        .trial_seeds()
        .into_iter()
        .map(|s| run_trial(spec.kind, policy, &cfg, s, &test))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskMetrics::from_records(spec.kind, spec.object_size, records))
}

/// Static task repeated for each box.
pub fn unseen_object_battery(
    policy: &dyn Policy,
    config: &EpisodeConfig,
    boxes: &[[f64; 3]],
    trials: usize,
    seed: u64,
) -> Result<Vec<TaskMetrics>> {
    boxes
        .iter()
        .map(|b| run_task(&TaskSpec { kind: TaskKind::Static, trials, object_size: *b, seed }, policy, config))
        .collect()
}

/// Default unseen boxes standing in for a cylinder, a can, a bottle and a
/// block.
pub const UNSEEN_BOXES: [[f64; 3]; 4] =
    [[0.05, 0.05, 0.08], [0.066, 0.066, 0.1], [0.03, 0.03, 0.12], [0.08, 0.04, 0.05]];

/// A training variant in the ablation battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    Without(RewardTerm),
    NoSpecialStates,
}

impl Ablation {
    pub fn battery() -> Vec<Ablation> {
        let mut v: Vec<Ablation> = RewardTerm::ALL.into_iter().map(Ablation::Without).collect();
        v.push(Ablation::NoSpecialStates);
        v
    }

    pub fn label(self) -> String {
        match self {
            Ablation::Full => "full".into(),
            Ablation::Without(t) => format!("no_{}", t.name()),
            Ablation::NoSpecialStates => "no_special_states".into(),
        }
    }

    /// Apply this variant to an episode configuration.
    pub fn apply(self, config: &EpisodeConfig) -> EpisodeConfig {
        let mut c = config.clone();
        match self {
            Ablation::Full => {}
            Ablation::Without(t) => c.weights = c.weights.without(t),
            Ablation::NoSpecialStates => c.special_states = false,
        }
        c
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "none" => Ok(Ablation::Full),
            "special_states" | "no_special_states" => Ok(Ablation::NoSpecialStates),
            other => Ok(Ablation::Without(other.trim_start_matches("no_").parse()?)),
        }
    }
}

/// One row of the capability grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub variant: String,
    pub reach: bool,
    pub grasp: bool,
    pub regrasp: bool,
    pub lift: bool,
    pub reach_rate: f64,
    pub grasp_rate: f64,
    pub regrasp_rate: f64,
    pub lift_rate: f64,
}

/// Score the four capabilities of `policy`: Reach, Grasp and Lift on the
/// static task, Re-grasp on the close-fingers task. Each capability holds at
/// a rate of at least one half.
pub fn capabilities(variant: &str, policy: &dyn Policy, config: &EpisodeConfig, trials: usize, seed: u64) -> Result<Capabilities> {
    let eval_config = EpisodeConfig { weights: Default::default(), special_states: true, ..config.clone() };
    let stat = run_task(&TaskSpec::new(TaskKind::Static, trials, seed), policy, &eval_config)?;
    let close = run_task(&TaskSpec::new(TaskKind::CloseFingersRegrasp, trials, seed), policy, &eval_config)?;
    Ok(Capabilities {
        variant: variant.to_string(),
        reach: stat.reach_rate >= 0.5,
        grasp: stat.grasp_rate >= 0.5,
        regrasp: close.clean_regrasp_rate >= 0.5,
        lift: stat.lift_rate >= 0.5,
        reach_rate: stat.reach_rate,
        grasp_rate: stat.grasp_rate,
        regrasp_rate: close.clean_regrasp_rate,
        lift_rate: stat.lift_rate,
    })
}

/// Train one policy per variant with `train` and score each.
pub fn ablate(
    variants: &[Ablation],
    base: &EpisodeConfig,
    trials: usize,
    seed: u64,
    mut train: impl FnMut(Ablation, &EpisodeConfig) -> Result<NetworkParams>,
) -> Result<Vec<Capabilities>> {
    variants
        .iter()
        .map(|v| {
            let cfg = v.apply(base);
            let params = train(*v, &cfg)?;
            capabilities(&v.label(), &params, base, trials, seed)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Table with one row per task: rates, recovery times and peak actuation.
pub fn write_task_csv<W: Write>(rows: &[TaskMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "task", "object_x", "object_y", "object_z", "trials", "lift", "shake12", "shake15", "grasp", "reach", "clean_regrasp",
        "recover_s", "recover_from_start_s", "peak_torque_1", "peak_torque_2", "peak_torque_3", "peak_vx", "peak_vy",
        "peak_yaw_rate",
    ])?;
    for m in rows {
        let mut rec = vec![m.task.name().to_string()];
        rec.extend(m.object_size.iter().map(|v| format!("{v}")));
        rec.push(m.trials.to_string());
        rec.extend(
            [m.lift_rate, m.shake12_rate, m.shake15_rate, m.grasp_rate, m.reach_rate, m.clean_regrasp_rate]
                .iter()
                .map(|v| format!("{v:.4}")),
        );
        rec.push(opt(m.mean_recovery_time));
        rec.push(opt(m.mean_recovery_from_start));
        rec.extend(m.peak_torques.iter().chain(&m.peak_velocities).map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Capability grid with yes/no cells and the underlying rates.
pub fn write_capability_csv<W: Write>(rows: &[Capabilities], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
    w.write_record(["variant", "reach", "grasp", "regrasp", "lift", "reach_rate", "grasp_rate", "regrasp_rate", "lift_rate"])?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            yn(r.reach),
            yn(r.grasp),
            yn(r.regrasp),
            yn(r.lift),
            format!("{:.4}", r.reach_rate),
            format!("{:.4}", r.grasp_rate),
            format!("{:.4}", r.regrasp_rate),
            format!("{:.4}", r.lift_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Center of the object in the hand frame; handy for scripted policies.
pub fn object_in_hand_frame(world: &World) -> Vec3 {
    let local = world.hand.pose.to_local(world.object.pose.position());
    Vec3::new(local.x, local.y, world.object.center3().z)
}
