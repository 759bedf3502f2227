//! Browser front end for the grasp environment.
//!
//! [`Session`] holds an episode and renders it to a plain [`Scene`] that the
//! page draws on a canvas. [`Demo`] is the thin `wasm-bindgen` wrapper the
//! page talks to; it exposes three operations: start an episode (normal or
//! one of the re-grasp fixtures), drive it by hand or with a loaded
//! checkpoint, and read back the per-term reward for the current step.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use regrasp::dynamics::ActuationCommand;
use regrasp::env::{EpisodeConfig, GraspEnv, InitialState, SpecialState, StepResult};
use regrasp::eval::Policy;
use regrasp::geometry::hand_hull;
use regrasp::nn::{Checkpoint, NetworkParams};
use regrasp::reward::RewardTerm;
use regrasp::{Error, Result};

/// Everything the page needs to draw one frame, in world metres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub step: usize,
    pub time: f64,
    pub done: bool,
    pub termination: Option<String>,
    pub initial_state: String,
    pub workspace_half: f64,
    pub palm: Vec<[f64; 2]>,
    /// Base, knuckle and tip of each finger; the thumb is last.
    pub fingers: Vec<[[f64; 2]; 3]>,
    pub link_radius: f64,
    pub object: Vec<[f64; 2]>,
    pub hull: Vec<[f64; 2]>,
    /// Observed key points with whether the hand's hull encloses them.
    pub key_points: Vec<KeyPointView>,
    pub reward: Vec<TermView>,
    pub total_reward: f64,
    pub episode_return: f64,
    pub n_con: usize,
    pub n_c: usize,
    pub sensor_forces: [f64; 4],
    pub finger_angles: [f64; 3],
    pub policy_loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyPointView {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub enclosed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermView {
    pub name: &'static str,
    pub value: f64,
    pub weighted: f64,
}

fn parse_initial(kind: &str) -> Result<InitialState> {
    match kind {
        "normal" => Ok(InitialState::Normal),
        "close_fingers" => Ok(InitialState::Special(SpecialState::CloseFingers)),
        "shallow_grasp" => Ok(InitialState::Special(SpecialState::ShallowGrasp)),
        other => Err(Error::InvalidArgument(format!("unknown initial state `{other}`"))),
    }
}

fn initial_name(s: InitialState) -> String {
    match s {
        InitialState::Normal => "normal".into(),
        InitialState::Special(k) => k.name().into(),
    }
}

/// One interactive episode plus an optional trained policy.
pub struct Session {
    env: GraspEnv,
    policy: Option<NetworkParams>,
    last: Option<StepResult>,
    episode_return: f64,
}

impl Session {
    pub fn new(seed: u64) -> Result<Self> {
        let mut env = GraspEnv::new(EpisodeConfig::default(), seed)?;
        env.reset_with(InitialState::Normal);
        Ok(Self { env, policy: None, last: None, episode_return: 0.0 })
    }

    /// Starts a new episode from `kind` (`normal`, `close_fingers` or
    /// `shallow_grasp`) with a fresh seed.
    pub fn reset(&mut self, kind: &str, seed: u64) -> Result<()> {
        let initial = parse_initial(kind)?;
        self.env = GraspEnv::new(self.env.config.clone(), seed)?;
        self.env.reset_with(initial);
        self.last = None;
        self.episode_return = 0.0;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, json: &str) -> Result<()> {
        self.policy = Some(Checkpoint::from_json(json, "upload")?.params);
        Ok(())
    }

    pub fn policy_loaded(&self) -> bool {
        self.policy.is_some()
    }

    /// Advances one control step with a hand-frame command. Does nothing once
    /// the episode has ended.
    pub fn step(&mut self, command: &ActuationCommand) -> Result<()> {
        if self.env.is_done() {
            return Ok(());
        }
        let r = self.env.step(command)?;
        self.episode_return += r.reward.total;
        self.last = Some(r);
        Ok(())
    }

    /// Advances one step with the loaded policy's mean action.
    pub fn step_policy(&mut self) -> Result<()> {
        let policy = self.policy.as_ref().ok_or_else(|| Error::InvalidState("no checkpoint loaded".into()))?;
        let cmd = policy.act(&self.env.observation())?;
        self.step(&cmd)
    }

    pub fn scene(&self) -> Scene {
        let w = &self.env.world;
        let g = &w.geom;
        let xy = |v: regrasp::Vec2| [v.x, v.y];
        let fingers = (0..3)
            .map(|i| {
                let f = g.finger_frame(&w.hand, i);
                [xy(f.base), xy(f.knuckle), xy(f.tip)]
            })
            .collect();
        let o = &w.object;
        let (hx, hy) = (o.half_extents.x, o.half_extents.y);
        let object = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
            .into_iter()
            .map(|(x, y)| xy(o.pose.to_world(regrasp::Vec2::new(x, y))))
            .collect();
        let hull = hand_hull(&w.hand, g);
        let slab = regrasp::geometry::hand_hull_slab(&w.hand, g);
        let key_points = self
            .env
            .observed()
            .points
            .iter()
            .map(|p| KeyPointView { x: p.x, y: p.y, z: p.z, enclosed: slab.encloses(p) })
            .collect();
        let weights = &self.env.config.weights;
        let (terms, total) = match &self.last {
            Some(r) => (r.reward.terms(), r.reward.total),
            None => ([0.0; 6], 0.0),
        };
        let reward = RewardTerm::ALL
            .iter()
            .zip(terms)
            .map(|(t, v)| TermView { name: t.name(), value: v, weighted: weights.effective(*t) * v })
            .collect();
        let report = self.env.last_report();
        Scene {
            step: self.env.step_index(),
            time: self.env.step_index() as f64 * w.params.dt * w.params.substeps as f64,
            done: self.env.is_done(),
            termination: self.last.as_ref().and_then(|r| r.termination).map(|t| t.to_string()),
            initial_state: initial_name(self.env.initial_state()),
            workspace_half: w.params.workspace_half,
            palm: g.palm_corners(&w.hand.pose).iter().map(|c| xy(*c)).collect(),
            fingers,
            link_radius: g.link_radius,
            object,
            hull: hull.vertices.iter().map(|v| xy(*v)).collect(),
            key_points,
            reward,
            total_reward: total,
            episode_return: self.episode_return,
            n_con: report.n_con,
            n_c: report.n_c,
            sensor_forces: report.sensor_forces,
            finger_angles: w.hand.q,
            policy_loaded: self.policy.is_some(),
        }
    }
}

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Page-facing handle around a [`Session`].
#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsValue> {
        Ok(Demo { inner: Session::new(seed as u64).map_err(js_err)? })
    }

    pub fn reset(&mut self, kind: &str, seed: u32) -> std::result::Result<(), JsValue> {
        self.inner.reset(kind, seed as u64).map_err(js_err)
    }

    /// Hand velocity (m/s, m/s, rad/s) in the hand frame and finger torques
    /// (N·m); positive torque closes.
    pub fn step(&mut self, vx: f64, vy: f64, wz: f64, t0: f64, t1: f64, t2: f64) -> std::result::Result<(), JsValue> {
        self.inner.step(&ActuationCommand::new([vx, vy, wz], [t0, t1, t2])).map_err(js_err)
    }

    #[wasm_bindgen(js_name = loadCheckpoint)]
    pub fn load_checkpoint(&mut self, json: &str) -> std::result::Result<(), JsValue> {
        self.inner.load_checkpoint(json).map_err(js_err)
    }

    #[wasm_bindgen(js_name = stepPolicy)]
    pub fn step_policy(&mut self) -> std::result::Result<(), JsValue> {
        self.inner.step_policy().map_err(js_err)
    }

    /// The current frame as JSON; see [`Scene`].
    pub fn scene(&self) -> String {
        serde_json::to_string(&self.inner.scene()).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}"))
    }
}
