//! Flat JSON run configuration.
//!
//! Every key has a default; a config file only lists the keys it changes.
//! Values are resolved in order defaults < file < command-line overrides, and
//! every error names the offending key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::EpisodeConfig;
use crate::eval::TaskKind;
use crate::ppo::{PpoConfig, TrainConfig};
use crate::reward::{RewardTerm, RewardWeights, DEFAULT_WEIGHTS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    // Trainer.
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub workers: usize,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub episodes_per_iteration: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub entropy_coef: f64,
    pub use_gae: bool,
    pub gae_lambda: f64,

    // Episodes.
    pub horizon: usize,
    pub beta: f64,
    pub special_states: bool,
    pub disturbance_min: f64,
    pub disturbance_max: f64,
    pub disturbance_duration: f64,
    pub disturbance_directions: usize,
    pub spawn_min_radius: f64,
    pub spawn_max_radius: f64,
    pub spawn_half_angle: f64,
    pub observation_sigma: f64,
    /// Full object dimensions (m).
    pub object_size: [f64; 3],
    pub object_mass: f64,
    pub joint_limit_patience: usize,

    // Reward.
    pub weights: [f64; 6],
    /// Reward terms to disable, by name.
    pub drop_terms: Vec<String>,

    // Physics.
    pub physics_dt: f64,
    pub physics_substeps: usize,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub contact_friction: f64,
    pub ground_friction: f64,
    pub max_hand_speed: f64,
    pub max_yaw_rate: f64,
    pub max_torque: f64,

    // Evaluation.
    pub task: String,
    pub trials: usize,
    /// Iterations per ablation run.
    pub ablation_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let env = EpisodeConfig::default();
        let p = &env.physics;
        let t = TrainConfig::default();
        Self {
            seed: t.seed,
            out_dir: PathBuf::from("runs"),
            iterations: t.iterations,
            checkpoint_every: t.checkpoint_every,
            workers: t.workers,
            gamma: ppo.gamma,
            clip_epsilon: ppo.clip_epsilon,
            learning_rate: ppo.learning_rate,
            epochs: ppo.epochs,
            minibatch_size: ppo.minibatch_size,
            episodes_per_iteration: ppo.episodes_per_iteration,
            max_grad_norm: ppo.max_grad_norm,
            normalize_advantages: ppo.normalize_advantages,
            entropy_coef: ppo.entropy_coef,
            use_gae: ppo.use_gae,
            gae_lambda: ppo.gae_lambda,
            horizon: env.horizon,
            beta: env.beta,
            special_states: env.special_states,
            disturbance_min: env.disturbance_min,
            disturbance_max: env.disturbance_max,
            disturbance_duration: env.disturbance_duration,
            disturbance_directions: env.disturbance_directions,
            spawn_min_radius: env.spawn_min_radius,
            spawn_max_radius: env.spawn_max_radius,
            spawn_half_angle: env.spawn_half_angle,
            observation_sigma: env.observation_sigma,
            object_size: env.object_half_extents.map(|h| 2.0 * h),
            object_mass: env.object_mass,
            joint_limit_patience: env.joint_limit_patience,
            weights: DEFAULT_WEIGHTS,
            drop_terms: Vec::new(),
            physics_dt: p.dt,
            physics_substeps: p.substeps,
            contact_stiffness: p.contact_stiffness,
            contact_damping: p.contact_damping,
            contact_friction: p.contact_friction,
            ground_friction: p.ground_friction,
            max_hand_speed: p.max_hand_speed,
            max_yaw_rate: p.max_yaw_rate,
            max_torque: p.max_torque,
            task: TaskKind::Static.name().to_string(),
            trials: 100,
            ablation_iterations: 1000,
        }
    }
}

fn key_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

impl RunConfig {
    /// Resolve defaults, then `file` entries, then `overrides`, in order.
    pub fn resolve(file: &Map<String, Value>, overrides: &Map<String, Value>) -> Result<Self> {
        let defaults = match serde_json::to_value(Self::default())? {
            Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let mut merged = defaults.clone();
        for (k, v) in file.iter().chain(overrides) {
            if !defaults.contains_key(k) {
                return Err(key_err(k, "unknown key"));
            }
            // Type-check each key alone so the error can name it.
            let mut probe = defaults.clone();
            probe.insert(k.clone(), v.clone());
            if let Err(e) = serde_json::from_value::<Self>(Value::Object(probe)) {
                let msg = e.to_string();
                return Err(key_err(k, format!("type mismatch: {msg}")));
            }
            merged.insert(k.clone(), v.clone());
        }
        let config: Self = serde_json::from_value(Value::Object(merged)).map_err(|e| key_err("<config>", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str, overrides: &Map<String, Value>) -> Result<Self> {
        let file = if text.trim().is_empty() {
            Map::new()
        } else {
            match serde_json::from_str::<Value>(text).map_err(|e| key_err("<file>", format!("malformed JSON: {e}")))? {
                Value::Object(m) => m,
                _ => return Err(key_err("<file>", "top level must be a JSON object")),
            }
        };
        Self::resolve(&file, overrides)
    }

    /// `parse_config`: read `path` (if any) and apply `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Map<String, Value>) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| key_err("<file>", format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_json_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(key_err(key, format!("must be positive, got {v}"))) };
        let non_negative =
            |key: &str, v: f64| if v >= 0.0 && v.is_finite() { Ok(()) } else { Err(key_err(key, format!("must be non-negative, got {v}"))) };
        let unit = |key: &str, v: f64| if (0.0..=1.0).contains(&v) { Ok(()) } else { Err(key_err(key, format!("must lie in [0, 1], got {v}"))) };
        let count = |key: &str, v: usize| if v > 0 { Ok(()) } else { Err(key_err(key, "must be at least 1")) };

        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(key_err("gamma", format!("must lie in (0, 1], got {}", self.gamma)));
        }
        positive("clip_epsilon", self.clip_epsilon)?;
        non_negative("learning_rate", self.learning_rate)?;
        count("epochs", self.epochs)?;
        count("minibatch_size", self.minibatch_size)?;
        count("episodes_per_iteration", self.episodes_per_iteration)?;
        count("workers", self.workers)?;
        positive("max_grad_norm", self.max_grad_norm)?;
        non_negative("entropy_coef", self.entropy_coef)?;
        unit("gae_lambda", self.gae_lambda)?;
        count("horizon", self.horizon)?;
        unit("beta", self.beta)?;
        non_negative("disturbance_min", self.disturbance_min)?;
        if self.disturbance_max < self.disturbance_min {
            return Err(key_err("disturbance_max", "must be at least disturbance_min"));
        }
        non_negative("disturbance_duration", self.disturbance_duration)?;
        non_negative("spawn_min_radius", self.spawn_min_radius)?;
        if self.spawn_max_radius < self.spawn_min_radius {
            return Err(key_err("spawn_max_radius", "must be at least spawn_min_radius"));
        }
        non_negative("spawn_half_angle", self.spawn_half_angle)?;
        non_negative("observation_sigma", self.observation_sigma)?;
        for v in self.object_size {
            positive("object_size", v)?;
        }
        positive("object_mass", self.object_mass)?;
        count("joint_limit_patience", self.joint_limit_patience)?;
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(key_err("weights", "must be finite"));
        }
        for name in &self.drop_terms {
            name.parse::<RewardTerm>().map_err(|e| key_err("drop_terms", e.to_string()))?;
        }
        positive("physics_dt", self.physics_dt)?;
        count("physics_substeps", self.physics_substeps)?;
        positive("contact_stiffness", self.contact_stiffness)?;
        non_negative("contact_damping", self.contact_damping)?;
        non_negative("contact_friction", self.contact_friction)?;
        non_negative("ground_friction", self.ground_friction)?;
        positive("max_hand_speed", self.max_hand_speed)?;
        positive("max_yaw_rate", self.max_yaw_rate)?;
        positive("max_torque", self.max_torque)?;
        self.task.parse::<TaskKind>().map_err(|e| key_err("task", e.to_string()))?;
        count("trials", self.trials)?;
        Ok(())
    }

    pub fn reward_weights(&self) -> RewardWeights {
        let mut w = RewardWeights { weights: self.weights, enabled: [true; 6] };
        for name in &self.drop_terms {
            if let Ok(t) = name.parse::<RewardTerm>() {
                w = w.without(t);
            }
        }
        w
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        let mut env = EpisodeConfig {
            horizon: self.horizon,
            beta: self.beta,
            special_states: self.special_states,
            disturbance_min: self.disturbance_min,
            disturbance_max: self.disturbance_max,
            disturbance_duration: self.disturbance_duration,
            disturbance_directions: self.disturbance_directions,
            spawn_min_radius: self.spawn_min_radius,
            spawn_max_radius: self.spawn_max_radius,
            spawn_half_angle: self.spawn_half_angle,
            observation_sigma: self.observation_sigma,
            object_half_extents: self.object_size.map(|s| 0.5 * s),
            object_mass: self.object_mass,
            joint_limit_patience: self.joint_limit_patience,
            weights: self.reward_weights(),
            ..EpisodeConfig::default()
        };
        let p = &mut env.physics;
        p.dt = self.physics_dt;
        p.substeps = self.physics_substeps;
        p.contact_stiffness = self.contact_stiffness;
        p.contact_damping = self.contact_damping;
        p.contact_friction = self.contact_friction;
        p.ground_friction = self.ground_friction;
        p.max_hand_speed = self.max_hand_speed;
        p.max_yaw_rate = self.max_yaw_rate;
        p.max_torque = self.max_torque;
        env
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            clip_epsilon: self.clip_epsilon,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            episodes_per_iteration: self.episodes_per_iteration,
            max_grad_norm: self.max_grad_norm,
            normalize_advantages: self.normalize_advantages,
            entropy_coef: self.entropy_coef,
            use_gae: self.use_gae,
            gae_lambda: self.gae_lambda,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            iterations: self.iterations,
            checkpoint_every: self.checkpoint_every,
            workers: self.workers,
            ppo: self.ppo_config(),
            env: self.episode_config(),
        }
    }

    pub fn to_json_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Write the resolved configuration to `dir/config.json`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overrides(pairs: &[(&str, Value)]) -> Map<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_json_str("", &Map::new()).unwrap();
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.clip_epsilon, 0.2);
        assert_eq!(c.horizon, 400);
        assert_eq!(c.beta, 0.7);
        assert_eq!(c.max_hand_speed, 1.0);
        assert_eq!(c.max_torque, 2.0);
        assert_eq!(RunConfig::from_json_str("{}", &Map::new()).unwrap(), c);
    }

    #[test]
    fn flag_beats_file() {
        let c = RunConfig::from_json_str(r#"{"gamma": 0.9}"#, &overrides(&[("gamma", Value::from(0.95))])).unwrap();
        assert_eq!(c.gamma, 0.95);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::from_json_str(r#"{"gamma": 1.5}"#, &Map::new()).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "gamma"), "{e}");
        let e = RunConfig::from_json_str(r#"{"gama": 0.5}"#, &Map::new()).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "gama"), "{e}");
        let e = RunConfig::from_json_str(r#"{"horizon": "long"}"#, &Map::new()).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "horizon"), "{e}");
        let e = RunConfig::from_json_str(r#"{"drop_terms": ["r_nothing"]}"#, &Map::new()).unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "drop_terms"), "{e}");
    }

    #[test]
    fn drop_terms_mask_weights() {
        let c = RunConfig::from_json_str(r#"{"drop_terms": ["r_topology"]}"#, &Map::new()).unwrap();
        let w = c.reward_weights();
        assert_eq!(w.effective(RewardTerm::Topology), 0.0);
        assert_eq!(w.effective(RewardTerm::Contact), 2.0);
    }
}
