//! Rollout collection, Monte-Carlo returns, the clipped-surrogate policy
//! update, value regression and the outer training loop.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::ActuationCommand;
use crate::env::{EpisodeConfig, GraspEnv, TerminationReason, ACT_DIM, OBS_DIM};
use crate::error::invalid;
use crate::nn::{
    log_prob, log_prob_grad, policy_forward, value_forward, ActionDistribution, Checkpoint, Gradients, MlpCache,
    NetworkParams, OptimizerState, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub episodes_per_iteration: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub entropy_coef: f64,
    /// Use GAE(lambda) instead of plain Monte-Carlo advantages.
    pub use_gae: bool,
    pub gae_lambda: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 256,
            episodes_per_iteration: 16,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            entropy_coef: 0.0,
            use_gae: false,
            gae_lambda: 0.95,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma must lie in (0, 1]"));
        }
        if !(self.clip_epsilon > 0.0) {
            return Err(invalid("clip epsilon must be positive"));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.episodes_per_iteration == 0 {
            return Err(invalid("epochs, minibatch size and episodes per iteration must be positive"));
        }
        Ok(())
    }
}

/// Transitions of whole episodes, stored back to back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<[f64; OBS_DIM]>,
    /// Sampled (pre-clamp) actions.
    pub actions: Vec<[f64; ACT_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// True on the last step of each episode.
    pub dones: Vec<bool>,
    /// Unweighted reward terms per step.
    pub terms: Vec<[f64; 6]>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(
        &mut self,
        obs: [f64; OBS_DIM],
        action: [f64; ACT_DIM],
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
        terms: [f64; 6],
    ) {
        self.observations.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.terms.push(terms);
    }

    pub fn append(&mut self, other: RolloutBuffer) {
        self.observations.extend(other.observations);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.dones.extend(other.dones);
        self.terms.extend(other.terms);
        self.returns.extend(other.returns);
        self.advantages.extend(other.advantages);
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.len();
        let ok = [self.observations.len(), self.actions.len(), self.log_probs.len(), self.values.len(), self.dones.len()]
            .iter()
            .all(|l| *l == n);
        if !ok {
            return Err(invalid("rollout buffer columns have different lengths"));
        }
        Ok(())
    }

    /// Undiscounted return of each complete episode.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        for (r, d) in self.rewards.iter().zip(&self.dones) {
            acc += r;
            if *d {
                out.push(acc);
                acc = 0.0;
            }
        }
        out
    }
}

/// `R_t = r_t + gamma R_{t+1}`, restarted at every episode end.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for x in v {
        *x = (*x - mean) / std;
    }
}

/// Fill in returns and advantages. The buffer must end on an episode end.
pub fn compute_returns_advantages(buf: &mut RolloutBuffer, config: &PpoConfig) -> Result<()> {
    if buf.is_empty() {
        return Err(invalid("cannot compute returns of an empty buffer"));
    }
    buf.check_lengths()?;
    if !buf.dones.last().copied().unwrap_or(false) {
        return Err(invalid("buffer must end with a complete episode"));
    }
    buf.returns = discounted_returns(&buf.rewards, &buf.dones, config.gamma);
    buf.advantages = if config.use_gae {
        let n = buf.len();
        let mut adv = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let next_value = if buf.dones[t] { 0.0 } else { buf.values[t + 1] };
            if buf.dones[t] {
                acc = 0.0;
            }
            let delta = buf.rewards[t] + config.gamma * next_value - buf.values[t];
            acc = delta + config.gamma * config.gae_lambda * acc;
            adv[t] = acc;
        }
        adv
    } else {
        buf.returns.iter().zip(&buf.values).map(|(r, v)| r - v).collect()
    };
    if config.normalize_advantages && buf.len() > 1 {
        normalize(&mut buf.advantages);
    }
    Ok(())
}

/// Owned training samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub observations: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<[f64; ACT_DIM]>,
    pub log_probs_old: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }

    pub fn from_buffer(buf: &RolloutBuffer, indices: &[usize]) -> Self {
        Self {
            observations: indices.iter().map(|&i| buf.observations[i]).collect(),
            actions: indices.iter().map(|&i| buf.actions[i]).collect(),
            log_probs_old: indices.iter().map(|&i| buf.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| buf.advantages[i]).collect(),
            returns: indices.iter().map(|&i| buf.returns[i]).collect(),
        }
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)` for one sample.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage)
}

/// Mean clipped surrogate with old log-probs recomputed from `params_old`.
pub fn surrogate_objective(params: &NetworkParams, params_old: &NetworkParams, batch: &Batch, epsilon: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let lp = log_prob(&policy_forward(params, &batch.observations[i])?, &batch.actions[i]);
        let lp_old = log_prob(&policy_forward(params_old, &batch.observations[i])?, &batch.actions[i]);
        sum += clipped_term((lp - lp_old).exp(), batch.advantages[i], epsilon);
    }
    Ok(sum / batch.len() as f64)
}

/// Mean squared error between `V(s_t)` and `R_t`.
pub fn value_loss(params: &NetworkParams, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let e = value_forward(params, &batch.observations[i])? - batch.returns[i];
        sum += e * e;
    }
    Ok(sum / batch.len() as f64)
}

/// Losses and diagnostics of one minibatch evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MinibatchLosses {
    /// Clipped surrogate (to be maximized).
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Evaluate surrogate, value loss and entropy on `batch` using the stored old
/// log-probs, and accumulate the gradient of the loss to be *minimized*,
/// `-(surrogate + entropy_coef * entropy) + value_loss`, into `grads`.
pub fn loss_and_gradients(
    params: &NetworkParams,
    batch: &Batch,
    epsilon: f64,
    entropy_coef: f64,
    grads: &mut Gradients,
) -> Result<MinibatchLosses> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let n = batch.len() as f64;
    let log_std_free: Vec<bool> =
        params.log_std.iter().map(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(v)).collect();
    let mut out = MinibatchLosses::default();
    for i in 0..batch.len() {
        let obs = &batch.observations[i];
        if obs.len() != params.actor.input_dim() {
            return Err(invalid("observation length does not match network input"));
        }
        let x = params.normalized(obs);
        let a_cache: MlpCache = params.actor.forward_cached(&x);
        let dist = ActionDistribution {
            mean: a_cache.output().to_vec(),
            log_std: params.log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
        };
        let action = &batch.actions[i];
        let lp = log_prob(&dist, action);
        let log_ratio = lp - batch.log_probs_old[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        out.surrogate += clipped_term(ratio, adv, epsilon) / n;
        out.mean_ratio += ratio / n;
        out.approx_kl += ((ratio - 1.0) - log_ratio) / n;
        if (ratio - 1.0).abs() > epsilon {
            out.clip_fraction += 1.0 / n;
        }
        // Gradient flows only through the unclipped branch when it is the min.
        let unclipped_active = ratio * adv <= ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
        let coef = if unclipped_active { -adv * ratio / n } else { 0.0 };
        let (d_mean, d_ls) = log_prob_grad(&dist, action);
        if coef != 0.0 {
            let g_mean: Vec<f64> = d_mean.iter().map(|g| g * coef).collect();
            params.actor.backward(&a_cache, &g_mean, &mut grads.actor);
        }
        for k in 0..params.log_std.len() {
            if log_std_free[k] {
                grads.log_std[k] += coef * d_ls[k];
            }
        }

        let c_cache = params.critic.forward_cached(&x);
        let e = c_cache.output()[0] - batch.returns[i];
        out.value_loss += e * e / n;
        params.critic.backward(&c_cache, &[2.0 * e / n], &mut grads.critic);
    }
    out.entropy = ActionDistribution {
        mean: vec![0.0; params.log_std.len()],
        log_std: params.log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
    }
    .entropy();
    if entropy_coef != 0.0 {
        for k in 0..params.log_std.len() {
            if log_std_free[k] {
                grads.log_std[k] -= entropy_coef;
            }
        }
    }
    Ok(out)
}

/// Aggregate statistics of one [`update`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean probability ratio over the first epoch's minibatches, each taken
    /// before its own gradient step.
    pub mean_ratio_first_epoch: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// `epochs` passes of shuffled minibatch Adam steps on a finalized buffer.
/// On a non-finite loss or gradient the parameters are left at their last
/// finite values and an error is returned.
pub fn update(
    buf: &RolloutBuffer,
    config: &PpoConfig,
    params: &mut NetworkParams,
    optimizer: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    config.validate()?;
    if buf.is_empty() || buf.returns.len() != buf.len() || buf.advantages.len() != buf.len() {
        return Err(invalid("buffer has no computed returns/advantages"));
    }
    let mut stats = UpdateStats::default();
    let mut first_epoch_batches = 0usize;
    let mut indices: Vec<usize> = (0..buf.len()).collect();
    for epoch in 0..config.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(config.minibatch_size) {
            let batch = Batch::from_buffer(buf, chunk);
            let mut grads = Gradients::zeros_like(params);
            let l = loss_and_gradients(params, &batch, config.clip_epsilon, config.entropy_coef, &mut grads)?;
            let finite = [l.surrogate, l.value_loss, l.entropy, l.mean_ratio].iter().all(|v| v.is_finite());
            if !finite || !grads.is_finite() {
                return Err(Error::UpdateAborted(format!(
                    "non-finite loss in epoch {epoch}: surrogate {} value {} ratio {} grad norms {} / {}",
                    l.surrogate,
                    l.value_loss,
                    l.mean_ratio,
                    grads.policy_norm(),
                    grads.value_norm()
                )));
            }
            grads.clip_norm(config.max_grad_norm);
            optimizer.apply(params, &grads, config.learning_rate);
            if epoch == 0 {
                stats.mean_ratio_first_epoch += l.mean_ratio;
                first_epoch_batches += 1;
            }
            stats.policy_loss -= l.surrogate;
            stats.value_loss += l.value_loss;
            stats.entropy += l.entropy;
            stats.mean_ratio += l.mean_ratio;
            stats.clip_fraction += l.clip_fraction;
            stats.approx_kl += l.approx_kl;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches.max(1) as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.mean_ratio /= m;
    stats.clip_fraction /= m;
    stats.approx_kl /= m;
    stats.mean_ratio_first_epoch /= first_epoch_batches.max(1) as f64;
    Ok(stats)
}

/// Mix a base seed with stream indices (splitmix64 finalizer).
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRollout {
    pub buffer: RolloutBuffer,
    pub termination: TerminationReason,
}

/// Run one stochastic episode from a fresh reset of `env`.
pub fn collect_episode(env: &mut GraspEnv, params: &NetworkParams, rng: &mut ChaCha8Rng) -> Result<EpisodeRollout> {
    let mut buf = RolloutBuffer::default();
    let mut obs = env.reset();
    loop {
        let dist = policy_forward(params, obs.as_slice())?;
        let sample = dist.sample(rng);
        let lp = log_prob(&dist, &sample);
        let value = value_forward(params, obs.as_slice())?;
        let action: [f64; ACT_DIM] = sample.as_slice().try_into().map_err(|_| invalid("action size"))?;
        let result = env.step(&ActuationCommand::from_slice(&action))?;
        let termination = result.termination;
        buf.push(obs.0, action, lp, result.reward.total, value, result.done, result.reward.terms());
        if let Some(reason) = termination {
            return Ok(EpisodeRollout { buffer: buf, termination: reason });
        }
        obs = result.observation;
    }
}

/// Collect `episodes` episodes with per-episode seeds derived from
/// `(seed, iteration, episode)`, spread over `workers` threads. Results are
/// concatenated in episode order so the outcome does not depend on `workers`.
pub fn collect_rollouts(
    env_config: &EpisodeConfig,
    params: &NetworkParams,
    seed: u64,
    iteration: u64,
    episodes: usize,
    workers: usize,
) -> Result<Vec<EpisodeRollout>> {
    let run = |e: usize| -> Result<EpisodeRollout> {
        let s = derive_seed(seed, iteration, e as u64);
        let mut env = GraspEnv::new(env_config.clone(), s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, 0xA5, 1));
        collect_episode(&mut env, params, &mut rng)
    };
    let workers = workers.clamp(1, episodes.max(1));
    if workers == 1 {
        return (0..episodes).map(run).collect();
    }
    let mut slots: Vec<Option<Result<EpisodeRollout>>> = (0..episodes).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run = &run;
                scope.spawn(move || (w..episodes).step_by(workers).map(|e| (e, run(e))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (e, r) in h.join().expect("rollout worker panicked") {
                slots[e] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every episode collected")).collect()
}

/// Everything the trainer needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub workers: usize,
    pub ppo: PpoConfig,
    pub env: EpisodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 2000,
            checkpoint_every: 50,
            workers: 1,
            ppo: PpoConfig::default(),
            env: EpisodeConfig::default(),
        }
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub episodes: usize,
    pub steps: usize,
    pub dropped_episodes: usize,
    pub mean_return: f64,
    pub mean_step_reward: f64,
    #[serde(rename = "r_distTips")]
    pub r_dist_tips: f64,
    pub r_vector: f64,
    pub r_contact: f64,
    pub r_topology: f64,
    pub p_collision: f64,
    #[serde(rename = "p_objVel")]
    pub p_obj_vel: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[IterationMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    pub metrics: Vec<IterationMetrics>,
    pub checkpoints: Vec<PathBuf>,
    pub interrupted: bool,
}

/// Hooks the trainer calls while running.
pub struct TrainHooks<'a> {
    /// Checked between iterations; when set, the trainer writes a final
    /// checkpoint and stops.
    pub stop: Option<&'a AtomicBool>,
    pub on_iteration: Option<&'a mut dyn FnMut(&IterationMetrics)>,
    /// Stored verbatim in every checkpoint.
    pub config_echo: Option<serde_json::Value>,
}

impl Default for TrainHooks<'_> {
    fn default() -> Self {
        Self { stop: None, on_iteration: None, config_echo: None }
    }
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:05}.json"))
}

/// Collect, compute returns, update; repeat. When `out_dir` is given,
/// checkpoints are written every `checkpoint_every` iterations and after the
/// last one, and `metrics.csv` is rewritten after every iteration.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>, mut hooks: TrainHooks<'_>) -> Result<TrainOutcome> {
    config.ppo.validate()?;
    config.env.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, 0));
    let params = NetworkParams::new(&mut init_rng);
    let optimizer = OptimizerState::new(&params);
    train_from(config, params, optimizer, 0, out_dir, &mut hooks)
}

/// Continue training from explicit parameters, starting after `start_iteration`.
pub fn train_from(
    config: &TrainConfig,
    mut params: NetworkParams,
    mut optimizer: OptimizerState,
    start_iteration: usize,
    out_dir: Option<&Path>,
    hooks: &mut TrainHooks<'_>,
) -> Result<TrainOutcome> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX, 1));
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut interrupted = false;
    let save = |it: usize, params: &NetworkParams, opt: &OptimizerState, hooks: &TrainHooks<'_>| -> Result<Option<PathBuf>> {
        let Some(dir) = out_dir else { return Ok(None) };
        let mut ck = Checkpoint::new(it, config.seed, params.clone(), opt.clone());
        ck.config = hooks.config_echo.clone();
        let path = checkpoint_path(dir, it);
        ck.save(&path)?;
        Ok(Some(path))
    };
    let end = start_iteration + config.iterations;
    let mut last_saved = None;
    for it in start_iteration + 1..=end {
        let episodes = collect_rollouts(
            &config.env,
            &params,
            config.seed,
            it as u64,
            config.ppo.episodes_per_iteration,
            config.workers,
        )?;
        let mut buf = RolloutBuffer::default();
        let mut dropped = 0;
        let mut kept = 0;
        for ep in episodes {
            if ep.termination == TerminationReason::Diverged {
                dropped += 1;
            } else {
                kept += 1;
                buf.append(ep.buffer);
            }
        }
        if buf.is_empty() {
            return Err(Error::UpdateAborted(format!("iteration {it}: every episode diverged")));
        }
        compute_returns_advantages(&mut buf, &config.ppo)?;
        let returns = buf.episode_returns();
        let n_steps = buf.len() as f64;
        let mut term_means = [0.0; 6];
        for t in &buf.terms {
            for k in 0..6 {
                term_means[k] += t[k] / n_steps;
            }
        }
        let stats = update(&buf, &config.ppo, &mut params, &mut optimizer, &mut update_rng)?;
        let row = IterationMetrics {
            iteration: it,
            episodes: kept,
            steps: buf.len(),
            dropped_episodes: dropped,
            mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
            mean_step_reward: buf.rewards.iter().sum::<f64>() / n_steps,
            r_dist_tips: term_means[0],
            r_vector: term_means[1],
            r_contact: term_means[2],
            r_topology: term_means[3],
            p_collision: term_means[4],
            p_obj_vel: term_means[5],
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            mean_ratio: stats.mean_ratio,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
        };
        metrics.push(row);
        if let Some(cb) = hooks.on_iteration.as_mut() {
            cb(&row);
        }
        if let Some(dir) = out_dir {
            write_metrics_csv(&metrics, fs::File::create(dir.join("metrics.csv"))?)?;
        }
        let stop = hooks.stop.is_some_and(|s| s.load(Ordering::SeqCst));
        if it == end || stop || (config.checkpoint_every > 0 && it % config.checkpoint_every == 0) {
            if let Some(p) = save(it, &params, &optimizer, hooks)? {
                checkpoints.push(p);
            }
            last_saved = Some(it);
        }
        if stop {
            interrupted = true;
            break;
        }
    }
    debug_assert!(config.iterations == 0 || last_saved.is_some());
    Ok(TrainOutcome { params, optimizer, metrics, checkpoints, interrupted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_returns() {
        let r = discounted_returns(&[1.0, 1.0, 1.0], &[false, false, true], 0.5);
        assert_eq!(r, vec![1.75, 1.5, 1.0]);
        let r = discounted_returns(&[1.0, 2.0, 3.0], &[false, false, true], 0.0);
        assert_eq!(r, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn returns_stop_at_episode_boundaries() {
        let r = discounted_returns(&[1.0, 1.0, 5.0, 1.0], &[false, true, false, true], 1.0);
        assert_eq!(r, vec![2.0, 1.0, 6.0, 1.0]);
    }

    #[test]
    fn clip_arithmetic() {
        assert!((clipped_term(1.3, 1.0, 0.2) - 1.2).abs() < 1e-15);
        // Negative advantage below the band: the clipped branch is the min.
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        // Negative advantage above the band: the unclipped branch is the min.
        assert!((clipped_term(1.5, -1.0, 0.2) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn empty_buffer_rejected() {
        let mut b = RolloutBuffer::default();
        assert!(compute_returns_advantages(&mut b, &PpoConfig::default()).is_err());
    }

    #[test]
    fn gamma_out_of_range_rejected() {
        let c = PpoConfig { gamma: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PpoConfig { gamma: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }
}
