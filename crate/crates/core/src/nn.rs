//! Fully-connected actor and critic with hand-written forward and backward
//! passes, a diagonal-Gaussian action head, Adam, and JSON checkpoints.
//!
//! Parameters of an [`Mlp`] live in one flat vector, layer by layer, each
//! layer stored as its row-major weight matrix (`out x in`) followed by its
//! bias. Hidden layers use `tanh`; the output layer is linear.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ACT_DIM, OBS_DIM};
use crate::error::invalid;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const HIDDEN: usize = 64;
pub const CHECKPOINT_FORMAT: &str = "regrasp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Layer inputs recorded during a forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    pub inputs: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count(sizes)] }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero; the output layer is
    /// further multiplied by `last_scale`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], last_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let n_layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == n_layers { last_scale } else { 1.0 };
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound) * scale;
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least one layer")
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).inputs.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let n_layers = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers + 1);
        inputs.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &inputs[l];
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + b[o]
                })
                .collect();
            if l + 1 < n_layers {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            inputs.push(out);
            off += n_in * n_out + n_out;
        }
        MlpCache { inputs }
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.inputs[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grads[off + o * n_in..off + (o + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grads[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            // Propagate through W, then through the tanh of layer l-1.
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }
}

/// Fixed affine input normalization applied before both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsScale {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Default for ObsScale {
    fn default() -> Self {
        // X_r, yaw, q, d, F.
        let offset = vec![0.0, 0.0, 0.0, 0.0, 1.2, 1.2, 1.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let scale = vec![
            0.2, 0.2, 0.05, std::f64::consts::PI, 1.2, 1.2, 1.2, 0.1, 0.1, 0.1, 10.0, 10.0, 10.0, 10.0,
        ];
        Self { offset, scale }
    }
}

impl ObsScale {
    pub fn identity(dim: usize) -> Self {
        Self { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(x, (o, s))| (x - o) / s)
            .collect()
    }
}

/// Actor (mean head plus state-independent log-std) and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
    pub obs_scale: ObsScale,
}

impl NetworkParams {
    /// Default architecture `14 -> 64 -> 64 -> 6` / `14 -> 64 -> 64 -> 1`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::with_sizes(&[OBS_DIM, HIDDEN, HIDDEN, ACT_DIM], &[OBS_DIM, HIDDEN, HIDDEN, 1], rng)
    }

    pub fn with_sizes<R: Rng + ?Sized>(actor: &[usize], critic: &[usize], rng: &mut R) -> Self {
        let act_dim = *actor.last().expect("actor sizes");
        Self {
            actor: Mlp::init(actor, 0.01, rng),
            log_std: vec![-0.5; act_dim],
            critic: Mlp::init(critic, 1.0, rng),
            obs_scale: if actor[0] == OBS_DIM { ObsScale::default() } else { ObsScale::identity(actor[0]) },
        }
    }

    pub fn zeros(actor: &[usize], critic: &[usize]) -> Self {
        Self {
            actor: Mlp::zeros(actor),
            log_std: vec![0.0; *actor.last().expect("actor sizes")],
            critic: Mlp::zeros(critic),
            obs_scale: ObsScale::identity(actor[0]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.params.iter().chain(&self.log_std).chain(&self.critic.params).all(|x| x.is_finite())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.actor.input_dim() {
            return Err(invalid(format!(
                "observation length {} does not match network input {}",
                obs.len(),
                self.actor.input_dim()
            )));
        }
        Ok(())
    }

    pub fn normalized(&self, obs: &[f64]) -> Vec<f64> {
        self.obs_scale.apply(obs)
    }
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

impl ActionDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * z
            })
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 * (1.0 + LN_2PI)).sum()
    }
}

fn clamp_log_std(ls: &[f64]) -> Vec<f64> {
    ls.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect()
}

pub fn policy_forward(params: &NetworkParams, obs: &[f64]) -> Result<ActionDistribution> {
    params.check_obs(obs)?;
    let mean = params.actor.forward(&params.normalized(obs));
    Ok(ActionDistribution { mean, log_std: clamp_log_std(&params.log_std) })
}

pub fn value_forward(params: &NetworkParams, obs: &[f64]) -> Result<f64> {
    params.check_obs(obs)?;
    Ok(params.critic.forward(&params.normalized(obs))[0])
}

/// Diagonal-Gaussian log density.
pub fn log_prob(dist: &ActionDistribution, action: &[f64]) -> f64 {
    dist.mean
        .iter()
        .zip(&dist.log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Partial derivatives of [`log_prob`] with respect to the mean and the
/// (clamped) log-std.
pub fn log_prob_grad(dist: &ActionDistribution, action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(action.len());
    let mut d_log_std = Vec::with_capacity(action.len());
    for ((m, ls), a) in dist.mean.iter().zip(&dist.log_std).zip(action) {
        let inv_var = (-2.0 * ls).exp();
        let diff = a - m;
        d_mean.push(diff * inv_var);
        d_log_std.push(diff * diff * inv_var - 1.0);
    }
    (d_mean, d_log_std)
}

/// Gradient buffers matching [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &NetworkParams) -> Self {
        Self {
            actor: vec![0.0; p.actor.params.len()],
            log_std: vec![0.0; p.log_std.len()],
            critic: vec![0.0; p.critic.params.len()],
        }
    }

    pub fn policy_norm(&self) -> f64 {
        self.actor.iter().chain(&self.log_std).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn value_norm(&self) -> f64 {
        self.critic.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.iter().chain(&self.log_std).chain(&self.critic).all(|g| g.is_finite())
    }

    /// Rescale the policy and value parts independently so each norm is at
    /// most `cap`.
    pub fn clip_norm(&mut self, cap: f64) {
        let pn = self.policy_norm();
        if pn > cap {
            let s = cap / pn;
            self.actor.iter_mut().chain(self.log_std.iter_mut()).for_each(|g| *g *= s);
        }
        let vn = self.value_norm();
        if vn > cap {
            let s = cap / vn;
            self.critic.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Descend along `grads` with step size `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub actor: Adam,
    pub log_std: Adam,
    pub critic: Adam,
}

impl OptimizerState {
    pub fn new(p: &NetworkParams) -> Self {
        Self {
            actor: Adam::new(p.actor.params.len()),
            log_std: Adam::new(p.log_std.len()),
            critic: Adam::new(p.critic.params.len()),
        }
    }

    pub fn apply(&mut self, p: &mut NetworkParams, g: &Gradients, lr: f64) {
        self.actor.step(&mut p.actor.params, &g.actor, lr);
        self.log_std.step(&mut p.log_std, &g.log_std, lr);
        self.critic.step(&mut p.critic.params, &g.critic, lr);
    }
}

/// Versioned checkpoint: network, optimizer and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub iteration: usize,
    pub seed: u64,
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    /// Resolved run configuration, when written by the trainer.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(iteration: usize, seed: u64, params: NetworkParams, optimizer: OptimizerState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            iteration,
            seed,
            params,
            optimizer,
            config: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let err = |message: String| Error::Checkpoint { path: origin.to_string(), message };
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| err(format!("malformed checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(err(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", ck.version)));
        }
        let p = &ck.params;
        for (name, net) in [("actor", &p.actor), ("critic", &p.critic)] {
            if net.params.len() != Mlp::param_count(&net.sizes) {
                return Err(err(format!(
                    "{name}: {} parameters for shape {:?}",
                    net.params.len(),
                    net.sizes
                )));
            }
        }
        if p.log_std.len() != p.actor.output_dim() {
            return Err(err("log_std length does not match actor output".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Checkpoint {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(&[14, 64, 64, 6], &[14, 64, 64, 1]);
        let obs = [0.3; 14];
        let d = policy_forward(&p, &obs).unwrap();
        assert!(d.mean.iter().all(|m| *m == 0.0));
        assert_eq!(value_forward(&p, &obs).unwrap(), 0.0);
    }

    #[test]
    fn wrong_observation_length_rejected() {
        let p = NetworkParams::new(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(policy_forward(&p, &[0.0; 13]).is_err());
        assert!(value_forward(&p, &[0.0; 15]).is_err());
    }

    #[test]
    fn log_prob_at_mode() {
        let d = ActionDistribution { mean: vec![0.2; 6], log_std: vec![0.0; 6] };
        let lp = log_prob(&d, &[0.2; 6]);
        assert!((lp + 3.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((lp + 5.513_631_199_228_036).abs() < 1e-9);
        let plus: Vec<f64> = d.mean.iter().map(|m| m + 0.3).collect();
        let minus: Vec<f64> = d.mean.iter().map(|m| m - 0.3).collect();
        assert_eq!(log_prob(&d, &plus), log_prob(&d, &minus));
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = NetworkParams::new(&mut ChaCha8Rng::seed_from_u64(1));
        p.log_std = vec![-50.0, 50.0, 0.0, 0.0, 0.0, 0.0];
        let d = policy_forward(&p, &[0.0; 14]).unwrap();
        assert_eq!(d.log_std[0], LOG_STD_MIN);
        assert_eq!(d.log_std[1], LOG_STD_MAX);
        assert!(log_prob(&d, &[1e6; 6]).is_finite());
    }

    #[test]
    fn single_linear_layer_squared_loss() {
        // y = W x + b, L = 0.5 |y - t|^2 -> dW = (y - t) x^T, db = y - t.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::init(&[3, 2], 1.0, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let t = [0.1, 0.2];
        let cache = net.forward_cached(&x);
        let y = cache.output().to_vec();
        let e: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a - b).collect();
        let mut g = vec![0.0; net.params.len()];
        net.backward(&cache, &e, &mut g);
        for o in 0..2 {
            for i in 0..3 {
                assert!((g[o * 3 + i] - e[o] * x[i]).abs() < 1e-15);
            }
            assert!((g[6 + o] - e[o]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = Mlp::init(&[4, 8, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let cache = net.forward_cached(&[1.0, 2.0, 3.0, 4.0]);
        let mut g = vec![0.0; net.params.len()];
        net.backward(&cache, &[0.0, 0.0], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corrupt_checkpoint_reports_origin() {
        let err = Checkpoint::from_json("{\"format\": 3}", "x.json").unwrap_err();
        assert!(err.to_string().contains("x.json"));
        let p = NetworkParams::new(&mut ChaCha8Rng::seed_from_u64(5));
        let mut ck = Checkpoint::new(0, 1, p.clone(), OptimizerState::new(&p));
        ck.params.critic.params.pop();
        let err = Checkpoint::from_json(&ck.to_json().unwrap(), "y.json").unwrap_err();
        assert!(err.to_string().contains("critic"));
    }
}
