//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regrasp::dynamics::{HandState, Pose2};
use regrasp::env::{ACT_DIM, OBS_DIM};
use regrasp::geometry::{convex_hull, cuboid_key_points, HullSlab, ObservedCloud};
use regrasp::nn::{log_prob, policy_forward, NetworkParams};
use regrasp::ppo::{clipped_term, value_loss, Batch};
use regrasp::{Vec2, Vec3};

pub fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Directed hull edges by O(n^3) enumeration: `(i, j)` is an edge when every
/// other point lies strictly left of it or on the closed segment.
pub fn brute_force_edges(points: &[Vec2]) -> Vec<(Vec2, Vec2)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    let mut edges = Vec::new();
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if i == j {
                continue;
            }
            let ok = (0..pts.len()).filter(|&k| k != i && k != j).all(|k| {
                let c = cross(pts[i], pts[j], pts[k]);
                if c > 0.0 {
                    return true;
                }
                if c < 0.0 {
                    return false;
                }
                let d = pts[j] - pts[i];
                let t = (pts[k] - pts[i]).dot(&d) / d.norm_squared();
                (0.0..=1.0).contains(&t)
            });
            if ok {
                edges.push((pts[i], pts[j]));
            }
        }
    }
    edges
}

pub fn sorted(mut v: Vec<Vec2>) -> Vec<Vec2> {
    v.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    v.dedup();
    v
}

pub fn random_hand(rng: &mut ChaCha8Rng) -> HandState {
    let pose = Pose2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.2..3.2));
    let q = [rng.random_range(0.0..2.4), rng.random_range(0.0..2.4), rng.random_range(0.0..2.4)];
    HandState::at_rest(pose, q)
}

pub const SMALL_ACTOR: [usize; 4] = [OBS_DIM, 8, 8, ACT_DIM];

pub const SMALL_CRITIC: [usize; 4] = [OBS_DIM, 8, 8, 1];

pub fn random_params(rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut p = NetworkParams::with_sizes(&SMALL_ACTOR, &SMALL_CRITIC, rng);
    for w in p.actor.params.iter_mut().chain(p.critic.params.iter_mut()) {
        *w = rng.random_range(-0.6..0.6);
    }
    for ls in &mut p.log_std {
        *ls = rng.random_range(-1.0..0.5);
    }
    p
}

pub fn random_obs(rng: &mut ChaCha8Rng) -> [f64; OBS_DIM] {
    std::array::from_fn(|_| rng.random_range(-1.0..1.0) * 2.0)
}

pub fn random_batch(p: &NetworkParams, rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let mut b = Batch::default();
    for i in 0..n {
        let obs = random_obs(rng);
        let d = policy_forward(p, &obs).unwrap();
        let a = d.sample(rng);
        let lp = log_prob(&d, &a);
        // Old log-probs set so ratios sit at 1, in the clipped region and in
        // the unclipped region, well away from the clip kinks.
        let shift = [0.0, -0.5, 0.5, -0.1, 0.1][i % 5];
        b.observations.push(obs);
        b.actions.push(std::array::from_fn(|k| a[k]));
        b.log_probs_old.push(lp + shift);
        b.advantages.push(StandardNormal.sample(rng));
        b.returns.push(rng.random_range(-2.0..2.0));
    }
    b
}

pub fn minimized_loss(p: &NetworkParams, batch: &Batch, eps: f64) -> f64 {
    let n = batch.len() as f64;
    let mut surr = 0.0;
    for i in 0..batch.len() {
        let lp = log_prob(&policy_forward(p, &batch.observations[i]).unwrap(), &batch.actions[i]);
        surr += clipped_term((lp - batch.log_probs_old[i]).exp(), batch.advantages[i], eps) / n;
    }
    -surr + value_loss(p, batch).unwrap()
}

pub fn flat(p: &NetworkParams) -> Vec<f64> {
    p.actor.params.iter().chain(&p.log_std).chain(&p.critic.params).copied().collect()
}

pub fn set_flat(p: &mut NetworkParams, i: usize, v: f64) {
    let (na, nl) = (p.actor.params.len(), p.log_std.len());
    if i < na {
        p.actor.params[i] = v;
    } else if i < na + nl {
        p.log_std[i - na] = v;
    } else {
        p.critic.params[i - na - nl] = v;
    }
}

pub fn finite_difference(p: &NetworkParams, f: impl Fn(&NetworkParams) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let base = flat(p);
    let mut q = p.clone();
    (0..base.len())
        .map(|i| {
            set_flat(&mut q, i, base[i] + h);
            let up = f(&q);
            set_flat(&mut q, i, base[i] - h);
            let down = f(&q);
            set_flat(&mut q, i, base[i]);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps components that
/// are zero up to rounding from dominating.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6)).fold(0.0, f64::max)
}

pub fn unit_cube() -> ObservedCloud {
    ObservedCloud::complete(&cuboid_key_points(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5), 0.0).unwrap())
}

pub fn square_slab(lo: f64, hi: f64, z: f64, half_height: f64) -> HullSlab {
    let hull = convex_hull(&[Vec2::new(lo, lo), Vec2::new(hi, lo), Vec2::new(hi, hi), Vec2::new(lo, hi)]);
    HullSlab { hull, z_center: z, half_height }
}

/// Terms in the order (distTips, vector, contact, topology, collision,
/// objVel) and the total under weights (1, 1, 2, 10, -1, -2), worked by hand.
pub const FIXTURES: [([f64; 6], f64); 20] = [
    ([0.0, 0.0, 0.0, 4.0 / 27.0, 0.0, 0.0], 1.4814814814814814),
    ([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0),
    ([0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1.0),
    ([0.0, 0.0, 3.0, 0.0, 0.0, 0.0], 6.0),
    ([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 10.0),
    ([0.0, 0.0, 0.0, 0.0, 2.0, 0.0], -2.0),
    ([0.0, 0.0, 0.0, 0.0, 0.0, 0.5], -1.0),
    ([0.5, 0.5, 1.0, 0.5, 0.0, 0.0], 8.0),
    ([0.25, -0.5, 2.0, 0.25, 1.0, 0.1], 5.05),
    ([1.0, 1.0, 4.0, 1.0, 0.0, 0.0], 20.0),
    ([0.0, -1.0, 0.0, 0.0, 3.0, 1.0], -6.0),
    ([0.3679, 0.0, 0.0, 0.0, 0.0, 0.0], 0.3679),
    ([0.1, 0.2, 1.0, 1.0 / 27.0, 0.0, 0.05], 2.5703703703703704),
    ([0.9, 0.8, 3.0, 0.5, 1.0, 0.2], 11.3),
    ([0.0, 0.0, 1.0, 0.0, 1.0, 0.0], 1.0),
    ([0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0),
    ([0.2, 0.4, 2.0, 0.6, 2.0, 0.3], 8.0),
    ([1.0, 1.0, 4.0, 1.0, 4.0, 2.0], 12.0),
    ([0.05, -0.25, 0.0, 8.0 / 27.0, 0.0, 1.5], -0.23703703703703705),
    ([0.7, 0.0, 2.0, 0.0, 0.0, 0.25], 4.2),
];

/// Discounted return at `t` as the direct double sum over `k >= t` of
/// `gamma^(k - t) * r_k`, with the power built by repeated multiplication.
pub fn double_sum_return(rewards: &[f64], gamma: f64, t: usize) -> f64 {
    let mut direct = 0.0;
    for k in t..rewards.len() {
        let mut disc = 1.0;
        for _ in t..k {
            disc *= gamma;
        }
        direct += disc * rewards[k];
    }
    direct
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
