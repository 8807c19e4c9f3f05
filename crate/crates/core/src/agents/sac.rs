//! Soft actor-critic with a fixed entropy weight, tanh-squashed Gaussian
//! actor and twin critics.

use rand_chacha::ChaCha8Rng;

use super::gaussian::standard_normal;
use super::replay::{ReplayBuffer, Transition};
use super::{actor_net, check_finite, concat, critic_net, ActionSquash, AgentSpec, Policy};
use crate::env::{project_to_simplex, PortfolioEnv};
use crate::error::Result;
use crate::nn::{AdamConfig, Cache, Mlp3, OptimState};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.9189385332046727;

/// Reparameterized draw from the squashed Gaussian.
struct Draw {
    cache: Cache,
    noise: Vec<f64>,
    std: Vec<f64>,
    /// Whether each log-std sat inside the clamp range.
    std_free: Vec<bool>,
    action: Vec<f64>,
    log_prob: f64,
}

fn draw(actor: &Mlp3, obs: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let cache = actor.forward_cached(obs)?;
    let mut noise = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    let mut std_free = Vec::with_capacity(n);
    let mut action = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    for j in 0..n {
        let raw = cache.output[n + j];
        let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let eps = standard_normal(rng);
        let u = cache.output[j] + ls.exp() * eps;
        let a = u.tanh();
        log_prob += -0.5 * eps * eps - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
        noise.push(eps);
        std.push(ls.exp());
        std_free.push(raw == ls);
        action.push(a);
    }
    Ok(Draw {
        cache,
        noise,
        std,
        std_free,
        action,
        log_prob,
    })
}

struct Critic {
    net: Mlp3,
    target: Mlp3,
    opt: OptimState,
}

pub(super) fn train(spec: &AgentSpec, env: &PortfolioEnv<'_>, episodes: usize) -> Result<Policy> {
    let h = &spec.hyper;
    let alpha = h.entropy_weight;
    let mut rng = spec.rng();
    let (n, d) = (env.n_assets(), env.obs_dim());
    let mut actor = actor_net(spec, d, 2 * n, &mut rng);
    let mut actor_opt = OptimState::for_net(&actor, AdamConfig::with_lr(h.actor_lr));
    let mut critics: Vec<Critic> = (0..2)
        .map(|_| {
            let net = critic_net(spec, d + n, &mut rng);
            Critic {
                target: net.clone(),
                opt: OptimState::for_net(&net, AdamConfig::with_lr(h.critic_lr)),
                net,
            }
        })
        .collect();
    let mut buffer = ReplayBuffer::new(h.replay_capacity);
    let mut curve = Vec::with_capacity(episodes);
    let mut steps = 0usize;

    for episode in 0..episodes {
        let mut state = env.reset()?;
        let mut total = 0.0;
        loop {
            let obs = state.observation.values.clone();
            let action = draw(&actor, &obs, n, &mut rng)?.action;
            let weights = project_to_simplex(&action)?;
            let out = env.step(&state, &weights)?;
            total += out.reward;
            buffer.push(Transition {
                obs,
                action,
                weights: weights.into_inner(),
                reward: out.reward,
                next_obs: out.next.observation.values.clone(),
                done: out.done,
            });
            steps += 1;
            state = out.next;

            if buffer.len() >= h.batch_size && steps >= h.learning_starts {
                let batch = buffer.sample(&mut rng, h.batch_size);
                let b = batch.len() as f64;
                // soft bootstrapped targets
                let mut ys = Vec::with_capacity(batch.len());
                for t in &batch {
                    let next = draw(&actor, &t.next_obs, n, &mut rng)?;
                    let input = concat(&t.next_obs, &next.action);
                    let q1 = critics[0].target.forward(&input)?[0];
                    let q2 = critics[1].target.forward(&input)?[0];
                    let cont = if t.done { 0.0 } else { 1.0 };
                    ys.push(t.reward + h.gamma * cont * (q1.min(q2) - alpha * next.log_prob));
                }
                for c in critics.iter_mut() {
                    let mut g = c.net.zero_grad();
                    let mut loss = 0.0;
                    for (t, y) in batch.iter().zip(&ys) {
                        let cache = c.net.forward_cached(&concat(&t.obs, &t.action))?;
                        let diff = cache.output[0] - y;
                        loss += diff * diff / b;
                        c.net.backprop(&cache, &[2.0 * diff / b], &mut g);
                    }
                    check_finite("critic loss", spec, episode, loss)?;
                    g.clip_norm(h.max_grad_norm);
                    c.opt.optim_step(&mut c.net, &g)?;
                }

                // actor: minimize α·log π − min(Q1, Q2) through the reparameterized draw
                let mut g = actor.zero_grad();
                let mut scratch = critics[0].net.zero_grad();
                for t in &batch {
                    let dr = draw(&actor, &t.obs, n, &mut rng)?;
                    let input = concat(&t.obs, &dr.action);
                    let c0 = critics[0].net.forward_cached(&input)?;
                    let c1 = critics[1].net.forward_cached(&input)?;
                    let (net, cache) = if c0.output[0] <= c1.output[0] {
                        (&critics[0].net, c0)
                    } else {
                        (&critics[1].net, c1)
                    };
                    let d_in = net.backprop(&cache, &[1.0], &mut scratch);
                    let mut d_out = vec![0.0; 2 * n];
                    for j in 0..n {
                        let a = dr.action[j];
                        let da_du = 1.0 - a * a;
                        let d_logp_du = 2.0 * a * da_du / (da_du + SQUASH_EPS);
                        let d_u = (alpha * d_logp_du - d_in[d + j] * da_du) / b;
                        d_out[j] = d_u;
                        if dr.std_free[j] {
                            d_out[n + j] = d_u * dr.std[j] * dr.noise[j] - alpha / b;
                        }
                    }
                    actor.backprop(&dr.cache, &d_out, &mut g);
                }
                g.clip_norm(h.max_grad_norm);
                actor_opt.optim_step(&mut actor, &g)?;
                for c in critics.iter_mut() {
                    c.target.soft_update(&c.net, h.tau);
                }
            }
            if out.done {
                break;
            }
        }
        curve.push(total);
    }
    Ok(Policy::new(spec, actor, ActionSquash::Tanh, env, curve))
}
