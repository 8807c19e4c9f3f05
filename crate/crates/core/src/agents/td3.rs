//! Deterministic actor-critic. DDPG uses one critic and updates the actor
//! every step; TD3 adds a twin critic with min-target, target-policy
//! smoothing and delayed actor updates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gaussian::standard_normal;
use super::replay::{ReplayBuffer, Transition};
use super::{actor_net, check_finite, concat, critic_net, ActionSquash, AgentSpec, Algorithm, Policy};
use crate::env::{project_to_simplex, PortfolioEnv};
use crate::error::Result;
use crate::nn::{AdamConfig, Mlp3, OptimState};

/// Bootstrapped critic target for one sampled transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTrace {
    pub reward: f64,
    pub done: bool,
    pub q1: f64,
    pub q2: Option<f64>,
    pub target: f64,
}

fn tanh_action(actor: &Mlp3, obs: &[f64]) -> Result<Vec<f64>> {
    Ok(actor.forward(obs)?.iter().map(|x| x.tanh()).collect())
}

/// Targets `r + γ(1-done)·min(Q1', Q2')(s', a')`, with `a'` the target
/// actor's action plus clipped Gaussian smoothing noise when `smoothing`
/// is given as `(std, clip)`. A missing second critic uses `Q1'` alone.
pub fn td3_targets(
    batch: &[&Transition],
    target_actor: &Mlp3,
    target_q1: &Mlp3,
    target_q2: Option<&Mlp3>,
    gamma: f64,
    smoothing: Option<(f64, f64)>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TargetTrace>> {
    batch
        .iter()
        .map(|t| {
            let mut next_action = tanh_action(target_actor, &t.next_obs)?;
            if let Some((std, clip)) = smoothing {
                for a in &mut next_action {
                    let eps = (std * standard_normal(rng)).clamp(-clip, clip);
                    *a = (*a + eps).clamp(-1.0, 1.0);
                }
            }
            let input = concat(&t.next_obs, &next_action);
            let q1 = target_q1.forward(&input)?[0];
            let q2 = match target_q2 {
                Some(c) => Some(c.forward(&input)?[0]),
                None => None,
            };
            let q_next = q2.map_or(q1, |q2| q1.min(q2));
            let cont = if t.done { 0.0 } else { 1.0 };
            Ok(TargetTrace {
                reward: t.reward,
                done: t.done,
                q1,
                q2,
                target: t.reward + gamma * cont * q_next,
            })
        })
        .collect()
}

struct Critic {
    net: Mlp3,
    target: Mlp3,
    opt: OptimState,
}

impl Critic {
    fn new(spec: &AgentSpec, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let net = critic_net(spec, in_dim, rng);
        let opt = OptimState::for_net(&net, AdamConfig::with_lr(spec.hyper.critic_lr));
        Critic {
            target: net.clone(),
            net,
            opt,
        }
    }

    fn fit(&mut self, batch: &[&Transition], targets: &[f64], max_norm: f64) -> Result<f64> {
        let b = batch.len() as f64;
        let mut g = self.net.zero_grad();
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(targets) {
            let cache = self.net.forward_cached(&concat(&t.obs, &t.action))?;
            let diff = cache.output[0] - y;
            loss += diff * diff / b;
            self.net.backprop(&cache, &[2.0 * diff / b], &mut g);
        }
        g.clip_norm(max_norm);
        self.opt.optim_step(&mut self.net, &g)?;
        Ok(loss)
    }
}

pub(super) fn train(spec: &AgentSpec, env: &PortfolioEnv<'_>, episodes: usize) -> Result<Policy> {
    let h = &spec.hyper;
    let twin = spec.algorithm == Algorithm::Td3;
    let delay = if twin { h.policy_delay } else { 1 };
    let mut rng = spec.rng();
    let (n, d) = (env.n_assets(), env.obs_dim());
    let mut actor = actor_net(spec, d, n, &mut rng);
    let mut actor_target = actor.clone();
    let mut actor_opt = OptimState::for_net(&actor, AdamConfig::with_lr(h.actor_lr));
    let mut c1 = Critic::new(spec, d + n, &mut rng);
    let mut c2 = if twin { Some(Critic::new(spec, d + n, &mut rng)) } else { None };
    let mut buffer = ReplayBuffer::new(h.replay_capacity);
    let mut curve = Vec::with_capacity(episodes);
    let mut steps = 0usize;
    let mut updates = 0usize;

    for episode in 0..episodes {
        let mut state = env.reset()?;
        let mut total = 0.0;
        loop {
            let obs = state.observation.values.clone();
            let action: Vec<f64> = if steps < h.learning_starts {
                (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
            } else {
                tanh_action(&actor, &obs)?
                    .into_iter()
                    .map(|a| (a + h.exploration_std * standard_normal(&mut rng)).clamp(-1.0, 1.0))
                    .collect()
            };
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
                let smoothing = twin.then_some((h.target_noise, h.target_noise_clip));
                let traces = td3_targets(
                    &batch,
                    &actor_target,
                    &c1.target,
                    c2.as_ref().map(|c| &c.target),
                    h.gamma,
                    smoothing,
                    &mut rng,
                )?;
                let ys: Vec<f64> = traces.iter().map(|t| t.target).collect();
                let loss = c1.fit(&batch, &ys, h.max_grad_norm)?;
                check_finite("critic loss", spec, episode, loss)?;
                if let Some(c2) = c2.as_mut() {
                    let loss = c2.fit(&batch, &ys, h.max_grad_norm)?;
                    check_finite("twin critic loss", spec, episode, loss)?;
                }
                updates += 1;
                if updates % delay == 0 {
                    let b = batch.len() as f64;
                    let mut g = actor.zero_grad();
                    let mut scratch = c1.net.zero_grad();
                    for t in &batch {
                        let cache = actor.forward_cached(&t.obs)?;
                        let a: Vec<f64> = cache.output.iter().map(|x| x.tanh()).collect();
                        let qc = c1.net.forward_cached(&concat(&t.obs, &a))?;
                        let d_in = c1.net.backprop(&qc, &[-1.0 / b], &mut scratch);
                        let d_pre: Vec<f64> = d_in[d..].iter().zip(&a).map(|(g, a)| g * (1.0 - a * a)).collect();
                        actor.backprop(&cache, &d_pre, &mut g);
                    }
                    g.clip_norm(h.max_grad_norm);
                    actor_opt.optim_step(&mut actor, &g)?;
                    actor_target.soft_update(&actor, h.tau);
                    c1.target.soft_update(&c1.net, h.tau);
                    if let Some(c2) = c2.as_mut() {
                        c2.target.soft_update(&c2.net, h.tau);
                    }
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
