//! Clipped-surrogate policy optimization with a diagonal Gaussian actor
//! (state-dependent mean, state-independent log-std) and a value critic.

use rand::seq::SliceRandom;

use super::gaussian::{log_prob, standard_normal};
use super::{actor_net, check_finite, critic_net, ActionSquash, AgentSpec, Policy};
use crate::env::{project_to_simplex, PortfolioEnv};
use crate::error::Result;
use crate::nn::{AdamConfig, OptimState};

const VALUE_COEF: f64 = 0.5;

/// One sample's contribution to the clipped objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateTerm {
    pub objective: f64,
    /// Ratio as it enters the clipped branch, always in `[1-ε, 1+ε]`.
    pub clipped_ratio: f64,
    /// `∂objective/∂ratio`; zero whenever the clipped branch is the minimum.
    pub d_ratio: f64,
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)` and its derivative in `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> SurrogateTerm {
    let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    let plain = ratio * advantage;
    let clipped = clipped_ratio * advantage;
    if plain <= clipped {
        SurrogateTerm {
            objective: plain,
            clipped_ratio,
            d_ratio: advantage,
        }
    } else {
        SurrogateTerm {
            objective: clipped,
            clipped_ratio,
            d_ratio: 0.0,
        }
    }
}

struct Sample {
    obs: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
    value: f64,
    reward: f64,
    done: bool,
}

pub(super) fn train(spec: &AgentSpec, env: &PortfolioEnv<'_>, episodes: usize) -> Result<Policy> {
    let h = &spec.hyper;
    let mut rng = spec.rng();
    let (n, d) = (env.n_assets(), env.obs_dim());
    let mut actor = actor_net(spec, d, n, &mut rng);
    let mut critic = critic_net(spec, d, &mut rng);
    let mut log_std = vec![h.init_log_std; n];
    let mut actor_opt = OptimState::for_net(&actor, AdamConfig::with_lr(h.actor_lr));
    let mut std_opt = OptimState::new(n, AdamConfig::with_lr(h.actor_lr));
    let mut critic_opt = OptimState::for_net(&critic, AdamConfig::with_lr(h.critic_lr));
    let mut curve = Vec::new();

    let mut episode = 0;
    while episode < episodes {
        let k = h.episodes_per_update.min(episodes - episode);
        let mut buf: Vec<Sample> = Vec::new();
        let mut totals = Vec::with_capacity(k);
        for _ in 0..k {
            let mut state = env.reset()?;
            let mut total = 0.0;
            loop {
                let obs = state.observation.values.clone();
                let mean = actor.forward(&obs)?;
                let action: Vec<f64> = mean
                    .iter()
                    .zip(&log_std)
                    .map(|(m, ls)| m + ls.exp() * standard_normal(&mut rng))
                    .collect();
                let lp = log_prob(&action, &mean, &log_std);
                let value = critic.forward(&obs)?[0];
                check_finite("action log-probability", spec, episode, lp)?;
                let boxed: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
                let weights = project_to_simplex(&boxed)?;
                let out = env.step(&state, &weights)?;
                total += out.reward;
                buf.push(Sample {
                    obs,
                    action,
                    log_prob: lp,
                    value,
                    reward: out.reward,
                    done: out.done,
                });
                state = out.next;
                if out.done {
                    break;
                }
            }
            totals.push(total);
            episode += 1;
        }
        curve.push(totals.iter().sum::<f64>() / totals.len() as f64);

        // generalized advantage estimation, episodes end at the window edge
        let len = buf.len();
        let mut adv = vec![0.0; len];
        let mut gae = 0.0;
        for i in (0..len).rev() {
            let next_value = if buf[i].done { 0.0 } else { buf[i + 1].value };
            if buf[i].done {
                gae = 0.0;
            }
            let delta = buf[i].reward + h.gamma * next_value - buf[i].value;
            gae = delta + h.gamma * h.gae_lambda * gae;
            adv[i] = gae;
        }
        let returns: Vec<f64> = adv.iter().zip(&buf).map(|(a, s)| a + s.value).collect();
        if len > 1 {
            let m = adv.iter().sum::<f64>() / len as f64;
            let sd = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / len as f64).sqrt();
            for a in &mut adv {
                *a = (*a - m) / (sd + 1e-8);
            }
        }

        let mut order: Vec<usize> = (0..len).collect();
        for _ in 0..h.ppo_epochs {
            order.shuffle(&mut rng);
            for mb in order.chunks(h.batch_size) {
                let b = mb.len() as f64;
                let mut g_actor = actor.zero_grad();
                let mut g_std = vec![-h.entropy_coef; n];
                let mut g_critic = critic.zero_grad();
                for &i in mb {
                    let s = &buf[i];
                    let cache = actor.forward_cached(&s.obs)?;
                    let mean = &cache.output;
                    let lp = log_prob(&s.action, mean, &log_std);
                    let ratio = (lp - s.log_prob).exp();
                    check_finite("probability ratio", spec, episode, ratio)?;
                    let term = clipped_surrogate(ratio, adv[i], h.clip_epsilon);
                    // d(loss)/d(log π) with loss = -mean(objective)
                    let g = -term.d_ratio * ratio / b;
                    if g != 0.0 {
                        let mut d_mean = vec![0.0; n];
                        for j in 0..n {
                            let var = (2.0 * log_std[j]).exp();
                            let diff = s.action[j] - mean[j];
                            d_mean[j] = g * diff / var;
                            g_std[j] += g * (diff * diff / var - 1.0);
                        }
                        actor.backprop(&cache, &d_mean, &mut g_actor);
                    }
                    let vc = critic.forward_cached(&s.obs)?;
                    let dv = VALUE_COEF * 2.0 * (vc.output[0] - returns[i]) / b;
                    critic.backprop(&vc, &[dv], &mut g_critic);
                }
                g_actor.clip_norm(h.max_grad_norm);
                g_critic.clip_norm(h.max_grad_norm);
                actor_opt.optim_step(&mut actor, &g_actor)?;
                std_opt.update(&mut log_std, &g_std)?;
                for ls in &mut log_std {
                    *ls = ls.clamp(-5.0, 1.0);
                }
                critic_opt.optim_step(&mut critic, &g_critic)?;
            }
        }
    }
    Ok(Policy::new(spec, actor, ActionSquash::Clip, env, curve))
}
