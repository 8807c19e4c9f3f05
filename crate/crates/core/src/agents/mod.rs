//! Base RL agents: clipped on-policy (PPO), entropy-regularized off-policy
//! (SAC), deterministic actor-critic (DDPG) and its twin-critic delayed
//! variant (TD3). All act on `[-1, 1]^N` and share the simplex projection.

mod battery;
mod gaussian;
mod ppo;
mod replay;
mod sac;
mod td3;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::Allocator;
use crate::data::MonthId;
use crate::env::{project_to_simplex, PortfolioEnv, PortfolioWeights};
use crate::error::{Error, Result};
use crate::features::{ObservationMode, ObservationVector};
use crate::market::MonthInputs;
use crate::nn::{Head, Mlp3};
use crate::seed::mix;

pub use battery::{run_seed_battery, BatteryCell, BatteryRequest, PolicySet};
pub use ppo::{clipped_surrogate, SurrogateTerm};
pub use replay::{ReplayBuffer, Transition};
pub use td3::{td3_targets, TargetTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Sac,
    Ddpg,
    Td3,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Ppo, Algorithm::Sac, Algorithm::Ddpg, Algorithm::Td3];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Sac => "sac",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "sac" => Ok(Algorithm::Sac),
            "ddpg" => Ok(Algorithm::Ddpg),
            "td3" => Ok(Algorithm::Td3),
            _ => Err(Error::invalid(format!("unknown algorithm `{s}`"))),
        }
    }
}

/// Training hyperparameters. Algorithm-specific fields are ignored by the
/// other algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub hidden: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    // ppo
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub gae_lambda: f64,
    pub init_log_std: f64,
    pub entropy_coef: f64,
    pub episodes_per_update: usize,
    // sac
    pub entropy_weight: f64,
    // off-policy
    pub tau: f64,
    pub replay_capacity: usize,
    pub learning_starts: usize,
    pub exploration_std: f64,
    // td3
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden: 64,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            batch_size: 64,
            max_grad_norm: 0.5,
            clip_epsilon: 0.2,
            ppo_epochs: 10,
            gae_lambda: 0.95,
            init_log_std: -0.5,
            entropy_coef: 0.0,
            episodes_per_update: 1,
            entropy_weight: 0.001,
            tau: 0.005,
            replay_capacity: 100_000,
            learning_starts: 100,
            exploration_std: 0.1,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, algorithm: Algorithm) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("{algorithm}: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return bad("hidden size and batch size must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        match algorithm {
            Algorithm::Ppo => {
                if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
                    return bad("clip_epsilon must be in (0, 1)");
                }
                if self.ppo_epochs == 0 || self.episodes_per_update == 0 {
                    return bad("ppo_epochs and episodes_per_update must be positive");
                }
            }
            Algorithm::Sac => {
                if !(self.entropy_weight >= 0.0) {
                    return bad("entropy_weight must be nonnegative");
                }
            }
            Algorithm::Ddpg | Algorithm::Td3 => {
                if !(self.exploration_std >= 0.0) {
                    return bad("exploration_std must be nonnegative");
                }
                if algorithm == Algorithm::Td3 && self.policy_delay == 0 {
                    return bad("policy_delay must be positive");
                }
            }
        }
        if matches!(algorithm, Algorithm::Sac | Algorithm::Ddpg | Algorithm::Td3)
            && (self.replay_capacity == 0 || !(self.tau > 0.0 && self.tau <= 1.0))
        {
            return bad("replay_capacity must be positive and tau in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub algorithm: Algorithm,
    pub mode: ObservationMode,
    /// Consecutive seed label of the battery.
    pub seed: u64,
    /// Per-component stream mixed into the seed; 0 outside the pipeline.
    #[serde(default)]
    pub stream: u64,
    #[serde(default)]
    pub hyper: Hyperparams,
}

impl AgentSpec {
    pub fn new(algorithm: Algorithm, mode: ObservationMode, seed: u64) -> Self {
        AgentSpec {
            algorithm,
            mode,
            seed,
            stream: 0,
            hyper: Hyperparams::default(),
        }
    }

    pub fn id(&self) -> String {
        format!("{}-{}-s{}", self.algorithm, self.mode, self.seed)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.stream, self.seed))
    }
}

/// How the actor's raw output becomes a point of `[-1, 1]^N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionSquash {
    /// Gaussian mean clipped to the box (ppo).
    Clip,
    /// `tanh` of the first N outputs (sac means, ddpg/td3 actions).
    Tanh,
}

pub const POLICY_VERSION: u32 = 1;

/// A trained, deterministic-at-inference base policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub version: u32,
    pub id: String,
    pub spec: AgentSpec,
    pub n_assets: usize,
    pub squash: ActionSquash,
    pub actor: Mlp3,
    pub train_window: (MonthId, MonthId),
    /// Mean episode reward per training iteration.
    pub training_curve: Vec<f64>,
    pub checksum: String,
}

impl Policy {
    pub(crate) fn new(
        spec: &AgentSpec,
        actor: Mlp3,
        squash: ActionSquash,
        env: &PortfolioEnv<'_>,
        training_curve: Vec<f64>,
    ) -> Self {
        let w = env.window();
        let checksum = actor.checksum();
        Policy {
            version: POLICY_VERSION,
            id: spec.id(),
            spec: spec.clone(),
            n_assets: env.n_assets(),
            squash,
            actor,
            train_window: (env.market().month_id(w.first), env.market().month_id(w.last)),
            training_curve,
            checksum,
        }
    }

    pub fn mode(&self) -> ObservationMode {
        self.spec.mode
    }

    /// Point of `[-1, 1]^N` before projection.
    pub fn box_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.actor.forward(obs)?;
        let n = self.n_assets;
        Ok(match self.squash {
            ActionSquash::Clip => out[..n].iter().map(|x| x.clamp(-1.0, 1.0)).collect(),
            ActionSquash::Tanh => out[..n].iter().map(|x| x.tanh()).collect(),
        })
    }

    pub fn act(&self, obs: &ObservationVector) -> Result<PortfolioWeights> {
        if obs.mode != self.spec.mode || obs.n_assets != self.n_assets {
            return Err(Error::invalid(format!(
                "policy {} expects {} observations over {} assets, got {} over {}",
                self.id, self.spec.mode, self.n_assets, obs.mode, obs.n_assets
            )));
        }
        project_to_simplex(&self.box_action(&obs.values)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Policy = serde_json::from_str(&text)?;
        if p.version != POLICY_VERSION {
            return Err(Error::Schema(format!("unsupported policy version {}", p.version)));
        }
        if p.actor.checksum() != p.checksum {
            return Err(Error::Schema(format!("policy {} checksum mismatch", p.id)));
        }
        Ok(p)
    }
}

impl Allocator for Policy {
    fn id(&self) -> &str {
        &self.id
    }

    fn checksum(&self) -> String {
        self.checksum.clone()
    }

    fn allocate(&self, inputs: &MonthInputs<'_>) -> Result<PortfolioWeights> {
        self.act(inputs.get(self.spec.mode)?)
    }
}

/// Train one base agent for `episodes` passes over the environment window.
pub fn train_base_agent(spec: &AgentSpec, env: &PortfolioEnv<'_>, episodes: usize) -> Result<Policy> {
    spec.hyper.validate(spec.algorithm)?;
    if env.mode() != spec.mode {
        return Err(Error::invalid(format!(
            "agent {} trains on {} observations but the environment emits {}",
            spec.id(),
            spec.mode,
            env.mode()
        )));
    }
    let policy = match spec.algorithm {
        Algorithm::Ppo => ppo::train(spec, env, episodes)?,
        Algorithm::Sac => sac::train(spec, env, episodes)?,
        Algorithm::Ddpg | Algorithm::Td3 => td3::train(spec, env, episodes)?,
    };
    log::debug!(
        "trained {} over {} episodes, final curve value {:?}",
        policy.id,
        episodes,
        policy.training_curve.last()
    );
    Ok(policy)
}

pub(crate) fn actor_net(spec: &AgentSpec, obs_dim: usize, out: usize, rng: &mut ChaCha8Rng) -> Mlp3 {
    let h = spec.hyper.hidden;
    Mlp3::init(obs_dim, h, h, out, Head::Linear, rng)
}

pub(crate) fn critic_net(spec: &AgentSpec, in_dim: usize, rng: &mut ChaCha8Rng) -> Mlp3 {
    let h = spec.hyper.hidden;
    Mlp3::init(in_dim, h, h, 1, Head::Linear, rng)
}

pub(crate) fn check_finite(what: &str, spec: &AgentSpec, episode: usize, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!(
            "{} {what} became {v} during episode {episode}",
            spec.id()
        )))
    }
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}
