//! Monthly-rebalancing portfolio environment.
//!
//! Weights chosen from month `m-1`'s observation are held fixed through
//! month `m`; the step reward is `α1·roi − α2·mdd − α3·σ` of that month's
//! daily portfolio path.

use serde::{Deserialize, Serialize};

use crate::data::MonthlySlice;
use crate::error::{Error, Result};
use crate::features::{max_drawdown, sample_std, ObservationMode, ObservationVector};
use crate::market::{Market, Window};

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReward", into = "RawReward")]
pub struct RewardParams {
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
}

#[derive(Serialize, Deserialize)]
struct RawReward {
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
}

impl TryFrom<RawReward> for RewardParams {
    type Error = Error;
    fn try_from(r: RawReward) -> Result<Self> {
        RewardParams::new(r.alpha1, r.alpha2, r.alpha3)
    }
}

impl From<RewardParams> for RawReward {
    fn from(p: RewardParams) -> Self {
        RawReward {
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            alpha3: p.alpha3,
        }
    }
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha1: 1.0,
            alpha2: 2.0,
            alpha3: 0.5,
        }
    }
}

impl RewardParams {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2), ("alpha3", alpha3)] {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number, got {a}")));
            }
        }
        if alpha1 == 0.0 && alpha2 == 0.0 && alpha3 == 0.0 {
            return Err(Error::invalid("reward weights cannot all be zero"));
        }
        Ok(RewardParams { alpha1, alpha2, alpha3 })
    }

    pub fn alphas(&self) -> [f64; 3] {
        [self.alpha1, self.alpha2, self.alpha3]
    }

    pub fn reward(&self, roi: f64, mdd: f64, sigma: f64) -> f64 {
        self.alpha1 * roi - self.alpha2 * mdd - self.alpha3 * sigma
    }
}

/// Long-only, fully invested allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("empty weight vector"));
        }
        if let Some(x) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::invalid(format!("weight {x} is negative or non-finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}")));
        }
        Ok(PortfolioWeights(w))
    }

    pub fn uniform(n: usize) -> Self {
        PortfolioWeights(vec![1.0 / n as f64; n])
    }

    pub fn unit(n: usize, asset: usize) -> Self {
        let mut w = vec![0.0; n];
        w[asset] = 1.0;
        PortfolioWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PortfolioWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PortfolioWeights::new(v)
    }
}

impl From<PortfolioWeights> for Vec<f64> {
    fn from(w: PortfolioWeights) -> Self {
        w.0
    }
}

/// Clamp negatives to zero and rescale to unit sum; all-zero falls back to uniform.
pub fn project_to_simplex(raw: &[f64]) -> Result<PortfolioWeights> {
    if raw.is_empty() {
        return Err(Error::invalid("empty action"));
    }
    if let Some(x) = raw.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("action entry {x}")));
    }
    let clamped: Vec<f64> = raw.iter().map(|x| x.max(0.0)).collect();
    let sum: f64 = clamped.iter().sum();
    if sum <= 0.0 {
        return Ok(PortfolioWeights::uniform(raw.len()));
    }
    Ok(PortfolioWeights(clamped.into_iter().map(|x| x / sum).collect()))
}

/// Statistics of holding fixed weights through one month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthStats {
    pub roi: f64,
    pub mdd: f64,
    pub sigma: f64,
}

/// Hold `weights` through `slice`: the value path starts at 1.0 at the
/// boundary close. Reads nothing outside the slice.
pub fn hold_month(slice: &MonthlySlice, weights: &PortfolioWeights) -> Result<MonthStats> {
    let n = slice.prices.len();
    if weights.len() != n {
        return Err(Error::dim(format!("{} weights for {n} assets", weights.len())));
    }
    let w = weights.as_slice();
    // dividing by the weight total keeps a flat market at exactly 1.0
    let total: f64 = w.iter().sum();
    let mut path = Vec::with_capacity(slice.len() + 1);
    path.push(1.0);
    for t in 0..slice.len() {
        let v: f64 = (0..n).map(|i| w[i] * slice.prices[i][t] / slice.boundary[i]).sum();
        path.push(v / total);
    }
    let roi = path[path.len() - 1] - 1.0;
    let mdd = max_drawdown(&path)?;
    let returns: Vec<f64> = path.windows(2).map(|p| p[1] / p[0] - 1.0).collect();
    let sigma = if returns.len() < 2 { 0.0 } else { sample_std(&returns) };
    Ok(MonthStats { roi, mdd, sigma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Holding month the next step will simulate.
    pub month: usize,
    pub weights: PortfolioWeights,
    pub value: f64,
    pub observation: ObservationVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub stats: MonthStats,
    pub done: bool,
}

/// Episode over one window of holding months, observing one mode.
#[derive(Debug, Clone, Copy)]
pub struct PortfolioEnv<'a> {
    market: &'a Market,
    window: Window,
    mode: ObservationMode,
    params: RewardParams,
}

impl<'a> PortfolioEnv<'a> {
    pub fn new(market: &'a Market, window: Window, mode: ObservationMode, params: RewardParams) -> Result<Self> {
        if market.n_assets() < 2 {
            return Err(Error::invalid("environment needs at least two assets"));
        }
        if !market.has_mode(mode) {
            return Err(Error::invalid(format!("market has no {mode} observations")));
        }
        let window = Window::new(market, window.first, window.last)?;
        Ok(PortfolioEnv {
            market,
            window,
            mode,
            params,
        })
    }

    pub fn market(&self) -> &'a Market {
        self.market
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn mode(&self) -> ObservationMode {
        self.mode
    }

    pub fn params(&self) -> RewardParams {
        self.params
    }

    pub fn n_assets(&self) -> usize {
        self.market.n_assets()
    }

    pub fn obs_dim(&self) -> usize {
        self.mode.dim(self.n_assets())
    }

    /// Equal weights, unit value, observation of the month before the window.
    pub fn reset(&self) -> Result<EnvState> {
        Ok(EnvState {
            month: self.window.first,
            weights: PortfolioWeights::uniform(self.n_assets()),
            value: 1.0,
            observation: self.market.observation(self.window.first - 1, self.mode)?.clone(),
        })
    }

    pub fn step(&self, state: &EnvState, weights: &PortfolioWeights) -> Result<StepOutcome> {
        if state.month < self.window.first || state.month > self.window.last {
            return Err(Error::invalid(format!("month {} outside the episode window", state.month)));
        }
        let stats = hold_month(self.market.slice(state.month), weights)?;
        let reward = self.params.reward(stats.roi, stats.mdd, stats.sigma);
        let done = state.month == self.window.last;
        let observation = self.market.observation(state.month, self.mode)?.clone();
        Ok(StepOutcome {
            next: EnvState {
                month: state.month + 1,
                weights: weights.clone(),
                value: state.value * (1.0 + stats.roi),
                observation,
            },
            reward,
            stats,
            done,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub observation: ObservationVector,
    pub weights: PortfolioWeights,
    pub reward: f64,
    pub stats: MonthStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_value: f64,
}

/// Run `policy` over the whole window; raw actions go through [`project_to_simplex`].
pub fn episode_rollout<F>(env: &PortfolioEnv<'_>, mut policy: F) -> Result<Trajectory>
where
    F: FnMut(&ObservationVector) -> Result<Vec<f64>>,
{
    let mut state = env.reset()?;
    let mut steps = Vec::with_capacity(env.window().len());
    loop {
        let weights = project_to_simplex(&policy(&state.observation)?)?;
        let out = env.step(&state, &weights)?;
        steps.push(TrajectoryStep {
            observation: state.observation,
            weights,
            reward: out.reward,
            stats: out.stats,
        });
        state = out.next;
        if out.done {
            break;
        }
    }
    Ok(Trajectory {
        steps,
        final_value: state.value,
    })
}
