//! Multi-seed training of every (algorithm, mode) pair with median-seed
//! selection. A failing seed is recorded and the rest of the battery runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{train_base_agent, AgentSpec, Algorithm, Hyperparams, Policy};
use crate::backtest::{run_backtest, Fingerprint};
use crate::env::{PortfolioEnv, RewardParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::ObservationMode;
use crate::market::{Market, Window};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRequest {
    pub algorithms: Vec<Algorithm>,
    pub modes: Vec<ObservationMode>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub hyper: Hyperparams,
    pub reward: RewardParams,
    /// Global seed from which each (algorithm, mode) stream is derived.
    pub global_seed: u64,
}

impl BatteryRequest {
    pub fn specs(&self) -> Vec<AgentSpec> {
        let mut out = Vec::new();
        for &algorithm in &self.algorithms {
            for &mode in &self.modes {
                let stream = derive_seed(self.global_seed, &format!("base/{algorithm}/{mode}"));
                for &seed in &self.seeds {
                    out.push(AgentSpec {
                        algorithm,
                        mode,
                        seed,
                        stream,
                        hyper: self.hyper.clone(),
                    });
                }
            }
        }
        out
    }
}

/// Outcome of one seed. `roi` is the cumulative return of the trained policy
/// replayed over the training window.
#[derive(Debug, Clone)]
pub struct BatteryCell {
    pub spec: AgentSpec,
    pub outcome: std::result::Result<(Policy, f64), String>,
}

impl BatteryCell {
    pub fn roi(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|(_, r)| *r)
    }
}

/// Train every cell of the battery over `window`.
pub fn run_seed_battery(market: &Market, window: Window, req: &BatteryRequest, exec: Exec) -> Vec<BatteryCell> {
    let specs = req.specs();
    exec.map(&specs, |spec| {
        let outcome = train_and_score(market, window, req, spec).map_err(|e| e.to_string());
        if let Err(msg) = &outcome {
            log::warn!("seed {} failed: {msg}", spec.id());
        }
        BatteryCell {
            spec: spec.clone(),
            outcome,
        }
    })
}

fn train_and_score(market: &Market, window: Window, req: &BatteryRequest, spec: &AgentSpec) -> Result<(Policy, f64)> {
    let env = PortfolioEnv::new(market, window, spec.mode, req.reward)?;
    let policy = train_base_agent(spec, &env, req.episodes)?;
    let report = run_backtest(&policy, market, window, &Fingerprint::default())?;
    Ok((policy, report.final_value() - 1.0))
}

/// The median-seed policy of each (algorithm, mode) pair.
#[derive(Debug, Clone, Default)]
pub struct PolicySet {
    pub selected: BTreeMap<(Algorithm, ObservationMode), Policy>,
}

impl PolicySet {
    /// Sort successful seeds by ROI (ties by seed) and keep index `(n-1)/2`.
    pub fn median_of(cells: &[BatteryCell]) -> Result<Self> {
        let mut groups: BTreeMap<(Algorithm, ObservationMode), Vec<(f64, u64, &Policy)>> = BTreeMap::new();
        for c in cells {
            let key = (c.spec.algorithm, c.spec.mode);
            let entry = groups.entry(key).or_default();
            if let Ok((p, roi)) = &c.outcome {
                entry.push((*roi, c.spec.seed, p));
            }
        }
        let mut selected = BTreeMap::new();
        for (key, mut runs) in groups {
            if runs.is_empty() {
                return Err(Error::invalid(format!("every seed of {}-{} failed", key.0, key.1)));
            }
            runs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (_, _, p) = runs[(runs.len() - 1) / 2];
            selected.insert(key, p.clone());
        }
        Ok(PolicySet { selected })
    }

    /// Policies observing `mode`, in algorithm order.
    pub fn for_mode(&self, mode: ObservationMode) -> Vec<&Policy> {
        self.selected
            .iter()
            .filter(|((_, m), _)| *m == mode)
            .map(|(_, p)| p)
            .collect()
    }
}
