//! Aggregation tiers. Each tier concatenates its contributors' weights for
//! the month, and a softmax network trained by lookahead imitation maps the
//! concatenation to one allocation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::Allocator;
use crate::data::MonthId;
use crate::env::{hold_month, PortfolioEnv, PortfolioWeights};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::market::{Market, MonthInputs, Window};
use crate::nn::{AdamConfig, Head, Mlp3, OptimState, TrainBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    MetaMetrics,
    MetaNlp,
    Super,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::MetaMetrics => "meta-metrics",
            Level::MetaNlp => "meta-nlp",
            Level::Super => "super",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meta-metrics" => Ok(Level::MetaMetrics),
            "meta-nlp" => Ok(Level::MetaNlp),
            "super" => Ok(Level::Super),
            _ => Err(Error::invalid(format!("unknown level `{s}`"))),
        }
    }
}

/// Identity of one panel member.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContributorRef {
    pub id: String,
    pub checksum: String,
}

impl ContributorRef {
    pub fn of(a: &dyn Allocator) -> Self {
        ContributorRef {
            id: a.id().to_string(),
            checksum: a.checksum(),
        }
    }
}

/// Every contributor's proposal for one holding month.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPanel {
    pub month: MonthId,
    /// Market month index of the holding month.
    pub holding: usize,
    pub contributors: Vec<ContributorRef>,
    pub weights: Vec<PortfolioWeights>,
}

impl DecisionPanel {
    pub fn n_assets(&self) -> usize {
        self.weights.first().map_or(0, PortfolioWeights::len)
    }

    /// Contributors' weights laid end to end in panel order.
    pub fn concatenated(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
    }
}

/// Ask every contributor for the weights of `holding_month`.
pub fn build_panel(contributors: &[&dyn Allocator], market: &Market, holding_month: usize) -> Result<DecisionPanel> {
    if contributors.is_empty() {
        return Err(Error::invalid("empty contributor panel"));
    }
    let inputs = market.inputs_for(holding_month)?;
    let mut weights = Vec::with_capacity(contributors.len());
    for c in contributors {
        let w = c
            .allocate(&inputs)
            .map_err(|e| Error::invalid(format!("contributor {} failed: {e}", c.id())))?;
        if w.len() != market.n_assets() {
            return Err(Error::dim(format!("contributor {} proposed {} weights", c.id(), w.len())));
        }
        weights.push(w);
    }
    Ok(DecisionPanel {
        month: market.month_id(holding_month),
        holding: holding_month,
        contributors: contributors.iter().map(|c| ContributorRef::of(*c)).collect(),
        weights,
    })
}

/// Panels for every holding month of `window`, built month-parallel.
pub fn build_panels(contributors: &[&dyn Allocator], market: &Market, window: Window, exec: Exec) -> Result<Vec<DecisionPanel>> {
    let months: Vec<usize> = window.months().collect();
    exec.map(&months, |&m| build_panel(contributors, market, m)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookaheadSample {
    pub month: MonthId,
    pub holding: usize,
    pub x: Vec<f64>,
    pub w_star: Vec<f64>,
    pub chosen: String,
    pub lookahead_reward: f64,
}

/// Reward of holding `weights` (rebalanced monthly) over `months`.
fn held_reward(env: &PortfolioEnv<'_>, weights: &PortfolioWeights, months: std::ops::Range<usize>) -> Result<f64> {
    let params = env.params();
    let mut total = 0.0;
    for j in months {
        let s = hold_month(env.market().slice(j), weights)?;
        total += params.reward(s.roi, s.mdd, s.sigma);
    }
    Ok(total)
}

/// Label each panel with the contributor whose weights, held for the next
/// `horizon` months, earn the largest summed reward. Panels whose horizon
/// runs past the environment window are dropped; ties go to the lower
/// panel index.
pub fn collect_imitation_dataset(
    panels: &[DecisionPanel],
    env: &PortfolioEnv<'_>,
    horizon: usize,
    exec: Exec,
) -> Result<Vec<LookaheadSample>> {
    if horizon == 0 {
        return Err(Error::invalid("lookahead horizon must be at least one month"));
    }
    if panels.is_empty() || panels.iter().any(|p| p.weights.is_empty()) {
        return Err(Error::invalid("empty decision panel"));
    }
    let order = &panels[0].contributors;
    if panels.iter().any(|p| &p.contributors != order) {
        return Err(Error::invalid("contributor order differs between months"));
    }
    let window = env.window();
    let usable: Vec<&DecisionPanel> = panels
        .iter()
        .filter(|p| p.holding >= window.first && p.holding + horizon - 1 <= window.last)
        .collect();
    exec.map(&usable, |p| -> Result<LookaheadSample> {
        let mut best: Option<(usize, f64)> = None;
        for (i, w) in p.weights.iter().enumerate() {
            let r = held_reward(env, w, p.holding..p.holding + horizon)?;
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        let (i, r) = best.expect("panel is non-empty");
        Ok(LookaheadSample {
            month: p.month,
            holding: p.holding,
            x: p.concatenated(),
            w_star: p.weights[i].as_slice().to_vec(),
            chosen: p.contributors[i].id.clone(),
            lookahead_reward: r,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            epochs: 200,
            batch_size: 32,
            horizon: 3,
            learning_rate: 1e-3,
            hidden: 64,
            seed: 0,
        }
    }
}

impl AggregatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.horizon == 0 || self.hidden == 0 {
            return Err(Error::invalid("aggregator batch size, horizon and hidden width must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("aggregator learning rate must be positive"));
        }
        Ok(())
    }
}

pub const AGGREGATOR_VERSION: u32 = 1;

/// Trained aggregation network. Contributors are stored sorted by id and
/// the network's input blocks follow that order, so the layout of the
/// panel it is fed does not matter as long as the same members appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorModel {
    pub version: u32,
    pub level: Level,
    pub contributors: Vec<ContributorRef>,
    pub n_assets: usize,
    pub config: AggregatorConfig,
    pub net: Mlp3,
    pub final_loss: f64,
    pub checksum: String,
}

fn model_checksum(level: Level, contributors: &[ContributorRef], net: &Mlp3) -> String {
    let mut h = Sha256::new();
    h.update(level.as_str());
    for c in contributors {
        h.update(c.id.as_bytes());
        h.update(c.checksum.as_bytes());
    }
    h.update(net.checksum());
    hex::encode(h.finalize())
}

/// Positions of the canonical (sorted) contributors inside `panel_order`.
fn canonical_positions(panel_order: &[ContributorRef]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..panel_order.len()).collect();
    idx.sort_by(|&a, &b| panel_order[a].cmp(&panel_order[b]));
    idx
}

fn reorder(x: &[f64], positions: &[usize], n: usize) -> Vec<f64> {
    positions.iter().flat_map(|&p| x[p * n..(p + 1) * n].iter().copied()).collect()
}

/// Fit an aggregator to imitation samples by shuffled minibatch Adam on the
/// squared error to `w_star`.
pub fn train_aggregator(
    samples: &[LookaheadSample],
    contributors: &[ContributorRef],
    level: Level,
    config: &AggregatorConfig,
) -> Result<AggregatorModel> {
    config.validate()?;
    if samples.is_empty() || contributors.is_empty() {
        return Err(Error::invalid("aggregator training needs samples and contributors"));
    }
    let n = samples[0].w_star.len();
    let k = contributors.len();
    for s in samples {
        if s.x.len() != k * n || s.w_star.len() != n {
            return Err(Error::dim(format!(
                "sample for {} has input {} and target {}, expected {} and {n}",
                s.month,
                s.x.len(),
                s.w_star.len(),
                k * n
            )));
        }
    }
    let mut unique = contributors.to_vec();
    unique.sort();
    unique.dedup_by(|a, b| a.id == b.id);
    if unique.len() != k {
        return Err(Error::invalid("duplicate contributor id in panel"));
    }
    let positions = canonical_positions(contributors);
    let canonical: Vec<ContributorRef> = positions.iter().map(|&p| contributors[p].clone()).collect();
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| reorder(&s.x, &positions, n)).collect();
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.w_star.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Mlp3::init(k * n, config.hidden, config.hidden, n, Head::Softmax, &mut rng);
    let mut opt = OptimState::for_net(&net, AdamConfig::with_lr(config.learning_rate));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = TrainBatch::new(
                chunk.iter().map(|&i| inputs[i].clone()).collect(),
                chunk.iter().map(|&i| targets[i].clone()).collect(),
            )?;
            let (loss, grad) = net.backward(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("{level} aggregator loss at epoch {epoch}")));
            }
            opt.optim_step(&mut net, &grad)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        final_loss = epoch_loss / samples.len() as f64;
        log::trace!("{level} epoch {epoch} loss {final_loss:.6}");
    }
    let checksum = model_checksum(level, &canonical, &net);
    Ok(AggregatorModel {
        version: AGGREGATOR_VERSION,
        level,
        contributors: canonical,
        n_assets: n,
        config: config.clone(),
        net,
        final_loss,
        checksum,
    })
}

impl AggregatorModel {
    pub fn id(&self) -> &str {
        self.level.as_str()
    }

    /// Allocation for a panel holding exactly this model's contributors, in
    /// any order.
    pub fn act(&self, panel: &DecisionPanel) -> Result<PortfolioWeights> {
        let positions = canonical_positions(&panel.contributors);
        let ordered: Vec<&ContributorRef> = positions.iter().map(|&p| &panel.contributors[p]).collect();
        if ordered.len() != self.contributors.len() || ordered.iter().zip(&self.contributors).any(|(a, b)| *a != b) {
            return Err(Error::invalid(format!(
                "{} aggregator was trained on a different contributor panel",
                self.level
            )));
        }
        if panel.n_assets() != self.n_assets {
            return Err(Error::dim(format!(
                "{} aggregator expects {} assets, panel has {}",
                self.level,
                self.n_assets,
                panel.n_assets()
            )));
        }
        let x = reorder(&panel.concatenated(), &positions, self.n_assets);
        PortfolioWeights::new(self.net.forward(&x)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: AggregatorModel = serde_json::from_str(&text)?;
        if m.version != AGGREGATOR_VERSION {
            return Err(Error::Schema(format!("unsupported aggregator version {}", m.version)));
        }
        if model_checksum(m.level, &m.contributors, &m.net) != m.checksum {
            return Err(Error::Schema(format!("{} aggregator checksum mismatch", m.level)));
        }
        Ok(m)
    }
}

/// An aggregator bound to the allocators that feed it; tiers nest.
#[derive(Clone)]
pub struct Tier {
    model: AggregatorModel,
    members: Vec<Arc<dyn Allocator>>,
}

impl fmt::Debug for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tier")
            .field("level", &self.model.level)
            .field("members", &self.members.iter().map(|m| m.id().to_string()).collect::<Vec<_>>())
            .finish()
    }
}

impl Tier {
    /// Members must be exactly the model's contributors, checksums included.
    pub fn new(model: AggregatorModel, members: Vec<Arc<dyn Allocator>>) -> Result<Self> {
        let mut refs: Vec<ContributorRef> = members.iter().map(|m| ContributorRef::of(m.as_ref())).collect();
        refs.sort();
        if refs != model.contributors {
            let missing: Vec<&str> = model
                .contributors
                .iter()
                .filter(|c| !refs.contains(c))
                .map(|c| c.id.as_str())
                .collect();
            return Err(Error::invalid(format!(
                "{} tier members do not match its checkpoint (unmatched: {})",
                model.level,
                missing.join(", ")
            )));
        }
        Ok(Tier { model, members })
    }

    pub fn model(&self) -> &AggregatorModel {
        &self.model
    }

    pub fn members(&self) -> &[Arc<dyn Allocator>] {
        &self.members
    }
}

impl Allocator for Tier {
    fn id(&self) -> &str {
        self.model.id()
    }

    fn checksum(&self) -> String {
        self.model.checksum.clone()
    }

    fn allocate(&self, inputs: &MonthInputs<'_>) -> Result<PortfolioWeights> {
        let mut contributors = Vec::with_capacity(self.members.len());
        let mut weights = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let w = m
                .allocate(inputs)
                .map_err(|e| Error::invalid(format!("{} tier: member {} failed: {e}", self.model.level, m.id())))?;
            contributors.push(ContributorRef::of(m.as_ref()));
            weights.push(w);
        }
        let panel = DecisionPanel {
            month: inputs.month.succ(),
            holding: 0,
            contributors,
            weights,
        };
        self.model.act(&panel)
    }
}

/// Full hierarchical decision for one month.
pub fn hierarchy_act(root: &Tier, inputs: &MonthInputs<'_>) -> Result<PortfolioWeights> {
    root.allocate(inputs)
}
