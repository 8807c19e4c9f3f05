//! Staged end-to-end run. Each stage's outputs are keyed by a hash of the
//! config subtree it reads and the hashes of its input artifacts; a stage
//! whose key and outputs are unchanged is skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::agents::{run_seed_battery, AgentSpec, BatteryCell, BatteryRequest, Policy, PolicySet};
use crate::allocator::Allocator;
use crate::backtest::{benchmark_actor, run_backtest, run_buy_and_hold, BacktestReport, BenchmarkSpec, Fingerprint};
use crate::config::RunConfig;
use crate::data::{fill_missing, load_price_table, PriceTable};
use crate::env::PortfolioEnv;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{ObservationLayout, ObservationMode};
use crate::hierarchy::{
    build_panels, collect_imitation_dataset, train_aggregator, AggregatorModel, ContributorRef, Level, Tier,
};
use crate::market::{Market, Window};
use crate::report::{emit_report, ReportFile, ReportOptions};
use crate::seed::derive_seed;
use crate::sentiment::{load_sentiment_table, simulate_sentiment, SentimentTable};
use crate::synth::synthetic_universe;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Sentiment,
    Features,
    TrainBase,
    TrainMeta,
    TrainSuper,
    Backtest,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Sentiment,
        Stage::Features,
        Stage::TrainBase,
        Stage::TrainMeta,
        Stage::TrainSuper,
        Stage::Backtest,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Sentiment => "sentiment",
            Stage::Features => "features",
            Stage::TrainBase => "train-base",
            Stage::TrainMeta => "train-meta",
            Stage::TrainSuper => "train-super",
            Stage::Backtest => "backtest",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

/// Relative artifact paths inside the output directory.
pub mod paths {
    pub const PRICES: &str = "data/prices.csv";
    pub const SENTIMENT: &str = "data/sentiment.csv";
    pub const FEATURE_LAYOUT: &str = "features/layout.json";
    pub const BATTERY: &str = "base/battery.json";
    pub const SUPER: &str = "super/super.json";
    pub const TABLE: &str = "reports/table.csv";
    pub const MANIFEST: &str = "manifest.json";
    pub const STAGES: &str = "stages.json";
    pub const CONFIG_ECHO: &str = "config.toml";

    pub fn features(mode: crate::features::ObservationMode) -> String {
        format!("features/{mode}.csv")
    }

    pub fn base(id: &str) -> String {
        format!("base/{id}.json")
    }

    pub fn meta(level: crate::hierarchy::Level) -> String {
        format!("meta/{level}.json")
    }

    pub fn report(stem: &str, ext: &str) -> String {
        format!("reports/{stem}.{ext}")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StageRecord {
    key: String,
    artifacts: BTreeMap<String, String>,
}

/// Every artifact produced by a run, with its hash. Contains no timestamps
/// or cache state, so identical runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub stages: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Artifacts whose current content no longer matches the manifest.
    pub fn verify(&self, out_dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, hash) in &self.artifacts {
            let p = out_dir.join(rel);
            if !p.exists() || hash_file(&p)? != *hash {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<StageOutcome>,
    pub manifest: PathBuf,
}

impl RunSummary {
    pub fn all_cached(&self) -> bool {
        self.stages.iter().all(|s| s.cached)
    }
}

/// Restrictions a stage subcommand places on a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunScope {
    /// Last stage to execute.
    pub until: Option<Stage>,
    /// Meta levels to (re)train; all configured modes when empty.
    pub meta_modes: Vec<ObservationMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatteryRecord {
    id: String,
    spec: AgentSpec,
    status: String,
    train_roi: Option<f64>,
}

/// Hash of the config with the output location blanked.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = PathBuf::new();
    Ok(sha256_hex(serde_json::to_string(&c)?.as_bytes()))
}

pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    exec: Exec,
    records: BTreeMap<String, StageRecord>,
    manifest: Manifest,
    outcomes: Vec<StageOutcome>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let records = match std::fs::read_to_string(out.join(paths::STAGES)) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
            Err(_) => BTreeMap::new(),
        };
        let exec = if cfg.parallel { Exec::Parallel } else { Exec::Sequential };
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            config_hash: config_hash(&cfg)?,
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        };
        std::fs::write(out.join(paths::CONFIG_ECHO), cfg.to_toml()?)
            .map_err(|e| Error::io(out.join(paths::CONFIG_ECHO), e))?;
        Ok(Pipeline {
            cfg,
            out,
            exec,
            records,
            manifest,
            outcomes: Vec::new(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn artifact_hash(&self, rel: &str) -> Result<String> {
        if let Some(h) = self.manifest.artifacts.get(rel) {
            return Ok(h.clone());
        }
        hash_file(&self.path(rel))
    }

    fn stage_key(&self, stage: Stage, settings: serde_json::Value, inputs: &[String]) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.as_str());
        h.update(serde_json::to_string(&settings)?);
        for rel in inputs {
            h.update(rel.as_bytes());
            h.update(self.artifact_hash(rel)?);
        }
        Ok(hex::encode(h.finalize()))
    }

    fn cached(&self, record_name: &str, key: &str) -> Result<Option<StageRecord>> {
        let Some(rec) = self.records.get(record_name) else {
            return Ok(None);
        };
        if rec.key != key {
            return Ok(None);
        }
        for (rel, hash) in &rec.artifacts {
            let p = self.path(rel);
            if !p.exists() || hash_file(&p)? != *hash {
                return Ok(None);
            }
        }
        Ok(Some(rec.clone()))
    }

    /// Run `compute` unless the stage is cached; record its artifacts.
    fn stage<F>(&mut self, stage: Stage, record_name: &str, key: String, compute: F) -> Result<()>
    where
        F: FnOnce(&Self) -> Result<Vec<String>>,
    {
        let rec = match self.cached(record_name, &key)? {
            Some(rec) => {
                log::info!("{record_name}: cached");
                self.outcomes.push(StageOutcome { stage, cached: true });
                rec
            }
            None => {
                log::info!("{record_name}: running");
                let written = compute(self)?;
                let mut artifacts = BTreeMap::new();
                for rel in written {
                    let h = hash_file(&self.path(&rel))?;
                    artifacts.insert(rel, h);
                }
                let rec = StageRecord { key, artifacts };
                self.records.insert(record_name.to_string(), rec.clone());
                self.save_records()?;
                self.outcomes.push(StageOutcome { stage, cached: false });
                rec
            }
        };
        self.manifest.stages.insert(record_name.to_string(), rec.key.clone());
        self.manifest.artifacts.extend(rec.artifacts);
        self.save_manifest()
    }

    fn save_records(&self) -> Result<()> {
        let p = self.path(paths::STAGES);
        std::fs::write(&p, serde_json::to_string_pretty(&self.records)?).map_err(|e| Error::io(&p, e))
    }

    fn save_manifest(&self) -> Result<()> {
        let p = self.path(paths::MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(&self.manifest)? + "\n").map_err(|e| Error::io(&p, e))
    }

    fn ensure_dir(&self, rel: &str) -> Result<()> {
        let p = self.path(rel);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))
    }

    // ---- stages ----

    pub fn ingest(&mut self) -> Result<PriceTable> {
        let source_hash = match &self.cfg.data.prices {
            Some(p) => Some(hash_file(p)?),
            None => None,
        };
        let settings = json!({
            "source": source_hash,
            "fill": self.cfg.data.fill,
            "synthetic_seed": self.cfg.data.synthetic_seed,
            "tickers": self.cfg.universe.tickers,
        });
        let key = self.stage_key(Stage::Ingest, settings, &[])?;
        self.stage(Stage::Ingest, Stage::Ingest.as_str(), key, |p| {
            let raw = match &p.cfg.data.prices {
                Some(path) => load_price_table(path, &p.cfg.universe.tickers)?,
                None => {
                    let t = synthetic_universe(p.cfg.data.synthetic_seed)?;
                    select_tickers(&t, &p.cfg.universe.tickers)?
                }
            };
            let clean = fill_missing(&raw, p.cfg.data.fill)?;
            p.ensure_dir("data")?;
            clean.write_csv(&p.path(paths::PRICES))?;
            Ok(vec![paths::PRICES.to_string()])
        })?;
        load_price_table(&self.path(paths::PRICES), &self.cfg.universe.tickers)
    }

    pub fn sentiment(&mut self, prices: &PriceTable) -> Result<SentimentTable> {
        let source_hash = match &self.cfg.data.sentiment {
            Some(p) => Some(hash_file(p)?),
            None => None,
        };
        let settings = json!({
            "source": source_hash,
            "lambda": self.cfg.sentiment.lambda,
            "global_seed": self.cfg.global_seed,
        });
        let key = self.stage_key(Stage::Sentiment, settings, &[paths::PRICES.to_string()])?;
        self.stage(Stage::Sentiment, Stage::Sentiment.as_str(), key, |p| {
            let table = match &p.cfg.data.sentiment {
                Some(path) => load_sentiment_table(path)?,
                None => {
                    let slices = crate::data::monthly_partition(prices)?;
                    simulate_sentiment(
                        prices.tickers(),
                        &slices,
                        derive_seed(p.cfg.global_seed, "sentiment"),
                        p.cfg.sentiment.lambda,
                    )?
                }
            };
            p.ensure_dir("data")?;
            table.write_csv(&p.path(paths::SENTIMENT))?;
            Ok(vec![paths::SENTIMENT.to_string()])
        })?;
        load_sentiment_table(&self.path(paths::SENTIMENT))
    }

    pub fn features(&mut self, prices: PriceTable, sentiment: &SentimentTable) -> Result<Market> {
        let market = Market::build(prices, Some(sentiment), self.cfg.data.risk_free, self.exec)?;
        let settings = json!({ "risk_free": self.cfg.data.risk_free });
        let key = self.stage_key(
            Stage::Features,
            settings,
            &[paths::PRICES.to_string(), paths::SENTIMENT.to_string()],
        )?;
        self.stage(Stage::Features, Stage::Features.as_str(), key, |p| {
            p.ensure_dir("features")?;
            let mut written = Vec::new();
            let mut layouts = Vec::new();
            for mode in ObservationMode::ALL {
                let rel = paths::features(mode);
                write_observations(&market, mode, &p.path(&rel))?;
                written.push(rel);
                layouts.push(ObservationLayout::new(mode, market.n_assets()));
            }
            let lp = p.path(paths::FEATURE_LAYOUT);
            std::fs::write(&lp, serde_json::to_string_pretty(&layouts)?).map_err(|e| Error::io(&lp, e))?;
            written.push(paths::FEATURE_LAYOUT.to_string());
            Ok(written)
        })?;
        Ok(market)
    }

    fn window(&self, market: &Market, train: bool) -> Result<Window> {
        let (a, b) = if train {
            self.cfg.windows.train_range()?
        } else {
            self.cfg.windows.test_range()?
        };
        Window::resolve(market, a, b)
    }

    fn battery_request(&self) -> Result<BatteryRequest> {
        Ok(BatteryRequest {
            algorithms: self.cfg.agents.algorithms.clone(),
            modes: self.cfg.agents.modes.clone(),
            seeds: self.cfg.agents.seeds.0.clone(),
            episodes: self.cfg.agents.episodes,
            hyper: self.cfg.agents.hyper.clone(),
            reward: self.cfg.reward.params()?,
            global_seed: self.cfg.global_seed,
        })
    }

    /// Train the seed battery; failed seeds are recorded, not fatal.
    pub fn train_base(&mut self, market: &Market) -> Result<Vec<BatteryCell>> {
        let req = self.battery_request()?;
        let settings = json!({ "request": req, "train": self.cfg.windows.train });
        let key = self.stage_key(Stage::TrainBase, settings, &[paths::PRICES.to_string(), paths::SENTIMENT.to_string()])?;
        self.stage(Stage::TrainBase, Stage::TrainBase.as_str(), key, |p| {
            let window = p.window(market, true)?;
            let cells = run_seed_battery(market, window, &req, p.exec);
            let base_dir = p.path("base");
            if base_dir.exists() {
                std::fs::remove_dir_all(&base_dir).map_err(|e| Error::io(&base_dir, e))?;
            }
            p.ensure_dir("base")?;
            let mut written = Vec::new();
            let mut records = Vec::new();
            for c in &cells {
                let (status, roi) = match &c.outcome {
                    Ok((policy, roi)) => {
                        let rel = paths::base(&policy.id);
                        policy.save(&p.path(&rel))?;
                        written.push(rel);
                        ("ok".to_string(), Some(*roi))
                    }
                    Err(msg) => (format!("failed: {msg}"), None),
                };
                records.push(BatteryRecord {
                    id: c.spec.id(),
                    spec: c.spec.clone(),
                    status,
                    train_roi: roi,
                });
            }
            let bp = p.path(paths::BATTERY);
            std::fs::write(&bp, serde_json::to_string_pretty(&records)?).map_err(|e| Error::io(&bp, e))?;
            written.push(paths::BATTERY.to_string());
            Ok(written)
        })?;
        self.load_battery()
    }

    fn load_battery(&self) -> Result<Vec<BatteryCell>> {
        let bp = self.path(paths::BATTERY);
        let text = std::fs::read_to_string(&bp).map_err(|e| Error::io(&bp, e))?;
        let records: Vec<BatteryRecord> = serde_json::from_str(&text)?;
        records
            .into_iter()
            .map(|r| {
                let outcome = match r.train_roi {
                    Some(roi) => Ok((Policy::load(&self.path(&paths::base(&r.id)))?, roi)),
                    None => Err(r.status),
                };
                Ok(BatteryCell { spec: r.spec, outcome })
            })
            .collect()
    }

    fn aggregator_seed(&self, level: Level) -> u64 {
        derive_seed(self.cfg.global_seed, &format!("aggregator/{level}"))
    }

    fn train_tier(
        &self,
        market: &Market,
        level: Level,
        mode: ObservationMode,
        members: &[Arc<dyn Allocator>],
    ) -> Result<AggregatorModel> {
        let window = self.window(market, true)?;
        let env = PortfolioEnv::new(market, window, mode, self.cfg.reward.params()?)?;
        let refs: Vec<&dyn Allocator> = members.iter().map(|m| m.as_ref()).collect();
        let panels = build_panels(&refs, market, window, self.exec)?;
        let config = self.cfg.aggregator.with_seed(self.aggregator_seed(level));
        let samples = collect_imitation_dataset(&panels, &env, config.horizon, self.exec)?;
        let contributors: Vec<ContributorRef> = panels[0].contributors.clone();
        train_aggregator(&samples, &contributors, level, &config)
    }

    pub fn train_meta(&mut self, market: &Market, cells: &[BatteryCell], modes: &[ObservationMode]) -> Result<Vec<Tier>> {
        let mut tiers = Vec::new();
        for &mode in &self.cfg.agents.modes.clone() {
            let level = meta_level(mode);
            let members: Vec<Arc<dyn Allocator>> = cells
                .iter()
                .filter(|c| c.spec.mode == mode)
                .filter_map(|c| c.outcome.as_ref().ok())
                .map(|(p, _)| Arc::new(p.clone()) as Arc<dyn Allocator>)
                .collect();
            if members.is_empty() {
                return Err(Error::invalid(format!("no trained {mode} base policies for {level}")));
            }
            let rel = paths::meta(level);
            let inputs: Vec<String> = std::iter::once(paths::PRICES.to_string())
                .chain(std::iter::once(paths::SENTIMENT.to_string()))
                .chain(members.iter().map(|m| paths::base(m.id())))
                .collect();
            let settings = json!({
                "aggregator": self.cfg.aggregator,
                "reward": self.cfg.reward,
                "train": self.cfg.windows.train,
                "seed": self.aggregator_seed(level),
            });
            let key = self.stage_key(Stage::TrainMeta, settings, &inputs)?;
            let record_name = format!("{}/{level}", Stage::TrainMeta);
            let selected = modes.is_empty() || modes.contains(&mode);
            let path = self.path(&rel);
            if selected || !path.exists() {
                self.stage(Stage::TrainMeta, &record_name, key, |p| {
                    let model = p.train_tier(market, level, mode, &members)?;
                    p.ensure_dir("meta")?;
                    model.save(&p.path(&rel))?;
                    Ok(vec![rel.clone()])
                })?;
            } else {
                self.manifest.artifacts.insert(rel.clone(), hash_file(&path)?);
                self.save_manifest()?;
            }
            tiers.push(Tier::new(AggregatorModel::load(&path)?, members)?);
        }
        Ok(tiers)
    }

    pub fn train_super(&mut self, market: &Market, metas: &[Tier]) -> Result<Tier> {
        let members: Vec<Arc<dyn Allocator>> = metas.iter().map(|t| Arc::new(t.clone()) as Arc<dyn Allocator>).collect();
        let inputs: Vec<String> = metas.iter().map(|t| paths::meta(t.model().level)).collect();
        let settings = json!({
            "aggregator": self.cfg.aggregator,
            "reward": self.cfg.reward,
            "train": self.cfg.windows.train,
            "seed": self.aggregator_seed(Level::Super),
        });
        let key = self.stage_key(Stage::TrainSuper, settings, &inputs)?;
        self.stage(Stage::TrainSuper, Stage::TrainSuper.as_str(), key, |p| {
            // the super tier observes the meta panel; its env mode only fixes
            // which observation the reward env carries, not what the tier reads
            let model = p.train_tier(market, Level::Super, ObservationMode::Metrics, &members)?;
            p.ensure_dir("super")?;
            model.save(&p.path(paths::SUPER))?;
            Ok(vec![paths::SUPER.to_string()])
        })?;
        Tier::new(AggregatorModel::load(&self.path(paths::SUPER))?, members)
    }

    fn fingerprint(&self) -> Result<Fingerprint> {
        Ok(Fingerprint {
            alphas: self.cfg.reward.params()?.alphas(),
            seeds: self.cfg.agents.seeds.0.clone(),
            horizon: self.cfg.aggregator.horizon,
            risk_free_annual: self.cfg.report.risk_free_annual,
            config_hash: self.manifest.config_hash.clone(),
        })
    }

    /// Backtest the tiers, benchmarks and median-seed base policies over
    /// both windows.
    pub fn backtest(&mut self, market: &Market, cells: &[BatteryCell], metas: &[Tier], root: &Tier) -> Result<()> {
        let mut inputs = vec![paths::PRICES.to_string(), paths::SENTIMENT.to_string(), paths::SUPER.to_string()];
        inputs.extend(metas.iter().map(|t| paths::meta(t.model().level)));
        inputs.push(paths::BATTERY.to_string());
        let settings = json!({
            "windows": self.cfg.windows,
            "index": self.cfg.universe.index,
            "report": self.cfg.report,
            "fingerprint": self.fingerprint()?,
        });
        let key = self.stage_key(Stage::Backtest, settings, &inputs)?;
        let fingerprint = self.fingerprint()?;
        self.stage(Stage::Backtest, Stage::Backtest.as_str(), key, |p| {
            let tickers = market.tickers().to_vec();
            let equal = benchmark_actor(&BenchmarkSpec::EqualWeight, &tickers)?;
            let index = benchmark_actor(&BenchmarkSpec::SingleAsset(p.cfg.universe.index.clone()), &tickers)?;
            let mut headline: Vec<&dyn Allocator> = vec![&equal, &index];
            headline.extend(metas.iter().map(|t| t as &dyn Allocator));
            headline.push(root);
            let median = PolicySet::median_of(cells)?;
            let base: Vec<&dyn Allocator> = median.selected.values().map(|p| p as &dyn Allocator).collect();
            p.ensure_dir("reports")?;
            let mut written = Vec::new();
            for (split, train) in [("train", true), ("test", false)] {
                let window = p.window(market, train)?;
                let mut reports: Vec<BacktestReport> = p
                    .exec
                    .map(&headline, |a| run_backtest(*a, market, window, &fingerprint))
                    .into_iter()
                    .collect::<Result<_>>()?;
                if p.cfg.report.buy_and_hold {
                    reports.insert(1, run_buy_and_hold(market, window, &fingerprint)?);
                }
                let base_reports: Vec<BacktestReport> = p
                    .exec
                    .map(&base, |a| run_backtest(*a, market, window, &fingerprint))
                    .into_iter()
                    .collect::<Result<_>>()?;
                for (stem, rs) in [(split.to_string(), reports), (format!("base-{split}"), base_reports)] {
                    let rel = paths::report(&stem, "json");
                    let path = p.path(&rel);
                    std::fs::write(&path, serde_json::to_string_pretty(&ReportFile::new(rs))?)
                        .map_err(|e| Error::io(&path, e))?;
                    written.push(rel);
                }
            }
            Ok(written)
        })
    }

    pub fn report(&mut self) -> Result<()> {
        let stems = ["train", "test", "base-train", "base-test"];
        let inputs: Vec<String> = stems.iter().map(|s| paths::report(s, "json")).collect();
        let settings = json!({ "log_scale": self.cfg.report.log_scale });
        let key = self.stage_key(Stage::Report, settings, &inputs)?;
        self.stage(Stage::Report, Stage::Report.as_str(), key, |p| {
            let options = ReportOptions {
                log_scale: p.cfg.report.log_scale,
            };
            let mut written = Vec::new();
            let mut loaded = BTreeMap::new();
            for stem in stems {
                let file = ReportFile::load(&p.path(&paths::report(stem, "json")))?;
                let dir = p.path("reports");
                emit_report(&file.reports, &dir, &format!("{stem}-summary"), options)?;
                // the summary JSON duplicates the stage input; keep the CSV and SVG
                std::fs::remove_file(dir.join(format!("{stem}-summary.json"))).map_err(|e| Error::io(&dir, e))?;
                written.push(paths::report(&format!("{stem}-summary"), "csv"));
                written.push(paths::report(&format!("{stem}-summary"), "svg"));
                loaded.insert(stem, file.reports);
            }
            let table = comparison_table(&loaded["train"], &loaded["test"])?;
            let tp = p.path(paths::TABLE);
            std::fs::write(&tp, table).map_err(|e| Error::io(&tp, e))?;
            written.push(paths::TABLE.to_string());
            Ok(written)
        })
    }

    fn reached(&self, stage: Stage, scope: &RunScope) -> bool {
        scope.until.is_none_or(|u| stage <= u)
    }

    /// Execute stages in order up to `scope.until`.
    pub fn run(mut self, scope: &RunScope) -> Result<RunSummary> {
        let prices = self.ingest()?;
        if self.reached(Stage::Sentiment, scope) {
            let sentiment = self.sentiment(&prices)?;
            if self.reached(Stage::Features, scope) {
                let market = self.features(prices, &sentiment)?;
                if self.reached(Stage::TrainBase, scope) {
                    let cells = self.train_base(&market)?;
                    if self.reached(Stage::TrainMeta, scope) {
                        let metas = self.train_meta(&market, &cells, &scope.meta_modes)?;
                        if self.reached(Stage::TrainSuper, scope) {
                            let root = self.train_super(&market, &metas)?;
                            if self.reached(Stage::Backtest, scope) {
                                self.backtest(&market, &cells, &metas, &root)?;
                                if self.reached(Stage::Report, scope) {
                                    self.report()?;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(RunSummary {
            stages: self.outcomes,
            manifest: self.out.join(paths::MANIFEST),
        })
    }
}

/// Full pipeline for a validated config.
pub fn run_pipeline(cfg: RunConfig) -> Result<RunSummary> {
    Pipeline::new(cfg)?.run(&RunScope::default())
}

pub fn meta_level(mode: ObservationMode) -> Level {
    match mode {
        ObservationMode::Metrics => Level::MetaMetrics,
        ObservationMode::Nlp => Level::MetaNlp,
    }
}

fn select_tickers(table: &PriceTable, tickers: &[String]) -> Result<PriceTable> {
    let columns = tickers
        .iter()
        .map(|t| {
            table
                .asset_index(t)
                .map(|i| table.column(i).to_vec())
                .ok_or_else(|| Error::invalid(format!("ticker `{t}` not in the synthetic universe")))
        })
        .collect::<Result<Vec<_>>>()?;
    PriceTable::new(tickers.to_vec(), table.calendar().to_vec(), columns)
}

/// One row per month: `month,v0,v1,...` for the chosen mode.
pub fn write_observations(market: &Market, mode: ObservationMode, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let dim = mode.dim(market.n_assets());
    let mut header = vec!["month".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for m in 0..market.n_months() {
        let obs = market.observation(m, mode)?;
        let mut row = vec![market.month_id(m).to_string()];
        row.extend(obs.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Headline rows with annualized ROI, Sharpe and volatility per split.
pub fn comparison_table(train: &[BacktestReport], test: &[BacktestReport]) -> Result<String> {
    let mut out = String::from("policy,train_roi,train_sharpe,train_vol,test_roi,test_sharpe,test_vol\n");
    for t in test {
        let tr = train
            .iter()
            .find(|r| r.policy_id == t.policy_id)
            .ok_or_else(|| Error::invalid(format!("{} missing from train reports", t.policy_id)))?;
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            t.policy_id,
            tr.annualized_roi,
            tr.annualized_sharpe,
            tr.annualized_vol,
            t.annualized_roi,
            t.annualized_sharpe,
            t.annualized_vol
        ));
    }
    Ok(out)
}
