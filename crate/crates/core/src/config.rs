//! Run configuration: TOML with every default materialized, unknown keys
//! rejected and each problem reported with its key path.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agents::{Algorithm, Hyperparams};
use crate::data::{FillPolicy, MonthId};
use crate::env::RewardParams;
use crate::error::{Error, Result};
use crate::features::ObservationMode;
use crate::hierarchy::AggregatorConfig;
use crate::market::parse_month_range;
use crate::synth::UNIVERSE;

/// Prefix of environment variables that override config keys, e.g.
/// `HIERFOLIO__REWARD__ALPHA2=1.5` or `HIERFOLIO__AGENTS__SEEDS="0..2"`.
pub const ENV_PREFIX: &str = "HIERFOLIO__";

/// Seed labels. Written as `"a..b"` (inclusive, consecutive) or a list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl Seeds {
    pub fn range(first: u64, last: u64) -> Self {
        Seeds((first..=last).collect())
    }

    fn is_consecutive(&self) -> bool {
        !self.0.is_empty() && self.0.windows(2).all(|w| w[1] == w[0] + 1)
    }
}

impl FromStr for Seeds {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::invalid(format!("seed range `{s}` is not of the form a..b")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("seed range `{s}` has a non-integer bound")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(Error::invalid(format!("seed range `{s}` runs backwards")));
        }
        Ok(Seeds::range(a, b))
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_consecutive() {
            write!(f, "{}..{}", self.0[0], self.0[self.0.len() - 1])
        } else {
            write!(f, "{:?}", self.0)
        }
    }
}

impl Serialize for Seeds {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_consecutive() {
            s.serialize_str(&self.to_string())
        } else {
            self.0.serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Range(String),
            List(Vec<u64>),
        }
        match Raw::deserialize(d)? {
            Raw::Range(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::List(v) => Ok(Seeds(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Price CSV; the seeded synthetic universe is generated when absent.
    pub prices: Option<PathBuf>,
    /// Sentiment CSV; simulated sentiment is used when absent.
    pub sentiment: Option<PathBuf>,
    pub fill: FillPolicy,
    pub synthetic_seed: u64,
    pub risk_free: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            prices: None,
            sentiment: None,
            fill: FillPolicy::Forward,
            synthetic_seed: 0,
            risk_free: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub tickers: Vec<String>,
    /// Single-asset benchmark.
    pub index: String,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            tickers: UNIVERSE.iter().map(|s| s.to_string()).collect(),
            index: "GSPC".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowsConfig {
    /// Holding months, `YYYY-MM:YYYY-MM`.
    pub train: String,
    pub test: String,
}

impl Default for WindowsConfig {
    fn default() -> Self {
        WindowsConfig {
            train: "2003-02:2017-12".into(),
            test: "2018-01:2024-12".into(),
        }
    }
}

impl WindowsConfig {
    pub fn train_range(&self) -> Result<(MonthId, MonthId)> {
        parse_month_range(&self.train)
    }

    pub fn test_range(&self) -> Result<(MonthId, MonthId)> {
        parse_month_range(&self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let [alpha1, alpha2, alpha3] = RewardParams::default().alphas();
        RewardConfig { alpha1, alpha2, alpha3 }
    }
}

impl RewardConfig {
    pub fn params(&self) -> Result<RewardParams> {
        RewardParams::new(self.alpha1, self.alpha2, self.alpha3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SentimentConfig {
    /// Weight of uniform noise mixed into the simulated signal.
    pub lambda: f64,
}

impl Default for SentimentConfig {
    fn default() -> Self {
        SentimentConfig { lambda: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    pub algorithms: Vec<Algorithm>,
    pub modes: Vec<ObservationMode>,
    pub seeds: Seeds,
    pub episodes: usize,
    pub hyper: Hyperparams,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        AgentsConfig {
            algorithms: Algorithm::ALL.to_vec(),
            modes: ObservationMode::ALL.to_vec(),
            seeds: Seeds::range(0, 4),
            episodes: 100,
            hyper: Hyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub hidden: usize,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        let d = AggregatorConfig::default();
        AggregatorSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            horizon: d.horizon,
            learning_rate: d.learning_rate,
            hidden: d.hidden,
        }
    }
}

impl AggregatorSection {
    pub fn with_seed(&self, seed: u64) -> AggregatorConfig {
        AggregatorConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            horizon: self.horizon,
            learning_rate: self.learning_rate,
            hidden: self.hidden,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub log_scale: bool,
    pub risk_free_annual: f64,
    /// Add the drifting buy-and-hold equal-weight row.
    pub buy_and_hold: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            log_scale: true,
            risk_free_annual: 0.0,
            buy_and_hold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub global_seed: u64,
    pub output_dir: PathBuf,
    /// Use rayon where the work is data-parallel.
    pub parallel: bool,
    pub data: DataConfig,
    pub universe: UniverseConfig,
    pub windows: WindowsConfig,
    pub reward: RewardConfig,
    pub sentiment: SentimentConfig,
    pub agents: AgentsConfig,
    pub aggregator: AggregatorSection,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            global_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            parallel: true,
            data: DataConfig::default(),
            universe: UniverseConfig::default(),
            windows: WindowsConfig::default(),
            reward: RewardConfig::default(),
            sentiment: SentimentConfig::default(),
            agents: AgentsConfig::default(),
            aggregator: AggregatorSection::default(),
            report: ReportConfig::default(),
        }
    }
}

/// One configuration problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn issues_error(issues: &[ConfigIssue]) -> Error {
    let first = &issues[0];
    Error::Config {
        path: first.path.clone(),
        msg: issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
    }
}

impl RunConfig {
    /// Every semantic problem, each with its key path.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut push = |path: &str, message: String| {
            out.push(ConfigIssue {
                path: path.to_string(),
                message,
            })
        };
        for (key, v) in [
            ("reward.alpha1", self.reward.alpha1),
            ("reward.alpha2", self.reward.alpha2),
            ("reward.alpha3", self.reward.alpha3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                push(key, format!("must be a nonnegative number, got {v}"));
            }
        }
        if self.reward.alpha1 == 0.0 && self.reward.alpha2 == 0.0 && self.reward.alpha3 == 0.0 {
            push("reward", "at least one alpha must be positive".into());
        }
        let train = self.windows.train_range();
        let test = self.windows.test_range();
        if let Err(e) = &train {
            push("windows.train", e.to_string());
        }
        if let Err(e) = &test {
            push("windows.test", e.to_string());
        }
        if let (Ok(tr), Ok(te)) = (&train, &test) {
            if tr.1 >= te.0 {
                push("windows", format!("train window {}..{} must end before test window starts at {}", tr.0, tr.1, te.0));
            }
        }
        if self.universe.tickers.len() < 2 {
            push("universe.tickers", "need at least two assets".into());
        }
        let mut sorted = self.universe.tickers.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            push("universe.tickers", "duplicate ticker".into());
        }
        if !self.universe.tickers.contains(&self.universe.index) {
            push("universe.index", format!("`{}` is not in universe.tickers", self.universe.index));
        }
        if self.agents.algorithms.is_empty() {
            push("agents.algorithms", "empty".into());
        }
        if self.agents.modes.is_empty() {
            push("agents.modes", "empty".into());
        }
        if self.agents.seeds.0.is_empty() {
            push("agents.seeds", "empty".into());
        }
        let mut seeds = self.agents.seeds.0.clone();
        seeds.sort();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            push("agents.seeds", "duplicate seed".into());
        }
        for a in &self.agents.algorithms {
            if let Err(e) = self.agents.hyper.validate(*a) {
                push("agents.hyper", e.to_string());
            }
        }
        if let Err(e) = self.aggregator.with_seed(0).validate() {
            push("aggregator", e.to_string());
        }
        if !(0.0..=1.0).contains(&self.sentiment.lambda) {
            push("sentiment.lambda", format!("must be in [0, 1], got {}", self.sentiment.lambda));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues_error(&issues))
        }
    }

    /// Parse TOML text, apply `overrides` (dotted key, raw value) and
    /// validate. Relative data paths resolve against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[(String, String)], base_dir: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            path: "<root>".into(),
            msg: e.to_string(),
        })?;
        for (key, raw) in overrides {
            apply_override(&mut table, key, raw)?;
        }
        let mut cfg: RunConfig =
            serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config {
                path: e.path().to_string(),
                msg: e.inner().to_string(),
            })?;
        if let Some(base) = base_dir {
            for p in [&mut cfg.data.prices, &mut cfg.data.sentiment].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Normalized TOML with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config {
            path: "<root>".into(),
            msg: e.to_string(),
        })
    }
}

/// Overrides from `HIERFOLIO__SECTION__KEY=value` variables.
pub fn env_overrides<I: IntoIterator<Item = (String, String)>>(vars: I) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join("."), v))
        })
        .collect();
    out.sort();
    out
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    // a bare word that is not valid TOML is taken as a string
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config {
            path: key.to_string(),
            msg: format!("`{p}` is not a table"),
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Read, override from the process environment, and validate.
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty());
    RunConfig::from_toml(&text, &env_overrides(std::env::vars()), base)
}
