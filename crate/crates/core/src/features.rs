//! Monthly per-asset risk metrics, the cross-asset correlation block, and
//! the two observation layouts fed to the agents.

use serde::{Deserialize, Serialize};

use crate::data::MonthlySlice;
use crate::error::{Error, Result};

/// Below this a standard deviation, downside deviation or drawdown is treated as zero.
pub const ZERO_GUARD: f64 = 1e-12;

pub fn daily_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::invalid("need at least two prices for returns"));
    }
    if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!("nonpositive price {p}")));
    }
    Ok(prices.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (ddof = 1).
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn need_two(returns: &[f64], what: &str) -> Result<()> {
    if returns.len() < 2 {
        Err(Error::invalid(format!("{what} needs at least two returns")))
    } else {
        Ok(())
    }
}

pub fn sharpe_ratio(returns: &[f64], risk_free: f64) -> Result<f64> {
    need_two(returns, "sharpe ratio")?;
    let sd = sample_std(returns);
    if sd < ZERO_GUARD {
        return Ok(0.0);
    }
    Ok((mean(returns) - risk_free) / sd)
}

pub fn sortino_ratio(returns: &[f64], risk_free: f64) -> Result<f64> {
    need_two(returns, "sortino ratio")?;
    let downside = returns
        .iter()
        .map(|r| (r - risk_free).min(0.0).powi(2))
        .sum::<f64>()
        / returns.len() as f64;
    let dd = downside.sqrt();
    if dd < ZERO_GUARD {
        return Ok(0.0);
    }
    Ok((mean(returns) - risk_free) / dd)
}

/// Largest peak-to-trough fractional decline.
pub fn max_drawdown(prices: &[f64]) -> Result<f64> {
    if prices.is_empty() {
        return Err(Error::invalid("max drawdown of an empty series"));
    }
    if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!("nonpositive value {p}")));
    }
    let mut peak = prices[0];
    let mut mdd: f64 = 0.0;
    for &p in prices {
        peak = peak.max(p);
        mdd = mdd.max((peak - p) / peak);
    }
    Ok(mdd)
}

/// Period total return over maximum drawdown.
pub fn calmar_ratio(prices: &[f64]) -> Result<f64> {
    let mdd = max_drawdown(prices)?;
    if mdd < ZERO_GUARD {
        return Ok(0.0);
    }
    let total = prices[prices.len() - 1] / prices[0] - 1.0;
    Ok(total / mdd)
}

pub fn volatility(returns: &[f64]) -> Result<f64> {
    need_two(returns, "volatility")?;
    Ok(sample_std(returns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyMetrics {
    pub sharpe: Vec<f64>,
    pub sortino: Vec<f64>,
    pub calmar: Vec<f64>,
    pub max_drawdown: Vec<f64>,
    pub volatility: Vec<f64>,
}

impl MonthlyMetrics {
    /// Metrics for every asset of one month, using the boundary close so the
    /// first day's return is included. Months with fewer than two returns
    /// report zeros for the return-based ratios.
    pub fn compute(slice: &MonthlySlice, risk_free: f64) -> Result<Self> {
        let n = slice.prices.len();
        let mut m = MonthlyMetrics {
            sharpe: Vec::with_capacity(n),
            sortino: Vec::with_capacity(n),
            calmar: Vec::with_capacity(n),
            max_drawdown: Vec::with_capacity(n),
            volatility: Vec::with_capacity(n),
        };
        for a in 0..n {
            let path = slice.chained(a);
            let r = daily_returns(&path)?;
            let short = r.len() < 2;
            m.sharpe.push(if short { 0.0 } else { sharpe_ratio(&r, risk_free)? });
            m.sortino.push(if short { 0.0 } else { sortino_ratio(&r, risk_free)? });
            m.volatility.push(if short { 0.0 } else { volatility(&r)? });
            m.calmar.push(calmar_ratio(&path)?);
            m.max_drawdown.push(max_drawdown(&path)?);
        }
        Ok(m)
    }

    pub fn n_assets(&self) -> usize {
        self.sharpe.len()
    }
}

/// Pearson correlations of one month's daily returns, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub n: usize,
    pub values: Vec<f64>,
}

impl CorrelationBlock {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn flattened(&self) -> &[f64] {
        &self.values
    }
}

/// Correlation matrix; an asset with zero variance gets 1 on the diagonal and 0 elsewhere.
pub fn correlation_matrix(returns: &[Vec<f64>]) -> Result<CorrelationBlock> {
    let n = returns.len();
    if n == 0 {
        return Err(Error::Empty("no assets for correlation".into()));
    }
    let len = returns[0].len();
    if let Some(bad) = returns.iter().position(|r| r.len() != len) {
        return Err(Error::dim(format!(
            "asset {bad} has {} returns, expected {len}",
            returns[bad].len()
        )));
    }
    if len < 2 {
        return Err(Error::invalid("correlation needs at least two returns per asset"));
    }
    let centered: Vec<Vec<f64>> = returns
        .iter()
        .map(|r| {
            let m = mean(r);
            r.iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let degenerate: Vec<bool> = norms
        .iter()
        .map(|&s| s / ((len - 1) as f64).sqrt() < ZERO_GUARD)
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    Ok(CorrelationBlock { n, values })
}

/// Correlation block of a month slice's daily returns (boundary included).
pub fn slice_correlation(slice: &MonthlySlice) -> Result<CorrelationBlock> {
    let returns = (0..slice.prices.len())
        .map(|a| daily_returns(&slice.chained(a)))
        .collect::<Result<Vec<_>>>()?;
    if returns.first().map_or(0, Vec::len) < 2 {
        let n = returns.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        return Ok(CorrelationBlock { n, values });
    }
    correlation_matrix(&returns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationMode {
    Metrics,
    Nlp,
}

impl ObservationMode {
    pub const ALL: [ObservationMode; 2] = [ObservationMode::Metrics, ObservationMode::Nlp];

    pub fn dim(self, n_assets: usize) -> usize {
        match self {
            ObservationMode::Metrics => 5 * n_assets + n_assets * n_assets,
            ObservationMode::Nlp => 2 * n_assets,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObservationMode::Metrics => "metrics",
            ObservationMode::Nlp => "nlp",
        }
    }
}

impl std::fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObservationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metrics" => Ok(ObservationMode::Metrics),
            "nlp" => Ok(ObservationMode::Nlp),
            _ => Err(Error::invalid(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSegment {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

/// Named index ranges of an observation vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub mode: ObservationMode,
    pub n_assets: usize,
    pub segments: Vec<LayoutSegment>,
}

impl ObservationLayout {
    pub fn new(mode: ObservationMode, n_assets: usize) -> Self {
        let names: &[&str] = match mode {
            ObservationMode::Metrics => &["sharpe", "sortino", "calmar", "max_drawdown", "volatility", "correlation"],
            ObservationMode::Nlp => &["volatility", "sentiment"],
        };
        let mut start = 0;
        let segments = names
            .iter()
            .map(|&name| {
                let len = if name == "correlation" { n_assets * n_assets } else { n_assets };
                let seg = LayoutSegment {
                    name: name.to_string(),
                    start,
                    len,
                };
                start += len;
                seg
            })
            .collect();
        ObservationLayout {
            mode,
            n_assets,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Segment name and offset inside it for a flat index.
    pub fn locate(&self, index: usize) -> Option<(&str, usize)> {
        self.segments
            .iter()
            .find(|s| index >= s.start && index < s.start + s.len)
            .map(|s| (s.name.as_str(), index - s.start))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub mode: ObservationMode,
    pub n_assets: usize,
    pub values: Vec<f64>,
}

impl ObservationVector {
    pub fn layout(&self) -> ObservationLayout {
        ObservationLayout::new(self.mode, self.n_assets)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Assemble one month's observation in the mode's fixed layout.
pub fn build_observation(
    metrics: &MonthlyMetrics,
    corr: &CorrelationBlock,
    sentiment: Option<&[f64]>,
    mode: ObservationMode,
) -> Result<ObservationVector> {
    let n = metrics.n_assets();
    if corr.n != n {
        return Err(Error::dim(format!("metrics cover {n} assets, correlation {}", corr.n)));
    }
    let mut values = Vec::with_capacity(mode.dim(n));
    match mode {
        ObservationMode::Metrics => {
            values.extend_from_slice(&metrics.sharpe);
            values.extend_from_slice(&metrics.sortino);
            values.extend_from_slice(&metrics.calmar);
            values.extend_from_slice(&metrics.max_drawdown);
            values.extend_from_slice(&metrics.volatility);
            values.extend_from_slice(corr.flattened());
        }
        ObservationMode::Nlp => {
            let s = sentiment.ok_or_else(|| Error::invalid("nlp observation requires sentiment scores"))?;
            if s.len() != n {
                return Err(Error::dim(format!("{} sentiment scores for {n} assets", s.len())));
            }
            values.extend_from_slice(&metrics.volatility);
            values.extend_from_slice(s);
        }
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation entry {v}")));
    }
    Ok(ObservationVector {
        mode,
        n_assets: n,
        values,
    })
}
