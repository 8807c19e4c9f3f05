//! Walk-forward evaluation: chain monthly returns of any allocator over a
//! window and summarize the equity curve with annualized statistics.

use serde::{Deserialize, Serialize};

use crate::allocator::Allocator;
use crate::data::MonthId;
use crate::env::{hold_month, PortfolioWeights};
use crate::error::{Error, Result};
use crate::features::{max_drawdown, mean, sample_std, ZERO_GUARD};
use crate::market::{Market, MonthInputs, Window};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Settings a report was produced under, embedded for provenance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub alphas: [f64; 3],
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub risk_free_annual: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annualized {
    pub roi: f64,
    pub sharpe: f64,
    pub vol: f64,
    pub mdd: f64,
}

/// Annualize a monthly equity curve.
pub fn annualize(curve: &[f64], risk_free_annual: f64) -> Result<Annualized> {
    if curve.len() < 2 {
        return Err(Error::invalid("annualizing needs at least two monthly points"));
    }
    if curve.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("equity curve must be positive"));
    }
    let months = (curve.len() - 1) as f64;
    let roi = (curve[curve.len() - 1] / curve[0]).powf(12.0 / months) - 1.0;
    let returns: Vec<f64> = curve.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let vol = sample_std(&returns) * 12f64.sqrt();
    let sharpe = if vol < ZERO_GUARD {
        0.0
    } else {
        (mean(&returns) * 12.0 - risk_free_annual) / vol
    };
    Ok(Annualized {
        roi,
        sharpe,
        vol,
        mdd: max_drawdown(curve)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub policy_id: String,
    pub window: (MonthId, MonthId),
    /// Holding months, one per weight row.
    pub months: Vec<MonthId>,
    pub weights: Vec<Vec<f64>>,
    /// Starts at 1.0 before the first holding month.
    pub equity: Vec<f64>,
    pub annualized_roi: f64,
    pub annualized_sharpe: f64,
    pub annualized_vol: f64,
    pub mdd: f64,
    pub fingerprint: Fingerprint,
}

impl BacktestReport {
    fn from_path(
        policy_id: String,
        market: &Market,
        window: Window,
        weights: Vec<Vec<f64>>,
        equity: Vec<f64>,
        fingerprint: Fingerprint,
    ) -> Result<Self> {
        let a = annualize(&equity, fingerprint.risk_free_annual)?;
        Ok(BacktestReport {
            policy_id,
            window: (market.month_id(window.first), market.month_id(window.last)),
            months: window.months().map(|m| market.month_id(m)).collect(),
            weights,
            equity,
            annualized_roi: a.roi,
            annualized_sharpe: a.sharpe,
            annualized_vol: a.vol,
            mdd: a.mdd,
            fingerprint,
        })
    }

    /// Every field except the policy id matches exactly.
    pub fn same_results(&self, other: &BacktestReport) -> bool {
        BacktestReport {
            policy_id: other.policy_id.clone(),
            ..self.clone()
        } == *other
    }

    pub fn final_value(&self) -> f64 {
        self.equity[self.equity.len() - 1]
    }
}

/// Chain `value ← value·(1 + roi)` month by month over `window`, asking
/// `actor` for weights from the observations that closed before each month.
pub fn run_backtest(actor: &dyn Allocator, market: &Market, window: Window, fingerprint: &Fingerprint) -> Result<BacktestReport> {
    let window = Window::new(market, window.first, window.last)?;
    let mut equity = Vec::with_capacity(window.len() + 1);
    let mut weights = Vec::with_capacity(window.len());
    equity.push(1.0);
    for m in window.months() {
        let inputs: MonthInputs<'_> = market.inputs_for(m)?;
        let w = actor.allocate(&inputs)?;
        let stats = hold_month(market.slice(m), &w)?;
        let v = equity[equity.len() - 1] * (1.0 + stats.roi);
        equity.push(v);
        weights.push(w.into_inner());
    }
    BacktestReport::from_path(actor.id().to_string(), market, window, weights, equity, fingerprint.clone())
}

/// Equal weights bought at the window start and left to drift.
pub fn run_buy_and_hold(market: &Market, window: Window, fingerprint: &Fingerprint) -> Result<BacktestReport> {
    let window = Window::new(market, window.first, window.last)?;
    let n = market.n_assets();
    // per-asset value of 1/N invested at the window start
    let mut holdings = vec![1.0 / n as f64; n];
    let mut equity = vec![1.0];
    let mut weights = Vec::with_capacity(window.len());
    for m in window.months() {
        let total: f64 = holdings.iter().sum();
        weights.push(holdings.iter().map(|h| h / total).collect());
        let slice = market.slice(m);
        for (a, h) in holdings.iter_mut().enumerate() {
            *h *= slice.prices[a].last().copied().unwrap_or(slice.boundary[a]) / slice.boundary[a];
        }
        equity.push(holdings.iter().sum());
    }
    BacktestReport::from_path("equal-buy-hold".into(), market, window, weights, equity, fingerprint.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "asset")]
pub enum BenchmarkSpec {
    EqualWeight,
    SingleAsset(String),
}

impl std::str::FromStr for BenchmarkSpec {
    type Err = Error;

    /// `equal` or `asset:TICKER`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" | "equal_weight" => Ok(BenchmarkSpec::EqualWeight),
            _ => match s.strip_prefix("asset:") {
                Some(t) if !t.is_empty() => Ok(BenchmarkSpec::SingleAsset(t.to_string())),
                _ => Err(Error::invalid(format!("unknown benchmark `{s}`"))),
            },
        }
    }
}

/// Fixed-weight benchmark allocator.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    id: String,
    weights: PortfolioWeights,
}

pub fn benchmark_actor(spec: &BenchmarkSpec, tickers: &[String]) -> Result<Benchmark> {
    let n = tickers.len();
    if n == 0 {
        return Err(Error::invalid("benchmark over an empty universe"));
    }
    match spec {
        BenchmarkSpec::EqualWeight => Ok(Benchmark {
            id: "equal-weight".into(),
            weights: PortfolioWeights::uniform(n),
        }),
        BenchmarkSpec::SingleAsset(t) => {
            let i = tickers
                .iter()
                .position(|x| x == t)
                .ok_or_else(|| Error::invalid(format!("benchmark asset `{t}` not in universe")))?;
            Ok(Benchmark {
                id: format!("asset:{t}"),
                weights: PortfolioWeights::unit(n, i),
            })
        }
    }
}

impl Benchmark {
    pub fn weights(&self) -> &PortfolioWeights {
        &self.weights
    }
}

impl Allocator for Benchmark {
    fn id(&self) -> &str {
        &self.id
    }

    fn checksum(&self) -> String {
        self.id.clone()
    }

    fn allocate(&self, _inputs: &MonthInputs<'_>) -> Result<PortfolioWeights> {
        Ok(self.weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compounding_one_percent() {
        let curve: Vec<f64> = (0..=12).map(|i| 1.01f64.powi(i)).collect();
        let a = annualize(&curve, 0.0).unwrap();
        assert_relative_eq!(a.roi, 1.01f64.powi(12) - 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.roi, 0.126825, epsilon = 1e-6);
        assert_eq!(a.mdd, 0.0);
        // constant monthly returns have (numerically) zero volatility
        assert!(a.vol < 1e-12);
        assert_eq!(a.sharpe, 0.0);
    }

    #[test]
    fn flat_curve() {
        let a = annualize(&[1.0; 10], 0.0).unwrap();
        assert_eq!(a, Annualized { roi: 0.0, sharpe: 0.0, vol: 0.0, mdd: 0.0 });
        assert!(annualize(&[1.0], 0.0).is_err());
    }

    #[test]
    fn benchmark_weights() {
        let tickers: Vec<String> = ["GSPC", "IXIC"].iter().map(|s| s.to_string()).collect();
        let eq = benchmark_actor(&BenchmarkSpec::EqualWeight, &tickers).unwrap();
        assert_eq!(eq.weights().as_slice(), &[0.5, 0.5]);
        let one = benchmark_actor(&"asset:GSPC".parse().unwrap(), &tickers).unwrap();
        assert_eq!(one.weights().as_slice(), &[1.0, 0.0]);
        assert!(benchmark_actor(&"asset:HSI".parse().unwrap(), &tickers).is_err());
        let t14: Vec<String> = (0..14).map(|i| format!("T{i}")).collect();
        let eq = benchmark_actor(&BenchmarkSpec::EqualWeight, &t14).unwrap();
        assert_relative_eq!(eq.weights().as_slice()[0], 0.0714, epsilon = 1e-4);
    }
}
