//! A cleaned price table together with its monthly slices and precomputed
//! observations for both modes. Everything downstream reads from here.

use serde::{Deserialize, Serialize};

use crate::data::{monthly_partition, MonthId, MonthlySlice, PriceTable};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{build_observation, slice_correlation, MonthlyMetrics, ObservationMode, ObservationVector};
use crate::sentiment::SentimentTable;

#[derive(Debug, Clone)]
pub struct Market {
    table: PriceTable,
    slices: Vec<MonthlySlice>,
    metrics_obs: Vec<ObservationVector>,
    nlp_obs: Option<Vec<ObservationVector>>,
}

/// Observations available when choosing weights for one holding month:
/// those of the month that just closed.
#[derive(Debug, Clone, Copy)]
pub struct MonthInputs<'a> {
    pub month: MonthId,
    pub metrics: &'a ObservationVector,
    pub nlp: Option<&'a ObservationVector>,
}

impl<'a> MonthInputs<'a> {
    pub fn get(&self, mode: ObservationMode) -> Result<&'a ObservationVector> {
        match mode {
            ObservationMode::Metrics => Ok(self.metrics),
            ObservationMode::Nlp => self
                .nlp
                .ok_or_else(|| Error::invalid(format!("no nlp observation for {}", self.month))),
        }
    }
}

impl Market {
    /// Compute monthly features for a dense table. NLP observations exist
    /// only when a sentiment table is supplied.
    pub fn build(table: PriceTable, sentiment: Option<&SentimentTable>, risk_free: f64, exec: Exec) -> Result<Self> {
        let slices = monthly_partition(&table)?;
        let tickers = table.tickers().to_vec();
        let per_month = exec.map(&slices, |slice| -> Result<(ObservationVector, Option<ObservationVector>)> {
            let metrics = MonthlyMetrics::compute(slice, risk_free)?;
            let corr = slice_correlation(slice)?;
            let m = build_observation(&metrics, &corr, None, ObservationMode::Metrics)?;
            let n = match sentiment {
                Some(s) => Some(build_observation(
                    &metrics,
                    &corr,
                    Some(&s.scores(slice.month, &tickers)),
                    ObservationMode::Nlp,
                )?),
                None => None,
            };
            Ok((m, n))
        });
        let mut metrics_obs = Vec::with_capacity(slices.len());
        let mut nlp_obs = Vec::with_capacity(slices.len());
        for r in per_month {
            let (m, n) = r?;
            metrics_obs.push(m);
            if let Some(n) = n {
                nlp_obs.push(n);
            }
        }
        Ok(Market {
            table,
            slices,
            metrics_obs,
            nlp_obs: sentiment.map(|_| nlp_obs),
        })
    }

    pub fn table(&self) -> &PriceTable {
        &self.table
    }

    pub fn tickers(&self) -> &[String] {
        self.table.tickers()
    }

    pub fn n_assets(&self) -> usize {
        self.table.n_assets()
    }

    pub fn n_months(&self) -> usize {
        self.slices.len()
    }

    pub fn slice(&self, month: usize) -> &MonthlySlice {
        &self.slices[month]
    }

    pub fn slices(&self) -> &[MonthlySlice] {
        &self.slices
    }

    pub fn month_id(&self, month: usize) -> MonthId {
        self.slices[month].month
    }

    pub fn month_index(&self, id: MonthId) -> Option<usize> {
        self.slices.binary_search_by_key(&id, |s| s.month).ok()
    }

    pub fn has_mode(&self, mode: ObservationMode) -> bool {
        mode == ObservationMode::Metrics || self.nlp_obs.is_some()
    }

    pub fn observation(&self, month: usize, mode: ObservationMode) -> Result<&ObservationVector> {
        let obs = match mode {
            ObservationMode::Metrics => &self.metrics_obs,
            ObservationMode::Nlp => self
                .nlp_obs
                .as_ref()
                .ok_or_else(|| Error::invalid("market was built without sentiment"))?,
        };
        obs.get(month)
            .ok_or_else(|| Error::invalid(format!("month index {month} outside data")))
    }

    /// Inputs for choosing the weights held during `holding_month`.
    pub fn inputs_for(&self, holding_month: usize) -> Result<MonthInputs<'_>> {
        if holding_month == 0 || holding_month >= self.n_months() {
            return Err(Error::invalid(format!(
                "holding month index {holding_month} has no preceding observation"
            )));
        }
        let obs_month = holding_month - 1;
        Ok(MonthInputs {
            month: self.month_id(obs_month),
            metrics: &self.metrics_obs[obs_month],
            nlp: self.nlp_obs.as_ref().map(|v| &v[obs_month]),
        })
    }
}

/// Inclusive range of holding months. The first holding month must have a
/// preceding month whose observation drives the first decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub first: usize,
    pub last: usize,
}

impl Window {
    pub fn new(market: &Market, first: usize, last: usize) -> Result<Self> {
        if first == 0 {
            return Err(Error::invalid(
                "window cannot start at the first data month (no prior observation)",
            ));
        }
        if first > last || last >= market.n_months() {
            return Err(Error::invalid(format!(
                "window {first}..={last} outside data of {} months",
                market.n_months()
            )));
        }
        Ok(Window { first, last })
    }

    pub fn resolve(market: &Market, from: MonthId, to: MonthId) -> Result<Self> {
        let first = market
            .month_index(from)
            .ok_or_else(|| Error::invalid(format!("window start {from} outside data")))?;
        let last = market
            .month_index(to)
            .ok_or_else(|| Error::invalid(format!("window end {to} outside data")))?;
        Window::new(market, first, last)
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn months(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

/// `YYYY-MM:YYYY-MM` window text.
pub fn parse_month_range(s: &str) -> Result<(MonthId, MonthId)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("window `{s}` is not FROM:TO")))?;
    let (from, to): (MonthId, MonthId) = (a.parse()?, b.parse()?);
    if from > to {
        return Err(Error::invalid(format!("window `{s}` ends before it starts")));
    }
    Ok((from, to))
}
