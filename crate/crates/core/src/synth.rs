//! Seeded synthetic markets: the bundled 14-asset universe plus small
//! controlled markets used by tests and examples.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::PriceTable;
use crate::error::{Error, Result};

/// Tickers of the bundled universe, in column order.
pub const UNIVERSE: [&str; 14] = [
    "GSPC", "IXIC", "DJI", "FCHI", "FTSE", "STOXX50E", "HSI", "000001.SS", "BSESN", "NSEI", "KS11", "GC=F", "SI=F",
    "CL=F",
];

/// Annual drift, annual volatility and factor loading per ticker.
const PROFILE: [(f64, f64, f64); 14] = [
    (0.08, 0.17, 0.9),
    (0.11, 0.22, 0.9),
    (0.07, 0.16, 0.85),
    (0.04, 0.20, 0.8),
    (0.03, 0.16, 0.75),
    (0.03, 0.21, 0.8),
    (0.03, 0.23, 0.6),
    (0.04, 0.26, 0.4),
    (0.11, 0.22, 0.5),
    (0.11, 0.21, 0.5),
    (0.06, 0.22, 0.6),
    (0.07, 0.16, 0.1),
    (0.06, 0.28, 0.2),
    (0.03, 0.36, 0.3),
];

pub fn weekdays(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .take_while(|d| *d <= to)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Weekday closes for the bundled universe over 2003-01..2024-12. Asset
/// drifts follow a persistent monthly regime on top of a one-factor daily
/// model; about 0.2% of non-boundary cells are left missing.
pub fn synthetic_universe(seed: u64) -> Result<PriceTable> {
    let calendar = weekdays(date(2003, 1, 1), date(2024, 12, 31));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = UNIVERSE.len();
    let dt = 1.0 / 252.0;
    let mut columns: Vec<Vec<f64>> = (0..n).map(|_| Vec::with_capacity(calendar.len())).collect();
    let mut level: Vec<f64> = (0..n).map(|i| 100.0 * (1.0 + i as f64)).collect();
    let mut regime = vec![0.0; n];
    let mut month = calendar[0].month();
    for (d, day) in calendar.iter().enumerate() {
        if day.month() != month || d == 0 {
            month = day.month();
            for r in regime.iter_mut() {
                *r = 0.7 * *r + 0.15 * normal(&mut rng);
            }
        }
        let factor = normal(&mut rng);
        for a in 0..n {
            let (mu, sigma, beta) = PROFILE[a];
            let idio = (1.0 - beta * beta).max(0.0).sqrt();
            let shock = beta * factor + idio * normal(&mut rng);
            let drift = mu + regime[a];
            level[a] *= ((drift - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * shock).exp();
            columns[a].push(level[a]);
        }
    }
    let last = calendar.len() - 1;
    for col in columns.iter_mut() {
        for (d, v) in col.iter_mut().enumerate() {
            if d > 0 && d < last && rng.random::<f64>() < 0.002 {
                *v = f64::NAN;
            }
        }
    }
    PriceTable::new(UNIVERSE.iter().map(|s| s.to_string()).collect(), calendar, columns)
}

/// Assets whose value moves by an exact monthly growth factor, spread
/// geometrically over each month's trading days. Month `k` ends at
/// `100·∏(1+g)`. The first month is flat so every later month is a pure
/// growth month.
pub fn constant_growth_market(growth: &[f64], first_year: i32, n_months: usize) -> Result<PriceTable> {
    if growth.is_empty() || n_months < 2 {
        return Err(Error::invalid("need at least one asset and two months"));
    }
    if growth.iter().any(|g| *g <= -1.0) {
        return Err(Error::invalid("monthly growth must exceed -100%"));
    }
    let start = date(first_year, 1, 1);
    let end = month_end(first_year, n_months);
    let calendar = weekdays(start, end);
    let mut columns = vec![Vec::with_capacity(calendar.len()); growth.len()];
    let months = group_by_month(&calendar);
    let mut level = vec![100.0; growth.len()];
    for (k, days) in months.iter().enumerate() {
        for j in 0..days.len() {
            for (a, g) in growth.iter().enumerate() {
                let v = if k == 0 {
                    100.0
                } else {
                    level[a] * (1.0 + g).powf((j + 1) as f64 / days.len() as f64)
                };
                columns[a].push(v);
            }
        }
        if k > 0 {
            for (a, g) in growth.iter().enumerate() {
                level[a] *= 1.0 + g;
            }
        }
    }
    PriceTable::new(
        (0..growth.len()).map(|i| format!("A{i}")).collect(),
        calendar,
        columns,
    )
}

/// A market with independent, strongly varying monthly drifts so that the
/// best asset changes from month to month.
pub fn regime_market(n_assets: usize, first_year: i32, n_months: usize, seed: u64) -> Result<PriceTable> {
    if n_assets == 0 || n_months < 2 {
        return Err(Error::invalid("need at least one asset and two months"));
    }
    let calendar = weekdays(date(first_year, 1, 1), month_end(first_year, n_months));
    let months = group_by_month(&calendar);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = vec![Vec::with_capacity(calendar.len()); n_assets];
    let mut level = vec![100.0; n_assets];
    for days in &months {
        let drift: Vec<f64> = (0..n_assets).map(|_| 0.05 * normal(&mut rng)).collect();
        for _ in 0..days.len() {
            for a in 0..n_assets {
                let r = drift[a] / days.len() as f64 + 0.004 * normal(&mut rng);
                level[a] *= (r).exp();
                columns[a].push(level[a]);
            }
        }
    }
    PriceTable::new((0..n_assets).map(|i| format!("R{i}")).collect(), calendar, columns)
}

fn month_end(first_year: i32, n_months: usize) -> NaiveDate {
    let k = n_months as i32;
    let (y, m) = (first_year + (k - 1) / 12, ((k - 1) % 12) as u32 + 1);
    let (ny, nm) = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
    date(ny, nm, 1).pred_opt().expect("date before a month start")
}

fn group_by_month(calendar: &[NaiveDate]) -> Vec<&[NaiveDate]> {
    calendar
        .chunk_by(|a, b| a.year() == b.year() && a.month() == b.month())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fill_missing, monthly_partition, FillPolicy};

    #[test]
    fn universe_shape() {
        let t = synthetic_universe(0).unwrap();
        assert_eq!(t.n_assets(), 14);
        assert_eq!(t.calendar()[0], date(2003, 1, 1));
        assert_eq!(*t.calendar().last().unwrap(), date(2024, 12, 31));
        assert!(!t.is_dense());
        let filled = fill_missing(&t, FillPolicy::Forward).unwrap();
        assert_eq!(monthly_partition(&filled).unwrap().len(), 264);
        let again = synthetic_universe(0).unwrap();
        assert_eq!(format!("{:?}", t.columns()), format!("{:?}", again.columns()));
    }

    #[test]
    fn constant_growth_months() {
        let t = constant_growth_market(&[0.02, -0.01], 2003, 24).unwrap();
        let slices = monthly_partition(&t).unwrap();
        assert_eq!(slices.len(), 24);
        for s in &slices[1..] {
            let end_a = s.prices[0].last().unwrap() / s.boundary[0];
            let end_b = s.prices[1].last().unwrap() / s.boundary[1];
            assert!((end_a - 1.02).abs() < 1e-12);
            assert!((end_b - 0.99).abs() < 1e-12);
        }
    }

    #[test]
    fn regime_market_months() {
        let t = regime_market(4, 1950, 30, 1).unwrap();
        assert_eq!(monthly_partition(&t).unwrap().len(), 30);
    }
}
