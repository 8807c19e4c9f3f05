//! Daily price panels: CSV loading, gap filling, min-max scaling and the
//! monthly partition every other stage works on.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month, rendered `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MonthId {
    pub year: i32,
    pub month: u32,
}

impl MonthId {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid(format!("month {month} out of range")));
        }
        Ok(MonthId { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        MonthId {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            MonthId {
                year: self.year + 1,
                month: 1,
            }
        } else {
            MonthId {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Months from `self` to `other` (negative when `other` is earlier).
    pub fn months_until(self, other: MonthId) -> i64 {
        (other.year as i64 - self.year as i64) * 12 + other.month as i64 - self.month as i64
    }
}

impl fmt::Display for MonthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for MonthId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("month `{s}` is not YYYY-MM")))?;
        let year = y
            .parse::<i32>()
            .map_err(|_| Error::invalid(format!("bad year in `{s}`")))?;
        let month = m
            .parse::<u32>()
            .map_err(|_| Error::invalid(format!("bad month in `{s}`")))?;
        MonthId::new(year, month)
    }
}

impl From<MonthId> for String {
    fn from(m: MonthId) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for MonthId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Daily adjusted closes, one column per asset on a shared calendar.
///
/// Missing cells are stored as `NaN` until [`fill_missing`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    columns: Vec<Vec<f64>>,
}

impl PriceTable {
    /// Build a table from per-asset columns. Dates must be strictly increasing.
    pub fn new(tickers: Vec<String>, calendar: Vec<NaiveDate>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.len() != columns.len() {
            return Err(Error::dim(format!(
                "{} tickers but {} columns",
                tickers.len(),
                columns.len()
            )));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != calendar.len()) {
            return Err(Error::dim(format!(
                "column `{}` has {} rows, calendar has {}",
                tickers[c],
                columns[c].len(),
                calendar.len()
            )));
        }
        if let Some(w) = calendar.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "calendar not strictly increasing at {}",
                calendar[w + 1]
            )));
        }
        for (ticker, col) in tickers.iter().zip(&columns) {
            if let Some(p) = col.iter().find(|p| !p.is_nan() && (*p <= &0.0 || !p.is_finite())) {
                return Err(Error::invalid(format!("price {p} for `{ticker}` is not positive")));
            }
        }
        Ok(PriceTable {
            tickers,
            calendar,
            columns,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    pub fn column(&self, asset: usize) -> &[f64] {
        &self.columns[asset]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn price(&self, date: usize, asset: usize) -> f64 {
        self.columns[asset][date]
    }

    pub fn is_dense(&self) -> bool {
        self.columns.iter().flatten().all(|p| !p.is_nan())
    }

    pub fn asset_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Per-asset min-max scaled copy (price-level channel for charts and exports).
    pub fn normalized(&self) -> Result<PriceTable> {
        let columns = self
            .columns
            .iter()
            .map(|c| minmax_normalize(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(PriceTable {
            tickers: self.tickers.clone(),
            calendar: self.calendar.clone(),
            columns,
        })
    }

    /// Mutable access for tests that rewrite part of the history.
    pub fn column_mut(&mut self, asset: usize) -> &mut [f64] {
        &mut self.columns[asset]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        let mut header = vec!["date".to_string()];
        header.extend(self.tickers.iter().cloned());
        w.write_record(&header)?;
        for (t, date) in self.calendar.iter().enumerate() {
            let mut row = vec![date.format("%Y-%m-%d").to_string()];
            row.extend(self.columns.iter().map(|c| {
                if c[t].is_nan() {
                    String::new()
                } else {
                    format!("{}", c[t])
                }
            }));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Read a `date,<ticker1>,...` CSV, reordering columns into `expected_tickers` order.
pub fn load_price_table(path: &Path, expected_tickers: &[String]) -> Result<PriceTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_price_csv(&text, expected_tickers)
}

pub fn parse_price_csv(text: &str, expected_tickers: &[String]) -> Result<PriceTable> {
    if text.trim().is_empty() {
        return Err(Error::Empty("price file has no content".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let first = header.get(0).map(str::trim).unwrap_or_default();
    if !first.eq_ignore_ascii_case("date") {
        return Err(Error::Schema(format!("first column must be `date`, found `{first}`")));
    }
    let file_tickers: Vec<String> = header.iter().skip(1).map(|h| h.trim().to_string()).collect();
    for t in expected_tickers {
        if !file_tickers.contains(t) {
            return Err(Error::Schema(format!("missing ticker column `{t}`")));
        }
    }
    for t in &file_tickers {
        if !expected_tickers.contains(t) {
            return Err(Error::Schema(format!("unexpected ticker column `{t}`")));
        }
    }
    let order: Vec<usize> = expected_tickers
        .iter()
        .map(|t| file_tickers.iter().position(|f| f == t).unwrap())
        .collect();

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // data rows are 1-based, header is row 0
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let raw_date = rec.get(0).unwrap_or_default().trim();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            msg: format!("date `{raw_date}`: {e}"),
        })?;
        let mut values = Vec::with_capacity(order.len());
        for &c in &order {
            let cell = rec.get(c + 1).unwrap_or_default().trim();
            if cell.is_empty() {
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("value `{cell}` in column `{}`", file_tickers[c]),
            })?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parse {
                    row,
                    msg: format!("price {v} in column `{}` must be positive", file_tickers[c]),
                });
            }
            values.push(v);
        }
        rows.push((date, values));
    }
    if rows.is_empty() {
        return Err(Error::Empty("price file has a header but no rows".into()));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("duplicate date {}", w[0].0)));
    }
    let calendar = rows.iter().map(|r| r.0).collect();
    let columns = (0..order.len())
        .map(|a| rows.iter().map(|r| r.1[a]).collect())
        .collect();
    PriceTable::new(expected_tickers.to_vec(), calendar, columns)
}

/// How interior gaps are filled. Leading gaps always take the next
/// observation and trailing gaps the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    #[default]
    Forward,
    Backward,
    Linear,
}

impl FromStr for FillPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" | "ffill" => Ok(FillPolicy::Forward),
            "backward" | "bfill" => Ok(FillPolicy::Backward),
            "linear" | "linear-interpolate" => Ok(FillPolicy::Linear),
            _ => Err(Error::invalid(format!("unknown fill policy `{s}`"))),
        }
    }
}

/// Fill every missing cell. Observed values are never modified.
pub fn fill_missing(table: &PriceTable, policy: FillPolicy) -> Result<PriceTable> {
    let columns = table
        .columns
        .iter()
        .zip(&table.tickers)
        .map(|(col, ticker)| {
            fill_series(col, policy)
                .ok_or_else(|| Error::invalid(format!("asset `{ticker}` has no observations")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PriceTable {
        tickers: table.tickers.clone(),
        calendar: table.calendar.clone(),
        columns,
    })
}

fn fill_series(col: &[f64], policy: FillPolicy) -> Option<Vec<f64>> {
    let observed: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_nan()).collect();
    let (&first, &last) = (observed.first()?, observed.last()?);
    let mut out = col.to_vec();
    for v in &mut out[..first] {
        *v = col[first];
    }
    for v in &mut out[last + 1..] {
        *v = col[last];
    }
    for pair in observed.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi == lo + 1 {
            continue;
        }
        for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo + 1) {
            *v = match policy {
                FillPolicy::Forward => col[lo],
                FillPolicy::Backward => col[hi],
                FillPolicy::Linear => {
                    let frac = (i - lo) as f64 / (hi - lo) as f64;
                    let x = col[lo] + frac * (col[hi] - col[lo]);
                    // keep within the bracket despite rounding
                    x.clamp(col[lo].min(col[hi]), col[lo].max(col[hi]))
                }
            };
        }
    }
    Some(out)
}

/// Affine map of `series` onto [0, 1]. A constant series maps to 0.5.
pub fn minmax_normalize(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("cannot normalize an empty series".into()));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![0.5; series.len()]);
    }
    Ok(series
        .iter()
        .map(|&x| if x == hi { 1.0 } else { (x - lo) / range })
        .collect())
}

/// One calendar month of a dense table.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySlice {
    pub month: MonthId,
    /// Index of the month's first date in the table calendar.
    pub start: usize,
    /// Last close of the previous month per asset (own first close for the first slice).
    pub boundary: Vec<f64>,
    /// Per-asset daily closes inside the month.
    pub prices: Vec<Vec<f64>>,
}

impl MonthlySlice {
    pub fn len(&self) -> usize {
        self.prices.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Boundary price followed by the month's closes for one asset.
    pub fn chained(&self, asset: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len() + 1);
        v.push(self.boundary[asset]);
        v.extend_from_slice(&self.prices[asset]);
        v
    }
}

/// Split a dense table into chronological calendar months.
pub fn monthly_partition(table: &PriceTable) -> Result<Vec<MonthlySlice>> {
    if !table.is_dense() {
        return Err(Error::invalid("monthly partition needs a dense table; run fill_missing first"));
    }
    let mut slices: Vec<MonthlySlice> = Vec::new();
    let mut start = 0;
    while start < table.n_dates() {
        let month = MonthId::of(table.calendar[start]);
        let end = (start..table.n_dates())
            .find(|&t| MonthId::of(table.calendar[t]) != month)
            .unwrap_or(table.n_dates());
        let boundary = (0..table.n_assets())
            .map(|a| {
                if start == 0 {
                    table.columns[a][0]
                } else {
                    table.columns[a][start - 1]
                }
            })
            .collect();
        let prices = table.columns.iter().map(|c| c[start..end].to_vec()).collect();
        slices.push(MonthlySlice {
            month,
            start,
            boundary,
            prices,
        });
        start = end;
    }
    if slices.len() < 2 {
        return Err(Error::invalid("price table spans fewer than two calendar months"));
    }
    Ok(slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tickers(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parses_single_ticker() {
        let t = parse_price_csv("date,GSPC\n2020-01-02,100\n2020-01-03,101\n", &tickers(&["GSPC"])).unwrap();
        assert_eq!(t.n_dates(), 2);
        assert_eq!(t.n_assets(), 1);
        assert_eq!(t.column(0), &[100.0, 101.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_price_csv("date,GSPC\n2020-01-02,100\n", &tickers(&["GSPC", "GC=F"])).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("GC=F")), "{err}");
        let err = parse_price_csv("date,GSPC,HSI\n2020-01-02,100,1\n", &tickers(&["GSPC"])).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("HSI")), "{err}");
    }

    #[test]
    fn bad_cells_report_rows() {
        let e = parse_price_csv("date,A\n2020-01-02,100\n2020-13-03,101\n", &tickers(&["A"])).unwrap_err();
        assert!(matches!(e, Error::Parse { row: 2, .. }), "{e}");
        let e = parse_price_csv("date,A\n2020-01-02,abc\n", &tickers(&["A"])).unwrap_err();
        assert!(matches!(e, Error::Parse { row: 1, .. }), "{e}");
        assert!(matches!(parse_price_csv("", &tickers(&["A"])), Err(Error::Empty(_))));
        assert!(matches!(parse_price_csv("date,A\n", &tickers(&["A"])), Err(Error::Empty(_))));
    }

    #[test]
    fn missing_cells_are_kept_and_rows_sorted() {
        let t = parse_price_csv("date,A,B\n2020-01-03,2,\n2020-01-02,1,5\n", &tickers(&["B", "A"])).unwrap();
        assert_eq!(t.calendar(), &[d("2020-01-02"), d("2020-01-03")]);
        assert_eq!(t.tickers(), &tickers(&["B", "A"]));
        assert_eq!(t.column(1), &[1.0, 2.0]);
        assert!(t.column(0)[1].is_nan());
        assert!(!t.is_dense());
    }

    fn one(col: Vec<f64>) -> PriceTable {
        let cal = (0..col.len()).map(|i| d("2020-01-01") + chrono::Days::new(i as u64)).collect();
        PriceTable::new(tickers(&["A"]), cal, vec![col]).unwrap()
    }

    #[test]
    fn fill_examples() {
        let nan = f64::NAN;
        let f = |col: Vec<f64>, p| fill_missing(&one(col), p).unwrap().column(0).to_vec();
        assert_eq!(f(vec![10.0, nan, 14.0], FillPolicy::Forward), vec![10.0, 10.0, 14.0]);
        assert_eq!(f(vec![10.0, nan, 14.0], FillPolicy::Linear), vec![10.0, 12.0, 14.0]);
        assert_eq!(f(vec![10.0, nan, 14.0], FillPolicy::Backward), vec![10.0, 14.0, 14.0]);
        assert_eq!(f(vec![nan, 20.0, 30.0], FillPolicy::Forward), vec![20.0, 20.0, 30.0]);
        assert_eq!(f(vec![20.0, 30.0, nan], FillPolicy::Backward), vec![20.0, 30.0, 30.0]);
    }

    #[test]
    fn fill_rejects_unobserved_asset() {
        let e = fill_missing(&one(vec![f64::NAN, f64::NAN]), FillPolicy::Forward).unwrap_err();
        assert!(e.to_string().contains("`A`"));
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[10.0, 20.0, 30.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[7.0; 3]).unwrap(), vec![0.5; 3]);
        assert!(minmax_normalize(&[]).is_err());
    }

    #[test]
    fn partition_counts_and_boundaries() {
        let mut cal = Vec::new();
        let mut col = Vec::new();
        for day in 1..=21 {
            cal.push(NaiveDate::from_ymd_opt(2021, 1, day).unwrap());
            col.push(100.0 + day as f64);
        }
        for day in 1..=19 {
            cal.push(NaiveDate::from_ymd_opt(2021, 2, day).unwrap());
            col.push(200.0 + day as f64);
        }
        let t = PriceTable::new(tickers(&["A"]), cal, vec![col]).unwrap();
        let s = monthly_partition(&t).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].len(), s[1].len()), (21, 19));
        assert_eq!(s[0].boundary, vec![101.0]);
        assert_eq!(s[1].boundary, vec![121.0]);
        assert_eq!(s[1].month.to_string(), "2021-02");
    }

    #[test]
    fn partition_rejects_single_month() {
        let t = one(vec![1.0, 2.0]);
        assert!(monthly_partition(&t).is_err());
    }

    #[test]
    fn twenty_two_years_give_264_slices() {
        let mut cal = Vec::new();
        let mut date = d("2003-01-01");
        while date <= d("2024-12-31") {
            if date.weekday().number_from_monday() <= 5 {
                cal.push(date);
            }
            date = date.succ_opt().unwrap();
        }
        let n = cal.len();
        let t = PriceTable::new(tickers(&["A"]), cal, vec![vec![1.0; n]]).unwrap();
        let slices = monthly_partition(&t).unwrap();
        // 22 years by calendar arithmetic
        let expected = MonthId::new(2003, 1).unwrap().months_until(MonthId::new(2024, 12).unwrap()) + 1;
        assert_eq!(expected, 264);
        assert_eq!(slices.len() as i64, expected);
    }

    #[test]
    fn month_id_roundtrip() {
        let m: MonthId = "2020-03".parse().unwrap();
        assert_eq!(m.to_string(), "2020-03");
        assert_eq!(MonthId::new(2020, 12).unwrap().succ(), MonthId::new(2021, 1).unwrap());
        assert!("2020-13".parse::<MonthId>().is_err());
    }

    fn gappy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop::option::weighted(0.6, 1.0f64..500.0), 1..60).prop_filter_map(
            "needs one observation",
            |v| {
                v.iter().any(Option::is_some).then(|| v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
            },
        )
    }

    proptest! {
        #[test]
        fn fill_is_idempotent_and_dense(col in gappy(), p in prop::sample::select(vec![FillPolicy::Forward, FillPolicy::Backward, FillPolicy::Linear])) {
            let once = fill_missing(&one(col.clone()), p).unwrap();
            prop_assert!(once.is_dense());
            let twice = fill_missing(&once, p).unwrap();
            prop_assert_eq!(once.column(0), twice.column(0));
            for (o, f) in col.iter().zip(once.column(0)) {
                if !o.is_nan() { prop_assert_eq!(o, f); }
            }
        }

        #[test]
        fn linear_fill_stays_in_bracket(col in gappy()) {
            let filled = fill_missing(&one(col.clone()), FillPolicy::Linear).unwrap();
            let obs: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_nan()).collect();
            for w in obs.windows(2) {
                let (lo, hi) = (col[w[0]].min(col[w[1]]), col[w[0]].max(col[w[1]]));
                for i in w[0]..=w[1] {
                    prop_assert!(filled.column(0)[i] >= lo && filled.column(0)[i] <= hi);
                }
            }
        }

        #[test]
        fn minmax_properties(xs in prop::collection::vec(-1e3f64..1e3, 1..100)) {
            let y = minmax_normalize(&xs).unwrap();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                prop_assert_eq!(y.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
                prop_assert_eq!(y.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
                for i in 0..xs.len() {
                    prop_assert!(((xs[i] - lo) / (hi - lo) - y[i]).abs() < 1e-12);
                    for j in 0..xs.len() {
                        if xs[i] < xs[j] { prop_assert!(y[i] <= y[j]); }
                    }
                }
            }
            let yy = minmax_normalize(&y).unwrap();
            for (a, b) in y.iter().zip(&yy) { prop_assert!((a - b).abs() <= 1e-12); }
        }

        #[test]
        fn slices_reassemble_table(n in 40usize..200, seed in 0u64..1000) {
            let cal: Vec<NaiveDate> = (0..n).map(|i| d("2019-12-15") + chrono::Days::new((i * 2) as u64)).collect();
            let col: Vec<f64> = (0..n).map(|i| 1.0 + ((i as u64 * 7919 + seed) % 101) as f64).collect();
            let t = PriceTable::new(tickers(&["A"]), cal.clone(), vec![col.clone()]).unwrap();
            let slices = monthly_partition(&t).unwrap();
            let joined: Vec<f64> = slices.iter().flat_map(|s| s.prices[0].clone()).collect();
            prop_assert_eq!(joined, col);
            let dates: Vec<NaiveDate> = slices.iter().flat_map(|s| cal[s.start..s.start + s.len()].to_vec()).collect();
            prop_assert_eq!(dates, cal);
        }
    }
}
