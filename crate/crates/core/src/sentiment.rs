//! Monthly per-asset sentiment scores: article aggregation, the shared
//! `month,ticker,score,n_articles` CSV contract, and a seeded simulator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MonthId, MonthlySlice};
use crate::error::{Error, Result};
use crate::features::{mean, sample_std};

const PROB_TOL: f64 = 1e-6;

/// Class probabilities of one scored article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleSentiment {
    pub asset: String,
    pub month: MonthId,
    pub p_positive: f64,
    pub p_negative: f64,
    pub p_neutral: f64,
}

impl ArticleSentiment {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_positive", self.p_positive),
            ("p_negative", self.p_negative),
            ("p_neutral", self.p_neutral),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name}={p} outside [0, 1]")));
            }
        }
        let total = self.p_positive + self.p_negative + self.p_neutral;
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentCell {
    pub score: f64,
    pub n_articles: u32,
}

impl SentimentCell {
    pub const NO_NEWS: SentimentCell = SentimentCell {
        score: 0.0,
        n_articles: 0,
    };

    pub fn no_news(&self) -> bool {
        self.n_articles == 0
    }
}

/// Mean of `p_positive - p_negative`; an empty list is a neutral no-news cell.
pub fn aggregate_articles(articles: &[ArticleSentiment]) -> Result<SentimentCell> {
    for a in articles {
        a.validate()?;
    }
    if articles.is_empty() {
        return Ok(SentimentCell::NO_NEWS);
    }
    let sum: f64 = articles.iter().map(|a| a.p_positive - a.p_negative).sum();
    Ok(SentimentCell {
        score: sum / articles.len() as f64,
        n_articles: articles.len() as u32,
    })
}

/// Scores keyed by `(month, ticker)`. Absent cells read as no-news.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentTable {
    cells: BTreeMap<(MonthId, String), SentimentCell>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SentimentRow {
    month: String,
    ticker: String,
    score: f64,
    n_articles: u32,
}

impl SentimentTable {
    pub fn insert(&mut self, month: MonthId, ticker: &str, cell: SentimentCell) -> Result<()> {
        if !(cell.score.abs() <= 1.0) {
            return Err(Error::invalid(format!("score {} outside [-1, 1]", cell.score)));
        }
        if self.cells.insert((month, ticker.to_string()), cell).is_some() {
            return Err(Error::invalid(format!("duplicate sentiment cell ({month}, {ticker})")));
        }
        Ok(())
    }

    pub fn get(&self, month: MonthId, ticker: &str) -> SentimentCell {
        self.cells
            .get(&(month, ticker.to_string()))
            .copied()
            .unwrap_or(SentimentCell::NO_NEWS)
    }

    /// Scores for `tickers` in order.
    pub fn scores(&self, month: MonthId, tickers: &[String]) -> Vec<f64> {
        tickers.iter().map(|t| self.get(month, t).score).collect()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(MonthId, String), &SentimentCell)> {
        self.cells.iter()
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["month", "ticker", "score", "n_articles"] {
            return Err(Error::Schema(format!(
                "sentiment header must be `month,ticker,score,n_articles`, found `{}`",
                header.join(",")
            )));
        }
        let mut table = SentimentTable::default();
        for (i, rec) in rdr.deserialize::<SentimentRow>().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                msg: e.to_string(),
            })?;
            let month: MonthId = rec.month.parse().map_err(|e: Error| Error::Parse {
                row,
                msg: e.to_string(),
            })?;
            if !(rec.score.abs() <= 1.0) {
                return Err(Error::Parse {
                    row,
                    msg: format!("score {} outside [-1, 1]", rec.score),
                });
            }
            table
                .insert(
                    month,
                    &rec.ticker,
                    SentimentCell {
                        score: rec.score,
                        n_articles: rec.n_articles,
                    },
                )
                .map_err(|e| Error::Parse {
                    row,
                    msg: e.to_string(),
                })?;
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for ((month, ticker), cell) in &self.cells {
            w.serialize(SentimentRow {
                month: month.to_string(),
                ticker: ticker.clone(),
                score: cell.score,
                n_articles: cell.n_articles,
            })?;
        }
        if self.cells.is_empty() {
            w.write_record(["month", "ticker", "score", "n_articles"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

pub fn load_sentiment_table(path: &Path) -> Result<SentimentTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SentimentTable::parse_csv(&text)
}

/// Article count recorded on simulated cells.
pub const SIMULATED_ARTICLES: u32 = 10;

/// Seeded synthetic sentiment.
///
/// `score = clamp(λ·tanh(z) + (1-λ)·u, -1, 1)` where `z` is the z-score of
/// the asset's next-month return and `u ~ U(-1, 1)`. Any `λ > 0` leaks the
/// future into the score and is meant only for tests of the learning
/// machinery; real runs use `λ = 0` or scored news files.
pub fn simulate_sentiment(
    tickers: &[String],
    slices: &[MonthlySlice],
    seed: u64,
    signal_strength: f64,
) -> Result<SentimentTable> {
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(Error::invalid(format!("signal strength {signal_strength} outside [0, 1]")));
    }
    let n = tickers.len();
    // monthly return of each asset, boundary to last close
    let monthly: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            slices
                .iter()
                .map(|s| s.prices[a].last().copied().unwrap_or(s.boundary[a]) / s.boundary[a] - 1.0)
                .collect()
        })
        .collect();
    let stats: Vec<(f64, f64)> = monthly.iter().map(|r| (mean(r), sample_std(r))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = SentimentTable::default();
    for (m, slice) in slices.iter().enumerate() {
        for a in 0..n {
            let u: f64 = rng.random_range(-1.0..1.0);
            let proxy = match monthly[a].get(m + 1) {
                Some(next) if stats[a].1 > 0.0 => ((next - stats[a].0) / stats[a].1).tanh(),
                _ => 0.0,
            };
            let score = (signal_strength * proxy + (1.0 - signal_strength) * u).clamp(-1.0, 1.0);
            table.insert(
                slice.month,
                &tickers[a],
                SentimentCell {
                    score,
                    n_articles: SIMULATED_ARTICLES,
                },
            )?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{monthly_partition, PriceTable};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn art(pos: f64, neg: f64) -> ArticleSentiment {
        ArticleSentiment {
            asset: "GSPC".into(),
            month: "2020-03".parse().unwrap(),
            p_positive: pos,
            p_negative: neg,
            p_neutral: 1.0 - pos - neg,
        }
    }

    #[test]
    fn aggregation_examples() {
        let c = aggregate_articles(&[art(0.9, 0.05), art(0.2, 0.7)]).unwrap();
        assert!((c.score - 0.175).abs() < 1e-15);
        assert_eq!(c.n_articles, 2);
        assert_eq!(aggregate_articles(&[art(0.3, 0.3), art(0.1, 0.1)]).unwrap().score, 0.0);
        let empty = aggregate_articles(&[]).unwrap();
        assert!(empty.no_news() && empty.score == 0.0);
        assert!(aggregate_articles(&[art(1.2, 0.0)]).is_err());
    }

    #[test]
    fn csv_contract() {
        let t = SentimentTable::parse_csv("month,ticker,score,n_articles\n2020-03,GC=F,0.42,17\n").unwrap();
        let m = "2020-03".parse().unwrap();
        assert_eq!(
            t.get(m, "GC=F"),
            SentimentCell {
                score: 0.42,
                n_articles: 17
            }
        );
        assert!(t.get(m, "GSPC").no_news());
        let dup = "month,ticker,score,n_articles\n2020-03,A,0.1,1\n2020-03,A,0.2,1\n";
        assert!(matches!(SentimentTable::parse_csv(dup), Err(Error::Parse { row: 2, .. })));
        let out = "month,ticker,score,n_articles\n2020-03,A,1.5,1\n";
        assert!(matches!(SentimentTable::parse_csv(out), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(SentimentTable::parse_csv("a,b\n"), Err(Error::Schema(_))));
        let back = SentimentTable::parse_csv(&t.to_csv().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    fn rising_fixture() -> (Vec<String>, Vec<MonthlySlice>) {
        let mut cal = Vec::new();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let mut i = 0.0f64;
        while date < NaiveDate::from_ymd_opt(2020, 7, 1).unwrap() {
            cal.push(date);
            // A flat until June, then surges; B wiggles
            a.push(if date.format("%m").to_string() == "06" { 100.0 + 10.0 * i } else { 100.0 });
            b.push(100.0 + (i * 0.7).sin());
            date = date.succ_opt().unwrap();
            i += 1.0;
        }
        let t = PriceTable::new(vec!["A".into(), "B".into()], cal, vec![a, b]).unwrap();
        (t.tickers().to_vec(), monthly_partition(&t).unwrap())
    }

    #[test]
    fn simulation_is_deterministic_and_informative() {
        let (tickers, slices) = rising_fixture();
        let a = simulate_sentiment(&tickers, &slices, 7, 0.0).unwrap();
        let b = simulate_sentiment(&tickers, &slices, 7, 0.0).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_ne!(a, simulate_sentiment(&tickers, &slices, 8, 0.0).unwrap());
        let informed = simulate_sentiment(&tickers, &slices, 7, 1.0).unwrap();
        // May's score reflects June's surge in A
        assert!(informed.get("2020-05".parse().unwrap(), "A").score > 0.0);
        assert!(simulate_sentiment(&tickers, &slices, 7, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            probs in prop::collection::vec((0.0f64..0.5, 0.0f64..0.5), 1..20),
            rot in 0usize..20,
        ) {
            let arts: Vec<_> = probs.iter().map(|&(p, n)| art(p, n)).collect();
            let mut shuffled = arts.clone();
            shuffled.rotate_left(rot % arts.len());
            shuffled.reverse();
            let a = aggregate_articles(&arts).unwrap().score;
            let b = aggregate_articles(&shuffled).unwrap().score;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn simulated_scores_bounded(seed in 0u64..50) {
            let (tickers, slices) = rising_fixture();
            let t = simulate_sentiment(&tickers, &slices, seed, 0.5).unwrap();
            for (_, c) in t.iter() { prop_assert!(c.score.abs() <= 1.0); }
        }
    }
}
