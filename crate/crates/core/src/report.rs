//! Report artifacts: full JSON, a per-policy CSV summary and an SVG chart
//! of equity curves.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtest::{BacktestReport, REPORT_SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub reports: Vec<BacktestReport>,
}

impl ReportFile {
    pub fn new(reports: Vec<BacktestReport>) -> Self {
        ReportFile {
            schema_version: REPORT_SCHEMA_VERSION,
            reports,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ReportFile = serde_json::from_str(&text)?;
        if f.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported report schema {}", f.schema_version)));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportOptions {
    pub log_scale: bool,
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

pub fn summary_csv(reports: &[BacktestReport]) -> String {
    let mut out = String::from("policy,window,annualized_roi,annualized_sharpe,annualized_vol,mdd\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{}:{},{},{},{},{}",
            r.policy_id, r.window.0, r.window.1, r.annualized_roi, r.annualized_sharpe, r.annualized_vol, r.mdd
        );
    }
    out
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Vertical pixel position of `value` in a plot spanning `[lo, hi]`.
pub fn y_position(value: f64, lo: f64, hi: f64, log_scale: bool) -> f64 {
    let (v, lo, hi) = if log_scale {
        (value.ln(), lo.ln(), hi.ln())
    } else {
        (value, lo, hi)
    };
    let frac = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    HEIGHT - MARGIN - frac * (HEIGHT - 2.0 * MARGIN)
}

pub fn equity_svg(reports: &[BacktestReport], options: ReportOptions) -> String {
    let values = reports.iter().flat_map(|r| r.equity.iter().copied());
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let longest = reports.iter().map(|r| r.equity.len()).max().unwrap_or(1).max(2);
    let x_of = |i: usize| MARGIN + i as f64 / (longest - 1) as f64 * (WIDTH - 2.0 * MARGIN);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="grey"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let scale = if options.log_scale { "log" } else { "linear" };
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{}" font-size="12" font-family="sans-serif">equity ({scale}) {lo:.3} to {hi:.3}</text>"#,
        MARGIN - 10.0
    );
    for (k, r) in reports.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = r
            .equity
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x_of(i), y_position(*v, lo, hi, options.log_scale)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" font-family="sans-serif" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 16.0 + 14.0 * k as f64,
            xml_escape(&r.policy_id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write `<stem>.json`, `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn emit_report(reports: &[BacktestReport], dir: &Path, stem: &str, options: ReportOptions) -> Result<ReportPaths> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = ReportPaths {
        json: dir.join(format!("{stem}.json")),
        csv: dir.join(format!("{stem}.csv")),
        svg: dir.join(format!("{stem}.svg")),
    };
    let json = serde_json::to_string_pretty(&ReportFile::new(reports.to_vec()))?;
    std::fs::write(&paths.json, json).map_err(|e| Error::io(&paths.json, e))?;
    std::fs::write(&paths.csv, summary_csv(reports)).map_err(|e| Error::io(&paths.csv, e))?;
    std::fs::write(&paths.svg, equity_svg(reports, options)).map_err(|e| Error::io(&paths.svg, e))?;
    Ok(paths)
}
