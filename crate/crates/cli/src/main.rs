use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hierfolio::agents::{Algorithm, Policy};
use hierfolio::allocator::Allocator;
use hierfolio::backtest::{benchmark_actor, run_backtest, run_buy_and_hold, BenchmarkSpec, Fingerprint};
use hierfolio::config::{validate_config, RunConfig, Seeds};
use hierfolio::data::FillPolicy;
use hierfolio::features::ObservationMode;
use hierfolio::hierarchy::Level;
use hierfolio::market::{parse_month_range, Market, Window};
use hierfolio::pipeline::{Pipeline, RunScope, RunSummary, Stage};
use hierfolio::report::ReportFile;
use hierfolio::sentiment::load_sentiment_table;
use hierfolio::synth::synthetic_universe;

#[derive(Parser)]
#[command(name = "hierfolio", version, about = "Hierarchical RL portfolio allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short, default_value = "configs/default.toml")]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Disable rayon and run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the normalized configuration with every default filled in.
    Validate(Common),
    /// Load, clean and store the price table.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long)]
        fill: Option<FillPolicy>,
    },
    /// Compute monthly observation vectors for both modes.
    Features(Common),
    /// Simulate or validate monthly sentiment scores.
    Sentiment {
        #[command(subcommand)]
        action: SentimentAction,
    },
    /// Train the base-agent seed battery.
    TrainBase {
        #[command(flatten)]
        common: Common,
        #[arg(long = "algo")]
        algorithms: Vec<Algorithm>,
        #[arg(long = "mode")]
        modes: Vec<ObservationMode>,
        /// Inclusive range such as `0..4`.
        #[arg(long)]
        seeds: Option<Seeds>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train meta-agents by lookahead imitation.
    TrainMeta {
        #[command(flatten)]
        common: Common,
        #[arg(long = "mode")]
        modes: Vec<ObservationMode>,
    },
    /// Train the super-agent over the meta-agents.
    TrainSuper(Common),
    /// Backtest one policy over a window.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path, `equal`, `equal-buy-hold`, `asset:TICKER`,
        /// `meta-metrics`, `meta-nlp` or `super`.
        #[arg(long)]
        policy: String,
        /// Holding months, `YYYY-MM:YYYY-MM`.
        #[arg(long)]
        window: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce reports and print the comparison table.
    Report(Common),
    /// Run every stage.
    Run(Common),
    /// Write the seeded synthetic 14-asset price file.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SentimentAction {
    /// Write simulated scores for the configured universe.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "lambda")]
        lambda: Option<f64>,
    },
    /// Check a `month,ticker,score,n_articles` file.
    Validate { file: PathBuf },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = if common.config.exists() {
        validate_config(&common.config).with_context(|| format!("invalid config {}", common.config.display()))?
    } else {
        bail!("config file {} not found", common.config.display());
    };
    if let Some(out) = &common.output {
        cfg.output_dir = out.clone();
    }
    if common.sequential {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn run_until(cfg: RunConfig, scope: RunScope) -> Result<RunSummary> {
    cfg.validate()?;
    let summary = Pipeline::new(cfg)?.run(&scope)?;
    for s in &summary.stages {
        println!("{:<12} {}", s.stage.as_str(), if s.cached { "cached" } else { "ran" });
    }
    println!("manifest: {}", summary.manifest.display());
    Ok(summary)
}

fn until(stage: Stage) -> RunScope {
    RunScope {
        until: Some(stage),
        ..RunScope::default()
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(common) => {
            let cfg = load_config(&common)?;
            print!("{}", cfg.to_toml()?);
        }
        Command::Ingest { common, prices, fill } => {
            let mut cfg = load_config(&common)?;
            if prices.is_some() {
                cfg.data.prices = prices;
            }
            if let Some(f) = fill {
                cfg.data.fill = f;
            }
            run_until(cfg, until(Stage::Ingest))?;
        }
        Command::Features(common) => {
            run_until(load_config(&common)?, until(Stage::Features))?;
        }
        Command::Sentiment { action } => match action {
            SentimentAction::Simulate { common, seed, lambda } => {
                let mut cfg = load_config(&common)?;
                if let Some(s) = seed {
                    cfg.global_seed = s;
                }
                if let Some(l) = lambda {
                    cfg.sentiment.lambda = l;
                }
                cfg.data.sentiment = None;
                run_until(cfg, until(Stage::Sentiment))?;
            }
            SentimentAction::Validate { file } => {
                let table = load_sentiment_table(&file).with_context(|| format!("invalid sentiment file {}", file.display()))?;
                println!("{}: {} valid rows", file.display(), table.len());
            }
        },
        Command::TrainBase {
            common,
            algorithms,
            modes,
            seeds,
            episodes,
        } => {
            let mut cfg = load_config(&common)?;
            if !algorithms.is_empty() {
                cfg.agents.algorithms = algorithms;
            }
            if !modes.is_empty() {
                cfg.agents.modes = modes;
            }
            if let Some(s) = seeds {
                cfg.agents.seeds = s;
            }
            if let Some(e) = episodes {
                cfg.agents.episodes = e;
            }
            run_until(cfg, until(Stage::TrainBase))?;
        }
        Command::TrainMeta { common, modes } => {
            let scope = RunScope {
                until: Some(Stage::TrainMeta),
                meta_modes: modes,
            };
            run_until(load_config(&common)?, scope)?;
        }
        Command::TrainSuper(common) => {
            run_until(load_config(&common)?, until(Stage::TrainSuper))?;
        }
        Command::Backtest {
            common,
            policy,
            window,
            out,
        } => backtest(load_config(&common)?, &policy, &window, &out)?,
        Command::Report(common) => {
            let cfg = load_config(&common)?;
            let out = cfg.output_dir.clone();
            run_until(cfg, RunScope::default())?;
            let table = out.join(hierfolio::pipeline::paths::TABLE);
            print!("{}", std::fs::read_to_string(&table).with_context(|| format!("reading {}", table.display()))?);
        }
        Command::Run(common) => {
            run_until(load_config(&common)?, RunScope::default())?;
        }
        Command::Synth { seed, out } => {
            let table = synthetic_universe(seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            table.write_csv(&out)?;
            println!("wrote {} rows for {} assets to {}", table.n_dates(), table.n_assets(), out.display());
        }
    }
    Ok(())
}

fn backtest(cfg: RunConfig, policy: &str, window: &str, out: &Path) -> Result<()> {
    let (from, to) = parse_month_range(window)?;
    let fingerprint = Fingerprint {
        alphas: cfg.reward.params()?.alphas(),
        seeds: cfg.agents.seeds.0.clone(),
        horizon: cfg.aggregator.horizon,
        risk_free_annual: cfg.report.risk_free_annual,
        config_hash: hierfolio::pipeline::config_hash(&cfg)?,
    };
    let tier_level: Option<Level> = policy.parse().ok();
    let mut p = Pipeline::new(cfg)?;
    let prices = p.ingest()?;
    let sentiment = p.sentiment(&prices)?;
    let market: Market = p.features(prices, &sentiment)?;
    let w = Window::resolve(&market, from, to)?;
    let tickers = market.tickers().to_vec();
    let report = if policy == "equal-buy-hold" {
        run_buy_and_hold(&market, w, &fingerprint)?
    } else if policy == "equal" || policy.starts_with("asset:") {
        let spec: BenchmarkSpec = policy.parse()?;
        run_backtest(&benchmark_actor(&spec, &tickers)?, &market, w, &fingerprint)?
    } else if let Some(level) = tier_level {
        let cells = p.train_base(&market)?;
        let metas = p.train_meta(&market, &cells, &[])?;
        let actor: Box<dyn Allocator> = if level == Level::Super {
            Box::new(p.train_super(&market, &metas)?)
        } else {
            Box::new(
                metas
                    .into_iter()
                    .find(|t| t.model().level == level)
                    .with_context(|| format!("{level} is not configured"))?,
            )
        };
        run_backtest(actor.as_ref(), &market, w, &fingerprint)?
    } else {
        let loaded = Policy::load(Path::new(policy)).with_context(|| format!("loading checkpoint {policy}"))?;
        run_backtest(&loaded, &market, w, &fingerprint)?
    };
    println!(
        "{} {}..{}: roi {:.4} sharpe {:.3} vol {:.4} mdd {:.4}",
        report.policy_id, report.window.0, report.window.1, report.annualized_roi, report.annualized_sharpe,
        report.annualized_vol, report.mdd
    );
    let json = serde_json::to_string_pretty(&ReportFile::new(vec![report]))?;
    std::fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
