use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
output_dir = "out"

[agents]
algorithms = ["ppo"]
seeds = "0..1"
episodes = 1

[agents.hyper]
hidden = 8
ppo_epochs = 1

[aggregator]
epochs = 2
hidden = 8
"#;

fn hierfolio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hierfolio"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn validate_prints_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), TINY).unwrap();
    let out = stdout(&hierfolio(dir.path(), &["validate", "--config", "c.toml"]));
    assert!(out.contains("[reward]") && out.contains("alpha1"), "{out}");
    assert!(out.contains("train = \"2003-02:2017-12\""), "{out}");
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[reward]\nalpah2 = 1.0\n").unwrap();
    let o = hierfolio(dir.path(), &["validate", "--config", "c.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("reward.alpah2"));
    let o = hierfolio(dir.path(), &["validate", "--config", "missing.toml"]);
    assert!(!o.status.success());
}

#[test]
fn sentiment_validate_checks_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ok.csv"), "month,ticker,score,n_articles\n2010-03,GSPC,0.5,3\n").unwrap();
    std::fs::write(dir.path().join("bad.csv"), "month,ticker,score\n2010-03,GSPC,0.5\n").unwrap();
    assert!(stdout(&hierfolio(dir.path(), &["sentiment", "validate", "ok.csv"])).contains("1 valid rows"));
    assert!(!hierfolio(dir.path(), &["sentiment", "validate", "bad.csv"]).status.success());
}

#[test]
fn synth_run_report_and_backtest() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&hierfolio(dir.path(), &["synth", "--seed", "3", "--out", "p.csv"]));
    assert!(out.contains("14 assets"), "{out}");
    let cfg = format!("{TINY}\n[data]\nprices = \"p.csv\"\n");
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();

    let ran = stdout(&hierfolio(dir.path(), &["run", "--config", "c.toml", "--sequential"]));
    assert!(ran.contains("report") && ran.contains("manifest"), "{ran}");
    let table = stdout(&hierfolio(dir.path(), &["report", "--config", "c.toml"]));
    let rows: Vec<&str> = table.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert!(rows.ends_with(&["equal-weight", "asset:GSPC", "meta-metrics", "meta-nlp", "super"]), "{table}");

    let bt = stdout(&hierfolio(
        dir.path(),
        &["backtest", "--config", "c.toml", "--policy", "equal", "--window", "2018-01:2018-12", "--out", "eq.json"],
    ));
    assert!(bt.starts_with("equal-weight 2018-01..2018-12"), "{bt}");
    assert!(dir.path().join("eq.json").exists());

    let base = dir.path().join("out/base/ppo-metrics-s0.json");
    let bt = stdout(&hierfolio(
        dir.path(),
        &["backtest", "--config", "c.toml", "--policy", base.to_str().unwrap(), "--window", "2018-01:2018-06", "--out", "p.json"],
    ));
    assert!(bt.starts_with("ppo-metrics-s0"), "{bt}");
}
