use std::path::Path;

use hierfolio::config::{env_overrides, RunConfig};
use hierfolio::pipeline::{paths, Manifest, Pipeline, RunScope, Stage};
use hierfolio::sentiment::{load_sentiment_table, SentimentTable};

const TINY: &str = r#"
global_seed = 7

[agents]
algorithms = ["ppo", "td3"]
seeds = "0..1"
episodes = 1

[agents.hyper]
hidden = 8
batch_size = 8
ppo_epochs = 1
learning_starts = 8

[aggregator]
epochs = 2
hidden = 8
"#;

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TINY, &[], None).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn full_run_then_cache_hit_then_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let first = Pipeline::new(tiny(dir.path())).unwrap().run(&RunScope::default()).unwrap();
    assert!(!first.all_cached());
    // train-meta reports once per level
    assert_eq!(first.stages.len(), 9);
    assert!(Stage::ALL.iter().all(|st| first.stages.iter().any(|s| s.stage == *st)));

    let manifest = Manifest::load(&dir.path().join(paths::MANIFEST)).unwrap();
    assert!(manifest.verify(dir.path()).unwrap().is_empty());
    assert_eq!(manifest.artifacts.keys().filter(|k| k.starts_with("base/")).count(), 2 * 2 * 2 + 1);

    let second = Pipeline::new(tiny(dir.path())).unwrap().run(&RunScope::default()).unwrap();
    assert!(second.all_cached(), "{:?}", second.stages);
    assert_eq!(std::fs::read(&first.manifest).unwrap(), std::fs::read(&second.manifest).unwrap());

    let table = dir.path().join(paths::TABLE);
    std::fs::write(&table, "tampered").unwrap();
    assert_eq!(manifest.verify(dir.path()).unwrap(), vec![paths::TABLE.to_string()]);
    let third = Pipeline::new(tiny(dir.path())).unwrap().run(&RunScope::default()).unwrap();
    let report = third.stages.iter().find(|s| s.stage == Stage::Report).unwrap();
    assert!(!report.cached);
    assert!(third.stages.iter().filter(|s| s.stage != Stage::Report).all(|s| s.cached));
    assert!(std::fs::read_to_string(&table).unwrap().starts_with("policy,"));
}

#[test]
fn changed_settings_invalidate_downstream_stages_only() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(tiny(dir.path())).unwrap().run(&RunScope::default()).unwrap();
    let mut cfg = tiny(dir.path());
    cfg.aggregator.epochs = 3;
    let run = Pipeline::new(cfg).unwrap().run(&RunScope::default()).unwrap();
    for s in &run.stages {
        let expect_cached = s.stage < Stage::TrainMeta;
        assert_eq!(s.cached, expect_cached, "{}", s.stage.as_str());
    }
}

#[test]
fn partial_scope_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let scope = RunScope {
        until: Some(Stage::Features),
        ..RunScope::default()
    };
    let run = Pipeline::new(tiny(dir.path())).unwrap().run(&scope).unwrap();
    assert_eq!(run.stages.last().unwrap().stage, Stage::Features);
    assert!(dir.path().join(paths::PRICES).exists());
    assert!(!dir.path().join(paths::TABLE).exists());
    let sentiment = load_sentiment_table(&dir.path().join(paths::SENTIMENT)).unwrap();
    assert_eq!(sentiment.len(), 14 * 264);
}

#[test]
fn overlapping_windows_are_reported_by_key() {
    let text = format!("{TINY}\n[windows]\ntrain = \"2003-02:2018-06\"\ntest = \"2018-01:2024-12\"\n");
    let err = RunConfig::from_toml(&text, &[], None).unwrap_err().to_string();
    assert!(err.contains("windows"), "{err}");
    let err = RunConfig::from_toml(TINY, &[("reward.alpha2".into(), "-1".into())], None)
        .unwrap_err()
        .to_string();
    assert!(err.contains("reward.alpha2"), "{err}");
}

#[test]
fn environment_overrides_apply() {
    let vars = vec![
        ("HIERFOLIO__AGENTS__EPISODES".to_string(), "3".to_string()),
        ("PATH".to_string(), "/bin".to_string()),
    ];
    let overrides = env_overrides(vars);
    assert_eq!(overrides.len(), 1);
    let cfg = RunConfig::from_toml(TINY, &overrides, None).unwrap();
    assert_eq!(cfg.agents.episodes, 3);
}

#[test]
fn sentiment_csv_roundtrip() {
    let text = "month,ticker,score,n_articles\n2003-01,GSPC,0.25,4\n2003-01,FTSE,-1,1\n2003-02,GSPC,0,0\n";
    let t = SentimentTable::parse_csv(text).unwrap();
    assert_eq!(t.len(), 3);
    let back = SentimentTable::parse_csv(&t.to_csv().unwrap()).unwrap();
    assert_eq!(back.to_csv().unwrap(), t.to_csv().unwrap());
    let m = "2003-01".parse().unwrap();
    assert_eq!(t.get(m, "FTSE").score, -1.0);
    assert!(t.get(m, "DJI").no_news());

    for bad in [
        "month,ticker,score\n2003-01,GSPC,0.1\n",
        "month,ticker,score,n_articles\n2003-01,GSPC,1.5,2\n",
        "month,ticker,score,n_articles\n2003-13,GSPC,0.1,2\n",
        "month,ticker,score,n_articles\n2003-01,GSPC,0.1,2\n2003-01,GSPC,0.2,2\n",
    ] {
        assert!(SentimentTable::parse_csv(bad).is_err(), "{bad}");
    }
}
