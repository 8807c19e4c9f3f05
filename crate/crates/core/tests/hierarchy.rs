use std::sync::Arc;

use proptest::prelude::*;

use hierfolio::agents::{train_base_agent, AgentSpec, Algorithm, Hyperparams};
use hierfolio::allocator::Allocator;
use hierfolio::backtest::{benchmark_actor, BenchmarkSpec};
use hierfolio::env::{PortfolioEnv, PortfolioWeights, RewardParams};
use hierfolio::features::ObservationMode;
use hierfolio::hierarchy::{
    build_panels, collect_imitation_dataset, hierarchy_act, train_aggregator, AggregatorConfig, AggregatorModel,
    ContributorRef, DecisionPanel, LookaheadSample, Level, Tier,
};
use hierfolio::market::{Market, Window};
use hierfolio::synth::{constant_growth_market, regime_market};
use hierfolio::Exec;

fn market(n: usize, months: usize, seed: u64) -> Market {
    Market::build(regime_market(n, 2000, months, seed).unwrap(), None, 0.0, Exec::Sequential).unwrap()
}

fn refs(k: usize) -> Vec<ContributorRef> {
    (0..k)
        .map(|i| ContributorRef {
            id: format!("c{i}"),
            checksum: format!("{i:02x}"),
        })
        .collect()
}

fn panel(m: &Market, month: usize, contributors: &[ContributorRef], weights: Vec<PortfolioWeights>) -> DecisionPanel {
    DecisionPanel {
        month: m.month_id(month),
        holding: month,
        contributors: contributors.to_vec(),
        weights,
    }
}

fn quick(epochs: usize) -> AggregatorConfig {
    AggregatorConfig {
        epochs,
        hidden: 16,
        ..AggregatorConfig::default()
    }
}

#[test]
fn panel_lengths_follow_contributors_and_assets() {
    let m = market(14, 24, 0);
    let members: Vec<Box<dyn Allocator>> = (0..20)
        .map(|i| Box::new(benchmark_actor(&BenchmarkSpec::SingleAsset(format!("R{}", i % 14)), m.tickers()).unwrap()) as Box<dyn Allocator>)
        .collect();
    let refs: Vec<&dyn Allocator> = members.iter().map(|b| b.as_ref()).collect();
    let w = Window::new(&m, 1, 23).unwrap();
    let panels = build_panels(&refs, &m, w, Exec::Parallel).unwrap();
    assert_eq!(panels.len(), 23);
    assert!(panels.iter().all(|p| p.concatenated().len() == 280));
    let panels = build_panels(&refs[..2], &m, w, Exec::Sequential).unwrap();
    assert!(panels.iter().all(|p| p.concatenated().len() == 28));
}

#[test]
fn single_contributor_is_always_chosen() {
    let m = market(3, 20, 1);
    let w = Window::new(&m, 1, 19).unwrap();
    let env = PortfolioEnv::new(&m, w, ObservationMode::Metrics, RewardParams::default()).unwrap();
    let c = refs(1);
    let panels: Vec<_> = w.months().map(|t| panel(&m, t, &c, vec![PortfolioWeights::uniform(3)])).collect();
    let samples = collect_imitation_dataset(&panels, &env, 2, Exec::Sequential).unwrap();
    assert_eq!(samples.len(), 18);
    assert!(samples.iter().all(|s| s.chosen == "c0" && s.w_star == vec![1.0 / 3.0; 3]));
}

#[test]
fn dominating_asset_wins_the_label() {
    let m = Market::build(constant_growth_market(&[0.03, -0.02, 0.0], 2003, 12).unwrap(), None, 0.0, Exec::Sequential).unwrap();
    let w = Window::new(&m, 1, 11).unwrap();
    let env = PortfolioEnv::new(&m, w, ObservationMode::Metrics, RewardParams::default()).unwrap();
    let c = refs(3);
    let panels: Vec<_> = w
        .months()
        .map(|t| panel(&m, t, &c, vec![PortfolioWeights::unit(3, 2), PortfolioWeights::unit(3, 1), PortfolioWeights::unit(3, 0)]))
        .collect();
    let samples = collect_imitation_dataset(&panels, &env, 3, Exec::Parallel).unwrap();
    assert_eq!(samples.len(), 9);
    assert!(samples.iter().all(|s| s.chosen == "c2"));
}

#[test]
fn ties_go_to_the_first_contributor() {
    let m = market(3, 10, 2);
    let w = Window::new(&m, 1, 9).unwrap();
    let env = PortfolioEnv::new(&m, w, ObservationMode::Metrics, RewardParams::default()).unwrap();
    let c = refs(3);
    let same = PortfolioWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
    let panels: Vec<_> = w.months().map(|t| panel(&m, t, &c, vec![same.clone(); 3])).collect();
    let samples = collect_imitation_dataset(&panels, &env, 1, Exec::Sequential).unwrap();
    assert!(samples.iter().all(|s| s.chosen == "c0"));
}

#[test]
fn dataset_rejects_bad_input() {
    let m = market(3, 10, 2);
    let w = Window::new(&m, 1, 9).unwrap();
    let env = PortfolioEnv::new(&m, w, ObservationMode::Metrics, RewardParams::default()).unwrap();
    let c = refs(2);
    let mut panels: Vec<_> = w.months().map(|t| panel(&m, t, &c, vec![PortfolioWeights::uniform(3); 2])).collect();
    assert!(collect_imitation_dataset(&panels, &env, 0, Exec::Sequential).is_err());
    panels[3].contributors.reverse();
    assert!(collect_imitation_dataset(&panels, &env, 1, Exec::Sequential).is_err());
}

fn uniform_samples(n: usize, k: usize, count: usize) -> Vec<LookaheadSample> {
    let m = market(n, count + 2, 9);
    (1..=count)
        .map(|t| LookaheadSample {
            month: m.month_id(t),
            holding: t,
            x: (0..n * k).map(|i| ((i * 7 + t * 3) % 11) as f64 / 11.0).collect(),
            w_star: vec![1.0 / n as f64; n],
            chosen: "c0".into(),
            lookahead_reward: 0.0,
        })
        .collect()
}

#[test]
fn learns_a_constant_uniform_target() {
    let samples = uniform_samples(4, 3, 64);
    let model = train_aggregator(&samples, &refs(3), Level::Super, &quick(300)).unwrap();
    assert!(model.final_loss < 1e-4, "loss {}", model.final_loss);
}

#[test]
fn zero_epochs_keeps_the_initial_net_and_training_is_bitwise_repeatable() {
    let samples = uniform_samples(3, 2, 20);
    let a = train_aggregator(&samples, &refs(2), Level::MetaMetrics, &quick(0)).unwrap();
    let b = train_aggregator(&samples, &refs(2), Level::MetaMetrics, &quick(0)).unwrap();
    assert_eq!(a.net, b.net);
    let c = train_aggregator(&samples, &refs(2), Level::MetaMetrics, &quick(5)).unwrap();
    let d = train_aggregator(&samples, &refs(2), Level::MetaMetrics, &quick(5)).unwrap();
    assert_eq!(c, d);
    assert_ne!(a.net, c.net);
}

#[test]
fn model_refuses_other_panels_and_roundtrips() {
    let samples = uniform_samples(3, 2, 10);
    let model = train_aggregator(&samples, &refs(2), Level::MetaNlp, &quick(2)).unwrap();
    let m = market(3, 4, 0);
    let other = refs(3);
    let p = panel(&m, 1, &other[1..], vec![PortfolioWeights::uniform(3); 2]);
    assert!(model.act(&p).is_err());
    let p = panel(&m, 1, &refs(2), vec![PortfolioWeights::uniform(4); 2]);
    assert!(model.act(&p).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    assert_eq!(AggregatorModel::load(&path).unwrap(), model);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn contributor_order_does_not_matter(seed in 0u64..1000, rot in 1usize..3) {
        let n = 3;
        let k = 3;
        let m = market(n, 20, seed);
        let w = Window::new(&m, 1, 19).unwrap();
        let env = PortfolioEnv::new(&m, w, ObservationMode::Metrics, RewardParams::default()).unwrap();
        let c = refs(k);
        let props: Vec<Vec<PortfolioWeights>> = w
            .months()
            .map(|t| (0..k).map(|i| PortfolioWeights::unit(n, (i + t) % n)).collect())
            .collect();
        let panels_a: Vec<_> = w.months().zip(&props).map(|(t, ws)| panel(&m, t, &c, ws.clone())).collect();
        let mut c_rot = c.clone();
        c_rot.rotate_left(rot);
        let panels_b: Vec<_> = w
            .months()
            .zip(&props)
            .map(|(t, ws)| {
                let mut ws = ws.clone();
                ws.rotate_left(rot);
                panel(&m, t, &c_rot, ws)
            })
            .collect();
        let sa = collect_imitation_dataset(&panels_a, &env, 2, Exec::Sequential).unwrap();
        let sb = collect_imitation_dataset(&panels_b, &env, 2, Exec::Sequential).unwrap();
        let ma = train_aggregator(&sa, &c, Level::Super, &quick(3)).unwrap();
        let mb = train_aggregator(&sb, &c_rot, Level::Super, &quick(3)).unwrap();
        prop_assert_eq!(&ma, &mb);
        for (pa, pb) in panels_a.iter().zip(&panels_b) {
            prop_assert_eq!(ma.act(pa).unwrap(), mb.act(pb).unwrap());
        }
    }
}

#[test]
fn three_level_hierarchy_acts_on_the_full_universe() {
    let m = market(14, 16, 4);
    let w = Window::new(&m, 1, 15).unwrap();
    let hyper = Hyperparams {
        hidden: 8,
        ppo_epochs: 1,
        ..Hyperparams::default()
    };
    let mut tiers: Vec<Arc<dyn Allocator>> = Vec::new();
    {
        let (mode, level) = (ObservationMode::Metrics, Level::MetaMetrics);
        let env = PortfolioEnv::new(&m, w, mode, RewardParams::default()).unwrap();
        let base: Vec<Arc<dyn Allocator>> = [Algorithm::Ppo, Algorithm::Td3]
            .iter()
            .map(|&a| {
                let spec = AgentSpec {
                    hyper: hyper.clone(),
                    ..AgentSpec::new(a, mode, 0)
                };
                Arc::new(train_base_agent(&spec, &env, 0).unwrap()) as Arc<dyn Allocator>
            })
            .collect();
        let refs: Vec<&dyn Allocator> = base.iter().map(|b| b.as_ref()).collect();
        let panels = build_panels(&refs, &m, w, Exec::Sequential).unwrap();
        let samples = collect_imitation_dataset(&panels, &env, 3, Exec::Sequential).unwrap();
        let model = train_aggregator(&samples, &panels[0].contributors, level, &quick(2)).unwrap();
        tiers.push(Arc::new(Tier::new(model, base).unwrap()));
    }
    tiers.push(Arc::new(benchmark_actor(&BenchmarkSpec::EqualWeight, m.tickers()).unwrap()));
    let env = PortfolioEnv::new(&m, w, ObservationMode::Metrics, RewardParams::default()).unwrap();
    let refs: Vec<&dyn Allocator> = tiers.iter().map(|b| b.as_ref()).collect();
    let panels = build_panels(&refs, &m, w, Exec::Sequential).unwrap();
    let samples = collect_imitation_dataset(&panels, &env, 3, Exec::Sequential).unwrap();
    let model = train_aggregator(&samples, &panels[0].contributors, Level::Super, &quick(2)).unwrap();
    assert!(Tier::new(model.clone(), tiers[..1].to_vec()).is_err());
    let root = Tier::new(model, tiers).unwrap();
    for t in w.months() {
        let out = hierarchy_act(&root, &m.inputs_for(t).unwrap()).unwrap();
        assert_eq!(out.len(), 14);
        assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(out.as_slice().iter().all(|x| *x >= 0.0));
    }
}
