use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hierfolio::agents::{run_seed_battery, Algorithm, BatteryRequest, Hyperparams};
use hierfolio::data::{fill_missing, monthly_partition, FillPolicy, PriceTable};
use hierfolio::env::RewardParams;
use hierfolio::features::ObservationMode;
use hierfolio::market::{Market, Window};
use hierfolio::sentiment::simulate_sentiment;
use hierfolio::synth::synthetic_universe;
use hierfolio::Exec;

fn universe() -> PriceTable {
    fill_missing(&synthetic_universe(0).unwrap(), FillPolicy::Forward).unwrap()
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn features(c: &mut Criterion) {
    let table = universe();
    let slices = monthly_partition(&table).unwrap();
    let sentiment = simulate_sentiment(table.tickers(), &slices, 0, 0.0).unwrap();
    let mut group = c.benchmark_group("market_build");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| Market::build(black_box(table.clone()), Some(&sentiment), 0.0, exec).unwrap())
        });
    }
    group.finish();
}

fn battery(c: &mut Criterion) {
    let table = universe();
    let market = Market::build(table, None, 0.0, Exec::Parallel).unwrap();
    let window = Window::new(&market, 1, 60).unwrap();
    let req = BatteryRequest {
        algorithms: vec![Algorithm::Ppo, Algorithm::Td3],
        modes: vec![ObservationMode::Metrics],
        seeds: (0..4).collect(),
        episodes: 1,
        hyper: Hyperparams {
            hidden: 16,
            batch_size: 16,
            learning_starts: 16,
            ppo_epochs: 2,
            ..Hyperparams::default()
        },
        reward: RewardParams::default(),
        global_seed: 0,
    };
    let mut group = c.benchmark_group("seed_battery");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_seed_battery(&market, window, &req, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, features, battery);
criterion_main!(benches);
