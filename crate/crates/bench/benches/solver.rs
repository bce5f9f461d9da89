use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use gridlink::bus::Sample;
use gridlink::grid::{power_balance, solve_power_flow};
use gridlink::scenario::{parse_scenario, run, RunOptions};
use gridlink_bench::{bus_fixture, chain, two_feeder_loaded};

fn sweep(c: &mut Criterion) {
    let (g, inj) = two_feeder_loaded(7200.0);
    c.bench_function("sweep/two_feeder_three_chargers", |b| {
        b.iter(|| solve_power_flow(black_box(&g), black_box(&inj)).unwrap())
    });
    let v = solve_power_flow(&g, &inj).unwrap();
    c.bench_function("sweep/two_feeder_balance_check", |b| b.iter(|| power_balance(&g, &inj, black_box(&v))));

    let mut group = c.benchmark_group("sweep/chain");
    for n in [5, 20, 80] {
        let (g, inj) = chain(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_power_flow(black_box(&g), black_box(&inj)).unwrap())
        });
    }
    group.finish();
}

fn bus(c: &mut Criterion) {
    let f = bus_fixture(32);
    let mut t = 0;
    c.bench_function("bus/publish_32_poll_32", |b| {
        b.iter(|| {
            t += 10;
            for (i, topic) in f.topics.iter().enumerate() {
                let s = Sample::new(topic.clone(), t, i as f64, f.writer.source());
                f.bus.publish(&f.writer, s).unwrap();
            }
            black_box(f.bus.poll(&f.reader, t, 100))
        })
    });
}

fn scenario(c: &mut Criterion) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/evening_hil_real.scn");
    let mut spec = parse_scenario(&path).unwrap();
    spec.end_of_day_ms = spec.start_of_day_ms + 600_000;
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    group.bench_function("hil_real_10min", |b| b.iter(|| run(&spec, &RunOptions::default()).unwrap()));
    group.finish();
}

criterion_group!(benches, sweep, bus, scenario);
criterion_main!(benches);
