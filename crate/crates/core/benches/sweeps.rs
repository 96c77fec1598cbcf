use criterion::{criterion_group, criterion_main, Criterion};
use meshgate_core::config::Config;
use meshgate_core::experiments::{level_config, run_traffic_level};
use meshgate_core::sweep;

fn traffic_sweep(c: &mut Criterion) {
    let (_, mut base) = Config::load("traffic").expect("shipped scenario");
    base.duration_s = 60;
    let configs: Vec<Config> = base.experiment.counts.iter().map(|&n| level_config(&base, n)).collect();
    let mut g = c.benchmark_group("traffic_sweep");
    g.sample_size(10);
    g.bench_function("map", |b| b.iter(|| sweep::map(&configs, |c| run_traffic_level(c).unwrap())));
    g.bench_function("seq_map", |b| b.iter(|| sweep::seq_map(&configs, |c| run_traffic_level(c).unwrap())));
    g.finish();
}

criterion_group!(benches, traffic_sweep);
criterion_main!(benches);
