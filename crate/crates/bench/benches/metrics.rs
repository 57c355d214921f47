use criterion::{criterion_group, criterion_main, Criterion};
use hydro_ssm::eval::{metric_suite, signatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs: Vec<f64> = (0..3650).map(|_| (rng.random::<f64>() * 4.0 - 2.0).exp()).collect();
    let sim: Vec<f64> = obs.iter().map(|q| q * 0.9 + rng.random::<f64>() * 0.3).collect();
    let series: Vec<Option<f64>> = obs.iter().map(|&q| Some(q)).collect();
    c.bench_function("metric_suite_10y", |b| b.iter(|| metric_suite(&obs, &sim).unwrap()));
    c.bench_function("signatures_10y", |b| b.iter(|| signatures(&series).unwrap()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
