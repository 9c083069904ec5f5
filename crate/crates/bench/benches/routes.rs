use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxrel_core::tasks::enumerate_routes;

fn routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumerate routes");
    // Exhaustive, unranked sampling, and rejection sampling respectively.
    for (alpha, cap) in [(5, 200), (8, 64), (24, 64)] {
        group.bench_function(format!("alpha {alpha} cap {cap}"), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| enumerate_routes(alpha, cap, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, routes);
criterion_main!(benches);
