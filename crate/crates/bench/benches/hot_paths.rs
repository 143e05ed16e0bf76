use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use eqprune::game::update_participation;
use eqprune::numkit::{matmul, matmul_at_b};
use eqprune::trainer::collect_stats;
use eqprune::{Architecture, ParticipatingNet, ParticipationState, Rng, TrainConfig};
use eqprune_bench::synthetic_batch;

fn matmul_benches(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let (a, _) = synthetic_batch(&mut rng, 128, 784);
    let (b, _) = synthetic_batch(&mut rng, 784, 512);
    c.bench_function("matmul 128x784 * 784x512", |bch| {
        bch.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
    let (dz, _) = synthetic_batch(&mut rng, 128, 512);
    c.bench_function("matmul_at_b 512x128 * 128x784", |bch| {
        bch.iter(|| matmul_at_b(black_box(&dz), black_box(&a)).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let arch = Architecture::mnist();
    let net = ParticipatingNet::new(&arch, &mut rng).unwrap();
    let (x, y) = synthetic_batch(&mut rng, 128, 784);
    c.bench_function("forward 128 x 784-512-256-10", |b| {
        b.iter(|| net.forward(black_box(&x)).unwrap())
    });
    c.bench_function("loss_and_backward 128", |b| {
        b.iter(|| net.loss_and_backward(black_box(&x), black_box(&y)).unwrap())
    });

    let cfg = TrainConfig::default();
    let (_, grads) = net.loss_and_backward(&x, &y).unwrap();
    let state = ParticipationState::full(arch.players());
    c.bench_function("collect_stats + update_participation 768 players", |b| {
        b.iter(|| {
            let stats = collect_stats(&net, &grads, &cfg.game, cfg.benefit_mode, cfg.benefit_gradient);
            update_participation(black_box(&state), &stats, &cfg.game).unwrap()
        })
    });
}

criterion_group!(benches, matmul_benches, training_step);
criterion_main!(benches);
