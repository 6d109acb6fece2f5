use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use riskdrive::dynamics::ControlInput;
use riskdrive::geometry::{sat_intersects, OrientedBox, Vec2};
use riskdrive::neural::NetworkSpec;
use riskdrive::road::{ScenarioConfig, Task, World};
use riskdrive::{Action, DrivingEnv, DuelingCombine, EnvConfig, NetworkParams};

fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
    OrientedBox::new(
        Vec2::new(rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0)),
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

fn sat(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<_> = (0..1024)
        .map(|_| (random_box(&mut rng), random_box(&mut rng)))
        .collect();
    c.bench_function("sat_intersects/1024_pairs", |b| {
        b.iter(|| {
            pairs
                .iter()
                .filter(|(p, q)| sat_intersects(black_box(p), black_box(q)))
                .count()
        })
    });
}

fn world(c: &mut Criterion) {
    let mut group = c.benchmark_group("world_step");
    for (task, count) in [
        (Task::Highway, 50),
        (Task::Highway, 150),
        (Task::Intersection, 30),
    ] {
        let cfg = ScenarioConfig::new(task).with_count(count).with_seed(3);
        let world = World::build(&cfg).unwrap();
        group.bench_function(format!("{task}_{count}"), |b| {
            b.iter_batched_ref(
                || world.clone(),
                |w| w.step(ControlInput::default(), 1.0 / 15.0).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn env_step(c: &mut Criterion) {
    let cfg = ScenarioConfig::new(Task::Highway)
        .with_count(50)
        .with_seed(5);
    let env_cfg = EnvConfig::for_task(Task::Highway);
    let (env, _) = DrivingEnv::reset(&cfg, &env_cfg, 5).unwrap();
    c.bench_function("env_step/highway_50", |b| {
        b.iter_batched_ref(
            || env.clone(),
            |e| e.step(Action::Idle).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("network");
    for (name, spec) in [
        ("full", NetworkSpec::full(35, 5)),
        ("compact", NetworkSpec::compact(35, 5)),
    ] {
        let p = NetworkParams::init(&spec, DuelingCombine::MeanCentered, &mut rng).unwrap();
        let x: Vec<f64> = (0..100 * 35).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dq: Vec<f64> = (0..100 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        group.bench_function(format!("{name}/forward_single"), |b| {
            b.iter(|| p.q_values(black_box(&x[..35])).unwrap())
        });
        group.bench_function(format!("{name}/forward_backward_batch100"), |b| {
            b.iter(|| {
                let cache = p.forward_batch(black_box(&x), 100).unwrap();
                p.backward(&cache, &dq).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, sat, world, env_step, network);
criterion_main!(benches);
