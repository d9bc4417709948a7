use affordloop::affordance::{compute_dgt, cp_forward};
use affordloop::geometry::Point;
use affordloop::pipeline::{TrainConfig, Trainer};
use affordloop::policy::{build_observation, policy_forward_batch, Observation};
use affordloop::simworld::TaskId;
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect()
}

fn door_trainer() -> Trainer {
    Trainer::new(TrainConfig::new(TaskId::OpenDoor)).unwrap()
}

fn dgt(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_points(256, &mut rng);
    let contacts = random_points(512, &mut rng);
    c.bench_function("dgt 256 x 512", |b| {
        b.iter(|| compute_dgt(black_box(&cloud), black_box(&contacts), 0.05, 1e-6).unwrap())
    });
}

fn predictor(c: &mut Criterion) {
    let t = door_trainer();
    c.bench_function("cp forward 256 points", |b| {
        b.iter(|| cp_forward(black_box(&t.cp), black_box(&t.clouds[0].cloud)).unwrap())
    });
}

fn policy(c: &mut Criterion) {
    let t = door_trainer();
    let obs: Vec<Observation> = t
        .envs
        .envs
        .iter()
        .enumerate()
        .map(|(i, env)| {
            let o = t.envs.object_index(i);
            build_observation(env, &t.clouds[o], &t.snapshots[o], &t.layout).unwrap()
        })
        .collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    c.bench_function("policy forward batch 16", |b| {
        b.iter(|| policy_forward_batch(black_box(&t.policy), black_box(&refs)).unwrap())
    });
}

fn env_step(c: &mut Criterion) {
    let mut t = door_trainer();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = t.envs.action_dim();
    c.bench_function("door env batch step 16", |b| {
        b.iter(|| {
            let actions: Vec<Vec<f64>> = (0..t.envs.len())
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            t.envs.step(&actions).unwrap();
            t.envs.reset_done().unwrap();
        })
    });
}

criterion_group!(benches, dgt, predictor, policy, env_step);
criterion_main!(benches);
