use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::seq::SliceRandom;

use super::*;
use crate::diffcore::{max_relative_error, numeric_gradient, AdamConfig};
use crate::geometry::RigidTransform;

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
        .collect();
    let labels = (0..n).map(|_| *PartLabel::ALL.choose(&mut rng).unwrap()).collect();
    PointCloud {
        object_id: 0,
        points,
        labels,
        segments: vec![0; n],
    }
}

fn random_params(seed: u64) -> ContactPredictorParams {
    let mut p = ContactPredictorParams::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in p.head.layers.last_mut().unwrap().weight.iter_mut() {
        *t = rng.gen_range(-0.5..0.5);
    }
    p
}

fn brute_dgt(cloud: &[Point], contacts: &[Point], r: f64, eps: f64) -> Vec<f64> {
    let mut counts = vec![0usize; cloud.len()];
    for (i, p) in cloud.iter().enumerate() {
        for q in contacts {
            let (dx, dy) = (p.x - q.x, p.y - q.y);
            if (dx * dx + dy * dy).sqrt() < r {
                counts[i] += 1;
            }
        }
    }
    let max = *counts.iter().max().unwrap() as f64;
    counts.iter().map(|&c| c as f64 / (max + eps)).collect()
}

#[test]
fn buffer_fills_then_replaces() {
    let mut b = ContactBuffer::new(4, ContactChannel::A2O, 0, 1).unwrap();
    assert_eq!(b.insert(Point::new(0.0, 0.0)).unwrap(), None);
    assert_eq!(b.len(), 1);
    for i in 1..4 {
        b.insert(Point::new(i as f64, 0.0)).unwrap();
    }
    let before = b.points().to_vec();
    let slot = b.insert(Point::new(9.0, 9.0)).unwrap().unwrap();
    assert_eq!(b.len(), 4);
    let gone: Vec<usize> = (0..4).filter(|&i| !b.points().contains(&before[i])).collect();
    assert_eq!(gone, vec![slot]);
    assert!(ContactBuffer::new(0, ContactChannel::A2O, 0, 1).is_err());
    assert!(b.insert(Point::new(f64::NAN, 0.0)).is_err());
}

#[test]
fn slot_survival_matches_geometric_law() {
    // 12 500 trials of 8 sentinel inserts into a full buffer of 8: 10^5
    // inserts in total.
    let (l, m, trials) = (8usize, 8i32, 12_500usize);
    let mut survived = vec![0usize; l];
    for t in 0..trials {
        let mut b = ContactBuffer::new(l, ContactChannel::A2O, 0, t as u64).unwrap();
        for i in 0..l {
            b.insert(Point::new(i as f64, 0.0)).unwrap();
        }
        for _ in 0..m {
            b.insert(Point::new(-1.0, -1.0)).unwrap();
        }
        for (i, s) in survived.iter_mut().enumerate() {
            if b.points()[i] == Point::new(i as f64, 0.0) {
                *s += 1;
            }
        }
    }
    let p = (1.0 - 1.0 / l as f64).powi(m);
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    for s in survived {
        let freq = s as f64 / trials as f64;
        assert!((freq - p).abs() < 3.0 * sigma, "{freq} vs {p} ± {sigma}");
    }
}

#[test]
fn dgt_edge_cases() {
    let cloud = random_cloud(16, 3).points;
    assert!(compute_dgt(&cloud, &[], 0.05, 1e-6).unwrap().iter().all(|&v| v == 0.0));

    let cloud = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
    let dgt = compute_dgt(&cloud, &[Point::new(1.01, 0.0)], 0.05, 1e-6).unwrap();
    assert_eq!(dgt, vec![0.0, 1.0 / (1.0 + 1e-6), 0.0]);

    assert!(compute_dgt(&[], &[], 0.05, 1e-6).is_err());
    assert!(compute_dgt(&cloud, &[], 0.0, 1e-6).is_err());
    assert!(compute_dgt(&cloud, &[], 0.05, 0.0).is_err());
}

#[test]
fn dgt_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cloud = random_cloud(64, 5).points;
    let contacts: Vec<Point> = (0..50)
        .map(|_| Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
        .collect();
    let got = compute_dgt(&cloud, &contacts, 0.1, 1e-6).unwrap();
    let want = brute_dgt(&cloud, &contacts, 0.1, 1e-6);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12);
    }
}

#[test]
fn fresh_predictor_scores_one_half() {
    let p = ContactPredictorParams::new(1);
    let map = cp_forward(&p, &random_cloud(40, 1)).unwrap();
    assert!(map.scores.iter().all(|&v| v == 0.5));
    assert!(cp_forward(&p, &random_cloud(0, 1)).is_err());
}

fn tanh_layer(x: &[f64], w: &Tensor, b: &Tensor, act: bool) -> Vec<f64> {
    (0..w.nrows())
        .map(|o| {
            let mut z = b[[0, o]];
            for (i, xi) in x.iter().enumerate() {
                z += w[[o, i]] * xi;
            }
            if act {
                z.tanh()
            } else {
                z
            }
        })
        .collect()
}

#[test]
fn forward_matches_hand_composition() {
    let p = random_params(4);
    let cloud = random_cloud(9, 2);
    let x = cloud_features(&cloud);
    let enc = &p.encoder.layers;
    let per_point: Vec<Vec<f64>> = (0..cloud.len())
        .map(|i| {
            let h = tanh_layer(&x.row(i).to_vec(), &enc[0].weight, &enc[0].bias, true);
            tanh_layer(&h, &enc[1].weight, &enc[1].bias, false)
        })
        .collect();
    let global: Vec<f64> = (0..64)
        .map(|j| per_point.iter().map(|f| f[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let head = &p.head.layers;
    let map = cp_forward(&p, &cloud).unwrap();
    for (i, f) in per_point.iter().enumerate() {
        let mut feat = f.clone();
        feat.extend(&global);
        assert_eq!(feat.len(), FEATURE_WIDTH);
        let h = tanh_layer(&feat, &head[0].weight, &head[0].bias, true);
        let out = tanh_layer(&h, &head[1].weight, &head[1].bias, false);
        for c in 0..NUM_CHANNELS {
            let want = 1.0 / (1.0 + (-out[c]).exp());
            assert!((map.scores[[i, c]] - want).abs() < 1e-12);
        }
    }
}

fn sample_targets(cloud: &PointCloud, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_fn((cloud.len(), NUM_CHANNELS), |_| rng.gen_range(0.0..1.0))
}

#[test]
fn zero_success_rates_leave_params_unchanged() {
    let mut p = random_params(2);
    let before = p.clone();
    let mut adam = AdamState::new(&p, AdamConfig::default());
    let cloud = random_cloud(20, 3);
    let dgt = sample_targets(&cloud, 1);
    let samples = [
        CpSample { cloud: &cloud, dgt: &dgt, success_rate: 0.0 },
        CpSample { cloud: &cloud, dgt: &dgt, success_rate: 0.0 },
    ];
    assert_eq!(cp_update(&mut p, &mut adam, &samples).unwrap(), None);
    assert_eq!(p, before);
    assert_eq!(adam.step, 0);
}

#[test]
fn zero_weight_objects_do_not_change_the_step() {
    let cloud_a = random_cloud(20, 3);
    let cloud_b = random_cloud(24, 4);
    let (ta, tb) = (sample_targets(&cloud_a, 1), sample_targets(&cloud_b, 2));
    let run = |with_b: bool| {
        let mut p = random_params(2);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let mut samples = vec![CpSample { cloud: &cloud_a, dgt: &ta, success_rate: 0.7 }];
        if with_b {
            samples.push(CpSample { cloud: &cloud_b, dgt: &tb, success_rate: 0.0 });
        }
        cp_update(&mut p, &mut adam, &samples).unwrap();
        p
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn matching_target_gives_zero_loss() {
    let mut p = random_params(6);
    let cloud = random_cloud(12, 6);
    let target = cp_forward(&p, &cloud).unwrap().scores;
    let before = p.clone();
    let mut adam = AdamState::new(&p, AdamConfig::default());
    let loss = cp_update(&mut p, &mut adam, &[CpSample { cloud: &cloud, dgt: &target, success_rate: 1.0 }])
        .unwrap()
        .unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(p, before);
}

fn plain_mse(p: &ContactPredictorParams, cloud: &PointCloud, dgt: &Tensor) -> f64 {
    let map = cp_forward(p, cloud).unwrap();
    let mut total = 0.0;
    for c in 0..NUM_CHANNELS {
        let mut s = 0.0;
        for i in 0..cloud.len() {
            s += (map.scores[[i, c]] - dgt[[i, c]]).powi(2);
        }
        total += s / cloud.len() as f64;
    }
    total
}

#[test]
fn loss_is_success_weighted_sum() {
    let p = random_params(8);
    let (a, b) = (random_cloud(10, 1), random_cloud(14, 2));
    let (ta, tb) = (sample_targets(&a, 3), sample_targets(&b, 4));
    let (loss, _) = cp_loss(
        &p,
        &[
            CpSample { cloud: &a, dgt: &ta, success_rate: 1.0 },
            CpSample { cloud: &b, dgt: &tb, success_rate: 0.5 },
        ],
    )
    .unwrap()
    .unwrap();
    let want = plain_mse(&p, &a, &ta) + 0.5 * plain_mse(&p, &b, &tb);
    assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
}

#[test]
fn predictor_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let p = random_params(seed);
        let (a, b) = (random_cloud(5, seed + 10), random_cloud(4, seed + 20));
        let (ta, tb) = (sample_targets(&a, seed), sample_targets(&b, seed + 1));
        let samples = [
            CpSample { cloud: &a, dgt: &ta, success_rate: 0.8 },
            CpSample { cloud: &b, dgt: &tb, success_rate: 0.3 },
        ];
        let (_, grads) = cp_loss(&p, &samples).unwrap().unwrap();
        let numeric = numeric_gradient(&p, 1e-6, |q| cp_loss(q, &samples).unwrap().unwrap().0);
        let err = max_relative_error(&grads, &numeric);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn loss_decreases_on_frozen_batch() {
    let mut p = random_params(9);
    let mut adam = AdamState::new(&p, AdamConfig { lr: 1e-4, ..AdamConfig::default() });
    let (a, b) = (random_cloud(32, 1), random_cloud(32, 2));
    let (ta, tb) = (sample_targets(&a, 3), sample_targets(&b, 4));
    let samples = [
        CpSample { cloud: &a, dgt: &ta, success_rate: 1.0 },
        CpSample { cloud: &b, dgt: &tb, success_rate: 0.25 },
    ];
    let first = cp_update(&mut p, &mut adam, &samples).unwrap().unwrap();
    for _ in 0..49 {
        cp_update(&mut p, &mut adam, &samples).unwrap();
    }
    let last = cp_loss(&p, &samples).unwrap().unwrap().0;
    assert!(last < first, "{last} !< {first}");
}

#[test]
fn nan_target_is_rejected_without_change() {
    let mut p = random_params(1);
    let before = p.clone();
    let mut adam = AdamState::new(&p, AdamConfig::default());
    let cloud = random_cloud(6, 1);
    let mut dgt = sample_targets(&cloud, 1);
    dgt[[2, 0]] = f64::NAN;
    let r = cp_update(&mut p, &mut adam, &[CpSample { cloud: &cloud, dgt: &dgt, success_rate: 1.0 }]);
    assert!(r.is_err());
    assert_eq!(p, before);
}

#[test]
fn max_point_rules() {
    let pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0)).collect();
    let mut map = AffordanceMap::uniform(5, 0.5);
    assert_eq!(max_affordance_point(&map, &pts, ContactChannel::A2O).unwrap().1, 0);
    map.scores[[3, 0]] = 0.7;
    assert_eq!(max_affordance_point(&map, &pts, ContactChannel::A2O).unwrap(), (pts[3], 3));
    assert_eq!(max_affordance_point(&map, &pts, ContactChannel::O2O).unwrap().1, 0);
    assert!(max_affordance_point(&AffordanceMap::uniform(0, 0.5), &[], ContactChannel::A2O).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dgt_is_rigid_invariant(seed in 0u64..10_000, angle in -3.0f64..3.0, tx in -1.0f64..1.0, ty in -1.0f64..1.0) {
        let cloud = random_cloud(30, seed).points;
        let contacts = random_cloud(40, seed + 1).points;
        let tf = RigidTransform::new(angle, Point::new(tx, ty));
        let a = compute_dgt(&cloud, &contacts, 0.15, 1e-6).unwrap();
        let moved: Vec<Point> = cloud.iter().map(|&p| tf.apply(p)).collect();
        let moved_c: Vec<Point> = contacts.iter().map(|&p| tf.apply(p)).collect();
        let b = compute_dgt(&moved, &moved_c, 0.15, 1e-6).unwrap();
        // Points exactly on the ball boundary could flip under rounding; the
        // random draws keep them away in practice.
        prop_assert_eq!(a, b);
    }

    #[test]
    fn buffer_never_exceeds_capacity(cap in 1usize..40, inserts in 0usize..200, seed in 0u64..1000) {
        let mut b = ContactBuffer::new(cap, ContactChannel::O2O, 0, seed).unwrap();
        for i in 0..inserts {
            b.insert(Point::new(i as f64, 0.0)).unwrap();
            prop_assert!(b.len() <= cap);
        }
        prop_assert_eq!(b.len(), inserts.min(cap));
    }

    #[test]
    fn predictor_is_permutation_equivariant(seed in 0u64..10_000) {
        let p = random_params(seed % 7);
        let cloud = random_cloud(17, seed);
        let mut order: Vec<usize> = (0..17).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = cp_forward(&p, &cloud).unwrap();
        let b = cp_forward(&p, &cloud.permuted(&order)).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(a.scores.row(i), b.scores.row(k));
        }
        prop_assert!(a.scores.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn max_point_survives_monotone_maps(seed in 0u64..10_000, shift in 0.001f64..5.0, scale in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64, 0.0)).collect();
        let scores = Tensor::from_shape_fn((20, 2), |_| rng.gen_range(0.0..1.0));
        let base = max_affordance_point(&AffordanceMap { scores: scores.clone() }, &pts, ContactChannel::A2O).unwrap();
        let shifted = AffordanceMap { scores: scores.mapv(|v| v + shift) };
        let warped = AffordanceMap { scores: scores.mapv(|v| (scale * v).exp()) };
        prop_assert_eq!(max_affordance_point(&shifted, &pts, ContactChannel::A2O).unwrap(), base);
        prop_assert_eq!(max_affordance_point(&warped, &pts, ContactChannel::A2O).unwrap(), base);
    }
}
