//! Small differentiable-computation kernel: dense layers, set max-pooling,
//! squared-error losses and an Adam optimizer, with exact reverse-mode
//! gradients. Everything is `f64` and evaluated in a fixed order.

mod adam;
mod graph;
mod mlp;
mod serialize;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use graph::{maxpool_set, sigmoid, Gradients, Graph, Tensor, Var};
pub use mlp::{mlp_forward, Dense, FinalActivation, MlpParams, MlpVars, ParamSet};
pub use serialize::{read_tensors, write_tensors};

/// Central finite-difference gradient of `loss` with respect to every entry
/// of `params`. Only calls the forward function, so it serves as an
/// independent check on [`Graph::backward`].
pub fn numeric_gradient<P, F>(params: &P, h: f64, mut loss: F) -> Vec<Tensor>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.dim()).collect();
    let mut out: Vec<Tensor> = shapes.iter().map(|&s| Tensor::zeros(s)).collect();
    let mut probe = params.clone();
    for (ti, &(rows, cols)) in shapes.iter().enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.tensors()[ti][[r, c]];
                probe.tensors_mut()[ti][[r, c]] = orig + h;
                let up = loss(&probe);
                probe.tensors_mut()[ti][[r, c]] = orig - h;
                let down = loss(&probe);
                probe.tensors_mut()[ti][[r, c]] = orig;
                out[ti][[r, c]] = (up - down) / (2.0 * h);
            }
        }
    }
    out
}

/// Largest mixed relative error between two gradient lists:
/// `|a - b| / max(1, |a|, |b|)`.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(&x, &y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_mlp_outputs_zero_or_half() {
        let x = array![[0.3, -1.2, 4.0], [2.0, 0.0, -0.5]];
        let id = MlpParams::zeros(&[3, 5, 2], FinalActivation::Identity);
        assert!(mlp_forward(&id, &x).unwrap().iter().all(|&v| v == 0.0));
        let sig = MlpParams::zeros(&[3, 5, 2], FinalActivation::Sigmoid);
        assert!(mlp_forward(&sig, &x).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mlp_matches_hand_matrix_chain() {
        let mut params = MlpParams::new(&[3, 4, 2], FinalActivation::Identity, &mut rng(3));
        params.layers[0].bias = array![[0.1, -0.2, 0.3, 0.05]];
        params.layers[1].bias = array![[-0.4, 0.7]];
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let out = mlp_forward(&params, &x).unwrap();
        for b in 0..2 {
            let mut hidden = [0.0; 4];
            for (o, h) in hidden.iter_mut().enumerate() {
                let mut z = params.layers[0].bias[[0, o]];
                for i in 0..3 {
                    z += params.layers[0].weight[[o, i]] * x[[b, i]];
                }
                *h = z.tanh();
            }
            for o in 0..2 {
                let mut z = params.layers[1].bias[[0, o]];
                for (i, h) in hidden.iter().enumerate() {
                    z += params.layers[1].weight[[o, i]] * h;
                }
                assert!((out[[b, o]] - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let params = MlpParams::zeros(&[3, 2], FinalActivation::Identity);
        let err = mlp_forward(&params, &Tensor::zeros((1, 4))).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn sum_of_parameters_has_unit_gradient() {
        let params = MlpParams::new(&[2, 3], FinalActivation::Identity, &mut rng(1));
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let mut total = None;
        for v in vars.vars() {
            let s = g.sum(v);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s).unwrap(),
            });
        }
        let grads = g.backward(total.unwrap()).unwrap();
        for grad in vars.grads(&g, &grads) {
            assert!(grad.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn quadratic_loss_matches_closed_form() {
        let w = array![[0.5, -1.0, 0.25], [2.0, 0.1, -0.3]];
        let x = array![[1.0, 2.0, -1.0]];
        let y = array![[0.3, -0.2]];
        let mut g = Graph::new();
        let wv = g.leaf(w.clone());
        let xv = g.leaf(x.clone());
        let yv = g.leaf(y.clone());
        let pred = g.matmul_t(xv, wv).unwrap();
        let diff = g.sub(pred, yv).unwrap();
        let sq = g.square(diff);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let residual = x.dot(&w.t()) - &y;
        let expected = residual.t().dot(&x) * 2.0;
        let got = grads.get(wv).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros((2, 2)));
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(crate::Error::Contract(_))));
    }

    /// Two-stage set network exercising every graph op: per-point MLP,
    /// max-pool, repeat, concat, sigmoid head, weighted squared error.
    #[derive(Clone)]
    struct SetNet {
        point: MlpParams,
        head: MlpParams,
    }

    impl ParamSet for SetNet {
        fn tensors(&self) -> Vec<&Tensor> {
            let mut t = self.point.tensors();
            t.extend(self.head.tensors());
            t
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            let mut t = self.point.tensors_mut();
            t.extend(self.head.tensors_mut());
            t
        }
    }

    fn set_net_loss(net: &SetNet, x: &Tensor, target: &Tensor, set: usize) -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let pv = net.point.bind(&mut g);
        let hv = net.head.bind(&mut g);
        let xv = g.leaf(x.clone());
        let tv = g.leaf(target.clone());
        let local = pv.forward(&mut g, xv).unwrap();
        let pooled = g.maxpool_sets(local, set).unwrap();
        let global = g.repeat_rows(pooled, set).unwrap();
        let feat = g.concat_cols(local, global).unwrap();
        let out = hv.forward(&mut g, feat).unwrap();
        let diff = g.sub(out, tv).unwrap();
        let sq = g.square(diff);
        let weighted = g.scale(sq, 0.7);
        let loss = g.mean(weighted);
        let grads = g.backward(loss).unwrap();
        let mut all = pv.grads(&g, &grads);
        all.extend(hv.grads(&g, &grads));
        (g.value(loss)[[0, 0]], all)
    }

    #[test]
    fn gradients_match_finite_differences_on_random_set_nets() {
        for seed in 0..20u64 {
            let mut r = rng(100 + seed);
            let in_dim = 2 + (seed as usize % 3);
            let hidden = 3 + (seed as usize % 4);
            let feat = 4;
            let set = 3 + (seed as usize % 3);
            let net = SetNet {
                point: MlpParams::new(&[in_dim, hidden, feat], FinalActivation::Identity, &mut r),
                head: MlpParams::new(&[2 * feat, 5, 2], FinalActivation::Sigmoid, &mut r),
            };
            let rows = set * 2;
            let x = Tensor::from_shape_fn((rows, in_dim), |_| rand::Rng::gen_range(&mut r, -1.0..1.0));
            let t = Tensor::from_shape_fn((rows, 2), |_| rand::Rng::gen_range(&mut r, 0.0..1.0));
            let (_, analytic) = set_net_loss(&net, &x, &t, set);
            let numeric = numeric_gradient(&net, 1e-6, |p| set_net_loss(p, &x, &t, set).0);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-5, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn maxpool_singleton_and_scan() {
        let single = array![[0.3, -2.0, 5.0]];
        let (pooled, idx) = maxpool_set(&single).unwrap();
        assert_eq!(pooled, single);
        assert_eq!(idx, vec![0, 0, 0]);

        let mut r = rng(9);
        let m = Tensor::from_shape_fn((5, 3), |_| rand::Rng::gen_range(&mut r, -1.0..1.0));
        let (pooled, idx) = maxpool_set(&m).unwrap();
        for j in 0..3 {
            let mut best = f64::NEG_INFINITY;
            let mut at = 0;
            for i in 0..5 {
                if m[[i, j]] > best {
                    best = m[[i, j]];
                    at = i;
                }
            }
            assert_eq!(pooled[[0, j]], best);
            assert_eq!(idx[j], at);
        }
    }

    #[test]
    fn maxpool_ties_pick_lowest_index_and_rejects_empty() {
        let m = array![[1.0, 2.0], [1.0, 2.0], [0.0, 2.0]];
        assert_eq!(maxpool_set(&m).unwrap().1, vec![0, 0]);
        assert!(matches!(
            maxpool_set(&Tensor::zeros((0, 3))),
            Err(crate::Error::Empty(_))
        ));
    }

    proptest! {
        #[test]
        fn maxpool_is_permutation_invariant(
            values in proptest::collection::vec(-10.0f64..10.0, 4 * 6),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let m = Tensor::from_shape_vec((6, 4), values).unwrap();
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut rng(perm_seed));
            let permuted = m.select(ndarray::Axis(0), &order);
            prop_assert_eq!(maxpool_set(&m).unwrap().0, maxpool_set(&permuted).unwrap().0);
        }

        #[test]
        fn sigmoid_final_stays_inside_unit_interval(
            x in proptest::collection::vec(-1e6f64..1e6, 3),
            seed in any::<u64>(),
        ) {
            let params = MlpParams::new(&[3, 4, 2], FinalActivation::Sigmoid, &mut rng(seed));
            let input = Tensor::from_shape_vec((1, 3), x).unwrap();
            let out = mlp_forward(&params, &input).unwrap();
            prop_assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn tensor_stream_round_trips(
            a in proptest::collection::vec(any::<f64>(), 6),
            b in proptest::collection::vec(-1e3f64..1e3, 4),
        ) {
            let ta = Tensor::from_shape_vec((2, 3), a).unwrap();
            let tb = Tensor::from_shape_vec((1, 4), b).unwrap();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &[&ta, &tb]).unwrap();
            let back = read_tensors(&mut std::io::Cursor::new(buf)).unwrap();
            prop_assert_eq!(back.len(), 2);
            for (x, y) in back[0].iter().zip(ta.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(&back[1], &tb);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut params = MlpParams::new(&[2, 2], FinalActivation::Identity, &mut rng(4));
        let before = params.clone();
        let mut state = AdamState::new(&params, AdamConfig::default());
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.dim())).collect();
        adam_step(&mut params, &zeros, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = MlpParams::zeros(&[1, 1], FinalActivation::Identity);
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        let grads = vec![array![[2.5]], array![[-4.0]]];
        adam_step(&mut params, &grads, &mut state).unwrap();
        let w = params.layers[0].weight[[0, 0]];
        let b = params.layers[0].bias[[0, 0]];
        assert!((w + 0.01).abs() < 1e-8, "{w}");
        assert!((b - 0.01).abs() < 1e-8, "{b}");
    }

    #[test]
    fn adam_descends_quadratic_like_hand_stepped_oracle() {
        let mut params = MlpParams::zeros(&[1, 1], FinalActivation::Identity);
        params.layers[0].weight[[0, 0]] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut prev = 1.0f64;
        for t in 1..=10 {
            let gx = 2.0 * params.layers[0].weight[[0, 0]];
            adam_step(&mut params, &[array![[gx]], array![[0.0]]], &mut state).unwrap();
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            let got = params.layers[0].weight[[0, 0]];
            assert!((got - x).abs() < 1e-12);
            assert!(got.abs() < prev);
            prev = got.abs();
        }
    }

    #[test]
    fn adam_rejects_nan_and_leaves_params() {
        let mut params = MlpParams::new(&[2, 2], FinalActivation::Identity, &mut rng(5));
        let before = params.clone();
        let mut state = AdamState::new(&params, AdamConfig::default());
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::ones(t.dim())).collect();
        grads[1][[0, 1]] = f64::NAN;
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state),
            Err(crate::Error::NonFinite(_))
        ));
        assert_eq!(params, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut grads = vec![array![[3.0, 4.0]]];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_eq!(norm, 5.0);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-12);
    }
}
