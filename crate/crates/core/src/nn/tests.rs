use ndarray::{array, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::{BatchNorm, Dense};
use super::*;

fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

/// Perturb every trainable parameter and evaluate central differences.
fn finite_difference(net: &Mlp<f64>, objective: impl Fn(&Mlp<f64>) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let base = net.params_flat();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params_flat(&p).unwrap();
            let up = objective(&probe);
            p[i] = base[i] - h;
            probe.set_params_flat(&p).unwrap();
            let down = objective(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], rel: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        let err = (a - n).abs();
        assert!(
            err <= rel * scale + 1e-9,
            "entry {i}: analytic {a} vs numeric {n} (err {err})"
        );
    }
}

/// Randomize batch-norm affine and running statistics so they are exercised.
fn perturb_norm(net: &mut Mlp<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        if let Some(bn) = &mut layer.norm {
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            bn.running_mean
                .mapv_inplace(|_| rng.random_range(-0.3..0.3));
            bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
    }
}

#[test]
fn init_biases_are_zero() {
    let net = Mlp::<f64>::init(MlpSpec::new(vec![2, 3, 1]), 11).unwrap();
    for layer in net.layers() {
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    let a = Mlp::<f32>::init(MlpSpec::new(vec![2, 3, 1]), 7).unwrap();
    let b = Mlp::<f32>::init(MlpSpec::new(vec![2, 3, 1]), 7).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = Mlp::<f32>::init(MlpSpec::new(vec![2, 3, 1]), 8).unwrap();
    assert_ne!(a.params_flat(), c.params_flat());
}

#[test]
fn init_respects_glorot_bound() {
    let net = Mlp::<f64>::init(MlpSpec::new(vec![30, 20, 5]), 3).unwrap();
    for layer in net.layers() {
        let (fi, fo) = layer.weight.dim();
        let limit = (6.0 / (fi + fo) as f64).sqrt();
        assert!(layer.weight.iter().all(|w| w.abs() <= limit));
    }
}

#[test]
fn parameter_count_matches_layer_arithmetic() {
    let spec = MlpSpec::new(vec![200, 64, 64, 64, 64, 10]);
    assert_eq!(spec.param_count(), 12_864 + 3 * 4_160 + 650);
    assert_eq!(spec.param_count(), 25_994);
    let net = Mlp::<f32>::init(spec, 0).unwrap();
    assert_eq!(net.params_flat().len(), 25_994);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(matches!(
        Mlp::<f64>::init(MlpSpec::new(vec![]), 0),
        Err(crate::Error::Config(_))
    ));
    assert!(Mlp::<f64>::init(MlpSpec::new(vec![3]), 0).is_err());
    assert!(Mlp::<f64>::init(MlpSpec::new(vec![3, 0, 1]), 0).is_err());
    assert!(Mlp::<f64>::init(MlpSpec::new(vec![3, 1]).with_slope(1.5), 0).is_err());
}

fn zero_net(sizes: Vec<usize>) -> Mlp<f64> {
    let mut net = Mlp::init(MlpSpec::new(sizes), 0).unwrap();
    let zeros = vec![0.0; net.param_count()];
    net.set_params_flat(&zeros).unwrap();
    net
}

#[test]
fn zero_network_outputs_zero() {
    let net = zero_net(vec![2, 4, 1]);
    let out = net.forward(array![[1.0, 2.0]].view(), Mode::Eval).unwrap();
    assert_eq!(out[[0, 0]], 0.0);
}

#[test]
fn leaky_unit_scales_negative_input() {
    // One hidden unit with weight 1, identity readout.
    let layers = vec![
        Dense {
            weight: array![[1.0]],
            bias: array![0.0],
            norm: None,
        },
        Dense {
            weight: array![[1.0]],
            bias: array![0.0],
            norm: None,
        },
    ];
    let net = Mlp::<f64>::from_layers(MlpSpec::new(vec![1, 1, 1]), layers).unwrap();
    let out = net.forward(array![[-1.0]].view(), Mode::Eval).unwrap();
    assert!((out[[0, 0]] + 0.2).abs() < 1e-15);
}

#[test]
fn sigmoid_output_at_zero_is_half() {
    let mut net = zero_net(vec![3, 2, 1]);
    net = Mlp::from_layers(
        net.spec().clone().with_output(OutputActivation::Sigmoid),
        net.layers().to_vec(),
    )
    .unwrap();
    let out = net
        .forward(array![[0.3, -2.0, 5.0]].view(), Mode::Eval)
        .unwrap();
    assert_eq!(out[[0, 0]], 0.5);
}

#[test]
fn width_mismatch_is_a_shape_error() {
    let net = Mlp::<f64>::init(MlpSpec::new(vec![3, 2, 1]), 0).unwrap();
    let err = net
        .forward(Array2::zeros((4, 2)).view(), Mode::Eval)
        .unwrap_err();
    assert!(matches!(err, crate::Error::Shape(_)));
}

#[test]
fn zero_network_bias_gradient_is_zero() {
    let net = zero_net(vec![2, 3, 2]);
    let x = random_batch(5, 2, 1);
    let tape = net.forward_tape(x.view(), Mode::Train).unwrap();
    let d_out = tape.output().mapv(|o| 2.0 * o);
    let mut grads = net.zero_grads();
    net.backward(&tape, d_out.view(), Some(&mut grads)).unwrap();
    assert!(grads.layers.last().unwrap().bias.iter().all(|&g| g == 0.0));
}

fn squared_output(net: &Mlp<f64>, x: &Array2<f64>, mode: Mode) -> f64 {
    net.forward(x.view(), mode).unwrap().mapv(|o| o * o).sum() / x.nrows() as f64
}

fn check_param_gradient(spec: MlpSpec, mode: Mode, seed: u64) {
    let mut net = Mlp::<f64>::init(spec, seed).unwrap();
    perturb_norm(&mut net, seed + 100);
    assert!(net.param_count() <= 50, "{} params", net.param_count());
    let x = random_batch(6, net.input_dim(), seed + 200);
    let tape = net.forward_tape(x.view(), mode).unwrap();
    let d_out = tape.output().mapv(|o| 2.0 * o / x.nrows() as f64);
    let mut grads = net.zero_grads();
    net.backward(&tape, d_out.view(), Some(&mut grads)).unwrap();
    let numeric = finite_difference(&net, |n| squared_output(n, &x, mode));
    assert_close(&grads.flat(), &numeric, 1e-6);
}

#[test]
fn param_gradients_match_finite_differences() {
    check_param_gradient(MlpSpec::new(vec![2, 4, 3, 1]), Mode::Train, 1);
    check_param_gradient(
        MlpSpec::new(vec![3, 4, 2]).with_output(OutputActivation::Sigmoid),
        Mode::Eval,
        2,
    );
}

#[test]
fn batch_norm_param_gradients_match_finite_differences() {
    let spec = MlpSpec::new(vec![2, 4, 3, 1]).with_batch_norm(true);
    check_param_gradient(spec.clone(), Mode::Train, 3);
    check_param_gradient(spec, Mode::Eval, 4);
}

#[test]
fn backward_input_gradient_matches_finite_differences() {
    let mut net = Mlp::<f64>::init(MlpSpec::new(vec![3, 5, 2]).with_batch_norm(true), 9).unwrap();
    perturb_norm(&mut net, 10);
    let x = random_batch(4, 3, 11);
    for mode in [Mode::Train, Mode::Eval] {
        let tape = net.forward_tape(x.view(), mode).unwrap();
        let d_out = tape.output().mapv(|o| 2.0 * o);
        let d_in = net.backward(&tape, d_out.view(), None).unwrap();
        let h = 1e-5;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut up = x.clone();
                up[[i, j]] += h;
                let mut down = x.clone();
                down[[i, j]] -= h;
                let f =
                    |b: &Array2<f64>| net.forward(b.view(), mode).unwrap().mapv(|o| o * o).sum();
                let numeric = (f(&up) - f(&down)) / (2.0 * h);
                assert_close(&[d_in[[i, j]]], &[numeric], 1e-6);
            }
        }
    }
}

fn linear_critic(w: &[f64]) -> Mlp<f64> {
    let layers = vec![Dense {
        weight: Array2::from_shape_vec((w.len(), 1), w.to_vec()).unwrap(),
        bias: array![0.0],
        norm: None,
    }];
    Mlp::from_layers(MlpSpec::new(vec![w.len(), 1]), layers).unwrap()
}

#[test]
fn linear_critic_input_gradient_is_weight() {
    let w = [0.3, -1.2, 0.7];
    let net = linear_critic(&w);
    let grad = net.input_gradient(random_batch(5, 3, 2).view()).unwrap();
    for row in grad.outer_iter() {
        assert_eq!(row.to_vec(), w.to_vec());
    }
}

#[test]
fn positive_leaky_unit_input_gradient_is_weight() {
    let layers = vec![
        Dense {
            weight: array![[0.8]],
            bias: array![0.0],
            norm: None,
        },
        Dense {
            weight: array![[1.0]],
            bias: array![0.0],
            norm: None,
        },
    ];
    let net = Mlp::<f64>::from_layers(MlpSpec::new(vec![1, 1, 1]), layers).unwrap();
    let grad = net.input_gradient(array![[0.5], [2.0]].view()).unwrap();
    assert!(grad.iter().all(|&g| (g - 0.8).abs() < 1e-15));
}

#[test]
fn input_gradient_requires_scalar_output() {
    let net = Mlp::<f64>::init(MlpSpec::new(vec![3, 2]), 0).unwrap();
    assert!(matches!(
        net.input_gradient(random_batch(2, 3, 0).view()),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut net =
        Mlp::<f64>::init(MlpSpec::new(vec![4, 6, 5, 1]).with_batch_norm(true), 21).unwrap();
    perturb_norm(&mut net, 22);
    let x = random_batch(5, 4, 23);
    let grad = net.input_gradient(x.view()).unwrap();
    let h = 1e-5;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut up = x.clone();
            up[[i, j]] += h;
            let mut down = x.clone();
            down[[i, j]] -= h;
            let f = |b: &Array2<f64>| net.forward(b.view(), Mode::Eval).unwrap()[[i, 0]];
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            assert_close(&[grad[[i, j]]], &[numeric], 1e-6);
        }
    }
}

#[test]
fn penalty_gradient_on_linear_critic_is_closed_form() {
    let w = [0.6, -0.9, 1.3];
    let net = linear_critic(&w);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut grads = net.zero_grads();
    let penalty = net
        .gradient_penalty(random_batch(4, 3, 5).view(), 1.0, Some(&mut grads))
        .unwrap();
    assert!((penalty - (norm - 1.0).powi(2)).abs() < 1e-14);
    for (g, wi) in grads.layers[0].weight.iter().zip(w) {
        let expected = 2.0 * (norm - 1.0) * wi / norm;
        assert!((g - expected).abs() < 1e-14, "{g} vs {expected}");
    }
    assert_eq!(grads.layers[0].bias[0], 0.0);
}

#[test]
fn unit_norm_linear_critic_has_zero_penalty() {
    let net = linear_critic(&[0.6, 0.8]);
    let p = net
        .gradient_penalty(random_batch(7, 2, 1).view(), 1.0, None)
        .unwrap();
    assert!(p.abs() < 1e-15);
}

fn check_penalty_gradient(spec: MlpSpec, seed: u64) {
    let mut net = Mlp::<f64>::init(spec, seed).unwrap();
    perturb_norm(&mut net, seed + 1);
    assert!(net.param_count() <= 50, "{} params", net.param_count());
    let x = random_batch(5, net.input_dim(), seed + 2);
    let scale = 10.0;
    let mut grads = net.zero_grads();
    net.gradient_penalty(x.view(), scale, Some(&mut grads))
        .unwrap();
    let numeric = finite_difference(&net, |n| {
        scale * n.gradient_penalty(x.view(), 1.0, None).unwrap()
    });
    assert_close(&grads.flat(), &numeric, 1e-6);
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    check_penalty_gradient(MlpSpec::new(vec![3, 4, 3, 1]), 31);
    check_penalty_gradient(MlpSpec::new(vec![2, 5, 4, 1]), 32);
}

#[test]
fn penalty_gradient_with_batch_norm_matches_finite_differences() {
    check_penalty_gradient(MlpSpec::new(vec![3, 4, 3, 1]).with_batch_norm(true), 41);
}

#[test]
fn penalty_is_nonnegative_and_rejects_empty_batch() {
    let net = Mlp::<f64>::init(MlpSpec::new(vec![3, 4, 1]), 5).unwrap();
    for seed in 0..5 {
        let p = net
            .gradient_penalty(random_batch(3, 3, seed).view(), 1.0, None)
            .unwrap();
        assert!(p >= 0.0);
    }
    assert!(matches!(
        net.gradient_penalty(Array2::zeros((0, 3)).view(), 1.0, None),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn batch_norm_train_mode_standardizes_features() {
    let mut net = Mlp::<f64>::init(MlpSpec::new(vec![3, 6, 1]).with_batch_norm(true), 2).unwrap();
    perturb_norm(&mut net, 3);
    // Scale inputs so every batch variance is far above the epsilon floor.
    let x = random_batch(64, 3, 4) * 40.0;
    let tape = net.forward_tape(x.view(), Mode::Train).unwrap();
    let layer = &tape.layers[0];
    let xhat = &layer.norm.as_ref().unwrap().xhat;
    let batch_var = &layer.norm.as_ref().unwrap().batch_var;
    assert!(batch_var.iter().all(|&v| v > 10.0));
    let mean = xhat.mean_axis(Axis(0)).unwrap();
    let var = xhat.mapv(|v| v * v).mean_axis(Axis(0)).unwrap() - mean.mapv(|m| m * m);
    assert!(mean.iter().all(|m| m.abs() < 1e-6));
    assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-6), "{var}");
}

#[test]
fn running_stats_follow_batch_stats() {
    let mut net = Mlp::<f64>::init(MlpSpec::new(vec![2, 3, 1]).with_batch_norm(true), 2).unwrap();
    let x = random_batch(16, 2, 5) + 3.0;
    let tape = net.forward_tape(x.view(), Mode::Train).unwrap();
    net.update_running_stats(&tape);
    let nc = tape.layers[0].norm.as_ref().unwrap();
    let bn = net.layers()[0].norm.as_ref().unwrap();
    for k in 0..3 {
        let expect_mean = (1.0 - BN_MOMENTUM) * nc.batch_mean[k];
        let expect_var = BN_MOMENTUM + (1.0 - BN_MOMENTUM) * nc.batch_var[k];
        assert!((bn.running_mean[k] - expect_mean).abs() < 1e-12);
        assert!((bn.running_var[k] - expect_var).abs() < 1e-12);
        assert!(bn.running_var[k] >= 0.0);
    }
}

#[test]
fn eval_forward_is_pure() {
    let mut net = Mlp::<f64>::init(MlpSpec::new(vec![2, 3, 1]).with_batch_norm(true), 2).unwrap();
    perturb_norm(&mut net, 1);
    let x = random_batch(5, 2, 6);
    let a = net.forward(x.view(), Mode::Eval).unwrap();
    let _ = net
        .forward(random_batch(9, 2, 7).view(), Mode::Train)
        .unwrap();
    let b = net.forward(x.view(), Mode::Eval).unwrap();
    assert_eq!(a, b);
    // Row-wise evaluation equals batched evaluation in eval mode.
    for (i, row) in x.outer_iter().enumerate() {
        let single = net.forward(row.insert_axis(Axis(0)), Mode::Eval).unwrap();
        assert_eq!(single[[0, 0]], a[[i, 0]]);
    }
}

fn scalar_net(value: f64) -> Mlp<f64> {
    Mlp::from_layers(
        MlpSpec::new(vec![1, 1]),
        vec![Dense {
            weight: array![[value]],
            bias: array![0.0],
            norm: None,
        }],
    )
    .unwrap()
}

fn scalar_grads(net: &Mlp<f64>, g: f64) -> Grads<f64> {
    let mut grads = net.zero_grads();
    grads.layers[0].weight[[0, 0]] = g;
    grads
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut net = Mlp::<f64>::init(MlpSpec::new(vec![3, 4, 1]), 1).unwrap();
    let before = net.params_flat();
    let mut adam = AdamState::new(&net, AdamConfig::default());
    let zeros = net.zero_grads();
    adam.step(&mut net, &zeros).unwrap();
    assert_eq!(net.params_flat(), before);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    for g in [3.0, -0.02] {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(0.01));
        let grads = scalar_grads(&net, g);
        adam.step(&mut net, &grads).unwrap();
        let moved = net.layers()[0].weight[[0, 0]] - 1.0;
        assert!((moved + 0.01 * g.signum()).abs() < 1e-8, "{moved}");
    }
}

#[test]
fn adam_matches_scalar_recurrence() {
    let config = AdamConfig::with_lr(0.1);
    let mut net = scalar_net(0.5);
    let mut adam = AdamState::new(&net, config);
    let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.5f64);
    for t in 1..=5 {
        let grads = scalar_grads(&net, 1.0);
        adam.step(&mut net, &grads).unwrap();
        m = 0.9 * m + 0.1;
        v = 0.999 * v + 0.001;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        theta -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((net.layers()[0].weight[[0, 0]] - theta).abs() < 1e-12);
        assert!(adam.second_moments()[0][0] >= 0.0);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let mut net =
            Mlp::<f32>::init(MlpSpec::new(vec![3, 8, 8, 1]).with_batch_norm(true), 5).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::with_lr(1e-2));
        for step in 0..20 {
            let x = random_batch(8, 3, step).mapv(|v| v as f32);
            let tape = net.forward_tape(x.view(), Mode::Train).unwrap();
            let d = tape.output().mapv(|o| 2.0 * (o - 1.0) / 8.0);
            let mut grads = net.zero_grads();
            net.backward(&tape, d.view(), Some(&mut grads)).unwrap();
            net.update_running_stats(&tape);
            adam.step(&mut net, &grads).unwrap();
        }
        net.to_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn persistence_round_trips_exactly() {
    let mut net = Mlp::<f64>::init(
        MlpSpec::new(vec![4, 5, 3, 1])
            .with_batch_norm(true)
            .with_output(OutputActivation::Sigmoid),
        3,
    )
    .unwrap();
    perturb_norm(&mut net, 4);
    let bytes = net.to_bytes();
    let back = Mlp::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn persistence_rejects_bad_input() {
    let net = Mlp::<f32>::init(MlpSpec::new(vec![2, 3, 1]), 0).unwrap();
    let bytes = net.to_bytes();
    let err = Mlp::<f32>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(matches!(err, crate::Error::Format(_)), "{err}");
    assert!(
        Mlp::<f64>::from_bytes(&bytes).is_err(),
        "dtype mismatch must fail"
    );
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Mlp::<f32>::from_bytes(&bad).is_err());
}

#[test]
fn from_layers_rejects_negative_running_variance() {
    let spec = MlpSpec::new(vec![2, 2, 1]).with_batch_norm(true);
    let mut bn = BatchNorm {
        gamma: Array1::ones(2),
        beta: Array1::zeros(2),
        running_mean: Array1::zeros(2),
        running_var: Array1::ones(2),
    };
    bn.running_var[1] = -1.0;
    let layers = vec![
        Dense {
            weight: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
            norm: Some(bn),
        },
        Dense {
            weight: Array2::zeros((2, 1)),
            bias: Array1::zeros(1),
            norm: None,
        },
    ];
    assert!(Mlp::from_layers(spec, layers).is_err());
}
