mod common;

use common::*;
use genrom::neural::{adam_step, Activation, Adam, DenseNetwork, Gradients};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

#[test]
fn every_activation_matches_finite_differences() {
    for act in [Activation::Tanh, Activation::Relu, Activation::Linear, Activation::Softplus] {
        for seed in 0..5 {
            let gap = activation_gradient_gap(act, seed);
            assert!(gap <= TOL, "{act:?} seed {seed}: {gap:.2e}");
        }
    }
}

#[test]
fn cvae_gradients_match_finite_differences() {
    for seed in 0..4 {
        let (enc, dec) = elbo_gradient_gaps(seed);
        assert!(enc <= TOL && dec <= TOL, "seed {seed}: encoder {enc:.2e}, decoder {dec:.2e}");
        let aug = augmented_gradient_gap(seed, 0.7);
        assert!(aug <= TOL, "seed {seed}: augmented {aug:.2e}");
    }
}

#[test]
fn inference_head_gradients_match_finite_differences() {
    for seed in 0..4 {
        let (s, m, d) = heads_gradient_gaps(seed);
        assert!(s <= TOL && m <= TOL && d <= TOL, "seed {seed}: {s:.2e} {m:.2e} {d:.2e}");
    }
}

#[test]
fn two_adam_steps_follow_the_moment_recursion() {
    let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
    let g1 = [0.3, -2.0, 1e-3, 0.0];
    let g2 = [-0.1, 0.5, 4.0, 1.0];
    let mut p = vec![1.0, -1.0, 0.5, 2.0];
    let mut expected = p.clone();
    let mut adam = Adam::new(4, lr);
    adam.update(&mut p, &g1);
    adam.update(&mut p, &g2);
    for i in 0..4 {
        let m1 = (1.0 - b1) * g1[i];
        let v1 = (1.0 - b2) * g1[i] * g1[i];
        expected[i] -= lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g2[i];
        let v2 = b2 * v1 + (1.0 - b2) * g2[i] * g2[i];
        expected[i] -= lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p[i] - expected[i]).abs() <= 1e-12, "parameter {i}");
    }
    assert_eq!(adam.step, 2);
}

#[test]
fn adam_step_updates_several_networks_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut a = DenseNetwork::new(&[2, 3], &[Activation::Tanh], &mut rng).unwrap();
    let mut b = DenseNetwork::new(&[3, 1], &[Activation::Linear], &mut rng).unwrap();
    let (a0, b0) = (a.params_flat(), b.params_flat());
    let mut ga = Gradients::zeros_like(&a);
    let gb = Gradients::zeros_like(&b);
    ga.w[0][(1, 0)] = 5.0;
    let mut adam = Adam::new(a.n_params() + b.n_params(), 0.1);
    adam_step(&mut adam, &mut [&mut a, &mut b], &[&ga, &gb]);
    assert_eq!(b.params_flat(), b0);
    let moved: Vec<usize> = (0..a0.len()).filter(|&i| a.params_flat()[i] != a0[i]).collect();
    assert_eq!(moved.len(), 1);
    assert!((a0[moved[0]] - a.params_flat()[moved[0]] - 0.1).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn first_adam_step_is_signed_learning_rate(g in prop::collection::vec(-1e3f64..1e3, 1..20), lr in 1e-5f64..1.0) {
        let mut p = vec![0.0; g.len()];
        Adam::new(g.len(), lr).update(&mut p, &g);
        for (pi, gi) in p.iter().zip(&g) {
            prop_assert!((pi + lr * gi / (gi.abs() + 1e-8)).abs() <= 1e-15 * lr);
            // The ε term shifts the step by lr·ε/|g|.
            if gi.abs() >= 100.0 * lr {
                prop_assert!((pi + lr * gi.signum()).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn random_tanh_networks_have_exact_gradients(seed in any::<u64>()) {
        prop_assert!(activation_gradient_gap(Activation::Tanh, seed) <= TOL);
    }
}
