//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermoguard::activation::Activation;
use thermoguard::cnnmodel::{CnnConfig, CnnModel};
use thermoguard::linmodel::{LinearConfig, LinearModel, LossKind};
use thermoguard::rnnmodel::{RnnConfig, RnnModel};
use thermoguard::tensor::Matrix;
use thermoguard::train::{LinearRegressor, Trainable};

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// turning round-off into a large ratio.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Worst relative error of `loss_gradient` over every parameter of `model`.
fn check_trainable<M: Trainable>(model: &M, windows: &[&[f64]], targets: &[&[f64]], h: f64) -> f64 {
    let (_, grads) = model.loss_gradient(windows, targets, 0).unwrap();
    let mut worst: f64 = 0.0;
    let n_tensors = model.parameters().len();
    for ti in 0..n_tensors {
        let len = model.parameters()[ti].len();
        for i in 0..len {
            let mut plus = model.clone();
            plus.parameters_mut()[ti].data[i] += h;
            let mut minus = model.clone();
            minus.parameters_mut()[ti].data[i] -= h;
            let lp = plus.loss_gradient(windows, targets, 0).unwrap().0;
            let lm = minus.loss_gradient(windows, targets, 0).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            worst = worst.max(rel_err(grads.tensors[ti].data[i], numeric, 1e-4));
        }
    }
    worst
}

#[test]
fn linear_gradients_match_finite_differences_for_every_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, p) = (40, 6);
    let rows = random_rows(&mut rng, n, p);
    let x = Matrix::from_rows(&rows).unwrap();
    for loss in [LossKind::Squared, LossKind::EpsilonInsensitive, LossKind::Huber] {
        // l1_ratio 0 keeps the penalty smooth.
        let config = LinearConfig { loss, epsilon: 0.1, delta: 0.5, alpha: 0.05, l1_ratio: 0.0 };
        let model = LinearModel {
            beta: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
            beta0: 0.2,
            config: config.clone(),
        };
        let h = 1e-6;
        // Targets placed so that no residual sits within 1e-3 of a kink.
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let mut off: f64 = rng.random_range(-2.0..2.0);
                while [0.0, 0.1, 0.5].iter().any(|k| (off.abs() - k).abs() < 1e-3) {
                    off = rng.random_range(-2.0..2.0);
                }
                model.predict_row(r) + off
            })
            .collect();
        let reg = LinearRegressor::from_models(&[model.clone()]).unwrap();
        let windows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let tcols: Vec<[f64; 1]> = y.iter().map(|v| [*v]).collect();
        let targets: Vec<&[f64]> = tcols.iter().map(|t| t.as_slice()).collect();
        let (_, grads) = reg.loss_gradient(&windows, &targets, 0).unwrap();

        let objective = |m: &LinearModel| m.objective(&x, &y).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=p {
            let mut plus = model.clone();
            let mut minus = model.clone();
            if i < p {
                plus.beta[i] += h;
                minus.beta[i] -= h;
            } else {
                plus.beta0 += h;
                minus.beta0 -= h;
            }
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let analytic = if i < p { grads.tensors[0].data[i] } else { grads.tensors[1].data[0] };
            worst = worst.max(rel_err(analytic, numeric, 1e-4));
        }
        assert!(worst < 1e-6, "{loss:?}: worst relative error {worst:e}");
    }
}

#[test]
fn cnn_gradients_match_finite_differences() {
    let config = CnnConfig {
        n_filter: vec![3, 2],
        s_filter: vec![2, 3],
        dilation: vec![2, 1],
        dropout: vec![0.0, 0.0],
        seq_len: 8,
        n_inputs: 3,
        n_outputs: 2,
        activation: Activation::Tanh,
    };
    let model = CnnModel::init(config, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let windows = random_rows(&mut rng, 4, 8 * 3);
    let targets = random_rows(&mut rng, 4, 2);
    let w: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
    let t: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let worst = check_trainable(&model, &w, &t, 1e-5);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn cnn_relu_gradients_match_away_from_kinks() {
    let config = CnnConfig {
        n_filter: vec![4],
        s_filter: vec![2],
        dilation: vec![1],
        dropout: vec![0.0],
        seq_len: 5,
        n_inputs: 2,
        n_outputs: 1,
        activation: Activation::Relu,
    };
    let model = CnnModel::init(config, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let windows = random_rows(&mut rng, 3, 10);
    for w in &windows {
        for layer in model.layer_preactivations(w).unwrap() {
            assert!(layer.iter().all(|z| z.abs() > 1e-4), "preactivation too close to the kink");
        }
    }
    let targets = random_rows(&mut rng, 3, 1);
    let w: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
    let t: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let worst = check_trainable(&model, &w, &t, 1e-6);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let config = RnnConfig {
        neurons: vec![3, 2],
        dropout: vec![0.0, 0.0],
        recurrent_dropout: vec![0.0, 0.0],
        seq_len: 6,
        n_inputs: 3,
        n_outputs: 2,
    };
    let mut model = RnnModel::init(config, 21).unwrap();
    // Non-trivial biases so every gate path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for layer in &mut model.layers {
        for b in &mut layer.b.data {
            *b += rng.random_range(-0.5..0.5);
        }
    }
    let windows = random_rows(&mut rng, 3, 6 * 3);
    let targets = random_rows(&mut rng, 3, 2);
    let w: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
    let t: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let worst = check_trainable(&model, &w, &t, 1e-5);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}
