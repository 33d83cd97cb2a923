use mortality_core::neural::{bce_loss, Architecture, Layer, MlpModel};
use mortality_core::seed::derived_rng;
use mortality_core::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn batch(rows: usize, cols: usize, seed: u64) -> (Matrix, Vec<u8>) {
    let mut rng = derived_rng(seed, "gradcheck", 0);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    let y = (0..rows).map(|i| u8::from(i % 3 == 0)).collect();
    (Matrix::new(rows, cols, data).unwrap(), y)
}

/// Smallest |pre-activation| at any ReLU. Central differences straddling a
/// kink are meaningless, so batches closer than this to one are redrawn.
fn relu_margin(m: &MlpModel, x: &Matrix) -> f64 {
    let tape = m.forward_tape(x, None).unwrap();
    m.layers
        .iter()
        .zip(tape.layer_inputs())
        .filter(|(l, _)| matches!(l, Layer::Relu))
        .flat_map(|(_, z)| z.as_slice().iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

fn kink_free_batch(m: &MlpModel, rows: usize, cols: usize) -> (Matrix, Vec<u8>) {
    (0..100)
        .map(|s| batch(rows, cols, s))
        .find(|(x, _)| relu_margin(m, x) > 1e-4)
        .expect("no kink-free batch in 100 draws")
}

fn loss(m: &MlpModel, x: &Matrix, y: &[u8]) -> f64 {
    let tape = m.forward_tape(x, None).unwrap();
    bce_loss(&tape.probabilities(), y).unwrap()
}

/// Largest relative error between backprop and central differences over
/// every parameter entry.
fn worst_relative_error(mut m: MlpModel, x: &Matrix, y: &[u8]) -> f64 {
    let tape = m.forward_tape(x, None).unwrap();
    m.backward(&tape, y).unwrap();
    let analytic: Vec<Vec<f64>> = m.params().iter().map(|p| p.grad.clone()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &g) in grads.iter().enumerate() {
            let orig = m.params()[pi].value[k];
            m.params_mut()[pi].value[k] = orig + h;
            let up = loss(&m, x, y);
            m.params_mut()[pi].value[k] = orig - h;
            let down = loss(&m, x, y);
            m.params_mut()[pi].value[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            // absolute floor keeps near-zero entries from dominating
            let err = (g - numeric).abs() / (g.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn plain_network_matches_central_differences() {
    let mut a = Architecture::standard(30);
    a.input_batch_norm = false;
    a.dropout_p = 0.0;
    let m = MlpModel::new(a, 11).unwrap();
    let (x, y) = kink_free_batch(&m, 32, 30);
    let worst = worst_relative_error(m, &x, &y);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn batch_norm_in_train_mode_matches_central_differences() {
    let mut a = Architecture::standard(6);
    a.hidden = vec![8, 5];
    a.dropout_p = 0.0;
    a.hidden_batch_norm = true;
    let m = MlpModel::new(a, 5).unwrap();
    let (x, y) = kink_free_batch(&m, 16, 6);
    let worst = worst_relative_error(m, &x, &y);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}
