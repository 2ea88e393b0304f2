use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vfl_recon_core::linalg::Matrix;
use vfl_recon_core::model::{init_model, loss_and_grads};

/// Relative gap between an analytic and a central-difference derivative,
/// with an absolute floor for derivatives that are essentially zero.
fn rel_gap(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[test]
fn model_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for case in 0..8u64 {
        let (d_a, d_b) = (rng.random_range(1..4), rng.random_range(1..4));
        let hidden = [d_a + d_b + 2, rng.random_range(2..5)];
        let classes = rng.random_range(2..4);
        let mut m = init_model(d_a, d_b, &hidden, classes, case).unwrap();
        let batch = 6;
        let x = Matrix::from_fn(batch, d_a + d_b, |_, _| rng.random_range(-1.5..1.5));
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let wd = 1e-3;
        let (_, grads, _) = loss_and_grads(&m, &x, &y, wd).unwrap();
        let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|g| g.to_vec()).collect();

        let h = 1e-6;
        for (t, g) in analytic.iter().enumerate() {
            for (i, &ga) in g.iter().enumerate() {
                let orig = m.params()[t][i];
                m.params_mut()[t][i] = orig + h;
                let up = loss_and_grads(&m, &x, &y, wd).unwrap().0;
                m.params_mut()[t][i] = orig - h;
                let down = loss_and_grads(&m, &x, &y, wd).unwrap().0;
                m.params_mut()[t][i] = orig;
                // ReLU kinks make a few coordinates non-differentiable.
                let gap = rel_gap(ga, (up - down) / (2.0 * h));
                if gap > 1e-4 {
                    let probe = 1e-7;
                    m.params_mut()[t][i] = orig + probe;
                    let up2 = loss_and_grads(&m, &x, &y, wd).unwrap().0;
                    m.params_mut()[t][i] = orig - probe;
                    let down2 = loss_and_grads(&m, &x, &y, wd).unwrap().0;
                    m.params_mut()[t][i] = orig;
                    worst = worst.max(rel_gap(ga, (up2 - down2) / (2.0 * probe)));
                } else {
                    worst = worst.max(gap);
                }
            }
        }
    }
    assert!(worst <= 1e-4, "worst relative gap {worst:e}");
}

#[test]
fn passive_gradient_is_cut_gradient_times_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = init_model(2, 2, &[5, 3], 2, 1).unwrap();
    let x = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let y = vec![0, 1, 1, 0];
    let (_, grads, dz) = loss_and_grads(&m, &x, &y, 0.0).unwrap();
    let expect = dz.t_matmul(&x.select_columns(&[0, 1]));
    assert!(grads.w_a.max_abs_diff(&expect) <= 1e-14);
}
