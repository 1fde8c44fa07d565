use gzsl_core::gradcheck::relative_error;
use gzsl_core::net::{MlpParams, MlpSpec};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perturbed(dims: Vec<usize>, seed: u64) -> MlpParams {
    let mut p = MlpParams::init(&MlpSpec::new(dims).unwrap(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for b in &mut p.biases {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    p
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

/// Plain nested-loop forward pass over nested vectors.
fn direct_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let layers = p.weights.len();
    for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
        let mut next = vec![0.0; w.ncols()];
        for (o, out) in next.iter_mut().enumerate() {
            let mut acc = b[o];
            for (i, hi) in h.iter().enumerate() {
                acc += hi * w[(i, o)];
            }
            *out = if l + 1 < layers { acc.max(0.0) } else { acc };
        }
        h = next;
    }
    h
}

#[test]
fn three_layer_forward_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let p = perturbed(vec![7, 9, 5, 4], seed);
        let x = random_matrix(&mut rng, 6, 7);
        let (out, _) = p.forward(x.view()).unwrap();
        for (r, row) in x.outer_iter().enumerate() {
            let expected = direct_forward(&p, row.as_slice().unwrap());
            for (o, e) in expected.iter().enumerate() {
                assert!((out[(r, o)] - e).abs() < 1e-12);
            }
        }
    }
}

/// L = sum(c * f(x)); returns the value.
fn weighted_output(p: &MlpParams, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
    let (out, _) = p.forward(x.view()).unwrap();
    (&out * c).sum()
}

#[test]
fn three_layer_backward_matches_finite_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for seed in 0..8 {
        let mut p = perturbed(vec![6, 8, 7, 3], seed);
        let x = random_matrix(&mut rng, 4, 6);
        let c = random_matrix(&mut rng, 4, 3);
        let (_, tape) = p.forward(x.view()).unwrap();
        let (grads, grad_x) = p.backward(&tape, c.view()).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
        for (k, g) in analytic.iter().enumerate() {
            for (i, &a) in g.iter().enumerate() {
                let orig = p.tensors()[k][i];
                p.tensors_mut()[k][i] = orig + h;
                let plus = weighted_output(&p, &x, &c);
                p.tensors_mut()[k][i] = orig - h;
                let minus = weighted_output(&p, &x, &c);
                p.tensors_mut()[k][i] = orig;
                worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
            }
        }
        for r in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[(r, j)] += h;
                let mut xm = x.clone();
                xm[(r, j)] -= h;
                let numeric = (weighted_output(&p, &xp, &c) - weighted_output(&p, &xm, &c)) / (2.0 * h);
                worst = worst.max(relative_error(grad_x[(r, j)], numeric));
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

proptest! {
    #[test]
    fn forward_is_deterministic_and_pure(seed in any::<u64>(), rows in 1usize..5) {
        let p = perturbed(vec![3, 4, 2], seed);
        let before = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, rows, 3);
        let (a, _) = p.forward(x.view()).unwrap();
        let (b, _) = p.forward(x.view()).unwrap();
        prop_assert_eq!(a.mapv(f64::to_bits), b.mapv(f64::to_bits));
        prop_assert_eq!(&p, &before);
        prop_assert_eq!(p.infer(x.view()).unwrap(), a);
    }
}
