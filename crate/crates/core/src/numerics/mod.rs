//! Dense double-precision numerics: matrices, a gradient tape, Adam and the
//! poly learning-rate schedule.

mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, RELATIVE_FLOOR};
pub use matrix::{matmul, matmul_t, softmax_rows, Matrix};
pub use optim::{adam_step, poly_lr, OptimizerState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{sigmoid, Gradients, Tape, Var, PROB_CLAMP};

/// Epsilon used by every feature normalisation layer.
pub const NORM_EPS: f64 = 1e-5;

/// Standardises `v` over its entries and applies a per-feature affine map.
pub fn feature_norm(v: &[f64], scale: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let f = v.len() as f64;
    let mean = v.iter().sum::<f64>() / f;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / f;
    let inv = 1.0 / (var + eps).sqrt();
    v.iter()
        .zip(scale.iter().zip(shift))
        .map(|(x, (g, b))| (x - mean) * inv * g + b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn feature_norm_examples() {
        let id = |n| (vec![1.0; n], vec![0.0; n]);
        let (g, b) = id(3);
        assert!(feature_norm(&[2.0, 2.0, 2.0], &g, &b, NORM_EPS)
            .iter()
            .all(|v| *v == 0.0));
        let (g, b) = id(2);
        let out = feature_norm(&[1.0, -1.0], &g, &b, NORM_EPS);
        assert!((out[0] - 1.0).abs() < 1e-5 && (out[1] + 1.0).abs() < 1e-5);
        let (g, b) = id(3);
        let out = feature_norm(&[0.0, 2.0, 4.0], &g, &b, NORM_EPS);
        assert!((out[0] + 1.2247).abs() < 1e-4 && out[1].abs() < 1e-12 && (out[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn tape_layer_norm_matches_reference() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[&[0.0, 2.0, 4.0], &[1.0, 1.0, 1.0]]));
        let y = tape.layer_norm(x, NORM_EPS);
        let ones = [1.0; 3];
        let zeros = [0.0; 3];
        let r0 = feature_norm(&[0.0, 2.0, 4.0], &ones, &zeros, NORM_EPS);
        assert_eq!(tape.value(y).row(0), r0.as_slice());
        assert!(tape.value(y).row(1).iter().all(|v| *v == 0.0));
    }

    /// Every differentiable op against central differences on small random shapes.
    #[test]
    fn every_op_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let n = rng.random_range(1..5);
            let f = rng.random_range(1..4);
            let mut store = ParamStore::new();
            let a = store.add("a", random(n, f, &mut rng));
            let b = store.add("b", random(n, f, &mut rng));
            let w = store.add("w", random(f, f + 1, &mut rng));
            let row = store.add("row", random(1, f, &mut rng));
            let ids = [a, b, w, row];
            let labels: Vec<Option<usize>> = (0..n)
                .map(|i| if i % 3 == 2 { None } else { Some(rng.random_range(0..f + 1)) })
                .collect();
            let labels = if labels.iter().all(|l| l.is_none()) {
                vec![Some(0); n]
            } else {
                labels
            };
            let err = grad_check(&mut store, &ids, 1e-5, |t, s| {
                let (a, b, w, row) = (t.param(s, a), t.param(s, b), t.param(s, w), t.param(s, row));
                let x = t.mul(a, b)?;
                let x = t.add(x, a)?;
                let x = t.mul_row(x, row)?;
                let x = t.add_row(x, row)?;
                let ln = t.layer_norm(x, NORM_EPS);
                let sm = t.softmax_rows(ln, 1.7)?;
                let at = t.matmul_t(a, false, b, true)?;
                let at = t.softmax_rows(at, 2.0)?;
                let mix = t.matmul(at, sm)?;
                let mix = t.scale(mix, 1.3);
                let cat = t.concat_cols(mix, b)?;
                let pooled = t.mean_rows(cat)?;
                let bc = t.broadcast_rows(pooled, n)?;
                let z = t.add(bc, cat)?;
                let g = t.gather_rows(z, &[n - 1, 0])?;
                let gm = t.mean(g)?;
                let logits = t.matmul(sm, w)?;
                let ce = t.cross_entropy(logits, &labels)?;
                let sg = t.sigmoid(b);
                let bce = t.bce(sg, 1.0)?;
                let s1 = t.add(ce, bce)?;
                t.add(s1, gm)
            })
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn relu_and_conv_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w, cin, cout) = (4, 5, 2, 3);
        let mut store = ParamStore::new();
        let input = store.add("in", random(h * w, cin, &mut rng));
        let k1 = store.add("k1", random(9 * cin, cout, &mut rng));
        let k2 = store.add("k2", random(9 * cout, 2, &mut rng));
        let bias = store.add("b", random(1, cout, &mut rng));
        let at = [0usize, 7, 19, 12];
        let all: Vec<usize> = (0..h * w).collect();
        let err = grad_check(&mut store, &[input, k1, k2, bias], 1e-5, |t, s| {
            let x = t.param(s, input);
            let k1 = t.param(s, k1);
            let k2 = t.param(s, k2);
            let b = t.param(s, bias);
            let c1 = t.conv3x3(x, k1, h, w, &all)?;
            let c1 = t.add_row(c1, b)?;
            let c1 = t.relu(c1);
            let c2 = t.conv3x3(c1, k2, h, w, &at)?;
            let sq = t.mul(c2, c2)?;
            t.mean(sq)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn conv_at_pixels_equals_dense_then_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (5, 4);
        let mut t = Tape::inference();
        let x = t.constant(random(h * w, 3, &mut rng));
        let k = t.constant(random(27, 2, &mut rng));
        let all: Vec<usize> = (0..h * w).collect();
        let dense = t.conv3x3(x, k, h, w, &all).unwrap();
        let at = [3usize, 0, 19, 3];
        let sparse = t.conv3x3(x, k, h, w, &at).unwrap();
        assert_eq!(t.value(sparse), &t.value(dense).select_rows(&at));
    }

    #[test]
    fn cross_entropy_requires_valid_label() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(2, 3));
        assert!(matches!(
            t.cross_entropy(x, &[None, None]),
            Err(crate::Error::NoValidPoints)
        ));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::filled(1, 2, 1.0));
        let b = store.add("b", Matrix::filled(1, 2, 2.0));
        let mut t = Tape::with_trainable(&[a]);
        let (va, vb) = (t.param(&store, a), t.param(&store, b));
        let p = t.mul(va, vb).unwrap();
        let out = t.mean(p).unwrap();
        let g = t.backward(out).unwrap();
        assert!(t.param_grad(&g, a).is_some());
        assert!(t.param_grad(&g, b).is_none());
        t.accumulate_into(&g, &mut store).unwrap();
        assert_eq!(store.get(a).grad.as_ref().unwrap().as_slice(), &[1.0, 1.0]);
        assert!(store.get(b).grad.is_none());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..8, scale in 0.1f64..10.0) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let m = Matrix::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
            let s = softmax_rows(&m, scale).unwrap();
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(s.row(r).iter().all(|v| *v >= 0.0 && *v <= 1.0));
            }
        }

        #[test]
        fn identity_products_are_exact(vals in proptest::collection::vec(-1e3f64..1e3, 1..30), cols in 1usize..6) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let a = Matrix::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
            prop_assert_eq!(&matmul(&a, &Matrix::identity(cols)).unwrap(), &a);
            prop_assert_eq!(&matmul(&Matrix::identity(rows), &a).unwrap(), &a);
        }

        #[test]
        fn poly_lr_non_increasing(max in 1usize..500, power in 0.01f64..3.0) {
            let mut prev = f64::INFINITY;
            for it in 0..=max {
                let lr = poly_lr(it, max, 1e-3, power).unwrap();
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }
    }
}
