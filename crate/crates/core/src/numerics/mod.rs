//! Dense tensors and tape-based reverse-mode differentiation.

mod gradcheck;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ProbeResult};
pub use real::{Precision, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};


#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn store_with(tensors: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape, data) in tensors {
            s.insert(*name, Tensor::new(shape.clone(), data.clone()).unwrap(), true)
                .unwrap();
        }
        s
    }

    fn random_store(rng: &mut ChaCha8Rng, tensors: &[(&str, Vec<usize>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, shape) in tensors {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.insert(*name, Tensor::new(shape.clone(), data).unwrap(), true)
                .unwrap();
        }
        s
    }

    fn check<F>(store: &mut ParamStore<f64>, f: F)
    where
        F: FnMut(&mut Tape<'_, f64>) -> crate::Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let opts = GradCheckOptions {
            samples: 200,
            ..Default::default()
        };
        let report = grad_check(store, f, &opts, &mut rng).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y), [0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = ParamStore::<f32>::new();
        let mut t = Tape::new(&s);
        let x = t
            .constant(vec![2, 3], vec![1000.0, -5.0, 3.0, 0.1, 0.2, 0.3])
            .unwrap();
        let y = t.softmax(x).unwrap();
        for row in t.value(y).chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_beta() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(vec![1, 4], vec![3.0; 4]).unwrap();
        let g = t.constant(vec![4], vec![2.0; 4]).unwrap();
        let b = t.constant(vec![4], vec![0.7, -1.0, 0.0, 5.0]).unwrap();
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(t.value(y), [0.7, -1.0, 0.0, 5.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let l = t.cross_entropy(x, &[0]).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_matches_hand_computation() {
        // logits [2, 1, 0] target 0: ln(e^2 + e + 1) - 2
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let x = t.constant(vec![2, 3], vec![2.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let l = t.cross_entropy(x, &[0, 2]).unwrap();
        let e = std::f64::consts::E;
        let first = (e * e + e + 1.0).ln() - 2.0;
        let second = 3f64.ln();
        assert!((t.scalar(l) - (first + second) / 2.0).abs() < 1e-14);
        assert!(t.scalar(l) >= 0.0);
    }

    #[test]
    fn square_gradient() {
        let s = store_with(&[("w", vec![1], vec![3.0])]);
        let mut t = Tape::new(&s);
        let w = t.param(s.id("w").unwrap());
        let l = t.mul(w, w).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(s.id("w").unwrap()).unwrap(), [6.0]);
    }

    #[test]
    fn sum_gradient_is_one_per_input() {
        let s = store_with(&[("a", vec![1], vec![1.5]), ("b", vec![1], vec![-2.0])]);
        let mut t = Tape::new(&s);
        let a = t.param(s.id("a").unwrap());
        let b = t.param(s.id("b").unwrap());
        let l = t.add(a, b).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(s.id("a").unwrap()).unwrap(), [1.0]);
        assert_eq!(g.get(s.id("b").unwrap()).unwrap(), [1.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let s = store_with(&[("w", vec![1], vec![3.0])]);
        let mut t = Tape::new(&s);
        let w = t.param(s.id("w").unwrap());
        let l = t.mul(w, w).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::Tape(_))));
        t.reset();
        let w = t.param(s.id("w").unwrap());
        let l = t.mul(w, w).unwrap();
        assert!(t.backward(l).is_ok());
    }

    #[test]
    fn backward_requires_scalar() {
        let s = store_with(&[("w", vec![2], vec![1.0, 2.0])]);
        let mut t = Tape::new(&s);
        let w = t.param(s.id("w").unwrap());
        assert!(matches!(t.backward(w), Err(Error::Tape(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let a = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
        let c = t.constant(vec![3, 2], vec![0.0; 6]).unwrap();
        assert!(matches!(t.add(a, c), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let s = ParamStore::<f64>::new();
        let mut t = Tape::new(&s);
        let a = t.constant(vec![1], vec![1e308]).unwrap();
        assert!(matches!(t.scale(a, 10.0), Err(Error::NonFinite { op: "scale" })));
        assert!(matches!(
            t.constant(vec![1], vec![f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn reused_parameter_accumulates() {
        // l = sum(w * w + 3 w) -> dl/dw = 2w + 3
        let s = store_with(&[("w", vec![3], vec![1.0, -2.0, 0.5])]);
        let mut t = Tape::new(&s);
        let w = t.param(s.id("w").unwrap());
        let sq = t.mul(w, w).unwrap();
        let lin = t.scale(w, 3.0).unwrap();
        let y = t.add(sq, lin).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(s.id("w").unwrap()).unwrap(), [5.0, -1.0, 4.0]);
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_store(&mut rng, &[("w", vec![4, 3]), ("x", vec![2, 4])]);
        let (w, x) = (s.id("w").unwrap(), s.id("x").unwrap());
        let build = |t: &mut Tape<'_, f64>, which: u8| {
            let wv = t.param(w);
            let xv = t.param(x);
            let h = t.matmul(xv, wv).unwrap();
            let a = t.tanh(h).unwrap();
            let la = t.cross_entropy(a, &[0, 2]).unwrap();
            let sm = t.softmax(h).unwrap();
            let lb = t.sum(sm).unwrap();
            let lb = t.scale(lb, 0.3).unwrap();
            match which {
                0 => la,
                1 => lb,
                _ => t.add(la, lb).unwrap(),
            }
        };
        let grads: Vec<_> = (0..3u8)
            .map(|k| {
                let mut t = Tape::new(&s);
                let l = build(&mut t, k);
                t.backward(l).unwrap()
            })
            .collect();
        for id in [w, x] {
            let (a, b, both) = (grads[0].get(id).unwrap(), grads[1].get(id).unwrap(), grads[2].get(id).unwrap());
            for i in 0..a.len() {
                assert!((a[i] + b[i] - both[i]).abs() <= 1e-12 * (1.0 + both[i].abs()));
            }
        }
    }

    #[test]
    fn matmul_transpose_add_row_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_store(&mut rng, &[("a", vec![3, 4]), ("b", vec![4, 5]), ("c", vec![5]), ("d", vec![3, 5])]);
        let ids: Vec<_> = ["a", "b", "c", "d"].iter().map(|n| s.id(n).unwrap()).collect();
        check(&mut s, |t| {
            let a = t.param(ids[0]);
            let b = t.param(ids[1]);
            let c = t.param(ids[2]);
            let d = t.param(ids[3]);
            let ab = t.matmul(a, b)?;
            let abc = t.add_row(ab, c)?;
            let dt = t.transpose(d)?;
            let prod = t.matmul(abc, dt)?;
            let y = t.tanh(prod)?;
            t.cross_entropy(y, &[0, 1, 2])
        });
    }

    #[test]
    fn layer_norm_softmax_gelu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = random_store(&mut rng, &[("x", vec![3, 6]), ("g", vec![6]), ("b", vec![6]), ("w", vec![6, 6])]);
        let ids: Vec<_> = ["x", "g", "b", "w"].iter().map(|n| s.id(n).unwrap()).collect();
        check(&mut s, |t| {
            let x = t.param(ids[0]);
            let g = t.param(ids[1]);
            let b = t.param(ids[2]);
            let w = t.param(ids[3]);
            let h = t.layer_norm(x, g, b, 1e-5)?;
            let h = t.gelu(h)?;
            let h = t.matmul(h, w)?;
            let p = t.softmax(h)?;
            let sq = t.mul(p, h)?;
            t.sum(sq)
        });
    }

    #[test]
    fn embedding_slice_concat_select_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = random_store(&mut rng, &[("e", vec![7, 6]), ("w", vec![6, 4])]);
        let ids: Vec<_> = ["e", "w"].iter().map(|n| s.id(n).unwrap()).collect();
        check(&mut s, |t| {
            let e = t.param(ids[0]);
            let w = t.param(ids[1]);
            let x = t.embedding(e, &[3, 1, 3, 6])?;
            let left = t.slice_cols(x, 0, 2)?;
            let right = t.slice_cols(x, 2, 4)?;
            let sw = t.concat_cols(&[right, left])?;
            let h = t.matmul(sw, w)?;
            let rows = t.select_rows(h, &[3, 0, 3])?;
            t.cross_entropy(rows, &[1, 0, 3])
        });
    }

    #[test]
    fn dropout_scales_survivors_and_routes_gradient() {
        let s = store_with(&[("w", vec![1000], vec![1.0; 1000])]);
        let mut t = Tape::new(&s);
        let w = t.param(s.id("w").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = t.dropout(w, 0.25, &mut rng).unwrap();
        let vals = t.value(d).to_vec();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        let zeros = vals.iter().filter(|&&v| v == 0.0).count();
        assert!((180..320).contains(&zeros), "{zeros}");
        let l = t.sum(d).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(s.id("w").unwrap()).unwrap(), vals.as_slice());
    }

    #[test]
    fn unused_parameters_get_no_gradient() {
        let s = store_with(&[("a", vec![1], vec![1.0]), ("b", vec![1], vec![1.0])]);
        let mut t = Tape::new(&s);
        let a = t.param(s.id("a").unwrap());
        let l = t.scale(a, 2.0).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(s.id("b").unwrap()).is_none());
    }
}
