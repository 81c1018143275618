//! Small reverse-mode differentiation engine over dense `f64` tensors.
//!
//! Values live on a [`Tape`]; parameters live in a [`ParamStore`] and are
//! copied onto the tape on first use. [`Tape::backward`] returns gradients for
//! the whole store. The operation set is what the encoder and learner need:
//! matrix products, row-broadcast bias, elementwise arithmetic, `tanh`,
//! row softmax, grouped attention and diagonal-Gaussian log densities.

mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use nn::{mlp_forward, Linear, Mlp};
pub use optim::{clip_grad_norm, Adam};
pub use params::{ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tape::{AttentionMode, Grads, Groups, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{gaussian_logprob_rows, softmax_into};

/// Diagonal Gaussian log density of one action vector.
pub fn gaussian_logprob(mean: &[f64], log_std: &[f64], action: &[f64]) -> crate::Result<f64> {
    if mean.len() != log_std.len() || mean.len() != action.len() {
        return Err(crate::Error::Dimension {
            op: "gaussian_logprob",
            lhs: vec![mean.len()],
            rhs: vec![log_std.len(), action.len()],
        });
    }
    Ok(gaussian_logprob_rows(mean, log_std, action, mean.len().max(1)).first().copied().unwrap_or(0.0))
}

/// Softmax of `x / divisor` for a single vector.
pub fn softmax(x: &[f64], divisor: f64) -> crate::Result<Vec<f64>> {
    if x.is_empty() {
        return Err(crate::Error::Domain("softmax over an empty set".into()));
    }
    if !(divisor > 0.0) {
        return Err(crate::Error::Domain(format!("softmax divisor must be > 0, got {divisor}")));
    }
    let mut out = vec![0.0; x.len()];
    softmax_into(x, divisor, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central finite differences of a scalar function with respect to each
    /// input tensor, compared against the tape gradient.
    fn check_grads(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.backward(loss, &store).unwrap();
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .map(|v| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(*v).len()]))
            .collect();
        let eval = |ins: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
            let l = f(&mut t, &vs);
            t.value(l).item()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (ti, t) in inputs.iter().enumerate() {
            for e in 0..t.len() {
                let mut plus = inputs.clone();
                plus[ti].data_mut()[e] += h;
                let mut minus = inputs.clone();
                minus[ti].data_mut()[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[ti][e];
                let err = (fd - a).abs() / (fd.abs().max(a.abs()).max(1e-3));
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let store = ParamStore::new();
        let mut t = Tape::new();
        let i = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let y = t.matmul(i, b).unwrap();
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
        let a = t.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let c = t.constant(Tensor::matrix(1, 1, vec![5.0]).unwrap());
        let y = t.matmul(a, c).unwrap();
        assert_eq!(t.value(y).data(), &[10.0]);
        drop(store);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        match &err {
            Error::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, &vec![2, 3]);
                assert_eq!(rhs, &vec![2, 3]);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let w = rand_tensor(&mut rng, &[3, 2]);
        let err = check_grads(vec![a, b, w], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let yw = t.mul(y, v[2]).unwrap();
            t.sum(yw)
        });
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn softmax_examples() {
        for c in [-3.0, 0.0, 12.5] {
            let s = softmax(&[c, c, c], 1.0).unwrap();
            for v in s {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(softmax(&[42.0], 2.0).unwrap(), vec![1.0]);
        let s = softmax(&[std::f64::consts::LN_2, 0.0], 1.0).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(softmax(&[], 1.0), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let s = softmax(&[1000.0, 999.0, -1000.0], 1.0).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_logprob_examples() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let lp = gaussian_logprob(&[0.3, -1.0, 2.0], &[0.0; 3], &[0.3, -1.0, 2.0]).unwrap();
        assert!((lp - (-1.5 * ln2pi)).abs() < 1e-12);
        let lp = gaussian_logprob(&[0.0], &[0.0], &[1.0]).unwrap();
        assert!((lp - (-0.5 - 0.5 * ln2pi)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_logprob_matches_closed_form_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = rng.random_range(1..5);
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            // product of univariate densities, then log
            let density: f64 = (0..d)
                .map(|i| {
                    let s = ls[i].exp();
                    (-(a[i] - mean[i]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
                })
                .product();
            let lp = gaussian_logprob(&mean, &ls, &a).unwrap();
            assert!((lp - density.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_sum_of_params_gives_unit_grads_and_zero_for_unused() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let unused = store.add("q", Tensor::vector(vec![5.0])).unwrap();
        let mut t = Tape::new();
        let v = t.param(&store, p);
        let loss = t.sum(v);
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get(p), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(unused), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let store = ParamStore::new();
        let mut t = Tape::new();
        let v = t.variable(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(v, &store), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_param_accumulates_over_uses() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![2.0])).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, p);
        let b = t.param(&store, p);
        assert_eq!(a, b);
        let prod = t.mul(a, b).unwrap();
        let loss = t.sum(prod);
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.get(p), &[4.0]);
    }

    #[test]
    fn attention_empty_group_gives_zero_row() {
        let mut t = Tape::new();
        let q = t.constant(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let k = t.constant(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap());
        let v = t.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let out = t.attention(q, k, v, Groups::from_lists(&[vec![0], vec![]]), AttentionMode::ScaledDot).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
    }

    /// Every primitive, one random instance per seed, against central
    /// differences.
    fn primitive_suite(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let w = rand_tensor(&mut rng, &[m, n]);
        worst = worst.max(check_grads(
            vec![rand_tensor(&mut rng, &[m, k]), rand_tensor(&mut rng, &[k, n]), w.clone()],
            |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                let y = t.mul(y, v[2]).unwrap();
                t.sum(y)
            },
        ));
        worst = worst.max(check_grads(
            vec![rand_tensor(&mut rng, &[m, n]), rand_tensor(&mut rng, &[n]), w.clone()],
            |t, v| {
                let y = t.add_bias(v[0], v[1]).unwrap();
                let y = t.tanh(y);
                let y = t.mul(y, v[2]).unwrap();
                t.sum(y)
            },
        ));
        worst = worst.max(check_grads(vec![rand_tensor(&mut rng, &[m, n]), rand_tensor(&mut rng, &[m, n])], |t, v| {
            let a = t.sub(v[0], v[1]).unwrap();
            let b = t.add(v[0], v[1]).unwrap();
            let c = t.mul(a, b).unwrap();
            let e = t.exp(c);
            let s = t.square(e);
            let s = t.scale(s, 0.7);
            let s = t.add_scalar(s, 0.2);
            t.mean(s).unwrap()
        }));
        let c: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(check_grads(
            vec![rand_tensor(&mut rng, &[m, n]), rand_tensor(&mut rng, &[m, n])],
            move |t, v| {
                // keep clamp/min arguments away from their kinks
                let a = t.scale(v[0], 3.0);
                let a = t.clamp(a, -1.5, 1.5);
                let m = t.minimum(a, v[1]).unwrap();
                let m = t.mul_const(m, c.clone()).unwrap();
                t.sum(m)
            },
        ));
        worst = worst.max(check_grads(
            vec![rand_tensor(&mut rng, &[m, k]), rand_tensor(&mut rng, &[m, n]), w.clone()],
            |t, v| {
                let cat = t.concat_cols(&[v[0], v[1]]).unwrap();
                let sm = t.softmax(cat, 0.8).unwrap();
                let sq = t.square(sm);
                t.sum(sq)
            },
        ));
        let d = rng.random_range(1..4);
        let act: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        worst =
            worst.max(check_grads(vec![rand_tensor(&mut rng, &[m, d]), rand_tensor(&mut rng, &[d])], move |t, v| {
                let lp = t.gaussian_logprob(v[0], v[1], act.clone()).unwrap();
                t.sum(lp)
            }));
        let nk = rng.random_range(1..5);
        let lists: Vec<Vec<usize>> = (0..m).map(|_| (0..nk).filter(|_| rng.random_bool(0.7)).collect()).collect();
        let wq = rand_tensor(&mut rng, &[m, n]);
        for mode in [AttentionMode::ScaledDot, AttentionMode::Mean] {
            let groups = Groups::from_lists(&lists);
            let wq = wq.clone();
            worst = worst.max(check_grads(
                vec![
                    rand_tensor(&mut rng, &[m, k]),
                    rand_tensor(&mut rng, &[nk, k]),
                    rand_tensor(&mut rng, &[nk, n]),
                    wq,
                ],
                move |t, v| {
                    let o = t.attention(v[0], v[1], v[2], groups.clone(), mode).unwrap();
                    let o = t.mul(o, v[3]).unwrap();
                    t.sum(o)
                },
            ));
        }
        worst
    }

    #[test]
    fn primitives_pass_gradient_check_on_100_seeds() {
        for seed in 0..100 {
            let err = primitive_suite(seed);
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn forward_is_bit_identical_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, &[5, 7]);
        let b = rand_tensor(&mut rng, &[7, 3]);
        let run = || {
            let mut t = Tape::new();
            let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
            let z = t.matmul(x, y).unwrap();
            let z = t.softmax(z, 1.3).unwrap();
            t.value(z).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_permutation_equivariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..12),
            div in 0.1f64..10.0,
            rot in 0usize..12,
        ) {
            let s = softmax(&xs, div).unwrap();
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.iter().all(|v| *v >= 0.0));
            let r = rot % xs.len();
            let mut px = xs.clone();
            px.rotate_left(r);
            let ps = softmax(&px, div).unwrap();
            let mut expect = s.clone();
            expect.rotate_left(r);
            for (a, b) in ps.iter().zip(&expect) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
