use proptest::prelude::*;
use vqglab::tensor::{grad_check, softmax, Tape, Tensor, Var};
use vqglab::Result;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn vec_of(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0..1.0f64, n).prop_map(Tensor::vector)
}

/// `Σ w·y` with fixed positive weights, so every output entry matters.
fn readout(tape: &mut Tape, y: Var) -> Result<Var> {
    let n = tape.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| 0.5 + 0.37 * ((i * 7 % 11) as f64 / 11.0)).collect();
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check<F>(f: F, params: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check(
        |t: &mut Tape, v: &[Var]| {
            let y = f(t, v)?;
            readout(t, y)
        },
        params,
        STEP,
    )
    .unwrap()
    .max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matmul_and_elementwise(a in mat(2, 3), b in mat(3, 2), c in mat(2, 2)) {
        let e = check(|t, v| { let m = t.matmul(v[0], v[1])?; t.add(m, v[2]) }, &[a.clone(), b.clone(), c.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.sub(v[0], v[1]), &[c.clone(), c.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.mul(v[0], v[1]), &[a.clone(), a.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| Ok(t.tanh(v[0])), &[a.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| Ok(t.sigmoid(v[0])), &[b.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| { let s = t.add_scalar(v[0], 2.0); Ok(t.log(s)) }, &[b.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| { let s = t.scale(v[0], -3.0); Ok(t.mean(s)) }, &[c]);
        prop_assert!(e < TOL, "{e:e}");
    }

    #[test]
    fn relu_away_from_kink(x in prop::collection::vec(prop_oneof![-1.0..-0.01f64, 0.01..1.0f64], 6)) {
        let e = check(|t, v| Ok(t.relu(v[0])), &[Tensor::vector(x)]);
        prop_assert!(e < TOL, "{e:e}");
    }

    #[test]
    fn softmax_paths(x in mat(3, 4), target in 0usize..5, l in vec_of(5)) {
        let e = check(|t, v| t.softmax(v[0], 0), &[x.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.softmax(v[0], 1), &[x.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = grad_check(|t: &mut Tape, v: &[Var]| t.softmax_xent(v[0], target), &[l], STEP).unwrap();
        prop_assert!(e.max_rel_error < TOL);
    }

    #[test]
    fn shape_ops(x in mat(4, 3), y in vec_of(3), table in mat(5, 3), ids in prop::collection::vec(0usize..5, 1..6)) {
        let e = check(|t, v| t.concat(&[v[0], v[1]], 0), &[x.clone(), x.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.concat(&[v[0], v[1]], 1), &[x.clone(), x.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.slice(v[0], 1, 2), &[y.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.reshape(v[0], &[12]), &[x.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.replicate(v[0], 3), &[y.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(|t, v| t.unfold(v[0], 2), &[x.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let ids2 = ids.clone();
        let e = check(move |t, v| t.embedding(v[0], &ids2, None), &[table.clone()]);
        prop_assert!(e < TOL, "{e:e}");
        let e = check(move |t, v| t.embedding(v[0], &ids, Some(0)), &[table]);
        prop_assert!(e < TOL, "{e:e}");
    }

    #[test]
    fn max_rows_with_clear_winner(x in mat(4, 3)) {
        let d = x.data();
        let clear = (0..3).all(|c| {
            let mut col: Vec<f64> = (0..4).map(|r| d[r * 3 + c]).collect();
            col.sort_by(f64::total_cmp);
            col[3] - col[2] > 1e-3
        });
        prop_assume!(clear);
        let e = check(|t, v| t.max_rows(v[0]), &[x]);
        prop_assert!(e < TOL, "{e:e}");
    }

    #[test]
    fn sq_dist_gradient(a in vec_of(4), b in vec_of(4)) {
        let e = grad_check(|t: &mut Tape, v: &[Var]| t.sq_dist(v[0], v[1]), &[a, b], STEP).unwrap();
        prop_assert!(e.max_rel_error < TOL);
    }

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-50.0..50.0f64, 1..20), shift in -100.0..100.0f64) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_linear(a in mat(2, 3), b in mat(3, 2), c in mat(3, 2), k in -2.0..2.0f64) {
        let mut t = Tape::new();
        let (a, b, c) = (t.leaf(a), t.leaf(b), t.leaf(c));
        let bc = t.add(b, c).unwrap();
        let lhs = t.matmul(a, bc).unwrap();
        let ab = t.matmul(a, b).unwrap();
        let ac = t.matmul(a, c).unwrap();
        let rhs = t.add(ab, ac).unwrap();
        for (x, y) in t.value(lhs).data().iter().zip(t.value(rhs).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let kb = t.scale(b, k);
        let l2 = t.matmul(a, kb).unwrap();
        for (x, y) in t.value(l2).data().iter().zip(t.value(ab).data()) {
            prop_assert!((x - k * y).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_deterministic(a in mat(3, 3), x in vec_of(3)) {
        let run = || {
            let mut t = Tape::new();
            let (av, xv) = (t.leaf(a.clone()), t.leaf(Tensor::matrix(3, 1, x.data().to_vec()).unwrap()));
            let y = t.matmul(av, xv).unwrap();
            let y = t.tanh(y);
            let s = t.sum(y);
            let g = t.backward(s).unwrap();
            (g.get(av).data().to_vec(), g.get(xv).data().to_vec())
        };
        let (g1, g2) = (run(), run());
        prop_assert_eq!(g1.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(g1.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
