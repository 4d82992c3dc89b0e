use std::rc::Rc;

use asmg_core::grad::{finite_diff_check, RowLists, Tape, Tensor, Var};
use asmg_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, so kinks and clamps stay out of reach of
/// the probe step.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], points: &[f64]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(-2.0..2.0);
            if points.iter().all(|p| (v - p).abs() > 1e-2) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `sum(out * w)` for a fixed random `w`, so every output entry gets its own
/// upstream weight.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let w = tape.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn check<F>(leaves: &[Tensor], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check(
        |tape, v| {
            let out = f(tape, v)?;
            weighted_sum(tape, out, seed)
        },
        leaves,
        STEP,
    )
    .unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..5, 1usize..5, 1usize..5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_gradients((m, n, p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[n, p], -1.0, 1.0);
        prop_assert!(check(&[a, b], seed, |t, v| t.matmul(v[0], v[1])) < TOL);
    }

    #[test]
    fn elementwise_binary_gradients((m, n, _p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let leaves = [a, b];
        prop_assert!(check(&leaves, seed, |t, v| t.add(v[0], v[1])) < TOL);
        prop_assert!(check(&leaves, seed, |t, v| t.sub(v[0], v[1])) < TOL);
        prop_assert!(check(&leaves, seed, |t, v| t.mul(v[0], v[1])) < TOL);
    }

    #[test]
    fn add_row_gradients((m, n, _p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[1, n], -1.0, 1.0);
        prop_assert!(check(&[a, b], seed, |t, v| t.add_row(v[0], v[1])) < TOL);
    }

    #[test]
    fn scalar_op_gradients((m, n, _p, seed) in dims(), s in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [rand_tensor(&mut rng, &[m, n], -1.0, 1.0)];
        prop_assert!(check(&a, seed, |t, v| t.scale(v[0], s)) < TOL);
        prop_assert!(check(&a, seed, |t, v| t.add_scalar(v[0], s)) < TOL);
        prop_assert!(check(&a, seed, |t, v| t.one_minus(v[0])) < TOL);
    }

    #[test]
    fn concat_gradients((m, n, p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[m, n], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[m, p], -1.0, 1.0);
        let c = rand_tensor(&mut rng, &[m, 1], -1.0, 1.0);
        prop_assert!(check(&[a, b, c], seed, |t, v| t.concat(v)) < TOL);
    }

    #[test]
    fn gather_gradients((rows, n, out, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = rand_tensor(&mut rng, &[rows, n], -1.0, 1.0);
        let idx: Rc<[usize]> = (0..out + 1).map(|_| rng.gen_range(0..rows)).collect();
        prop_assert!(check(&[src], seed, |t, v| t.gather(v[0], idx.clone())) < TOL);
    }

    #[test]
    fn pooled_gather_gradients((rows, n, out, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = rand_tensor(&mut rng, &[rows, n], -1.0, 1.0);
        let mut lists = RowLists::new();
        for _ in 0..out {
            let len = rng.gen_range(0..4);
            let picked: Vec<usize> = (0..len).map(|_| rng.gen_range(0..rows)).collect();
            lists.push(&picked);
        }
        let lists = Rc::new(lists);
        let leaves = [src];
        prop_assert!(check(&leaves, seed, |t, v| t.gather_mean(v[0], lists.clone())) < TOL);
        prop_assert!(check(&leaves, seed, |t, v| t.gather_sum(v[0], lists.clone())) < TOL);
    }

    #[test]
    fn reshape_and_reduction_gradients((m, n, _p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [rand_tensor(&mut rng, &[m, n], -1.0, 1.0)];
        prop_assert!(check(&a, seed, |t, v| t.reshape(v[0], &[n, m])) < TOL);
        prop_assert!(check(&a, seed, |t, v| t.sum(v[0])) < TOL);
        prop_assert!(check(&a, seed, |t, v| t.mean(v[0])) < TOL);
    }

    #[test]
    fn activation_gradients((m, n, _p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [rand_tensor(&mut rng, &[m, n], -4.0, 4.0)];
        prop_assert!(check(&a, seed, |t, v| t.sigmoid(v[0])) < TOL);
        prop_assert!(check(&a, seed, |t, v| t.tanh(v[0])) < TOL);
        let kinked = [away_from(&mut rng, &[m, n], &[0.0, -0.5, 0.5])];
        prop_assert!(check(&kinked, seed, |t, v| t.relu(v[0])) < TOL);
        prop_assert!(check(&kinked, seed, |t, v| t.clamp(v[0], -0.5, 0.5)) < TOL);
        let positive = [rand_tensor(&mut rng, &[m, n], 0.1, 3.0)];
        prop_assert!(check(&positive, seed, |t, v| t.log(v[0])) < TOL);
    }

    #[test]
    fn grouped_matvec_gradients((g, m, p, seed) in dims(), c in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_tensor(&mut rng, &[g, m, p], -1.0, 1.0);
        let x = rand_tensor(&mut rng, &[c, p], -1.0, 1.0);
        let groups: Rc<[usize]> = (0..c).map(|_| rng.gen_range(0..g)).collect();
        prop_assert!(
            check(&[w, x], seed, |t, v| t.grouped_matvec(v[0], v[1], groups.clone())) < TOL
        );
    }

    #[test]
    fn gather_touches_only_looked_up_rows((rows, n, out, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = rand_tensor(&mut rng, &[rows + 2, n], -1.0, 1.0);
        let idx: Rc<[usize]> = (0..out).map(|_| rng.gen_range(0..rows)).collect();
        let mut tape = Tape::new();
        let s = tape.leaf(src);
        let gathered = tape.gather(s, idx.clone()).unwrap();
        let loss = weighted_sum(&mut tape, gathered, seed).unwrap();
        let grads = tape.backward(loss, Tensor::scalar(1.0)).unwrap();
        let g = grads.get(s);
        for r in 0..rows + 2 {
            let row = &g.data()[r * n..(r + 1) * n];
            if !idx.contains(&r) {
                prop_assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn matmul_forward_matches_hand_product() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = tape.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[2, 3]));
    assert!(tape.matmul(a, b).is_err());
    let c = tape.leaf(Tensor::zeros(&[3, 2]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut tape = Tape::new();
        let w = tape.leaf(rand_tensor(&mut rng, &[5, 7], -1.0, 1.0));
        let x = tape.leaf(rand_tensor(&mut rng, &[7, 3], -1.0, 1.0));
        let h = tape.matmul(w, x).unwrap();
        let h = tape.tanh(h).unwrap();
        let loss = weighted_sum(&mut tape, h, 3).unwrap();
        let grads = tape.backward(loss, Tensor::scalar(1.0)).unwrap();
        let mut bits: Vec<u64> = tape
            .value(loss)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        bits.extend(grads.get(w).data().iter().map(|v| v.to_bits()));
        bits.extend(grads.get(x).data().iter().map(|v| v.to_bits()));
        bits
    };
    assert_eq!(run(), run());
}

/// One GRU step written directly with tape primitives; the reset-gate weights
/// are the leaf under test.
#[test]
fn gru_cell_loss_gradient_in_reset_weights() {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w_r = rand_tensor(&mut rng, &[d, d + 1], -0.8, 0.8);
    let w_z = rand_tensor(&mut rng, &[d, d + 1], -0.8, 0.8);
    let w_h = rand_tensor(&mut rng, &[d, d + 1], -0.8, 0.8);
    let h_prev = rand_tensor(&mut rng, &[d, 1], -0.9, 0.9);
    let theta = Tensor::matrix(1, 1, vec![0.7]).unwrap();
    let err = finite_diff_check(
        |tape, v| {
            let h = tape.constant(h_prev.clone());
            let th = tape.constant(theta.clone());
            let wz = tape.constant(w_z.clone());
            let wh = tape.constant(w_h.clone());
            let hx = tape.reshape(h, &[d, 1])?;
            let input = {
                let stacked = Tensor::new(
                    vec![d + 1, 1],
                    h_prev.data().iter().chain(theta.data()).copied().collect(),
                )?;
                tape.constant(stacked)
            };
            let r_pre = tape.matmul(v[0], input)?;
            let r = tape.sigmoid(r_pre)?;
            let z_pre = tape.matmul(wz, input)?;
            let z = tape.sigmoid(z_pre)?;
            let rh = tape.mul(r, hx)?;
            let rh_row = tape.reshape(rh, &[1, d])?;
            let th_row = tape.reshape(th, &[1, 1])?;
            let cand_in = tape.concat(&[rh_row, th_row])?;
            let cand_in = tape.reshape(cand_in, &[d + 1, 1])?;
            let c_pre = tape.matmul(wh, cand_in)?;
            let c = tape.tanh(c_pre)?;
            let keep = tape.one_minus(z)?;
            let a = tape.mul(keep, hx)?;
            let b = tape.mul(z, c)?;
            let h_new = tape.add(a, b)?;
            let sq = tape.mul(h_new, h_new)?;
            tape.sum(sq)
        },
        &[w_r],
        STEP,
    )
    .unwrap();
    assert!(err < TOL, "max relative error {err}");
}
