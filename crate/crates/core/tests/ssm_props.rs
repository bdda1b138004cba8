mod common;

use common::{dense_scan, rng, uniform_vec};
use polymamba::scan::{scan_orders, PolygonSpec};
use polymamba::ssm::{ps_ss2d, selective_scan, SsmParams, SsmWeights};
use polymamba::Tensor;
use proptest::prelude::*;
use rand::Rng;

/// Random scan parameters with stable (negative) state entries, a few of
/// them exactly zero to reach the limit branch.
fn random_params(seed: u64, c: usize, l: usize, n: usize) -> SsmParams {
    let mut r = rng(seed);
    let a = (0..c * n)
        .map(|_| if r.random_bool(0.05) { 0.0 } else { -r.random_range(0.01..3.0) })
        .collect();
    SsmParams {
        channels: c,
        state_dim: n,
        len: l,
        a,
        b: uniform_vec(&mut r, l * n, -1.0, 1.0),
        c: uniform_vec(&mut r, l * n, -1.0, 1.0),
        d: uniform_vec(&mut r, c, -1.0, 1.0),
        delta: uniform_vec(&mut r, c * l, 0.001, 1.0),
    }
}

fn oracle(x: &Tensor, p: &SsmParams) -> Vec<f64> {
    dense_scan(x.data(), p.channels, p.len, p.state_dim, &p.a, &p.b, &p.c, &p.d, &p.delta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_dense_recurrence(seed in any::<u64>(), c in 1usize..=3, l in 1usize..=256, n in 1usize..=16) {
        let p = random_params(seed, c, l, n);
        let x = Tensor::from_vec(&[c, l], uniform_vec(&mut rng(seed ^ 1), c * l, -1.0, 1.0)).unwrap();
        let y = selective_scan(&x, &p).unwrap();
        let diff = y.data().iter().zip(oracle(&x, &p)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-5, "max diff {diff}");
    }

    #[test]
    fn linear_in_the_input(seed in any::<u64>(), l in 1usize..=64, n in 1usize..=8, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let p = random_params(seed, 2, l, n);
        let mut r = rng(seed ^ 2);
        let x = Tensor::from_vec(&[2, l], uniform_vec(&mut r, 2 * l, -1.0, 1.0)).unwrap();
        let z = Tensor::from_vec(&[2, l], uniform_vec(&mut r, 2 * l, -1.0, 1.0)).unwrap();
        let mix = x.scale(alpha).add(&z.scale(beta)).unwrap();
        let lhs = selective_scan(&mix, &p).unwrap();
        let rhs = selective_scan(&x, &p).unwrap().scale(alpha).add(&selective_scan(&z, &p).unwrap().scale(beta)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-6);
    }

    #[test]
    fn causal(seed in any::<u64>(), l in 2usize..=64, cut in 0usize..63, bump in -5.0f64..5.0) {
        let cut = cut % (l - 1);
        let p = random_params(seed, 1, l, 4);
        let x = Tensor::from_vec(&[1, l], uniform_vec(&mut rng(seed ^ 3), l, -1.0, 1.0)).unwrap();
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[cut + 1..] {
            *v += bump;
        }
        let (y, y2) = (selective_scan(&x, &p).unwrap(), selective_scan(&x2, &p).unwrap());
        prop_assert_eq!(&y.data()[..=cut], &y2.data()[..=cut]);
    }
}

#[test]
fn cumulative_sum_case() {
    let p = SsmParams {
        channels: 1,
        state_dim: 1,
        len: 3,
        a: vec![0.0],
        b: vec![1.0; 3],
        c: vec![1.0; 3],
        d: vec![0.0],
        delta: vec![1.0; 3],
    };
    let y = selective_scan(&Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap(), &p).unwrap();
    for (a, b) in y.data().iter().zip([1.0, 3.0, 6.0]) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn long_sequences_stay_bounded() {
    let l = 10_000;
    let mut p = random_params(11, 2, l, 8);
    p.a.iter_mut().for_each(|a| *a = -a.abs().max(0.01));
    let x = Tensor::from_vec(&[2, l], uniform_vec(&mut rng(12), 2 * l, -1.0, 1.0)).unwrap();
    let y = selective_scan(&x, &p).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite() && v.abs() < 1e4));
}

/// Materialises each permuted sequence and runs the dense recurrence on it,
/// with step sizes and projections computed by hand.
#[test]
fn ps_ss2d_matches_brute_force() {
    let (c, h, w, n) = (2, 4, 4, 3);
    let mut r = rng(21);
    let mk = |r: &mut rand_chacha::ChaCha8Rng| SsmWeights {
        channels: c,
        state_dim: n,
        a_log: uniform_vec(r, c * n, -1.0, 1.0),
        d: uniform_vec(r, c, -1.0, 1.0),
        w_b: uniform_vec(r, n * c, -1.0, 1.0),
        w_c: uniform_vec(r, n * c, -1.0, 1.0),
        w_dt: uniform_vec(r, c * c, -1.0, 1.0),
        b_dt: uniform_vec(r, c, -3.0, 0.0),
    };
    let weights = [mk(&mut r), mk(&mut r), mk(&mut r), mk(&mut r)];
    let x = Tensor::from_vec(&[c, h, w], uniform_vec(&mut r, c * h * w, -1.0, 1.0)).unwrap();
    let spec = PolygonSpec::default();
    let got = ps_ss2d(&x, &spec, &weights).unwrap();

    let l = h * w;
    let mut expect = vec![0.0; c * l];
    for (o, wt) in scan_orders(h, w, &spec).unwrap().iter().zip(&weights) {
        let seq: Vec<f64> = (0..c).flat_map(|ch| o.order.iter().map(move |&i| (ch, i))).map(|(ch, i)| x.data()[ch * l + i]).collect();
        let mut b = vec![0.0; l * n];
        let mut cm = vec![0.0; l * n];
        let mut delta = vec![0.0; c * l];
        for t in 0..l {
            for k in 0..n {
                for ch in 0..c {
                    b[t * n + k] += wt.w_b[k * c + ch] * seq[ch * l + t];
                    cm[t * n + k] += wt.w_c[k * c + ch] * seq[ch * l + t];
                }
            }
            for oc in 0..c {
                let z: f64 = wt.b_dt[oc] + (0..c).map(|ch| wt.w_dt[oc * c + ch] * seq[ch * l + t]).sum::<f64>();
                delta[oc * l + t] = (1.0 + z.exp()).ln();
            }
        }
        let a: Vec<f64> = wt.a_log.iter().map(|v| -v.exp()).collect();
        let y = dense_scan(&seq, c, l, n, &a, &b, &cm, &wt.d, &delta);
        for ch in 0..c {
            for (t, &cell) in o.order.iter().enumerate() {
                expect[ch * l + cell] += y[ch * l + t];
            }
        }
    }
    let diff = got.data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-5, "max diff {diff}");
}

#[test]
fn neutral_weights_give_four_times_input() {
    let x = Tensor::from_vec(&[2, 3, 5], uniform_vec(&mut rng(5), 30, -1.0, 1.0)).unwrap();
    let w = SsmWeights::neutral(2, 4, 0.0);
    let y = ps_ss2d(&x, &PolygonSpec::regular(3), &[w.clone(), w.clone(), w.clone(), w]).unwrap();
    assert_eq!(y, x.scale(4.0));
}
