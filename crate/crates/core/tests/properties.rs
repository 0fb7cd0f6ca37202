//! Property tests over the numeric kernels.

use proptest::prelude::*;

use stemgnn::autodiff::Tape;
use stemgnn::spectral::{dft_dense, idft_dense, jacobi_eigh, symmetrize};
use stemgnn::tensor::{matmul_raw, Tensor};
use stemgnn::training::{make_windows, normalize_fit, normalize_invert, NormKind};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_matches_reference_loop(
        m in 1usize..5, k in 1usize..5, n in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::new(vec![m, k], (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let b = Tensor::new(vec![k, n], (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let c = matmul_raw(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut want = 0.0;
                for p in 0..k {
                    want += a.at2(i, p) * b.at2(p, j);
                }
                prop_assert!((c.at2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_is_associative(data_a in finite_vec(6), data_b in finite_vec(12), data_c in finite_vec(8)) {
        let a = Tensor::new(vec![2, 3], data_a).unwrap();
        let b = Tensor::new(vec![3, 4], data_b).unwrap();
        let c = Tensor::new(vec![4, 2], data_c).unwrap();
        let left = matmul_raw(&matmul_raw(&a, &b).unwrap(), &c).unwrap();
        let right = matmul_raw(&a, &matmul_raw(&b, &c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..6, data in finite_vec(30)) {
        let needed = rows * cols;
        prop_assume!(data.len() >= needed);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![rows, cols], data[..needed].to_vec()).unwrap());
        let s = tape.softmax_rows(&x).unwrap();
        for i in 0..rows {
            let mut sum = 0.0;
            for j in 0..cols {
                let v = s.at2(i, j);
                prop_assert!(v > 0.0 && v < 1.0 + 1e-12);
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dft_roundtrips_any_length(len in 1usize..48, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&data));
        let spectrum = dft_dense(&mut tape, &x).unwrap();
        let back = idft_dense(&mut tape, &spectrum).unwrap();
        for (a, b) in back.data().iter().zip(&data) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetrize_output_is_exactly_symmetric(n in 1usize..6, data in finite_vec(36)) {
        prop_assume!(data.len() >= n * n);
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(vec![n, n], data[..n * n].to_vec()).unwrap());
        let s = symmetrize(&mut tape, &w).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s.at2(i, j), s.at2(j, i));
            }
        }
    }

    #[test]
    fn window_count_formula(t in 2usize..200, k in 1usize..20, h in 1usize..5) {
        prop_assume!(t >= k + h);
        let windows = make_windows(t, k, h).unwrap();
        prop_assert_eq!(windows.len(), t - k - h + 1);
        for w in &windows {
            prop_assert_eq!(w.input.1 - w.input.0, k);
            prop_assert_eq!(w.target.1 - w.target.0, h);
            prop_assert_eq!(w.input.1, w.target.0);
        }
    }

    #[test]
    fn normalization_roundtrips(n in 1usize..4, t in 3usize..12, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * t).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let values = Tensor::new(vec![n, t], data).unwrap();
        for kind in [NormKind::ZScore, NormKind::MinMax, NormKind::None] {
            let fitted = normalize_fit(kind, &values);
            prop_assume!(fitted.is_ok());
            let (stats, normed) = fitted.unwrap();
            let back = normalize_invert(&stats, &normed).unwrap();
            for (a, b) in back.data().iter().zip(values.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_reconstructs_what_it_decomposes(n in 2usize..8, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-2.0..2.0);
                m.set2(i, j, v);
                m.set2(j, i, v);
            }
        }
        let basis = jacobi_eigh(&m).unwrap();
        prop_assert!(basis.reconstruction_residual() < 1e-8);
        prop_assert!(basis.orthonormality_residual() < 1e-8);
    }
}
