mod common;

use common::{conjugate, gaussian_matrix, random_orthogonal, random_symmetric, rng};
use ibflow::linalg::{covariance, cross_covariance, pca_spectrum, sym_eigvals};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eigenvalues_sum_to_trace(seed in any::<u64>(), d in 1usize..=32) {
        let s = random_symmetric(&mut rng(seed), d);
        let spec = sym_eigvals(&s).unwrap();
        prop_assert_eq!(spec.len(), d);
        let frob = s.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((spec.sum() - s.trace()).abs() <= 1e-9 * frob.max(1.0));
        prop_assert!(spec.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn spectrum_is_orthogonally_invariant(seed in any::<u64>(), d in 1usize..=16) {
        let mut r = rng(seed);
        let s = random_symmetric(&mut r, d);
        let q = random_orthogonal(&mut r, d);
        let a = sym_eigvals(&s).unwrap();
        let b = sym_eigvals(&conjugate(&s, &q)).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            prop_assert!((x - y).abs() <= 1e-8, "{} vs {}", x, y);
        }
    }

    #[test]
    fn covariance_is_psd(seed in any::<u64>(), n in 2usize..60, d in 1usize..12) {
        let x = gaussian_matrix(&mut rng(seed), n, d);
        let c = covariance(&x).unwrap();
        let spec = sym_eigvals(&c).unwrap();
        let min = spec.eigenvalues().last().copied().unwrap();
        prop_assert!(min >= -1e-8 * c.trace());
    }

    #[test]
    fn cross_covariance_with_self_matches_covariance(seed in any::<u64>(), n in 2usize..40, d in 1usize..6) {
        let x = gaussian_matrix(&mut rng(seed), n, d);
        let c = covariance(&x).unwrap();
        let cc = cross_covariance(&x, &x).unwrap();
        for (a, b) in c.as_slice().iter().zip(&cc) {
            prop_assert!((a - b).abs() <= 1e-12 * c.trace().max(1.0));
        }
    }
}

#[test]
fn independent_columns_have_small_off_diagonal_covariance() {
    let x = gaussian_matrix(&mut rng(7), 50_000, 3);
    let c = covariance(&x).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert!(c.get(i, j).abs() <= 0.03, "({i},{j}) = {}", c.get(i, j));
            }
        }
    }
}

#[test]
fn pca_spectrum_of_scaled_axes() {
    // columns scaled by 3 and 1, nearly uncorrelated
    let mut r = rng(3);
    let base = gaussian_matrix(&mut r, 20_000, 2);
    let data: Vec<f64> = base
        .rows()
        .flat_map(|row| [3.0 * row[0], row[1]])
        .collect();
    let x = ibflow::SampleMatrix::new(20_000, 2, data).unwrap();
    let s = pca_spectrum(&x).unwrap();
    assert!((s.eigenvalues()[0] - 9.0).abs() < 0.4);
    assert!((s.eigenvalues()[1] - 1.0).abs() < 0.1);
}
