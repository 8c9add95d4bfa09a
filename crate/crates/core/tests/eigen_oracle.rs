mod oracles;

use nsedit_core::init::{gaussian_matrix, seeded_rng};
use nsedit_core::linalg::{sym_eig, sym_eig_with, EigenMethod, Matrix, SymmetricMatrix};
use rand::Rng;

fn sym(m: Matrix<f64>) -> SymmetricMatrix<f64> {
    SymmetricMatrix::new(m.symmetrized(), 0.0).unwrap()
}

#[test]
fn two_by_two_matches_characteristic_roots() {
    let mut rng = seeded_rng(21);
    for _ in 0..500 {
        let (a, b, d) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let m = sym(Matrix::from_rows(&[[a, b], [b, d]]).unwrap());
        let got = sym_eig(&m).unwrap();
        let want = oracles::eig2(a, b, d);
        // Library order is descending.
        assert!((got.values()[0] - want[1]).abs() <= 1e-9);
        assert!((got.values()[1] - want[0]).abs() <= 1e-9);
    }
}

#[test]
fn three_by_three_matches_characteristic_roots() {
    let mut rng = seeded_rng(22);
    for _ in 0..500 {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let v = rng.gen_range(-5.0..5.0);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        let got = sym_eig(&sym(Matrix::from_rows(&m).unwrap())).unwrap();
        let want = oracles::eig3(m);
        for k in 0..3 {
            assert!((got.values()[k] - want[2 - k]).abs() <= 1e-9, "{:?} vs {want:?}", got.values());
        }
    }
}

#[test]
fn repeated_roots_are_found() {
    let m = sym(Matrix::from_rows(&[[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -1.0]]).unwrap());
    let got = sym_eig(&m).unwrap();
    assert_eq!(got.values(), &[2.0, 2.0, -1.0]);
}

#[test]
fn reconstruction_and_orthonormality_up_to_order_64() {
    for (i, &n) in [1usize, 2, 5, 16, 33, 64].iter().enumerate() {
        let mut rng = seeded_rng(100 + i as u64);
        let g = gaussian_matrix::<f64>(n, n, 1.0, &mut rng);
        let m = sym(g);
        for method in [EigenMethod::Jacobi, EigenMethod::TridiagonalQl] {
            let e = sym_eig_with(&m, method).unwrap();
            let err = e.reconstruct().sub(m.matrix()).unwrap().frobenius_norm();
            assert!(err <= 1e-7 * m.matrix().frobenius_norm(), "n={n} {method:?}: {err:e}");
            let v = e.vectors();
            let gram = v.transpose().matmul(v).unwrap();
            let orth = gram.sub(&Matrix::identity(n)).unwrap().max_abs();
            assert!(orth <= 1e-10, "n={n} {method:?}: {orth:e}");
            assert!(e.values().windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
