//! Dense complex linear algebra helpers: matrix exponentials for the Krylov
//! subspace step, and Hermitian eigen-based utilities (pseudo-inverse,
//! Loewdin orthonormalization).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// One-norm of a complex matrix (max column sum).
fn one_norm(a: &DMatrix<Complex64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = (0..a.nrows()).map(|i| a[(i, j)].norm()).sum();
        best = best.max(s);
    }
    best
}

/// exp(A) by scaling-and-squaring with the [13/13] Pade approximant.
pub fn expm_pade(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let theta13 = 5.371920351148152;
    let nrm = one_norm(a);
    let s = if nrm > theta13 {
        (nrm / theta13).log2().ceil() as i32
    } else {
        0
    };
    let a_scaled = a / Complex64::new(2f64.powi(s), 0.0);

    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let cb = |k: usize| Complex64::new(B[k], 0.0);
    let id = DMatrix::<Complex64>::identity(n, n);
    let a2 = &a_scaled * &a_scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (&a6 * cb(13) + &a4 * cb(11) + &a2 * cb(9))
        + &a6 * cb(7)
        + &a4 * cb(5)
        + &a2 * cb(3)
        + &id * cb(1);
    let u = &a_scaled * u_inner;
    let v = &a6 * (&a6 * cb(12) + &a4 * cb(10) + &a2 * cb(8))
        + &a6 * cb(6)
        + &a4 * cb(4)
        + &a2 * cb(2)
        + &id * cb(0);
    let num = &v + &u;
    let den = &v - &u;
    let mut f = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is singular");
    for _ in 0..s {
        f = &f * &f;
    }
    f
}

/// exp(A) by scaling-and-squaring with a machine-precision Taylor series.
/// Independent route used to cross-check the Pade path.
pub fn expm_taylor(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    let nrm = one_norm(a);
    let s = if nrm > 0.25 { (nrm / 0.25).log2().ceil() as i32 } else { 0 };
    let a_scaled = a / Complex64::new(2f64.powi(s), 0.0);
    let mut f = DMatrix::<Complex64>::identity(n, n);
    let mut term = DMatrix::<Complex64>::identity(n, n);
    for k in 1..=30 {
        term = (&term * &a_scaled) / Complex64::new(k as f64, 0.0);
        f += &term;
        if one_norm(&term) < 1e-18 * one_norm(&f) {
            break;
        }
    }
    for _ in 0..s {
        f = &f * &f;
    }
    f
}

/// Hermitian eigendecomposition, eigenvalues ascending.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<Complex64>) {
    let se = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Pseudo-inverse of a Hermitian matrix: eigenvalues above `cutoff` are
/// inverted, the rest are zeroed. Returns the inverse and the number of
/// dropped modes.
pub fn hermitian_pinv(m: &DMatrix<Complex64>, cutoff: f64) -> (DMatrix<Complex64>, usize) {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut dropped = 0;
    let mut inv_diag = DVector::<Complex64>::zeros(n);
    for i in 0..n {
        if vals[i].abs() > cutoff {
            inv_diag[i] = Complex64::new(1.0 / vals[i], 0.0);
        } else {
            dropped += 1;
        }
    }
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        if inv_diag[k] == Complex64::ZERO {
            continue;
        }
        let v = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += inv_diag[k] * v[i] * v[j].conj();
            }
        }
    }
    (out, dropped)
}

/// S^{-1/2} for a Hermitian positive definite overlap matrix.
pub fn inverse_sqrt(s: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (vals, vecs) = hermitian_eigen(s);
    let n = s.nrows();
    let mut out = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        assert!(
            vals[k] > 1e-14,
            "overlap matrix is numerically singular (eigenvalue {:e})",
            vals[k]
        );
        let lam = Complex64::new(1.0 / vals[k].sqrt(), 0.0);
        let v = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += lam * v[i] * v[j].conj();
            }
        }
    }
    out
}
