//! Shared helpers for unit tests: dense reference solvers kept independent
//! of the production code paths they check.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::sparse::SparseOperator;

/// Dense real copy of a sparse operator (panics on imaginary parts).
pub fn to_dense_real(op: &SparseOperator) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(op.dim, op.dim);
    for r in 0..op.dim {
        for k in op.row_ptr[r]..op.row_ptr[r + 1] {
            assert!(
                op.values[k].im.abs() < 1e-14,
                "operator has imaginary entries"
            );
            m[(r, op.col_idx[k] as usize)] += op.values[k].re;
        }
    }
    m
}

pub fn to_dense_complex(op: &SparseOperator) -> DMatrix<Complex64> {
    let mut m = DMatrix::<Complex64>::zeros(op.dim, op.dim);
    for r in 0..op.dim {
        for k in op.row_ptr[r]..op.row_ptr[r + 1] {
            m[(r, op.col_idx[k] as usize)] += op.values[k];
        }
    }
    m
}

/// Lowest eigenpairs of the real symmetric generalized problem
/// H x = lambda M x with M symmetric positive definite, via Cholesky
/// reduction. Returns eigenvalues ascending and eigenvectors as columns.
pub fn generalized_eigen_real(
    h: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let chol = m.clone().cholesky().expect("mass matrix not SPD");
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .expect("Cholesky factor not invertible");
    let a = &linv * h * linv.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let se = a.symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let vals = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    // x = L^{-T} y
    let back = linv.transpose();
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let x = &back * se.eigenvectors.column(i);
        vecs.set_column(k, &x);
    }
    (vals, vecs)
}

/// Restrict a dense matrix to the rows/cols where `keep` is true.
pub fn restrict(m: &DMatrix<f64>, keep: &[bool]) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Dense two-particle matrices for a 1D soft-core system on the interior
/// dofs: H2 = h (x) m + m (x) h + diag(m_k m_l / sqrt((x_k - x_l)^2 + eps)),
/// with the diagonal two-particle mass. Exact-diagonalization oracle for the
/// MCTDHF full-orbital limit.
pub fn two_particle_matrices(
    system: &crate::eom::System,
    epsilon: f64,
) -> (DMatrix<f64>, Vec<f64>, Vec<usize>) {
    let space = &system.space;
    assert_eq!(space.dim(), 1);
    let interior: Vec<usize> =
        (0..space.n_masters).filter(|&i| !space.boundary_master[i]).collect();
    let ni = interior.len();
    let h1 = {
        let t = to_dense_real(&system.one_body.kinetic);
        let v = to_dense_real(&system.one_body.potential);
        let full = &t + &v;
        DMatrix::<f64>::from_fn(ni, ni, |i, j| full[(interior[i], interior[j])])
    };
    let mass = crate::fem::mass_matrix(space);
    assert!(mass.is_diagonal(), "1D meshes are conforming");
    let mdiag = mass.diagonal();
    let m1: Vec<f64> = interior.iter().map(|&i| mdiag[i].re).collect();
    let x1: Vec<f64> =
        interior.iter().map(|&i| space.node_coord[space.master_node[i] as usize][0]).collect();

    let dim = ni * ni;
    let mut h2 = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..ni {
        for l in 0..ni {
            let row = k * ni + l;
            for kp in 0..ni {
                h2[(row, kp * ni + l)] += h1[(k, kp)] * m1[l];
            }
            for lp in 0..ni {
                h2[(row, k * ni + lp)] += m1[k] * h1[(l, lp)];
            }
            let r = (x1[k] - x1[l]).abs();
            h2[(row, row)] += m1[k] * m1[l] / (r * r + epsilon).sqrt();
        }
    }
    let mut m2 = Vec::with_capacity(dim);
    for k in 0..ni {
        for l in 0..ni {
            m2.push(m1[k] * m1[l]);
        }
    }
    (h2, m2, interior)
}

/// Ground state of the generalized problem (H2, diag(m2)).
pub fn two_particle_ground(h2: &DMatrix<f64>, m2: &[f64]) -> (f64, DVector<f64>) {
    let dim = h2.nrows();
    let scale: Vec<f64> = m2.iter().map(|&m| 1.0 / m.sqrt()).collect();
    let ht = DMatrix::<f64>::from_fn(dim, dim, |i, j| scale[i] * h2[(i, j)] * scale[j]);
    let ht = (&ht + ht.transpose()) * 0.5;
    let se = ht.symmetric_eigen();
    let mut best = 0;
    for i in 1..dim {
        if se.eigenvalues[i] < se.eigenvalues[best] {
            best = i;
        }
    }
    let y = se.eigenvectors.column(best);
    let x = DVector::<f64>::from_fn(dim, |i, _| scale[i] * y[i]);
    (se.eigenvalues[best], x)
}

/// Second-quantization oracle on the full Fock space of 2M spin orbitals
/// (Jordan-Wigner occupation-number basis; site p = orbital p alpha, site
/// M + p = orbital p beta). Everything is dense and independent of the
/// string-based CI code it checks.
pub mod fock {
    use super::*;
    use crate::ci::DeterminantSpace;

    /// Annihilation operator for site `j` among `n_sites`, in the basis
    /// |n> = (a+_0)^{n_0} (a+_1)^{n_1} ... |vac>, index = bitmask.
    pub fn annihilation(n_sites: usize, j: usize) -> DMatrix<Complex64> {
        let dim = 1usize << n_sites;
        let mut a = DMatrix::<Complex64>::zeros(dim, dim);
        for n in 0..dim {
            if n & (1 << j) == 0 {
                continue;
            }
            let phase = (n & ((1 << j) - 1)).count_ones();
            let sign = if phase % 2 == 0 { 1.0 } else { -1.0 };
            a[(n ^ (1 << j), n)] = Complex64::new(sign, 0.0);
        }
        a
    }

    /// Dense Fock-space Hamiltonian from h^p_q and g^{pq}_{sr} (the crate's
    /// integral convention: electron 1 on (p, s), electron 2 on (q, r)).
    pub fn hamiltonian(
        m: usize,
        h: &DMatrix<Complex64>,
        g: &dyn Fn(usize, usize, usize, usize) -> Complex64,
    ) -> DMatrix<Complex64> {
        let n_sites = 2 * m;
        let dim = 1usize << n_sites;
        let ann: Vec<DMatrix<Complex64>> =
            (0..n_sites).map(|j| annihilation(n_sites, j)).collect();
        let cre: Vec<DMatrix<Complex64>> = ann.iter().map(|a| a.adjoint()).collect();
        let site = |p: usize, spin: usize| p + spin * m;
        let mut out = DMatrix::<Complex64>::zeros(dim, dim);
        for p in 0..m {
            for q in 0..m {
                if h[(p, q)] == Complex64::ZERO {
                    continue;
                }
                for spin in 0..2 {
                    out += (&cre[site(p, spin)] * &ann[site(q, spin)]) * h[(p, q)];
                }
            }
        }
        for p in 0..m {
            for q in 0..m {
                for s in 0..m {
                    for r in 0..m {
                        let gv = g(p, q, s, r);
                        if gv == Complex64::ZERO {
                            continue;
                        }
                        for sp in 0..2 {
                            for tp in 0..2 {
                                let term = &cre[site(p, sp)]
                                    * (&cre[site(q, tp)]
                                        * (&ann[site(r, tp)] * &ann[site(s, sp)]));
                                out += term * (0.5 * gv);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Fock index of each determinant, in CI ordering. Our determinant
    /// |I_alpha, I_beta> lists alpha creators ascending then beta creators
    /// ascending, which is the ascending-site product: amplitude +1.
    pub fn sector_indices(space: &DeterminantSpace) -> Vec<usize> {
        let m = space.n_orbitals;
        let mut out = Vec::with_capacity(space.dim());
        for ia in 0..space.n_alpha_strings() {
            for ib in 0..space.n_beta_strings() {
                let fock = space.alpha_strings[ia] as usize
                    | ((space.beta_strings[ib] as usize) << m);
                out.push(fock);
            }
        }
        out
    }

    /// Embed a CI vector into the Fock space.
    pub fn embed(space: &DeterminantSpace, c: &[Complex64], m: usize) -> DVector<Complex64> {
        let dim = 1usize << (2 * m);
        let mut v = DVector::<Complex64>::zeros(dim);
        for (i, &fock) in sector_indices(space).iter().enumerate() {
            v[fock] = c[i];
        }
        v
    }
}
