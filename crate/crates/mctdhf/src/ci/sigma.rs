//! Sigma vector: H applied to a CI vector through string excitation lists,
//! without materializing the Hamiltonian.

use super::{DeterminantSpace, OrbitalIntegrals};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

/// sigma = H C. Output-row driven: each (J_alpha, J_beta) accumulates its own
/// incoming contributions, so parallelization over J_alpha rows is free of
/// write conflicts and deterministic.
pub fn sigma(space: &DeterminantSpace, ints: &OrbitalIntegrals, c: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; space.dim()];
    sigma_into(space, ints, c, &mut out);
    out
}

pub fn sigma_into(
    space: &DeterminantSpace,
    ints: &OrbitalIntegrals,
    c: &[Complex64],
    out: &mut [Complex64],
) {
    assert_eq!(c.len(), space.dim());
    assert_eq!(out.len(), space.dim());
    let nb = space.n_beta_strings();
    let m = space.n_orbitals;

    // effective one-body: k_pq = h_pq - 1/2 sum_r g^{pr}_{rq}
    let mut keff = ints.h.clone();
    for p in 0..m {
        for q in 0..m {
            let mut corr = Complex64::ZERO;
            for r in 0..m {
                corr += ints.g(p, r, r, q);
            }
            keff[(p, q)] -= 0.5 * corr;
        }
    }

    let rows: Vec<Vec<Complex64>> = (0..space.n_alpha_strings())
        .into_par_iter()
        .map(|ja| {
            let mut row = vec![Complex64::ZERO; nb];
            // alpha one-electron (+ same-spin contraction term)
            for ea in space.alpha_list(ja) {
                let ia = ea.target as usize;
                let f = keff[(ea.from as usize, ea.to as usize)]
                    * Complex64::new(ea.sign as f64, 0.0);
                let base = ia * nb;
                for jb in 0..nb {
                    row[jb] += f * c[base + jb];
                }
            }
            // alpha-alpha: 1/2 sum g^{pq}_{sr} E_ps E_qr, p = e1.from, s = e1.to
            for e1 in space.alpha_list(ja) {
                let k = e1.target as usize;
                for e2 in space.alpha_list(k) {
                    let ia = e2.target as usize;
                    let g = ints.g(
                        e1.from as usize,
                        e2.from as usize,
                        e1.to as usize,
                        e2.to as usize,
                    );
                    let f = g * Complex64::new(0.5 * (e1.sign * e2.sign) as f64, 0.0);
                    let base = ia * nb;
                    for jb in 0..nb {
                        row[jb] += f * c[base + jb];
                    }
                }
            }
            // beta one-electron and beta-beta, plus the mixed alpha-beta term
            for jb in 0..nb {
                let mut acc = Complex64::ZERO;
                for eb in space.beta_list(jb) {
                    let ib = eb.target as usize;
                    acc += keff[(eb.from as usize, eb.to as usize)]
                        * Complex64::new(eb.sign as f64, 0.0)
                        * c[ja * nb + ib];
                }
                for e1 in space.beta_list(jb) {
                    let k = e1.target as usize;
                    for e2 in space.beta_list(k) {
                        let ib = e2.target as usize;
                        let g = ints.g(
                            e1.from as usize,
                            e2.from as usize,
                            e1.to as usize,
                            e2.to as usize,
                        );
                        acc += g
                            * Complex64::new(0.5 * (e1.sign * e2.sign) as f64, 0.0)
                            * c[ja * nb + ib];
                    }
                }
                row[jb] += acc;
            }
            // mixed: sum g^{pq}_{sr} E^alpha_ps E^beta_qr
            for ea in space.alpha_list(ja) {
                let ia = ea.target as usize;
                let base = ia * nb;
                for jb in 0..nb {
                    let mut acc = Complex64::ZERO;
                    for eb in space.beta_list(jb) {
                        let ib = eb.target as usize;
                        let g = ints.g(
                            ea.from as usize,
                            eb.from as usize,
                            ea.to as usize,
                            eb.to as usize,
                        );
                        acc += g * Complex64::new((ea.sign * eb.sign) as f64, 0.0) * c[base + ib];
                    }
                    row[jb] += acc;
                }
            }
            row
        })
        .collect();
    for (ja, row) in rows.into_iter().enumerate() {
        out[ja * nb..(ja + 1) * nb].copy_from_slice(&row);
    }
}

/// Dense Hamiltonian, column by column through `sigma`. Intended for small
/// oracle problems; hard-capped at dimension 500.
pub fn dense_hamiltonian(space: &DeterminantSpace, ints: &OrbitalIntegrals) -> DMatrix<Complex64> {
    let dim = space.dim();
    assert!(dim <= 500, "dense Hamiltonian requested for dimension {dim} > 500");
    let mut h = DMatrix::<Complex64>::zeros(dim, dim);
    let mut e = vec![Complex64::ZERO; dim];
    for j in 0..dim {
        e[j] = Complex64::new(1.0, 0.0);
        let col = sigma(space, ints, &e);
        for i in 0..dim {
            h[(i, j)] = col[i];
        }
        e[j] = Complex64::ZERO;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci::{enumerate, normalize, rdm2, DEFAULT_DIM_CAP};
    use crate::testutil::fock;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
        fn cplx(&mut self) -> Complex64 {
            c(self.next() - 0.5, self.next() - 0.5)
        }
    }

    /// Random integrals with the physical symmetries, built the way real ones
    /// arise: orbital vectors on an auxiliary grid and a symmetric kernel.
    fn random_integrals(m: usize, seed: u64) -> OrbitalIntegrals {
        let mut rng = Lcg(seed);
        let grid = 7;
        let orbs: Vec<Vec<Complex64>> =
            (0..m).map(|_| (0..grid).map(|_| rng.cplx()).collect()).collect();
        let mut kernel = vec![vec![0.0; grid]; grid];
        for k in 0..grid {
            for l in 0..=k {
                let v = rng.next() - 0.2;
                kernel[k][l] = v;
                kernel[l][k] = v;
            }
        }
        let mut h = DMatrix::<Complex64>::zeros(m, m);
        for p in 0..m {
            for q in 0..=p {
                let v = if p == q { c(rng.next() - 0.5, 0.0) } else { rng.cplx() };
                h[(p, q)] = v;
                h[(q, p)] = v.conj();
            }
        }
        let mut g = vec![Complex64::ZERO; m * m * m * m];
        for p in 0..m {
            for q in 0..m {
                for s in 0..m {
                    for r in 0..m {
                        let mut acc = Complex64::ZERO;
                        for k in 0..grid {
                            for l in 0..grid {
                                acc += orbs[p][k].conj()
                                    * orbs[q][l].conj()
                                    * kernel[k][l]
                                    * orbs[r][l]
                                    * orbs[s][k];
                            }
                        }
                        g[((p * m + q) * m + s) * m + r] = acc;
                    }
                }
            }
        }
        OrbitalIntegrals::from_parts(h, g)
    }

    fn random_ci(dim: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = Lcg(seed);
        let mut v: Vec<Complex64> = (0..dim).map(|_| rng.cplx()).collect();
        normalize(&mut v);
        v
    }

    #[test]
    fn single_determinant_single_orbital() {
        let space = enumerate(1, 0, 1, DEFAULT_DIM_CAP).unwrap();
        assert_eq!(space.dim(), 1);
        let mut h = DMatrix::<Complex64>::zeros(1, 1);
        h[(0, 0)] = c(-0.5, 0.0);
        let ints = OrbitalIntegrals::from_parts(h, vec![Complex64::ZERO; 1]);
        let cv = vec![c(0.8, 0.3)];
        let s = sigma(&space, &ints, &cv);
        assert_abs_diff_eq!((s[0] - c(-0.5, 0.0) * cv[0]).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn doubly_occupied_orbital_energy() {
        // (1,1,2), diagonal h, single interaction element g^{11}_{11} = u:
        // the doubly occupied first orbital has <H> = 2 h_11 + u
        let space = enumerate(1, 1, 2, DEFAULT_DIM_CAP).unwrap();
        let m = 2;
        let mut h = DMatrix::<Complex64>::zeros(m, m);
        h[(0, 0)] = c(-1.2, 0.0);
        h[(1, 1)] = c(0.4, 0.0);
        let u = 0.37;
        let mut g = vec![Complex64::ZERO; m * m * m * m];
        g[0] = c(u, 0.0); // g^{00}_{00}
        let ints = OrbitalIntegrals::from_parts(h, g);
        let mut cv = vec![Complex64::ZERO; space.dim()];
        cv[space.reference_index()] = c(1.0, 0.0);
        let s = sigma(&space, &ints, &cv);
        let e: Complex64 = cv.iter().zip(&s).map(|(a, b)| a.conj() * b).sum();
        assert_abs_diff_eq!(e.re, 2.0 * (-1.2) + u, epsilon = 1e-13);
        assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn dense_hamiltonian_matches_fock_space_oracle() {
        let m = 3;
        let space = enumerate(2, 1, m, DEFAULT_DIM_CAP).unwrap();
        let ints = random_integrals(m, 2024);
        let hd = dense_hamiltonian(&space, &ints);
        let hf = fock::hamiltonian(m, &ints.h, &|p, q, s, r| ints.g(p, q, s, r));
        let idx = fock::sector_indices(&space);
        for i in 0..space.dim() {
            for j in 0..space.dim() {
                let a = hd[(i, j)];
                let b = hf[(idx[i], idx[j])];
                assert!(
                    (a - b).norm() < 1e-11,
                    "H[{i}][{j}] = {a} vs Fock oracle {b}"
                );
            }
        }
    }

    #[test]
    fn rdms_match_fock_space_oracle() {
        let m = 3;
        let space = enumerate(2, 1, m, DEFAULT_DIM_CAP).unwrap();
        let cv = random_ci(space.dim(), 15);
        let rdms = rdm2(&space, &cv);
        let psi = fock::embed(&space, &cv, m);
        let n_sites = 2 * m;
        let ann: Vec<_> = (0..n_sites).map(|j| fock::annihilation(n_sites, j)).collect();
        let site = |p: usize, spin: usize| p + spin * m;
        for p in 0..m {
            for q in 0..m {
                // D^p_q = sum_s <a+_{q s} a_{p s}>
                let mut expect = Complex64::ZERO;
                for spin in 0..2 {
                    let op = ann[site(q, spin)].adjoint() * &ann[site(p, spin)];
                    expect += (psi.adjoint() * (&op * &psi))[(0, 0)];
                }
                assert!(
                    (rdms.d[(p, q)] - expect).norm() < 1e-12,
                    "D[{p}][{q}] mismatch"
                );
            }
        }
        for p in 0..m {
            for q in 0..m {
                for s in 0..m {
                    for r in 0..m {
                        let mut expect = Complex64::ZERO;
                        for sp in 0..2 {
                            for tp in 0..2 {
                                let op = ann[site(s, sp)].adjoint()
                                    * (ann[site(r, tp)].adjoint()
                                        * (&ann[site(q, tp)] * &ann[site(p, sp)]));
                                expect += (psi.adjoint() * (&op * &psi))[(0, 0)];
                            }
                        }
                        assert!(
                            (rdms.p(p, q, s, r) - expect).norm() < 1e-11,
                            "P[{p}{q}{s}{r}] = {} vs {expect}",
                            rdms.p(p, q, s, r)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn dense_hamiltonian_hermitian_two_per_spin() {
        let m = 3;
        let space = enumerate(2, 2, m, DEFAULT_DIM_CAP).unwrap();
        let ints = random_integrals(m, 5);
        let hd = dense_hamiltonian(&space, &ints);
        let mut worst = 0.0f64;
        for i in 0..space.dim() {
            for j in 0..space.dim() {
                let d = (hd[(i, j)] - hd[(j, i)].conj()).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        println!("max |H - H+| = {worst:e}");
        let mut gherm = 0.0f64;
        let mut gpair = 0.0f64;
        for p in 0..m {
            for q in 0..m {
                for s in 0..m {
                    for r in 0..m {
                        gherm = gherm
                            .max((ints.g(p, q, s, r) - ints.g(s, r, p, q).conj()).norm());
                        gpair =
                            gpair.max((ints.g(p, q, s, r) - ints.g(q, p, r, s)).norm());
                    }
                }
            }
        }
        println!("g hermiticity {gherm:e}, g pair symmetry {gpair:e}");
        let mut hherm = 0.0f64;
        for p in 0..m {
            for q in 0..m {
                hherm = hherm.max((ints.h[(p, q)] - ints.h[(q, p)].conj()).norm());
            }
        }
        println!("h hermiticity {hherm:e}");
        let hf = fock::hamiltonian(m, &ints.h, &|p, q, s, r| ints.g(p, q, s, r));
        let idx = fock::sector_indices(&space);
        let mut worst2 = 0.0f64;
        for i in 0..space.dim() {
            for j in 0..space.dim() {
                let d = (hd[(i, j)] - hf[(idx[i], idx[j])]).norm();
                if d > worst2 {
                    worst2 = d;
                }
            }
        }
        println!("max |H - Fock| = {worst2:e}");
        assert!(worst < 1e-10 && worst2 < 1e-10, "H asym {worst:e}, H vs Fock {worst2:e}");
    }

    #[test]
    fn sigma_hermitian_expectation_and_linearity() {
        let m = 4;
        let space = enumerate(2, 2, m, DEFAULT_DIM_CAP).unwrap();
        assert!(space.dim() <= 100);
        let ints = random_integrals(m, 5);
        let cv = random_ci(space.dim(), 77);
        let s = sigma(&space, &ints, &cv);
        let e: Complex64 = cv.iter().zip(&s).map(|(a, b)| a.conj() * b).sum();
        assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-12);

        // linearity
        let u = random_ci(space.dim(), 78);
        let v = random_ci(space.dim(), 79);
        let (a, b) = (c(0.3, -1.1), c(-0.7, 0.2));
        let mix: Vec<Complex64> =
            u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let s_mix = sigma(&space, &ints, &mix);
        let su = sigma(&space, &ints, &u);
        let sv = sigma(&space, &ints, &v);
        for i in 0..space.dim() {
            assert!((s_mix[i] - (a * su[i] + b * sv[i])).norm() < 1e-12);
        }
    }

    #[test]
    fn energy_from_rdms_matches_sigma_expectation() {
        let m = 3;
        let space = enumerate(2, 1, m, DEFAULT_DIM_CAP).unwrap();
        let ints = random_integrals(m, 31);
        let cv = random_ci(space.dim(), 32);
        let s = sigma(&space, &ints, &cv);
        let e_sigma: Complex64 = cv.iter().zip(&s).map(|(a, b)| a.conj() * b).sum();
        let rdms = rdm2(&space, &cv);
        let mut e_rdm = Complex64::ZERO;
        for p in 0..m {
            for q in 0..m {
                e_rdm += rdms.d[(p, q)] * ints.h[(q, p)];
            }
        }
        for p in 0..m {
            for q in 0..m {
                for s1 in 0..m {
                    for r in 0..m {
                        e_rdm += 0.5 * rdms.p(p, q, s1, r) * ints.g(s1, r, p, q);
                    }
                }
            }
        }
        assert!(
            (e_sigma - e_rdm).norm() < 1e-10,
            "sigma energy {e_sigma} vs RDM energy {e_rdm}"
        );
    }
}
