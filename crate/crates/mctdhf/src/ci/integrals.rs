//! Orbital-basis matrix elements of the one-body Hamiltonian and of the
//! electron-electron interaction through the mean-field table.

use crate::fem::{FeSpace, OneBody};
use crate::meanfield::MeanFieldTable;
use crate::mesh::MAX_DIM;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

pub struct OrbitalIntegrals {
    pub m: usize,
    /// h^p_q = <phi_p| T + V - i A . grad |phi_q>
    pub h: DMatrix<Complex64>,
    g: Vec<Complex64>,
}

impl OrbitalIntegrals {
    #[inline]
    pub fn g(&self, p: usize, q: usize, s: usize, r: usize) -> Complex64 {
        self.g[((p * self.m + q) * self.m + s) * self.m + r]
    }

    pub fn from_parts(h: DMatrix<Complex64>, g: Vec<Complex64>) -> Self {
        let m = h.nrows();
        assert_eq!(g.len(), m * m * m * m);
        OrbitalIntegrals { m, h, g }
    }
}

/// Build h and g from the assembled operators, the mean-field table, and the
/// vector potential at the current time.
pub fn integrals(
    space: &FeSpace,
    one_body: &OneBody,
    mft: &MeanFieldTable,
    a_t: &[f64; MAX_DIM],
    orbitals: &[Vec<Complex64>],
) -> OrbitalIntegrals {
    let m = orbitals.len();
    assert_eq!(mft.n_orbitals, m);

    // h^p_q: apply the operator once per q, contract against every p
    let mut h = DMatrix::<Complex64>::zeros(m, m);
    let dim = space.dim();
    for q in 0..m {
        let mut hq = one_body.kinetic.apply(&orbitals[q]);
        one_body.potential.apply_scaled_add(Complex64::new(1.0, 0.0), &orbitals[q], &mut hq);
        for axis in 0..dim {
            if a_t[axis] != 0.0 {
                one_body.dgrad[axis].apply_scaled_add(
                    Complex64::new(0.0, -a_t[axis]),
                    &orbitals[q],
                    &mut hq,
                );
            }
        }
        for p in 0..m {
            h[(p, q)] = orbitals[p].iter().zip(&hq).map(|(a, b)| a.conj() * b).sum();
        }
    }

    // g^{pq}_{sr} = sum_n w~_n conj(phi_p) W^q_r phi_s, nodal quadrature with
    // the ECS-scaled weights
    let nodal: Vec<Vec<Complex64>> = orbitals.iter().map(|c| space.nodal_values(c)).collect();
    let n_nodes = space.n_nodes;
    let blocks: Vec<((usize, usize), DMatrix<Complex64>)> = (0..m * m)
        .into_par_iter()
        .map(|qr| {
            let (q, r) = (qr / m, qr % m);
            let w = mft.get(q, r);
            let u: Vec<Complex64> =
                (0..n_nodes).map(|n| space.node_weight_scaled[n] * w[n]).collect();
            let mut x = DMatrix::<Complex64>::zeros(m, m);
            for p in 0..m {
                for s in 0..m {
                    let mut acc = Complex64::ZERO;
                    for n in 0..n_nodes {
                        acc += nodal[p][n].conj() * u[n] * nodal[s][n];
                    }
                    x[(p, s)] = acc;
                }
            }
            ((q, r), x)
        })
        .collect();
    let mut g = vec![Complex64::ZERO; m * m * m * m];
    for ((q, r), x) in blocks {
        for p in 0..m {
            for s in 0..m {
                g[((p * m + q) * m + s) * m + r] = x[(p, s)];
            }
        }
    }
    OrbitalIntegrals { m, h, g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_one_body, build_space, CoulombHandling, Nuclei};
    use crate::meanfield::{build_table, Interaction};
    use crate::mesh::{build_uniform, SimulationBox};
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn tiny_1d() -> FeSpace {
        let b = SimulationBox::new(&[-6.0], &[6.0]).unwrap();
        build_space(build_uniform(b, 2.0).unwrap(), 2, None).unwrap()
    }

    fn orthonormalize(space: &FeSpace, orbs: &mut Vec<Vec<Complex64>>) {
        for i in 0..orbs.len() {
            for j in 0..i {
                let o = space.inner_real(&orbs[j], &orbs[i]);
                let (a, b) = {
                    let (lo, hi) = orbs.split_at_mut(i);
                    (&lo[j], &mut hi[0])
                };
                for (x, y) in b.iter_mut().zip(a) {
                    *x -= o * y;
                }
            }
            let n = space.inner_real(&orbs[i], &orbs[i]).re.sqrt();
            for x in orbs[i].iter_mut() {
                *x /= n;
            }
        }
    }

    #[test]
    fn g_matches_brute_force_double_quadrature() {
        let space = tiny_1d();
        let eps = 1.0;
        let mut orbs = vec![
            space.project(|p| c((-0.5 * p[0] * p[0]).exp())),
            space.project(|p| c(p[0] * (-0.4 * p[0] * p[0]).exp())),
        ];
        orthonormalize(&space, &mut orbs);
        let mft =
            build_table(&space, Interaction::SoftCore { epsilon: eps }, None, &orbs).unwrap();
        let nuclei = Nuclei::new(vec![], vec![], eps);
        let ob = assemble_one_body(&space, &nuclei, CoulombHandling::Error).unwrap();
        let ints = integrals(&space, &ob, &mft, &[0.0; 3], &orbs);

        // independent 2D quadrature over node pairs
        let nodal: Vec<Vec<Complex64>> = orbs.iter().map(|o| space.nodal_values(o)).collect();
        for p in 0..2 {
            for q in 0..2 {
                for s in 0..2 {
                    for r in 0..2 {
                        let mut brute = Complex64::ZERO;
                        for k in 0..space.n_nodes {
                            for l in 0..space.n_nodes {
                                let xk = space.node_coord[k][0];
                                let xl = space.node_coord[l][0];
                                let kern = 1.0 / ((xk - xl) * (xk - xl) + eps).sqrt();
                                brute += space.node_weight[k]
                                    * space.node_weight[l]
                                    * nodal[p][k].conj()
                                    * nodal[q][l].conj()
                                    * kern
                                    * nodal[r][l]
                                    * nodal[s][k];
                            }
                        }
                        let got = ints.g(p, q, s, r);
                        assert!(
                            (got - brute).norm() < 1e-10,
                            "g[{p}{q}{s}{r}] = {got} vs brute {brute}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn h_is_rayleigh_quotient_for_single_orbital() {
        let space = tiny_1d();
        let nuclei = Nuclei::new(vec![1.0], vec![[0.0; MAX_DIM]], 1.0);
        let ob = assemble_one_body(&space, &nuclei, CoulombHandling::Error).unwrap();
        let mut orbs = vec![space.project(|p| c((-0.5 * p[0] * p[0]).exp()))];
        orthonormalize(&space, &mut orbs);
        let mft = build_table(&space, Interaction::SoftCore { epsilon: 1.0 }, None, &orbs).unwrap();
        let ints = integrals(&space, &ob, &mft, &[0.0; 3], &orbs);
        // directly: <phi|(T+V)|phi> / <phi|phi> with <phi|phi> = 1
        let mut hv = ob.kinetic.apply(&orbs[0]);
        ob.potential.apply_scaled_add(c(1.0), &orbs[0], &mut hv);
        let expect: Complex64 = orbs[0].iter().zip(&hv).map(|(a, b)| a.conj() * b).sum();
        assert_abs_diff_eq!((ints.h[(0, 0)] - expect).norm(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ints.h[(0, 0)].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn h_hermitian_without_ecs() {
        let space = tiny_1d();
        let nuclei = Nuclei::new(vec![2.0], vec![[0.5, 0.0, 0.0]], 0.7);
        let ob = assemble_one_body(&space, &nuclei, CoulombHandling::Error).unwrap();
        let mut orbs = vec![
            space.project(|p| c((-0.5 * p[0] * p[0]).exp())),
            space.project(|p| c(p[0] * (-0.3 * p[0] * p[0]).exp())),
            space.project(|p| Complex64::new((-0.2 * p[0] * p[0]).exp(), 0.1 * p[0])),
        ];
        orthonormalize(&space, &mut orbs);
        let mft = build_table(&space, Interaction::SoftCore { epsilon: 1.0 }, None, &orbs).unwrap();
        let ints = integrals(&space, &ob, &mft, &[0.0; 3], &orbs);
        for p in 0..3 {
            for q in 0..3 {
                assert!(
                    (ints.h[(p, q)] - ints.h[(q, p)].conj()).norm() < 1e-12,
                    "h not Hermitian at ({p},{q})"
                );
            }
        }
        // g Hermiticity under (pq <-> sr) conjugation
        for p in 0..3 {
            for q in 0..3 {
                for s in 0..3 {
                    for r in 0..3 {
                        let a = ints.g(p, q, s, r);
                        let b = ints.g(s, r, p, q).conj();
                        assert!((a - b).norm() < 1e-12);
                        // index-pair exchange symmetry g^{pq}_{sr} = g^{qp}_{rs}
                        let d = ints.g(q, p, r, s);
                        assert!((a - d).norm() < 1e-12);
                    }
                }
            }
        }
    }
}
