//! One- and two-body reduced density matrices from a CI vector.

use super::DeterminantSpace;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// D^p_q = sum_sigma < a+_{q sigma} a_{p sigma} > and
/// P^{pq}_{sr} = sum_{sigma tau} < a+_{s sigma} a+_{r tau} a_{q tau} a_{p sigma} >.
pub struct RdmPair {
    pub m: usize,
    pub d: DMatrix<Complex64>,
    p: Vec<Complex64>,
}

impl RdmPair {
    #[inline]
    pub fn p(&self, p: usize, q: usize, s: usize, r: usize) -> Complex64 {
        self.p[((p * self.m + q) * self.m + s) * self.m + r]
    }

    pub fn p_raw(&self) -> &[Complex64] {
        &self.p
    }
}

/// One-body reduced density matrix.
pub fn rdm1(space: &DeterminantSpace, c: &[Complex64]) -> DMatrix<Complex64> {
    let m = space.n_orbitals;
    let nb = space.n_beta_strings();
    let mut d = DMatrix::<Complex64>::zeros(m, m);
    // alpha spin
    for ia in 0..space.n_alpha_strings() {
        for e in space.alpha_list(ia) {
            let ja = e.target as usize;
            let sgn = Complex64::new(e.sign as f64, 0.0);
            let mut acc = Complex64::ZERO;
            for ib in 0..nb {
                acc += c[ja * nb + ib].conj() * c[ia * nb + ib];
            }
            // E_{to,from} expectation feeds D[from][to]
            d[(e.from as usize, e.to as usize)] += sgn * acc;
        }
    }
    // beta spin
    for ib in 0..nb {
        for e in space.beta_list(ib) {
            let jb = e.target as usize;
            let sgn = Complex64::new(e.sign as f64, 0.0);
            let mut acc = Complex64::ZERO;
            for ia in 0..space.n_alpha_strings() {
                acc += c[ia * nb + jb].conj() * c[ia * nb + ib];
            }
            d[(e.from as usize, e.to as usize)] += sgn * acc;
        }
    }
    d
}

/// Two-body reduced density matrix (with the one-body matrix it contracts
/// against in the orbital equations of motion).
pub fn rdm2(space: &DeterminantSpace, c: &[Complex64]) -> RdmPair {
    let m = space.n_orbitals;
    let nb = space.n_beta_strings();
    let na = space.n_alpha_strings();
    let mut p = vec![Complex64::ZERO; m * m * m * m];
    let idx = |pp: usize, qq: usize, ss: usize, rr: usize| ((pp * m + qq) * m + ss) * m + rr;

    // same-spin sigma: <E_sp E_rq> - delta_rp <E_sq>
    // alpha
    for ia in 0..na {
        for e2 in space.alpha_list(ia) {
            let k = e2.target as usize;
            let (r, q) = (e2.to as usize, e2.from as usize);
            for e1 in space.alpha_list(k) {
                let ja = e1.target as usize;
                let (s, pp) = (e1.to as usize, e1.from as usize);
                let sgn = Complex64::new((e1.sign * e2.sign) as f64, 0.0);
                let mut acc = Complex64::ZERO;
                for ib in 0..nb {
                    acc += c[ja * nb + ib].conj() * c[ia * nb + ib];
                }
                p[idx(pp, q, s, r)] += sgn * acc;
            }
        }
        for e in space.alpha_list(ia) {
            let ja = e.target as usize;
            let (s, q) = (e.to as usize, e.from as usize);
            let sgn = Complex64::new(e.sign as f64, 0.0);
            let mut acc = Complex64::ZERO;
            for ib in 0..nb {
                acc += c[ja * nb + ib].conj() * c[ia * nb + ib];
            }
            for rp in 0..m {
                p[idx(rp, q, s, rp)] -= sgn * acc;
            }
        }
    }
    // beta
    for ib in 0..nb {
        for e2 in space.beta_list(ib) {
            let k = e2.target as usize;
            let (r, q) = (e2.to as usize, e2.from as usize);
            for e1 in space.beta_list(k) {
                let jb = e1.target as usize;
                let (s, pp) = (e1.to as usize, e1.from as usize);
                let sgn = Complex64::new((e1.sign * e2.sign) as f64, 0.0);
                let mut acc = Complex64::ZERO;
                for ia in 0..na {
                    acc += c[ia * nb + jb].conj() * c[ia * nb + ib];
                }
                p[idx(pp, q, s, r)] += sgn * acc;
            }
        }
        for e in space.beta_list(ib) {
            let jb = e.target as usize;
            let (s, q) = (e.to as usize, e.from as usize);
            let sgn = Complex64::new(e.sign as f64, 0.0);
            let mut acc = Complex64::ZERO;
            for ia in 0..na {
                acc += c[ia * nb + jb].conj() * c[ia * nb + ib];
            }
            for rp in 0..m {
                p[idx(rp, q, s, rp)] -= sgn * acc;
            }
        }
    }
    // mixed spins: <E^a_sp E^b_rq> into P[p][q][s][r] and the transposed
    // assignment for <E^b_sp E^a_rq>
    for ia in 0..na {
        for ea in space.alpha_list(ia) {
            let ja = ea.target as usize;
            for ib in 0..nb {
                let ci = c[ia * nb + ib];
                if ci == Complex64::ZERO {
                    continue;
                }
                for eb in space.beta_list(ib) {
                    let jb = eb.target as usize;
                    let amp = c[ja * nb + jb].conj()
                        * Complex64::new((ea.sign * eb.sign) as f64, 0.0)
                        * ci;
                    // alpha pair carries (s, p), beta pair carries (r, q)
                    p[idx(ea.from as usize, eb.from as usize, ea.to as usize, eb.to as usize)] +=
                        amp;
                    // beta pair carries (s, p), alpha pair carries (r, q)
                    p[idx(eb.from as usize, ea.from as usize, eb.to as usize, ea.to as usize)] +=
                        amp;
                }
            }
        }
    }

    let d = rdm1(space, c);
    RdmPair { m, d, p }
}
