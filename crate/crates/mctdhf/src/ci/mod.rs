//! Full-CI machinery over M spatial orbitals: determinant enumeration,
//! string-wise excitation lists, sigma vectors, and reduced density matrices.
//!
//! Two-electron integral convention, fixed throughout this crate:
//!
//!   g^{pq}_{sr} = integral of phi_p*(1) phi_q*(2) (1/r_12) phi_r(2) phi_s(1)
//!
//! i.e. electron 1 carries the (p, s) pair and electron 2 the (q, r) pair,
//! matching the second-quantized Hamiltonian
//!   H = sum h^p_q a+_p a_q + 1/2 sum g^{pq}_{sr} a+_p a+_q a_r a_s.
//! Index-order bugs dominate this domain; the brute-force quadrature oracle
//! in the integrals tests pins this convention.

mod integrals;
mod rdm;
mod sigma;

pub use integrals::{integrals, OrbitalIntegrals};
pub use rdm::{rdm1, rdm2, RdmPair};
pub use sigma::{dense_hamiltonian, sigma, sigma_into};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CiError {
    #[error("determinant space dimension {dim} exceeds the cap {cap}")]
    Overflow { dim: usize, cap: usize },
    #[error("invalid electron counts: n_alpha={n_alpha}, n_beta={n_beta}, orbitals={m}")]
    BadCounts { n_alpha: usize, n_beta: usize, m: usize },
}

/// One entry of an excitation list: a+_to a_from |string| = sign |target|.
#[derive(Debug, Clone, Copy)]
pub struct Excitation {
    pub target: u32,
    pub to: u8,
    pub from: u8,
    pub sign: i8,
}

/// Complete set of Slater determinants for (n_alpha, n_beta) electrons in M
/// spatial orbitals, as separate alpha/beta occupation strings.
pub struct DeterminantSpace {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub n_orbitals: usize,
    pub alpha_strings: Vec<u64>,
    pub beta_strings: Vec<u64>,
    alpha_exc: Vec<Vec<Excitation>>,
    beta_exc: Vec<Vec<Excitation>>,
}

pub const DEFAULT_DIM_CAP: usize = 20_000_000;

/// All C(m, n) occupation bitstrings in increasing numeric order.
fn enumerate_strings(m: usize, n: usize) -> Vec<u64> {
    if n == 0 {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut s: u64 = (1 << n) - 1;
    let top: u64 = 1 << m;
    while s < top {
        out.push(s);
        // Gosper's hack: next bit pattern with the same popcount
        let c = s & s.wrapping_neg();
        let r = s + c;
        s = (((r ^ s) >> 2) / c) | r;
        if c == 0 {
            break;
        }
    }
    out
}

fn excitation_lists(strings: &[u64], m: usize) -> Vec<Vec<Excitation>> {
    use std::collections::HashMap;
    let index: HashMap<u64, u32> =
        strings.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
    strings
        .iter()
        .map(|&s| {
            let mut list = Vec::new();
            for from in 0..m {
                if s & (1 << from) == 0 {
                    continue;
                }
                let removed = s & !(1u64 << from);
                let sign_from = (removed & ((1u64 << from) - 1)).count_ones();
                for to in 0..m {
                    if removed & (1 << to) != 0 {
                        continue;
                    }
                    let target = removed | (1u64 << to);
                    let sign_to = (removed & ((1u64 << to) - 1)).count_ones();
                    let sign = if (sign_from + sign_to) % 2 == 0 { 1i8 } else { -1 };
                    list.push(Excitation {
                        target: index[&target],
                        to: to as u8,
                        from: from as u8,
                        sign,
                    });
                }
            }
            list
        })
        .collect()
}

/// Enumerate the full determinant space; errors if the dimension exceeds `cap`.
pub fn enumerate(
    n_alpha: usize,
    n_beta: usize,
    m: usize,
    cap: usize,
) -> Result<DeterminantSpace, CiError> {
    if n_alpha > m || n_beta > m || m == 0 || m > 63 {
        return Err(CiError::BadCounts { n_alpha, n_beta, m });
    }
    let na = binomial(m, n_alpha);
    let nb = binomial(m, n_beta);
    let dim = na.checked_mul(nb).unwrap_or(usize::MAX);
    if dim > cap {
        return Err(CiError::Overflow { dim, cap });
    }
    let alpha_strings = enumerate_strings(m, n_alpha);
    let beta_strings = enumerate_strings(m, n_beta);
    debug_assert_eq!(alpha_strings.len(), na);
    debug_assert_eq!(beta_strings.len(), nb);
    let alpha_exc = excitation_lists(&alpha_strings, m);
    let beta_exc = excitation_lists(&beta_strings, m);
    Ok(DeterminantSpace {
        n_alpha,
        n_beta,
        n_orbitals: m,
        alpha_strings,
        beta_strings,
        alpha_exc,
        beta_exc,
    })
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

impl DeterminantSpace {
    pub fn n_alpha_strings(&self) -> usize {
        self.alpha_strings.len()
    }

    pub fn n_beta_strings(&self) -> usize {
        self.beta_strings.len()
    }

    pub fn dim(&self) -> usize {
        self.alpha_strings.len() * self.beta_strings.len()
    }

    #[inline]
    pub fn index(&self, ia: usize, ib: usize) -> usize {
        ia * self.beta_strings.len() + ib
    }

    pub fn n_electrons(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    pub(crate) fn alpha_list(&self, i: usize) -> &[Excitation] {
        &self.alpha_exc[i]
    }

    pub(crate) fn beta_list(&self, i: usize) -> &[Excitation] {
        &self.beta_exc[i]
    }

    /// The CI position of the spin-restricted closed-shell reference
    /// determinant (lowest orbitals doubly occupied), useful as an initial
    /// guess.
    pub fn reference_index(&self) -> usize {
        let sa: u64 = (1 << self.n_alpha) - 1;
        let sb: u64 = if self.n_beta == 0 { 0 } else { (1 << self.n_beta) - 1 };
        let ia = self.alpha_strings.iter().position(|&s| s == sa).unwrap();
        let ib = self.beta_strings.iter().position(|&s| s == sb).unwrap();
        self.index(ia, ib)
    }
}

pub fn norm(c: &[Complex64]) -> f64 {
    c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(c: &mut [Complex64]) {
    let n = norm(c);
    if n > 0.0 {
        for v in c.iter_mut() {
            *v /= n;
        }
    }
}
