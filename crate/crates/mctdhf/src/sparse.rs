//! Compressed sparse row matrices over complex numbers, with the iterative
//! solvers used by the mass and Poisson systems.

use num_complex::Complex64;
use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

/// Structural hint recorded at assembly time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    /// A = A^dagger (real spectra; conjugated inner products apply)
    Hermitian,
    /// A = A^T with complex entries (exterior complex scaling)
    ComplexSymmetric,
    None,
}

/// Square sparse operator in CSR form.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<Complex64>,
    pub symmetry: Symmetry,
}

/// Accumulates (row, col, value) triplets; duplicate entries are summed.
pub struct CooBuilder {
    dim: usize,
    entries: Vec<(u32, u32, Complex64)>,
}

impl CooBuilder {
    pub fn new(dim: usize) -> Self {
        CooBuilder { dim, entries: Vec::new() }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: Complex64) {
        if val != Complex64::ZERO {
            self.entries.push((row as u32, col as u32, val));
        }
    }

    pub fn extend_from(&mut self, other: CooBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn build(mut self, symmetry: Symmetry) -> SparseOperator {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut col_idx: Vec<u32> = Vec::with_capacity(self.entries.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
            row_ptr[r as usize + 1] = col_idx.len();
        }
        // rows with no entries inherit the previous offset
        for r in 1..=self.dim {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        SparseOperator { dim: self.dim, row_ptr, col_idx, values, symmetry }
    }
}

impl SparseOperator {
    pub fn zero(dim: usize, symmetry: Symmetry) -> Self {
        SparseOperator {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            symmetry,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::ZERO; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    /// y = A x, writing into `y`. Row-parallel, so the reduction order within
    /// each row is fixed and results are deterministic.
    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        if self.dim > 4096 {
            y.par_iter_mut().enumerate().for_each(|(r, yr)| {
                let mut acc = Complex64::ZERO;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.values[k] * x[self.col_idx[k] as usize];
                }
                *yr = acc;
            });
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                let mut acc = Complex64::ZERO;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.values[k] * x[self.col_idx[k] as usize];
                }
                *yr = acc;
            }
        }
    }

    /// y += alpha * A x
    pub fn apply_scaled_add(&self, alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = Complex64::ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[r] += alpha * acc;
        }
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        let mut d = vec![Complex64::ZERO; self.dim];
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] as usize == r {
                    d[r] += self.values[k];
                }
            }
        }
        d
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] as usize != r && self.values[k] != Complex64::ZERO {
                    return false;
                }
            }
        }
        true
    }

    /// C = A + alpha B (merged sparsity).
    pub fn add_scaled(&self, other: &SparseOperator, alpha: Complex64) -> SparseOperator {
        assert_eq!(self.dim, other.dim);
        let mut b = CooBuilder::new(self.dim);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                b.push(r, self.col_idx[k] as usize, self.values[k]);
            }
            for k in other.row_ptr[r]..other.row_ptr[r + 1] {
                b.push(r, other.col_idx[k] as usize, alpha * other.values[k]);
            }
        }
        let sym = if self.symmetry == other.symmetry { self.symmetry } else { Symmetry::None };
        b.build(sym)
    }

    /// Replace the rows and columns in `dofs` by identity (value 1 on the
    /// diagonal, 0 elsewhere). Used to pin Dirichlet values.
    pub fn with_identity_at(&self, dofs: &[bool]) -> SparseOperator {
        assert_eq!(dofs.len(), self.dim);
        let mut b = CooBuilder::new(self.dim);
        for r in 0..self.dim {
            if dofs[r] {
                b.push(r, r, Complex64::new(1.0, 0.0));
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                if !dofs[c] {
                    b.push(r, c, self.values[k]);
                }
            }
        }
        b.build(self.symmetry)
    }

    /// Coordinate-format text dump: `row col re im`, one entry per line.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(
                    w,
                    "{} {} {:.16e} {:.16e}",
                    r, self.col_idx[k], self.values[k].re, self.values[k].im
                )?;
            }
        }
        Ok(())
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k] as usize;
                let v_t = self.get(c, r);
                let diff = match self.symmetry {
                    Symmetry::Hermitian => (self.values[k] - v_t.conj()).norm(),
                    _ => (self.values[k] - v_t).norm(),
                };
                worst = worst.max(diff);
            }
        }
        worst
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[k] as usize == c {
                return self.values[k];
            }
        }
        Complex64::ZERO
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("iterative solver did not reach tolerance {tol:e} in {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, tol: f64, residual: f64 },
}

/// Outcome of an iterative solve.
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn dot_plain(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned conjugate gradient for Hermitian positive definite
/// systems; also serves complex-symmetric systems via the unconjugated (COCG)
/// inner product, selected from the operator's symmetry hint.
pub fn cg_solve(
    a: &SparseOperator,
    rhs: &[Complex64],
    x0: Option<&[Complex64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<Complex64>, SolveReport), SolveError> {
    let n = a.dim;
    let conjugated = a.symmetry != Symmetry::ComplexSymmetric;
    let inner = if conjugated { dot_conj } else { dot_plain };
    let diag = a.diagonal();
    let precond = |r: &[Complex64], z: &mut Vec<Complex64>| {
        z.clear();
        z.extend(r.iter().zip(&diag).map(|(ri, di)| {
            if di.norm() > 0.0 {
                ri / di
            } else {
                *ri
            }
        }));
    };

    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => vec![Complex64::ZERO; n],
    };
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok((vec![Complex64::ZERO; n], SolveReport { iterations: 0, residual: 0.0 }));
    }

    let mut r = rhs.to_vec();
    if x0.is_some() {
        let ax = a.apply(&x);
        for i in 0..n {
            r[i] -= ax[i];
        }
    }
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = inner(&r, &z);

    let mut res = norm(&r) / rhs_norm;
    if res <= tol {
        return Ok((x, SolveReport { iterations: 0, residual: res }));
    }

    for it in 1..=max_iter {
        let ap = a.apply(&p);
        let pap = inner(&p, &ap);
        if pap.norm() == 0.0 {
            return Err(SolveError::NoConvergence { iters: it, tol, residual: res });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / rhs_norm;
        if res <= tol {
            return Ok((x, SolveReport { iterations: it, residual: res }));
        }
        precond(&r, &mut z);
        let rz_new = inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::NoConvergence { iters: max_iter, tol, residual: res })
}
