//! Short-iterative Arnoldi propagator: psi(t + dt) = exp(-i A dt) psi(t) for
//! a general (non-Hermitian) linear map A, with per-step error estimation and
//! adaptive subspace dimension.
//!
//! The time step may be complex: dt = -i*tau turns the call into one
//! imaginary-time step exp(-A tau) psi.

use crate::ci;
use crate::eom::{self, EomError, System, WaveFunction};
use crate::linalg::expm_pade;
use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KrylovError {
    #[error("operator produced non-finite values at Krylov step {step}")]
    NonFinite { step: usize },
    #[error("imaginary-time evolution did not converge to |dE| < {tol:e} within {steps} steps (last |dE| = {last:e})")]
    NoConvergence { steps: usize, tol: f64, last: f64 },
    #[error(transparent)]
    Eom(#[from] EomError),
}

/// Outcome of one Arnoldi exponential step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub dim_used: usize,
    pub error_estimate: f64,
    pub happy_breakdown: bool,
    /// Dimension cap reached before the estimate fell below tolerance.
    pub hit_max: bool,
}

/// First column of exp(-i H dt) for a small (<= 64) matrix.
pub fn exp_hessenberg(h: &DMatrix<Complex64>, dt: Complex64) -> Vec<Complex64> {
    let m = h.nrows();
    assert!(m <= 64, "Hessenberg exponential requested for m = {m} > 64");
    let a = h * (Complex64::new(0.0, -1.0) * dt);
    let f = expm_pade(&a);
    (0..m).map(|i| f[(i, 0)]).collect()
}

/// Approximate exp(-i A dt) v in a Krylov subspace grown until the residual
/// series estimate |beta dt h_{m+1,m} [exp(-i H dt)]_{m,1}| drops below
/// `tol`, or `m_max` is reached. Gram-Schmidt is applied twice per vector.
pub fn arnoldi_exp<F>(
    mut apply: F,
    v: &[Complex64],
    dt: Complex64,
    m_max: usize,
    tol: f64,
) -> Result<(Vec<Complex64>, StepReport), KrylovError>
where
    F: FnMut(&[Complex64], &mut [Complex64]),
{
    let n = v.len();
    assert!(m_max >= 1);
    let beta = norm(v);
    if beta == 0.0 {
        return Ok((
            vec![Complex64::ZERO; n],
            StepReport { dim_used: 0, error_estimate: 0.0, happy_breakdown: true, hit_max: false },
        ));
    }
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m_max + 1);
    basis.push(v.iter().map(|x| x / beta).collect());
    let mut hess = DMatrix::<Complex64>::zeros(m_max + 1, m_max);
    let mut w = vec![Complex64::ZERO; n];

    let mut dim_used = m_max;
    let mut error_estimate = f64::INFINITY;
    let mut happy = false;
    let mut hit_max = false;

    for j in 0..m_max {
        apply(&basis[j], &mut w);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(KrylovError::NonFinite { step: j });
        }
        // modified Gram-Schmidt, two passes
        for _pass in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let hij: Complex64 = vi.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                if hij != Complex64::ZERO {
                    hess[(i, j)] += hij;
                    for (wk, vk) in w.iter_mut().zip(vi) {
                        *wk -= hij * vk;
                    }
                }
            }
        }
        let hnext = norm(&w);
        hess[(j + 1, j)] = Complex64::new(hnext, 0.0);

        let scale = hess.view((0, 0), (j + 2, j + 1)).iter().map(|x| x.norm()).fold(0.0, f64::max);
        let breakdown = hnext <= 1e-14 * scale.max(1e-300);

        let hj = hess.view((0, 0), (j + 1, j + 1)).clone_owned();
        let col = exp_hessenberg(&hj, dt);
        let est = if breakdown {
            0.0
        } else {
            beta * dt.norm() * hnext * col[j].norm()
        };
        if breakdown || est <= tol || j + 1 == m_max {
            dim_used = j + 1;
            error_estimate = est;
            happy = breakdown;
            hit_max = !breakdown && est > tol && j + 1 == m_max;
            let mut out = vec![Complex64::ZERO; n];
            for (i, vi) in basis.iter().enumerate().take(j + 1) {
                let coeff = col[i] * beta;
                for (o, b) in out.iter_mut().zip(vi) {
                    *o += coeff * b;
                }
            }
            return Ok((
                out,
                StepReport { dim_used, error_estimate, happy_breakdown: happy, hit_max },
            ));
        }
        basis.push(w.iter().map(|x| x / hnext).collect());
    }
    unreachable!("loop always returns at j + 1 == m_max");
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct ImagTimeOptions {
    pub dt: f64,
    pub tol_energy: f64,
    pub max_steps: usize,
    pub m_max: usize,
    pub arnoldi_tol: f64,
}

pub struct ImagTimeResult {
    pub energy: f64,
    pub steps: usize,
    /// Energy after every step, for monotonicity checks and logging.
    pub energy_trace: Vec<f64>,
}

/// Relax `wf` to the ground state: alternate imaginary-time Arnoldi steps on
/// the stacked orbitals (Loewdin-orthonormalized each step) and on the CI
/// vector (renormalized each step) until the energy settles to `tol_energy`
/// on two consecutive steps.
pub fn propagate_imaginary(
    system: &System,
    wf: &mut WaveFunction,
    opts: &ImagTimeOptions,
) -> Result<ImagTimeResult, KrylovError> {
    let dt = Complex64::new(0.0, -opts.dt); // exp(-i A dt) -> exp(-A tau)
    let mut trace = Vec::new();
    let mut prev_e = f64::INFINITY;
    let mut last_de = f64::INFINITY;
    let mut settled = 0usize;
    for step in 0..opts.max_steps {
        let fc = eom::freeze(system, wf, [0.0; 3])?;
        let e = eom::total_energy(&fc).re;
        trace.push(e);
        last_de = (e - prev_e).abs();
        if last_de < opts.tol_energy {
            settled += 1;
            if settled >= 2 {
                log::info!("imaginary time converged after {step} steps, E = {e:.12}");
                return Ok(ImagTimeResult { energy: e, steps: step, energy_trace: trace });
            }
        } else {
            settled = 0;
        }
        prev_e = e;

        // orbitals: exp(-G tau) on the stacked vector, then re-orthonormalize
        let stacked = wf.stack();
        let (next, _rep) = arnoldi_exp(
            |x, y| {
                eom::apply_g(system, &fc, x, y).expect("mass solve failed inside Arnoldi");
            },
            &stacked,
            dt,
            opts.m_max,
            opts.arnoldi_tol,
        )?;
        wf.unstack_into(&next);
        eom::lowdin_orthonormalize(&system.space, &mut wf.orbitals);

        // CI: exp(-(H - E) tau), renormalized (the shift only rescales)
        let shift = Complex64::new(e, 0.0);
        let (cnext, _crep) = arnoldi_exp(
            |x, y| {
                ci::sigma_into(&system.dets, &fc.ints, x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi -= shift * xi;
                }
            },
            &wf.ci,
            dt,
            opts.m_max,
            opts.arnoldi_tol,
        )?;
        wf.ci = cnext;
        ci::normalize(&mut wf.ci);
    }
    Err(KrylovError::NoConvergence { steps: opts.max_steps, tol: opts.tol_energy, last: last_de })
}

#[cfg(test)]
mod tests {
    use super::*;
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
    }

    /// Test-side matrix exponential: plain scaled Taylor summation, written
    /// independently of the library's Pade route.
    fn oracle_expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = a.nrows();
        let nrm: f64 = a.iter().map(|x| x.norm()).sum();
        let s = nrm.log2().ceil().max(0.0) as i32 + 4;
        let a1 = a / c(2f64.powi(s), 0.0);
        let mut acc = DMatrix::<Complex64>::identity(n, n);
        let mut term = DMatrix::<Complex64>::identity(n, n);
        for k in 1..60 {
            term = &term * &a1 / c(k as f64, 0.0);
            acc += &term;
        }
        for _ in 0..s {
            acc = &acc * &acc;
        }
        acc
    }

    fn random_matrix(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = Lcg(seed);
        DMatrix::from_fn(n, n, |_, _| c(rng.next() - 0.5, rng.next() - 0.5))
    }

    fn apply_dense(a: &DMatrix<Complex64>) -> impl FnMut(&[Complex64], &mut [Complex64]) + '_ {
        move |x, y| {
            for i in 0..a.nrows() {
                let mut acc = Complex64::ZERO;
                for j in 0..a.ncols() {
                    acc += a[(i, j)] * x[j];
                }
                y[i] = acc;
            }
        }
    }

    #[test]
    fn identity_operator_is_a_phase() {
        let v: Vec<Complex64> = (0..10).map(|i| c(1.0 + i as f64, -0.3)).collect();
        let (out, rep) =
            arnoldi_exp(|x, y| y.copy_from_slice(x), &v, c(0.3, 0.0), 20, 1e-10).unwrap();
        assert!(rep.dim_used <= 2);
        assert!(rep.happy_breakdown);
        let phase = c(0.0, -0.3).exp();
        for (o, vi) in out.iter().zip(&v) {
            assert_abs_diff_eq!((o - phase * vi).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_operator_matches_componentwise_phases() {
        let diag = [1.0, 2.0, 3.0];
        let v = vec![c(1.0, 0.0); 3];
        let dt = c(0.7, 0.0);
        let (out, rep) = arnoldi_exp(
            |x, y| {
                for i in 0..3 {
                    y[i] = c(diag[i], 0.0) * x[i];
                }
            },
            &v,
            dt,
            3,
            1e-12,
        )
        .unwrap();
        assert!(rep.dim_used <= 3);
        for i in 0..3 {
            let expect = (c(0.0, -diag[i]) * dt).exp() * v[i];
            assert_abs_diff_eq!((out[i] - expect).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_nonhermitian_matches_dense_oracle() {
        let n = 64;
        let a = random_matrix(n, 11);
        let mut rng = Lcg(1234);
        let v: Vec<Complex64> = (0..n).map(|_| c(rng.next() - 0.5, rng.next() - 0.5)).collect();
        for dt in [0.05, 0.1] {
            let (out, rep) =
                arnoldi_exp(apply_dense(&a), &v, c(dt, 0.0), n, 1e-12).unwrap();
            assert!(rep.dim_used <= n);
            let exact_m = oracle_expm(&(&a * c(0.0, -dt)));
            let mut exact = vec![Complex64::ZERO; n];
            for i in 0..n {
                for j in 0..n {
                    exact[i] += exact_m[(i, j)] * v[j];
                }
            }
            let err: f64 = out
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / exact.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-9, "dt = {dt}: relative error {err:e}");
        }
    }

    #[test]
    fn norm_preserved_for_hermitian_operator() {
        let n = 32;
        let r = random_matrix(n, 3);
        let a = (&r + r.adjoint()) * c(0.5, 0.0);
        let mut rng = Lcg(9);
        let v: Vec<Complex64> = (0..n).map(|_| c(rng.next() - 0.5, rng.next() - 0.5)).collect();
        let n0 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let (out, _) = arnoldi_exp(apply_dense(&a), &v, c(0.2, 0.0), n, 1e-13).unwrap();
        let n1 = out.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert_abs_diff_eq!(n1, n0, epsilon = 1e-12 * n0);
    }

    #[test]
    fn imaginary_time_damps_excited_components() {
        // A = diag(1, 5): exp(-A tau) suppresses the second component
        let v = vec![c(1.0, 0.0), c(1.0, 0.0)];
        let tau = 2.0;
        let (out, _) = arnoldi_exp(
            |x, y| {
                y[0] = x[0];
                y[1] = c(5.0, 0.0) * x[1];
            },
            &v,
            c(0.0, -tau),
            2,
            1e-14,
        )
        .unwrap();
        assert_abs_diff_eq!(out[0].re, (-tau).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1].re, (-5.0 * tau).exp(), epsilon = 1e-12);
    }

    #[test]
    fn estimator_tracks_true_error_spectrally() {
        let n = 64;
        let a = random_matrix(n, 21);
        let mut rng = Lcg(55);
        let v: Vec<Complex64> = (0..n).map(|_| c(rng.next() - 0.5, rng.next() - 0.5)).collect();
        let dt = 0.1;
        let exact_m = oracle_expm(&(&a * c(0.0, -dt)));
        let mut exact = vec![Complex64::ZERO; n];
        for i in 0..n {
            for j in 0..n {
                exact[i] += exact_m[(i, j)] * v[j];
            }
        }
        let exact_norm = exact.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let mut errs = Vec::new();
        for m in [4usize, 8, 12, 16, 20] {
            // tol = 0 forces the full m dimensions
            let (out, rep) = arnoldi_exp(apply_dense(&a), &v, c(dt, 0.0), m, 0.0).unwrap();
            assert_eq!(rep.dim_used, m);
            assert!(rep.hit_max);
            let err: f64 = out
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / exact_norm;
            errs.push(err);
        }
        // spectral convergence: many orders of magnitude within a few added
        // dimensions, monotone until the oracle's own precision floor
        assert!(errs[4] < errs[0] * 1e-8, "errors {errs:?}");
        for w in errs.windows(2) {
            if w[0] > 1e-11 {
                assert!(w[1] < w[0], "errors not monotone: {errs:?}");
            }
        }
    }

    fn softcore_system_1d(
        z: f64,
        n_alpha: usize,
        n_beta: usize,
        m_orbitals: usize,
        half_width: f64,
        coarse: f64,
        order: usize,
    ) -> System {
        use crate::fem::{build_space, CoulombHandling, Nuclei};
        use crate::meanfield::Interaction;
        use crate::mesh::{build_uniform, SimulationBox};
        let b = SimulationBox::new(&[-half_width], &[half_width]).unwrap();
        let space = build_space(build_uniform(b, coarse).unwrap(), order, None).unwrap();
        let nuclei = Nuclei::new(vec![z], vec![[0.0; 3]], 1.0);
        let dets =
            crate::ci::enumerate(n_alpha, n_beta, m_orbitals, crate::ci::DEFAULT_DIM_CAP).unwrap();
        System::build(
            space,
            &nuclei,
            CoulombHandling::Error,
            dets,
            Interaction::SoftCore { epsilon: 1.0 },
            1e-10,
            1e-12,
        )
        .unwrap()
    }

    #[test]
    fn imaginary_time_hydrogen_matches_eigensolve_oracle() {
        use crate::testutil::{generalized_eigen_real, restrict, to_dense_real};
        let system = softcore_system_1d(1.0, 1, 0, 1, 16.0, 1.0, 3);
        let orbitals = eom::seed_orbitals(&system, 1, 7, 10, 0.5);
        let ci_v = eom::seed_ci(&system.dets, 7);
        let mut wf = WaveFunction { orbitals, ci: ci_v };
        let opts = ImagTimeOptions {
            dt: 0.5,
            tol_energy: 1e-12,
            max_steps: 2000,
            m_max: 20,
            arnoldi_tol: 1e-12,
        };
        let res = propagate_imaginary(&system, &mut wf, &opts).unwrap();

        // independent dense generalized eigensolve on the same discretization
        let h = to_dense_real(&system.one_body.kinetic)
            + to_dense_real(&system.one_body.potential);
        let m = to_dense_real(&crate::fem::mass_matrix(&system.space));
        let keep: Vec<bool> =
            (0..system.n_dofs()).map(|i| !system.space.boundary_master[i]).collect();
        let (vals, _) = generalized_eigen_real(&restrict(&h, &keep), &restrict(&m, &keep));
        assert!(
            (res.energy - vals[0]).abs() < 1e-8,
            "imaginary time E = {} vs oracle {}",
            res.energy,
            vals[0]
        );
        // the 1D soft-core hydrogen ground energy, as computed by the oracle
        assert!((vals[0] + 0.6698).abs() < 5e-3, "oracle energy {} drifted", vals[0]);
    }

    #[test]
    fn imaginary_time_helium_full_basis_matches_exact_diagonalization() {
        use crate::testutil::{two_particle_ground, two_particle_matrices};
        let system0 = softcore_system_1d(2.0, 1, 1, 1, 6.0, 1.5, 2);
        let interior =
            (0..system0.n_dofs()).filter(|&i| !system0.space.boundary_master[i]).count();
        // full-orbital limit: M = number of interior dofs
        let system = softcore_system_1d(2.0, 1, 1, interior, 6.0, 1.5, 2);
        let (h2, m2, _) = two_particle_matrices(&system, 1.0);
        let (e_exact, _) = two_particle_ground(&h2, &m2);

        let orbitals = eom::seed_orbitals(&system, interior, 3, 5, 0.3);
        let ci_v = eom::seed_ci(&system.dets, 3);
        let mut wf = WaveFunction { orbitals, ci: ci_v };
        let opts = ImagTimeOptions {
            dt: 0.6,
            tol_energy: 1e-12,
            max_steps: 3000,
            m_max: 25,
            arnoldi_tol: 1e-12,
        };
        let res = propagate_imaginary(&system, &mut wf, &opts).unwrap();
        assert!(
            (res.energy - e_exact).abs() < 1e-8,
            "MCTDHF full-basis E = {} vs exact diagonalization {}",
            res.energy,
            e_exact
        );
    }

    #[test]
    fn imaginary_time_energy_trace_is_monotone() {
        let system = softcore_system_1d(2.0, 1, 1, 2, 8.0, 2.0, 3);
        let orbitals = eom::seed_orbitals(&system, 2, 11, 10, 0.5);
        let ci_v = eom::seed_ci(&system.dets, 11);
        let mut wf = WaveFunction { orbitals, ci: ci_v };
        let opts = ImagTimeOptions {
            dt: 0.2,
            tol_energy: 1e-11,
            max_steps: 2000,
            m_max: 20,
            arnoldi_tol: 1e-11,
        };
        let res = propagate_imaginary(&system, &mut wf, &opts).unwrap();
        for w in res.energy_trace.windows(2).skip(5) {
            assert!(
                w[1] <= w[0] + 1e-10,
                "energy increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn hessenberg_exponential_small_cases() {
        // 1x1
        let mut h = DMatrix::<Complex64>::zeros(1, 1);
        h[(0, 0)] = c(2.0, 0.0);
        let col = exp_hessenberg(&h, c(0.5, 0.0));
        assert_abs_diff_eq!((col[0] - c(0.0, -1.0).exp()).norm(), 0.0, epsilon = 1e-13);

        // nilpotent 2x2: exp(-i dt [[0,a],[0,0]]) = [[1, -i dt a], [0, 1]]
        let mut n2 = DMatrix::<Complex64>::zeros(2, 2);
        n2[(0, 1)] = c(1.5, 0.0);
        let col = exp_hessenberg(&n2, c(2.0, 0.0));
        assert_abs_diff_eq!(col[0].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(col[1].norm(), 0.0, epsilon = 1e-14);

        // random 12x12: Pade against the independent Taylor route
        let h = random_matrix(12, 8);
        let dt = c(0.31, 0.0);
        let col = exp_hessenberg(&h, dt);
        let full = crate::linalg::expm_taylor(&(&h * (c(0.0, -1.0) * dt)));
        for i in 0..12 {
            assert!(
                (col[i] - full[(i, 0)]).norm() < 1e-12,
                "dual-path disagreement at row {i}"
            );
        }
    }
}
