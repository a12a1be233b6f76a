//! MCTDHF equations of motion.
//!
//! Within a step the reduced density matrices, mean fields, and the
//! Q-projector are frozen at the step's starting wave function, which turns
//! the orbital equations into one linear system over the stacked orbital
//! vector: i d/dt phi = G phi. That frozen operator G is what the Arnoldi
//! propagator exponentiates; the CI coefficients evolve under the sigma
//! vector with integrals from the same snapshot.

use crate::ci::{self, DeterminantSpace, OrbitalIntegrals, RdmPair};
use crate::fem::{mass_inverse_apply, FeSpace, OneBody};
use crate::linalg::hermitian_pinv;
use crate::meanfield::{build_table, Interaction, MeanFieldTable, PoissonContext};
use crate::mesh::MAX_DIM;
use crate::sparse::{SolveError, SparseOperator};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EomError {
    #[error("one-body density matrix is numerically singular: all {m} occupations below cutoff")]
    SingularDensity { m: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Everything fixed for a run: discretization, assembled operators, and the
/// determinant space.
pub struct System {
    pub space: FeSpace,
    /// T, V, Dgrad with zero-Dirichlet rows/cols at the box boundary.
    pub one_body: OneBody,
    /// ECS-scaled mass with identity rows at boundary masters.
    pub mass: SparseOperator,
    pub interaction: Interaction,
    pub poisson: Option<PoissonContext>,
    pub dets: DeterminantSpace,
    pub mass_tol: f64,
}

impl System {
    /// Assemble all operators for a run: one-body pieces with zero-Dirichlet
    /// elimination at the box boundary, the (possibly complex-scaled) mass
    /// with identity boundary rows, and the Poisson context in 3D.
    pub fn build(
        space: FeSpace,
        nuclei: &crate::fem::Nuclei,
        coulomb: crate::fem::CoulombHandling,
        dets: DeterminantSpace,
        interaction: Interaction,
        poisson_tol: f64,
        mass_tol: f64,
    ) -> Result<System, crate::fem::FemError> {
        let ob = crate::fem::assemble_one_body(&space, nuclei, coulomb)?;
        let bc = &space.boundary_master;
        let one_body = OneBody {
            kinetic: crate::fem::apply_zero_dirichlet(&ob.kinetic, bc),
            potential: crate::fem::apply_zero_dirichlet(&ob.potential, bc),
            dgrad: ob.dgrad.iter().map(|d| crate::fem::apply_zero_dirichlet(d, bc)).collect(),
        };
        let mass = crate::fem::mass_matrix(&space).with_identity_at(bc);
        let poisson = match interaction {
            Interaction::Poisson3d => Some(PoissonContext::new(&space, poisson_tol)),
            Interaction::SoftCore { .. } => None,
        };
        Ok(System { space, one_body, mass, interaction, poisson, dets, mass_tol })
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_masters
    }

    pub fn n_orbitals(&self) -> usize {
        self.dets.n_orbitals
    }
}

/// M orbital coefficient vectors plus the CI vector.
#[derive(Clone)]
pub struct WaveFunction {
    pub orbitals: Vec<Vec<Complex64>>,
    pub ci: Vec<Complex64>,
}

impl WaveFunction {
    pub fn stack(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.orbitals.len() * self.orbitals[0].len());
        for o in &self.orbitals {
            out.extend_from_slice(o);
        }
        out
    }

    pub fn unstack_into(&mut self, stacked: &[Complex64]) {
        let n = self.orbitals[0].len();
        for (p, o) in self.orbitals.iter_mut().enumerate() {
            o.copy_from_slice(&stacked[p * n..(p + 1) * n]);
        }
    }

    /// Max deviation of <phi_p | phi_q> from the identity (real-metric,
    /// theta = 0 quadrature).
    pub fn orthonormality_error(&self, space: &FeSpace) -> f64 {
        let m = self.orbitals.len();
        let mut worst = 0.0f64;
        for p in 0..m {
            for q in 0..m {
                let o = space.inner_real(&self.orbitals[p], &self.orbitals[q]);
                let expect = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((o - Complex64::new(expect, 0.0)).norm());
            }
        }
        worst
    }
}

/// Snapshot of the nonlinear couplings at one instant.
pub struct FrozenCoupling {
    pub rdms: RdmPair,
    pub dinv: DMatrix<Complex64>,
    pub mft: MeanFieldTable,
    pub ints: OrbitalIntegrals,
    pub a_t: [f64; MAX_DIM],
    /// Orbitals defining the frozen Q-projector.
    pub snapshot: Vec<Vec<Complex64>>,
    /// B[p][q] nodal vectors: sum_{o,r,s} (D^-1)^o_p P^{qs}_{or} W^r_s.
    coupling: Vec<Vec<Complex64>>,
    /// Natural occupations dropped by the pseudo-inverse cutoff.
    pub dropped_occupations: usize,
}

pub const OCCUPATION_CUTOFF: f64 = 1e-8;

/// Capture RDMs, the regularized D^-1, the mean-field table, orbital-basis
/// integrals, and A(t) from one consistent wave function snapshot.
pub fn freeze(
    system: &System,
    wf: &WaveFunction,
    a_t: [f64; MAX_DIM],
) -> Result<FrozenCoupling, EomError> {
    let m = wf.orbitals.len();
    let mut c = wf.ci.clone();
    ci::normalize(&mut c);
    let rdms = ci::rdm2(&system.dets, &c);
    let (dinv, dropped) = hermitian_pinv(&rdms.d, OCCUPATION_CUTOFF);
    if dropped == m {
        return Err(EomError::SingularDensity { m });
    }
    let mft =
        build_table(&system.space, system.interaction, system.poisson.as_ref(), &wf.orbitals)?;
    let ints = ci::integrals(&system.space, &system.one_body, &mft, &a_t, &wf.orbitals);

    // B[p][q] = sum_{r,s} [sum_o (D^-1)^o_p P^{qs}_{or}] W^r_s
    let n_nodes = system.space.n_nodes;
    let coupling: Vec<Vec<Complex64>> = (0..m * m)
        .into_par_iter()
        .map(|pq| {
            let (p, q) = (pq / m, pq % m);
            let mut b = vec![Complex64::ZERO; n_nodes];
            for r in 0..m {
                for s in 0..m {
                    let mut t = Complex64::ZERO;
                    for o in 0..m {
                        t += dinv[(o, p)] * rdms.p(q, s, o, r);
                    }
                    if t == Complex64::ZERO {
                        continue;
                    }
                    let w = mft.get(r, s);
                    for n in 0..n_nodes {
                        b[n] += t * w[n];
                    }
                }
            }
            b
        })
        .collect();

    Ok(FrozenCoupling {
        rdms,
        dinv,
        mft,
        ints,
        a_t,
        snapshot: wf.orbitals.clone(),
        coupling,
        dropped_occupations: dropped,
    })
}

impl FrozenCoupling {
    pub fn coupling_vector(&self, p: usize, q: usize) -> &[Complex64] {
        &self.coupling[p * self.snapshot.len() + q]
    }
}

/// The packed frozen orbital operator: out = G(stacked), where
/// i d/dt phi_p = (G phi)_p on the snapshot. Linear in `stacked`.
pub fn apply_g(
    system: &System,
    fc: &FrozenCoupling,
    stacked: &[Complex64],
    out: &mut [Complex64],
) -> Result<(), EomError> {
    let m = fc.snapshot.len();
    let n = system.n_dofs();
    assert_eq!(stacked.len(), m * n);
    assert_eq!(out.len(), m * n);
    let space = &system.space;

    // nodal values of every input orbital (constraint-expanded)
    let nodal: Vec<Vec<Complex64>> =
        (0..m).map(|p| space.nodal_values(&stacked[p * n..(p + 1) * n])).collect();

    let results: Vec<Vec<Complex64>> = (0..m)
        .into_par_iter()
        .map(|p| -> Result<Vec<Complex64>, EomError> {
            let u_p = &stacked[p * n..(p + 1) * n];
            // y = H1 u_p  (T + V - i A . grad)
            let mut y = system.one_body.kinetic.apply(u_p);
            system.one_body.potential.apply_scaled_add(Complex64::new(1.0, 0.0), u_p, &mut y);
            for axis in 0..space.dim() {
                if fc.a_t[axis] != 0.0 {
                    system.one_body.dgrad[axis].apply_scaled_add(
                        Complex64::new(0.0, -fc.a_t[axis]),
                        u_p,
                        &mut y,
                    );
                }
            }
            // + M (sum_q B[p][q] o u_q), quadrature load of the nodal product
            let mut prod = vec![Complex64::ZERO; space.n_nodes];
            for q in 0..m {
                let b = fc.coupling_vector(p, q);
                for (pr, (bv, uv)) in prod.iter_mut().zip(b.iter().zip(&nodal[q])) {
                    *pr += bv * uv;
                }
            }
            let load = space.load_from_nodal(&prod, true);
            for (yk, lk) in y.iter_mut().zip(&load) {
                *yk += lk;
            }
            for mb in 0..n {
                if space.boundary_master[mb] {
                    y[mb] = Complex64::ZERO;
                }
            }
            // Q projection: y <- y - M sum_q c_q (c_q^dagger y)
            let mut shadow = vec![Complex64::ZERO; n];
            for cq in &fc.snapshot {
                let amp: Complex64 = cq.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
                if amp != Complex64::ZERO {
                    for (s, c) in shadow.iter_mut().zip(cq) {
                        *s += amp * c;
                    }
                }
            }
            let ms = system.mass.apply(&shadow);
            for i in 0..n {
                y[i] -= ms[i];
            }
            // out_p = M^-1 y
            let x = mass_inverse_apply(&system.mass, &y, system.mass_tol)?;
            Ok(x)
        })
        .collect::<Result<Vec<_>, _>>()?;

    for (p, r) in results.into_iter().enumerate() {
        out[p * n..(p + 1) * n].copy_from_slice(&r);
    }
    Ok(())
}

/// Right-hand side of the orbital equations: d/dt phi = -i G phi on the
/// frozen snapshot.
pub fn orbital_rhs(
    system: &System,
    fc: &FrozenCoupling,
    stacked: &[Complex64],
) -> Result<Vec<Complex64>, EomError> {
    let mut g = vec![Complex64::ZERO; stacked.len()];
    apply_g(system, fc, stacked, &mut g)?;
    Ok(g.into_iter().map(|v| v * Complex64::new(0.0, -1.0)).collect())
}

/// CI right-hand side: dC/dt = -i sigma(C) with the snapshot integrals.
pub fn ci_rhs(system: &System, fc: &FrozenCoupling, c: &[Complex64]) -> Vec<Complex64> {
    ci::sigma(&system.dets, &fc.ints, c)
        .into_iter()
        .map(|v| v * Complex64::new(0.0, -1.0))
        .collect()
}

/// E = sum_pq D^p_q h^q_p + 1/2 sum P^{pq}_{sr} g^{sr}_{pq}; the imaginary
/// part vanishes without ECS.
pub fn total_energy(fc: &FrozenCoupling) -> Complex64 {
    let m = fc.snapshot.len();
    let mut e = Complex64::ZERO;
    for p in 0..m {
        for q in 0..m {
            e += fc.rdms.d[(p, q)] * fc.ints.h[(q, p)];
        }
    }
    for p in 0..m {
        for q in 0..m {
            for s in 0..m {
                for r in 0..m {
                    e += 0.5 * fc.rdms.p(p, q, s, r) * fc.ints.g(s, r, p, q);
                }
            }
        }
    }
    e
}

/// Per-step knobs of the real-time scheme.
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub m_max: usize,
    pub arnoldi_tol: f64,
    /// Propagate C over dt/2 before and after the orbital step instead of a
    /// single full CI step after it.
    pub strang_ci_split: bool,
}

pub struct StepInfo {
    pub energy: Complex64,
    pub orbital_report: crate::krylov::StepReport,
    pub ci_reports: Vec<crate::krylov::StepReport>,
    pub dropped_occupations: usize,
}

/// One first-order real-time step: freeze at t, propagate the stacked
/// orbitals by exp(-i G dt), then the CI vector by exp(-i H dt) with the
/// frozen integrals (orbitals first, then coefficients).
pub fn real_time_step(
    system: &System,
    wf: &mut WaveFunction,
    a_t: [f64; MAX_DIM],
    dt: f64,
    opts: &StepOptions,
) -> Result<StepInfo, crate::krylov::KrylovError> {
    let fc = freeze(system, wf, a_t)?;
    advance_with(system, &fc, wf, dt, opts)
}

/// The advance half of `real_time_step`, for callers that already hold the
/// frozen snapshot (the run loop reuses it for observables).
pub fn advance_with(
    system: &System,
    fc: &FrozenCoupling,
    wf: &mut WaveFunction,
    dt: f64,
    opts: &StepOptions,
) -> Result<StepInfo, crate::krylov::KrylovError> {
    let energy = total_energy(fc);
    let mut ci_reports = Vec::new();

    let mut ci_step = |wf: &mut WaveFunction,
                       tau: f64|
     -> Result<crate::krylov::StepReport, crate::krylov::KrylovError> {
        let (cnext, rep) = crate::krylov::arnoldi_exp(
            |x, y| ci::sigma_into(&system.dets, &fc.ints, x, y),
            &wf.ci,
            Complex64::new(tau, 0.0),
            opts.m_max,
            opts.arnoldi_tol,
        )?;
        wf.ci = cnext;
        Ok(rep)
    };

    if opts.strang_ci_split {
        ci_reports.push(ci_step(wf, 0.5 * dt)?);
    }
    let stacked = wf.stack();
    let (next, orbital_report) = crate::krylov::arnoldi_exp(
        |x, y| {
            apply_g(system, fc, x, y).expect("mass solve failed inside Arnoldi");
        },
        &stacked,
        Complex64::new(dt, 0.0),
        opts.m_max,
        opts.arnoldi_tol,
    )?;
    wf.unstack_into(&next);
    if opts.strang_ci_split {
        ci_reports.push(ci_step(wf, 0.5 * dt)?);
    } else {
        ci_reports.push(ci_step(wf, dt)?);
    }

    Ok(StepInfo {
        energy,
        orbital_report,
        ci_reports,
        dropped_occupations: fc.dropped_occupations,
    })
}

/// Deterministic starting orbitals: seeded random vectors relaxed for a few
/// single-particle imaginary-time steps exp(-M^-1 H1 tau) and Loewdin
/// orthonormalized, which lands them near the lowest M one-body states.
pub fn seed_orbitals(
    system: &System,
    m: usize,
    seed: u64,
    burn_steps: usize,
    tau: f64,
) -> Vec<Vec<Complex64>> {
    use rand::{Rng, SeedableRng};
    let n = system.n_dofs();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut orbitals: Vec<Vec<Complex64>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|i| {
                    if system.space.boundary_master[i] {
                        Complex64::ZERO
                    } else {
                        Complex64::new(rng.gen::<f64>() - 0.5, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    lowdin_orthonormalize(&system.space, &mut orbitals);
    for _ in 0..burn_steps {
        for p in 0..m {
            let (next, _) = crate::krylov::arnoldi_exp(
                |x, y| {
                    let mut h = system.one_body.kinetic.apply(x);
                    system.one_body.potential.apply_scaled_add(
                        Complex64::new(1.0, 0.0),
                        x,
                        &mut h,
                    );
                    let inv = mass_inverse_apply(&system.mass, &h, system.mass_tol)
                        .expect("mass solve failed in orbital seeding");
                    y.copy_from_slice(&inv);
                },
                &orbitals[p],
                Complex64::new(0.0, -tau),
                20,
                1e-10,
            )
            .expect("seeding step failed");
            orbitals[p] = next;
        }
        lowdin_orthonormalize(&system.space, &mut orbitals);
    }
    orbitals
}

/// Reference-determinant CI vector with a small deterministic admixture to
/// break accidental symmetry traps in imaginary time.
pub fn seed_ci(dets: &DeterminantSpace, seed: u64) -> Vec<Complex64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut c = vec![Complex64::ZERO; dets.dim()];
    c[dets.reference_index()] = Complex64::new(1.0, 0.0);
    for v in c.iter_mut() {
        *v += Complex64::new(1e-3 * (rng.gen::<f64>() - 0.5), 0.0);
    }
    ci::normalize(&mut c);
    c
}

/// Loewdin-orthonormalize the orbitals in the real (theta = 0) metric.
pub fn lowdin_orthonormalize(space: &FeSpace, orbitals: &mut [Vec<Complex64>]) {
    let m = orbitals.len();
    let mut s = DMatrix::<Complex64>::zeros(m, m);
    for p in 0..m {
        for q in 0..m {
            s[(p, q)] = space.inner_real(&orbitals[p], &orbitals[q]);
        }
    }
    let si = crate::linalg::inverse_sqrt(&s);
    let n = orbitals[0].len();
    let old: Vec<Vec<Complex64>> = orbitals.to_vec();
    for p in 0..m {
        for k in 0..n {
            let mut acc = Complex64::ZERO;
            for q in 0..m {
                acc += si[(q, p)] * old[q][k];
            }
            orbitals[p][k] = acc;
        }
    }
}
