//! Per-step expectation values and multiconfiguration overlaps.

use crate::eom::{FrozenCoupling, System, WaveFunction};
use crate::fem::{assemble_dgrad_real, assemble_moment, FeSpace};
use crate::field::FieldSource;
use crate::mesh::MAX_DIM;
use crate::sparse::SparseOperator;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// One output row.
#[derive(Debug, Clone)]
pub struct ObservableRecord {
    pub step: usize,
    pub t: f64,
    /// Euclidean norm of the CI vector.
    pub norm_c: f64,
    /// sqrt|<Psi|Psi>| including orbital overlaps (decays under ECS).
    pub norm_total: f64,
    pub energy: Complex64,
    pub dipole: [f64; MAX_DIM],
    /// <-i grad> + N A(t), per axis.
    pub velocity: [f64; MAX_DIM],
    /// |<Psi(0)|Psi(t)>|^2.
    pub survival: f64,
}

/// Moment and gradient operators used only for observables (plain real
/// quadrature, no complex scaling).
pub struct ObservableOps {
    pub moments: Vec<SparseOperator>,
    pub dgrad: Vec<SparseOperator>,
}

impl ObservableOps {
    pub fn build(space: &FeSpace) -> Self {
        let dim = space.dim();
        let moments = (0..dim)
            .map(|axis| assemble_moment(space, move |p: &[f64; MAX_DIM]| p[axis]))
            .collect();
        let dgrad = assemble_dgrad_real(space);
        ObservableOps { moments, dgrad }
    }
}

/// sum_pq D^p_q <phi_q| Op |phi_p>.
fn one_body_expectation(
    d: &DMatrix<Complex64>,
    op: &SparseOperator,
    orbitals: &[Vec<Complex64>],
) -> Complex64 {
    let m = orbitals.len();
    let mut e = Complex64::ZERO;
    for p in 0..m {
        let op_p = op.apply(&orbitals[p]);
        for q in 0..m {
            let braket: Complex64 =
                orbitals[q].iter().zip(&op_p).map(|(a, b)| a.conj() * b).sum();
            e += d[(p, q)] * braket;
        }
    }
    e
}

/// <Psi_a | Psi_b> for two full CI wave functions over (possibly) different
/// orbital sets, through determinant overlaps det(S_alpha) det(S_beta).
pub fn ci_overlap(system: &System, a: &WaveFunction, b: &WaveFunction) -> Complex64 {
    let dets = &system.dets;
    let m = dets.n_orbitals;
    let space = &system.space;
    let mut s = DMatrix::<Complex64>::zeros(m, m);
    for p in 0..m {
        for q in 0..m {
            s[(p, q)] = space.inner_real(&a.orbitals[p], &b.orbitals[q]);
        }
    }
    let det_block = |strings: &[u64], n_el: usize| -> DMatrix<Complex64> {
        let ns = strings.len();
        let mut out = DMatrix::<Complex64>::zeros(ns, ns);
        for (i, &si) in strings.iter().enumerate() {
            let rows: Vec<usize> = (0..m).filter(|&p| si & (1 << p) != 0).collect();
            for (j, &sj) in strings.iter().enumerate() {
                let cols: Vec<usize> = (0..m).filter(|&p| sj & (1 << p) != 0).collect();
                if n_el == 0 {
                    out[(i, j)] = Complex64::new(1.0, 0.0);
                    continue;
                }
                let sub = DMatrix::<Complex64>::from_fn(n_el, n_el, |r, c| {
                    s[(rows[r], cols[c])]
                });
                out[(i, j)] = sub.determinant();
            }
        }
        out
    };
    let da = det_block(&dets.alpha_strings, dets.n_alpha);
    let db = det_block(&dets.beta_strings, dets.n_beta);
    let (na, nb) = (dets.n_alpha_strings(), dets.n_beta_strings());
    // sum over (ia, ib, ja, jb): conj(Ca) da[ia,ja] db[ib,jb] Cb
    let mut total = Complex64::ZERO;
    for ja in 0..na {
        for jb in 0..nb {
            let cb = b.ci[ja * nb + jb];
            if cb == Complex64::ZERO {
                continue;
            }
            let mut acc = Complex64::ZERO;
            for ia in 0..na {
                let daa = da[(ia, ja)];
                if daa == Complex64::ZERO {
                    continue;
                }
                for ib in 0..nb {
                    acc += a.ci[ia * nb + ib].conj() * daa * db[(ib, jb)];
                }
            }
            total += acc * cb;
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
pub fn record(
    system: &System,
    ops: &ObservableOps,
    fc: &FrozenCoupling,
    wf: &WaveFunction,
    initial: &WaveFunction,
    field: &dyn FieldSource,
    step: usize,
    t: f64,
) -> ObservableRecord {
    let dim = system.space.dim();
    let n_el = system.dets.n_electrons() as f64;
    let mut dipole = [0.0; MAX_DIM];
    let mut velocity = [0.0; MAX_DIM];
    let a_t = field.vector_potential(t);
    for axis in 0..dim {
        dipole[axis] = one_body_expectation(&fc.rdms.d, &ops.moments[axis], &wf.orbitals).re;
        let grad = one_body_expectation(&fc.rdms.d, &ops.dgrad[axis], &wf.orbitals);
        // <-i d/dx> = -i <grad>
        velocity[axis] = (Complex64::new(0.0, -1.0) * grad).re + n_el * a_t[axis];
    }
    let norm_c = crate::ci::norm(&wf.ci);
    let norm_total = ci_overlap(system, wf, wf).norm().sqrt();
    let ovl = ci_overlap(system, initial, wf);
    ObservableRecord {
        step,
        t,
        norm_c,
        norm_total,
        energy: crate::eom::total_energy(fc),
        dipole,
        velocity,
        survival: ovl.norm_sqr(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ci::DEFAULT_DIM_CAP;
    use crate::fem::{build_space, CoulombHandling, Nuclei};
    use crate::meanfield::Interaction;
    use crate::mesh::{build_uniform, SimulationBox};
    use approx::assert_abs_diff_eq;

    fn tiny_system(m_orbitals: usize) -> System {
        let b = SimulationBox::new(&[-8.0], &[8.0]).unwrap();
        let space = build_space(build_uniform(b, 2.0).unwrap(), 3, None).unwrap();
        let nuclei = Nuclei::new(vec![2.0], vec![[0.0; MAX_DIM]], 1.0);
        let dets = crate::ci::enumerate(1, 1, m_orbitals, DEFAULT_DIM_CAP).unwrap();
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

    fn ground_state(system: &System) -> WaveFunction {
        let orbitals =
            crate::eom::seed_orbitals(system, system.n_orbitals(), 5, 10, 0.4);
        let ci = crate::eom::seed_ci(&system.dets, 5);
        let mut wf = WaveFunction { orbitals, ci };
        let opts = crate::krylov::ImagTimeOptions {
            dt: 0.3,
            tol_energy: 1e-11,
            max_steps: 2000,
            m_max: 20,
            arnoldi_tol: 1e-11,
        };
        crate::krylov::propagate_imaginary(system, &mut wf, &opts).unwrap();
        wf
    }

    #[test]
    fn symmetric_ground_state_has_zero_dipole_and_unit_survival() {
        let system = tiny_system(2);
        let wf = ground_state(&system);
        let ops = ObservableOps::build(&system.space);
        let fc = crate::eom::freeze(&system, &wf, [0.0; MAX_DIM]).unwrap();
        let rec = record(
            &system,
            &ops,
            &fc,
            &wf,
            &wf,
            &crate::field::NoField,
            0,
            0.0,
        );
        assert_abs_diff_eq!(rec.dipole[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(rec.velocity[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(rec.survival, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rec.norm_c, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rec.norm_total, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rec.energy.im, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn overlap_reduces_to_ci_dot_for_identical_orbitals() {
        let system = tiny_system(2);
        let orbitals = crate::eom::seed_orbitals(&system, 2, 9, 8, 0.4);
        let mut ca = crate::eom::seed_ci(&system.dets, 1);
        let mut cb = crate::eom::seed_ci(&system.dets, 2);
        crate::ci::normalize(&mut ca);
        crate::ci::normalize(&mut cb);
        let a = WaveFunction { orbitals: orbitals.clone(), ci: ca.clone() };
        let b = WaveFunction { orbitals, ci: cb.clone() };
        let got = ci_overlap(&system, &a, &b);
        let expect: Complex64 = ca.iter().zip(&cb).map(|(x, y)| x.conj() * y).sum();
        assert!((got - expect).norm() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn field_free_eigenstate_record_is_stationary() {
        let system = tiny_system(2);
        let mut wf = ground_state(&system);
        let initial = wf.clone();
        let ops = ObservableOps::build(&system.space);
        let opts = crate::eom::StepOptions {
            m_max: 15,
            arnoldi_tol: 1e-11,
            strang_ci_split: false,
        };
        let fc0 = crate::eom::freeze(&system, &wf, [0.0; MAX_DIM]).unwrap();
        let r0 = record(&system, &ops, &fc0, &wf, &initial, &crate::field::NoField, 0, 0.0);
        for step in 0..20 {
            let _ = crate::eom::real_time_step(
                &system,
                &mut wf,
                [0.0; MAX_DIM],
                0.01,
                &opts,
            )
            .unwrap();
            let _ = step;
        }
        let fc1 = crate::eom::freeze(&system, &wf, [0.0; MAX_DIM]).unwrap();
        let r1 = record(&system, &ops, &fc1, &wf, &initial, &crate::field::NoField, 20, 0.2);
        assert_abs_diff_eq!(r1.energy.re, r0.energy.re, epsilon = 1e-9);
        assert_abs_diff_eq!(r1.dipole[0], r0.dipole[0], epsilon = 1e-8);
        assert_abs_diff_eq!(r1.survival, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r1.norm_c, 1.0, epsilon = 1e-10);
    }
}
