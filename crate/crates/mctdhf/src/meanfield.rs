//! Inter-electronic mean-field potentials W^r_s generated by orbital pair
//! densities.
//!
//! In 3D, each W^r_s solves Poisson's equation with Dirichlet data from the
//! direct boundary integral. In 1D/2D model mode the interaction is the
//! soft-core kernel 1/sqrt(|x-x'|^2 + eps) and W is evaluated by direct
//! quadrature (the 3D Poisson identity does not apply).

use crate::fem::FeSpace;
use crate::sparse::{cg_solve, SolveError, SparseOperator};
use num_complex::Complex64;
use rayon::prelude::*;

/// Electron-electron interaction realization.
#[derive(Debug, Clone, Copy)]
pub enum Interaction {
    /// Bare 1/r via the Poisson solve (3D production path).
    Poisson3d,
    /// Soft-core kernel for low-dimensional models, by direct quadrature.
    SoftCore { epsilon: f64 },
}

/// Precomputed real Laplace operators for the Poisson path.
pub struct PoissonContext {
    /// Stiffness with boundary rows/cols replaced by identity.
    pub stiffness_bc: SparseOperator,
    /// Unmodified stiffness (used to move Dirichlet data to the rhs).
    pub stiffness_raw: SparseOperator,
    pub tol: f64,
}

impl PoissonContext {
    pub fn new(space: &FeSpace, tol: f64) -> Self {
        let raw = crate::fem::assemble_stiffness_real(space);
        let bc = raw.with_identity_at(&space.boundary_master);
        PoissonContext { stiffness_bc: bc, stiffness_raw: raw, tol }
    }
}

/// Mean-field potentials for every ordered orbital pair, stored as nodal
/// values over all global nodes. W[s][r] = conj(W[r][s]).
pub struct MeanFieldTable {
    pub n_orbitals: usize,
    potentials: Vec<Vec<Complex64>>,
    /// CG iteration counts of the r <= s solves (empty in soft-core mode).
    pub iterations: Vec<usize>,
}

impl MeanFieldTable {
    #[inline]
    pub fn get(&self, r: usize, s: usize) -> &[Complex64] {
        &self.potentials[r * self.n_orbitals + s]
    }
}

/// Nodal pair density conj(phi_r) * phi_s over all global nodes.
pub fn pair_density(space: &FeSpace, phi_r: &[Complex64], phi_s: &[Complex64]) -> Vec<Complex64> {
    let r = space.nodal_values(phi_r);
    let s = space.nodal_values(phi_s);
    r.iter().zip(&s).map(|(a, b)| a.conj() * b).collect()
}

fn pair_density_nodal(r: &[Complex64], s: &[Complex64]) -> Vec<Complex64> {
    r.iter().zip(&s.iter().collect::<Vec<_>>()).map(|(a, &b)| a.conj() * b).collect()
}

/// Direct-quadrature Coulomb sum of a nodal density at the boundary masters.
/// Returns one value per master (zero away from the boundary).
pub fn boundary_dirichlet(space: &FeSpace, density: &[Complex64]) -> Vec<Complex64> {
    let dim = space.dim();
    // screen negligible sources
    let scale = density
        .iter()
        .zip(&space.node_weight)
        .map(|(d, &w)| d.norm() * w)
        .fold(0.0f64, f64::max);
    let cutoff = scale * 1e-14;
    let sources: Vec<(usize, Complex64)> = (0..space.n_nodes)
        .filter_map(|n| {
            let q = density[n] * space.node_weight[n];
            if q.norm() > cutoff {
                Some((n, q))
            } else {
                None
            }
        })
        .collect();
    let values: Vec<Complex64> = (0..space.n_masters)
        .into_par_iter()
        .map(|m| {
            if !space.boundary_master[m] {
                return Complex64::ZERO;
            }
            let pb = space.node_coord[space.master_node[m] as usize];
            let mut acc = Complex64::ZERO;
            for &(n, q) in &sources {
                let pn = space.node_coord[n];
                let d2: f64 = (0..dim).map(|k| (pb[k] - pn[k]) * (pb[k] - pn[k])).sum();
                let d = d2.sqrt();
                if d < 1e-10 {
                    continue;
                }
                acc += q / d;
            }
            acc
        })
        .collect();
    values
}

/// Solve  -Laplace W = 4 pi rho  (weak form: K W = 4 pi M rho) with Dirichlet
/// values pinned at the boundary masters. Real theta = 0 operator over the
/// full box; returns nodal values of W and the CG iteration count.
pub fn solve_poisson(
    space: &FeSpace,
    ctx: &PoissonContext,
    density: &[Complex64],
    dirichlet: &[Complex64],
) -> Result<(Vec<Complex64>, usize), SolveError> {
    assert_eq!(density.len(), space.n_nodes);
    assert_eq!(dirichlet.len(), space.n_masters);
    let four_pi = 4.0 * std::f64::consts::PI;
    let mut rhs = space.load_from_nodal(density, false);
    for v in rhs.iter_mut() {
        *v *= four_pi;
    }
    // move boundary data to the right-hand side
    let mut g_ext = vec![Complex64::ZERO; space.n_masters];
    for m in 0..space.n_masters {
        if space.boundary_master[m] {
            g_ext[m] = dirichlet[m];
        }
    }
    let kg = ctx.stiffness_raw.apply(&g_ext);
    for m in 0..space.n_masters {
        if space.boundary_master[m] {
            rhs[m] = g_ext[m];
        } else {
            rhs[m] -= kg[m];
        }
    }
    let (x, rep) = cg_solve(&ctx.stiffness_bc, &rhs, None, ctx.tol, 100_000)?;
    Ok((space.nodal_values(&x), rep.iterations))
}

/// Soft-core mean field by direct quadrature over nodes carrying density.
fn solve_softcore(space: &FeSpace, density: &[Complex64], epsilon: f64) -> Vec<Complex64> {
    let dim = space.dim();
    let scale = density
        .iter()
        .zip(&space.node_weight)
        .map(|(d, &w)| d.norm() * w)
        .fold(0.0f64, f64::max);
    let cutoff = scale * 1e-14;
    let sources: Vec<(usize, Complex64)> = (0..space.n_nodes)
        .filter_map(|n| {
            let q = density[n] * space.node_weight[n];
            if q.norm() > cutoff {
                Some((n, q))
            } else {
                None
            }
        })
        .collect();
    (0..space.n_nodes)
        .into_par_iter()
        .map(|k| {
            let pk = space.node_coord[k];
            let mut acc = Complex64::ZERO;
            for &(n, q) in &sources {
                let pn = space.node_coord[n];
                let d2: f64 = (0..dim).map(|a| (pk[a] - pn[a]) * (pk[a] - pn[a])).sum();
                acc += q / (d2 + epsilon).sqrt();
            }
            acc
        })
        .collect()
}

/// Build all M^2 mean-field potentials from the current orbitals; only
/// r <= s pairs are solved, the rest follow by conjugation.
pub fn build_table(
    space: &FeSpace,
    interaction: Interaction,
    poisson: Option<&PoissonContext>,
    orbitals: &[Vec<Complex64>],
) -> Result<MeanFieldTable, SolveError> {
    let m = orbitals.len();
    let nodal: Vec<Vec<Complex64>> =
        orbitals.iter().map(|c| space.nodal_values(c)).collect();
    let pairs: Vec<(usize, usize)> =
        (0..m).flat_map(|r| (r..m).map(move |s| (r, s))).collect();
    let solved: Vec<Result<(Vec<Complex64>, usize), SolveError>> = pairs
        .par_iter()
        .map(|&(r, s)| {
            let density = pair_density_nodal(&nodal[r], &nodal[s]);
            match interaction {
                Interaction::SoftCore { epsilon } => {
                    Ok((solve_softcore(space, &density, epsilon), 0))
                }
                Interaction::Poisson3d => {
                    let ctx = poisson.expect("Poisson context required in 3D mode");
                    let dirichlet = boundary_dirichlet(space, &density);
                    solve_poisson(space, ctx, &density, &dirichlet)
                }
            }
        })
        .collect();
    let mut potentials = vec![Vec::new(); m * m];
    let mut iterations = Vec::new();
    for (&(r, s), res) in pairs.iter().zip(solved) {
        let (w, iters) = res?;
        if matches!(interaction, Interaction::Poisson3d) {
            iterations.push(iters);
        }
        if r != s {
            potentials[s * m + r] = w.iter().map(|v| v.conj()).collect();
        }
        potentials[r * m + s] = w;
    }
    Ok(MeanFieldTable { n_orbitals: m, potentials, iterations })
}
