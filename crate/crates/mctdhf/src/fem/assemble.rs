//! Operator assembly on the master-dof space: mass, kinetic, nuclear
//! potential, gradient (velocity-gauge) couplings, stiffness, and coordinate
//! moments. Per-cell local matrices are computed in parallel and merged in
//! leaf order, so assembled values are deterministic.

use super::{CoulombHandling, FeSpace, FemError, Nuclei};
use crate::mesh::MAX_DIM;
use crate::quadrature::{gauss_legendre, lagrange_all};
use crate::sparse::{CooBuilder, SparseOperator, Symmetry};
use num_complex::Complex64;
use rayon::prelude::*;

/// One-body operator bundle: kinetic T, nuclear potential V, and the
/// per-axis gradient matrices entering -i A(t) . grad.
pub struct OneBody {
    pub kinetic: SparseOperator,
    pub potential: SparseOperator,
    pub dgrad: Vec<SparseOperator>,
}

struct CellContext {
    /// Per-axis complex Jacobian (h/2, rotated by e^{i theta} when scaled).
    jac: [Complex64; MAX_DIM],
    scaled: u8,
}

impl FeSpace {
    fn cell_context(&self, lp: usize, use_scaling: bool) -> CellContext {
        let cell = self.mesh.leaf(lp);
        let theta = self.ecs.as_ref().map(|c| c.theta).unwrap_or(0.0);
        let scaled = if use_scaling { self.cell_scaled_axes[lp] } else { 0 };
        let mut jac = [Complex64::ZERO; MAX_DIM];
        for k in 0..self.dim() {
            jac[k] = if scaled & (1 << k) != 0 {
                Complex64::from_polar(0.5 * cell.size, theta)
            } else {
                Complex64::new(0.5 * cell.size, 0.0)
            };
        }
        CellContext { jac, scaled }
    }

    /// Scatter a local entry into master-space triplets, condensing
    /// hanging-node constraints.
    fn scatter(
        &self,
        coo: &mut CooBuilder,
        lp: usize,
        i_loc: usize,
        j_loc: usize,
        val: Complex64,
    ) {
        if val == Complex64::ZERO {
            return;
        }
        let gi = self.dof_map[lp][i_loc];
        let gj = self.dof_map[lp][j_loc];
        for (mi, wi) in self.expand_node(gi) {
            for (mj, wj) in self.expand_node(gj) {
                coo.push(mi as usize, mj as usize, val * (wi * wj));
            }
        }
    }
}

fn symmetry_for(space: &FeSpace, use_scaling: bool) -> Symmetry {
    if use_scaling && space.ecs.is_some() && space.cell_scaled_axes.iter().any(|&m| m != 0) {
        Symmetry::ComplexSymmetric
    } else {
        Symmetry::Hermitian
    }
}

pub(super) fn mass_matrix_impl(space: &FeSpace, use_scaling: bool) -> SparseOperator {
    let dim = space.dim();
    let np = space.order + 1;
    let mut coo = CooBuilder::new(space.n_masters);
    for lp in 0..space.mesh.n_leaves() {
        let ctx = space.cell_context(lp, use_scaling);
        for flat in 0..space.nodes_per_cell() {
            let mut w = Complex64::new(1.0, 0.0);
            let mut rem = flat;
            for k in 0..dim {
                w *= space.weights_1d[rem % np] * ctx.jac[k];
                rem /= np;
            }
            space.scatter(&mut coo, lp, flat, flat, w);
        }
    }
    coo.build(symmetry_for(space, use_scaling))
}

/// Overlap ("mass") matrix under the space's quadrature, ECS Jacobians
/// included where tagged. Diagonal whenever the mesh has no hanging nodes.
pub fn mass_matrix(space: &FeSpace) -> SparseOperator {
    mass_matrix_impl(space, true)
}

/// Kinetic energy (1/2) grad . grad assembled by parts; `use_scaling` false
/// gives the real theta = 0 operator (used for Poisson stiffness).
fn kinetic_impl(space: &FeSpace, use_scaling: bool, factor: f64) -> SparseOperator {
    let dim = space.dim();
    let np = space.order + 1;
    let npc = space.nodes_per_cell();
    // reference 1D stiffness: sum_q w_q D[q][i] D[q][j]
    let mut s_ref = vec![vec![0.0; np]; np];
    for i in 0..np {
        for j in 0..np {
            let mut acc = 0.0;
            for q in 0..np {
                acc += space.weights_1d[q] * space.diff_1d[q][i] * space.diff_1d[q][j];
            }
            s_ref[i][j] = acc;
        }
    }
    let locals: Vec<CooBuilder> = (0..space.mesh.n_leaves())
        .into_par_iter()
        .map(|lp| {
            let ctx = space.cell_context(lp, use_scaling);
            let mut coo = CooBuilder::new(space.n_masters);
            for a in 0..dim {
                // volume factor from the other axes
                for flat_i in 0..npc {
                    let ia = space.local_index(flat_i, a);
                    let mut wother = Complex64::new(1.0, 0.0);
                    let mut rem = flat_i;
                    for k in 0..dim {
                        let i = rem % np;
                        rem /= np;
                        if k != a {
                            wother *= space.weights_1d[i] * ctx.jac[k];
                        }
                    }
                    let stride = np.pow(a as u32) as isize;
                    for ja in 0..np {
                        // flat_j = flat_i with axis-a index replaced by ja
                        let flat_j =
                            (flat_i as isize + (ja as isize - ia as isize) * stride) as usize;
                        let val = wother * s_ref[ia][ja] / ctx.jac[a];
                        space.scatter(&mut coo, lp, flat_i, flat_j, val * factor);
                    }
                }
            }
            coo
        })
        .collect();
    let mut coo = CooBuilder::new(space.n_masters);
    for l in locals {
        coo.extend_from(l);
    }
    coo.build(symmetry_for(space, use_scaling))
}

/// Real Laplace stiffness (integral of grad b_k . grad b_l, theta = 0),
/// used by the mean-field Poisson solve.
pub fn assemble_stiffness_real(space: &FeSpace) -> SparseOperator {
    kinetic_impl(space, false, 1.0)
}

/// Gradient matrices with plain real quadrature regardless of ECS tags;
/// used for velocity observables.
pub fn assemble_dgrad_real(space: &FeSpace) -> Vec<SparseOperator> {
    let dim = space.dim();
    let np = space.order + 1;
    let npc = space.nodes_per_cell();
    let mut out = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut coo = CooBuilder::new(space.n_masters);
        for lp in 0..space.mesh.n_leaves() {
            let ctx = space.cell_context(lp, false);
            for flat_i in 0..npc {
                let ia = space.local_index(flat_i, a);
                let mut wother = Complex64::new(1.0, 0.0);
                let mut rem = flat_i;
                for k in 0..dim {
                    let i = rem % np;
                    rem /= np;
                    if k != a {
                        wother *= space.weights_1d[i] * ctx.jac[k];
                    }
                }
                let stride = np.pow(a as u32) as isize;
                for ja in 0..np {
                    let flat_j =
                        (flat_i as isize + (ja as isize - ia as isize) * stride) as usize;
                    let val = wother * (space.weights_1d[ia] * space.diff_1d[ia][ja]);
                    space.scatter(&mut coo, lp, flat_i, flat_j, val);
                }
            }
        }
        out.push(coo.build(Symmetry::None));
    }
    out
}

/// Diagonal moment operator: quadrature of f(r) b_k b_l with real weights.
pub fn assemble_moment<F>(space: &FeSpace, f: F) -> SparseOperator
where
    F: Fn(&[f64; MAX_DIM]) -> f64,
{
    let dim = space.dim();
    let np = space.order + 1;
    let mut coo = CooBuilder::new(space.n_masters);
    for lp in 0..space.mesh.n_leaves() {
        let ctx = space.cell_context(lp, false);
        for flat in 0..space.nodes_per_cell() {
            let mut w = Complex64::new(1.0, 0.0);
            let mut rem = flat;
            for k in 0..dim {
                w *= space.weights_1d[rem % np] * ctx.jac[k];
                rem /= np;
            }
            let g = space.dof_map[lp][flat] as usize;
            let val = w * f(&space.node_coord[g]);
            space.scatter(&mut coo, lp, flat, flat, val);
        }
    }
    coo.build(Symmetry::Hermitian)
}

/// Complexified soft-core Coulomb sum at a (possibly complex-scaled) point.
fn potential_at(space: &FeSpace, nuclei: &Nuclei, p: &[f64; MAX_DIM]) -> Complex64 {
    let dim = space.dim();
    let mut v = Complex64::ZERO;
    for (a, ra) in nuclei.positions.iter().enumerate() {
        let mut d2 = Complex64::new(nuclei.softening, 0.0);
        for k in 0..dim {
            let xk = space.scaled_coordinate(p[k], k);
            let diff = xk - ra[k];
            d2 += diff * diff;
        }
        v -= nuclei.charges[a] / d2.sqrt();
    }
    v
}

/// One-body Hamiltonian pieces. The full time-dependent operator downstream
/// is T + V - i A(t) . Dgrad; the gradient matrices are time-independent.
pub fn assemble_one_body(
    space: &FeSpace,
    nuclei: &Nuclei,
    coulomb: CoulombHandling,
) -> Result<OneBody, FemError> {
    let dim = space.dim();
    for (a, ra) in nuclei.positions.iter().enumerate() {
        let p = {
            let mut p = [0.0; MAX_DIM];
            p[..dim].copy_from_slice(&ra[..dim]);
            p
        };
        if !space.mesh.domain.contains(&p) {
            return Err(FemError::NucleusOutsideBox(a));
        }
    }

    let kinetic = kinetic_impl(space, true, 0.5);

    // potential: nodal (diagonal) with singular-node handling for bare Coulomb
    let np = space.order + 1;
    let sym = symmetry_for(space, true);
    let mut coo = CooBuilder::new(space.n_masters);
    for lp in 0..space.mesh.n_leaves() {
        let ctx = space.cell_context(lp, true);
        let cell = space.mesh.leaf(lp);
        for flat in 0..space.nodes_per_cell() {
            let g = space.dof_map[lp][flat] as usize;
            let p = space.node_coord[g];
            let mut w = Complex64::new(1.0, 0.0);
            let mut rem = flat;
            for k in 0..dim {
                w *= space.weights_1d[rem % np] * ctx.jac[k];
                rem /= np;
            }
            let mut singular = false;
            if nuclei.softening == 0.0 && ctx.scaled == 0 {
                for ra in nuclei.positions.iter() {
                    let d2: f64 = (0..dim).map(|k| (p[k] - ra[k]) * (p[k] - ra[k])).sum();
                    if d2.sqrt() < 0.1 * cell.size {
                        singular = true;
                    }
                }
            }
            let val = if singular {
                match coulomb {
                    CoulombHandling::Error => {
                        let (nuc, dist) = nearest_nucleus(nuclei, &p, dim);
                        return Err(FemError::SingularPotential { nucleus: nuc, dist });
                    }
                    // consistent diagonal: integral of V b_flat^2 over this
                    // cell with an interior Gauss-Legendre rule, in place of
                    // w * V(node)
                    CoulombHandling::Regularize => {
                        regularized_cell_diagonal(space, nuclei, lp, flat)
                    }
                }
            } else {
                w * potential_at(space, nuclei, &p)
            };
            space.scatter(&mut coo, lp, flat, flat, val);
        }
    }
    let potential = coo.build(sym);

    // gradient couplings, axis by axis: entries w_i D[i][j] along each line
    // (reference Jacobians cancel between measure and derivative)
    let npc = space.nodes_per_cell();
    let mut dgrad = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut coo = CooBuilder::new(space.n_masters);
        for lp in 0..space.mesh.n_leaves() {
            let ctx = space.cell_context(lp, true);
            for flat_i in 0..npc {
                let ia = space.local_index(flat_i, a);
                let mut wother = Complex64::new(1.0, 0.0);
                let mut rem = flat_i;
                for k in 0..dim {
                    let i = rem % np;
                    rem /= np;
                    if k != a {
                        wother *= space.weights_1d[i] * ctx.jac[k];
                    }
                }
                let stride = np.pow(a as u32);
                for ja in 0..np {
                    let flat_j = (flat_i as isize + (ja as isize - ia as isize) * stride as isize)
                        as usize;
                    let val = wother * (space.weights_1d[ia] * space.diff_1d[ia][ja]);
                    space.scatter(&mut coo, lp, flat_i, flat_j, val);
                }
            }
        }
        dgrad.push(coo.build(if sym == Symmetry::Hermitian { Symmetry::None } else { sym }));
    }

    Ok(OneBody { kinetic, potential, dgrad })
}

fn nearest_nucleus(nuclei: &Nuclei, p: &[f64; MAX_DIM], dim: usize) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (a, ra) in nuclei.positions.iter().enumerate() {
        let d2: f64 = (0..dim).map(|k| (p[k] - ra[k]) * (p[k] - ra[k])).sum();
        if d2.sqrt() < best.1 {
            best = (a, d2.sqrt());
        }
    }
    best
}

/// Integral of V(r) b_flat(r)^2 over leaf `lp` with a (p+3)-point
/// Gauss-Legendre tensor rule, whose interior points never coincide with a
/// nucleus sitting on a Gauss-Lobatto node.
fn regularized_cell_diagonal(
    space: &FeSpace,
    nuclei: &Nuclei,
    lp: usize,
    flat: usize,
) -> Complex64 {
    let dim = space.dim();
    let np = space.order + 1;
    let cell = space.mesh.leaf(lp);
    let nq = space.order + 3;
    let (qn, qw) = gauss_legendre(nq);
    let jac = 0.5 * cell.size;
    // 1D cardinal values at GL points for the target local index per axis
    let mut l_axis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    {
        let mut rem = flat;
        for _ in 0..dim {
            let i = rem % np;
            rem /= np;
            let vals: Vec<f64> = qn
                .iter()
                .map(|&x| lagrange_all(&space.nodes_1d, &space.bary_1d, x)[i])
                .collect();
            l_axis.push(vals);
        }
    }
    let n_pts = nq.pow(dim as u32);
    let mut acc = Complex64::ZERO;
    for qflat in 0..n_pts {
        let mut p = [0.0; MAX_DIM];
        let mut w = 1.0;
        let mut b = 1.0;
        let mut rem = qflat;
        for k in 0..dim {
            let i = rem % nq;
            rem /= nq;
            p[k] = cell.anchor[k] + jac * (qn[i] + 1.0);
            w *= qw[i] * jac;
            b *= l_axis[k][i];
        }
        acc += w * b * b * potential_at(space, nuclei, &p);
    }
    acc
}

/// Zero the rows and columns of `dofs` (Dirichlet elimination for the
/// Hamiltonian pieces; pair with a mass matrix carrying identity there).
pub fn apply_zero_dirichlet(op: &SparseOperator, dofs: &[bool]) -> SparseOperator {
    let mut coo = CooBuilder::new(op.dim);
    for r in 0..op.dim {
        if dofs[r] {
            continue;
        }
        for k in op.row_ptr[r]..op.row_ptr[r + 1] {
            let c = op.col_idx[k] as usize;
            if !dofs[c] {
                coo.push(r, c, op.values[k]);
            }
        }
    }
    coo.build(op.symmetry)
}
