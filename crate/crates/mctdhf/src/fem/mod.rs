//! Continuous Gauss-Lobatto Lagrange finite element spaces on adaptive
//! meshes (the tensor-product FEDVR construction).
//!
//! Nodes of face-adjacent same-level cells are identified ("bridge"
//! functions); fine-side nodes on hanging faces are constrained to the
//! coarse-side polynomial trace. Constrained (slave) nodes are eliminated
//! from assembled operators, so operators and coefficient vectors live on
//! the master-dof space.

mod assemble;

pub use assemble::{
    apply_zero_dirichlet, assemble_dgrad_real, assemble_moment, assemble_one_body,
    assemble_stiffness_real, mass_matrix, OneBody,
};

use crate::mesh::{FaceNeighbors, Mesh, MAX_DIM};
use crate::quadrature::{barycentric_weights, differentiation_matrix, gauss_lobatto, lagrange_all};
use crate::sparse::{cg_solve, SolveError, SparseOperator};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("ECS surface at {surface} along axis {axis} cuts the interior of a cell [{lo}, {hi}]")]
    EcsMisaligned { axis: usize, surface: f64, lo: f64, hi: f64 },
    #[error("quadrature node at distance {dist:e} bohr from nucleus {nucleus} with zero softening")]
    SingularPotential { nucleus: usize, dist: f64 },
    #[error("nucleus {0} lies outside the simulation box")]
    NucleusOutsideBox(usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Point charges and an optional soft-core parameter (bohr^2).
#[derive(Debug, Clone)]
pub struct Nuclei {
    pub charges: Vec<f64>,
    pub positions: Vec<[f64; MAX_DIM]>,
    pub softening: f64,
}

impl Nuclei {
    pub fn new(charges: Vec<f64>, positions: Vec<[f64; MAX_DIM]>, softening: f64) -> Self {
        assert_eq!(charges.len(), positions.len());
        assert!(softening >= 0.0);
        Nuclei { charges, positions, softening }
    }

    /// Total Coulomb (or soft-core) potential at a real point, with the
    /// singularity guard used for mesh-refinement targets: the distance is
    /// clamped to 1e-8 bohr so the indicator stays finite.
    pub fn potential_guarded(&self, p: &[f64; MAX_DIM], dim: usize) -> f64 {
        let mut v = 0.0;
        for (a, ra) in self.positions.iter().enumerate() {
            let mut d2 = self.softening;
            for k in 0..dim {
                d2 += (p[k] - ra[k]) * (p[k] - ra[k]);
            }
            v -= self.charges[a] / d2.sqrt().max(1e-8);
        }
        v
    }
}

/// Treatment of a quadrature node that (nearly) coincides with a bare
/// Coulomb singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoulombHandling {
    /// Fail with `SingularPotential`.
    Error,
    /// Replace the nodal potential value by the consistent cell integral
    /// of V b_k^2 / m_k, evaluated with an interior Gauss-Legendre rule.
    Regularize,
}

/// Sharp exterior complex scaling: x -> +/-R0 + e^{i theta}(x -/+ R0)
/// outside +/-R0 on each axis. Surfaces must coincide with cell faces.
#[derive(Debug, Clone, Copy)]
pub struct EcsConfig {
    /// Interior half-width per axis; use `f64::INFINITY` to disable an axis.
    pub r0: [f64; MAX_DIM],
    pub theta: f64,
}

/// A hanging-node constraint: the slave's nodal value is a fixed linear
/// combination of master nodal values.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub node: u32,
    pub masters: Vec<(u32, f64)>, // (master index, weight)
}

pub struct FeSpace {
    pub mesh: Mesh,
    pub order: usize,
    /// Total number of global nodes (masters + slaves).
    pub n_nodes: usize,
    /// Dimension of the unconstrained (master) space; operators act here.
    pub n_masters: usize,
    /// Per leaf: local tensor index -> global node.
    pub dof_map: Vec<Vec<u32>>,
    /// Per global node: master index, or -1 for constrained nodes.
    pub master_of_node: Vec<i64>,
    /// Global node id of each master.
    pub master_node: Vec<u32>,
    /// Hanging-node constraints (slave nodes only).
    pub constraints: Vec<Constraint>,
    constraint_of_node: Vec<i64>,
    /// Per global node: physical coordinates.
    pub node_coord: Vec<[f64; MAX_DIM]>,
    /// Per global node: real Gauss-Lobatto quadrature weight (theta = 0).
    pub node_weight: Vec<f64>,
    /// Per global node: complex quadrature weight with ECS Jacobians.
    pub node_weight_scaled: Vec<Complex64>,
    /// Per master: lies on the box boundary.
    pub boundary_master: Vec<bool>,
    pub ecs: Option<EcsConfig>,
    /// Per leaf: bitmask of axes on which the cell is complex-scaled.
    pub cell_scaled_axes: Vec<u8>,
    // cached 1D reference data on [-1, 1]
    pub nodes_1d: Vec<f64>,
    pub weights_1d: Vec<f64>,
    pub bary_1d: Vec<f64>,
    pub diff_1d: Vec<Vec<f64>>,
}

/// Build the global continuous space of tensor Lagrange polynomials of
/// degree `order` on the Gauss-Lobatto nodes of every leaf.
pub fn build_space(mesh: Mesh, order: usize, ecs: Option<EcsConfig>) -> Result<FeSpace, FemError> {
    assert!(order >= 1, "polynomial order must be at least 1");
    let dim = mesh.dim();
    let np = order + 1;
    let npc = np.pow(dim as u32);
    let (nodes_1d, weights_1d) = gauss_lobatto(np);
    let bary_1d = barycentric_weights(&nodes_1d);
    let diff_1d = differentiation_matrix(&nodes_1d);

    // ECS alignment check and per-cell scaled-axis tags
    let mut cell_scaled_axes = vec![0u8; mesh.n_leaves()];
    if let Some(cfg) = &ecs {
        assert!((0.0..std::f64::consts::FRAC_PI_2).contains(&cfg.theta));
        for lp in 0..mesh.n_leaves() {
            let cell = mesh.leaf(lp);
            for k in 0..dim {
                let r0 = cfg.r0[k];
                if !r0.is_finite() {
                    continue;
                }
                let lo = cell.anchor[k];
                let hi = cell.anchor[k] + cell.size;
                let tol = 1e-10 * cell.size;
                let inside = lo >= -r0 - tol && hi <= r0 + tol;
                let outside = lo >= r0 - tol || hi <= -r0 + tol;
                if !inside && !outside {
                    return Err(FemError::EcsMisaligned { axis: k, surface: r0, lo, hi });
                }
                if outside {
                    cell_scaled_axes[lp] |= 1 << k;
                }
            }
        }
    }

    // ---- global node numbering via union-find over (leaf, local) pairs ----
    let n_local = mesh.n_leaves() * npc;
    let mut parent: Vec<u32> = (0..n_local as u32).collect();
    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        while parent[i as usize] != i {
            parent[i as usize] = parent[parent[i as usize] as usize];
            i = parent[i as usize];
        }
        i
    }
    fn union(parent: &mut [u32], a: u32, b: u32) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            // smaller root wins, keeping numbering deterministic
            if ra < rb {
                parent[rb as usize] = ra;
            } else {
                parent[ra as usize] = rb;
            }
        }
    }

    let local_id = |lp: usize, flat: usize| (lp * npc + flat) as u32;
    // decode helpers
    let idx_of = |flat: usize, axis: usize| {
        let mut rem = flat;
        for _ in 0..axis {
            rem /= np;
        }
        rem % np
    };
    let face_locals = |axis: usize, side: usize| -> Vec<usize> {
        // all flat indices with i_axis = side (0 or order)
        let mut out = Vec::new();
        for flat in 0..npc {
            if idx_of(flat, axis) == if side == 0 { 0 } else { order } {
                out.push(flat);
            }
        }
        out
    };

    // same-level unification across upper faces
    for lp in 0..mesh.n_leaves() {
        let id = mesh.leaves[lp];
        for axis in 0..dim {
            if let FaceNeighbors::Same(nb) = mesh.face_neighbors(id, axis, 1) {
                let nb_pos = mesh.leaf_position(nb).unwrap();
                for &flat in &face_locals(axis, 1) {
                    // matching local index on the neighbor's lower face
                    let mut nb_flat = 0;
                    let mut stride = 1;
                    for k in 0..dim {
                        let i = if k == axis { 0 } else { idx_of(flat, k) };
                        nb_flat += i * stride;
                        stride *= np;
                    }
                    union(&mut parent, local_id(lp, flat), local_id(nb_pos, nb_flat));
                }
            }
        }
    }

    // hanging faces, handled from the fine side: unify coincident nodes now,
    // collect trace constraints for the rest
    struct PendingConstraint {
        slave: u32,                 // local id
        masters: Vec<(u32, f64)>,   // (local id on coarse cell, weight)
    }
    let mut pending: Vec<PendingConstraint> = Vec::new();
    for lp in 0..mesh.n_leaves() {
        let id = mesh.leaves[lp];
        let cell = mesh.leaf(lp).clone();
        for axis in 0..dim {
            for dir in [-1i32, 1] {
                let nb = match mesh.face_neighbors(id, axis, dir) {
                    FaceNeighbors::Coarser(nb) => nb,
                    _ => continue,
                };
                let nb_pos = mesh.leaf_position(nb).unwrap();
                let coarse = mesh.leaf(nb_pos).clone();
                let fine_side = if dir < 0 { 0 } else { 1 };
                let coarse_side = 1 - fine_side;
                let coarse_face = face_locals(axis, coarse_side);
                for &flat in &face_locals(axis, fine_side) {
                    // reference coordinates of this fine node on the coarse face
                    let mut xi = [0.0f64; MAX_DIM];
                    for k in 0..dim {
                        if k == axis {
                            continue;
                        }
                        let x = cell.anchor[k] + 0.5 * cell.size * (nodes_1d[idx_of(flat, k)] + 1.0);
                        xi[k] = 2.0 * (x - coarse.anchor[k]) / coarse.size - 1.0;
                    }
                    // coincident with a coarse node on every in-face axis?
                    let mut coincident = [usize::MAX; MAX_DIM];
                    let mut all_coincide = true;
                    for k in 0..dim {
                        if k == axis {
                            continue;
                        }
                        match nodes_1d.iter().position(|&t| (t - xi[k]).abs() < 1e-12) {
                            Some(j) => coincident[k] = j,
                            None => {
                                all_coincide = false;
                            }
                        }
                    }
                    if all_coincide {
                        let mut nb_flat = 0;
                        let mut stride = 1;
                        for k in 0..dim {
                            let i = if k == axis {
                                if coarse_side == 0 { 0 } else { order }
                            } else {
                                coincident[k]
                            };
                            nb_flat += i * stride;
                            stride *= np;
                        }
                        union(&mut parent, local_id(lp, flat), local_id(nb_pos, nb_flat));
                    } else {
                        // trace weights: tensor Lagrange on the coarse face
                        let mut weights: Vec<(u32, f64)> = Vec::new();
                        for &cf in &coarse_face {
                            let mut w = 1.0;
                            for k in 0..dim {
                                if k == axis {
                                    continue;
                                }
                                let l = lagrange_all(&nodes_1d, &bary_1d, xi[k]);
                                w *= l[idx_of(cf, k)];
                            }
                            if w.abs() > 1e-13 {
                                weights.push((local_id(nb_pos, cf), w));
                            }
                        }
                        pending.push(PendingConstraint {
                            slave: local_id(lp, flat),
                            masters: weights,
                        });
                    }
                }
            }
        }
    }

    // canonical global numbering, deterministic in (leaf, local) order
    let mut node_of_local = vec![u32::MAX; n_local];
    let mut n_nodes = 0usize;
    for i in 0..n_local as u32 {
        let r = find(&mut parent, i);
        if node_of_local[r as usize] == u32::MAX {
            node_of_local[r as usize] = n_nodes as u32;
            n_nodes += 1;
        }
        node_of_local[i as usize] = node_of_local[r as usize];
    }
    let mut dof_map = Vec::with_capacity(mesh.n_leaves());
    for lp in 0..mesh.n_leaves() {
        let mut map = Vec::with_capacity(npc);
        for flat in 0..npc {
            map.push(node_of_local[local_id(lp, flat) as usize]);
        }
        dof_map.push(map);
    }

    // raw constraints in global-node terms (dedup by slave node)
    let mut raw: Vec<Option<Vec<(u32, f64)>>> = vec![None; n_nodes];
    for pc in pending {
        let slave = node_of_local[pc.slave as usize];
        let masters: Vec<(u32, f64)> = pc
            .masters
            .iter()
            .map(|&(l, w)| (node_of_local[l as usize], w))
            .collect();
        if raw[slave as usize].is_none() {
            raw[slave as usize] = Some(masters);
        }
    }
    // resolve chains: a "master" that is itself constrained gets substituted
    for _ in 0..4 {
        let mut changed = false;
        for s in 0..n_nodes {
            let Some(masters) = raw[s].clone() else { continue };
            if masters.iter().all(|&(m, _)| raw[m as usize].is_none()) {
                continue;
            }
            let mut flat: Vec<(u32, f64)> = Vec::new();
            for (m, w) in masters {
                match &raw[m as usize] {
                    None => flat.push((m, w)),
                    Some(inner) => {
                        for &(mm, ww) in inner {
                            flat.push((mm, w * ww));
                        }
                    }
                }
            }
            flat.sort_by_key(|&(m, _)| m);
            flat.dedup_by(|a, b| {
                if a.0 == b.0 {
                    b.1 += a.1;
                    true
                } else {
                    false
                }
            });
            raw[s] = Some(flat);
            changed = true;
        }
        if !changed {
            break;
        }
    }
    debug_assert!(
        (0..n_nodes).all(|s| match &raw[s] {
            None => true,
            Some(m) => m.iter().all(|&(mm, _)| raw[mm as usize].is_none()),
        }),
        "hanging-node constraint chain deeper than the 2:1 balance permits"
    );

    // master numbering in global-node order
    let mut master_of_node = vec![-1i64; n_nodes];
    let mut master_node = Vec::new();
    for n in 0..n_nodes {
        if raw[n].is_none() {
            master_of_node[n] = master_node.len() as i64;
            master_node.push(n as u32);
        }
    }
    let n_masters = master_node.len();
    let mut constraints = Vec::new();
    let mut constraint_of_node = vec![-1i64; n_nodes];
    for n in 0..n_nodes {
        if let Some(masters) = &raw[n] {
            constraint_of_node[n] = constraints.len() as i64;
            constraints.push(Constraint {
                node: n as u32,
                masters: masters
                    .iter()
                    .map(|&(m, w)| (master_of_node[m as usize] as u32, w))
                    .collect(),
            });
        }
    }

    // node coordinates and quadrature weights
    let mut node_coord = vec![[0.0; MAX_DIM]; n_nodes];
    let mut node_weight = vec![0.0f64; n_nodes];
    let mut node_weight_scaled = vec![Complex64::ZERO; n_nodes];
    let theta = ecs.as_ref().map(|c| c.theta).unwrap_or(0.0);
    for lp in 0..mesh.n_leaves() {
        let cell = mesh.leaf(lp);
        let jac_real = 0.5 * cell.size;
        for flat in 0..npc {
            let g = dof_map[lp][flat] as usize;
            let mut w = 1.0;
            let mut ws = Complex64::new(1.0, 0.0);
            for k in 0..dim {
                let i = idx_of(flat, k);
                node_coord[g][k] = cell.anchor[k] + 0.5 * cell.size * (nodes_1d[i] + 1.0);
                w *= weights_1d[i] * jac_real;
                let scaled = cell_scaled_axes[lp] & (1 << k) != 0;
                let jk = if scaled {
                    Complex64::from_polar(jac_real, theta)
                } else {
                    Complex64::new(jac_real, 0.0)
                };
                ws *= weights_1d[i] * jk;
            }
            node_weight[g] += w;
            node_weight_scaled[g] += ws;
        }
    }

    // boundary masters
    let mut boundary_master = vec![false; n_masters];
    for m in 0..n_masters {
        let p = node_coord[master_node[m] as usize];
        for k in 0..dim {
            let tol = 1e-10 * mesh.coarse_size;
            if (p[k] - mesh.domain.lo[k]).abs() < tol || (p[k] - mesh.domain.hi[k]).abs() < tol {
                boundary_master[m] = true;
            }
        }
    }

    Ok(FeSpace {
        mesh,
        order,
        n_nodes,
        n_masters,
        dof_map,
        master_of_node,
        master_node,
        constraints,
        constraint_of_node,
        node_coord,
        node_weight,
        node_weight_scaled,
        boundary_master,
        ecs,
        cell_scaled_axes,
        nodes_1d,
        weights_1d,
        bary_1d,
        diff_1d,
    })
}

impl FeSpace {
    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn nodes_per_cell(&self) -> usize {
        (self.order + 1).pow(self.dim() as u32)
    }

    #[inline]
    pub fn local_index(&self, flat: usize, axis: usize) -> usize {
        let mut rem = flat;
        for _ in 0..axis {
            rem /= self.order + 1;
        }
        rem % (self.order + 1)
    }

    /// Expansion of a global node into master contributions.
    pub fn expand_node(&self, node: u32) -> Vec<(u32, f64)> {
        let m = self.master_of_node[node as usize];
        if m >= 0 {
            vec![(m as u32, 1.0)]
        } else {
            let c = self.constraint_of_node[node as usize] as usize;
            self.constraints[c].masters.clone()
        }
    }

    /// Nodal values (length `n_nodes`) from master coefficients, expanding
    /// constraints.
    pub fn nodal_values(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(coeffs.len(), self.n_masters);
        let mut out = vec![Complex64::ZERO; self.n_nodes];
        for n in 0..self.n_nodes {
            let m = self.master_of_node[n];
            if m >= 0 {
                out[n] = coeffs[m as usize];
            } else {
                let c = self.constraint_of_node[n] as usize;
                out[n] = self.constraints[c]
                    .masters
                    .iter()
                    .map(|&(mi, w)| coeffs[mi as usize] * w)
                    .sum();
            }
        }
        out
    }

    /// Load vector on the master space from nodal function values:
    /// load_m = sum_n w_n f_n P[n][m], the quadrature of f against every
    /// constrained basis function. `scaled` selects the ECS weights.
    pub fn load_from_nodal(&self, nodal: &[Complex64], scaled: bool) -> Vec<Complex64> {
        assert_eq!(nodal.len(), self.n_nodes);
        let mut load = vec![Complex64::ZERO; self.n_masters];
        for n in 0..self.n_nodes {
            let w = if scaled {
                self.node_weight_scaled[n]
            } else {
                Complex64::new(self.node_weight[n], 0.0)
            };
            let val = nodal[n] * w;
            if val == Complex64::ZERO {
                continue;
            }
            let m = self.master_of_node[n];
            if m >= 0 {
                load[m as usize] += val;
            } else {
                let c = self.constraint_of_node[n] as usize;
                for &(mi, cw) in &self.constraints[c].masters {
                    load[mi as usize] += val * cw;
                }
            }
        }
        load
    }

    /// Quadrature of nodal values with the real (theta = 0) weights.
    pub fn integrate_nodal(&self, nodal: &[Complex64]) -> Complex64 {
        nodal
            .iter()
            .zip(&self.node_weight)
            .map(|(v, &w)| v * w)
            .sum()
    }

    /// Hermitian quadrature inner product with the real (theta = 0) weights:
    /// sum_n w_n conj(u_n) v_n over nodal values.
    pub fn inner_real(&self, u: &[Complex64], v: &[Complex64]) -> Complex64 {
        let un = self.nodal_values(u);
        let vn = self.nodal_values(v);
        let mut acc = Complex64::ZERO;
        for n in 0..self.n_nodes {
            acc += self.node_weight[n] * un[n].conj() * vn[n];
        }
        acc
    }

    /// Scaled coordinate along one axis under the ECS map.
    pub fn scaled_coordinate(&self, x: f64, axis: usize) -> Complex64 {
        match &self.ecs {
            None => Complex64::new(x, 0.0),
            Some(c) => {
                let r0 = c.r0[axis];
                if !r0.is_finite() || x.abs() <= r0 {
                    Complex64::new(x, 0.0)
                } else {
                    let s = if x > 0.0 { r0 } else { -r0 };
                    Complex64::new(s, 0.0) + Complex64::from_polar(1.0, c.theta) * (x - s)
                }
            }
        }
    }

    /// Evaluate the constrained interpolant at an arbitrary point.
    pub fn evaluate(&self, coeffs: &[Complex64], p: &[f64; MAX_DIM]) -> Complex64 {
        let nodal = self.nodal_values(coeffs);
        self.evaluate_nodal(&nodal, p)
    }

    pub fn evaluate_nodal(&self, nodal: &[Complex64], p: &[f64; MAX_DIM]) -> Complex64 {
        let Some(leaf_id) = self.mesh.locate_leaf(p) else {
            return Complex64::ZERO;
        };
        let lp = self.mesh.leaf_position(leaf_id).unwrap();
        let cell = self.mesh.leaf(lp);
        let dim = self.dim();
        let np = self.order + 1;
        let mut l1 = Vec::with_capacity(dim);
        for k in 0..dim {
            let xi = 2.0 * (p[k] - cell.anchor[k]) / cell.size - 1.0;
            l1.push(lagrange_all(&self.nodes_1d, &self.bary_1d, xi));
        }
        let mut acc = Complex64::ZERO;
        for flat in 0..self.nodes_per_cell() {
            let mut w = 1.0;
            let mut rem = flat;
            for k in 0..dim {
                w *= l1[k][rem % np];
                rem /= np;
            }
            acc += nodal[self.dof_map[lp][flat] as usize] * w;
        }
        acc
    }

    /// L2 projection: coefficients c with M c = (load vector of f), using the
    /// space's Gauss-Lobatto quadrature. Reduces to nodal interpolation on
    /// meshes without hanging nodes.
    pub fn project<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(&[f64; MAX_DIM]) -> Complex64,
    {
        let mut load = vec![Complex64::ZERO; self.n_masters];
        for n in 0..self.n_nodes {
            let val = f(&self.node_coord[n]) * self.node_weight[n];
            for (m, w) in self.expand_node(n as u32) {
                load[m as usize] += val * w;
            }
        }
        let mass = mass_matrix_real(self);
        mass_inverse_apply(&mass, &load, 1e-13).expect("mass solve failed in projection")
    }
}

/// Mass matrix with real (theta = 0) quadrature, regardless of ECS tags.
pub fn mass_matrix_real(space: &FeSpace) -> SparseOperator {
    assemble::mass_matrix_impl(space, false)
}

/// Apply the inverse mass matrix: one division per entry when M is diagonal,
/// otherwise Jacobi-preconditioned CG to relative residual `tol`.
pub fn mass_inverse_apply(
    mass: &SparseOperator,
    rhs: &[Complex64],
    tol: f64,
) -> Result<Vec<Complex64>, SolveError> {
    if mass.is_diagonal() {
        let d = mass.diagonal();
        return Ok(rhs
            .iter()
            .zip(&d)
            .map(|(r, m)| if m.norm() > 0.0 { r / m } else { Complex64::ZERO })
            .collect());
    }
    let (x, _) = cg_solve(mass, rhs, None, tol, 50_000)?;
    Ok(x)
}
