//! Multiresolution meshes: a forest of 2^d-trees over a uniform coarse grid,
//! refined by halving cells where Kelly's error indicator exceeds a threshold.
//!
//! The mesh is built once (before any propagation) and is immutable
//! afterwards; refinement returns a new mesh. Adjacent leaves never differ by
//! more than one level, including across edges and corners, so hanging-node
//! constraint chains in the finite element space have depth one.

use crate::quadrature::{barycentric_weights, differentiation_matrix, gauss_lobatto, lagrange_all};
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::io::Write;
use thiserror::Error;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("box extent along axis {axis} ({extent}) is not an integer multiple of the coarse cell size {coarse}")]
    NonDivisibleExtent { axis: usize, extent: f64, coarse: f64 },
    #[error("refinement exceeded the configured leaf budget ({cap} leaves)")]
    BudgetExceeded { cap: usize },
    #[error("invalid mesh parameter: {0}")]
    Invalid(String),
}

/// Axis-aligned simulation box, coordinates in bohr.
#[derive(Debug, Clone, Copy)]
pub struct SimulationBox {
    pub dim: usize,
    pub lo: [f64; MAX_DIM],
    pub hi: [f64; MAX_DIM],
}

impl SimulationBox {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self, MeshError> {
        let dim = lo.len();
        if dim == 0 || dim > MAX_DIM || hi.len() != dim {
            return Err(MeshError::Invalid(format!("dimension must be 1..=3, got {dim}")));
        }
        let mut b = SimulationBox { dim, lo: [0.0; MAX_DIM], hi: [0.0; MAX_DIM] };
        for k in 0..dim {
            if hi[k] <= lo[k] {
                return Err(MeshError::Invalid(format!(
                    "hi[{k}] = {} must exceed lo[{k}] = {}",
                    hi[k], lo[k]
                )));
            }
            b.lo[k] = lo[k];
            b.hi[k] = hi[k];
        }
        Ok(b)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|k| self.extent(k)).product()
    }

    pub fn contains(&self, p: &[f64; MAX_DIM]) -> bool {
        (0..self.dim).all(|k| p[k] >= self.lo[k] - 1e-12 && p[k] <= self.hi[k] + 1e-12)
    }
}

/// One cell of the 2^d-tree. `size = coarse_size / 2^level`.
#[derive(Debug, Clone)]
pub struct Cell {
    pub level: u32,
    pub anchor: [f64; MAX_DIM],
    pub size: f64,
    pub children: Option<[u32; 8]>,
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn center(&self, dim: usize) -> [f64; MAX_DIM] {
        let mut c = self.anchor;
        for k in 0..dim {
            c[k] += 0.5 * self.size;
        }
        c
    }
}

/// Which leaves sit across a given face of a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaceNeighbors {
    /// Face lies on the box boundary.
    Boundary,
    /// One neighbor at the same level.
    Same(u32),
    /// One neighbor one level coarser.
    Coarser(u32),
    /// 2^(d-1) neighbors one level finer.
    Finer(Vec<u32>),
}

#[derive(Debug, Clone)]
pub struct RefinementPolicy {
    /// Split a leaf when its indicator exceeds this value.
    pub threshold: f64,
    pub min_size: f64,
    pub max_size: f64,
    pub max_passes: usize,
    /// Hard cap on the number of leaves.
    pub max_leaves: usize,
}

impl RefinementPolicy {
    pub fn new(threshold: f64, min_size: f64, max_size: f64, max_passes: usize) -> Self {
        assert!(threshold > 0.0, "threshold must be positive");
        assert!(min_size <= max_size, "min_size must not exceed max_size");
        RefinementPolicy { threshold, min_size, max_size, max_passes, max_leaves: 50_000_000 }
    }

    pub fn with_max_leaves(mut self, cap: usize) -> Self {
        self.max_leaves = cap;
        self
    }
}

/// Hierarchical mesh. Cells live in an arena; `leaves` lists leaf cell ids in
/// a deterministic depth-first order.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: SimulationBox,
    pub coarse_size: f64,
    pub n_coarse: [usize; MAX_DIM],
    pub cells: Vec<Cell>,
    pub leaves: Vec<u32>,
    leaf_pos: Vec<i64>,
}

/// Per-leaf tensor-product nodal values of a scalar function, order `p`
/// Gauss-Lobatto nodes in each leaf. This is the cell-local polynomial
/// interpolant consumed by the Kelly indicator.
pub struct MeshField {
    pub order: usize,
    pub values: Vec<Vec<f64>>,
}

pub fn build_uniform(domain: SimulationBox, coarse_size: f64) -> Result<Mesh, MeshError> {
    if coarse_size <= 0.0 {
        return Err(MeshError::Invalid("coarse_size must be positive".into()));
    }
    let mut n_coarse = [1usize; MAX_DIM];
    for k in 0..domain.dim {
        let ratio = domain.extent(k) / coarse_size;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 || n < 1.0 {
            return Err(MeshError::NonDivisibleExtent {
                axis: k,
                extent: domain.extent(k),
                coarse: coarse_size,
            });
        }
        n_coarse[k] = n as usize;
    }
    let total: usize = (0..domain.dim).map(|k| n_coarse[k]).product();
    let mut cells = Vec::with_capacity(total);
    // x fastest, z slowest
    let (nx, ny, nz) = (
        n_coarse[0],
        if domain.dim > 1 { n_coarse[1] } else { 1 },
        if domain.dim > 2 { n_coarse[2] } else { 1 },
    );
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let mut anchor = [0.0; MAX_DIM];
                anchor[0] = domain.lo[0] + ix as f64 * coarse_size;
                if domain.dim > 1 {
                    anchor[1] = domain.lo[1] + iy as f64 * coarse_size;
                }
                if domain.dim > 2 {
                    anchor[2] = domain.lo[2] + iz as f64 * coarse_size;
                }
                cells.push(Cell { level: 0, anchor, size: coarse_size, children: None });
            }
        }
    }
    let mut mesh = Mesh {
        domain,
        coarse_size,
        n_coarse,
        cells,
        leaves: Vec::new(),
        leaf_pos: Vec::new(),
    };
    mesh.rebuild_leaf_index();
    Ok(mesh)
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn n_children(&self) -> usize {
        1 << self.dim()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaf(&self, i: usize) -> &Cell {
        &self.cells[self.leaves[i] as usize]
    }

    /// Position of a cell id within `leaves`, if it is a leaf.
    pub fn leaf_position(&self, cell_id: u32) -> Option<usize> {
        let v = self.leaf_pos[cell_id as usize];
        if v >= 0 {
            Some(v as usize)
        } else {
            None
        }
    }

    fn rebuild_leaf_index(&mut self) {
        self.leaves.clear();
        let n_roots: usize = (0..self.dim()).map(|k| self.n_coarse[k]).product();
        let mut stack: Vec<u32> = Vec::new();
        for root in (0..n_roots as u32).rev() {
            stack.push(root);
        }
        let nc = self.n_children();
        while let Some(id) = stack.pop() {
            match self.cells[id as usize].children {
                None => self.leaves.push(id),
                Some(ch) => {
                    for c in (0..nc).rev() {
                        stack.push(ch[c]);
                    }
                }
            }
        }
        self.leaf_pos = vec![-1; self.cells.len()];
        for (pos, &id) in self.leaves.iter().enumerate() {
            self.leaf_pos[id as usize] = pos as i64;
        }
    }

    /// Leaf cell containing `p` (points outside the box return None; points
    /// on internal faces resolve to the cell on the upper side).
    pub fn locate_leaf(&self, p: &[f64; MAX_DIM]) -> Option<u32> {
        if !self.domain.contains(p) {
            return None;
        }
        let mut idx = [0usize; MAX_DIM];
        for k in 0..self.dim() {
            let t = ((p[k] - self.domain.lo[k]) / self.coarse_size).floor();
            idx[k] = (t as isize).clamp(0, self.n_coarse[k] as isize - 1) as usize;
        }
        let mut id = (idx[0]
            + self.n_coarse[0]
                * (if self.dim() > 1 { idx[1] } else { 0 }
                    + if self.dim() > 2 { self.n_coarse[1] * idx[2] } else { 0 }))
            as u32;
        loop {
            let cell = &self.cells[id as usize];
            match cell.children {
                None => return Some(id),
                Some(ch) => {
                    let mut child = 0usize;
                    for k in 0..self.dim() {
                        if p[k] >= cell.anchor[k] + 0.5 * cell.size {
                            child |= 1 << k;
                        }
                    }
                    id = ch[child];
                }
            }
        }
    }

    pub(crate) fn split(&mut self, id: u32) {
        debug_assert!(self.cells[id as usize].is_leaf());
        let parent = self.cells[id as usize].clone();
        let half = 0.5 * parent.size;
        let mut ch = [0u32; 8];
        for c in 0..self.n_children() {
            let mut anchor = parent.anchor;
            for k in 0..self.dim() {
                if c & (1 << k) != 0 {
                    anchor[k] += half;
                }
            }
            ch[c] = self.cells.len() as u32;
            self.cells.push(Cell { level: parent.level + 1, anchor, size: half, children: None });
        }
        self.cells[id as usize].children = Some(ch);
    }

    /// Enforce the 2:1 rule over closures: any two leaves whose closures
    /// intersect (face, edge, or corner contact) differ by at most one level.
    pub(crate) fn balance(&mut self) -> usize {
        let mut total_splits = 0;
        loop {
            self.rebuild_leaf_index();
            let mut to_split: BTreeSet<u32> = BTreeSet::new();
            for &leaf_id in &self.leaves {
                let cell = &self.cells[leaf_id as usize];
                if cell.level < 2 {
                    continue;
                }
                for nb in self.closure_neighbor_probe(leaf_id) {
                    let ncell = &self.cells[nb as usize];
                    if ncell.level + 1 < cell.level {
                        to_split.insert(nb);
                    }
                }
            }
            if to_split.is_empty() {
                break;
            }
            total_splits += to_split.len();
            for id in to_split {
                self.split(id);
            }
        }
        self.rebuild_leaf_index();
        total_splits
    }

    /// Split the given leaf cells and re-establish 2:1 balance, returning a
    /// new mesh (the original stays untouched).
    pub fn refine_leaves(&self, leaf_ids: &[u32]) -> Mesh {
        let mut m = self.clone();
        for &id in leaf_ids {
            if m.cells[id as usize].is_leaf() {
                m.split(id);
            }
        }
        m.balance();
        m
    }

    /// Split every leaf once.
    pub fn refine_global(&self) -> Mesh {
        let ids = self.leaves.clone();
        self.refine_leaves(&ids)
    }

    /// One probe per direction in {-1,0,1}^d \ {0}: the leaf just across each
    /// face / edge / corner. Coarser neighbors are always hit because they
    /// cover the whole probed region.
    pub(crate) fn closure_neighbor_probe(&self, leaf_id: u32) -> Vec<u32> {
        let cell = &self.cells[leaf_id as usize];
        let dim = self.dim();
        let delta = cell.size * 1e-9;
        let center = cell.center(dim);
        let mut out = Vec::new();
        let n_dirs = 3usize.pow(dim as u32);
        for code in 0..n_dirs {
            let mut c = code;
            let mut p = center;
            let mut nonzero = false;
            for k in 0..dim {
                match c % 3 {
                    1 => {
                        p[k] = cell.anchor[k] - delta;
                        nonzero = true;
                    }
                    2 => {
                        p[k] = cell.anchor[k] + cell.size + delta;
                        nonzero = true;
                    }
                    _ => {}
                }
                c /= 3;
            }
            if !nonzero {
                continue;
            }
            if let Some(nb) = self.locate_leaf(&p) {
                if nb != leaf_id && !out.contains(&nb) {
                    out.push(nb);
                }
            }
        }
        out
    }

    /// Leaves across the face of `leaf_id` with normal `axis`, on the lower
    /// (`dir = -1`) or upper (`dir = +1`) side.
    pub fn face_neighbors(&self, leaf_id: u32, axis: usize, dir: i32) -> FaceNeighbors {
        let cell = &self.cells[leaf_id as usize];
        let dim = self.dim();
        let delta = cell.size * 1e-9;
        let across = if dir < 0 {
            cell.anchor[axis] - delta
        } else {
            cell.anchor[axis] + cell.size + delta
        };
        if across < self.domain.lo[axis] || across > self.domain.hi[axis] {
            return FaceNeighbors::Boundary;
        }
        // probe the centers of the 2^(d-1) quadrants of the face
        let in_face: Vec<usize> = (0..dim).filter(|&k| k != axis).collect();
        let n_probes = 1usize << in_face.len();
        let mut ids: Vec<u32> = Vec::new();
        for q in 0..n_probes {
            let mut p = [0.0; MAX_DIM];
            p[axis] = across;
            for (b, &k) in in_face.iter().enumerate() {
                let frac = if q & (1 << b) != 0 { 0.75 } else { 0.25 };
                p[k] = cell.anchor[k] + frac * cell.size;
            }
            let nb = self.locate_leaf(&p).expect("face probe left the box");
            if !ids.contains(&nb) {
                ids.push(nb);
            }
        }
        let nl = self.cells[ids[0] as usize].level;
        if ids.len() == 1 && nl <= cell.level {
            if nl == cell.level {
                FaceNeighbors::Same(ids[0])
            } else {
                debug_assert_eq!(nl + 1, cell.level, "mesh is not 2:1 balanced");
                FaceNeighbors::Coarser(ids[0])
            }
        } else {
            for &n in &ids {
                debug_assert_eq!(
                    self.cells[n as usize].level,
                    cell.level + 1,
                    "mesh is not 2:1 balanced"
                );
            }
            FaceNeighbors::Finer(ids)
        }
    }

    /// Nodal interpolant of `f` at order-`p` Gauss-Lobatto nodes per leaf.
    pub fn interpolate<F>(&self, order: usize, f: F) -> MeshField
    where
        F: Fn(&[f64; MAX_DIM]) -> f64 + Sync,
    {
        let (nodes, _) = gauss_lobatto(order + 1);
        let dim = self.dim();
        let npc = (order + 1).pow(dim as u32);
        let values: Vec<Vec<f64>> = self
            .leaves
            .par_iter()
            .map(|&id| {
                let cell = &self.cells[id as usize];
                let mut vals = Vec::with_capacity(npc);
                for flat in 0..npc {
                    let mut p = [0.0; MAX_DIM];
                    let mut rem = flat;
                    for k in 0..dim {
                        let i = rem % (order + 1);
                        rem /= order + 1;
                        p[k] = cell.anchor[k] + 0.5 * cell.size * (nodes[i] + 1.0);
                    }
                    vals.push(f(&p));
                }
                vals
            })
            .collect();
        MeshField { order, values }
    }

    /// Gradient of the per-cell polynomial of `field` on leaf `leaf_pos`
    /// at physical point `p` (which must lie in that leaf's closure).
    fn field_gradient(
        &self,
        field: &MeshField,
        leaf_pos: usize,
        p: &[f64; MAX_DIM],
    ) -> [f64; MAX_DIM] {
        let cell = self.leaf(leaf_pos);
        let dim = self.dim();
        let np = field.order + 1;
        let (nodes, _) = gauss_lobatto(np);
        let bary = barycentric_weights(&nodes);
        let dmat = differentiation_matrix(&nodes);
        // 1D cardinal values and derivatives at the reference coordinate
        let mut vals_1d = Vec::with_capacity(dim);
        let mut ders_1d = Vec::with_capacity(dim);
        for k in 0..dim {
            let xi = 2.0 * (p[k] - cell.anchor[k]) / cell.size - 1.0;
            let l = lagrange_all(&nodes, &bary, xi);
            let mut dl = vec![0.0; np];
            for j in 0..np {
                for q in 0..np {
                    dl[j] += l[q] * dmat[q][j];
                }
            }
            vals_1d.push(l);
            ders_1d.push(dl);
        }
        let vals = &field.values[leaf_pos];
        let mut grad = [0.0; MAX_DIM];
        for a in 0..dim {
            let mut acc = 0.0;
            for (flat, v) in vals.iter().enumerate() {
                let mut rem = flat;
                let mut w = 1.0;
                for k in 0..dim {
                    let i = rem % np;
                    rem /= np;
                    w *= if k == a { ders_1d[k][i] } else { vals_1d[k][i] };
                }
                acc += v * w;
            }
            grad[a] = acc * 2.0 / cell.size;
        }
        grad
    }
}

/// Kelly indicator per leaf: eta_K^2 = sum over interior faces of
/// (h_F / 24) * integral of the squared normal-gradient jump, where h_F is
/// the side length of the shared (sub)face. Box-boundary faces contribute
/// nothing. Returns eta_K (the square root).
pub fn kelly_indicator(mesh: &Mesh, field: &MeshField) -> Vec<f64> {
    let dim = mesh.dim();
    let nq = (field.order + 2).max(2);
    let (qn, qw) = gauss_lobatto(nq);
    let etas: Vec<f64> = (0..mesh.n_leaves())
        .into_par_iter()
        .map(|lp| {
            let id = mesh.leaves[lp];
            let cell = mesh.leaf(lp);
            let mut eta2 = 0.0;
            for axis in 0..dim {
                for dir in [-1i32, 1] {
                    let nbs = match mesh.face_neighbors(id, axis, dir) {
                        FaceNeighbors::Boundary => continue,
                        FaceNeighbors::Same(n) | FaceNeighbors::Coarser(n) => vec![n],
                        FaceNeighbors::Finer(v) => v,
                    };
                    let plane = if dir < 0 { cell.anchor[axis] } else { cell.anchor[axis] + cell.size };
                    for nb in nbs {
                        let nb_pos = mesh.leaf_position(nb).expect("neighbor is a leaf");
                        let ncell = mesh.leaf(nb_pos);
                        let h_f = cell.size.min(ncell.size);
                        if dim == 1 {
                            let mut p = [0.0; MAX_DIM];
                            p[axis] = plane;
                            let gk = mesh.field_gradient(field, lp, &p)[axis];
                            let gn = mesh.field_gradient(field, nb_pos, &p)[axis];
                            eta2 += h_f / 24.0 * (gk - gn) * (gk - gn);
                            continue;
                        }
                        // shared subface extents along in-face axes
                        let mut lo = [0.0; MAX_DIM];
                        let mut hi = [0.0; MAX_DIM];
                        for k in 0..dim {
                            if k == axis {
                                continue;
                            }
                            lo[k] = cell.anchor[k].max(ncell.anchor[k]);
                            hi[k] = (cell.anchor[k] + cell.size).min(ncell.anchor[k] + ncell.size);
                        }
                        let in_face: Vec<usize> = (0..dim).filter(|&k| k != axis).collect();
                        let nqp = qn.len();
                        let n_pts = nqp.pow(in_face.len() as u32);
                        let mut integral = 0.0;
                        for flat in 0..n_pts {
                            let mut p = [0.0; MAX_DIM];
                            p[axis] = plane;
                            let mut rem = flat;
                            let mut w = 1.0;
                            for &k in &in_face {
                                let i = rem % nqp;
                                rem /= nqp;
                                let half = 0.5 * (hi[k] - lo[k]);
                                p[k] = lo[k] + half * (qn[i] + 1.0);
                                w *= qw[i] * half;
                            }
                            let gk = mesh.field_gradient(field, lp, &p)[axis];
                            let gn = mesh.field_gradient(field, nb_pos, &p)[axis];
                            integral += w * (gk - gn) * (gk - gn);
                        }
                        eta2 += h_f / 24.0 * integral;
                    }
                }
            }
            eta2.sqrt()
        })
        .collect();
    etas
}

/// Iteratively refine `mesh` against `target`: interpolate at `order`,
/// evaluate the Kelly indicator, split flagged leaves, re-balance; stop when
/// a pass changes nothing or `max_passes` is reached.
pub fn refine_adapt<F>(
    mesh: &Mesh,
    target: F,
    policy: &RefinementPolicy,
    order: usize,
) -> Result<Mesh, MeshError>
where
    F: Fn(&[f64; MAX_DIM]) -> f64 + Sync,
{
    let mut m = mesh.clone();
    for _pass in 0..policy.max_passes {
        let field = m.interpolate(order, &target);
        let eta = kelly_indicator(&m, &field);
        let mut split_ids: Vec<u32> = Vec::new();
        for (lp, &e) in eta.iter().enumerate() {
            let cell = m.leaf(lp);
            let splittable = cell.size >= 2.0 * policy.min_size * (1.0 - 1e-12);
            if e > policy.threshold && splittable {
                split_ids.push(m.leaves[lp]);
            }
        }
        if split_ids.is_empty() {
            break;
        }
        for id in split_ids {
            m.split(id);
        }
        m.balance();
        if m.n_leaves() > policy.max_leaves {
            return Err(MeshError::BudgetExceeded { cap: policy.max_leaves });
        }
    }
    Ok(m)
}

impl Mesh {
    /// Plain-text dump: one line per leaf, `level anchor... size`.
    pub fn dump_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for lp in 0..self.n_leaves() {
            let c = self.leaf(lp);
            write!(w, "{}", c.level)?;
            for k in 0..self.dim() {
                write!(w, " {:.12}", c.anchor[k])?;
            }
            writeln!(w, " {:.12}", c.size)?;
        }
        Ok(())
    }

    /// Legacy-VTK unstructured grid export (line / pixel / voxel cells) with
    /// the refinement level as cell data.
    pub fn dump_vtk<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.dim();
        let corners = 1usize << dim;
        writeln!(w, "# vtk DataFile Version 2.0")?;
        writeln!(w, "adaptive mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.n_leaves() * corners)?;
        for lp in 0..self.n_leaves() {
            let c = self.leaf(lp);
            for v in 0..corners {
                let mut p = [0.0f64; 3];
                for k in 0..dim {
                    p[k] = c.anchor[k] + if v & (1 << k) != 0 { c.size } else { 0.0 };
                }
                writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
            }
        }
        writeln!(w, "CELLS {} {}", self.n_leaves(), self.n_leaves() * (corners + 1))?;
        for lp in 0..self.n_leaves() {
            write!(w, "{}", corners)?;
            for v in 0..corners {
                write!(w, " {}", lp * corners + v)?;
            }
            writeln!(w)?;
        }
        let vtk_type = match dim {
            1 => 3,  // VTK_LINE
            2 => 8,  // VTK_PIXEL
            _ => 11, // VTK_VOXEL
        };
        writeln!(w, "CELL_TYPES {}", self.n_leaves())?;
        for _ in 0..self.n_leaves() {
            writeln!(w, "{}", vtk_type)?;
        }
        writeln!(w, "CELL_DATA {}", self.n_leaves())?;
        writeln!(w, "SCALARS level int 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for lp in 0..self.n_leaves() {
            writeln!(w, "{}", self.leaf(lp).level)?;
        }
        Ok(())
    }
}
