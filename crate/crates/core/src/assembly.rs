//! Tensor Gauss-Lobatto Lagrange spaces on disk meshes and the
//! quadrature-perturbed assembly of the obstacle problem: stiffness entries
//! are Q_D(a grad phi_i . grad phi_j) with the q x q tensor Gauss rule, so the
//! point count q is the perturbation knob. Hanging degrees of freedom are
//! condensed onto their parent-edge masters and Dirichlet rows/columns are
//! eliminated, keeping the matrix symmetric positive definite for q >= p.

use crate::linalg;
use crate::mesh::{edge_key, EdgeKey, Mesh};
use crate::poly::{gauss_lobatto_nodes, LagrangeBasis};
use crate::quadrature::tensor_gauss;
use crate::sparse::{nested_dissection_order, CsrMatrix, SparseCholesky};
use crate::{Error, Result};
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

/// Pointwise coefficient or data field.
pub trait ScalarField {
    fn eval(&self, x: [f64; 2]) -> f64;
}

impl<F: Fn([f64; 2]) -> f64> ScalarField for F {
    fn eval(&self, x: [f64; 2]) -> f64 {
        self(x)
    }
}

/// Constant field.
pub struct Constant(pub f64);

impl ScalarField for Constant {
    fn eval(&self, _x: [f64; 2]) -> f64 {
        self.0
    }
}

/// Coefficient a, load f and obstacle psi of the obstacle problem.
pub struct ProblemData<'a> {
    pub a: &'a dyn ScalarField,
    pub f: &'a dyn ScalarField,
    pub psi: &'a dyn ScalarField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Free(u32),
    Dirichlet,
    Hanging,
}

/// Continuous tensor Gauss-Lobatto Lagrange space of uniform degree p.
pub struct FESpace<'m> {
    pub mesh: &'m Mesh,
    pub degree: usize,
    n_free: usize,
    /// global node ids per element, tensor-ordered (i + j*(p+1))
    element_nodes: Vec<Vec<u32>>,
    node_kind: Vec<NodeKind>,
    node_pos: Vec<[f64; 2]>,
    /// hanging node -> (master node, weight) list; masters are never hanging
    constraints: BTreeMap<u32, Vec<(u32, f64)>>,
    /// positions of the free nodes (the constraint point set G_hp)
    free_pos: Vec<[f64; 2]>,
}

/// Builds the space: global continuity across shared edges (orientation
/// normalized from lower to higher vertex id), hanging constraints from the
/// 1-irregular mesh, Dirichlet nodes on the domain boundary.
pub fn build_space<'m>(mesh: &'m Mesh, p: usize) -> Result<FESpace<'m>> {
    if p < 1 {
        return Err(Error::Precondition("polynomial degree must be >= 1"));
    }
    let nv = mesh.n_vertices();
    let ne = mesh.n_elements();
    let per_edge = p - 1;
    let per_interior = (p - 1) * (p - 1);
    let gll = gauss_lobatto_nodes(p);
    let edge_ids: BTreeMap<EdgeKey, u32> = mesh
        .edge_instances()
        .keys()
        .enumerate()
        .map(|(i, &k)| (k, i as u32))
        .collect();
    let n_edges = edge_ids.len();
    let n_nodes = nv + n_edges * per_edge + ne * per_interior;
    let edge_base = |e: u32| nv + (e as usize) * per_edge;
    let interior_base = |el: usize| nv + n_edges * per_edge + el * per_interior;

    // tensor-ordered node ids per element
    let mut element_nodes: Vec<Vec<u32>> = Vec::with_capacity(ne);
    for (ei, el) in mesh.elements.iter().enumerate() {
        let n1 = p + 1;
        let mut nodes = vec![u32::MAX; n1 * n1];
        let [v0, v1, v2, v3] = el.verts;
        nodes[0] = v0;
        nodes[p] = v1;
        nodes[p * n1] = v3;
        nodes[p + p * n1] = v2;
        if p >= 2 {
            // local edges: (traversal endpoints, local index step, start offset)
            let edges = [
                (v0, v1, 1usize, 0usize), // bottom: j = 0
                (v1, v2, n1, p),          // right: i = p
                (v3, v2, 1, p * n1),      // top: j = p
                (v0, v3, n1, 0),          // left: i = 0
            ];
            for &(a, b, step, start) in &edges {
                let e = edge_ids[&edge_key(a, b)];
                let base = edge_base(e);
                for k in 1..p {
                    // slot measured from the lower vertex id
                    let slot = if a < b { k - 1 } else { p - 1 - k };
                    nodes[start + k * step] = (base + slot) as u32;
                }
            }
            let ibase = interior_base(ei);
            let mut c = 0;
            for j in 1..p {
                for i in 1..p {
                    nodes[i + j * n1] = (ibase + c) as u32;
                    c += 1;
                }
            }
        }
        element_nodes.push(nodes);
    }

    // node positions (edges evaluated through their lowest owning element)
    let mut node_pos = vec![[f64::NAN; 2]; n_nodes];
    for (v, &pos) in mesh.vertices.iter().enumerate() {
        node_pos[v] = pos;
    }
    let n1 = p + 1;
    for (ei, el) in mesh.elements.iter().enumerate() {
        for j in 0..n1 {
            for i in 0..n1 {
                let node = element_nodes[ei][i + j * n1] as usize;
                if node_pos[node][0].is_nan() {
                    node_pos[node] = el.map.eval([gll[i], gll[j]]);
                }
            }
        }
    }

    // classification: boundary first, then hanging constraints
    let mut node_kind = vec![NodeKind::Free(0); n_nodes];
    for (&key, &e) in &edge_ids {
        if mesh.is_boundary_edge(key) {
            node_kind[key.0 as usize] = NodeKind::Dirichlet;
            node_kind[key.1 as usize] = NodeKind::Dirichlet;
            for s in 0..per_edge {
                node_kind[edge_base(e) + s] = NodeKind::Dirichlet;
            }
        }
    }
    let trace = LagrangeBasis::new(gll.clone());
    let mut constraints: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for h in mesh.hanging_nodes() {
        let (pl, ph) = h.parent;
        let m = h.vertex;
        debug_assert!(m > pl && m > ph);
        let parent_edge = edge_ids[&h.parent];
        // parent-edge trace nodes in canonical (pl -> ph) order
        let mut masters = Vec::with_capacity(p + 1);
        masters.push(pl);
        for s in 0..per_edge {
            masters.push((edge_base(parent_edge) + s) as u32);
        }
        masters.push(ph);
        let weights_at = |s_param: f64| -> Vec<(u32, f64)> {
            let mut v = vec![0.0; p + 1];
            let mut d = vec![0.0; p + 1];
            trace.eval_all(s_param, &mut v, &mut d);
            masters
                .iter()
                .zip(&v)
                .filter(|(_, w)| w.abs() > 1e-14)
                .map(|(&mn, &w)| (mn, w))
                .collect()
        };
        // hanging vertex sits at the parent midpoint
        node_kind[m as usize] = NodeKind::Hanging;
        constraints.insert(m, weights_at(0.0));
        // child-edge interior nodes: child (pl,m) covers s in [-1,0] with
        // s = (t-1)/2; child (ph,m) covers [0,1] with s = (1-t)/2
        for (lo, flip) in [(pl, false), (ph, true)] {
            let child = edge_key(lo, m);
            if let Some(&ce) = edge_ids.get(&child) {
                for k in 1..p {
                    let slot = if lo < m { k - 1 } else { p - 1 - k };
                    let node = (edge_base(ce) + slot) as u32;
                    let t = gll[k];
                    let s_param = if flip {
                        (1.0 - t) / 2.0
                    } else {
                        (t - 1.0) / 2.0
                    };
                    node_kind[node as usize] = NodeKind::Hanging;
                    constraints.insert(node, weights_at(s_param));
                }
            }
        }
    }
    // free numbering in node order
    let mut n_free = 0usize;
    let mut free_pos = Vec::new();
    for node in 0..n_nodes {
        if let NodeKind::Free(_) = node_kind[node] {
            node_kind[node] = NodeKind::Free(n_free as u32);
            free_pos.push(node_pos[node]);
            n_free += 1;
        }
    }
    Ok(FESpace {
        mesh,
        degree: p,
        n_free,
        element_nodes,
        node_kind,
        node_pos,
        constraints,
        free_pos,
    })
}

impl<'m> FESpace<'m> {
    /// Number of unknowns after Dirichlet elimination and hanging condensation.
    pub fn n_dofs(&self) -> usize {
        self.n_free
    }

    /// Physical positions of the free nodes (the constraint point set).
    pub fn free_positions(&self) -> &[[f64; 2]] {
        &self.free_pos
    }

    pub fn n_hanging(&self) -> usize {
        self.constraints.len()
    }

    /// Free index of a tensor-ordered local node, if it is an unknown.
    pub fn free_index_of_local(&self, element: usize, local: usize) -> Option<usize> {
        let node = self.element_nodes[element][local];
        match self.node_kind[node as usize] {
            NodeKind::Free(f) => Some(f as usize),
            _ => None,
        }
    }

    /// Resolution of a node onto free unknowns: (free index, weight) pairs.
    fn resolve(&self, node: u32) -> Vec<(u32, f64)> {
        match self.node_kind[node as usize] {
            NodeKind::Free(f) => vec![(f, 1.0)],
            NodeKind::Dirichlet => Vec::new(),
            NodeKind::Hanging => {
                let mut out = Vec::new();
                for &(master, w) in &self.constraints[&node] {
                    match self.node_kind[master as usize] {
                        NodeKind::Free(f) => out.push((f, w)),
                        NodeKind::Dirichlet => {}
                        NodeKind::Hanging => unreachable!("hanging master"),
                    }
                }
                out
            }
        }
    }

    /// Nodal values on one element (tensor order), reconstructing Dirichlet
    /// zeros and hanging combinations from the free coefficient vector.
    pub fn local_values(&self, coeffs: &[f64], element: usize) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_free);
        self.element_nodes[element]
            .iter()
            .map(|&node| {
                self.resolve(node)
                    .iter()
                    .map(|&(f, w)| w * coeffs[f as usize])
                    .sum()
            })
            .collect()
    }

    /// Interpolates a field at the space's nodes, returning free coefficients.
    pub fn interpolate(&self, field: &dyn ScalarField) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.n_free];
        for (node, kind) in self.node_kind.iter().enumerate() {
            if let NodeKind::Free(f) = kind {
                coeffs[*f as usize] = field.eval(self.node_pos[node]);
            }
        }
        coeffs
    }
}

/// Quadrature-perturbed discrete obstacle problem over the free unknowns.
pub struct DiscreteObstacleProblem {
    pub k_mat: CsrMatrix,
    pub load: Vec<f64>,
    pub obstacle: Vec<f64>,
    pub quad_q: usize,
    pub degree: usize,
    /// free-node coordinates, carried along for ordering and diagnostics
    pub positions: Vec<[f64; 2]>,
}

/// Reference-basis tables at the quadrature points of a q x q tensor rule.
struct BasisTables {
    ndof: usize,
    npts: usize,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
    val: Vec<f64>,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

fn basis_tables(p: usize, q: usize) -> Result<BasisTables> {
    let rule = tensor_gauss(q)?;
    let basis = LagrangeBasis::new(gauss_lobatto_nodes(p));
    let n1 = p + 1;
    let ndof = n1 * n1;
    let npts = rule.points.len();
    let mut val = vec![0.0; ndof * npts];
    let mut dx = vec![0.0; ndof * npts];
    let mut dy = vec![0.0; ndof * npts];
    let mut vx = vec![0.0; n1];
    let mut dvx = vec![0.0; n1];
    let mut vy = vec![0.0; n1];
    let mut dvy = vec![0.0; n1];
    for (g, pt) in rule.points.iter().enumerate() {
        basis.eval_all(pt[0], &mut vx, &mut dvx);
        basis.eval_all(pt[1], &mut vy, &mut dvy);
        for j in 0..n1 {
            for i in 0..n1 {
                let a = i + j * n1;
                val[a * npts + g] = vx[i] * vy[j];
                dx[a * npts + g] = dvx[i] * vy[j];
                dy[a * npts + g] = vx[i] * dvy[j];
            }
        }
    }
    Ok(BasisTables {
        ndof,
        npts,
        points: rule.points,
        weights: rule.weights,
        val,
        dx,
        dy,
    })
}

/// Element stiffness and load under the q-point tensor Gauss rule.
fn element_matrices(
    el: &crate::mesh::Element,
    tables: &BasisTables,
    data: &ProblemData,
    k_local: &mut [f64],
    f_local: &mut [f64],
) -> Result<()> {
    let ndof = tables.ndof;
    let npts = tables.npts;
    k_local.fill(0.0);
    f_local.fill(0.0);
    let mut gx = vec![0.0; ndof];
    let mut gy = vec![0.0; ndof];
    for g in 0..npts {
        let (x, jac) = el.map.eval_with_jacobian(tables.points[g]);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::Geometry(alloc::format!(
                "singular Jacobian at quadrature point ({}, {})",
                tables.points[g][0],
                tables.points[g][1]
            )));
        }
        let wq = tables.weights[g] * det;
        let aval = data.a.eval(x);
        let fval = data.f.eval(x);
        let inv_det = 1.0 / det;
        for a in 0..ndof {
            let du = tables.dx[a * npts + g];
            let dv = tables.dy[a * npts + g];
            gx[a] = (jac[1][1] * du - jac[1][0] * dv) * inv_det;
            gy[a] = (-jac[0][1] * du + jac[0][0] * dv) * inv_det;
        }
        let wa = wq * aval;
        for a in 0..ndof {
            let gxa = gx[a];
            let gya = gy[a];
            for b in 0..=a {
                k_local[a * ndof + b] += wa * (gxa * gx[b] + gya * gy[b]);
            }
            f_local[a] += wq * fval * tables.val[a * npts + g];
        }
    }
    for a in 0..ndof {
        for b in a + 1..ndof {
            k_local[a * ndof + b] = k_local[b * ndof + a];
        }
    }
    Ok(())
}

/// Stiffness and load of a single element map under the q-point rule, in
/// tensor-local ordering; a diagnostic surface for the analytic oracles.
pub fn single_element_matrices(
    el: &crate::mesh::Element,
    p: usize,
    q: usize,
    data: &ProblemData,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tables = basis_tables(p, q)?;
    let mut k = vec![0.0; tables.ndof * tables.ndof];
    let mut f = vec![0.0; tables.ndof];
    element_matrices(el, &tables, data, &mut k, &mut f)?;
    Ok((k, f))
}

/// Assembles the perturbed operator and load with a q x q Gauss rule per
/// element; the obstacle vector holds psi at the free nodes.
pub fn assemble(space: &FESpace, data: &ProblemData, q: usize) -> Result<DiscreteObstacleProblem> {
    if q < 1 {
        return Err(Error::Precondition("quadrature point count must be >= 1"));
    }
    let p = space.degree;
    let tables = basis_tables(p, q)?;
    let ndof = tables.ndof;
    let mut k_local = vec![0.0; ndof * ndof];
    let mut f_local = vec![0.0; ndof];
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    let mut load = vec![0.0; space.n_free];
    let mut resolved: Vec<Vec<(u32, f64)>> = Vec::with_capacity(ndof);
    for (ei, el) in space.mesh.elements.iter().enumerate() {
        element_matrices(el, &tables, data, &mut k_local, &mut f_local)?;
        resolved.clear();
        for a in 0..ndof {
            resolved.push(space.resolve(space.element_nodes[ei][a]));
        }
        for a in 0..ndof {
            for &(ga, wa) in &resolved[a] {
                load[ga as usize] += wa * f_local[a];
                for b in 0..ndof {
                    let kab = k_local[a * ndof + b];
                    if kab == 0.0 {
                        continue;
                    }
                    for &(gb, wb) in &resolved[b] {
                        triplets.push((ga, gb, wa * wb * kab));
                    }
                }
            }
        }
    }
    let k_mat = CsrMatrix::from_triplets(space.n_free, &triplets);
    let obstacle: Vec<f64> = space.free_pos.iter().map(|&x| data.psi.eval(x)).collect();
    Ok(DiscreteObstacleProblem {
        k_mat,
        load,
        obstacle,
        quad_q: q,
        degree: p,
        positions: space.free_pos.clone(),
    })
}

/// Extreme eigenvalues (min, max) of the assembled matrix: dense
/// tridiagonalization below the size cutoff, otherwise power iteration for
/// the largest and shift-inverted iteration for the smallest (0.0 reported
/// when the factorization detects a singular/indefinite matrix).
pub fn spectrum_report(problem: &DiscreteObstacleProblem) -> Result<(f64, f64)> {
    let n = problem.k_mat.n;
    if n == 0 {
        return Err(Error::Precondition("empty problem"));
    }
    if n <= 4500 {
        let eig = linalg::sym_eigen(&problem.k_mat.to_dense().symmetric_part())?;
        return Ok((eig.values[0], *eig.values.last().unwrap()));
    }
    let a = &problem.k_mat;
    let mut rng = crate::rng::Rng::new(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut max_eig = 0.0;
    for _ in 0..600 {
        let w = a.matvec(&v);
        let norm = linalg::norm2(&w);
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let new_eig = linalg::dot(&next, &a.matvec(&next));
        let done = (new_eig - max_eig).abs() <= 1e-9 * new_eig.abs();
        max_eig = new_eig;
        v = next;
        if done {
            break;
        }
    }
    let order = nested_dissection_order(a, &problem.positions);
    let chol = match SparseCholesky::factor(a, &order) {
        Ok(c) => c,
        Err(Error::NotPositiveDefinite(_)) => return Ok((0.0, max_eig)),
        Err(e) => return Err(e),
    };
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut min_eig = max_eig;
    for _ in 0..200 {
        let w = chol.solve(&v);
        let norm = linalg::norm2(&w);
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let new_eig = linalg::dot(&next, &a.matvec(&next));
        let done = (new_eig - min_eig).abs() <= 1e-9 * new_eig.abs();
        min_eig = new_eig;
        v = next;
        if done {
            break;
        }
    }
    Ok((min_eig, max_eig))
}

/// Value and physical gradient of a discrete function at a reference point
/// of one element.
pub fn evaluate_solution(
    space: &FESpace,
    coeffs: &[f64],
    element: usize,
    xhat: [f64; 2],
) -> Result<(f64, [f64; 2])> {
    if !(-1.0..=1.0).contains(&xhat[0]) || !(-1.0..=1.0).contains(&xhat[1]) {
        return Err(Error::Precondition("reference point outside [-1,1]^2"));
    }
    let p = space.degree;
    let n1 = p + 1;
    let basis = LagrangeBasis::new(gauss_lobatto_nodes(p));
    let mut vx = vec![0.0; n1];
    let mut dvx = vec![0.0; n1];
    let mut vy = vec![0.0; n1];
    let mut dvy = vec![0.0; n1];
    basis.eval_all(xhat[0], &mut vx, &mut dvx);
    basis.eval_all(xhat[1], &mut vy, &mut dvy);
    let local = space.local_values(coeffs, element);
    let mut value = 0.0;
    let mut du = 0.0;
    let mut dv = 0.0;
    for j in 0..n1 {
        for i in 0..n1 {
            let c = local[i + j * n1];
            value += c * vx[i] * vy[j];
            du += c * dvx[i] * vy[j];
            dv += c * vx[i] * dvy[j];
        }
    }
    let jac = space.mesh.elements[element].map.jacobian(xhat);
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let gx = (jac[1][1] * du - jac[1][0] * dv) / det;
    let gy = (-jac[0][1] * du + jac[0][0] * dv) / det;
    Ok((value, [gx, gy]))
}
