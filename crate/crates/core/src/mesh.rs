//! Quadrilateral meshes of the disk with three element-map kinds: affine
//! (central block), bilinear (inner ring, where the free boundary lives) and
//! degree-6 curved maps whose outer edge hugs the circle to machine precision.
//! Refinement is isotropic 1->4 with 1-irregular hanging nodes.

use crate::fmath;
use crate::linalg::{Lu, Mat};
use crate::poly::{chebyshev_t, chebyshev_to_monomial, TensorPoly2};
use crate::quadrature::tensor_gauss;
use crate::{Error, Result};
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub type EdgeKey = (u32, u32);

#[inline]
pub fn edge_key(a: u32, b: u32) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Linear,
    Bilinear,
    Curved6,
}

/// Circular-arc span of the outer edge (at yhat = +1) of a curved element,
/// parameterized by angle from xhat = -1 to xhat = +1. t0 > t1 is allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSpan {
    pub t0: f64,
    pub t1: f64,
}

/// Polynomial reference map F_D: [-1,1]^2 -> R^2 in tensor monomial form.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMap {
    pub kind: MapKind,
    pub x: TensorPoly2,
    pub y: TensorPoly2,
    pub arc: Option<ArcSpan>,
}

impl ElementMap {
    /// Physical point for a reference point.
    pub fn eval(&self, xhat: [f64; 2]) -> [f64; 2] {
        [self.x.eval(xhat[0], xhat[1]), self.y.eval(xhat[0], xhat[1])]
    }

    /// Jacobian [[dx/dxhat, dx/dyhat], [dy/dxhat, dy/dyhat]].
    pub fn jacobian(&self, xhat: [f64; 2]) -> [[f64; 2]; 2] {
        let (_, xu, xv) = self.x.eval_grad(xhat[0], xhat[1]);
        let (_, yu, yv) = self.y.eval_grad(xhat[0], xhat[1]);
        [[xu, xv], [yu, yv]]
    }

    /// Point and Jacobian in one pass.
    pub fn eval_with_jacobian(&self, xhat: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (x, xu, xv) = self.x.eval_grad(xhat[0], xhat[1]);
        let (y, yu, yv) = self.y.eval_grad(xhat[0], xhat[1]);
        ([x, y], [[xu, xv], [yu, yv]])
    }

    fn affine_from_corners(c: [[f64; 2]; 4]) -> ElementMap {
        let mut map = Self::bilinear_from_corners(c);
        // a parallelogram has no xy term; zero out the roundoff remnant
        let scale = c
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        debug_assert!(
            map.x.coeff(1, 1).abs() <= 1e-12 * scale.max(1.0)
                && map.y.coeff(1, 1).abs() <= 1e-12 * scale.max(1.0),
            "affine_from_corners on a non-parallelogram"
        );
        *map.x.coeff_mut(1, 1) = 0.0;
        *map.y.coeff_mut(1, 1) = 0.0;
        map.kind = MapKind::Linear;
        map
    }

    fn bilinear_from_corners(c: [[f64; 2]; 4]) -> ElementMap {
        let [v0, v1, v2, v3] = c;
        let mut x = TensorPoly2::zeros(2, 2);
        let mut y = TensorPoly2::zeros(2, 2);
        for (comp, poly) in [(0usize, &mut x), (1, &mut y)] {
            *poly.coeff_mut(0, 0) = 0.25 * (v0[comp] + v1[comp] + v2[comp] + v3[comp]);
            *poly.coeff_mut(1, 0) = 0.25 * (-v0[comp] + v1[comp] + v2[comp] - v3[comp]);
            *poly.coeff_mut(0, 1) = 0.25 * (-v0[comp] - v1[comp] + v2[comp] + v3[comp]);
            *poly.coeff_mut(1, 1) = 0.25 * (v0[comp] - v1[comp] + v2[comp] - v3[comp]);
        }
        ElementMap {
            kind: MapKind::Bilinear,
            x,
            y,
            arc: None,
        }
    }

    /// Ruled patch between a straight bottom edge (yhat=-1) and a fitted
    /// circular arc on top (yhat=+1).
    fn lofted_curved(
        bottom: [[f64; 2]; 2],
        top_x: &[f64],
        top_y: &[f64],
        arc: ArcSpan,
    ) -> ElementMap {
        let mut x = TensorPoly2::zeros(7, 2);
        let mut y = TensorPoly2::zeros(7, 2);
        let bot_x = [
            0.5 * (bottom[0][0] + bottom[1][0]),
            0.5 * (bottom[1][0] - bottom[0][0]),
        ];
        let bot_y = [
            0.5 * (bottom[0][1] + bottom[1][1]),
            0.5 * (bottom[1][1] - bottom[0][1]),
        ];
        for i in 0..7 {
            let bx = if i < 2 { bot_x[i] } else { 0.0 };
            let by = if i < 2 { bot_y[i] } else { 0.0 };
            *x.coeff_mut(i, 0) = 0.5 * (bx + top_x[i]);
            *x.coeff_mut(i, 1) = 0.5 * (top_x[i] - bx);
            *y.coeff_mut(i, 0) = 0.5 * (by + top_y[i]);
            *y.coeff_mut(i, 1) = 0.5 * (top_y[i] - by);
        }
        ElementMap {
            kind: MapKind::Curved6,
            x,
            y,
            arc: Some(arc),
        }
    }
}

/// Degree-6 polynomial curve hugging the circle of the given radius between
/// two angles. The endpoints are interpolated exactly by construction
/// (the curve is the endpoint chord plus a combination of (1-t^2) T_k(t)
/// bubbles), and the remaining coefficients minimize the radial deviation
/// |z(s)|^2 - radius^2 over dense Chebyshev samples by Gauss-Newton. Plain
/// interpolation of a 45-degree arc leaves a ~5e-9 radial error; this
/// construction reaches the rounding level, which the boundary-fidelity
/// invariant requires.
pub fn fit_circle_arc(radius: f64, t0: f64, t1: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    const NB: usize = 5; // bubbles (1-t^2) T_k, k = 0..NB
    const NS: usize = 25; // radial residual samples
    let mid = 0.5 * (t0 + t1);
    let half = 0.5 * (t1 - t0);
    let angle = |t: f64| mid + half * t;
    let p0 = [
        radius * fmath::cos(angle(-1.0)),
        radius * fmath::sin(angle(-1.0)),
    ];
    let p1 = [
        radius * fmath::cos(angle(1.0)),
        radius * fmath::sin(angle(1.0)),
    ];
    let line = |t: f64| {
        [
            0.5 * (p0[0] + p1[0]) + 0.5 * t * (p1[0] - p0[0]),
            0.5 * (p0[1] + p1[1]) + 0.5 * t * (p1[1] - p0[1]),
        ]
    };
    let bubble = |k: usize, t: f64| (1.0 - t * t) * chebyshev_t(k, t);
    // initial guess: collocation of (exact arc - chord) at NB Chebyshev points
    let init_nodes: Vec<f64> = (0..NB)
        .map(|m| fmath::cos(core::f64::consts::PI * (2.0 * m as f64 + 1.0) / (2.0 * NB as f64)))
        .collect();
    let mut vand = Mat::zeros(NB, NB);
    for (r, &t) in init_nodes.iter().enumerate() {
        for k in 0..NB {
            vand[(r, k)] = bubble(k, t);
        }
    }
    let lu = Lu::new(&vand)?;
    let gx: Vec<f64> = init_nodes
        .iter()
        .map(|&t| radius * fmath::cos(angle(t)) - line(t)[0])
        .collect();
    let gy: Vec<f64> = init_nodes
        .iter()
        .map(|&t| radius * fmath::sin(angle(t)) - line(t)[1])
        .collect();
    let bx0 = lu.solve(&gx);
    let by0 = lu.solve(&gy);
    // unknowns: v[2k] = x-bubble coefficient, v[2k+1] = y-bubble coefficient
    let mut v = vec![0.0; 2 * NB];
    for k in 0..NB {
        v[2 * k] = bx0[k];
        v[2 * k + 1] = by0[k];
    }
    let samples: Vec<f64> = (0..NS)
        .map(|m| fmath::cos(core::f64::consts::PI * (2.0 * m as f64 + 1.0) / (2.0 * NS as f64)))
        .collect();
    let eval_curve = |v: &[f64], t: f64| -> (f64, f64) {
        let base = line(t);
        let mut zx = base[0];
        let mut zy = base[1];
        for k in 0..NB {
            let b = bubble(k, t);
            zx += v[2 * k] * b;
            zy += v[2 * k + 1] * b;
        }
        (zx, zy)
    };
    let r2 = radius * radius;
    let dense_worst = |v: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for m in 0..=32 {
            let t = -1.0 + 2.0 * m as f64 / 32.0;
            let (zx, zy) = eval_curve(v, t);
            worst = worst.max((fmath::hypot(zx, zy) - radius).abs());
        }
        worst
    };
    let mut best = v.clone();
    let mut best_worst = dense_worst(&v);
    // Full Newton on the weighted least-squares objective. The curve is
    // linear in v, so the residual Hessian term (which Gauss-Newton drops)
    // is a constant Gram per sample; keeping it lets the iteration exploit
    // second-order tangential adjustments of the curve. Lawson reweighting
    // pushes the solution toward the minimax (equioscillating) radial fit.
    let mut weights = [1.0f64; NS];
    let nvar = 2 * NB;
    for round in 0..80 {
        let mut e = vec![0.0; NS];
        let mut zs = vec![(0.0, 0.0); NS];
        for (m, &s) in samples.iter().enumerate() {
            let z = eval_curve(&v, s);
            zs[m] = z;
            e[m] = z.0 * z.0 + z.1 * z.1 - r2;
        }
        if round >= 3 {
            let mut total = 0.0;
            for (wm, em) in weights.iter_mut().zip(&e) {
                *wm *= em.abs().max(1e-17 * r2);
                total += *wm;
            }
            for wm in weights.iter_mut() {
                *wm *= NS as f64 / total;
            }
        }
        let mut grad = vec![0.0; nvar];
        let mut hess = Mat::zeros(nvar, nvar);
        for (m, &s) in samples.iter().enumerate() {
            let (zx, zy) = zs[m];
            let w = weights[m];
            let mut row = vec![0.0; nvar];
            let mut bub = [0.0; NB];
            for k in 0..NB {
                let b = bubble(k, s);
                bub[k] = b;
                row[2 * k] = 2.0 * zx * b;
                row[2 * k + 1] = 2.0 * zy * b;
            }
            for a in 0..nvar {
                grad[a] += w * e[m] * row[a];
                for b in 0..=a {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
            // residual-curvature term: e_m'' = 2 bubble_a bubble_b per component
            for ka in 0..NB {
                for kb in 0..=ka {
                    let g = 2.0 * w * e[m] * bub[ka] * bub[kb];
                    hess[(2 * ka, 2 * kb)] += g;
                    hess[(2 * ka + 1, 2 * kb + 1)] += g;
                }
            }
        }
        for a in 0..nvar {
            for b in a + 1..nvar {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        let eig = crate::linalg::sym_eigen(&hess)?;
        let lam_max = eig.values.last().copied().unwrap_or(0.0).max(1e-300);
        let floor = 1e-13 * lam_max;
        let mut delta = vec![0.0; nvar];
        for (i, &lam) in eig.values.iter().enumerate() {
            if lam.abs() <= floor {
                continue;
            }
            let ui: Vec<f64> = (0..nvar).map(|r| eig.vectors[(r, i)]).collect();
            let coef = crate::linalg::dot(&ui, &grad) / lam.abs().max(floor);
            crate::linalg::axpy(coef, &ui, &mut delta);
        }
        for (vi, di) in v.iter_mut().zip(&delta) {
            *vi -= di;
        }
        let worst = dense_worst(&v);
        if worst < best_worst {
            best_worst = worst;
            best = v.clone();
        }
        if best_worst < 1e-15 * radius {
            break;
        }
    }
    if best_worst > 5e-13 * radius {
        return Err(Error::Geometry(format!(
            "arc fit radial error {best_worst:.3e} exceeds tolerance"
        )));
    }
    // assemble monomial coefficients: chord + bubbles
    let mut cx = vec![0.0; 7];
    let mut cy = vec![0.0; 7];
    cx[0] = 0.5 * (p0[0] + p1[0]);
    cx[1] = 0.5 * (p1[0] - p0[0]);
    cy[0] = 0.5 * (p0[1] + p1[1]);
    cy[1] = 0.5 * (p1[1] - p0[1]);
    for k in 0..NB {
        let mut tk = vec![0.0; k + 1];
        tk[k] = 1.0;
        let mono_tk = chebyshev_to_monomial(&tk);
        for (i, &c) in mono_tk.iter().enumerate() {
            // (1 - t^2) T_k
            cx[i] += best[2 * k] * c;
            cx[i + 2] -= best[2 * k] * c;
            cy[i] += best[2 * k + 1] * c;
            cy[i + 2] -= best[2 * k + 1] * c;
        }
    }
    Ok((cx, cy))
}

#[derive(Debug, Clone)]
pub struct Element {
    /// Corner vertices, counterclockwise, at reference corners
    /// (-1,-1), (1,-1), (1,1), (-1,1).
    pub verts: [u32; 4],
    pub map: ElementMap,
    pub level: u8,
}

impl Element {
    /// Local edges in reference order: bottom, right, top, left.
    /// Pairs are in traversal order of increasing reference parameter.
    pub fn local_edges(&self) -> [(u32, u32); 4] {
        let [v0, v1, v2, v3] = self.verts;
        [(v0, v1), (v1, v2), (v3, v2), (v0, v3)]
    }
}

/// Where an element of the current mesh came from, relative to the mesh it
/// was produced from (used for warm starts and solution transfer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Root,
    Kept { prev: u32 },
    Child { prev: u32, quadrant: u8 },
}

/// A vertex hanging on the midpoint of a coarse edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HangingNode {
    pub vertex: u32,
    pub parent: EdgeKey,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub radius: f64,
    pub vertices: Vec<[f64; 2]>,
    pub elements: Vec<Element>,
    pub provenance: Vec<Provenance>,
    /// All edge midpoints ever created: (coarse edge) -> midpoint vertex.
    midpoints: BTreeMap<EdgeKey, u32>,
    /// Edges lying on the domain boundary (kept current across refinements).
    boundary: BTreeSet<EdgeKey>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn is_boundary_edge(&self, key: EdgeKey) -> bool {
        self.boundary.contains(&key)
    }

    /// Elements incident to each edge of the current mesh.
    pub fn edge_instances(&self) -> BTreeMap<EdgeKey, Vec<u32>> {
        let mut map: BTreeMap<EdgeKey, Vec<u32>> = BTreeMap::new();
        for (ei, el) in self.elements.iter().enumerate() {
            for (a, b) in el.local_edges() {
                map.entry(edge_key(a, b)).or_default().push(ei as u32);
            }
        }
        map
    }

    /// Hanging nodes of the current mesh: midpoints whose parent edge is still
    /// an edge of some (coarse) element while its halves belong to finer ones.
    pub fn hanging_nodes(&self) -> Vec<HangingNode> {
        let inst = self.edge_instances();
        let mut out = Vec::new();
        for (&parent, &m) in &self.midpoints {
            if !inst.contains_key(&parent) {
                continue;
            }
            let (a, b) = parent;
            if inst.contains_key(&edge_key(a, m)) || inst.contains_key(&edge_key(m, b)) {
                out.push(HangingNode { vertex: m, parent });
            }
        }
        out
    }

    pub fn element_diameter(&self, ei: usize) -> f64 {
        let el = &self.elements[ei];
        let mut pts: Vec<[f64; 2]> = el
            .verts
            .iter()
            .map(|&v| self.vertices[v as usize])
            .collect();
        if el.map.arc.is_some() {
            pts.push(el.map.eval([0.0, 1.0]));
        }
        let mut h = 0.0f64;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                h = h.max(fmath::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
            }
        }
        h
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_elements()).fold(0.0, |m, i| m.max(self.element_diameter(i)))
    }

    /// Total area via exact quadrature of det(grad F) on every element.
    pub fn total_area(&self) -> f64 {
        let rule = tensor_gauss(7).expect("q=7");
        let mut area = 0.0;
        for el in &self.elements {
            for (pt, w) in rule.points.iter().zip(&rule.weights) {
                let j = el.map.jacobian(*pt);
                area += w * (j[0][0] * j[1][1] - j[0][1] * j[1][0]);
            }
        }
        area
    }

    /// Shape-regularity metric gamma_D = max(h^-1 |grad F|, h |grad F^-1|)
    /// sampled at 5x5 Gauss points; returns the mesh-wide maximum.
    pub fn shape_regularity(&self) -> f64 {
        let rule = tensor_gauss(5).expect("q=5");
        let mut worst = 0.0f64;
        for ei in 0..self.n_elements() {
            let h = self.element_diameter(ei);
            let el = &self.elements[ei];
            for pt in &rule.points {
                let j = el.map.jacobian(*pt);
                let (smin, smax) = singular_values_2x2(j);
                worst = worst.max((smax / h).max(h / smin));
            }
        }
        worst
    }

    /// Minimum of det(grad F) over all tensor Gauss points of degree 13 on
    /// every element; positive on valid meshes.
    pub fn min_jacobian(&self) -> f64 {
        let rule = tensor_gauss(7).expect("q=7");
        let mut min_det = f64::INFINITY;
        for el in &self.elements {
            for pt in &rule.points {
                let j = el.map.jacobian(*pt);
                min_det = min_det.min(j[0][0] * j[1][1] - j[0][1] * j[1][0]);
            }
        }
        min_det
    }

    /// Largest deviation of boundary-edge samples from the circle, over 13
    /// sample points per boundary edge. Zero for meshes without arcs.
    pub fn boundary_fidelity(&self) -> f64 {
        let mut worst = 0.0f64;
        for el in &self.elements {
            if el.map.arc.is_none() {
                continue;
            }
            for m in 0..13 {
                let t = -1.0 + 2.0 * m as f64 / 12.0;
                let p = el.map.eval([t, 1.0]);
                worst = worst.max((fmath::hypot(p[0], p[1]) - self.radius).abs());
            }
        }
        worst
    }

    /// Structural validation used by tests: orientation, 1-irregularity,
    /// conformity (every edge used by at most two elements) and boundary fit.
    pub fn validate(&self) -> Result<()> {
        if self.min_jacobian() <= 0.0 {
            return Err(Error::Geometry(format!(
                "non-positive Jacobian (min {:.3e})",
                self.min_jacobian()
            )));
        }
        let inst = self.edge_instances();
        for (k, elems) in &inst {
            if elems.len() > 2 {
                return Err(Error::Geometry(format!(
                    "edge {k:?} used by {} elements",
                    elems.len()
                )));
            }
        }
        // 1-irregularity: the halves of a split edge may not be split again
        // while the parent edge is still present
        for h in self.hanging_nodes() {
            let (a, b) = h.parent;
            for half in [edge_key(a, h.vertex), edge_key(h.vertex, b)] {
                if let Some(&grand) = self.midpoints.get(&half) {
                    let (c, d) = half;
                    if inst.contains_key(&edge_key(c, grand))
                        || inst.contains_key(&edge_key(grand, d))
                    {
                        return Err(Error::Geometry(format!(
                            "edge {:?} carries two hanging levels",
                            h.parent
                        )));
                    }
                }
            }
        }
        if self.radius > 0.0 && self.boundary_fidelity() > 1e-12 * self.radius {
            return Err(Error::Geometry(format!(
                "boundary fidelity {:.3e}",
                self.boundary_fidelity()
            )));
        }
        Ok(())
    }

    /// Isotropic refinement of every element.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        self.refine_adaptive(&(0..self.n_elements()).collect::<Vec<_>>())
    }

    /// Splits the marked elements 1->4 and closes the mesh to restore
    /// 1-irregularity. An empty marking returns the mesh unchanged (as Kept).
    pub fn refine_adaptive(&self, marked: &[usize]) -> Result<Mesh> {
        let ne = self.n_elements();
        let mut split = vec![false; ne];
        for &m in marked {
            split[m] = true;
        }
        // closure: refining an element whose edge is the half of a still-live
        // coarse edge forces the coarse neighbor to refine first
        let inst = self.edge_instances();
        let mut child_to_parent: BTreeMap<EdgeKey, EdgeKey> = BTreeMap::new();
        for (&parent, &m) in &self.midpoints {
            if inst.contains_key(&parent) {
                let (a, b) = parent;
                child_to_parent.insert(edge_key(a, m), parent);
                child_to_parent.insert(edge_key(m, b), parent);
            }
        }
        let mut stack: Vec<usize> = (0..ne).filter(|&i| split[i]).collect();
        while let Some(ei) = stack.pop() {
            for (a, b) in self.elements[ei].local_edges() {
                if let Some(parent) = child_to_parent.get(&edge_key(a, b)) {
                    if let Some(owners) = inst.get(parent) {
                        for &o in owners {
                            if !split[o as usize] {
                                split[o as usize] = true;
                                stack.push(o as usize);
                            }
                        }
                    }
                }
            }
        }

        let n_split = split.iter().filter(|&&s| s).count();
        let mut vertices = self.vertices.clone();
        let mut midpoints = self.midpoints.clone();
        let mut boundary = self.boundary.clone();
        let mut elements = Vec::with_capacity(ne + 3 * n_split);
        let mut provenance = Vec::with_capacity(ne + 3 * n_split);

        for ei in 0..ne {
            let el = &self.elements[ei];
            if !split[ei] {
                elements.push(el.clone());
                provenance.push(Provenance::Kept { prev: ei as u32 });
                continue;
            }
            let [v0, v1, v2, v3] = el.verts;
            let local = el.local_edges();
            let mut mids = [0u32; 4];
            for (le, &(a, b)) in local.iter().enumerate() {
                let key = edge_key(a, b);
                let mid = *midpoints.entry(key).or_insert_with(|| {
                    let p = if let (2, Some(arc)) = (le, el.map.arc) {
                        let tm = 0.5 * (arc.t0 + arc.t1);
                        [self.radius * fmath::cos(tm), self.radius * fmath::sin(tm)]
                    } else {
                        let pa = vertices[a as usize];
                        let pb = vertices[b as usize];
                        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
                    };
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                });
                mids[le] = mid;
                if boundary.contains(&key) {
                    boundary.remove(&key);
                    boundary.insert(edge_key(a, mid));
                    boundary.insert(edge_key(mid, b));
                }
            }
            let center = el.map.eval([0.0, 0.0]);
            vertices.push(center);
            let c = (vertices.len() - 1) as u32;
            let corner_ids = [
                [v0, mids[0], c, mids[3]],
                [mids[0], v1, mids[1], c],
                [mids[3], c, mids[2], v3],
                [c, mids[1], v2, mids[2]],
            ];
            for (quadrant, ids) in corner_ids.iter().enumerate() {
                let pts = [
                    vertices[ids[0] as usize],
                    vertices[ids[1] as usize],
                    vertices[ids[2] as usize],
                    vertices[ids[3] as usize],
                ];
                let map = match (el.map.kind, quadrant) {
                    (MapKind::Linear, _) => ElementMap::affine_from_corners(pts),
                    (MapKind::Bilinear, _) => ElementMap::bilinear_from_corners(pts),
                    (MapKind::Curved6, 0) | (MapKind::Curved6, 1) => {
                        ElementMap::bilinear_from_corners(pts)
                    }
                    (MapKind::Curved6, q) => {
                        let arc = el.map.arc.unwrap();
                        let tm = 0.5 * (arc.t0 + arc.t1);
                        let span = if q == 2 {
                            ArcSpan { t0: arc.t0, t1: tm }
                        } else {
                            ArcSpan { t0: tm, t1: arc.t1 }
                        };
                        let (tx, ty) = fit_circle_arc(self.radius, span.t0, span.t1)?;
                        ElementMap::lofted_curved([pts[0], pts[1]], &tx, &ty, span)
                    }
                };
                elements.push(Element {
                    verts: *ids,
                    map,
                    level: el.level + 1,
                });
                provenance.push(Provenance::Child {
                    prev: ei as u32,
                    quadrant: quadrant as u8,
                });
            }
        }
        Ok(Mesh {
            radius: self.radius,
            vertices,
            elements,
            provenance,
            midpoints,
            boundary,
        })
    }
}

fn singular_values_2x2(j: [[f64; 2]; 2]) -> (f64, f64) {
    let frob2 = j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = (frob2 * frob2 - 4.0 * det * det).max(0.0);
    let root = fmath::sqrt(disc);
    let smax = fmath::sqrt(0.5 * (frob2 + root));
    let smin2 = 0.5 * (frob2 - root);
    let smin = if smin2 > 0.0 {
        fmath::sqrt(smin2)
    } else {
        det.abs() / smax.max(1e-300)
    };
    (smin, smax)
}

/// Initial 20-element decomposition of the disk of the given radius:
/// a 2x2 affine central block, a bilinear ring of 8 elements containing the
/// unit circle (where the obstacle's free boundary lives for the radius-1.5
/// study), and 8 curved boundary elements. One uniform refinement yields the
/// 80-element mesh used by the p-version.
pub fn build_initial_disk_mesh(radius: f64) -> Result<Mesh> {
    if radius <= 0.0 {
        return Err(Error::Precondition("disk radius must be positive"));
    }
    let s = 0.42 * radius;
    let rho = 0.78 * radius;
    let mut vertices: Vec<[f64; 2]> = Vec::with_capacity(25);
    // 3x3 block grid, row-major bottom-to-top
    let grid = [-s, 0.0, s];
    for &y in &grid {
        for &x in &grid {
            vertices.push([x, y]);
        }
    }
    let gid = |i: usize, j: usize| (j * 3 + i) as u32;
    let angle = |k: usize| core::f64::consts::PI / 4.0 * (k % 8) as f64;
    // octagon ring (ids 9..17) and boundary circle ring (ids 17..25)
    for k in 0..8 {
        let a = angle(k);
        vertices.push([rho * fmath::cos(a), rho * fmath::sin(a)]);
    }
    for k in 0..8 {
        let a = angle(k);
        vertices.push([radius * fmath::cos(a), radius * fmath::sin(a)]);
    }
    let oct = |k: usize| (9 + k % 8) as u32;
    let circ = |k: usize| (17 + k % 8) as u32;
    // block-perimeter vertex on the ray at 45 degrees * k
    let block_perim = |k: usize| -> u32 {
        match k % 8 {
            0 => gid(2, 1),
            1 => gid(2, 2),
            2 => gid(1, 2),
            3 => gid(0, 2),
            4 => gid(0, 1),
            5 => gid(0, 0),
            6 => gid(1, 0),
            7 => gid(2, 0),
            _ => unreachable!(),
        }
    };

    let mut elements = Vec::with_capacity(20);
    // central 2x2 block: affine maps
    for j in 0..2 {
        for i in 0..2 {
            let ids = [gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)];
            let pts = ids.map(|v| vertices[v as usize]);
            elements.push(Element {
                verts: ids,
                map: ElementMap::affine_from_corners(pts),
                level: 0,
            });
        }
    }
    // inner ring: bilinear; the ray at k+1 comes first so that yhat points
    // outward while the orientation stays positive
    for k in 0..8 {
        let ids = [block_perim(k + 1), block_perim(k), oct(k), oct(k + 1)];
        let pts = ids.map(|v| vertices[v as usize]);
        elements.push(Element {
            verts: ids,
            map: ElementMap::bilinear_from_corners(pts),
            level: 0,
        });
    }
    // outer ring: curved boundary elements with the arc at yhat = +1,
    // traversed in decreasing angle to keep the orientation positive
    for k in 0..8 {
        let ids = [oct(k + 1), oct(k), circ(k), circ(k + 1)];
        let span = ArcSpan {
            t0: core::f64::consts::PI / 4.0 * (k + 1) as f64,
            t1: angle(k),
        };
        let (tx, ty) = fit_circle_arc(radius, span.t0, span.t1)?;
        let bottom = [vertices[ids[0] as usize], vertices[ids[1] as usize]];
        elements.push(Element {
            verts: ids,
            map: ElementMap::lofted_curved(bottom, &tx, &ty, span),
            level: 0,
        });
    }
    let mut boundary = BTreeSet::new();
    for k in 0..8 {
        boundary.insert(edge_key(circ(k), circ(k + 1)));
    }
    let provenance = vec![Provenance::Root; elements.len()];
    Ok(Mesh {
        radius,
        vertices,
        elements,
        provenance,
        midpoints: BTreeMap::new(),
        boundary,
    })
}

/// n x n Cartesian patch of [0, length]^2 with affine maps; a fixture for
/// quadrature-exactness and assembly-consistency tests.
pub fn build_square_patch(n: usize, length: f64) -> Mesh {
    assert!(n >= 1);
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([length * i as f64 / n as f64, length * j as f64 / n as f64]);
        }
    }
    let gid = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    let mut elements = Vec::with_capacity(n * n);
    let mut boundary = BTreeSet::new();
    for j in 0..n {
        for i in 0..n {
            let ids = [gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)];
            let pts = ids.map(|v| vertices[v as usize]);
            elements.push(Element {
                verts: ids,
                map: ElementMap::affine_from_corners(pts),
                level: 0,
            });
            if j == 0 {
                boundary.insert(edge_key(ids[0], ids[1]));
            }
            if j == n - 1 {
                boundary.insert(edge_key(ids[3], ids[2]));
            }
            if i == 0 {
                boundary.insert(edge_key(ids[0], ids[3]));
            }
            if i == n - 1 {
                boundary.insert(edge_key(ids[1], ids[2]));
            }
        }
    }
    let provenance = vec![Provenance::Root; elements.len()];
    Mesh {
        radius: 0.0,
        vertices,
        elements,
        provenance,
        midpoints: BTreeMap::new(),
        boundary,
    }
}
