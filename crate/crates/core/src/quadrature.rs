//! Gauss-Legendre rules on [-1,1] and their tensorization on the reference
//! square, plus the admissibility and norm-equivalence diagnostics for
//! quadrature-perturbed bilinear forms.

use crate::fmath;
use crate::linalg::{self, Mat};
use crate::poly::legendre;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// One-dimensional Gauss-Legendre rule with q points, exact for degree 2q-1.
#[derive(Debug, Clone)]
pub struct QuadRule1D {
    pub q: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// q x q tensor rule on the reference square [-1,1]^2, order r = 2q.
#[derive(Debug, Clone)]
pub struct TensorQuadRule {
    pub base: QuadRule1D,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// Gauss-Legendre nodes by Newton iteration on P_q, Chebyshev initial guesses.
pub fn gauss_legendre(q: usize) -> Result<QuadRule1D> {
    if q < 1 {
        return Err(Error::Precondition("gauss_legendre requires q >= 1"));
    }
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut x = -fmath::cos(core::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5));
        for _ in 0..100 {
            let (p, dp) = legendre(q, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        weights[i] = w;
        nodes[q - 1 - i] = -x;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
        let (_, dp) = legendre(q, 0.0);
        weights[q / 2] = 2.0 / (dp * dp);
    }
    Ok(QuadRule1D { q, nodes, weights })
}

impl QuadRule1D {
    pub fn tensor(&self) -> TensorQuadRule {
        let q = self.q;
        let mut points = Vec::with_capacity(q * q);
        let mut weights = Vec::with_capacity(q * q);
        for j in 0..q {
            for i in 0..q {
                points.push([self.nodes[i], self.nodes[j]]);
                weights.push(self.weights[i] * self.weights[j]);
            }
        }
        TensorQuadRule {
            base: self.clone(),
            points,
            weights,
            order: 2 * q,
        }
    }
}

pub fn tensor_gauss(q: usize) -> Result<TensorQuadRule> {
    Ok(gauss_legendre(q)?.tensor())
}

impl TensorQuadRule {
    /// Q_Dhat applied to a function on the reference square.
    pub fn integrate<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }
}

/// Diagnostics of the discrete norm equivalence on P_p of the reference square.
#[derive(Debug, Clone)]
pub struct QuadEquivalenceReport {
    pub p: usize,
    pub q: usize,
    /// Equivalence constant between Q(||grad v||^2) and the H1 seminorm Gram
    /// on P_p / constants; infinite when the quadrature seminorm degenerates.
    pub c_p: f64,
    /// Mass analogue on all of P_p; infinite when q^2 points cannot separate P_p.
    pub d_p: f64,
    pub admissible: bool,
}

/// Tensor Legendre basis values and gradients at a point; index a + b*(p+1).
fn legendre_basis_grad(p: usize, x: f64, y: f64, vals: &mut [f64], gx: &mut [f64], gy: &mut [f64]) {
    let n = p + 1;
    let mut px = vec![0.0; n];
    let mut dpx = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut dpy = vec![0.0; n];
    for k in 0..n {
        let (v, d) = legendre(k, x);
        px[k] = v;
        dpx[k] = d;
        let (v, d) = legendre(k, y);
        py[k] = v;
        dpy[k] = d;
    }
    for b in 0..n {
        for a in 0..n {
            let i = a + b * n;
            vals[i] = px[a] * py[b];
            gx[i] = dpx[a] * py[b];
            gy[i] = px[a] * dpy[b];
        }
    }
}

/// Gram matrix of the quadrature gradient form on the tensor Legendre basis.
fn quad_seminorm_gram(p: usize, rule: &TensorQuadRule) -> Mat {
    let dim = (p + 1) * (p + 1);
    let mut s = Mat::zeros(dim, dim);
    let mut vals = vec![0.0; dim];
    let mut gx = vec![0.0; dim];
    let mut gy = vec![0.0; dim];
    for (pt, w) in rule.points.iter().zip(&rule.weights) {
        legendre_basis_grad(p, pt[0], pt[1], &mut vals, &mut gx, &mut gy);
        for i in 0..dim {
            for j in 0..=i {
                let v = w * (gx[i] * gx[j] + gy[i] * gy[j]);
                s[(i, j)] += v;
            }
        }
    }
    for i in 0..dim {
        for j in i + 1..dim {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}

fn quad_mass_gram(p: usize, rule: &TensorQuadRule) -> Mat {
    let dim = (p + 1) * (p + 1);
    let mut s = Mat::zeros(dim, dim);
    let mut vals = vec![0.0; dim];
    let mut gx = vec![0.0; dim];
    let mut gy = vec![0.0; dim];
    for (pt, w) in rule.points.iter().zip(&rule.weights) {
        legendre_basis_grad(p, pt[0], pt[1], &mut vals, &mut gx, &mut gy);
        for i in 0..dim {
            for j in 0..=i {
                s[(i, j)] += w * vals[i] * vals[j];
            }
        }
    }
    for i in 0..dim {
        for j in i + 1..dim {
            s[(i, j)] = s[(j, i)];
        }
    }
    s
}

/// Drop the row/column of the constant basis function (index 0).
fn drop_constant(m: &Mat) -> Mat {
    let n = m.rows - 1;
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = m[(i + 1, j + 1)];
        }
    }
    out
}

/// Checks the admissibility condition: the only polynomials in P_p whose
/// gradient vanishes at every quadrature point are the constants. Computed as
/// a rank test of the quadrature gradient Gram on P_p / constants.
pub fn check_admissibility(p: usize, rule: &TensorQuadRule) -> bool {
    let s = drop_constant(&quad_seminorm_gram(p, rule));
    match linalg::sym_eigen(&s) {
        Ok(eig) => {
            let max = eig.values.last().copied().unwrap_or(0.0).max(1e-300);
            eig.values[0] > 1e-10 * max
        }
        Err(_) => false,
    }
}

/// Independent oracle for admissibility: assemble the gradient-evaluation
/// matrix over the monomial basis and search its kernel directly.
pub fn admissibility_kernel_search(p: usize, rule: &TensorQuadRule) -> bool {
    let n = p + 1;
    let dim = n * n;
    let m = rule.points.len();
    let mut g = Mat::zeros(2 * m, dim);
    for (r, pt) in rule.points.iter().enumerate() {
        let (x, y) = (pt[0], pt[1]);
        for b in 0..n {
            for a in 0..n {
                let col = a + b * n;
                let dx = if a == 0 {
                    0.0
                } else {
                    a as f64 * fmath::powi(x, a as i32 - 1) * fmath::powi(y, b as i32)
                };
                let dy = if b == 0 {
                    0.0
                } else {
                    b as f64 * fmath::powi(x, a as i32) * fmath::powi(y, b as i32 - 1)
                };
                g[(2 * r, col)] = dx;
                g[(2 * r + 1, col)] = dy;
            }
        }
    }
    let gtg = g.transpose().matmul(&g);
    let eig = match linalg::sym_eigen(&gtg) {
        Ok(e) => e,
        Err(_) => return false,
    };
    let max = eig.values.last().copied().unwrap_or(0.0).max(1e-300);
    let nullity = eig.values.iter().filter(|&&v| v <= 1e-10 * max).count();
    nullity == 1
}

/// Estimates the norm-equivalence constants of the Lemma on finite-dimensional
/// quadrature norms: tight generalized-eigenvalue ratios between the
/// quadrature Grams and the exact Grams on P_p of the reference square.
pub fn estimate_equivalence_constants(p: usize, rule: &TensorQuadRule) -> QuadEquivalenceReport {
    let admissible = check_admissibility(p, rule);
    if !admissible {
        return QuadEquivalenceReport {
            p,
            q: rule.base.q,
            c_p: f64::NAN,
            d_p: f64::NAN,
            admissible,
        };
    }
    let exact = tensor_gauss(p + 1).expect("q >= 1");
    let s_quad = drop_constant(&quad_seminorm_gram(p, rule));
    let s_exact = drop_constant(&quad_seminorm_gram(p, &exact));
    let c_p = pencil_equivalence_constant(&s_quad, &s_exact);
    let m_quad = quad_mass_gram(p, rule);
    let m_exact = quad_mass_gram(p, &exact);
    let d_p = pencil_equivalence_constant(&m_quad, &m_exact);
    QuadEquivalenceReport {
        p,
        q: rule.base.q,
        c_p,
        d_p,
        admissible,
    }
}

/// max(lambda_max, 1/lambda_min) of the pencil (Q, E) with E SPD; infinite
/// when the quadrature form degenerates on the tested space.
fn pencil_equivalence_constant(q_gram: &Mat, exact_gram: &Mat) -> f64 {
    let vals = match linalg::generalized_sym_eigenvalues(q_gram, exact_gram) {
        Ok(v) => v,
        Err(_) => return f64::INFINITY,
    };
    let lo = vals[0];
    let hi = *vals.last().unwrap();
    if lo <= 1e-12 * hi.max(1.0) {
        return f64::INFINITY;
    }
    hi.max(1.0 / lo)
}
