//! Polynomial utilities shared by the quadrature, mesh and assembly modules:
//! Legendre recurrences, Gauss-Lobatto nodes, barycentric Lagrange bases and
//! bivariate tensor polynomials in monomial form (element maps).

use crate::fmath;
use alloc::vec;
use alloc::vec::Vec;

/// Value and derivative of the Legendre polynomial P_n at x.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
    }
    // derivative from the standard identity; at the endpoints use the closed form
    let d = if (1.0 - x * x).abs() < 1e-300 {
        let nf = n as f64;
        fmath::powi(x, (n as i32) + 1) * nf * (nf + 1.0) / 2.0
    } else {
        (n as f64) * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, d)
}

/// Gauss-Lobatto nodes for polynomial degree p: p+1 points in [-1,1]
/// including the endpoints, interior points the roots of P_p'.
pub fn gauss_lobatto_nodes(p: usize) -> Vec<f64> {
    let n = p + 1;
    assert!(n >= 2, "Gauss-Lobatto needs degree >= 1");
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    for k in 1..n - 1 {
        // Chebyshev-Lobatto initial guess, then Newton on P_p'
        let mut x = -fmath::cos(core::f64::consts::PI * k as f64 / p as f64);
        for _ in 0..100 {
            let (pp, dp) = legendre(p, x);
            // P_p'' from the Legendre ODE
            let ddp = (2.0 * x * dp - (p as f64) * (p as f64 + 1.0) * pp) / (1.0 - x * x);
            let step = dp / ddp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = x;
    }
    // enforce exact symmetry
    for k in 0..n / 2 {
        let s = 0.5 * (nodes[k] - nodes[n - 1 - k]);
        nodes[k] = s;
        nodes[n - 1 - k] = -s;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes
}

/// Lagrange basis on a fixed node set, evaluated via barycentric weights.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    pub nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: Vec<f64>) -> Self {
        let n = nodes.len();
        let mut weights = vec![1.0; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    weights[i] *= nodes[i] - nodes[j];
                }
            }
            weights[i] = 1.0 / weights[i];
        }
        LagrangeBasis { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values and first derivatives of all basis polynomials at x.
    pub fn eval_all(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) {
        let n = self.nodes.len();
        debug_assert_eq!(values.len(), n);
        debug_assert_eq!(derivs.len(), n);
        // node coincidence: exact values, derivatives from the differentiation matrix
        for k in 0..n {
            if (x - self.nodes[k]).abs() < 1e-13 {
                let mut dkk = 0.0;
                for j in 0..n {
                    if j == k {
                        values[j] = 1.0;
                        continue;
                    }
                    values[j] = 0.0;
                    let dkj = (self.weights[j] / self.weights[k]) / (self.nodes[k] - self.nodes[j]);
                    derivs[j] = dkj;
                    dkk -= dkj;
                }
                derivs[k] = dkk;
                return;
            }
        }
        let mut l = 1.0;
        let mut s = 0.0;
        for j in 0..n {
            let d = x - self.nodes[j];
            l *= d;
            s += 1.0 / d;
        }
        for i in 0..n {
            let inv = 1.0 / (x - self.nodes[i]);
            let li = l * self.weights[i] * inv;
            values[i] = li;
            derivs[i] = li * (s - inv);
        }
    }

    pub fn values_at(&self, x: f64) -> Vec<f64> {
        let n = self.len();
        let mut v = vec![0.0; n];
        let mut d = vec![0.0; n];
        self.eval_all(x, &mut v, &mut d);
        v
    }
}

/// Convert Chebyshev coefficients (basis T_0..T_d) to monomial coefficients.
pub fn chebyshev_to_monomial(cheb: &[f64]) -> Vec<f64> {
    let d = cheb.len();
    let mut out = vec![0.0; d];
    if d == 0 {
        return out;
    }
    // t_prev, t_cur are monomial coefficient arrays of T_{k-1}, T_k
    let mut t_prev = vec![0.0; d];
    let mut t_cur = vec![0.0; d];
    t_prev[0] = 1.0;
    out[0] += cheb[0];
    if d > 1 {
        t_cur[1] = 1.0;
        for (i, c) in t_cur.iter().enumerate() {
            out[i] += cheb[1] * c;
        }
        for k in 2..d {
            // T_k = 2 x T_{k-1} - T_{k-2}
            let mut t_next = vec![0.0; d];
            for i in 0..d - 1 {
                t_next[i + 1] += 2.0 * t_cur[i];
            }
            for i in 0..d {
                t_next[i] -= t_prev[i];
            }
            for (i, c) in t_next.iter().enumerate() {
                out[i] += cheb[k] * c;
            }
            t_prev = t_cur;
            t_cur = t_next;
        }
    }
    out
}

/// Chebyshev polynomial T_k(x).
pub fn chebyshev_t(k: usize, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for _ in 1..k {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Scalar bivariate polynomial in tensor monomial form:
/// p(x,y) = sum_{i<nx, j<ny} c[i + j*nx] x^i y^j on the reference square.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPoly2 {
    pub nx: usize,
    pub ny: usize,
    pub c: Vec<f64>,
}

impl TensorPoly2 {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        TensorPoly2 {
            nx,
            ny,
            c: vec![0.0; nx * ny],
        }
    }

    #[inline]
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.c[i + j * self.nx]
    }

    #[inline]
    pub fn coeff_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.c[i + j * self.nx]
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut acc = 0.0;
        for j in (0..self.ny).rev() {
            let row = &self.c[j * self.nx..(j + 1) * self.nx];
            let mut r = 0.0;
            for &ci in row.iter().rev() {
                r = r * x + ci;
            }
            acc = acc * y + r;
        }
        acc
    }

    /// Value together with both partial derivatives.
    pub fn eval_grad(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let mut v = 0.0;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for j in (0..self.ny).rev() {
            let row = &self.c[j * self.nx..(j + 1) * self.nx];
            let mut r = 0.0;
            let mut dr = 0.0;
            for &ci in row.iter().rev() {
                dr = dr * x + r;
                r = r * x + ci;
            }
            dy = dy * y + v;
            v = v * y + r;
            dx = dx * y + dr;
        }
        (v, dx, dy)
    }
}
