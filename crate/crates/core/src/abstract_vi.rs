//! Finite-dimensional variational inequalities over box constraints, used to
//! exercise the perturbation bounds at machine precision: the Strang/Falk
//! combined estimate, its approximation-independent corollary, and the
//! condensed saddle-point bound with explicit constants. All spaces are
//! Euclidean, so the continuity and ellipticity constants are computable as
//! extreme singular values and eigenvalues of the instance matrices.

use crate::linalg::{self, Cholesky, Lu, Mat};
use crate::rng::Rng;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;

/// Relative slack applied to every bound check.
pub const BOUND_TOL_REL: f64 = 1e-10;

/// A dense variational inequality: find u in K = { v : v_i >= psi_i on the
/// constrained indices } with <A u - ell, v - u> >= 0 for all v in K.
#[derive(Debug, Clone)]
pub struct DenseVIInstance {
    pub a: Mat,
    pub ell: Vec<f64>,
    pub psi: Vec<f64>,
    pub constrained: Vec<bool>,
}

impl DenseVIInstance {
    pub fn dim(&self) -> usize {
        self.a.rows
    }

    /// Ellipticity constant: smallest eigenvalue of the symmetric part.
    pub fn alpha(&self) -> Result<f64> {
        Ok(linalg::sym_extreme_eigenvalues(&self.a)?.0)
    }

    /// Continuity constant: largest singular value.
    pub fn continuity(&self) -> Result<f64> {
        linalg::spectral_norm(&self.a)
    }

    /// Membership in K up to a small absolute slack.
    pub fn feasible(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(&self.psi)
            .zip(&self.constrained)
            .all(|((vi, pi), &c)| !c || *vi >= pi - 1e-12)
    }

    /// Euclidean projection onto K.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.psi)
            .zip(&self.constrained)
            .map(|((vi, pi), &c)| if c { vi.max(*pi) } else { *vi })
            .collect()
    }
}

/// A perturbation of a dense VI: operator, load and bounds all may move.
#[derive(Debug, Clone)]
pub struct PerturbedPair {
    pub base: DenseVIInstance,
    pub a_tilde: Mat,
    pub ell_tilde: Vec<f64>,
    pub psi_tilde: Vec<f64>,
    pub alpha_tilde: f64,
}

impl PerturbedPair {
    /// Builds the pair, computing alpha-tilde and rejecting perturbations
    /// that destroy ellipticity.
    pub fn new(
        base: DenseVIInstance,
        a_tilde: Mat,
        ell_tilde: Vec<f64>,
        psi_tilde: Vec<f64>,
    ) -> Result<PerturbedPair> {
        let alpha_tilde = linalg::sym_extreme_eigenvalues(&a_tilde)?.0;
        if alpha_tilde <= 0.0 {
            return Err(Error::NotPositiveDefinite("perturbed operator"));
        }
        Ok(PerturbedPair {
            base,
            a_tilde,
            ell_tilde,
            psi_tilde,
            alpha_tilde,
        })
    }

    pub fn perturbed_instance(&self) -> DenseVIInstance {
        DenseVIInstance {
            a: self.a_tilde.clone(),
            ell: self.ell_tilde.clone(),
            psi: self.psi_tilde.clone(),
            constrained: self.base.constrained.clone(),
        }
    }

    fn feasible_tilde(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(&self.psi_tilde)
            .zip(&self.base.constrained)
            .all(|((vi, pi), &c)| !c || *vi >= pi - 1e-12)
    }
}

/// One bound evaluation; holds iff margin >= -tol_rel * rhs.
#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl BoundReport {
    pub fn new(lhs: f64, rhs: f64) -> BoundReport {
        let margin = rhs - lhs;
        BoundReport {
            lhs,
            rhs,
            margin,
            holds: margin >= -BOUND_TOL_REL * rhs,
        }
    }
}

/// Primal-dual active set iteration on a dense VI. Returns the solution, the
/// multiplier lambda = A u - ell supported on the active set, and the active
/// index set.
pub fn solve_dense_vi(
    instance: &DenseVIInstance,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    if tol <= 0.0 {
        return Err(Error::Precondition("tolerance must be positive"));
    }
    let n = instance.dim();
    if instance.alpha()? <= 0.0 {
        return Err(Error::Precondition("operator not elliptic"));
    }
    let a = &instance.a;
    let ell = &instance.ell;
    let psi = &instance.psi;
    let mut active = vec![false; n];
    let mut u = vec![0.0; n];
    let mut lambda = vec![0.0; n];
    let solve_with = |active: &[bool]| -> Result<Vec<f64>> {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let m = free.len();
        let mut x = vec![0.0; n];
        for i in 0..n {
            if active[i] {
                x[i] = psi[i];
            }
        }
        if m == 0 {
            return Ok(x);
        }
        let mut sub = Mat::zeros(m, m);
        let mut rhs = vec![0.0; m];
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = ell[i];
            for (c, &j) in free.iter().enumerate() {
                sub[(r, c)] = a[(i, j)];
            }
            for j in 0..n {
                if active[j] {
                    rhs[r] -= a[(i, j)] * psi[j];
                }
            }
        }
        let y = Lu::new(&sub)?.solve(&rhs);
        for (r, &i) in free.iter().enumerate() {
            x[i] = y[r];
        }
        Ok(x)
    };
    let mut converged = false;
    for _ in 0..200 {
        u = solve_with(&active)?;
        let au = a.matvec(&u);
        for i in 0..n {
            lambda[i] = if active[i] { au[i] - ell[i] } else { 0.0 };
        }
        let next: Vec<bool> = (0..n)
            .map(|i| instance.constrained[i] && lambda[i] + (psi[i] - u[i]) > 0.0)
            .collect();
        if next == active {
            converged = true;
            break;
        }
        active = next;
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "dense primal-dual active set",
            iterations: 200,
            last_iterate: u,
        });
    }
    // KKT verification
    let au = a.matvec(&u);
    let scale = linalg::norm2(ell).max(1.0);
    for i in 0..n {
        let res = au[i] - ell[i];
        let bad = if instance.constrained[i] {
            u[i] < psi[i] - tol * scale
                || (active[i] && res < -tol * scale)
                || (!active[i] && res.abs() > tol * scale)
                || ((u[i] - psi[i]) * res).abs() > tol * scale * scale
        } else {
            res.abs() > tol * scale
        };
        if bad {
            return Err(Error::NonConvergence {
                what: "dense KKT verification",
                iterations: 0,
                last_iterate: u,
            });
        }
    }
    let active_set: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    Ok((u, lambda, active_set))
}

/// Right-hand side of the combined Strang/Falk estimate:
/// (2 + 4c^2/at^2) |u - vt|^2 + (4/at) <Au - ell, vt - u + v - ut>
/// + (4/at^2) |(A - At) vt - (ell - ellt)|^2, compared against |u - ut|^2.
pub fn strang_falk_rhs(
    pair: &PerturbedPair,
    u: &[f64],
    u_tilde: &[f64],
    v: &[f64],
    v_tilde: &[f64],
) -> Result<f64> {
    if !pair.base.feasible(v) {
        return Err(Error::Precondition("v outside K"));
    }
    if !pair.feasible_tilde(v_tilde) {
        return Err(Error::Precondition("v-tilde outside perturbed K"));
    }
    let c = pair.base.continuity()?;
    let at = pair.alpha_tilde;
    let diff = linalg::sub(u, v_tilde);
    let term1 = (2.0 + 4.0 * c * c / (at * at)) * linalg::dot(&diff, &diff);
    let au = pair.base.a.matvec(u);
    let residual: Vec<f64> = au.iter().zip(&pair.base.ell).map(|(x, l)| x - l).collect();
    let mut pairing_arg = vec![0.0; u.len()];
    for i in 0..u.len() {
        pairing_arg[i] = v_tilde[i] - u[i] + v[i] - u_tilde[i];
    }
    let term2 = 4.0 / at * linalg::dot(&residual, &pairing_arg);
    let mut op_term = pair.base.a.matvec(v_tilde);
    let atv = pair.a_tilde.matvec(v_tilde);
    for i in 0..u.len() {
        op_term[i] = op_term[i] - atv[i] - (pair.base.ell[i] - pair.ell_tilde[i]);
    }
    let term3 = 4.0 / (at * at) * linalg::dot(&op_term, &op_term);
    Ok(term1 + term2 + term3)
}

/// Right-hand side of the corollary with approximation-independent leading
/// constants, compared against |u - ut|^2:
/// (4 + 8c^2/a^2) |u - vt|^2 + (8/a) <Au - ell, vt - u + v - us> +
/// (8/at^2) |(A - At) us - (ell - ellt)|^2, with us the solution of the
/// unperturbed problem on the perturbed set.
pub fn corollary_pert_rhs(
    pair: &PerturbedPair,
    u: &[f64],
    u_star: &[f64],
    v: &[f64],
    v_tilde: &[f64],
) -> Result<f64> {
    if !pair.base.feasible(v) {
        return Err(Error::Precondition("v outside K"));
    }
    if !pair.feasible_tilde(v_tilde) {
        return Err(Error::Precondition("v-tilde outside perturbed K"));
    }
    let c = pair.base.continuity()?;
    let alpha = pair.base.alpha()?;
    let at = pair.alpha_tilde;
    let diff = linalg::sub(u, v_tilde);
    let term1 = (4.0 + 8.0 * c * c / (alpha * alpha)) * linalg::dot(&diff, &diff);
    let au = pair.base.a.matvec(u);
    let residual: Vec<f64> = au.iter().zip(&pair.base.ell).map(|(x, l)| x - l).collect();
    let mut pairing_arg = vec![0.0; u.len()];
    for i in 0..u.len() {
        pairing_arg[i] = v_tilde[i] - u[i] + v[i] - u_star[i];
    }
    let term2 = 8.0 / alpha * linalg::dot(&residual, &pairing_arg);
    let mut op_term = pair.base.a.matvec(u_star);
    let atv = pair.a_tilde.matvec(u_star);
    for i in 0..u.len() {
        op_term[i] = op_term[i] - atv[i] - (pair.base.ell[i] - pair.ell_tilde[i]);
    }
    let term3 = 8.0 / (at * at) * linalg::dot(&op_term, &op_term);
    Ok(term1 + term2 + term3)
}

/// A variational inequality constrained by a variational equality:
/// <Du, v-u> + <B^T lambda, v-u> >= <f, v-u> on K,
/// <Bu, mu> - <C lambda, mu> = <g, mu> on the multiplier space.
#[derive(Debug, Clone)]
pub struct ConstrainedVIInstance {
    pub d: Mat,
    pub b: Mat,
    pub c: Mat,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub psi: Vec<f64>,
    /// columns span the discrete multiplier subspace
    pub subspace_basis: Mat,
}

/// Continuity/ellipticity constants of a constrained instance.
#[derive(Debug, Clone, Copy)]
pub struct ConstrainedConstants {
    pub c_d: f64,
    pub c_b: f64,
    pub c_bt: f64,
    pub c_c: f64,
    pub alpha_d: f64,
    pub alpha_c: f64,
}

impl ConstrainedVIInstance {
    pub fn primal_dim(&self) -> usize {
        self.d.rows
    }

    pub fn multiplier_dim(&self) -> usize {
        self.c.rows
    }

    pub fn constants(&self) -> Result<ConstrainedConstants> {
        Ok(ConstrainedConstants {
            c_d: linalg::spectral_norm(&self.d)?,
            c_b: linalg::spectral_norm(&self.b)?,
            c_bt: linalg::spectral_norm(&self.b)?,
            c_c: linalg::spectral_norm(&self.c)?,
            alpha_d: linalg::sym_extreme_eigenvalues(&self.d)?.0,
            alpha_c: linalg::sym_extreme_eigenvalues(&self.c)?.0,
        })
    }

    /// The constants of the combined bound, in the proof's closed forms.
    pub fn bound_constants(&self) -> Result<(f64, f64, f64)> {
        let k = self.constants()?;
        let c0 = 2.0
            + 4.0 * crate::fmath::powi(k.c_d * k.alpha_c + k.c_b * k.c_b, 2)
                / crate::fmath::powi(k.alpha_c * k.alpha_d, 2)
            + 2.0 * (k.c_bt * k.alpha_c + k.c_b) / k.alpha_c;
        let common = 1.0 + 2.0 * k.c_b / k.alpha_c;
        let c1 = common * c0;
        let c2 = common * (2.0 + (2.0 * k.c_c + k.c_bt * k.c_c) / k.alpha_c);
        let c3 = common * 4.0 / (k.alpha_d * k.alpha_d);
        Ok((c1, c2, c3))
    }
}

/// Eliminates the multiplier: A = D + B^T C^-1 B, ell = f + B^T C^-1 g.
pub fn condense(instance: &ConstrainedVIInstance) -> Result<DenseVIInstance> {
    let chol = Cholesky::new(&instance.c)
        .map_err(|_| Error::Precondition("C must be symmetric positive definite"))?;
    let n = instance.primal_dim();
    let m = instance.multiplier_dim();
    // C^-1 B column by column
    let mut cinv_b = Mat::zeros(m, n);
    for j in 0..n {
        let col: Vec<f64> = (0..m).map(|i| instance.b[(i, j)]).collect();
        let y = chol.solve(&col);
        for i in 0..m {
            cinv_b[(i, j)] = y[i];
        }
    }
    let mut a = instance.b.transpose().matmul(&cinv_b);
    a.add_scaled(&instance.d, 1.0);
    let cinv_g = chol.solve(&instance.g);
    let mut ell = instance.b.transpose().matvec(&cinv_g);
    for (e, f) in ell.iter_mut().zip(&instance.f) {
        *e += f;
    }
    Ok(DenseVIInstance {
        a,
        ell,
        psi: instance.psi.clone(),
        constrained: vec![true; n],
    })
}

/// The Galerkin-subspace inverse Ct^-1 = P (P^T C P)^-1 P^T as a matrix.
pub fn galerkin_inverse(instance: &ConstrainedVIInstance) -> Result<Mat> {
    let m = instance.multiplier_dim();
    let p = &instance.subspace_basis;
    let k = p.cols;
    if k == 0 {
        return Ok(Mat::zeros(m, m));
    }
    let ptcp = p.transpose().matmul(&instance.c).matmul(p);
    let chol = Cholesky::new(&ptcp)
        .map_err(|_| Error::Precondition("subspace basis is rank deficient"))?;
    let mut out = Mat::zeros(m, m);
    for j in 0..m {
        let ptej: Vec<f64> = (0..k).map(|r| p[(j, r)]).collect();
        let y = chol.solve(&ptej);
        let col = p.matvec(&y);
        for i in 0..m {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// Condenses onto the multiplier subspace: At = D + B^T Ct^-1 B,
/// ellt = f + B^T Ct^-1 g, paired with the exactly condensed instance.
pub fn galerkin_condense(instance: &ConstrainedVIInstance) -> Result<PerturbedPair> {
    let base = condense(instance)?;
    let cinv_t = galerkin_inverse(instance)?;
    let bt = instance.b.transpose();
    let mut a_tilde = bt.matmul(&cinv_t).matmul(&instance.b);
    a_tilde.add_scaled(&instance.d, 1.0);
    let mut ell_tilde = bt.matvec(&cinv_t.matvec(&instance.g));
    for (e, f) in ell_tilde.iter_mut().zip(&instance.f) {
        *e += f;
    }
    let psi_tilde = base.psi.clone();
    PerturbedPair::new(base, a_tilde, ell_tilde, psi_tilde)
}

/// Solves the saddle system directly by an active-set iteration on the
/// full indefinite block matrix; the independent route against condensation.
pub fn solve_saddle_direct(
    instance: &ConstrainedVIInstance,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = instance.primal_dim();
    let m = instance.multiplier_dim();
    let psi = &instance.psi;
    let mut active = vec![false; n];
    for _ in 0..200 {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let nf = free.len();
        let dim = nf + m;
        let mut block = Mat::zeros(dim, dim);
        let mut rhs = vec![0.0; dim];
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = instance.f[i];
            for (c, &j) in free.iter().enumerate() {
                block[(r, c)] = instance.d[(i, j)];
            }
            for j in 0..n {
                if active[j] {
                    rhs[r] -= instance.d[(i, j)] * psi[j];
                }
            }
            for c in 0..m {
                block[(r, nf + c)] = instance.b[(c, i)];
            }
        }
        for r in 0..m {
            rhs[nf + r] = instance.g[r];
            for (c, &j) in free.iter().enumerate() {
                block[(nf + r, c)] = instance.b[(r, j)];
            }
            for j in 0..n {
                if active[j] {
                    rhs[nf + r] -= instance.b[(r, j)] * psi[j];
                }
            }
            for c in 0..m {
                block[(nf + r, nf + c)] = -instance.c[(r, c)];
            }
        }
        let sol = Lu::new(&block)?.solve(&rhs);
        let mut u = vec![0.0; n];
        for i in 0..n {
            if active[i] {
                u[i] = psi[i];
            }
        }
        for (r, &i) in free.iter().enumerate() {
            u[i] = sol[r];
        }
        let lambda: Vec<f64> = (0..m).map(|r| sol[nf + r]).collect();
        // bound multiplier mu = Du + B^T lambda - f on the active set
        let du = instance.d.matvec(&u);
        let btl = instance.b.transpose().matvec(&lambda);
        let next: Vec<bool> = (0..n)
            .map(|i| {
                let mu = du[i] + btl[i] - instance.f[i];
                mu + (psi[i] - u[i]) > 0.0
            })
            .collect();
        if next == active {
            let bu = instance.b.matvec(&u);
            let cl = instance.c.matvec(&lambda);
            for r in 0..m {
                let res = bu[r] - cl[r] - instance.g[r];
                if res.abs() > tol.max(1e-9) * (1.0 + linalg::norm2(&instance.g)) {
                    return Err(Error::NonConvergence {
                        what: "saddle equality residual",
                        iterations: 0,
                        last_iterate: u,
                    });
                }
            }
            return Ok((u, lambda));
        }
        active = next;
    }
    Err(Error::NonConvergence {
        what: "saddle active-set iteration",
        iterations: 200,
        last_iterate: vec![0.0; n],
    })
}

/// Checks the combined condensed bound with the proof's constants on one
/// instance: the first report uses the projection choices (vt = u, v = ut,
/// mut = the Euclidean projection of lambda onto the subspace), the remaining
/// `trials` use random feasible comparison elements.
pub fn verify_constrained_bound(
    instance: &ConstrainedVIInstance,
    trials: usize,
    seed: u64,
) -> Result<Vec<BoundReport>> {
    let tol = 1e-10;
    let condensed = condense(instance)?;
    let (u, _, _) = solve_dense_vi(&condensed, tol)?;
    let chol_c = Cholesky::new(&instance.c)?;
    let bu = instance.b.matvec(&u);
    let lam: Vec<f64> = {
        let rhs: Vec<f64> = bu.iter().zip(&instance.g).map(|(x, g)| x - g).collect();
        chol_c.solve(&rhs)
    };
    let pair = galerkin_condense(instance)?;
    let tilde_inst = pair.perturbed_instance();
    let (u_t, _, _) = solve_dense_vi(&tilde_inst, tol)?;
    let cinv_t = galerkin_inverse(instance)?;
    let but = instance.b.matvec(&u_t);
    let lam_t: Vec<f64> = {
        let rhs: Vec<f64> = but.iter().zip(&instance.g).map(|(x, g)| x - g).collect();
        cinv_t.matvec(&rhs)
    };
    let du = linalg::sub(&u, &u_t);
    let dl = linalg::sub(&lam, &lam_t);
    let lhs = linalg::dot(&du, &du) + linalg::dot(&dl, &dl);
    let (c1, c2, c3) = instance.bound_constants()?;
    // stationarity residual Du + B^T lambda - f of the exact solution
    let mut stat = instance.d.matvec(&u);
    let btl = instance.b.transpose().matvec(&lam);
    for i in 0..stat.len() {
        stat[i] += btl[i] - instance.f[i];
    }
    let p = &instance.subspace_basis;
    let project_subspace = |x: &[f64]| -> Vec<f64> {
        if p.cols == 0 {
            return vec![0.0; x.len()];
        }
        let ptp = p.transpose().matmul(p);
        let chol = Cholesky::new(&ptp).expect("independent columns");
        p.matvec(&chol.solve(&p.transpose().matvec(x)))
    };
    let evaluate = |v: &[f64], v_t: &[f64], mu_t: &[f64]| -> BoundReport {
        let dvt = linalg::sub(&u, v_t);
        let dmu = linalg::sub(&lam, mu_t);
        let mut arg = vec![0.0; u.len()];
        for i in 0..u.len() {
            arg[i] = v_t[i] - u[i] + v[i] - u_t[i];
        }
        let rhs = c1 * linalg::dot(&dvt, &dvt)
            + c2 * linalg::dot(&dmu, &dmu)
            + c3 * linalg::dot(&stat, &arg);
        BoundReport::new(lhs, rhs)
    };
    let mut reports = Vec::with_capacity(trials + 1);
    // projections: the primal sets coincide, so vt = u and v = ut are feasible
    reports.push(evaluate(&u_t, &u, &project_subspace(&lam)));
    let mut rng = Rng::new(seed);
    for _ in 0..trials {
        let n = instance.primal_dim();
        let v: Vec<f64> = (0..n)
            .map(|i| instance.psi[i] + rng.uniform() * 2.0)
            .collect();
        let v_t: Vec<f64> = (0..n)
            .map(|i| instance.psi[i] + rng.uniform() * 2.0)
            .collect();
        let mu_t = if p.cols == 0 {
            vec![0.0; instance.multiplier_dim()]
        } else {
            let coef: Vec<f64> = (0..p.cols).map(|_| rng.normal()).collect();
            p.matvec(&coef)
        };
        reports.push(evaluate(&v, &v_t, &mu_t));
    }
    Ok(reports)
}

//
// Randomized instance generation (fixed seeds, documented scales).
//

/// A = M^T M + 0.1 I with standard normal M; partially constrained box.
pub fn random_dense_instance(rng: &mut Rng, n_max: usize) -> DenseVIInstance {
    let n = 2 + rng.index(n_max.max(3) - 1);
    let mut m = Mat::zeros(n, n);
    for v in m.data.iter_mut() {
        *v = rng.normal();
    }
    let mut a = m.transpose().matmul(&m);
    for i in 0..n {
        a[(i, i)] += 0.1;
    }
    let ell: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
    let psi: Vec<f64> = (0..n).map(|_| rng.normal() - 0.3).collect();
    let constrained: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.85).collect();
    DenseVIInstance {
        a,
        ell,
        psi,
        constrained,
    }
}

/// Symmetric spectral-norm-one perturbation direction.
fn random_direction(rng: &mut Rng, n: usize) -> Result<Mat> {
    let mut g = Mat::zeros(n, n);
    for v in g.data.iter_mut() {
        *v = rng.normal();
    }
    let mut e = g.symmetric_part();
    let norm = linalg::spectral_norm(&e)?;
    e.scale(1.0 / norm);
    Ok(e)
}

/// Base instance plus epsilon-size operator, load and obstacle perturbations;
/// retries until the perturbed operator stays elliptic.
pub fn random_perturbed_pair(rng: &mut Rng, n_max: usize, eps: f64) -> Result<PerturbedPair> {
    loop {
        let base = random_dense_instance(rng, n_max);
        let n = base.dim();
        let e = random_direction(rng, n)?;
        let mut a_tilde = base.a.clone();
        a_tilde.add_scaled(&e, eps);
        let ell_tilde: Vec<f64> = base.ell.iter().map(|l| l + eps * rng.normal()).collect();
        let psi_tilde: Vec<f64> = base.psi.iter().map(|p| p + eps * rng.normal()).collect();
        match PerturbedPair::new(base, a_tilde, ell_tilde, psi_tilde) {
            Ok(pair) => return Ok(pair),
            Err(Error::NotPositiveDefinite(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Mildly conditioned constrained instance with a subspace of the given
/// fraction of the multiplier dimension.
pub fn random_constrained_instance(
    rng: &mut Rng,
    n_max: usize,
    m_max: usize,
    subspace_fraction: f64,
) -> Result<ConstrainedVIInstance> {
    let n = 2 + rng.index(n_max.max(3) - 1);
    let m = 2 + rng.index(m_max.max(3) - 1);
    let mut d0 = Mat::zeros(n, n);
    for v in d0.data.iter_mut() {
        *v = rng.normal();
    }
    let mut d = d0.transpose().matmul(&d0);
    d.scale(1.0 / n as f64);
    for i in 0..n {
        d[(i, i)] += 1.0;
    }
    let mut c0 = Mat::zeros(m, m);
    for v in c0.data.iter_mut() {
        *v = rng.normal();
    }
    let mut c = c0.transpose().matmul(&c0);
    c.scale(1.0 / m as f64);
    for i in 0..m {
        c[(i, i)] += 1.0;
    }
    let mut b = Mat::zeros(m, n);
    let scale = 1.0 / (m as f64).max(n as f64);
    for v in b.data.iter_mut() {
        *v = rng.normal() * scale;
    }
    let f: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let g: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
    let psi: Vec<f64> = (0..n).map(|_| rng.normal() - 0.3).collect();
    let k = ((m as f64 * subspace_fraction) as usize).min(m);
    let mut basis = Mat::zeros(m, k);
    for v in basis.data.iter_mut() {
        *v = rng.normal();
    }
    Ok(ConstrainedVIInstance {
        d,
        b,
        c,
        f,
        g,
        psi,
        subspace_basis: basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_instance(a: &[&[f64]], ell: &[f64], psi: &[f64]) -> DenseVIInstance {
        DenseVIInstance {
            a: Mat::from_rows(a),
            ell: ell.to_vec(),
            psi: psi.to_vec(),
            constrained: vec![true; ell.len()],
        }
    }

    #[test]
    fn one_dimensional_contact() {
        // brute-force oracle over v in [3, 10]: energy v^2 - 4v minimized at 3
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=700000 {
            let v = 3.0 + 7.0 * k as f64 / 700000.0;
            let e = v * v - 4.0 * v;
            if e < best.0 {
                best = (e, v);
            }
        }
        assert!((best.1 - 3.0).abs() < 1e-4);
        let inst = simple_instance(&[&[2.0]], &[4.0], &[3.0]);
        let (u, lam, active) = solve_dense_vi(&inst, 1e-12).unwrap();
        assert!((u[0] - 3.0).abs() < 1e-14);
        assert!((lam[0] - 2.0).abs() < 1e-14);
        assert_eq!(active, vec![0]);
    }

    #[test]
    fn effectively_unconstrained() {
        let inst = simple_instance(&[&[2.0, 0.3], &[0.3, 1.5]], &[1.0, -0.5], &[-1e9, -1e9]);
        let (u, lam, active) = solve_dense_vi(&inst, 1e-12).unwrap();
        assert!(active.is_empty());
        assert!(lam.iter().all(|&l| l == 0.0));
        let au = inst.a.matvec(&u);
        for i in 0..2 {
            assert!((au[i] - inst.ell[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_partial_contact() {
        // brute-force 2D grid oracle: component 1 has unconstrained optimum 1 < 2
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let v1 = 2.0 + 3.0 * i as f64 / 400.0;
                let v2 = 2.0 + 3.0 * j as f64 / 400.0;
                let e = v1 * v1 + v2 * v2 - 2.0 * v1 - 6.0 * v2;
                if e < best.0 {
                    best = (e, v1, v2);
                }
            }
        }
        assert!((best.1 - 2.0).abs() < 2e-2 && (best.2 - 3.0).abs() < 2e-2);
        let inst = simple_instance(&[&[2.0, 0.0], &[0.0, 2.0]], &[2.0, 6.0], &[2.0, 2.0]);
        let (u, _, active) = solve_dense_vi(&inst, 1e-12).unwrap();
        assert!((u[0] - 2.0).abs() < 1e-14);
        assert!((u[1] - 3.0).abs() < 1e-14);
        assert_eq!(active, vec![0]);
    }

    #[test]
    fn identical_problems_force_zero_rhs_and_uniqueness() {
        let mut rng = Rng::new(2024);
        for _ in 0..20 {
            let base = random_dense_instance(&mut rng, 8);
            let pair = PerturbedPair::new(
                base.clone(),
                base.a.clone(),
                base.ell.clone(),
                base.psi.clone(),
            )
            .unwrap();
            let (u, _, _) = solve_dense_vi(&base, 1e-12).unwrap();
            let (ut, _, _) = solve_dense_vi(&pair.perturbed_instance(), 1e-12).unwrap();
            let rhs = strang_falk_rhs(&pair, &u, &ut, &ut, &u).unwrap();
            let du = linalg::sub(&u, &ut);
            let lhs = linalg::dot(&du, &du);
            assert!(rhs.abs() < 1e-18, "rhs {rhs}");
            assert!(lhs <= 1e-18, "uniqueness violated: {lhs}");
        }
    }

    #[test]
    fn load_perturbation_recovers_lipschitz_dependence() {
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let base = random_dense_instance(&mut rng, 10);
            let ell_tilde: Vec<f64> = base.ell.iter().map(|l| l + 0.3 * rng.normal()).collect();
            let pair =
                PerturbedPair::new(base.clone(), base.a.clone(), ell_tilde, base.psi.clone())
                    .unwrap();
            let (u, _, _) = solve_dense_vi(&base, 1e-12).unwrap();
            let (ut, _, _) = solve_dense_vi(&pair.perturbed_instance(), 1e-12).unwrap();
            // with vt = u and v = ut the bound collapses to the load term
            let rhs = strang_falk_rhs(&pair, &u, &ut, &ut, &u).unwrap();
            let alpha = base.alpha().unwrap();
            let dl = linalg::sub(&base.ell, &pair.ell_tilde);
            let expected = 4.0 / (alpha * alpha) * linalg::dot(&dl, &dl);
            assert!((rhs - expected).abs() <= 1e-10 * expected.max(1e-30));
            // Lipschitz dependence on the data
            let du = linalg::sub(&u, &ut);
            let lip = 2.0 / alpha * linalg::norm2(&dl);
            assert!(
                linalg::norm2(&du) <= lip * (1.0 + 1e-10),
                "{} vs {}",
                linalg::norm2(&du),
                lip
            );
        }
    }

    #[test]
    fn strang_falk_bound_holds_on_random_pairs() {
        let mut rng = Rng::new(99);
        for trial in 0..60 {
            let eps = if trial % 2 == 0 { 1e-1 } else { 1e-3 };
            let pair = random_perturbed_pair(&mut rng, 12, eps).unwrap();
            let (u, _, _) = solve_dense_vi(&pair.base, 1e-12).unwrap();
            let (ut, _, _) = solve_dense_vi(&pair.perturbed_instance(), 1e-12).unwrap();
            let du = linalg::sub(&u, &ut);
            let lhs = linalg::dot(&du, &du);
            // projection pair plus random feasible samples
            let v_proj = pair.base.project(&ut);
            let vt_proj = pair.perturbed_instance().project(&u);
            let rhs = strang_falk_rhs(&pair, &u, &ut, &v_proj, &vt_proj).unwrap();
            assert!(BoundReport::new(lhs, rhs).holds, "trial {trial} projection");
            for _ in 0..10 {
                let n = pair.base.dim();
                let v: Vec<f64> = (0..n)
                    .map(|i| pair.base.psi[i] + rng.uniform() * 2.0)
                    .collect();
                let vt: Vec<f64> = (0..n)
                    .map(|i| pair.psi_tilde[i] + rng.uniform() * 2.0)
                    .collect();
                let rhs = strang_falk_rhs(&pair, &u, &ut, &v, &vt).unwrap();
                assert!(BoundReport::new(lhs, rhs).holds, "trial {trial} sampled");
            }
        }
    }

    #[test]
    fn infeasible_comparison_elements_are_rejected() {
        let mut rng = Rng::new(5);
        let mut pair = random_perturbed_pair(&mut rng, 6, 1e-2).unwrap();
        pair.base.constrained = alloc::vec![true; pair.base.dim()];
        let (u, _, _) = solve_dense_vi(&pair.base, 1e-12).unwrap();
        let (ut, _, _) = solve_dense_vi(&pair.perturbed_instance(), 1e-12).unwrap();
        let bad: Vec<f64> = pair.base.psi.iter().map(|p| p - 1.0).collect();
        let ok: Vec<f64> = pair.psi_tilde.iter().map(|p| p + 1.0).collect();
        assert!(matches!(
            strang_falk_rhs(&pair, &u, &ut, &bad, &ok),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn corollary_bound_holds_on_random_pairs() {
        let mut rng = Rng::new(123);
        for trial in 0..60 {
            let pair = random_perturbed_pair(&mut rng, 12, 1e-3).unwrap();
            let (u, _, _) = solve_dense_vi(&pair.base, 1e-12).unwrap();
            let (ut, _, _) = solve_dense_vi(&pair.perturbed_instance(), 1e-12).unwrap();
            // u* solves the unperturbed operator on the perturbed set
            let star_inst = DenseVIInstance {
                a: pair.base.a.clone(),
                ell: pair.base.ell.clone(),
                psi: pair.psi_tilde.clone(),
                constrained: pair.base.constrained.clone(),
            };
            let (us, _, _) = solve_dense_vi(&star_inst, 1e-12).unwrap();
            let du = linalg::sub(&u, &ut);
            let lhs = linalg::dot(&du, &du);
            let v_proj = pair.base.project(&ut);
            let vt_proj = pair.perturbed_instance().project(&u);
            let rhs = corollary_pert_rhs(&pair, &u, &us, &v_proj, &vt_proj).unwrap();
            assert!(BoundReport::new(lhs, rhs).holds, "trial {trial}");
        }
    }

    #[test]
    fn corollary_zero_perturbation_reduces_to_falk_terms() {
        let mut rng = Rng::new(124);
        let base = random_dense_instance(&mut rng, 8);
        let pair = PerturbedPair::new(
            base.clone(),
            base.a.clone(),
            base.ell.clone(),
            base.psi.clone(),
        )
        .unwrap();
        let (u, _, _) = solve_dense_vi(&base, 1e-12).unwrap();
        let us = u.clone();
        let ut = u.clone();
        let v_proj = base.project(&ut);
        let rhs = corollary_pert_rhs(&pair, &u, &us, &v_proj, &u).unwrap();
        // third term is identically zero, the others with vt = u vanish too
        assert!(rhs.abs() < 1e-18);
    }

    #[test]
    fn condense_identity_algebra() {
        let inst = ConstrainedVIInstance {
            d: Mat::identity(2),
            b: Mat::identity(2),
            c: Mat::identity(2),
            f: vec![0.5, -1.0],
            g: vec![2.0, 3.0],
            psi: vec![-1e9, -1e9],
            subspace_basis: Mat::identity(2),
        };
        let condensed = condense(&inst).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((condensed.a[(i, j)] - expect).abs() < 1e-14);
            }
            assert!((condensed.ell[i] - (inst.f[i] + inst.g[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn condense_rejects_singular_c() {
        let inst = ConstrainedVIInstance {
            d: Mat::identity(2),
            b: Mat::identity(2),
            c: Mat::zeros(2, 2),
            f: vec![0.0; 2],
            g: vec![0.0; 2],
            psi: vec![0.0; 2],
            subspace_basis: Mat::identity(2),
        };
        assert!(matches!(condense(&inst), Err(Error::Precondition(_))));
    }

    #[test]
    fn condensed_operator_keeps_primal_ellipticity() {
        let mut rng = Rng::new(31);
        for _ in 0..30 {
            let inst = random_constrained_instance(&mut rng, 10, 10, 0.5).unwrap();
            let condensed = condense(&inst).unwrap();
            let alpha_d = inst.constants().unwrap().alpha_d;
            let (min_eig, _) = linalg::sym_extreme_eigenvalues(&condensed.a).unwrap();
            assert!(min_eig >= alpha_d - 1e-12, "{min_eig} vs {alpha_d}");
            // solving condensed and recovering lambda solves the equality row
            let (u, _, _) = solve_dense_vi(&condensed, 1e-12).unwrap();
            let chol = Cholesky::new(&inst.c).unwrap();
            let bu = inst.b.matvec(&u);
            let rhs: Vec<f64> = bu.iter().zip(&inst.g).map(|(x, g)| x - g).collect();
            let lam = chol.solve(&rhs);
            let cl = inst.c.matvec(&lam);
            for r in 0..inst.multiplier_dim() {
                assert!((bu[r] - cl[r] - inst.g[r]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn galerkin_full_subspace_reproduces_condense() {
        let mut rng = Rng::new(57);
        let mut inst = random_constrained_instance(&mut rng, 8, 8, 1.0).unwrap();
        inst.subspace_basis = Mat::identity(inst.multiplier_dim());
        let condensed = condense(&inst).unwrap();
        let pair = galerkin_condense(&inst).unwrap();
        let mut diff = pair.a_tilde.clone();
        diff.add_scaled(&condensed.a, -1.0);
        assert!(diff.max_abs() <= 1e-12 * condensed.a.max_abs());
        for (x, y) in pair.ell_tilde.iter().zip(&condensed.ell) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn galerkin_empty_subspace_degenerates_to_primal_block() {
        let mut rng = Rng::new(58);
        let mut inst = random_constrained_instance(&mut rng, 6, 6, 0.5).unwrap();
        inst.subspace_basis = Mat::zeros(inst.multiplier_dim(), 0);
        let pair = galerkin_condense(&inst).unwrap();
        let mut diff = pair.a_tilde.clone();
        diff.add_scaled(&inst.d, -1.0);
        assert!(diff.max_abs() <= 1e-14);
        for (x, y) in pair.ell_tilde.iter().zip(&inst.f) {
            assert!((x - y).abs() <= 1e-14);
        }
    }

    #[test]
    fn galerkin_inverse_is_psd_and_norm_bounded() {
        let mut rng = Rng::new(59);
        for _ in 0..20 {
            let inst = random_constrained_instance(&mut rng, 8, 10, 0.5).unwrap();
            let cinv_t = galerkin_inverse(&inst).unwrap();
            let (min_eig, max_eig) = linalg::sym_extreme_eigenvalues(&cinv_t).unwrap();
            assert!(min_eig >= -1e-12, "psd violated: {min_eig}");
            let alpha_c = inst.constants().unwrap().alpha_c;
            assert!(
                max_eig <= 1.0 / alpha_c + 1e-10,
                "{max_eig} vs {}",
                1.0 / alpha_c
            );
            // B^T Ct^-1 B stays positive semi-definite too
            let bt = inst.b.transpose().matmul(&cinv_t).matmul(&inst.b);
            let (min_bt, _) = linalg::sym_extreme_eigenvalues(&bt).unwrap();
            assert!(min_bt >= -1e-12);
        }
    }

    #[test]
    fn saddle_direct_matches_condensed_route() {
        let mut rng = Rng::new(61);
        for _ in 0..25 {
            let inst = random_constrained_instance(&mut rng, 9, 7, 0.5).unwrap();
            let condensed = condense(&inst).unwrap();
            let (u, _, _) = solve_dense_vi(&condensed, 1e-12).unwrap();
            let chol = Cholesky::new(&inst.c).unwrap();
            let bu = inst.b.matvec(&u);
            let rhs: Vec<f64> = bu.iter().zip(&inst.g).map(|(x, g)| x - g).collect();
            let lam = chol.solve(&rhs);
            let (u2, lam2) = solve_saddle_direct(&inst, 1e-10).unwrap();
            for i in 0..u.len() {
                assert!((u[i] - u2[i]).abs() <= 1e-10, "u[{i}]");
            }
            for r in 0..lam.len() {
                assert!((lam[r] - lam2[r]).abs() <= 1e-10, "lam[{r}]");
            }
        }
    }

    #[test]
    fn constrained_bound_holds_with_projection_and_samples() {
        let mut rng = Rng::new(71);
        for trial in 0..25 {
            let inst = random_constrained_instance(&mut rng, 10, 10, 0.5).unwrap();
            let reports = verify_constrained_bound(&inst, 10, 1000 + trial).unwrap();
            for (k, r) in reports.iter().enumerate() {
                assert!(
                    r.holds,
                    "trial {trial} report {k}: lhs {} rhs {}",
                    r.lhs, r.rhs
                );
            }
        }
    }

    #[test]
    fn full_subspace_gives_zero_lhs() {
        let mut rng = Rng::new(72);
        let mut inst = random_constrained_instance(&mut rng, 8, 8, 1.0).unwrap();
        inst.subspace_basis = Mat::identity(inst.multiplier_dim());
        let reports = verify_constrained_bound(&inst, 3, 7).unwrap();
        assert!(reports[0].lhs <= 1e-18, "lhs {}", reports[0].lhs);
    }

    #[test]
    fn shrinking_subspace_shrinks_the_error() {
        let mut rng = Rng::new(73);
        let base = random_constrained_instance(&mut rng, 8, 12, 1.0).unwrap();
        let m = base.multiplier_dim();
        let mut full = Mat::zeros(m, m);
        for v in full.data.iter_mut() {
            *v = rng.normal();
        }
        let mut last = f64::INFINITY;
        for k in [2usize, 5, 8, m] {
            let k = k.min(m);
            let mut inst = base.clone();
            let mut basis = Mat::zeros(m, k);
            for r in 0..m {
                for c in 0..k {
                    basis[(r, c)] = full[(r, c)];
                }
            }
            inst.subspace_basis = basis;
            let reports = verify_constrained_bound(&inst, 0, 5).unwrap();
            let lhs = reports[0].lhs;
            assert!(lhs <= last * (1.0 + 1e-9) + 1e-12, "k={k}: {lhs} vs {last}");
            last = lhs;
        }
        assert!(last <= 1e-18, "full subspace should zero the error: {last}");
    }
}
