//! Randomized verification suites behind the verify-* subcommands. Trials are
//! derived from per-trial seeds, so results are independent of the thread
//! count and merge deterministically.

use pvi_core::abstract_vi::{
    self, solve_dense_vi, BoundReport, ConstrainedVIInstance, DenseVIInstance, PerturbedPair,
};
use pvi_core::linalg;
use pvi_core::rng::Rng;
use pvi_core::Result;

#[derive(Debug, Clone, Copy)]
pub struct TrialRow {
    pub trial: usize,
    pub report: BoundReport,
}

fn worst(a: BoundReport, b: BoundReport) -> BoundReport {
    // keep the report with the smallest relative margin
    let rel = |r: &BoundReport| r.margin / r.rhs.abs().max(1e-300);
    if rel(&b) < rel(&a) {
        b
    } else {
        a
    }
}

fn sample_feasible(rng: &mut Rng, psi: &[f64]) -> Vec<f64> {
    psi.iter().map(|p| p + rng.uniform() * 2.0).collect()
}

/// Rebuilds the perturbed pair of a numbered trial (for dumping failures).
pub fn regenerate_pair(trial: usize, seed: u64, n_max: usize) -> Result<PerturbedPair> {
    let mut rng = Rng::for_trial(seed, trial as u64);
    let eps = if trial.is_multiple_of(2) { 1e-1 } else { 1e-3 };
    abstract_vi::random_perturbed_pair(&mut rng, n_max, eps)
}

/// One abstract trial: returns the worst-margin reports of the combined
/// estimate, the corollary and the Lipschitz check.
fn abstract_trial(trial: usize, seed: u64, n_max: usize) -> Result<(TrialRow, TrialRow, TrialRow)> {
    let mut rng = Rng::for_trial(seed, trial as u64);
    let eps = if trial.is_multiple_of(2) { 1e-1 } else { 1e-3 };
    let pair = abstract_vi::random_perturbed_pair(&mut rng, n_max, eps)?;
    let tol = 1e-10;
    let (u, _, _) = solve_dense_vi(&pair.base, tol)?;
    let (ut, _, _) = solve_dense_vi(&pair.perturbed_instance(), tol)?;
    let du = linalg::sub(&u, &ut);
    let lhs = linalg::dot(&du, &du);
    // projection pair plus random feasible samples
    let v_proj = pair.base.project(&ut);
    let vt_proj = pair.perturbed_instance().project(&u);
    let mut strang = BoundReport::new(
        lhs,
        abstract_vi::strang_falk_rhs(&pair, &u, &ut, &v_proj, &vt_proj)?,
    );
    let star_inst = DenseVIInstance {
        a: pair.base.a.clone(),
        ell: pair.base.ell.clone(),
        psi: pair.psi_tilde.clone(),
        constrained: pair.base.constrained.clone(),
    };
    let (us, _, _) = solve_dense_vi(&star_inst, tol)?;
    let mut corollary = BoundReport::new(
        lhs,
        abstract_vi::corollary_pert_rhs(&pair, &u, &us, &v_proj, &vt_proj)?,
    );
    for _ in 0..10 {
        let v = sample_feasible(&mut rng, &pair.base.psi);
        let vt = sample_feasible(&mut rng, &pair.psi_tilde);
        strang = worst(
            strang,
            BoundReport::new(lhs, abstract_vi::strang_falk_rhs(&pair, &u, &ut, &v, &vt)?),
        );
        corollary = worst(
            corollary,
            BoundReport::new(
                lhs,
                abstract_vi::corollary_pert_rhs(&pair, &u, &us, &v, &vt)?,
            ),
        );
    }
    // Lipschitz dependence: perturb the load only
    let ell_tilde: Vec<f64> = pair
        .base
        .ell
        .iter()
        .map(|l| l + 0.5 * rng.normal())
        .collect();
    let lip_pair = PerturbedPair::new(
        pair.base.clone(),
        pair.base.a.clone(),
        ell_tilde,
        pair.base.psi.clone(),
    )?;
    let (ul, _, _) = solve_dense_vi(&lip_pair.perturbed_instance(), tol)?;
    let alpha = pair.base.alpha()?;
    let dl = linalg::sub(&pair.base.ell, &lip_pair.ell_tilde);
    let lip = BoundReport::new(
        linalg::norm2(&linalg::sub(&u, &ul)),
        2.0 / alpha * linalg::norm2(&dl),
    );
    Ok((
        TrialRow {
            trial,
            report: strang,
        },
        TrialRow {
            trial,
            report: corollary,
        },
        TrialRow { trial, report: lip },
    ))
}

type AbstractRows = (Vec<TrialRow>, Vec<TrialRow>, Vec<TrialRow>);

/// Runs the abstract suites over `trials` seeded instances on up to
/// `threads` worker threads.
pub fn run_abstract_suites(
    trials: usize,
    seed: u64,
    n_max: usize,
    threads: usize,
) -> Result<AbstractRows> {
    let results = run_parallel(trials, threads, move |t| abstract_trial(t, seed, n_max))?;
    let mut strang = Vec::with_capacity(trials);
    let mut corollary = Vec::with_capacity(trials);
    let mut lipschitz = Vec::with_capacity(trials);
    for (s, c, l) in results {
        strang.push(s);
        corollary.push(c);
        lipschitz.push(l);
    }
    Ok((strang, corollary, lipschitz))
}

/// Per-instance outcome of the condensation suite.
#[derive(Debug, Clone, Copy)]
pub struct ConstrainedRow {
    pub trial: usize,
    /// worst combined-bound report (projection choice plus 10 samples)
    pub bound: BoundReport,
    /// max component deviation between the saddle and condensed solutions
    pub saddle_dev: f64,
    /// min eigenvalue of the condensed operator minus alpha_D
    pub ellipticity_margin: f64,
    /// smallest eigenvalue of the Galerkin inverse (>= -1e-12 required)
    pub psd_min: f64,
    /// operator norm of the Galerkin inverse minus 1/alpha_C
    pub norm_excess: f64,
}

impl ConstrainedRow {
    pub fn all_hold(&self) -> bool {
        self.bound.holds
            && self.saddle_dev <= 1e-10
            && self.ellipticity_margin >= -1e-10
            && self.psd_min >= -1e-12
            && self.norm_excess <= 1e-10
    }
}

fn constrained_trial(trial: usize, seed: u64) -> Result<ConstrainedRow> {
    let mut rng = Rng::for_trial(seed ^ 0xc05e, trial as u64);
    let inst: ConstrainedVIInstance =
        abstract_vi::random_constrained_instance(&mut rng, 12, 12, 0.5)?;
    let condensed = abstract_vi::condense(&inst)?;
    let (u, _, _) = solve_dense_vi(&condensed, 1e-12)?;
    let chol = pvi_core::linalg::Cholesky::new(&inst.c)?;
    let bu = inst.b.matvec(&u);
    let rhs: Vec<f64> = bu.iter().zip(&inst.g).map(|(x, g)| x - g).collect();
    let lam = chol.solve(&rhs);
    let (u2, lam2) = abstract_vi::solve_saddle_direct(&inst, 1e-10)?;
    let mut saddle_dev = 0.0f64;
    for (a, b) in u.iter().zip(&u2) {
        saddle_dev = saddle_dev.max((a - b).abs());
    }
    for (a, b) in lam.iter().zip(&lam2) {
        saddle_dev = saddle_dev.max((a - b).abs());
    }
    let alpha_d = inst.constants()?.alpha_d;
    let (min_eig, _) = linalg::sym_extreme_eigenvalues(&condensed.a)?;
    let cinv_t = abstract_vi::galerkin_inverse(&inst)?;
    let (psd_min, psd_max) = linalg::sym_extreme_eigenvalues(&cinv_t)?;
    let alpha_c = inst.constants()?.alpha_c;
    let reports = abstract_vi::verify_constrained_bound(&inst, 10, seed ^ trial as u64)?;
    let bound = reports
        .into_iter()
        .reduce(worst_of)
        .expect("at least the projection report");
    Ok(ConstrainedRow {
        trial,
        bound,
        saddle_dev,
        ellipticity_margin: min_eig - alpha_d,
        psd_min,
        norm_excess: psd_max - 1.0 / alpha_c,
    })
}

fn worst_of(a: BoundReport, b: BoundReport) -> BoundReport {
    worst(a, b)
}

pub fn run_constrained_suite(
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<ConstrainedRow>> {
    run_parallel(trials, threads, move |t| constrained_trial(t, seed))
}

/// Chunked deterministic fan-out: results are returned in trial order no
/// matter how many workers ran.
fn run_parallel<T, F>(trials: usize, threads: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = threads.max(1).min(trials.max(1));
    if workers <= 1 {
        return (0..trials).map(&f).collect();
    }
    let chunk = trials.div_ceil(workers);
    let mut out: Vec<Result<Vec<T>>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(trials);
            let f = &f;
            handles.push(scope.spawn(move || (lo..hi).map(f).collect::<Result<Vec<T>>>()));
        }
        for h in handles {
            out.push(h.join().expect("worker panicked"));
        }
    });
    let mut merged = Vec::with_capacity(trials);
    for part in out {
        merged.extend(part?);
    }
    Ok(merged)
}
