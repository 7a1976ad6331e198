//! Property tests for the invariants that quantify over inputs:
//! quadrature Cauchy-Schwarz, Doerfler minimality, eigensolver residuals and
//! the exact-solution gradient.

use proptest::prelude::*;
use pvi_core::linalg::{sym_eigen, Mat};
use pvi_core::quadrature::tensor_gauss;
use pvi_core::study::{dorfler_mark, ExactRadialSolution};

fn eval_poly(c: &[f64], deg: usize, x: f64, y: f64) -> f64 {
    let n = deg + 1;
    let mut acc = 0.0;
    for b in 0..n {
        for a in 0..n {
            acc += c[a + b * n] * x.powi(a as i32) * y.powi(b as i32);
        }
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadrature_cauchy_schwarz(
        q in 1usize..=12,
        deg in 1usize..=5,
        fc in prop::collection::vec(-3.0f64..3.0, 36),
        gc in prop::collection::vec(-3.0f64..3.0, 36),
    ) {
        let rule = tensor_gauss(q).unwrap();
        let qfg = rule.integrate(|x, y| eval_poly(&fc, deg, x, y) * eval_poly(&gc, deg, x, y));
        let qff = rule.integrate(|x, y| eval_poly(&fc, deg, x, y).powi(2));
        let qgg = rule.integrate(|x, y| eval_poly(&gc, deg, x, y).powi(2));
        prop_assert!(qfg <= qff.sqrt() * qgg.sqrt() + 1e-12);
    }

    #[test]
    fn dorfler_marks_minimal_bulk(
        errors in prop::collection::vec(0.0f64..10.0, 1..40),
        theta in 0.05f64..1.0,
    ) {
        let marked = dorfler_mark(&errors, theta).unwrap();
        let total: f64 = errors.iter().sum();
        let mass: f64 = marked.iter().map(|&e| errors[e]).sum();
        // bulk property
        prop_assert!(mass >= theta * total - 1e-12 * total.max(1.0));
        // greedy minimality: dropping the smallest marked element breaks it
        if let Some(&last) = marked.last() {
            if marked.len() > 1 {
                prop_assert!(mass - errors[last] < theta * total + 1e-12 * total.max(1.0));
            }
        }
        // no duplicates
        let mut seen = vec![false; errors.len()];
        for &e in &marked {
            prop_assert!(!seen[e]);
            seen[e] = true;
        }
    }

    #[test]
    fn eigensolver_residual_is_small(
        vals in prop::collection::vec(-4.0f64..4.0, 21),
    ) {
        let n = 6;
        let mut a = Mat::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in 0..=i {
                a[(i, j)] = vals[k];
                a[(j, i)] = vals[k];
                k += 1;
            }
        }
        let eig = sym_eigen(&a).unwrap();
        let scale = a.max_abs().max(1.0);
        for c in 0..n {
            let v: Vec<f64> = (0..n).map(|r| eig.vectors[(r, c)]).collect();
            let av = a.matvec(&v);
            for r in 0..n {
                prop_assert!((av[r] - eig.values[c] * v[r]).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences(
        radius_frac in 0.05f64..0.95,
        angle in 0.0f64..6.2,
    ) {
        let sol = ExactRadialSolution::new(1.5).unwrap();
        let r = 0.05 + radius_frac * 1.4;
        // keep clear of the gradient kink at r = 1
        prop_assume!((r - 1.0).abs() > 0.02);
        let x = [r * angle.cos(), r * angle.sin()];
        let g = sol.gradient(x);
        let h = 1e-6;
        let fd = [
            (sol.value([x[0] + h, x[1]]) - sol.value([x[0] - h, x[1]])) / (2.0 * h),
            (sol.value([x[0], x[1] + h]) - sol.value([x[0], x[1] - h])) / (2.0 * h),
        ];
        prop_assert!((g[0] - fd[0]).abs() <= 1e-7, "{} vs {}", g[0], fd[0]);
        prop_assert!((g[1] - fd[1]).abs() <= 1e-7, "{} vs {}", g[1], fd[1]);
    }
}
