use ma_boundary::exponents::{abar, alpha, lambda_iterate, theta, ExponentContext};
use ma_boundary::ma_measure::{ma_measure, PLConvexFunction};
use ma_boundary::solver::{radial_oracle, RadialOptions, RadialRhs};
use proptest::prelude::*;

fn exponent() -> impl Strategy<Value = f64> {
    prop_oneof![2.0..20.0f64, Just(f64::INFINITY)]
}

proptest! {
    #[test]
    fn theta_lies_in_unit_interval(n in 2usize..5, k in 0.0..5.0f64, a0 in exponent(), a1 in exponent(), a2 in exponent()) {
        let a = [a0, a1, a2][..n - 1].to_vec();
        let t = theta(&ExponentContext::singular(n, k, a.clone()).unwrap()).unwrap();
        prop_assert!(t > 0.0 && t < 1.0);
        // flatter directions lower the exponent
        let mut flat = a.clone();
        flat[0] = f64::INFINITY;
        let tf = theta(&ExponentContext::singular(n, k, flat).unwrap()).unwrap();
        prop_assert!(tf <= t);
    }

    #[test]
    fn alpha_is_a_fixed_point_of_the_iteration(n in 2usize..5, qf in 0.0..0.95f64, a0 in exponent(), steps in 1usize..40) {
        let q = qf * n as f64;
        let a = vec![a0; n - 1];
        let ctx = ExponentContext::degenerate(n, q, a.clone()).unwrap();
        let al = alpha(&ctx).unwrap();
        prop_assert!((al - (abar(&a).unwrap() + 2.0) / (n as f64 - q)).abs() <= 1e-15 * al);
        let fixed = lambda_iterate(&ctx, al, steps).unwrap();
        prop_assert!(fixed.deviations.iter().all(|d| *d == 0.0));
        let seq = lambda_iterate(&ctx, 0.5 * al, steps).unwrap();
        prop_assert!(seq.values.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(seq.values.iter().all(|v| *v <= al));
    }

    #[test]
    fn adding_affine_functions_keeps_masses(c in -2.0..2.0f64, s in -2.0..2.0f64, t in -2.0..2.0f64) {
        let mut nodes = Vec::new();
        for j in 0..=6 {
            for i in 0..=6 {
                nodes.push([i as f64 / 3.0 - 1.0, j as f64 / 3.0 - 1.0]);
            }
        }
        let base: Vec<f64> = nodes.iter().map(|p| p[0].powi(4) + 0.5 * p[1] * p[1] + p[0] * p[1] * 0.1).collect();
        let tilted: Vec<f64> = nodes.iter().zip(&base).map(|(p, v)| v + c + s * p[0] + t * p[1]).collect();
        let m0 = ma_measure(&PLConvexFunction::new(nodes.clone(), base).unwrap()).unwrap();
        let m1 = ma_measure(&PLConvexFunction::new(nodes, tilted).unwrap()).unwrap();
        for (a, b) in m0.masses.iter().zip(&m1.masses) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs())),
                (None, None) => {}
                _ => prop_assert!(false, "boundary classification changed"),
            }
        }
    }
}

/// `-sqrt(1 - r^2)` solves the singular problem with `n = 2`, `k = 1` on the unit disk.
#[test]
fn hemisphere_is_the_singular_solution() {
    let r: f64 = 0.6;
    let u = -(1.0 - r * r).sqrt();
    let du = r / (1.0 - r * r).sqrt();
    let ddu = (1.0 - r * r).powf(-1.5);
    let det = ddu * du / r;
    let rhs = u.abs().powi(-5) * (r * du - u).powi(-1);
    assert!((det - rhs).abs() < 1e-12 * det);

    let sol = radial_oracle(2, RadialRhs::Singular { k: 1.0 }, 1.0, &RadialOptions::default()).unwrap();
    assert!((sol.u0 + 1.0).abs() < 1e-7);
    for &[r, v] in sol.profile.iter().filter(|p| p[0] < 0.999) {
        assert!((v + (1.0 - r * r).sqrt()).abs() < 1e-5, "r = {r}: {v}");
    }
}
