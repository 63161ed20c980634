use proptest::prelude::*;

use glmgf::functionals::catalog;
use glmgf::gaussmc::{fmt17, quadrature_phi, SampleBank, ValueSample};
use glmgf::harness::config::parse_functional;
use glmgf::skmodel::{log_partition, log_partition_naive};
use glmgf::{Check, CheckPoint, Functional, ScalarMap, SkInstance, SkParams, SlackPolicy};

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, n)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Every catalog functional together with two points of its dimension.
fn catalog_pair() -> impl Strategy<Value = (Functional<f64>, Vec<f64>, Vec<f64>)> {
    (0..catalog().len()).prop_flat_map(|i| {
        let f = catalog().swap_remove(i);
        let n = f.dim();
        (Just(f), point(n), point(n))
    })
}

fn tol(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn catalog_is_convex_on_segments((f, x, y) in catalog_pair(), t in 0.0..=1.0f64) {
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let (fx, fy, fz) = (f.eval(&x).unwrap(), f.eval(&y).unwrap(), f.eval(&z).unwrap());
        let chord = t * fx + (1.0 - t) * fy;
        prop_assert!(fz <= chord + tol(chord));
    }

    #[test]
    fn subgradients_support_the_graph((f, x, y) in catalog_pair()) {
        let s = f.subgradient(&x).unwrap();
        let fx = f.eval(&x).unwrap();
        let lin: f64 = fx + s.iter().zip(y.iter().zip(&x)).map(|(si, (yi, xi))| si * (yi - xi)).sum::<f64>();
        prop_assert!(f.eval(&y).unwrap() >= lin - tol(lin));
    }

    #[test]
    fn lipschitz_constants_hold((f, x, y) in catalog_pair()) {
        if let Some(l) = f.lipschitz() {
            let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let diff = (f.eval(&x).unwrap() - f.eval(&y).unwrap()).abs();
            prop_assert!(diff <= l * norm2(&d) + tol(diff));
        }
    }

    #[test]
    fn empirical_phi_is_shift_equivariant(values in prop::collection::vec(-3.0..3.0f64, 2..200), c in -5.0..5.0f64, lambda in -3.0..3.0f64) {
        let base = ValueSample::new(values.clone(), 0).unwrap();
        let shifted = ValueSample::new(values.iter().map(|v| v + c).collect(), 0).unwrap();
        let (a, _) = base.phi(lambda);
        let (b, _) = shifted.phi(lambda);
        prop_assert!((b - (a + c)).abs() <= 1e-10 * (1.0 + a.abs() + c.abs()));
    }

    #[test]
    fn empirical_phi_scales(values in prop::collection::vec(-3.0..3.0f64, 2..200), c in 0.1..3.0f64, lambda in -1.0..1.0f64) {
        let base = ValueSample::new(values.clone(), 0).unwrap();
        let scaled = ValueSample::new(values.iter().map(|v| c * v).collect(), 0).unwrap();
        let (a, _) = base.phi(c * lambda);
        let (b, _) = scaled.phi(lambda);
        prop_assert!((b - c * a).abs() <= 1e-10 * (1.0 + b.abs()));
    }

    #[test]
    fn empirical_phi_is_nondecreasing_and_brackets_the_mean(
        values in prop::collection::vec(-3.0..3.0f64, 2..200),
        l1 in -3.0..3.0f64,
        l2 in -3.0..3.0f64,
    ) {
        let s = ValueSample::new(values, 0).unwrap();
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let (plo, phi) = (s.phi(lo).0, s.phi(hi).0);
        prop_assert!(plo <= phi + 1e-10);
        let mean = s.phi(0.0).0;
        if hi > 1e-3 {
            prop_assert!(s.phi(hi).0 >= mean - 1e-10);
        }
        if lo < -1e-3 {
            prop_assert!(s.phi(lo).0 <= mean + 1e-10);
        }
    }

    #[test]
    fn more_slack_never_turns_a_pass_into_a_fail(
        margins in prop::collection::vec(-1.0..1.0f64, 1..20),
        ses in prop::collection::vec(0.0..0.3f64, 20),
        sigmas in 0.0..5.0f64,
        extra_sigmas in 0.0..5.0f64,
        abs_tol in 0.0..0.1f64,
    ) {
        let tight = SlackPolicy { sigmas, abs_tol };
        let loose = SlackPolicy { sigmas: sigmas + extra_sigmas, abs_tol: abs_tol * 2.0 };
        let build = |p: &SlackPolicy| {
            Check::from_points("c", margins.iter().zip(&ses).map(|(&m, &se)| CheckPoint::new(0.0, m, p.slack(se))).collect())
        };
        let (a, b) = (build(&tight), build(&loose));
        prop_assert!(!a.pass || b.pass);
    }

    #[test]
    fn sk_field_sign_symmetry(n in 1usize..7, beta in 0.0..2.0f64, h in -1.5..1.5f64, seed in any::<u64>()) {
        let x = SampleBank::new(seed, n * n, 1).unwrap().sample::<f64>(0);
        let a = SkInstance::new(SkParams::new(n, beta, h).unwrap(), x.clone()).unwrap();
        let b = SkInstance::new(SkParams::new(n, beta, -h).unwrap(), x).unwrap();
        let (za, zb) = (log_partition(&a).unwrap(), log_partition(&b).unwrap());
        prop_assert!((za - zb).abs() <= 1e-12 * (1.0 + za.abs()));
    }

    #[test]
    fn gray_code_matches_naive(n in 1usize..9, beta in 0.0..3.0f64, h in -2.0..2.0f64, seed in any::<u64>()) {
        let x = SampleBank::new(seed, n * n, 1).unwrap().sample::<f64>(0);
        let inst = SkInstance::new(SkParams::new(n, beta, h).unwrap(), x).unwrap();
        let (g, v) = (log_partition(&inst).unwrap(), log_partition_naive(&inst).unwrap());
        prop_assert!((g - v).abs() <= 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn hermite_is_exact_for_linear(a in point(2), b in -3.0..3.0f64, lambda in -2.0..2.0f64, nodes in 32usize..80) {
        // 32 nodes resolve e^{cx} to roundoff only up to about c = 4
        prop_assume!(lambda.abs() > 1e-3 && lambda.abs() * norm2(&a) <= 4.0);
        let f = Functional::linear(a.clone(), b).unwrap();
        let want = b + 0.5 * lambda * (a[0] * a[0] + a[1] * a[1]);
        let got = quadrature_phi(&f, lambda, nodes).unwrap();
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn seventeen_digits_round_trip(x in any::<f64>()) {
        prop_assume!(x.is_finite());
        prop_assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn bank_samples_do_not_depend_on_access_order(seed in any::<u64>(), n in 1usize..6, i in 0usize..500, j in 0usize..500) {
        let bank = SampleBank::new(seed, n, 500).unwrap();
        let first = bank.sample::<f64>(i);
        let _ = bank.sample::<f64>(j);
        prop_assert_eq!(bank.sample::<f64>(i), first);
    }

    #[test]
    fn functional_specs_round_trip(
        a in prop::collection::vec(-5.0..5.0f64, 1..4),
        b in -2.0..2.0f64,
        n in 1usize..6,
        tau in 0.1..4.0f64,
        beta in 0.0..2.0f64,
        h in -1.0..1.0f64,
        which in 0usize..7,
    ) {
        let f = match which {
            0 => Functional::linear(a, b).unwrap(),
            1 => Functional::euclid_norm(n).unwrap(),
            2 => Functional::max_coord(n).unwrap(),
            3 => Functional::log_sum_exp(n, tau).unwrap(),
            4 => Functional::sk_free_energy(SkParams::new(n, beta, h).unwrap()),
            5 => Functional::composed(ScalarMap::Softplus, Functional::log_sum_exp(n, tau).unwrap()).unwrap(),
            _ => Functional::negated(Functional::euclid_norm(n).unwrap()),
        };
        prop_assert_eq!(parse_functional(&f.to_string()).unwrap(), f);
    }
}
