use osl_synth::euler::{delta_bound, tube_for_pattern};
use osl_synth::expr::VectorField;
use osl_synth::{Affine, Ball, Mode, ModeConstants, Pattern, SwitchedSystem};
use proptest::prelude::*;

fn lambda_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -5.0..5.0f64, -1e-6..1e-6f64]
}

proptest! {
    #[test]
    fn zero_time_returns_initial_radius(lambda in lambda_strategy(), c in 0.0..100.0f64, delta in 0.0..10.0f64) {
        prop_assert_eq!(delta_bound(lambda, c, delta, 0.0).unwrap(), delta);
    }

    #[test]
    fn monotone_in_initial_radius(
        lambda in lambda_strategy(),
        c in 0.0..10.0f64,
        d1 in 0.0..5.0f64,
        d2 in 0.0..5.0f64,
        t in 1e-4..2.0f64,
    ) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(delta_bound(lambda, c, lo, t).unwrap() <= delta_bound(lambda, c, hi, t).unwrap());
    }

    #[test]
    fn monotone_in_c(
        lambda in lambda_strategy(),
        c1 in 0.0..10.0f64,
        c2 in 0.0..10.0f64,
        delta in 0.0..5.0f64,
        t in 1e-4..2.0f64,
    ) {
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        prop_assert!(delta_bound(lambda, lo, delta, t).unwrap() <= delta_bound(lambda, hi, delta, t).unwrap());
    }

    #[test]
    fn zero_c_collapses_to_exponential(lambda in -5.0..5.0f64, delta in 0.0..5.0f64, t in 0.0..2.0f64) {
        let got = delta_bound(lambda, 0.0, delta, t).unwrap();
        let want = if lambda < 0.0 {
            delta * (0.5 * lambda * t).exp()
        } else if lambda == 0.0 {
            delta * (0.5 * t).exp()
        } else {
            delta * (1.5 * lambda * t).exp()
        };
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0), "got {got}, want {want}");
    }

    #[test]
    fn radius_is_finite_and_nonnegative(
        lambda in lambda_strategy(),
        c in 0.0..1e3f64,
        delta in 0.0..10.0f64,
        t in 0.0..1.0f64,
    ) {
        let r = delta_bound(lambda, c, delta, t).unwrap();
        prop_assert!(r.is_finite() && r >= 0.0);
    }
}

#[test]
fn monotonicity_on_a_regular_grid() {
    let lambdas = [-2.0, -0.014215, -1e-9, 0.0, 1e-9, 0.142474, 2.0];
    let ts = [1e-3, 0.05, 0.2, 0.5, 1.0];
    let values = [0.0, 0.01, 0.1, 1.0, 3.0];
    for &l in &lambdas {
        for &t in &ts {
            for w in values.windows(2) {
                for &fixed in &values {
                    let by_delta = (delta_bound(l, fixed, w[0], t).unwrap(), delta_bound(l, fixed, w[1], t).unwrap());
                    assert!(by_delta.0 <= by_delta.1, "delta not monotone at λ={l} t={t}");
                    let by_c = (delta_bound(l, w[0], fixed, t).unwrap(), delta_bound(l, w[1], fixed, t).unwrap());
                    assert!(by_c.0 <= by_c.1, "C not monotone at λ={l} t={t}");
                }
            }
        }
    }
}

fn dcdc_mode_one() -> SwitchedSystem {
    let a = [-1.0 / 60.0, 0.0, 0.0, -0.014214641080312724];
    let b = [1.0 / 3.0, 0.0];
    let field = VectorField::parse(&[format!("{:?} * x1 + {:?}", a[0], b[0]), format!("{:?} * x2", a[3])]).unwrap();
    let affine = Affine { matrix: a.to_vec(), offset: b.to_vec() };
    SwitchedSystem::new(2, vec![Mode::new(1, field, Some(affine)).unwrap()], 0.5, 1).unwrap()
}

#[test]
fn sub_sampling_tightens_contracting_tube() {
    let base = dcdc_mode_one();
    let k = ModeConstants { lambda: -0.014214641080312724, lipschitz: 1.0 / 60.0, c: 6.7126e-5, m: 4.0e-3 };
    let ball = Ball::new(vec![2.0, 1.2], 0.045).unwrap();
    let pattern = Pattern::new(vec![1, 1, 1], 1, 3).unwrap();
    let mut last = f64::INFINITY;
    for s in [1, 2, 5, 10, 20] {
        let system = base.with_substeps(s).unwrap();
        let tube = tube_for_pattern(&ball, &pattern, &system, &[k]).unwrap();
        let r = tube.tube.last().unwrap().radius;
        assert!(r < last, "substeps {s}: radius {r} did not shrink below {last}");
        last = r;
    }
}
