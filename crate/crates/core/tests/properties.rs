use hjb_illiquid::hjb::testfn::ExpPoly;
use hjb_illiquid::hjb::{residual_expn, strategy, JetPoint};
use hjb_illiquid::model::{upper_incomplete_gamma, MarketParams, SurvivalModel};
use hjb_illiquid::reduction::{z_h4, ReductionCase};
use hjb_illiquid::symmetry::{bracket, l4_expn, max_deviation, Ctx, VectorField};
use hjb_illiquid::utility::UtilitySpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn survival() -> impl Strategy<Value = SurvivalModel> {
    prop_oneof![
        (0.05..1.0f64).prop_map(|kappa| SurvivalModel::Exponential { kappa }),
        (1.0..20.0f64, 0.5..4.0f64).prop_map(|(lambda, k)| SurvivalModel::Weibull { lambda, k }),
    ]
}

fn jet(seed: u64, l: f64, h: f64, t: f64) -> JetPoint {
    ExpPoly::random(&mut ChaCha8Rng::seed_from_u64(seed)).jet_point(l, h, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn survival_is_a_decreasing_probability(m in survival(), t in 0.0..50.0f64, dt in 0.01..5.0f64) {
        let a = m.survival(t).unwrap();
        let b = m.survival(t + dt).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
        if a > f64::MIN_POSITIVE {
            prop_assert!((m.ln_survival(t) - a.ln()).abs() < 1e-12 * a.ln().abs().max(1.0));
        }
    }

    #[test]
    fn survival_integral_differentiates_to_survival(m in survival(), t in 0.1..30.0f64) {
        let e = 1e-4;
        let fd = (m.survival_integral(t + e) - m.survival_integral(t - e)) / (2.0 * e);
        let s = m.survival(t).unwrap();
        prop_assert!((fd - s).abs() <= 1e-6 * s.max(1e-3), "{} vs {}", fd, s);
    }

    #[test]
    fn incomplete_gamma_recurrence(k in 0.1..6.0f64, x in 0.01..60.0f64) {
        let lhs = upper_incomplete_gamma(k + 1.0, x).unwrap();
        let rhs = k * upper_incomplete_gamma(k, x).unwrap() + (k * x.ln() - x).exp();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs, "{} {}", lhs, rhs);
    }

    #[test]
    fn risk_tolerance_is_linear_for_hara(gamma in 0.05..0.95f64, a in 0.2..3.0f64, c in 0.0..10.0f64) {
        let u = UtilitySpec::HARA2 { gamma, a };
        let want = c / (1.0 - gamma) + 1.0 / a;
        prop_assert!((u.risk_tolerance(c).unwrap() - want).abs() < 1e-9 * want);
        prop_assert_eq!(UtilitySpec::EXPn { a }.risk_tolerance(c).unwrap(), 1.0 / a);
    }

    #[test]
    fn value_shift_leaves_residual_and_strategy_unchanged(
        seed in any::<u64>(), l in -2.0..2.0f64, h in 0.2..3.0f64, t in 0.0..10.0f64, shift in -5.0..5.0f64,
    ) {
        let p = MarketParams::default();
        let m = SurvivalModel::default();
        let j = jet(seed, l, h, t);
        let k = JetPoint { v: j.v + shift, ..j };
        prop_assert_eq!(residual_expn(&p, &m, &j).unwrap(), residual_expn(&p, &m, &k).unwrap());
        prop_assert_eq!(strategy(&p, &m, &j).unwrap(), strategy(&p, &m, &k).unwrap());
    }

    #[test]
    fn h4_coordinate_round_trips(m in survival(), omega in 0.1..5.0f64, l in -5.0..5.0f64, t in 0.0..20.0f64) {
        let ctx = Ctx::new(MarketParams::default(), m);
        let case = ReductionCase::H4 { omega };
        let z = z_h4(&ctx, omega, l, t);
        let back = case.l_from_z(&ctx, z, t).unwrap();
        prop_assert!((back - l).abs() < 1e-9 * z.abs().max(1.0));
    }

    #[test]
    fn brackets_are_antisymmetric(m in survival(), i in 0usize..4, j in 0usize..4, seed in any::<u64>()) {
        let ctx = Ctx::new(MarketParams::default(), m);
        let g = l4_expn(ctx).generators;
        let pts = hjb_illiquid::verify::random_points4(10, seed);
        let xy = bracket(&g[i], &g[j]);
        let yx = bracket(&g[j], &g[i]);
        let sum = VectorField::combination(&[(1.0, &xy), (1.0, &yx)], "sum");
        let zero = g[0].scaled(0.0);
        prop_assert!(max_deviation(&sum, &zero, &pts) < 1e-12);
    }
}
