use hjb_illiquid::model::{MarketParams, SurvivalModel};
use hjb_illiquid::montecarlo::{simulate_objective, McOptions, Policy, SolverPolicy};
use hjb_illiquid::reduction::{classify_all, ReductionCase};
use hjb_illiquid::solver::{reconstruct, solve_reduced_h4, Grid2D, SolverOptions, ValueSurface};
use hjb_illiquid::symmetry::Ctx;
use hjb_illiquid::utility::UtilitySpec;
use hjb_illiquid::Error;

fn surface(omega: f64) -> ValueSurface {
    let p = MarketParams::default();
    let m = SurvivalModel::default();
    let g = Grid2D::centered(&Ctx::new(p, m), omega, 5.0, (0.25, 4.0), 40).unwrap();
    solve_reduced_h4(&p, &m, omega, &g, &SolverOptions::default()).unwrap()
}

#[test]
fn policy_follows_the_time_rule_along_a_fixed_ray() {
    let omega = 0.8;
    let s = surface(omega);
    let p = s.params;
    let ctx = Ctx::new(p, s.survival);
    let case = ReductionCase::H4 { omega };
    let (z, h) = (s.grid.z(s.grid.n_z / 2), 1.3);
    let ts = [0.0, 1.0, 2.5, 4.0];
    let pts: Vec<[f64; 3]> = ts.iter().map(|&t| [case.l_from_z(&ctx, z, t).unwrap(), h, t]).collect();
    let out = reconstruct(&s, &pts).unwrap();
    let kappa = 0.2;
    let slope = (p.r / omega - kappa) / p.a;
    for x in &out {
        assert!((x.pi - out[0].pi).abs() < 1e-10 * out[0].pi.abs());
        assert!((x.c - out[0].c - slope * x.t).abs() < 1e-10, "{x:?}");
    }
    assert!(slope.abs() > 1e-3);
}

#[test]
fn default_omega_freezes_consumption_in_time() {
    let p = MarketParams::default();
    let m = SurvivalModel::default();
    let s = surface(m.default_omega(&p));
    let out = reconstruct(&s, &[[0.0, 1.0, 0.0], [0.0, 1.0, 3.0]]).unwrap();
    assert!((out[0].c - out[1].c).abs() < 1e-10);
    assert!((out[0].pi - out[1].pi).abs() < 1e-10);
}

#[test]
fn value_decreases_toward_zero_and_increases_in_wealth() {
    let s = surface(SurvivalModel::default().default_omega(&MarketParams::default()));
    let out = reconstruct(&s, &[[-1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 10.0]]).unwrap();
    assert!(out[0].v < out[1].v && out[1].v < 0.0);
    assert!(out[2].v.abs() < out[1].v.abs());
}

#[test]
fn out_of_grid_queries_are_reported() {
    let s = surface(0.25);
    assert!(matches!(reconstruct(&s, &[[1e4, 1.0, 0.0]]), Err(Error::Extrapolation(_))));
    assert!(matches!(reconstruct(&s, &[[0.0, 1.0, -1.0]]), Err(Error::Domain(_))));
    // The simulator falls back to the separable closure instead.
    let pol = SolverPolicy::new(&s);
    let ((pi, c), closure) = pol.control_with_source(1e4, 1.0, 0.0);
    assert!(closure && pi.is_finite() && c.is_finite());
}

#[test]
fn solver_policy_simulation_is_reproducible() {
    let s = surface(0.25);
    let pol = SolverPolicy::new(&s);
    let opts = McOptions { n_paths: 200, dt: 0.1, ..McOptions::default() };
    let u = UtilitySpec::EXPn { a: 1.0 };
    let a = simulate_objective(&s.params, &s.survival, &u, &pol, &opts).unwrap();
    let b = simulate_objective(&s.params, &s.survival, &u, &pol, &opts).unwrap();
    assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    assert!(a.estimate.is_finite() && a.std_error > 0.0);
    assert!(pol.name().contains("solver"));
}

#[test]
fn catalog_serializes_with_status_tags() {
    let cat = classify_all(&MarketParams::default(), &SurvivalModel::default(), None);
    let json = serde_json::to_value(&cat).unwrap();
    let entries = json["entries"].as_array().unwrap();
    let h4 = entries.iter().find(|e| e["id"] == "H4").unwrap();
    assert_eq!(h4["admissibility"]["status"], "admissible");
    let h12 = entries.iter().find(|e| e["id"] == "H12").unwrap();
    assert_eq!(h12["admissibility"]["reason"], "complex-valued");
}
