//! Property suites over the symmetry and reduction machinery, grouped into
//! report sections.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::Field;
use crate::error::{Error, Result};
use crate::hjb::testfn::{jet_point, random_point, ExpPoly, NegativeProfile, ReducedExpPoly};
use crate::hjb::Pde;
use crate::model::{MarketParams, SurvivalModel};
use crate::reduction::{
    annihilation_defect, check_profile_lift, check_surface_lift, classify_all, Admissibility, ReductionCase, Sign,
};
use crate::symmetry::{
    bracket_table, jacobi_defect, l3_hara1, l3_hara2, l4_expn, l4_expp, l4_hara2_exp, residual_covariance_check,
    Catalog, Ctx, PointMap, PulledBack,
};

/// A report section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Brackets,
    Covariance,
    Equivalence,
    Reductions,
}

impl Section {
    pub const ALL: [Section; 4] = [Section::Brackets, Section::Covariance, Section::Equivalence, Section::Reductions];

    pub fn name(self) -> &'static str {
        match self {
            Section::Brackets => "brackets",
            Section::Covariance => "covariance",
            Section::Equivalence => "equivalence",
            Section::Reductions => "reductions",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Section {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Section::ALL
            .into_iter()
            .find(|x| x.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown section `{s}`; expected one of brackets, covariance, equivalence, reductions")))
    }
}

/// Sampling sizes and tolerances of the suites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Jet points per bracket table.
    pub bracket_points: usize,
    /// Random test functions per identity.
    pub functions: usize,
    /// Points per test function.
    pub points_per_function: usize,
    /// Relative tolerance of the identities.
    pub tol: f64,
    /// Tolerance on the constancy of covariance multipliers.
    pub covariance_tol: f64,
    /// HARA parameter used by the HARA suites.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            bracket_points: 100,
            functions: 20,
            points_per_function: 50,
            tol: 1e-9,
            covariance_tol: 1e-7,
            gamma: 0.4,
            seed: 1,
        }
    }
}

/// One named numeric check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), value, tolerance, passed: value <= tolerance, detail: None }
    }

    fn flag(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            passed: ok,
            detail: Some(detail.into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SectionReport {
    fn new(checks: Vec<Check>) -> Self {
        SectionReport { passed: checks.iter().all(|c| c.passed), checks }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub sections: BTreeMap<String, SectionReport>,
}

/// Random `(l, h, t, V)` points.
pub fn random_points4(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let [l, h, t] = random_point(&mut rng);
            [l, h, t, rng.random_range(-3.0..3.0)]
        })
        .collect()
}

/// Catalogs checked for the given survival model.
pub fn catalogs(ctx: Ctx, gamma: f64) -> Vec<Catalog> {
    let mut out = vec![l4_expn(ctx), l4_expp(ctx), l3_hara2(ctx, gamma), l3_hara1(ctx, gamma)];
    if let Ok(c) = l4_hara2_exp(ctx, gamma) {
        out.push(c);
    }
    out
}

/// Bracket tables and Jacobi identities.
pub fn brackets(ctx: Ctx, opts: &VerifyOptions) -> SectionReport {
    let pts = random_points4(opts.bracket_points, opts.seed);
    let mut checks = Vec::new();
    for c in catalogs(ctx, opts.gamma) {
        let table = bracket_table(&c, &pts);
        checks.push(Check::at_most(format!("{} structure constants", c.name), table.max_dev, opts.tol));
        checks.push(Check::at_most(format!("{} Jacobi identity", c.name), jacobi_defect(&c, &pts), opts.tol));
    }
    SectionReport::new(checks)
}

/// The equation each catalog's generators act on and the expected
/// multiplier of each generator's flow at parameter `eps`.
fn catalog_equation(name: &str, gamma: f64, ctx: &Ctx, idx: usize, eps: f64) -> (Pde, f64) {
    let kappa = match ctx.m {
        SurvivalModel::Exponential { kappa } => kappa,
        _ => 0.0,
    };
    match (name, idx) {
        ("L4_EXPn", 0) => (Pde::EXPn, (-eps).exp()),
        ("L4_EXPn", _) => (Pde::EXPn, 1.0),
        ("L4_EXPp", 0) => (Pde::EXPp, (-eps).exp()),
        ("L4_EXPp", _) => (Pde::EXPp, 1.0),
        ("L3_HARA1", 2) => (Pde::HARA1 { gamma }, (gamma * eps).exp()),
        ("L3_HARA1", _) => (Pde::HARA1 { gamma }, 1.0),
        (_, 2) => (Pde::HARA2 { gamma }, (gamma * eps).exp()),
        (_, 3) => (Pde::HARA2 { gamma }, (-kappa * eps).exp()),
        _ => (Pde::HARA2 { gamma }, 1.0),
    }
}

/// Points sharing a time value in groups of `per_t`.
fn grouped_points(rng: &mut ChaCha8Rng, groups: usize, per_t: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(groups * per_t);
    for _ in 0..groups {
        let t = rng.random_range(0.5..8.0);
        for _ in 0..per_t {
            pts.push([rng.random_range(-1.5..1.5), rng.random_range(0.3..2.5), t]);
        }
    }
    pts
}

/// Flows of every catalog generator map residuals to multiples of
/// themselves, with the expected multiplier.
pub fn covariance(ctx: Ctx, opts: &VerifyOptions) -> Result<SectionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC0);
    let eps = 0.3;
    let mut checks = Vec::new();
    for c in catalogs(ctx, opts.gamma) {
        for (k, g) in c.generators.iter().enumerate() {
            let (pde, expected) = catalog_equation(c.name, opts.gamma, &ctx, k, eps);
            let mut worst_dev: f64 = 0.0;
            let mut worst_mult: f64 = 0.0;
            let mut inconclusive = false;
            for _ in 0..opts.functions.min(5) {
                let f = ExpPoly::random(&mut rng);
                let pts = grouped_points(&mut rng, 5, 4);
                let rep = residual_covariance_check(g, pde, &f, eps, &pts, opts.covariance_tol)?;
                inconclusive |= rep.inconclusive;
                worst_dev = worst_dev.max(rep.max_dev);
                worst_mult = worst_mult.max((rep.multiplier - expected).abs() / expected);
            }
            let name = format!("{} {} on {}", c.name, g.label, pde.name());
            let mut chk = Check::at_most(format!("{name}: multiplier spread"), worst_dev, opts.covariance_tol);
            if inconclusive {
                chk.passed = false;
                chk.detail = Some("no usable points".into());
            }
            checks.push(chk);
            checks.push(Check::at_most(format!("{name}: multiplier vs expected"), worst_mult, opts.covariance_tol));
        }
    }
    Ok(SectionReport::new(checks))
}

/// Largest relative defect of `Δ_src[T*f](x) = Δ_tgt[f](T(x))`.
pub fn equivalence_defect(ctx: Ctx, map: PointMap, opts: &VerifyOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xE0);
    let (src, tgt) = map.equations();
    let mut worst: f64 = 0.0;
    for _ in 0..opts.functions {
        let f = ExpPoly::random(&mut rng);
        let pulled = PulledBack { map, ctx, f: &f };
        for _ in 0..opts.points_per_function {
            let [l, h, t] = random_point(&mut rng);
            let [l2, ..] = map.forward(&ctx, [l, h, t, pulled.eval([l, h, t])]);
            let a = src.evaluate(&ctx.p, &ctx.m, &jet_point(&pulled, l, h, t))?;
            let b = tgt.evaluate(&ctx.p, &ctx.m, &jet_point(&f, l2, h, t))?;
            worst = worst.max(a.rel_diff(&b));
        }
    }
    Ok(worst)
}

pub fn equivalence(ctx: Ctx, opts: &VerifyOptions) -> Result<SectionReport> {
    let maps = [PointMap::ExppToExpn, PointMap::Hara1ToHara2 { gamma: opts.gamma }];
    let mut checks = Vec::new();
    for map in maps {
        let (s, t) = map.equations();
        let d = equivalence_defect(ctx, map, opts)?;
        checks.push(Check::at_most(format!("{} -> {} residual identity", s.name(), t.name()), d, opts.tol));
    }
    Ok(SectionReport::new(checks))
}

/// The three `ω` values exercised by the lifted-residual identity.
pub fn omega_values(p: &MarketParams, m: &SurvivalModel) -> [f64; 3] {
    [m.default_omega(p), 0.5, 2.0]
}

/// Surface cases checked by the lifted-residual identity.
pub fn surface_cases(p: &MarketParams, m: &SurvivalModel) -> Vec<ReductionCase> {
    let mut v = vec![ReductionCase::H2];
    v.extend(omega_values(p, m).map(|omega| ReductionCase::H4 { omega }));
    v.push(ReductionCase::H7 { sign: Sign::Plus });
    v.push(ReductionCase::H7 { sign: Sign::Minus });
    v
}

/// Every case with a value map.
pub fn all_cases(p: &MarketParams, m: &SurvivalModel) -> Vec<ReductionCase> {
    let mut v = surface_cases(p, m);
    v.extend([
        ReductionCase::H4Omega0,
        ReductionCase::H5 { sign: Sign::Plus },
        ReductionCase::H5 { sign: Sign::Minus },
        ReductionCase::H8,
        ReductionCase::H12,
    ]);
    v
}

/// Lifted-residual identities, annihilation of invariants and the
/// classification.
pub fn reductions(ctx: Ctx, opts: &VerifyOptions) -> Result<SectionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xD0);
    let mut checks = Vec::new();
    let n_fun = opts.functions.min(10);
    let n_pts = opts.points_per_function.min(10);
    for case in surface_cases(&ctx.p, &ctx.m) {
        let mut worst: f64 = 0.0;
        for _ in 0..n_fun {
            let w = ReducedExpPoly::random(&mut rng);
            let pts: Vec<[f64; 3]> = (0..n_pts).map(|_| random_point(&mut rng)).collect();
            worst = worst.max(check_surface_lift(case, ctx, &w, &pts)?.max_rel_dev);
        }
        checks.push(Check::at_most(format!("{case} lifted residual"), worst, opts.tol));
    }
    for case in [ReductionCase::H8, ReductionCase::H12] {
        let mut worst: f64 = 0.0;
        for _ in 0..n_fun {
            let v = NegativeProfile::random(&mut rng);
            let pts: Vec<[f64; 3]> = (0..n_pts).map(|_| random_point(&mut rng)).collect();
            worst = worst.max(check_profile_lift(case, ctx, &v, &pts)?.max_rel_dev);
        }
        checks.push(Check::at_most(format!("{case} lifted residual"), worst, opts.tol));
    }
    let pts: Vec<[f64; 4]> = random_points4(30, opts.seed ^ 0xD1)
        .into_iter()
        .map(|[l, h, t, v]| [l, h, t, -(v.abs() + 0.1)])
        .collect();
    for case in all_cases(&ctx.p, &ctx.m) {
        checks.push(Check::at_most(format!("{case} invariants annihilated"), annihilation_defect(case, ctx, &pts), opts.tol));
    }
    let cat = classify_all(&ctx.p, &ctx.m, None);
    let n_adm = cat.entries.iter().filter(|e| e.admissibility == Admissibility::Admissible).count();
    checks.push(Check::flag(
        "unique admissible reduction",
        n_adm == 1 && cat.unique_admissible.as_deref() == Some("H4"),
        format!("admissible: {:?}", cat.unique_admissible),
    ));
    Ok(SectionReport::new(checks))
}

/// Runs the selected sections (all when `only` is empty).
pub fn run(p: &MarketParams, m: &SurvivalModel, opts: &VerifyOptions, only: &[Section]) -> Result<VerifyReport> {
    p.validate()?;
    m.validate()?;
    let ctx = Ctx::new(*p, *m);
    let selected: Vec<Section> = if only.is_empty() { Section::ALL.to_vec() } else { only.to_vec() };
    let mut sections = BTreeMap::new();
    for s in selected {
        let rep = match s {
            Section::Brackets => brackets(ctx, opts),
            Section::Covariance => covariance(ctx, opts)?,
            Section::Equivalence => equivalence(ctx, opts)?,
            Section::Reductions => reductions(ctx, opts)?,
        };
        sections.insert(s.name().to_string(), rep);
    }
    Ok(VerifyReport { passed: sections.values().all(|s| s.passed), sections })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suites_pass() {
        let opts = VerifyOptions { bracket_points: 20, functions: 3, points_per_function: 10, ..Default::default() };
        for m in [SurvivalModel::Exponential { kappa: 0.2 }, SurvivalModel::Weibull { lambda: 8.0, k: 1.7 }] {
            let r = run(&MarketParams::default(), &m, &opts, &[]).unwrap();
            for (name, s) in &r.sections {
                for c in &s.checks {
                    assert!(c.passed, "{name}: {c:?}");
                }
            }
            assert!(r.passed);
        }
    }

    #[test]
    fn only_filter_and_parse() {
        let opts = VerifyOptions { bracket_points: 5, ..Default::default() };
        let s: Section = "Brackets".parse().unwrap();
        let r = run(&MarketParams::default(), &SurvivalModel::default(), &opts, &[s]).unwrap();
        assert_eq!(r.sections.keys().collect::<Vec<_>>(), vec!["brackets"]);
        assert!("nope".parse::<Section>().is_err());
    }
}
