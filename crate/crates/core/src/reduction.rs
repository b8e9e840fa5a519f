//! Invariant reductions of the EXPn equation by the one- and two-dimensional
//! subalgebras of its symmetry algebra, with boundary-compatibility
//! classification.
//!
//! Generators are numbered `e₁ … e₄` as in [`crate::symmetry::l4_expn`]:
//! `e₁` the wealth scaling, `e₂ = ∂_V`, `e₃` the time generator and
//! `e₄ = e^{rt}∂_l`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ad::{Field, Lift};
use crate::error::{Error, Result};
use crate::hjb::{Residual, Strategy};
use crate::model::{aux_k, MarketParams, SurvivalModel};
use crate::symmetry::{l4_expn, Ctx, VectorField};

/// `+` or `−` in the cases with a sign parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// A reduction of the three-dimensional EXPn equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReductionCase {
    H2,
    H4Omega0,
    H4 { omega: f64 },
    H5 { sign: Sign },
    H7 { sign: Sign },
    H8,
    H12,
}

impl fmt::Display for ReductionCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReductionCase::H2 => write!(f, "H2"),
            ReductionCase::H4Omega0 => write!(f, "H4_omega0"),
            ReductionCase::H4 { omega } => write!(f, "H4(omega={omega})"),
            ReductionCase::H5 { sign } => write!(f, "H5{}", sign.symbol()),
            ReductionCase::H7 { sign } => write!(f, "H7{}", sign.symbol()),
            ReductionCase::H8 => write!(f, "H8"),
            ReductionCase::H12 => write!(f, "H12"),
        }
    }
}

impl ReductionCase {
    /// Parses `H2`, `H4`, `H4_omega0`, `H5+`, `H5-`, `H7+`, `H7-`, `H8`, `H12`
    /// (case-insensitive). `H4` takes `omega`; zero routes to `H4_omega0`.
    pub fn parse(id: &str, omega: f64) -> Result<Self> {
        let s = id.trim().to_ascii_uppercase();
        Ok(match s.as_str() {
            "H2" => ReductionCase::H2,
            "H4_OMEGA0" => ReductionCase::H4Omega0,
            "H4" if omega == 0.0 => ReductionCase::H4Omega0,
            "H4" => ReductionCase::H4 { omega },
            "H5+" => ReductionCase::H5 { sign: Sign::Plus },
            "H5-" | "H5" => ReductionCase::H5 { sign: Sign::Minus },
            "H7+" | "H7" => ReductionCase::H7 { sign: Sign::Plus },
            "H7-" => ReductionCase::H7 { sign: Sign::Minus },
            "H8" => ReductionCase::H8,
            "H12" => ReductionCase::H12,
            _ => return Err(Error::Config(format!("unknown reduction case `{id}`"))),
        })
    }

    /// Generators that annihilate this case's invariants.
    pub fn annihilators(&self, ctx: Ctx) -> Vec<VectorField> {
        let e = l4_expn(ctx).generators;
        let comb = |a: usize, b: usize, c: f64, label: &str| VectorField::combination(&[(1.0, &e[a]), (c, &e[b])], label);
        match *self {
            ReductionCase::H2 => vec![e[2].clone()],
            ReductionCase::H4Omega0 => vec![e[0].clone()],
            ReductionCase::H4 { omega } => vec![comb(0, 2, omega, "e1+w*e3")],
            ReductionCase::H5 { sign } => vec![comb(0, 3, sign.value(), "e1±e4")],
            ReductionCase::H7 { sign } => vec![comb(1, 2, sign.value(), "e2±e3")],
            ReductionCase::H8 | ReductionCase::H12 => vec![e[0].clone(), e[2].clone()],
        }
    }

    /// Invariant expressions as functions of `(l, h, t, V)`: the reduced
    /// independent variables followed by the reduced dependent variable.
    pub fn invariants<S: Lift>(&self, ctx: &Ctx, [l, h, t, v]: [S; 4]) -> Vec<S> {
        let p = &ctx.p;
        match *self {
            ReductionCase::H2 => vec![z_h2(ctx, l, t), h, v],
            ReductionCase::H4Omega0 => vec![h, t, v * (l * p.ar()).exp()],
            ReductionCase::H4 { omega } => vec![z_h4(ctx, omega, l, t), h, v * (t * (p.r / omega)).exp()],
            ReductionCase::H5 { sign } => {
                let k = S::cst(p.ar()) / ((t * p.r).exp() * (p.ar() * sign.value()) + 1.0);
                vec![h, t, v * (k * l).exp()]
            }
            ReductionCase::H7 { sign } => vec![z_h7(ctx, l, t), h, v - t * (p.r * sign.value())],
            ReductionCase::H8 => vec![h, v * (z_h2(ctx, l, t) * p.ar()).exp()],
            ReductionCase::H12 => vec![h, v * (z_h7(ctx, l, t) * p.ar()).exp()],
        }
    }

    /// `V` from the reduced dependent variable at `(l, h, t)`.
    pub fn value_from_invariant(&self, ctx: &Ctx, [l, _h, t]: [f64; 3], w: f64) -> Result<f64> {
        let p = &ctx.p;
        Ok(match *self {
            ReductionCase::H2 => w,
            ReductionCase::H4Omega0 => w * (-p.ar() * l).exp(),
            ReductionCase::H4 { omega } => w * (-p.r / omega * t).exp(),
            ReductionCase::H5 { sign } => {
                let d = 1.0 + sign.value() * p.ar() * (p.r * t).exp();
                if d == 0.0 {
                    return Err(Error::Singular(format!("1 ± a·r·e^(rt) vanishes at t = {t}")));
                }
                w * (-p.ar() / d * l).exp()
            }
            ReductionCase::H7 { sign } => w + sign.value() * p.r * t,
            ReductionCase::H8 => w * (-p.ar() * z_h2(ctx, l, t)).exp(),
            ReductionCase::H12 => w * (-p.ar() * z_h7(ctx, l, t)).exp(),
        })
    }

    /// Reduced dependent variable from `V` at `(l, h, t)`.
    pub fn value_to_invariant(&self, ctx: &Ctx, [l, h, t]: [f64; 3], v: f64) -> Result<f64> {
        if let ReductionCase::H5 { sign } = *self {
            if 1.0 + sign.value() * ctx.p.ar() * (ctx.p.r * t).exp() == 0.0 {
                return Err(Error::Singular(format!("1 ± a·r·e^(rt) vanishes at t = {t}")));
            }
        }
        Ok(*self.invariants(ctx, [l, h, t, v]).last().unwrap_or(&f64::NAN))
    }

    /// Recovers `l` from the reduced coordinate `z` at time `t`, for the cases
    /// that have one.
    pub fn l_from_z(&self, ctx: &Ctx, z: f64, t: f64) -> Option<f64> {
        let shift = match *self {
            ReductionCase::H2 => z_h2(ctx, 0.0, t),
            ReductionCase::H4 { omega } => z_h4(ctx, omega, 0.0, t),
            ReductionCase::H7 { .. } => z_h7(ctx, 0.0, t),
            _ => return None,
        };
        Some(z - shift)
    }

    /// Factor `M` in `Δ₃D[lifted] = M·Δ_reduced`.
    pub fn lift_multiplier(&self, ctx: &Ctx, [l, _h, t]: [f64; 3]) -> f64 {
        let p = &ctx.p;
        match *self {
            ReductionCase::H4 { omega } => (-p.r / omega * t).exp(),
            ReductionCase::H8 => (-p.ar() * z_h2(ctx, l, t)).exp(),
            ReductionCase::H12 => (-p.ar() * z_h7(ctx, l, t)).exp(),
            _ => 1.0,
        }
    }
}

/// `z = l + (I − ln Φ̄)/(ar) − (1 + ln a)/(ar)`.
pub fn z_h2<S: Lift>(ctx: &Ctx, l: S, t: S) -> S {
    z_h7(ctx, l, t) - (1.0 + ctx.p.a.ln()) / ctx.p.ar()
}

/// `z = l + (I − ln Φ̄)/(ar) − t/(aω)`.
pub fn z_h4<S: Lift>(ctx: &Ctx, omega: f64, l: S, t: S) -> S {
    z_h7(ctx, l, t) - t / (ctx.p.a * omega)
}

/// `z = l + (I − ln Φ̄)/(ar)`.
pub fn z_h7<S: Lift>(ctx: &Ctx, l: S, t: S) -> S {
    l + aux_k(&ctx.m, ctx.p.r, t) / ctx.p.a
}

/// Reduced coordinates `(z, h)` of the `e₃` reduction.
pub fn invariants_h2(p: &MarketParams, m: &SurvivalModel, l: f64, h: f64, t: f64) -> (f64, f64) {
    (z_h2(&Ctx::new(*p, *m), l, t), h)
}

/// Reduced coordinates `(z, h)` of the `e₁ + ωe₃` reduction; `V = W·e^{−(r/ω)t}`.
pub fn invariants_h4(p: &MarketParams, m: &SurvivalModel, omega: f64, l: f64, h: f64, t: f64) -> Result<(f64, f64)> {
    if omega == 0.0 {
        return Err(Error::Domain("omega = 0 is the separate H4_omega0 case".into()));
    }
    Ok((z_h4(&Ctx::new(*p, *m), omega, l, t), h))
}

/// Reduced coordinates `(z, h)` of the `e₂ ± e₃` reduction; `W = V ∓ rt`.
pub fn invariants_h7(p: &MarketParams, m: &SurvivalModel, l: f64, h: f64, t: f64) -> (f64, f64) {
    (z_h7(&Ctx::new(*p, *m), l, t), h)
}

/// Time beyond which `1 − a·r·e^{rt}` is negative in the `e₁ − e₄` case,
/// `t* = −ln(ar)/r`; `None` when `ar ≥ 1` (then it is negative for all `t > 0`).
pub fn h5_threshold(p: &MarketParams) -> Option<f64> {
    let t = -p.ar().ln() / p.r;
    (t > 0.0).then_some(t)
}

/// A second jet of `W(z, h)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReducedJet {
    pub z: f64,
    pub h: f64,
    pub w: f64,
    pub w_z: f64,
    pub w_h: f64,
    pub w_zz: f64,
    pub w_zh: f64,
    pub w_hh: f64,
}

impl ReducedJet {
    pub fn of<F: Field<2>>(f: &F, z: f64, h: f64) -> Self {
        let j = crate::ad::jet(f, [z, h]);
        ReducedJet {
            z,
            h,
            w: j.value,
            w_z: j.grad[0],
            w_h: j.grad[1],
            w_zz: j.hess[0][0],
            w_zh: j.hess[0][1],
            w_hh: j.hess[1][1],
        }
    }

    fn admissible(&self) -> Result<()> {
        if !(self.w_z > 0.0) {
            return Err(Error::LogDomain(format!("W_z = {} is not positive", self.w_z)));
        }
        if !(self.w_zz < 0.0) {
            return Err(Error::DegenerateHessian(format!("W_zz = {} is not negative", self.w_zz)));
        }
        Ok(())
    }
}

/// Terms common to the reduced equations.
fn reduced_terms(p: &MarketParams, j: &ReducedJet) -> Result<[f64; 5]> {
    j.admissible()?;
    let n = p.excess() * j.w_z + p.eta * p.rho * p.sigma * j.h * j.w_zh;
    Ok([
        0.5 * p.eta * p.eta * j.h * j.h * j.w_hh,
        (p.mu - p.delta) * j.h * j.w_h,
        (p.r * j.z + p.delta * j.h) * j.w_z,
        j.w_z * j.w_z.ln() / p.a,
        -n * n / (2.0 * p.sigma * p.sigma * j.w_zz),
    ])
}

/// Reduced equation of the `e₃` case.
pub fn reduced_residual_h2(p: &MarketParams, j: &ReducedJet) -> Result<Residual> {
    Ok(Residual::from_terms(&reduced_terms(p, j)?))
}

/// Reduced equation of the `e₁ + ωe₃` case.
pub fn reduced_residual_h4(p: &MarketParams, omega: f64, j: &ReducedJet) -> Result<Residual> {
    if omega == 0.0 {
        return Err(Error::Domain("omega must be nonzero".into()));
    }
    let t = reduced_terms(p, j)?;
    let c = 1.0 / omega + 1.0 + p.a.ln();
    Ok(Residual::from_terms(&[t[0], t[1], t[2], t[3], t[4], -c / p.a * j.w_z, -p.r / omega * j.w]))
}

/// Reduced equation of the `e₂ ± e₃` case.
pub fn reduced_residual_h7(p: &MarketParams, sign: Sign, j: &ReducedJet) -> Result<Residual> {
    let t = reduced_terms(p, j)?;
    let c = 1.0 + p.a.ln();
    Ok(Residual::from_terms(&[t[0], t[1], t[2], t[3], t[4], -c / p.a * j.w_z, sign.value() * p.r]))
}

/// Second jet of a profile `v(h)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OdeJet {
    pub h: f64,
    pub v: f64,
    pub v_h: f64,
    pub v_hh: f64,
}

impl OdeJet {
    pub fn of<F: Field<1>>(f: &F, h: f64) -> Self {
        let j = crate::ad::jet(f, [h]);
        OdeJet { h, v: j.value, v_h: j.grad[0], v_hh: j.hess[0][0] }
    }
}

fn ode_terms(p: &MarketParams, j: &OdeJet) -> Result<[f64; 6]> {
    if !(j.v < 0.0) {
        return Err(Error::LogDomain(format!(
            "ln(-a r v) is complex-valued if the function v is positive (v = {})",
            j.v
        )));
    }
    let (e2, h) = (p.eta * p.eta, j.h);
    let x = p.excess();
    Ok([
        0.5 * e2 * h * h * j.v_hh,
        -0.5 * e2 * p.rho * p.rho * h * h * j.v_h * j.v_h / j.v,
        (p.mu - p.delta - x * p.eta * p.rho / p.sigma) * h * j.v_h,
        -p.ar() * p.delta * h * j.v,
        -x * x / (2.0 * p.sigma * p.sigma) * j.v,
        -p.r * j.v * (-p.ar() * j.v).ln(),
    ])
}

/// ODE for `v(h)` under `V = v(h)·e^{−ar·z}` with the `e₃`-invariant `z`.
pub fn ode_residual_h8(p: &MarketParams, j: &OdeJet) -> Result<Residual> {
    Ok(Residual::from_terms(&ode_terms(p, j)?))
}

/// ODE for `v(h)` under `V = v(h)·e^{−arl − I + ln Φ̄}`.
pub fn ode_residual_h12(p: &MarketParams, j: &OdeJet) -> Result<Residual> {
    let t = ode_terms(p, j)?;
    let extra = p.r * (1.0 + p.a.ln()) * j.v;
    Ok(Residual::from_terms(&[t[0], t[1], t[2], t[3], t[4], t[5], extra]))
}

/// Optimal strategy expressed through the reduced `W` of the admissible case:
/// `π = −(ηρσh·W_zh + (α−r)W_z)/(σ²W_zz)`,
/// `c = (1/a)·ln(aΦ̄(t)/W_z) + rt/(aω)`.
pub fn invariant_strategy_h4(p: &MarketParams, m: &SurvivalModel, omega: f64, j: &ReducedJet, t: f64) -> Result<Strategy> {
    j.admissible()?;
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("omega must be positive, got {omega}")));
    }
    let pi = -(p.eta * p.rho * p.sigma * j.h * j.w_zh + p.excess() * j.w_z) / (p.sigma * p.sigma * j.w_zz);
    let c = (p.a.ln() + m.ln_survival(t) - j.w_z.ln()) / p.a + p.r * t / (p.a * omega);
    Ok(Strategy { pi, c, negative_consumption: c < 0.0 })
}

/// A reduced surface `W(z, h)` lifted to `V(l, h, t)` through a case's maps.
#[derive(Clone, Copy, Debug)]
pub struct LiftedSurface<'a, F> {
    pub case: ReductionCase,
    pub ctx: Ctx,
    pub w: &'a F,
}

impl<F: Field<2>> Field<3> for LiftedSurface<'_, F> {
    fn eval<S: Lift>(&self, [l, h, t]: [S; 3]) -> S {
        let p = &self.ctx.p;
        match self.case {
            ReductionCase::H2 => self.w.eval([z_h2(&self.ctx, l, t), h]),
            ReductionCase::H4 { omega } => {
                self.w.eval([z_h4(&self.ctx, omega, l, t), h]) * (t * (-p.r / omega)).exp()
            }
            ReductionCase::H7 { sign } => self.w.eval([z_h7(&self.ctx, l, t), h]) + t * (sign.value() * p.r),
            other => panic!("{other} has no (z, h) surface"),
        }
    }
}

/// A profile `v(h)` lifted to `V(l, h, t)` for the ODE cases.
#[derive(Clone, Copy, Debug)]
pub struct LiftedProfile<'a, F> {
    pub case: ReductionCase,
    pub ctx: Ctx,
    pub v: &'a F,
}

impl<F: Field<1>> Field<3> for LiftedProfile<'_, F> {
    fn eval<S: Lift>(&self, [l, h, t]: [S; 3]) -> S {
        let z = match self.case {
            ReductionCase::H8 => z_h2(&self.ctx, l, t),
            ReductionCase::H12 => z_h7(&self.ctx, l, t),
            other => panic!("{other} has no profile ODE"),
        };
        self.v.eval([h]) * (z * -self.ctx.p.ar()).exp()
    }
}

/// Reduced coordinates for the surface cases.
pub fn surface_coords(case: ReductionCase, ctx: &Ctx, l: f64, t: f64) -> Option<f64> {
    match case {
        ReductionCase::H2 => Some(z_h2(ctx, l, t)),
        ReductionCase::H4 { omega } => Some(z_h4(ctx, omega, l, t)),
        ReductionCase::H7 { .. } => Some(z_h7(ctx, l, t)),
        _ => None,
    }
}

/// Residual of the reduced equation of `case` for a surface jet.
pub fn reduced_surface_residual(case: ReductionCase, p: &MarketParams, j: &ReducedJet) -> Result<Residual> {
    match case {
        ReductionCase::H2 => reduced_residual_h2(p, j),
        ReductionCase::H4 { omega } => reduced_residual_h4(p, omega, j),
        ReductionCase::H7 { sign } => reduced_residual_h7(p, sign, j),
        other => Err(Error::Domain(format!("{other} does not reduce to a surface equation"))),
    }
}

/// Why a case does not yield an admissible reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    /// `z` mixes `l` and `t` so that decay in `t` and growth in `l` conflict.
    VariableMixing,
    /// The value map forces `V` to decrease in `l`.
    Monotonicity,
    /// The value map forces exponential growth in `l`.
    GrowthBound,
    /// The reduced equation is incompatible with `V → 0` as `t → ∞`.
    BoundaryConflict,
    /// The profile must be negative, which contradicts the value function's sign.
    SignDomain,
    /// The profile equation leaves the real domain.
    ComplexValued,
}

impl RejectionReason {
    pub fn describe(self) -> &'static str {
        match self {
            RejectionReason::VariableMixing => {
                "z grows with both l and t, so decay as t -> infinity contradicts strict increase in l"
            }
            RejectionReason::Monotonicity => "V = W(h,t)e^(-arl) is decreasing in l",
            RejectionReason::GrowthBound => {
                "V grows exponentially in l beyond t* = -ln(ar)/r, violating the growth bound"
            }
            RejectionReason::BoundaryConflict => {
                "the reduced equation carries a constant source that is incompatible with V -> 0 as t -> infinity"
            }
            RejectionReason::SignDomain => {
                "the ODE needs v < 0 for ln(-arv), inconsistent with the properties of the value function"
            }
            RejectionReason::ComplexValued => "ln(-arv) is complex-valued if the function v(h) > 0",
        }
    }
}

/// Classification verdict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum Admissibility {
    Admissible,
    Rejected(RejectionReason),
    NoInterestingReduction,
    OutOfScope,
}

/// One row of the reduction catalog.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub subalgebra: String,
    pub dimension: usize,
    pub admissibility: Admissibility,
    pub reason: String,
}

/// The full classification of the optimal system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CatalogReport {
    pub omega: f64,
    pub h5_threshold: Option<f64>,
    pub entries: Vec<CaseEntry>,
    pub unique_admissible: Option<String>,
}

impl CatalogReport {
    pub fn entry(&self, id: &str) -> Option<&CaseEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Verdict for a single case.
pub fn classify(case: ReductionCase) -> Admissibility {
    match case {
        ReductionCase::H2 => Admissibility::Rejected(RejectionReason::VariableMixing),
        ReductionCase::H4Omega0 => Admissibility::Rejected(RejectionReason::Monotonicity),
        ReductionCase::H4 { omega } if omega > 0.0 => Admissibility::Admissible,
        ReductionCase::H4 { .. } => Admissibility::Rejected(RejectionReason::BoundaryConflict),
        ReductionCase::H5 { .. } => Admissibility::Rejected(RejectionReason::GrowthBound),
        ReductionCase::H7 { .. } => Admissibility::Rejected(RejectionReason::BoundaryConflict),
        ReductionCase::H8 => Admissibility::Rejected(RejectionReason::SignDomain),
        ReductionCase::H12 => Admissibility::Rejected(RejectionReason::ComplexValued),
    }
}

/// Classifies every subalgebra of the optimal system; `omega` defaults to
/// [`SurvivalModel::default_omega`].
pub fn classify_all(p: &MarketParams, m: &SurvivalModel, omega: Option<f64>) -> CatalogReport {
    let omega = omega.unwrap_or_else(|| m.default_omega(p));
    let mut entries = Vec::new();
    let mut push = |id: &str, sub: &str, dim: usize, adm: Admissibility, reason: &str| {
        let reason = match adm {
            Admissibility::Rejected(r) => r.describe().to_string(),
            _ => reason.to_string(),
        };
        entries.push(CaseEntry { id: id.into(), subalgebra: sub.into(), dimension: dim, admissibility: adm, reason });
    };
    let none = Admissibility::NoInterestingReduction;
    let out = Admissibility::OutOfScope;
    let trivial = "translation-type subalgebra; the reduction carries no new information";
    let skipped = "does not give a meaningful reduction";
    push("H1", "<e2>", 1, none, trivial);
    push("H2", "<e3>", 1, classify(ReductionCase::H2), "");
    push("H3", "<e4>", 1, none, trivial);
    let h4 = if omega == 0.0 { ReductionCase::H4Omega0 } else { ReductionCase::H4 { omega } };
    let h4_reason = if omega > 0.0 { "compatible with V -> 0 as t -> infinity and increasing in l" } else { "" };
    push("H4", "<e1 + omega e3>", 1, classify(h4), h4_reason);
    if omega != 0.0 {
        push("H4_omega0", "<e1>", 1, classify(ReductionCase::H4Omega0), "");
    }
    push("H5", "<e1 ± e4>", 1, classify(ReductionCase::H5 { sign: Sign::Minus }), "");
    push("H6", "<e2 ± e4>", 1, none, trivial);
    push("H7", "<e2 ± e3>", 1, classify(ReductionCase::H7 { sign: Sign::Plus }), "");
    push("H8", "<e1, e3>", 2, classify(ReductionCase::H8), "");
    for (id, sub) in [("H9", "<e1, e4>"), ("H10", "<e2, e3>"), ("H11", "<e2, e4>")] {
        push(id, sub, 2, out, skipped);
    }
    push("H12", "<e1 + omega e3, e2>", 2, classify(ReductionCase::H12), "");
    for (id, sub) in [
        ("H13", "<e3 + omega e1, e4>"),
        ("H14", "<e1 ± e4, e2>"),
        ("H15", "<e3 ± e2, e4>"),
        ("H16", "<e1 + e3, e2 ± e4>"),
    ] {
        push(id, sub, 2, out, skipped);
    }
    for (id, sub) in [
        ("H17", "<e1, e3, e2>"),
        ("H18", "<e1, e4, e2>"),
        ("H19", "<e1, e3, e4>"),
        ("H20", "<e2, e3, e4>"),
        ("H21", "<e1 ± e3, e2, e4>"),
        ("H22", "<e1 + omega e3, e2, e4>"),
    ] {
        push(id, sub, 3, out, skipped);
    }
    let admissible: Vec<&CaseEntry> = entries.iter().filter(|e| e.admissibility == Admissibility::Admissible).collect();
    let unique_admissible = (admissible.len() == 1).then(|| admissible[0].id.clone());
    CatalogReport { omega, h5_threshold: h5_threshold(p), entries, unique_admissible }
}

/// Largest `|X(invariant)|`, relative to the invariant's gradient size, over
/// all annihilating generators of `case` at `points` in `(l, h, t, V)`.
pub fn annihilation_defect(case: ReductionCase, ctx: Ctx, points: &[[f64; 4]]) -> f64 {
    let gens = case.annihilators(ctx);
    let mut worst: f64 = 0.0;
    for &x in points {
        for g in &gens {
            let xi = g.eval(x);
            let n = case.invariants(&ctx, x).len();
            for k in 0..n {
                let mut dx = [0.0; 4];
                let mut grad = [0.0; 4];
                for i in 0..4 {
                    let pt: [crate::ad::D1; 4] =
                        std::array::from_fn(|j| crate::ad::Dual::new(x[j], if i == j { 1.0 } else { 0.0 }));
                    grad[i] = case.invariants(&ctx, pt)[k].eps;
                    dx[i] = grad[i] * xi[i];
                }
                let scale = (0..4).map(|i| (grad[i] * xi[i]).abs()).sum::<f64>().max(1.0);
                worst = worst.max(dx.iter().sum::<f64>().abs() / scale);
            }
        }
    }
    worst
}

/// Outcome of a lifted-residual identity check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftReport {
    pub case: String,
    /// Largest `|Δ₃D − M·Δ_red|` relative to the term scale.
    pub max_rel_dev: f64,
    pub points: usize,
}

/// Checks `Δ₃D[lift W](x) = M(x)·Δ_red[W](invariants(x))` for a surface case.
pub fn check_surface_lift<F: Field<2>>(case: ReductionCase, ctx: Ctx, w: &F, points: &[[f64; 3]]) -> Result<LiftReport> {
    let lifted = LiftedSurface { case, ctx, w };
    let mut worst: f64 = 0.0;
    for &x in points {
        let j3 = crate::hjb::testfn::jet_point(&lifted, x[0], x[1], x[2]);
        let big = crate::hjb::Pde::EXPn.evaluate(&ctx.p, &ctx.m, &j3)?;
        let z = surface_coords(case, &ctx, x[0], x[2]).unwrap_or(f64::NAN);
        let red = reduced_surface_residual(case, &ctx.p, &ReducedJet::of(w, z, x[1]))?;
        let mlt = case.lift_multiplier(&ctx, x);
        let scaled = Residual { value: mlt * red.value, scale: mlt.abs() * red.scale };
        worst = worst.max(big.rel_diff(&scaled));
    }
    Ok(LiftReport { case: case.to_string(), max_rel_dev: worst, points: points.len() })
}

/// Checks `Δ₃D[lift v](x) = M(x)·ODE[v](h)` for a profile case.
pub fn check_profile_lift<F: Field<1>>(case: ReductionCase, ctx: Ctx, v: &F, points: &[[f64; 3]]) -> Result<LiftReport> {
    let lifted = LiftedProfile { case, ctx, v };
    let mut worst: f64 = 0.0;
    for &x in points {
        let j3 = crate::hjb::testfn::jet_point(&lifted, x[0], x[1], x[2]);
        let big = crate::hjb::Pde::EXPn.evaluate(&ctx.p, &ctx.m, &j3)?;
        let oj = OdeJet::of(v, x[1]);
        let red = match case {
            ReductionCase::H8 => ode_residual_h8(&ctx.p, &oj)?,
            ReductionCase::H12 => ode_residual_h12(&ctx.p, &oj)?,
            other => return Err(Error::Domain(format!("{other} has no profile ODE"))),
        };
        let mlt = case.lift_multiplier(&ctx, x);
        let scaled = Residual { value: mlt * red.value, scale: mlt.abs() * red.scale };
        worst = worst.max(big.rel_diff(&scaled));
    }
    Ok(LiftReport { case: case.to_string(), max_rel_dev: worst, points: points.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_exp(a: f64, r: f64, kappa: f64) -> Ctx {
        let p = MarketParams { a, r, alpha: r + 0.05, ..MarketParams::default() };
        Ctx::new(p, SurvivalModel::Exponential { kappa })
    }

    #[test]
    fn h2_examples() {
        let c = ctx_exp(1.0, 0.5, 0.5);
        for (l, t) in [(0.3, 0.0), (1.0, 2.0), (-2.0, 7.5)] {
            let (z, _) = invariants_h2(&c.p, &c.m, l, 1.0, t);
            assert!((z - (l + t)).abs() < 1e-13, "{z}");
        }
        let c = ctx_exp(2.0, 0.1, 0.3);
        let (a, r, k) = (2.0f64, 0.1, 0.3);
        let (z, _) = invariants_h2(&c.p, &c.m, 0.4, 1.0, 3.0);
        let closed = 0.4 + k / (a * r) * 3.0 + (k / r - 1.0 - a.ln()) / (a * r);
        assert!((z - closed).abs() < 1e-12);
    }

    #[test]
    fn h4_examples() {
        let c = ctx_exp(2.0, 0.1, 0.3);
        let (a, r, k, w) = (2.0f64, 0.1, 0.3, 0.7);
        let (z, _) = invariants_h4(&c.p, &c.m, w, 0.4, 1.0, 3.0).unwrap();
        let closed = 0.4 + (k * w - r) / (a * r * w) * 3.0 + k / (a * r * r);
        assert!((z - closed).abs() < 1e-12);
        let (z, _) = invariants_h4(&c.p, &c.m, r / k, 0.4, 1.0, 9.0).unwrap();
        assert!((z - (0.4 + k / (a * r * r))).abs() < 1e-12);
        assert!(invariants_h4(&c.p, &c.m, 0.0, 0.4, 1.0, 9.0).is_err());
    }

    #[test]
    fn h4_weibull_closed_form() {
        let p = MarketParams::default();
        let (lam, k, w) = (6.0f64, 1.8, 0.9);
        let m = SurvivalModel::Weibull { lambda: lam, k };
        let (l, t) = (0.2, 4.0);
        let (z, _) = invariants_h4(&p, &m, w, l, 1.0, t).unwrap();
        let g = crate::model::scaled_upper_gamma(k, p.r * t).unwrap();
        let closed = l + k / (p.a * p.r.powf(k + 1.0) * lam.powf(k)) * g + t.powf(k) / (p.ar() * lam.powf(k)) - t / (p.a * w);
        assert!((z - closed).abs() < 1e-11 * closed.abs().max(1.0));
    }

    #[test]
    fn h5_singularity() {
        let p = MarketParams { a: 4.0, r: 0.05, ..MarketParams::default() };
        let c = Ctx::new(p, SurvivalModel::default());
        let ts = h5_threshold(&p).unwrap();
        let case = ReductionCase::H5 { sign: Sign::Minus };
        // Evaluate exactly where the denominator vanishes in floating point.
        let d = 1.0 - p.ar() * (p.r * ts).exp();
        if d == 0.0 {
            assert!(matches!(case.value_from_invariant(&c, [0.0, 1.0, ts], 1.0), Err(Error::Singular(_))));
        }
        assert!(ts > 0.0);
        // Beyond the threshold the minus sign makes V increase exponentially in l.
        let t = ts + 1.0;
        let v1 = case.value_from_invariant(&c, [0.0, 1.0, t], 1.0).unwrap();
        let v2 = case.value_from_invariant(&c, [1.0, 1.0, t], 1.0).unwrap();
        assert!(v2 > v1);
    }

    #[test]
    fn h4_omega0_value_map() {
        let c = ctx_exp(1.0, 0.05, 0.2);
        let case = ReductionCase::H4Omega0;
        assert_eq!(case.value_from_invariant(&c, [0.0, 1.0, 2.0], 3.0).unwrap(), 3.0);
        assert_eq!(classify(case), Admissibility::Rejected(RejectionReason::Monotonicity));
    }

    #[test]
    fn ode_sign_domain() {
        let p = MarketParams::default();
        let j = OdeJet { h: 1.0, v: 0.5, v_h: 0.1, v_hh: 0.0 };
        assert!(matches!(ode_residual_h12(&p, &j), Err(Error::LogDomain(_))));
        let j = OdeJet { h: 1.3, v: -0.5, v_h: 0.1, v_hh: 0.2 };
        let d = ode_residual_h12(&p, &j).unwrap().value - ode_residual_h8(&p, &j).unwrap().value;
        assert!((d - p.r * (1.0 + p.a.ln()) * j.v).abs() < 1e-15);
    }

    #[test]
    fn catalog_has_unique_admissible_case() {
        let r = classify_all(&MarketParams::default(), &SurvivalModel::default(), None);
        assert_eq!(r.unique_admissible.as_deref(), Some("H4"));
        assert_eq!(r.entry("H1").unwrap().admissibility, Admissibility::NoInterestingReduction);
        assert_eq!(r.entry("H17").unwrap().admissibility, Admissibility::OutOfScope);
        assert!(r.entry("H12").unwrap().reason.contains("complex-valued if the function"));
    }

    #[test]
    fn parse_ids() {
        assert_eq!(ReductionCase::parse("h12", 1.0).unwrap(), ReductionCase::H12);
        assert_eq!(ReductionCase::parse("H4", 0.0).unwrap(), ReductionCase::H4Omega0);
        assert_eq!(ReductionCase::parse("H4", 2.0).unwrap(), ReductionCase::H4 { omega: 2.0 });
        assert!(ReductionCase::parse("H3", 1.0).is_err());
    }
}

#[cfg(test)]
mod lift_tests {
    use super::*;
    use crate::hjb::testfn::{random_point, NegativeProfile, ReducedExpPoly};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctxs() -> Vec<Ctx> {
        let p = MarketParams::default();
        vec![
            Ctx::new(p, SurvivalModel::Exponential { kappa: 0.2 }),
            Ctx::new(MarketParams { a: 2.5, ..p }, SurvivalModel::Weibull { lambda: 8.0, k: 1.6 }),
        ]
    }

    #[test]
    fn surface_lifts_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for ctx in ctxs() {
            for case in [
                ReductionCase::H2,
                ReductionCase::H4 { omega: 0.8 },
                ReductionCase::H4 { omega: -1.3 },
                ReductionCase::H7 { sign: Sign::Plus },
                ReductionCase::H7 { sign: Sign::Minus },
            ] {
                for _ in 0..5 {
                    let w = ReducedExpPoly::random(&mut rng);
                    let pts: Vec<[f64; 3]> = (0..10).map(|_| random_point(&mut rng)).collect();
                    let rep = check_surface_lift(case, ctx, &w, &pts).unwrap();
                    assert!(rep.max_rel_dev < 1e-10, "{case}: {}", rep.max_rel_dev);
                }
            }
        }
    }

    #[test]
    fn profile_lifts_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for ctx in ctxs() {
            for case in [ReductionCase::H8, ReductionCase::H12] {
                let v = NegativeProfile::random(&mut rng);
                let pts: Vec<[f64; 3]> = (0..10).map(|_| random_point(&mut rng)).collect();
                let rep = check_profile_lift(case, ctx, &v, &pts).unwrap();
                assert!(rep.max_rel_dev < 1e-10, "{case}: {}", rep.max_rel_dev);
            }
        }
    }

    #[test]
    fn invariants_are_annihilated() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for ctx in ctxs() {
            let pts: Vec<[f64; 4]> = (0..20)
                .map(|_| {
                    let [l, h, t] = random_point(&mut rng);
                    [l, h, t, rng.random_range(-2.0..-0.1)]
                })
                .collect();
            for case in [
                ReductionCase::H2,
                ReductionCase::H4Omega0,
                ReductionCase::H4 { omega: 0.8 },
                ReductionCase::H5 { sign: Sign::Plus },
                ReductionCase::H5 { sign: Sign::Minus },
                ReductionCase::H7 { sign: Sign::Plus },
                ReductionCase::H7 { sign: Sign::Minus },
                ReductionCase::H8,
                ReductionCase::H12,
            ] {
                let d = annihilation_defect(case, ctx, &pts);
                assert!(d < 1e-12, "{case}: {d}");
            }
        }
    }

    #[test]
    fn value_maps_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ctx = ctxs()[1];
        for case in [
            ReductionCase::H2,
            ReductionCase::H4Omega0,
            ReductionCase::H4 { omega: 0.8 },
            ReductionCase::H5 { sign: Sign::Plus },
            ReductionCase::H7 { sign: Sign::Minus },
            ReductionCase::H8,
            ReductionCase::H12,
        ] {
            let x = random_point(&mut rng);
            let v = -0.7;
            let w = case.value_to_invariant(&ctx, x, v).unwrap();
            let back = case.value_from_invariant(&ctx, x, w).unwrap();
            assert!((back - v).abs() < 1e-13, "{case}");
            if let Some(z) = surface_coords(case, &ctx, x[0], x[2]) {
                assert!((case.l_from_z(&ctx, z, x[2]).unwrap() - x[0]).abs() < 1e-12);
            }
        }
    }
}
