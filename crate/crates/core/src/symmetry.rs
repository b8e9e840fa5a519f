//! Lie point symmetries of the maximized HJB equations as executable vector
//! fields on `(l, h, t, V)`, with brackets, closed-form flows and the
//! equivalence maps between the utility families.

use serde::{Deserialize, Serialize};

use crate::ad::{jet, Field, Lift};
use crate::error::{Error, Result};
use crate::hjb::testfn::jet_point;
use crate::hjb::Pde;
use crate::model::{aux_i, aux_k, MarketParams, SurvivalModel};

/// Market and survival data that generator coefficients depend on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ctx {
    pub p: MarketParams,
    pub m: SurvivalModel,
}

impl Ctx {
    pub fn new(p: MarketParams, m: SurvivalModel) -> Self {
        Ctx { p, m }
    }
}

/// The elementary generators appearing in the catalogs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Atom {
    /// `∂_V`.
    ValueShift,
    /// `e^{rt}∂_l`.
    DiscountedShift,
    /// `(1/(ar))∂_l − V∂_V`.
    ExpnScaling,
    /// `−(I(t)/(ar))∂_l + (1/r)∂_t`.
    ExpnTime,
    /// `(1/(ar))∂_l − (V + F(t)/a)∂_V`.
    ExppScaling,
    /// `−(I(t)/(ar))∂_l + (1/r)∂_t − (Φ̄(t)/(ar))∂_V`.
    ExppTime,
    /// `(l + shift)∂_l + h∂_h + γV∂_V`.
    HaraScaling { gamma: f64, shift: f64 },
    /// `∂_t − κV∂_V`.
    HaraExpTime { kappa: f64 },
    /// `l∂_l + h∂_h + (γV − (1−γ)F(t))∂_V`.
    Hara1Scaling { gamma: f64 },
}

impl Atom {
    fn coeffs<S: Lift>(&self, ctx: &Ctx, [l, h, t, v]: [S; 4]) -> [S; 4] {
        let z = S::cst(0.0);
        let p = &ctx.p;
        let ar = p.ar();
        match *self {
            Atom::ValueShift => [z, z, z, S::cst(1.0)],
            Atom::DiscountedShift => [(t * p.r).exp(), z, z, z],
            Atom::ExpnScaling => [S::cst(1.0 / ar), z, z, -v],
            Atom::ExpnTime => [-(aux_i(&ctx.m, p.r, t) / ar), z, S::cst(1.0 / p.r), z],
            Atom::ExppScaling => [S::cst(1.0 / ar), z, z, -(v + ctx.m.survival_integral(t) / p.a)],
            Atom::ExppTime => [
                -(aux_i(&ctx.m, p.r, t) / ar),
                z,
                S::cst(1.0 / p.r),
                -(ctx.m.survival_s(t) / ar),
            ],
            Atom::HaraScaling { gamma, shift } => [l + shift, h, z, v * gamma],
            Atom::HaraExpTime { kappa } => [z, z, S::cst(1.0), v * -kappa],
            Atom::Hara1Scaling { gamma } => {
                [l, h, z, v * gamma - ctx.m.survival_integral(t) * (1.0 - gamma)]
            }
        }
    }
}

/// A point transformation between two of the equations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PointMap {
    /// `(l, V) ↦ (l + ln a/(ar), V + F(t)/a)`, EXPp coordinates to EXPn.
    ExppToExpn,
    /// `(l, V) ↦ (l − (1−γ)/(ar), V − ((1−γ)/γ)F(t))`, HARA1 coordinates to HARA2.
    Hara1ToHara2 { gamma: f64 },
}

impl PointMap {
    fn shifts<S: Lift>(&self, ctx: &Ctx, t: S) -> (f64, S) {
        let p = &ctx.p;
        match *self {
            PointMap::ExppToExpn => (p.a.ln() / p.ar(), ctx.m.survival_integral(t) / p.a),
            PointMap::Hara1ToHara2 { gamma } => {
                (-(1.0 - gamma) / p.ar(), ctx.m.survival_integral(t) * (-(1.0 - gamma) / gamma))
            }
        }
    }

    pub fn forward<S: Lift>(&self, ctx: &Ctx, [l, h, t, v]: [S; 4]) -> [S; 4] {
        let (dl, dv) = self.shifts(ctx, t);
        [l + dl, h, t, v + dv]
    }

    pub fn inverse<S: Lift>(&self, ctx: &Ctx, [l, h, t, v]: [S; 4]) -> [S; 4] {
        let (dl, dv) = self.shifts(ctx, t);
        [l - dl, h, t, v - dv]
    }

    /// The equations on either side of the map, `(source, target)`.
    pub fn equations(&self) -> (Pde, Pde) {
        match *self {
            PointMap::ExppToExpn => (Pde::EXPp, Pde::EXPn),
            PointMap::Hara1ToHara2 { gamma } => (Pde::HARA1 { gamma }, Pde::HARA2 { gamma }),
        }
    }
}

/// Maps an EXPp point `(l, h, t, V)` to EXPn coordinates.
pub fn map_expp_to_expn(p: &MarketParams, m: &SurvivalModel, x: [f64; 4]) -> [f64; 4] {
    PointMap::ExppToExpn.forward(&Ctx::new(*p, *m), x)
}

/// Maps a HARA1 point `(l, h, t, V)` to HARA2 coordinates.
pub fn map_hara1_to_hara2(p: &MarketParams, m: &SurvivalModel, gamma: f64, x: [f64; 4]) -> [f64; 4] {
    PointMap::Hara1ToHara2 { gamma }.forward(&Ctx::new(*p, *m), x)
}

/// A target-side function pulled back to the source side of a [`PointMap`]:
/// `V_src(x) = T_V⁻¹(x, f(T_x(x)))`.
#[derive(Clone, Copy, Debug)]
pub struct PulledBack<'a, F> {
    pub map: PointMap,
    pub ctx: Ctx,
    pub f: &'a F,
}

impl<F: Field<3>> Field<3> for PulledBack<'_, F> {
    fn eval<S: Lift>(&self, [l, h, t]: [S; 3]) -> S {
        let (dl, dv) = self.map.shifts(&self.ctx, t);
        self.f.eval([l + dl, h, t]) - dv
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Atom(Atom),
    Sum(Vec<(f64, VectorField)>),
    Bracket(Box<VectorField>, Box<VectorField>),
    Pushforward(PointMap, Box<VectorField>),
}

/// A vector field `ξ₁∂_l + ξ₂∂_h + ξ₃∂_t + η₁∂_V` on `(l, h, t, V)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub label: String,
    ctx: Ctx,
    node: Node,
}

impl VectorField {
    pub fn atom(ctx: Ctx, atom: Atom, label: impl Into<String>) -> Self {
        VectorField { label: label.into(), ctx, node: Node::Atom(atom) }
    }

    /// `Σ cᵢ Xᵢ`.
    pub fn combination(terms: &[(f64, &VectorField)], label: impl Into<String>) -> Self {
        let ctx = terms.first().map(|t| t.1.ctx).unwrap_or_default();
        let terms = terms.iter().map(|(c, x)| (*c, (*x).clone())).collect();
        VectorField { label: label.into(), ctx, node: Node::Sum(terms) }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::combination(&[(c, self)], format!("{c}·{}", self.label))
    }

    pub fn as_atom(&self) -> Option<Atom> {
        match self.node {
            Node::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn ctx(&self) -> &Ctx {
        &self.ctx
    }

    /// Coefficients `(ξ₁, ξ₂, ξ₃, η₁)` at `x = (l, h, t, V)`.
    pub fn coeffs<S: Lift>(&self, x: [S; 4]) -> [S; 4] {
        match &self.node {
            Node::Atom(a) => a.coeffs(&self.ctx, x),
            Node::Sum(terms) => {
                let mut out = [S::cst(0.0); 4];
                for (c, f) in terms {
                    let y = f.coeffs(x);
                    for i in 0..4 {
                        out[i] = out[i] + y[i] * *c;
                    }
                }
                out
            }
            Node::Bracket(a, b) => {
                let xa = a.coeffs(x);
                let xb = b.coeffs(x);
                let a_of_b = directional(b, x, xa);
                let b_of_a = directional(a, x, xb);
                std::array::from_fn(|i| a_of_b[i] - b_of_a[i])
            }
            Node::Pushforward(map, f) => {
                let src = map.inverse(&self.ctx, x);
                let xi = f.coeffs(src);
                let lifted: [S::Up; 4] = std::array::from_fn(|i| S::up(src[i], xi[i]));
                let img = map.forward(&self.ctx, lifted);
                img.map(|c| S::down(c).1)
            }
        }
    }

    /// Coefficients at a plain point.
    pub fn eval(&self, x: [f64; 4]) -> [f64; 4] {
        self.coeffs(x)
    }
}

/// `D(f)·d`, the derivative of `f`'s coefficients at `x` along `d`.
fn directional<S: Lift>(f: &VectorField, x: [S; 4], d: [S; 4]) -> [S; 4] {
    let lifted: [S::Up; 4] = std::array::from_fn(|i| S::up(x[i], d[i]));
    f.coeffs(lifted).map(|c| S::down(c).1)
}

/// `[X, Y]` with coefficients `X(Yᵢ) − Y(Xᵢ)`.
pub fn bracket(x: &VectorField, y: &VectorField) -> VectorField {
    VectorField {
        label: format!("[{},{}]", x.label, y.label),
        ctx: x.ctx,
        node: Node::Bracket(Box::new(x.clone()), Box::new(y.clone())),
    }
}

/// The pushforward of `x` under `map`.
pub fn pushforward(map: PointMap, x: &VectorField) -> VectorField {
    VectorField {
        label: format!("T*{}", x.label),
        ctx: x.ctx,
        node: Node::Pushforward(map, Box::new(x.clone())),
    }
}

/// Maximum coefficient deviation `|Xᵢ − Yᵢ|/max(1, |Yᵢ|)` over `points`.
pub fn max_deviation(x: &VectorField, y: &VectorField, points: &[[f64; 4]]) -> f64 {
    points
        .iter()
        .flat_map(|&p| {
            let (a, b) = (x.eval(p), y.eval(p));
            (0..4).map(move |i| (a[i] - b[i]).abs() / b[i].abs().max(1.0))
        })
        .fold(0.0, f64::max)
}

/// Largest coefficient magnitude over `points`.
pub fn max_magnitude(x: &VectorField, points: &[[f64; 4]]) -> f64 {
    points.iter().flat_map(|&p| x.eval(p)).map(f64::abs).fold(0.0, f64::max)
}

struct Component<'a>(&'a VectorField, usize);

impl Field<4> for Component<'_> {
    fn eval<S: Lift>(&self, x: [S; 4]) -> S {
        self.0.coeffs(x)[self.1]
    }
}

/// Checks the structural form required of point symmetries of these
/// equations: `ξ₁` linear in `l` and free of `V`, `ξ₂` independent of
/// `(l, V)`, `ξ₃` a function of `t` only, `η₁` affine in `V`.
pub fn structural_check(x: &VectorField, points: &[[f64; 4]], tol: f64) -> bool {
    points.iter().all(|&p| {
        let j = |i| jet(&Component(x, i), p);
        let (x1, x2, x3, e) = (j(0), j(1), j(2), j(3));
        let small = |v: f64| v.abs() <= tol;
        small(x1.hess[0][0])
            && small(x1.grad[3])
            && small(x2.grad[0])
            && small(x2.grad[3])
            && small(x3.grad[0])
            && small(x3.grad[1])
            && small(x3.grad[3])
            && small(e.hess[3][3])
    })
}

/// A named generator set with its expected nonzero structure constants.
#[derive(Clone, Debug)]
pub struct Catalog {
    pub name: &'static str,
    pub generators: Vec<VectorField>,
    /// `(i, j, [(k, c)])` meaning `[Xᵢ, Xⱼ] = Σ c·X_k`; pairs not listed bracket to zero.
    pub structure: Vec<(usize, usize, Vec<(usize, f64)>)>,
}

impl Catalog {
    /// The expected bracket `[Xᵢ, Xⱼ]` as a linear combination.
    pub fn expected(&self, i: usize, j: usize) -> Vec<(usize, f64)> {
        for (a, b, c) in &self.structure {
            if (*a, *b) == (i, j) {
                return c.clone();
            }
            if (*a, *b) == (j, i) {
                return c.iter().map(|(k, v)| (*k, -v)).collect();
            }
        }
        Vec::new()
    }

    fn combination(&self, terms: &[(usize, f64)]) -> VectorField {
        let refs: Vec<(f64, &VectorField)> = terms.iter().map(|(k, c)| (*c, &self.generators[*k])).collect();
        if refs.is_empty() {
            let zero = self.generators[0].scaled(0.0);
            return VectorField { label: "0".into(), ..zero };
        }
        VectorField::combination(&refs, "expected")
    }
}

pub fn l4_expn(ctx: Ctx) -> Catalog {
    Catalog {
        name: "L4_EXPn",
        generators: vec![
            VectorField::atom(ctx, Atom::ExpnScaling, "U1"),
            VectorField::atom(ctx, Atom::ValueShift, "U2"),
            VectorField::atom(ctx, Atom::ExpnTime, "U3"),
            VectorField::atom(ctx, Atom::DiscountedShift, "U4"),
        ],
        structure: vec![(0, 1, vec![(1, 1.0)]), (2, 3, vec![(3, 1.0)])],
    }
}

pub fn l4_expp(ctx: Ctx) -> Catalog {
    Catalog {
        name: "L4_EXPp",
        generators: vec![
            VectorField::atom(ctx, Atom::ExppScaling, "U1"),
            VectorField::atom(ctx, Atom::ValueShift, "U2"),
            VectorField::atom(ctx, Atom::ExppTime, "U3"),
            VectorField::atom(ctx, Atom::DiscountedShift, "U4"),
        ],
        structure: vec![(0, 1, vec![(1, 1.0)]), (2, 3, vec![(3, 1.0)])],
    }
}

fn hara2_base(ctx: Ctx, gamma: f64) -> Vec<VectorField> {
    let shift = (1.0 - gamma) / ctx.p.ar();
    vec![
        VectorField::atom(ctx, Atom::ValueShift, "U1"),
        VectorField::atom(ctx, Atom::DiscountedShift, "U2"),
        VectorField::atom(ctx, Atom::HaraScaling { gamma, shift }, "U3"),
    ]
}

pub fn l3_hara2(ctx: Ctx, gamma: f64) -> Catalog {
    Catalog {
        name: "L3_HARA2",
        generators: hara2_base(ctx, gamma),
        structure: vec![(0, 2, vec![(0, gamma)]), (1, 2, vec![(1, 1.0)])],
    }
}

/// `L3_HARA2` extended by `∂_t − κV∂_V`; exists only for exponential survival.
pub fn l4_hara2_exp(ctx: Ctx, gamma: f64) -> Result<Catalog> {
    let SurvivalModel::Exponential { kappa } = ctx.m else {
        return Err(Error::Domain("the fourth HARA2 generator requires exponential survival".into()));
    };
    let mut generators = hara2_base(ctx, gamma);
    generators.push(VectorField::atom(ctx, Atom::HaraExpTime { kappa }, "U4"));
    Ok(Catalog {
        name: "L4_HARA2_exp",
        generators,
        structure: vec![
            (0, 2, vec![(0, gamma)]),
            (1, 2, vec![(1, 1.0)]),
            (0, 3, vec![(0, -kappa)]),
            (1, 3, vec![(1, -ctx.p.r)]),
        ],
    })
}

pub fn l3_hara1(ctx: Ctx, gamma: f64) -> Catalog {
    Catalog {
        name: "L3_HARA1",
        generators: vec![
            VectorField::atom(ctx, Atom::ValueShift, "U1"),
            VectorField::atom(ctx, Atom::DiscountedShift, "U2"),
            VectorField::atom(ctx, Atom::Hara1Scaling { gamma }, "U3"),
        ],
        structure: vec![(0, 2, vec![(0, gamma)]), (1, 2, vec![(1, 1.0)])],
    }
}

/// The three generators left by the `γ → ∞` limit of `L3_HARA2`.
pub fn l3_hara2_limit(ctx: Ctx) -> Catalog {
    Catalog {
        name: "L3_HARA2_limit",
        generators: vec![
            VectorField::atom(ctx, Atom::ValueShift, "U1inf"),
            VectorField::atom(ctx, Atom::DiscountedShift, "U2inf"),
            VectorField::atom(ctx, Atom::ExpnScaling, "U3inf"),
        ],
        structure: vec![(2, 0, vec![(0, 1.0)])],
    }
}

/// The γ-dependent HARA2 generators, rescaled so that they converge, and
/// their limits.
#[derive(Clone, Debug)]
pub struct LimitGenerators {
    /// `U₁`, `U₂` and `−U₃/γ` at the given γ.
    pub rescaled: Vec<VectorField>,
    /// `∂_V`, `e^{rt}∂_l`, `(1/(ar))∂_l − V∂_V`.
    pub limits: Vec<VectorField>,
}

pub fn hara_limit_generators(ctx: Ctx, gamma: f64) -> LimitGenerators {
    let base = hara2_base(ctx, gamma);
    LimitGenerators {
        rescaled: vec![base[0].clone(), base[1].clone(), base[2].scaled(-1.0 / gamma)],
        limits: l3_hara2_limit(ctx).generators,
    }
}

/// For each field in `subset`, the index of the coefficient-wise equal
/// generator in `set`, if any.
pub fn match_generators(subset: &[VectorField], set: &[VectorField], points: &[[f64; 4]], tol: f64) -> Vec<Option<usize>> {
    subset
        .iter()
        .map(|x| set.iter().position(|y| max_deviation(x, y, points) <= tol))
        .collect()
}

/// One entry of a bracket table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub expected: Vec<(usize, f64)>,
    pub max_dev: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BracketTable {
    pub catalog: String,
    pub entries: Vec<BracketEntry>,
    pub max_dev: f64,
}

/// Computes every bracket of the catalog and compares it with the expected
/// structure constants.
pub fn bracket_table(c: &Catalog, points: &[[f64; 4]]) -> BracketTable {
    let n = c.generators.len();
    let mut entries = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let b = bracket(&c.generators[i], &c.generators[j]);
            let expected = c.expected(i, j);
            let e = c.combination(&expected);
            entries.push(BracketEntry { i, j, max_dev: max_deviation(&b, &e, points), expected });
        }
    }
    let max_dev = entries.iter().map(|e| e.max_dev).fold(0.0, f64::max);
    BracketTable { catalog: c.name.to_string(), entries, max_dev }
}

/// Largest coefficient of `[X,[Y,Z]] + [Y,[Z,X]] + [Z,[X,Y]]` over all triples.
pub fn jacobi_defect(c: &Catalog, points: &[[f64; 4]]) -> f64 {
    let g = &c.generators;
    let mut worst: f64 = 0.0;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            for k in j + 1..g.len() {
                let s = VectorField::combination(
                    &[
                        (1.0, &bracket(&g[i], &bracket(&g[j], &g[k]))),
                        (1.0, &bracket(&g[j], &bracket(&g[k], &g[i]))),
                        (1.0, &bracket(&g[k], &bracket(&g[i], &g[j]))),
                    ],
                    "jacobi",
                );
                worst = worst.max(max_magnitude(&s, points));
            }
        }
    }
    worst
}

/// The transformed function `exp(εX)·V` for a catalog generator `X`.
#[derive(Clone, Copy, Debug)]
pub struct Flowed<'a, F> {
    atom: Atom,
    ctx: Ctx,
    eps: f64,
    f: &'a F,
}

/// Applies the one-parameter group of `x` to the function `v`.
pub fn flow<'a, F: Field<3>>(x: &VectorField, eps: f64, v: &'a F) -> Result<Flowed<'a, F>> {
    let atom = x.as_atom().ok_or_else(|| Error::NotCatalog(x.label.clone()))?;
    Ok(Flowed { atom, ctx: x.ctx, eps, f: v })
}

/// Image of the base point `(l, h, t)` under the flow of `x`.
pub fn flow_point(x: &VectorField, eps: f64, [l, h, t]: [f64; 3]) -> Result<[f64; 3]> {
    let atom = x.as_atom().ok_or_else(|| Error::NotCatalog(x.label.clone()))?;
    let p = &x.ctx.p;
    let ar = p.ar();
    Ok(match atom {
        Atom::ValueShift => [l, h, t],
        Atom::DiscountedShift => [l + eps * (p.r * t).exp(), h, t],
        Atom::ExpnScaling | Atom::ExppScaling => [l + eps / ar, h, t],
        Atom::ExpnTime | Atom::ExppTime => {
            let t1 = t + eps / p.r;
            [l - (aux_k(&x.ctx.m, p.r, t1) - aux_k(&x.ctx.m, p.r, t)) / p.a, h, t1]
        }
        Atom::HaraScaling { shift, .. } => [(l + shift) * eps.exp() - shift, h * eps.exp(), t],
        Atom::HaraExpTime { .. } => [l, h, t + eps],
        Atom::Hara1Scaling { .. } => [l * eps.exp(), h * eps.exp(), t],
    })
}

impl<F: Field<3>> Field<3> for Flowed<'_, F> {
    fn eval<S: Lift>(&self, [l, h, t]: [S; 3]) -> S {
        let p = &self.ctx.p;
        let m = &self.ctx.m;
        let e = self.eps;
        let ar = p.ar();
        let v = |x: [S; 3]| self.f.eval(x);
        match self.atom {
            Atom::ValueShift => v([l, h, t]) + e,
            Atom::DiscountedShift => v([l - (t * p.r).exp() * e, h, t]),
            Atom::ExpnScaling => v([l - e / ar, h, t]) * (-e).exp(),
            Atom::ExpnTime => {
                let t0 = t - e / p.r;
                v([l + (aux_k(m, p.r, t) - aux_k(m, p.r, t0)) / p.a, h, t0])
            }
            Atom::ExppScaling => {
                let f = m.survival_integral(t) / p.a;
                (v([l - e / ar, h, t]) + f) * (-e).exp() - f
            }
            Atom::ExppTime => {
                let t0 = t - e / p.r;
                v([l + (aux_k(m, p.r, t) - aux_k(m, p.r, t0)) / p.a, h, t0])
                    + (m.survival_integral(t0) - m.survival_integral(t)) / p.a
            }
            Atom::HaraScaling { gamma, shift } => {
                v([(l + shift) * (-e).exp() - shift, h * (-e).exp(), t]) * (gamma * e).exp()
            }
            Atom::HaraExpTime { kappa } => v([l, h, t - e]) * (-kappa * e).exp(),
            Atom::Hara1Scaling { gamma } => {
                let c = m.survival_integral(t) * ((1.0 - gamma) / gamma);
                (v([l * (-e).exp(), h * (-e).exp(), t]) - c) * (gamma * e).exp() + c
            }
        }
    }
}

/// Outcome of a residual-covariance check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub generator: String,
    pub pde: String,
    pub eps: f64,
    /// Mean of `Δ[flow V](x̃)/Δ[V](x)` over the usable points.
    pub multiplier: f64,
    /// Largest relative spread of the ratio among points sharing `t`.
    pub max_dev: f64,
    pub used_points: usize,
    /// True when the ratio is constant in `(l, h, V)` to `tol`.
    pub multiplier_constancy: bool,
    /// True when no point had a denominator above `1e−6`.
    pub inconclusive: bool,
}

/// Certifies that the flow of `x` maps the residual of `pde` onto a multiple
/// of itself, the multiplier depending at most on `t` and `ε`.
pub fn residual_covariance_check<F: Field<3>>(
    x: &VectorField,
    pde: Pde,
    v: &F,
    eps: f64,
    points: &[[f64; 3]],
    tol: f64,
) -> Result<CovarianceReport> {
    let ctx = *x.ctx();
    let fv = flow(x, eps, v)?;
    let mut ratios: Vec<(f64, f64)> = Vec::new();
    for &pt in points {
        let [l1, h1, t1] = flow_point(x, eps, pt)?;
        let den = pde.residual(&ctx.p, &ctx.m, &jet_point(v, pt[0], pt[1], pt[2]))?;
        if den.abs() <= 1e-6 {
            continue;
        }
        let num = pde.residual(&ctx.p, &ctx.m, &jet_point(&fv, l1, h1, t1))?;
        ratios.push((pt[2], num / den));
    }
    let mut max_dev: f64 = 0.0;
    for (i, &(t, r)) in ratios.iter().enumerate() {
        if let Some(&(_, r0)) = ratios[..i].iter().find(|(t0, _)| *t0 == t) {
            max_dev = max_dev.max((r - r0).abs() / r0.abs().max(f64::MIN_POSITIVE));
        }
    }
    let n = ratios.len();
    let multiplier = if n == 0 { f64::NAN } else { ratios.iter().map(|r| r.1).sum::<f64>() / n as f64 };
    Ok(CovarianceReport {
        generator: x.label.clone(),
        pde: pde.name().to_string(),
        eps,
        multiplier,
        max_dev,
        used_points: n,
        multiplier_constancy: n > 0 && max_dev <= tol,
        inconclusive: n == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::testfn::ExpPoly;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize) -> Vec<[f64; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.2..3.0),
                    rng.random_range(0.1..10.0),
                    rng.random_range(-3.0..3.0),
                ]
            })
            .collect()
    }

    fn ctx() -> Ctx {
        Ctx::new(MarketParams::default(), SurvivalModel::Weibull { lambda: 8.0, k: 1.7 })
    }

    #[test]
    fn expn_bracket_examples() {
        let c = l4_expn(ctx());
        let pts = points(20);
        let g = &c.generators;
        assert!(max_deviation(&bracket(&g[0], &g[1]), &g[1], &pts) < 1e-12);
        assert!(max_deviation(&bracket(&g[2], &g[3]), &g[3], &pts) < 1e-12);
        assert!(max_magnitude(&bracket(&g[0], &g[2]), &pts) < 1e-12);
    }

    #[test]
    fn hara_exp_bracket_example() {
        let c = Ctx::new(MarketParams::default(), SurvivalModel::Exponential { kappa: 0.3 });
        let cat = l4_hara2_exp(c, 0.4).unwrap();
        let b = bracket(&cat.generators[1], &cat.generators[3]);
        assert!(max_deviation(&b, &cat.generators[1].scaled(-c.p.r), &points(20)) < 1e-12);
        assert!(l4_hara2_exp(ctx(), 0.4).is_err());
    }

    #[test]
    fn flow_examples() {
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = ExpPoly::random(&mut rng);
        let cat = l4_expn(c);
        let x = [0.3, 1.1, 2.0];
        let u2 = flow(&cat.generators[1], 0.7, &f).unwrap();
        assert!((u2.eval(x) - f.eval(x) - 0.7).abs() < 1e-14);
        let u4 = flow(&cat.generators[3], 0.4, &f).unwrap();
        let shifted = [x[0] - 0.4 * (c.p.r * x[2]).exp(), x[1], x[2]];
        assert_eq!(u4.eval(x), f.eval(shifted));
        let u1 = flow(&cat.generators[0], 0.3, &f).unwrap();
        let expect = (-0.3f64).exp() * f.eval([x[0] - 0.3 / c.p.ar(), x[1], x[2]]);
        assert!((u1.eval(x) - expect).abs() < 1e-14);
        let sum = VectorField::combination(&[(1.0, &cat.generators[0])], "s");
        assert!(matches!(flow(&sum, 0.1, &f), Err(Error::NotCatalog(_))));
    }

    #[test]
    fn flows_integrate_their_generators() {
        // d/dε [exp(εX)V](x)|₀ = η − ξ·∇V for every catalog atom.
        let c = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = ExpPoly::random(&mut rng);
        let mut fields = l4_expn(c).generators;
        fields.extend(l4_expp(c).generators);
        fields.extend(l3_hara2(c, 0.4).generators);
        fields.extend(l3_hara1(c, 0.4).generators);
        let ce = Ctx::new(c.p, SurvivalModel::Exponential { kappa: 0.3 });
        fields.extend(l4_hara2_exp(ce, 0.4).unwrap().generators);
        for x in &fields {
            for _ in 0..5 {
                let pt = [rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0), rng.random_range(1.0..5.0)];
                let j = jet_point(&f, pt[0], pt[1], pt[2]);
                let k = x.eval([pt[0], pt[1], pt[2], j.v]);
                let q = k[3] - k[0] * j.v_l - k[1] * j.v_h - k[2] * j.v_t;
                let e = 1e-5;
                let fp = flow(x, e, &f).unwrap().eval(pt);
                let fm = flow(x, -e, &f).unwrap().eval(pt);
                let d = (fp - fm) / (2.0 * e);
                assert!((d - q).abs() < 1e-6 * q.abs().max(1.0), "{}: {d} vs {q}", x.label);
            }
        }
    }

    #[test]
    fn structural_form_of_catalog_generators() {
        let pts = points(10);
        for g in l4_expn(ctx()).generators.iter().chain(l4_expp(ctx()).generators.iter()) {
            assert!(structural_check(g, &pts, 1e-12), "{}", g.label);
        }
    }

    #[test]
    fn hara1_maps_to_hara2() {
        let c = ctx();
        let g = 0.35;
        let push = pushforward(PointMap::Hara1ToHara2 { gamma: g }, &l3_hara1(c, g).generators[2]);
        assert!(max_deviation(&push, &l3_hara2(c, g).generators[2], &points(30)) < 1e-12);
    }
}
