//! Pointwise residuals of the maximized HJB equations and the optimal
//! strategies read off a value function's derivatives.
//!
//! Residuals take exact jets; nothing in this module differentiates.

use serde::{Deserialize, Serialize};

use crate::ad::Jet;
use crate::error::{Error, Result};
use crate::model::{MarketParams, SurvivalModel};

pub mod testfn;

/// A point `(l, h, t)` together with the value and partials of `V` there.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JetPoint {
    pub l: f64,
    pub h: f64,
    pub t: f64,
    pub v: f64,
    pub v_l: f64,
    pub v_h: f64,
    pub v_t: f64,
    pub v_ll: f64,
    pub v_lh: f64,
    pub v_hh: f64,
}

impl JetPoint {
    /// Builds a jet point from a second jet in the coordinate order `(l, h, t)`.
    pub fn from_jet([l, h, t]: [f64; 3], j: &Jet<3>) -> Self {
        JetPoint {
            l,
            h,
            t,
            v: j.value,
            v_l: j.grad[0],
            v_h: j.grad[1],
            v_t: j.grad[2],
            v_ll: j.hess[0][0],
            v_lh: j.hess[0][1],
            v_hh: j.hess[1][1],
        }
    }

    fn admissible(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.t >= 0.0) {
            return Err(Error::Domain(format!("need h > 0 and t >= 0, got h = {}, t = {}", self.h, self.t)));
        }
        if !(self.v_l > 0.0) {
            return Err(Error::LogDomain(format!("V_l = {} is not positive", self.v_l)));
        }
        if !(self.v_ll < 0.0) {
            return Err(Error::DegenerateHessian(format!("V_ll = {} is not negative", self.v_ll)));
        }
        Ok(())
    }
}

/// A residual value together with the sum of the magnitudes of its terms,
/// the natural scale for relative comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub value: f64,
    pub scale: f64,
}

impl Residual {
    pub(crate) fn from_terms(terms: &[f64]) -> Self {
        Residual { value: terms.iter().sum(), scale: terms.iter().map(|x| x.abs()).sum() }
    }

    /// `|a − b|` relative to the larger of the two scales.
    pub fn rel_diff(&self, other: &Residual) -> f64 {
        (self.value - other.value).abs() / self.scale.max(other.scale).max(f64::MIN_POSITIVE)
    }
}

/// The four maximized HJB equations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Pde {
    EXPn,
    EXPp,
    HARA1 { gamma: f64 },
    /// The HARA2 equation written for the normalized utility `a^{−γ}·U₂`,
    /// which removes the `a`-power from the consumption term.
    HARA2 { gamma: f64 },
}

impl Pde {
    pub fn name(&self) -> &'static str {
        match self {
            Pde::EXPn => "EXPn",
            Pde::EXPp => "EXPp",
            Pde::HARA1 { .. } => "HARA1",
            Pde::HARA2 { .. } => "HARA2",
        }
    }

    /// Evaluates the residual with its term scale.
    pub fn evaluate(&self, p: &MarketParams, m: &SurvivalModel, j: &JetPoint) -> Result<Residual> {
        j.admissible()?;
        let [t0, t1, t2, t3, t4] = common_terms(p, j);
        let ln_s = m.ln_survival(j.t);
        let s = ln_s.exp();
        let a = p.a;
        let tail: [f64; 3] = match *self {
            Pde::EXPn => [
                j.v_l * j.v_l.ln() / a,
                -(1.0 + ln_s) * j.v_l / a,
                -a.ln() / a * j.v_l,
            ],
            Pde::EXPp => [j.v_l * j.v_l.ln() / a, -(1.0 + ln_s) * j.v_l / a, s / a],
            Pde::HARA1 { gamma } => {
                let g = hara_gamma(gamma)?;
                [hara_power(g, ln_s, j.v_l), -(1.0 - g) / g * s, 0.0]
            }
            Pde::HARA2 { gamma } => {
                let g = hara_gamma(gamma)?;
                [hara_power(g, ln_s, j.v_l), (1.0 - g) / a * j.v_l, 0.0]
            }
        };
        Ok(Residual::from_terms(&[t0, t1, t2, t3, t4, tail[0], tail[1], tail[2]]))
    }

    pub fn residual(&self, p: &MarketParams, m: &SurvivalModel, j: &JetPoint) -> Result<f64> {
        self.evaluate(p, m, j).map(|r| r.value)
    }

    /// Optimal `(π, c)` for this equation's utility.
    pub fn strategy(&self, p: &MarketParams, m: &SurvivalModel, j: &JetPoint) -> Result<Strategy> {
        j.admissible()?;
        let pi = investment(p, j);
        let ln_s = m.ln_survival(j.t);
        let a = p.a;
        let c = match *self {
            Pde::EXPn => (a.ln() + ln_s - j.v_l.ln()) / a,
            Pde::EXPp => (ln_s - j.v_l.ln()) / a,
            Pde::HARA1 { gamma } => {
                let g = hara_gamma(gamma)?;
                (1.0 - g) * ((j.v_l.ln() - ln_s) * (-1.0 / (1.0 - g))).exp()
            }
            Pde::HARA2 { gamma } => {
                let g = hara_gamma(gamma)?;
                (1.0 - g) * (((j.v_l.ln() - ln_s) * (-1.0 / (1.0 - g))).exp() - 1.0 / a)
            }
        };
        Ok(Strategy { pi, c, negative_consumption: c < 0.0 })
    }
}

fn hara_gamma(gamma: f64) -> Result<f64> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(gamma)
    } else {
        Err(Error::InvalidParameter { field: "gamma", reason: format!("must lie in (0, 1), got {gamma}") })
    }
}

/// `((1−γ)²/γ)·Φ̄^{1/(1−γ)}·V_l^{−γ/(1−γ)}`.
fn hara_power(g: f64, ln_s: f64, v_l: f64) -> f64 {
    (1.0 - g).powi(2) / g * ((ln_s - g * v_l.ln()) / (1.0 - g)).exp()
}

/// Terms shared by all four equations: time derivative, illiquid diffusion,
/// wealth drift, illiquid drift and the maximized investment term.
fn common_terms(p: &MarketParams, j: &JetPoint) -> [f64; 5] {
    let n = p.excess() * j.v_l + p.eta * p.rho * p.sigma * j.h * j.v_lh;
    [
        j.v_t,
        0.5 * p.eta * p.eta * j.h * j.h * j.v_hh,
        (p.r * j.l + p.delta * j.h) * j.v_l,
        (p.mu - p.delta) * j.h * j.v_h,
        -n * n / (2.0 * p.sigma * p.sigma * j.v_ll),
    ]
}

/// `π = −(ηρσh·V_lh + (α−r)V_l)/(σ²V_ll)`.
fn investment(p: &MarketParams, j: &JetPoint) -> f64 {
    -(p.eta * p.rho * p.sigma * j.h * j.v_lh + p.excess() * j.v_l) / (p.sigma * p.sigma * j.v_ll)
}

/// Left-hand side of the maximized EXPn equation.
pub fn residual_expn(p: &MarketParams, m: &SurvivalModel, j: &JetPoint) -> Result<f64> {
    Pde::EXPn.residual(p, m, j)
}

/// Left-hand side of the maximized EXPp equation.
pub fn residual_expp(p: &MarketParams, m: &SurvivalModel, j: &JetPoint) -> Result<f64> {
    Pde::EXPp.residual(p, m, j)
}

/// Left-hand side of the maximized HARA1 equation.
pub fn residual_hara1(p: &MarketParams, m: &SurvivalModel, j: &JetPoint, gamma: f64) -> Result<f64> {
    Pde::HARA1 { gamma }.residual(p, m, j)
}

/// Left-hand side of the maximized HARA2 equation.
pub fn residual_hara2(p: &MarketParams, m: &SurvivalModel, j: &JetPoint, gamma: f64) -> Result<f64> {
    Pde::HARA2 { gamma }.residual(p, m, j)
}

/// Optimal investment and consumption rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    /// Wealth held in the stock.
    pub pi: f64,
    /// Consumption rate.
    pub c: f64,
    /// Set when `c < 0`; consumption is reported unclamped.
    pub negative_consumption: bool,
}

/// Optimal EXPn strategy: `c = (1/a)·ln(aΦ̄(t)/V_l)`.
pub fn strategy(p: &MarketParams, m: &SurvivalModel, j: &JetPoint) -> Result<Strategy> {
    Pde::EXPn.strategy(p, m, j)
}

/// A second jet of `ψ(h, t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PsiJet {
    pub h: f64,
    pub t: f64,
    pub psi: f64,
    pub psi_h: f64,
    pub psi_t: f64,
    pub psi_hh: f64,
}

/// `ψ_t + ½η²h²ψ_hh + (μ−δ)hψ_h`.
pub fn psi_residual(p: &MarketParams, j: &PsiJet) -> f64 {
    j.psi_t + 0.5 * p.eta * p.eta * j.h * j.h * j.psi_hh + (p.mu - p.delta) * j.h * j.psi_h
}

/// Exponent `q = 1 − 2(μ−δ)/η²` of the non-constant stationary power solution `h^q`.
pub fn indicial_exponent(p: &MarketParams) -> f64 {
    1.0 - 2.0 * (p.mu - p.delta) / (p.eta * p.eta)
}

/// Log-heat substitution `h = e^x`, `t = −2τ/η²`, `ψ = P(h,τ)·v(τ,x)` with
/// `P = h^{−m/η²}·e^{−m²τ/η⁴}`, `m = μ − δ − η²/2`.
///
/// Under it `psi_residual = heat_multiplier·(v_xx − v_τ)`.
pub mod heat {
    use crate::model::MarketParams;

    fn m(p: &MarketParams) -> f64 {
        p.mu - p.delta - 0.5 * p.eta * p.eta
    }

    pub fn tau(p: &MarketParams, t: f64) -> f64 {
        -0.5 * p.eta * p.eta * t
    }

    pub fn time(p: &MarketParams, tau: f64) -> f64 {
        -2.0 * tau / (p.eta * p.eta)
    }

    /// `P(h, τ)`.
    pub fn prefactor(p: &MarketParams, x: f64, tau: f64) -> f64 {
        let e2 = p.eta * p.eta;
        let m = m(p);
        (-m / e2 * x - m * m * tau / (e2 * e2)).exp()
    }

    /// `(η²/2)·P`.
    pub fn multiplier(p: &MarketParams, x: f64, tau: f64) -> f64 {
        0.5 * p.eta * p.eta * prefactor(p, x, tau)
    }

    /// Logarithmic derivatives `(P_x/P, P_τ/P)`.
    pub fn log_derivatives(p: &MarketParams) -> (f64, f64) {
        let e2 = p.eta * p.eta;
        let m = m(p);
        (-m / e2, -m * m / (e2 * e2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_jet(p: &MarketParams, l: f64) -> JetPoint {
        let ar = p.ar();
        let e = (-ar * l).exp();
        JetPoint { l, h: 1.0, t: 0.0, v: -e, v_l: ar * e, v_ll: -ar * ar * e, ..Default::default() }
    }

    #[test]
    fn residual_closed_form_example() {
        let p = MarketParams { a: 1.0, r: 1.0, alpha: 1.1, sigma: 0.5, ..MarketParams::default() };
        let m = SurvivalModel::Exponential { kappa: 0.3 };
        let j = exp_jet(&p, 0.0);
        // V_l = 1, V_ll = −1, V_h = V_t = 0 at l = 0, t = 0, h = 1.
        let expected = p.delta * 1.0 + 0.01 / (2.0 * 0.25) + 0.0 - 1.0;
        assert!((residual_expn(&p, &m, &j).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn strategy_examples() {
        let p = MarketParams { alpha: 0.14, sigma: 0.2, a: 1.0, r: 0.1, ..MarketParams::default() };
        let m = SurvivalModel::Exponential { kappa: 0.3 };
        let s = strategy(&p, &m, &exp_jet(&p, 0.7)).unwrap();
        assert!((s.pi - 10.0).abs() < 1e-12);

        let p = MarketParams { a: 1.0, r: 1.0, alpha: 1.1, ..MarketParams::default() };
        for l in [-1.0, 0.0, 2.5] {
            let s = strategy(&p, &m, &exp_jet(&p, l)).unwrap();
            assert!((s.c - l).abs() < 1e-14);
        }
    }

    #[test]
    fn admissibility_errors() {
        let p = MarketParams::default();
        let m = SurvivalModel::default();
        let mut j = exp_jet(&p, 0.0);
        j.v_l = -1.0;
        assert!(matches!(residual_expn(&p, &m, &j), Err(Error::LogDomain(_))));
        let mut j = exp_jet(&p, 0.0);
        j.v_ll = 0.0;
        assert!(matches!(residual_expn(&p, &m, &j), Err(Error::DegenerateHessian(_))));
    }

    #[test]
    fn psi_examples() {
        let p = MarketParams::default();
        let q = indicial_exponent(&p);
        for h in [0.3, 1.0, 4.0] {
            let j = PsiJet {
                h,
                t: 2.0,
                psi: h.powf(q),
                psi_h: q * h.powf(q - 1.0),
                psi_t: 0.0,
                psi_hh: q * (q - 1.0) * h.powf(q - 2.0),
            };
            assert!(psi_residual(&p, &j).abs() < 1e-14 * h.powf(q).max(1.0));
            let lin = PsiJet { h, psi: h, psi_h: 1.0, ..Default::default() };
            assert!((psi_residual(&p, &lin) - (p.mu - p.delta) * h).abs() < 1e-15);
        }
        assert_eq!(psi_residual(&p, &PsiJet { h: 2.0, psi: 3.0, ..Default::default() }), 0.0);
    }
}
