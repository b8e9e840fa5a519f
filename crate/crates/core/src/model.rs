//! Market parameters, liquidation-time distributions and the special
//! functions built on them.

use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, Unary};
use crate::error::{check, Error, Result};

/// Constant coefficients of the bond, stock, illiquid asset and utility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Risk-free rate.
    pub r: f64,
    /// Stock drift.
    pub alpha: f64,
    /// Stock volatility.
    pub sigma: f64,
    /// Drift of the illiquid asset.
    pub mu: f64,
    /// Dividend rate paid by the illiquid asset.
    pub delta: f64,
    /// Volatility of the illiquid asset.
    pub eta: f64,
    /// Correlation between the stock and the illiquid asset.
    pub rho: f64,
    /// Exponential-utility coefficient.
    pub a: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self { r: 0.05, alpha: 0.1, sigma: 0.2, mu: 0.06, delta: 0.03, eta: 0.2, rho: 0.5, a: 1.0 }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r, self.alpha, self.sigma, self.mu, self.delta, self.eta, self.rho, self.a];
        check(all.iter().all(|x| x.is_finite()), "params", "all parameters must be finite")?;
        check(self.r > 0.0, "r", "must be positive")?;
        check(self.sigma > 0.0, "sigma", "must be positive")?;
        check(self.eta > 0.0, "eta", "must be positive")?;
        check(self.a > 0.0, "a", "must be positive")?;
        check(self.alpha > self.r, "alpha", "must exceed r")?;
        check(self.rho > -1.0 && self.rho < 1.0, "rho", "must lie in (-1, 1)")?;
        Ok(())
    }

    /// Excess return of the stock, `α − r`.
    pub fn excess(&self) -> f64 {
        self.alpha - self.r
    }

    /// Product `a·r` that sets the wealth scale of every exponential ansatz.
    pub fn ar(&self) -> f64 {
        self.a * self.r
    }
}

/// Distribution of the liquidation time through its survival function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SurvivalModel {
    /// `Φ̄(t) = e^{−κt}`.
    Exponential { kappa: f64 },
    /// `Φ̄(t) = e^{−(t/λ)^k}`.
    Weibull { lambda: f64, k: f64 },
}

impl Default for SurvivalModel {
    fn default() -> Self {
        SurvivalModel::Exponential { kappa: 0.2 }
    }
}

impl SurvivalModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SurvivalModel::Exponential { kappa } => {
                check(kappa.is_finite() && kappa > 0.0, "kappa", "must be positive")
            }
            SurvivalModel::Weibull { lambda, k } => {
                check(lambda.is_finite() && lambda > 0.0, "lambda", "must be positive")?;
                check(k.is_finite() && k > 0.0, "k", "must be positive")?;
                check(k <= 20.0, "k", "shape above 20 is outside the supported range")
            }
        }
    }

    /// `Φ̄(t)`.
    pub fn survival(&self, t: f64) -> Result<f64> {
        nonneg(t)?;
        Ok(self.ln_survival(t).exp())
    }

    /// `ln Φ̄(t)` in closed form (no underflow at large t).
    pub fn ln_survival<S: Scalar>(&self, t: S) -> S {
        match *self {
            SurvivalModel::Exponential { kappa } => -(t * kappa),
            SurvivalModel::Weibull { lambda, k } => -((t / lambda).powf(k)),
        }
    }

    /// `Φ̄(t)` for any scalar type.
    pub fn survival_s<S: Scalar>(&self, t: S) -> S {
        self.ln_survival(t).exp()
    }

    /// `d/dt ln Φ̄(t)`, the negative hazard rate.
    pub fn log_survival_derivative(&self, t: f64) -> Result<f64> {
        nonneg(t)?;
        if let SurvivalModel::Weibull { k, .. } = *self {
            if k < 1.0 && t == 0.0 {
                return Err(Error::Singular("Weibull hazard with k < 1 is unbounded at t = 0".into()));
            }
        }
        Ok(self.log_survival_derivative_s(t))
    }

    pub fn log_survival_derivative_s<S: Scalar>(&self, t: S) -> S {
        match *self {
            SurvivalModel::Exponential { kappa } => S::cst(-kappa),
            SurvivalModel::Weibull { lambda, k } => {
                if k == 1.0 {
                    S::cst(-1.0 / lambda)
                } else {
                    -(t.powf(k - 1.0) * (k / lambda.powf(k)))
                }
            }
        }
    }

    /// `F(t) = ∫Φ̄ dt` on the branch that vanishes as `t → ∞`.
    pub fn survival_integral<S: Scalar>(&self, t: S) -> S {
        match *self {
            SurvivalModel::Exponential { kappa } => -((t * -kappa).exp() / kappa),
            SurvivalModel::Weibull { .. } => t.apply(&SurvivalIntegral(*self)),
        }
    }

    /// Horizon beyond which `Φ̄ < tol`.
    pub fn tail_time(&self, tol: f64) -> f64 {
        let q = -tol.ln();
        match *self {
            SurvivalModel::Exponential { kappa } => q / kappa,
            SurvivalModel::Weibull { lambda, k } => lambda * q.powf(1.0 / k),
        }
    }

    /// Default symmetry parameter ω for the admissible reduction.
    pub fn default_omega(&self, p: &MarketParams) -> f64 {
        match *self {
            SurvivalModel::Exponential { kappa } => p.r / kappa,
            SurvivalModel::Weibull { .. } => 1.0,
        }
    }
}

fn nonneg(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be finite and non-negative, got {t}")))
    }
}

/// `Γ(k, x) = ∫_x^∞ s^{k−1} e^{−s} ds`.
pub fn upper_incomplete_gamma(k: f64, x: f64) -> Result<f64> {
    gamma_args(k, x)?;
    if x == 0.0 {
        return Ok(statrs::function::gamma::gamma(k));
    }
    if x < k + 1.0 {
        let s = lower_series(k, x);
        Ok(statrs::function::gamma::gamma(k) - (k * x.ln() - x).exp() * s)
    } else {
        Ok((k * x.ln() - x).exp() * continued_fraction(k, x))
    }
}

/// `e^x·Γ(k, x)`, finite for large `x` where `Γ(k, x)` itself underflows.
pub fn scaled_upper_gamma(k: f64, x: f64) -> Result<f64> {
    gamma_args(k, x)?;
    if x == 0.0 {
        return Ok(statrs::function::gamma::gamma(k));
    }
    if x < k + 1.0 {
        let s = lower_series(k, x);
        Ok((x + statrs::function::gamma::ln_gamma(k)).exp() - x.powf(k) * s)
    } else {
        Ok(x.powf(k) * continued_fraction(k, x))
    }
}

fn gamma_args(k: f64, x: f64) -> Result<()> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidParameter { field: "k", reason: format!("must be positive, got {k}") });
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("incomplete gamma argument must be non-negative, got {x}")));
    }
    Ok(())
}

/// `Σ x^n/(k(k+1)…(k+n))`, so that `γ(k,x) = x^k e^{−x}·sum`.
fn lower_series(k: f64, x: f64) -> f64 {
    let mut term = 1.0 / k;
    let mut sum = term;
    let mut n = k;
    for _ in 0..1000 {
        n += 1.0;
        term *= x / n;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum
}

/// Modified Lentz evaluation of the continued fraction for `e^x·x^{−k}·Γ(k,x)`.
fn continued_fraction(k: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - k;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - k);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// `I(t) = e^{rt}∫e^{−rt} d ln Φ̄(t)` with the homogeneous `C·e^{rt}` term set to zero.
pub fn aux_integral_i(m: &SurvivalModel, p: &MarketParams, t: f64) -> Result<f64> {
    nonneg(t)?;
    Ok(aux_i(m, p.r, t))
}

/// Generic form of [`aux_integral_i`]; satisfies `I' = rI + (ln Φ̄)'`.
pub fn aux_i<S: Scalar>(m: &SurvivalModel, r: f64, t: S) -> S {
    match *m {
        SurvivalModel::Exponential { kappa } => S::cst(kappa / r),
        SurvivalModel::Weibull { .. } => t.apply(&AuxI { m: *m, r }),
    }
}

/// `K(t) = (I(t) − ln Φ̄(t))/r`, an antiderivative of `I`.
pub fn aux_k<S: Scalar>(m: &SurvivalModel, r: f64, t: S) -> S {
    (aux_i(m, r, t) - m.ln_survival(t)) / r
}

struct AuxI {
    m: SurvivalModel,
    r: f64,
}

impl Unary for AuxI {
    fn value(&self, t: f64) -> f64 {
        match self.m {
            SurvivalModel::Exponential { kappa } => kappa / self.r,
            SurvivalModel::Weibull { lambda, k } => {
                let x = self.r * t;
                let g = scaled_upper_gamma(k, x.max(0.0)).unwrap_or(f64::NAN);
                k / (lambda.powf(k) * self.r.powf(k)) * g
            }
        }
    }
    fn derivative<S: Scalar>(&self, t: S) -> S {
        t.apply(self) * self.r + self.m.log_survival_derivative_s(t)
    }
}

struct SurvivalIntegral(SurvivalModel);

impl Unary for SurvivalIntegral {
    fn value(&self, t: f64) -> f64 {
        match self.0 {
            SurvivalModel::Exponential { kappa } => -(-kappa * t).exp() / kappa,
            SurvivalModel::Weibull { lambda, k } => {
                let u = (t.max(0.0) / lambda).powf(k);
                -(lambda / k) * upper_incomplete_gamma(1.0 / k, u).unwrap_or(f64::NAN)
            }
        }
    }
    fn derivative<S: Scalar>(&self, t: S) -> S {
        self.0.survival_s(t)
    }
}
