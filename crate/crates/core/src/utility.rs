//! Utility families, risk tolerance and the limits that connect them.

use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};

/// A utility function of consumption.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum UtilitySpec {
    /// `((1−γ)/γ)·(c/(1−γ))^γ`.
    HARA1 { gamma: f64 },
    /// `((1−γ)/γ)·(ac/(1−γ) + 1)^γ`.
    HARA2 { gamma: f64, a: f64 },
    /// `ln c`.
    LOG,
    /// `−e^{−ac}`.
    EXPn { a: f64 },
    /// `(1/a)(1 − e^{−ac})`.
    EXPp { a: f64 },
}

impl Default for UtilitySpec {
    fn default() -> Self {
        UtilitySpec::EXPn { a: 1.0 }
    }
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::HARA1 { gamma } => check(gamma > 0.0 && gamma < 1.0, "gamma", "must lie in (0, 1)"),
            UtilitySpec::HARA2 { gamma, a } => {
                check(gamma > 0.0 && gamma < 1.0, "gamma", "must lie in (0, 1)")?;
                check(a > 0.0 && a.is_finite(), "a", "must be positive")
            }
            UtilitySpec::LOG => Ok(()),
            UtilitySpec::EXPn { a } | UtilitySpec::EXPp { a } => {
                check(a > 0.0 && a.is_finite(), "a", "must be positive")
            }
        }
    }

    /// `U(c)`.
    ///
    /// HARA parameters are not restricted to `(0, 1)` here so that the formal
    /// large-γ limit can be evaluated; the base of the power must stay positive.
    pub fn evaluate(&self, c: f64) -> Result<f64> {
        if c.is_nan() || c < 0.0 {
            return Err(Error::Domain(format!("consumption must be non-negative, got {c}")));
        }
        match *self {
            UtilitySpec::HARA1 { gamma } => {
                let g = hara_gamma(gamma)?;
                Ok((1.0 - g) / g * (c / (1.0 - g)).powf(g))
            }
            UtilitySpec::HARA2 { gamma, a } => {
                let g = hara_gamma(gamma)?;
                let base = a * c / (1.0 - g) + 1.0;
                if base <= 0.0 {
                    return Err(Error::Domain(format!("HARA2 base {base} is not positive at c = {c}")));
                }
                Ok((1.0 - g) / g * base.powf(g))
            }
            UtilitySpec::LOG => {
                if c == 0.0 {
                    Err(Error::Domain("log utility is undefined at c = 0".into()))
                } else {
                    Ok(c.ln())
                }
            }
            UtilitySpec::EXPn { a } => Ok(-(-a * c).exp()),
            UtilitySpec::EXPp { a } => Ok(-(-a * c).exp_m1() / a),
        }
    }

    /// `U'(c)` in closed form.
    pub fn marginal(&self, c: f64) -> Result<f64> {
        self.evaluate(c)?;
        Ok(match *self {
            UtilitySpec::HARA1 { gamma } => (c / (1.0 - gamma)).powf(gamma - 1.0),
            UtilitySpec::HARA2 { gamma, a } => a * (a * c / (1.0 - gamma) + 1.0).powf(gamma - 1.0),
            UtilitySpec::LOG => 1.0 / c,
            UtilitySpec::EXPn { a } => a * (-a * c).exp(),
            UtilitySpec::EXPp { a } => (-a * c).exp(),
        })
    }

    /// Risk tolerance `−U'(c)/U''(c)`.
    pub fn risk_tolerance(&self, c: f64) -> Result<f64> {
        self.evaluate(c)?;
        Ok(match *self {
            UtilitySpec::HARA1 { gamma } => c / (1.0 - gamma),
            UtilitySpec::HARA2 { gamma, a } => c / (1.0 - gamma) + 1.0 / a,
            UtilitySpec::LOG => c,
            UtilitySpec::EXPn { a } | UtilitySpec::EXPp { a } => 1.0 / a,
        })
    }
}

fn hara_gamma(gamma: f64) -> Result<f64> {
    if gamma > 0.0 && gamma != 1.0 && gamma.is_finite() {
        Ok(gamma)
    } else {
        Err(Error::InvalidParameter { field: "gamma", reason: format!("must be positive and not 1, got {gamma}") })
    }
}

/// A limiting procedure between utility families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LimitDirection {
    /// HARA2(γ, a) → EXPn(a) as γ → ∞.
    GammaToInfinity { a: f64 },
    /// HARA1(γ) − (1−γ)/γ → LOG as γ → 0.
    GammaToZero,
    /// HARA2(γ, a) against EXPn(a) as a → 0; degenerate.
    AToZero { gamma: f64 },
}

/// Deviations along a limiting path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    /// `(parameter, max |difference| over the grid)` along the path.
    pub steps: Vec<(f64, f64)>,
    /// Deviation at the last step.
    pub max_abs_dev: f64,
    /// True when the deviations shrink monotonically below `tol`.
    pub converged: bool,
}

/// Follows a limiting path and measures the distance to the limit family.
pub fn limit_check(direction: LimitDirection, cs: &[f64], tol: f64) -> Result<LimitReport> {
    let path: &[f64] = match direction {
        LimitDirection::GammaToInfinity { .. } => &[1e2, 1e3, 1e4],
        LimitDirection::GammaToZero => &[1e-4, 1e-5, 1e-6],
        LimitDirection::AToZero { .. } => &[1e-2, 1e-4, 1e-6],
    };
    let mut steps = Vec::with_capacity(path.len());
    for &s in path {
        let mut dev: f64 = 0.0;
        for &c in cs {
            let d = match direction {
                LimitDirection::GammaToInfinity { a } => {
                    UtilitySpec::HARA2 { gamma: s, a }.evaluate(c)? - UtilitySpec::EXPn { a }.evaluate(c)?
                }
                LimitDirection::GammaToZero => {
                    let g = s;
                    // (U1 − (1−γ)/γ) written with expm1 to avoid cancellation.
                    (1.0 - g) / g * (g * (c / (1.0 - g)).ln()).exp_m1() - UtilitySpec::LOG.evaluate(c)?
                }
                LimitDirection::AToZero { gamma } => {
                    UtilitySpec::HARA2 { gamma, a: s }.evaluate(c)? - UtilitySpec::EXPn { a: s }.evaluate(c)?
                }
            };
            dev = dev.max(d.abs());
        }
        steps.push((s, dev));
    }
    let max_abs_dev = steps.last().map(|s| s.1).unwrap_or(0.0);
    let shrinking = steps.windows(2).all(|w| w[1].1 <= w[0].1);
    Ok(LimitReport { steps, max_abs_dev, converged: shrinking && max_abs_dev <= tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        assert_eq!(UtilitySpec::EXPn { a: 1.0 }.evaluate(0.0).unwrap(), -1.0);
        assert_eq!(UtilitySpec::EXPp { a: 2.0 }.evaluate(0.0).unwrap(), 0.0);
        assert!((UtilitySpec::HARA2 { gamma: 0.5, a: 1.0 }.evaluate(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(UtilitySpec::LOG.evaluate(0.0).is_err());
        assert!(UtilitySpec::EXPn { a: 1.0 }.evaluate(-1.0).is_err());
    }

    #[test]
    fn risk_tolerance_examples() {
        assert!((UtilitySpec::HARA1 { gamma: 0.5 }.risk_tolerance(2.0).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(UtilitySpec::EXPn { a: 2.0 }.risk_tolerance(7.0).unwrap(), 0.5);
        assert_eq!(UtilitySpec::LOG.risk_tolerance(3.0).unwrap(), 3.0);
    }

    #[test]
    fn limit_examples() {
        let r = limit_check(LimitDirection::GammaToInfinity { a: 1.0 }, &[1.0], 5e-4).unwrap();
        assert!(r.converged, "{r:?}");
        let r = limit_check(LimitDirection::GammaToZero, &[2.0], 1e-5).unwrap();
        assert!(r.converged, "{r:?}");
        let r = limit_check(LimitDirection::AToZero { gamma: 0.5 }, &[1.0, 2.0], 1e-3).unwrap();
        assert!(!r.converged, "{r:?}");
    }

    #[test]
    fn json_shape() {
        let u: UtilitySpec = serde_json::from_str(r#"{"kind": "EXPn", "a": 1.0}"#).unwrap();
        assert_eq!(u, UtilitySpec::EXPn { a: 1.0 });
        let u: UtilitySpec = serde_json::from_str(r#"{"kind": "LOG"}"#).unwrap();
        assert_eq!(u, UtilitySpec::LOG);
    }
}
