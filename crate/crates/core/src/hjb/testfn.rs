//! Smooth randomized test functions with exact derivatives.
//!
//! Identity checks need arbitrary smooth inputs that respect the admissible
//! cone (`V_l > 0`, `V_ll < 0`). Each family below is written once over
//! [`Scalar`], so its jets come from automatic differentiation.

use rand::Rng;

use crate::ad::{jet, Field, Lift};
use crate::hjb::JetPoint;

/// `V(l,h,t) = −e^{−βl}·P(h,t) − w·e^{−β₂l}·(1 + ch) + Q(h,t)` with
/// `P = (1 + p₁h + p₂h²)(1 + p₃e^{−p₄t})` and
/// `Q = q₀h + q₁h²e^{−t} + q₂t + q₃ sin(h + t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpPoly {
    pub beta: f64,
    pub beta2: f64,
    pub w: f64,
    pub c: f64,
    pub p: [f64; 4],
    pub q: [f64; 4],
}

impl ExpPoly {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ExpPoly {
            beta: rng.random_range(0.2..1.5),
            beta2: rng.random_range(0.1..0.8),
            w: rng.random_range(0.0..1.0),
            c: rng.random_range(0.0..1.0),
            p: [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.1..1.0),
            ],
            q: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        }
    }

    /// The second jet at `(l, h, t)` as a [`JetPoint`].
    pub fn jet_point(&self, l: f64, h: f64, t: f64) -> JetPoint {
        jet_point(self, l, h, t)
    }
}

impl Field<3> for ExpPoly {
    fn eval<S: Lift>(&self, [l, h, t]: [S; 3]) -> S {
        let [p1, p2, p3, p4] = self.p;
        let [q0, q1, q2, q3] = self.q;
        let poly = (h * p1 + h * h * p2 + 1.0) * ((t * -p4).exp() * p3 + 1.0);
        let q = h * q0 + h * h * (-t).exp() * q1 + t * q2 + (h + t).sin() * q3;
        -((l * -self.beta).exp() * poly) - (l * -self.beta2).exp() * (h * self.c + 1.0) * self.w + q
    }
}

/// The second jet of any `(l, h, t)` field.
pub fn jet_point<F: Field<3>>(f: &F, l: f64, h: f64, t: f64) -> JetPoint {
    JetPoint::from_jet([l, h, t], &jet(f, [l, h, t]))
}

/// `W(z,h) = −e^{−βz}(1 + c₁h + c₂h²) − w·e^{−β₂z}(1 + c₃h) + q₀h + q₁h²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedExpPoly {
    pub beta: f64,
    pub beta2: f64,
    pub w: f64,
    pub c: [f64; 3],
    pub q: [f64; 2],
}

impl ReducedExpPoly {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ReducedExpPoly {
            beta: rng.random_range(0.2..1.5),
            beta2: rng.random_range(0.1..0.8),
            w: rng.random_range(0.0..1.0),
            c: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            q: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        }
    }
}

impl Field<2> for ReducedExpPoly {
    fn eval<S: Lift>(&self, [z, h]: [S; 2]) -> S {
        let [c1, c2, c3] = self.c;
        let [q0, q1] = self.q;
        -((z * -self.beta).exp() * (h * c1 + h * h * c2 + 1.0))
            - (z * -self.beta2).exp() * (h * c3 + 1.0) * self.w
            + h * q0
            + h * h * q1
    }
}

/// Negative-valued `v(h) = −(1 + c₁h + c₂h²)·e^{c₃h}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegativeProfile {
    pub c: [f64; 3],
}

impl NegativeProfile {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        NegativeProfile {
            c: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(-0.5..0.5)],
        }
    }
}

impl Field<1> for NegativeProfile {
    fn eval<S: Lift>(&self, [h]: [S; 1]) -> S {
        let [c1, c2, c3] = self.c;
        -((h * c1 + h * h * c2 + 1.0) * (h * c3).exp())
    }
}

/// Draws `(l, h, t)` from the default sampling box.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random_range(-2.0..2.0), rng.random_range(0.2..3.0), rng.random_range(0.1..10.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn admissible_cone_and_fd_partials() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let f = ExpPoly::random(&mut rng);
            let [l, h, t] = random_point(&mut rng);
            let j = f.jet_point(l, h, t);
            assert!(j.v_l > 0.0 && j.v_ll < 0.0);
            let e = 1e-5;
            let v = |l: f64, h: f64, t: f64| f.eval([l, h, t]);
            let fd_l = (v(l + e, h, t) - v(l - e, h, t)) / (2.0 * e);
            let fd_t = (v(l, h, t + e) - v(l, h, t - e)) / (2.0 * e);
            let fd_hh = (v(l, h + e, t) - 2.0 * v(l, h, t) + v(l, h - e, t)) / (e * e);
            assert!((fd_l - j.v_l).abs() <= 1e-6 * j.v_l.abs().max(1.0));
            assert!((fd_t - j.v_t).abs() <= 1e-6 * j.v_t.abs().max(1.0));
            assert!((fd_hh - j.v_hh).abs() <= 1e-4 * j.v_hh.abs().max(1.0));
        }
    }
}
