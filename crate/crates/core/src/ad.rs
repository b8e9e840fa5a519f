//! Forward-mode automatic differentiation with nested dual numbers.
//!
//! Every formula in the crate that needs derivatives (test functions,
//! generator coefficients, invariant maps) is written once, generically over
//! [`Scalar`], and evaluated either on plain `f64` or on nested [`Dual`]s to
//! obtain exact first and second partials.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A real-valued number type that supports the elementary functions used in
/// this crate.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Embeds a constant.
    fn cst(x: f64) -> Self;
    /// The underlying real value with all infinitesimal parts dropped.
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn powi(self, n: i32) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Applies a univariate special function, propagating derivatives
    /// through [`Unary::derivative`].
    fn apply<U: Unary>(self, u: &U) -> Self;

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
}

/// A univariate function whose derivative can be written in [`Scalar`]
/// arithmetic (possibly in terms of the function itself).
pub trait Unary {
    fn value(&self, x: f64) -> f64;
    fn derivative<S: Scalar>(&self, x: S) -> S;
}

impl Scalar for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn apply<U: Unary>(self, u: &U) -> Self {
        u.value(self)
    }
}

/// A dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }
}

pub type D1 = Dual<f64>;
pub type D2 = Dual<D1>;
pub type D3 = Dual<D2>;

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}
impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}
impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}
impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}
impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}
impl<S: Scalar> Add<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Dual::new(self.re + o, self.eps)
    }
}
impl<S: Scalar> Sub<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Dual::new(self.re - o, self.eps)
    }
}
impl<S: Scalar> Mul<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        Dual::new(self.re * o, self.eps * o)
    }
}
impl<S: Scalar> Div<f64> for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        Dual::new(self.re / o, self.eps / o)
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    #[inline]
    fn cst(x: f64) -> Self {
        Dual::new(S::cst(x), S::cst(0.0))
    }
    #[inline]
    fn re(self) -> f64 {
        self.re.re()
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        Dual::new(self.re.powf(p), self.eps * self.re.powf(p - 1.0) * p)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        Dual::new(self.re.powi(n), self.eps * self.re.powi(n - 1) * n as f64)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s * 2.0))
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    #[inline]
    fn apply<U: Unary>(self, u: &U) -> Self {
        Dual::new(self.re.apply(u), self.eps * u.derivative(self.re))
    }
}

/// Scalars that can be lifted one differentiation level up.
///
/// The tower is closed at [`D3`]: lifting a third-order dual panics. Three
/// levels cover second jets of brackets and of pushed-forward fields.
pub trait Lift: Scalar {
    type Up: Lift;
    fn up(re: Self, eps: Self) -> Self::Up;
    fn down(u: Self::Up) -> (Self, Self);
}

impl Lift for f64 {
    type Up = D1;
    fn up(re: Self, eps: Self) -> D1 {
        Dual::new(re, eps)
    }
    fn down(u: D1) -> (f64, f64) {
        (u.re, u.eps)
    }
}
impl Lift for D1 {
    type Up = D2;
    fn up(re: Self, eps: Self) -> D2 {
        Dual::new(re, eps)
    }
    fn down(u: D2) -> (D1, D1) {
        (u.re, u.eps)
    }
}
impl Lift for D2 {
    type Up = D3;
    fn up(re: Self, eps: Self) -> D3 {
        Dual::new(re, eps)
    }
    fn down(u: D3) -> (D2, D2) {
        (u.re, u.eps)
    }
}
impl Lift for D3 {
    type Up = D3;
    fn up(_: Self, _: Self) -> D3 {
        panic!("differentiation tower exhausted: nesting deeper than three levels")
    }
    fn down(u: D3) -> (D3, D3) {
        (u, Self::cst(0.0))
    }
}

/// A smooth scalar function of `N` real variables.
pub trait Field<const N: usize> {
    fn eval<S: Lift>(&self, x: [S; N]) -> S;
}

impl<const N: usize, F: Field<N> + ?Sized> Field<N> for &F {
    fn eval<S: Lift>(&self, x: [S; N]) -> S {
        (**self).eval(x)
    }
}

/// Value, gradient and Hessian of a field at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
    pub hess: [[f64; N]; N],
}

/// Value and gradient via one forward pass per coordinate.
pub fn gradient<const N: usize, F: Field<N>>(f: &F, x: [f64; N]) -> (f64, [f64; N]) {
    let mut g = [0.0; N];
    let mut v = 0.0;
    for (i, gi) in g.iter_mut().enumerate() {
        let p: [D1; N] = std::array::from_fn(|k| Dual::new(x[k], if k == i { 1.0 } else { 0.0 }));
        let r = f.eval(p);
        v = r.re;
        *gi = r.eps;
    }
    if N == 0 {
        v = f.eval(x.map(f64::cst));
    }
    (v, g)
}

/// Second jet by second-order nested duals, `N(N+1)/2` evaluations.
pub fn jet<const N: usize, F: Field<N>>(f: &F, x: [f64; N]) -> Jet<N> {
    let mut out = Jet { value: 0.0, grad: [0.0; N], hess: [[0.0; N]; N] };
    for i in 0..N {
        for j in i..N {
            let p: [D2; N] = std::array::from_fn(|k| {
                let di = if k == i { 1.0 } else { 0.0 };
                let dj = if k == j { 1.0 } else { 0.0 };
                Dual::new(Dual::new(x[k], di), Dual::new(dj, 0.0))
            });
            let r = f.eval(p);
            out.value = r.re.re;
            out.grad[i] = r.re.eps;
            out.grad[j] = r.eps.re;
            out.hess[i][j] = r.eps.eps;
            out.hess[j][i] = r.eps.eps;
        }
    }
    if N == 0 {
        out.value = f.eval(x.map(f64::cst));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly;
    impl Field<2> for Poly {
        fn eval<S: Lift>(&self, [x, y]: [S; 2]) -> S {
            x * x * y + (x * y).exp() - y.ln() * 3.0
        }
    }

    #[test]
    fn jet_matches_hand_derivatives() {
        let (x, y) = (0.7, 1.3);
        let j = jet(&Poly, [x, y]);
        let e = (x * y).exp();
        assert!((j.value - (x * x * y + e - 3.0 * y.ln())).abs() < 1e-14);
        assert!((j.grad[0] - (2.0 * x * y + y * e)).abs() < 1e-13);
        assert!((j.grad[1] - (x * x + x * e - 3.0 / y)).abs() < 1e-13);
        assert!((j.hess[0][0] - (2.0 * y + y * y * e)).abs() < 1e-13);
        assert!((j.hess[0][1] - (2.0 * x + e + x * y * e)).abs() < 1e-13);
        assert!((j.hess[1][1] - (x * x * e + 3.0 / (y * y))).abs() < 1e-13);
    }

    struct Sq;
    impl Unary for Sq {
        fn value(&self, x: f64) -> f64 {
            x * x
        }
        fn derivative<S: Scalar>(&self, x: S) -> S {
            x * 2.0
        }
    }

    #[test]
    fn unary_chain_rule_to_second_order() {
        struct G;
        impl Field<1> for G {
            fn eval<S: Lift>(&self, [x]: [S; 1]) -> S {
                x.sin().apply(&Sq)
            }
        }
        let x: f64 = 0.4;
        let j = jet(&G, [x]);
        assert!((j.grad[0] - (2.0 * x).sin()).abs() < 1e-14);
        assert!((j.hess[0][0] - 2.0 * (2.0 * x).cos()).abs() < 1e-14);
    }

    #[test]
    #[should_panic(expected = "tower exhausted")]
    fn lifting_past_third_order_panics() {
        let d: D3 = D3::cst(1.0);
        let _ = <D3 as Lift>::up(d, d);
    }
}
