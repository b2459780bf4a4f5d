//! Third-order truncated Taylor arithmetic.
//!
//! A `Jet` stores `f, f', f''/2, f'''/6` at a point, so closed-form library
//! functions get exact derivatives up to order three without hand-expanding
//! the chain rule for every composite.

use crate::Scalar;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Jet<T>(pub [T; 4]);

impl<T: Scalar> Jet<T> {
    pub fn var(x: T) -> Self {
        Jet([x, T::one(), T::zero(), T::zero()])
    }

    /// k-th derivative, k <= 3.
    pub fn deriv(&self, k: usize) -> T {
        let fact = [1.0, 1.0, 2.0, 6.0][k];
        self.0[k] * T::lit(fact)
    }

    /// Composes with an outer function whose value and first three
    /// derivatives at `self.0[0]` are `d`.
    fn compose(self, d: [T; 4]) -> Self {
        let u = Jet([T::zero(), self.0[1], self.0[2], self.0[3]]);
        let u2 = u * u;
        let u3 = u2 * u;
        let half = T::lit(0.5);
        let sixth = T::lit(1.0 / 6.0);
        let mut out = [d[0], T::zero(), T::zero(), T::zero()];
        for i in 1..4 {
            out[i] = d[1] * u.0[i] + d[2] * half * u2.0[i] + d[3] * sixth * u3.0[i];
        }
        Jet(out)
    }

    pub fn exp(self) -> Self {
        let e = self.0[0].exp();
        self.compose([e, e, e, e])
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.0[0].sin_cos();
        self.compose([s, c, -s, -c])
    }

    pub fn recip(self) -> Self {
        let x = self.0[0];
        let r = x.recip();
        let r2 = r * r;
        self.compose([r, -r2, T::lit(2.0) * r2 * r, T::lit(-6.0) * r2 * r2])
    }
}

impl<T: Scalar> Add for Jet<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Jet([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2], self.0[3] + o.0[3]])
    }
}

impl<T: Scalar> Sub for Jet<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<T: Scalar> Neg for Jet<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Jet(self.0.map(|v| -v))
    }
}

impl<T: Scalar> Mul for Jet<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (a, b) = (self.0, o.0);
        Jet([
            a[0] * b[0],
            a[0] * b[1] + a[1] * b[0],
            a[0] * b[2] + a[1] * b[1] + a[2] * b[0],
            a[0] * b[3] + a[1] * b[2] + a[2] * b[1] + a[3] * b[0],
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_square_matches_hand_derivatives() {
        // d/dx e^{x^2} = 2x e^{x^2}, second 2(1+2x^2)e^{x^2}, third 4x(3+2x^2)e^{x^2}
        let x = 0.7f64;
        let j = (Jet::var(x) * Jet::var(x)).exp();
        let e = (x * x).exp();
        assert!((j.deriv(1) - 2.0 * x * e).abs() < 1e-13);
        assert!((j.deriv(2) - 2.0 * (1.0 + 2.0 * x * x) * e).abs() < 1e-12);
        assert!((j.deriv(3) - 4.0 * x * (3.0 + 2.0 * x * x) * e).abs() < 1e-12);
    }

    #[test]
    fn sin_of_recip() {
        // g = sin(1/x): g' = -cos(1/x)/x^2
        let x = 0.4f64;
        let j = Jet::var(x).recip().sin();
        assert!((j.deriv(1) + (1.0 / x).cos() / (x * x)).abs() < 1e-12);
    }
}
