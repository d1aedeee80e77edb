//! Forward-mode dual numbers that nest: `Dual<Dual<f64>>` carries mixed second
//! partials, four levels carry the fourth derivatives a Kähler potential needs
//! for its curvature tensor.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Minimal real-scalar interface shared by `f64` and every nesting of [`Dual`].
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + std::fmt::Debug
{
    fn from_f64(v: f64) -> Self;
    /// Innermost real part.
    fn value(&self) -> f64;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Self { re, eps: T::zero() }
    }

    pub fn variable(re: T) -> Self {
        Self { re, eps: T::one() }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        Self::new(
            self.re * inv,
            (self.eps * o.re - self.re * o.eps) * inv * inv,
        )
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.eps / (s + s))
    }
}

/// Lift a plain coordinate vector into `T` with no active perturbation.
pub fn lift<T: Scalar>(x: &[f64]) -> Vec<T> {
    x.iter().map(|&v| T::from_f64(v)).collect()
}

/// Directional derivative of `f` at `x` along `dir` (one extra nesting level).
pub fn directional<T, F>(f: F, x: &[T], dir: &[f64]) -> T
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Dual<T>,
{
    let xs: Vec<Dual<T>> = x
        .iter()
        .zip(dir)
        .map(|(&v, &d)| Dual::new(v, T::from_f64(d)))
        .collect();
    f(&xs).eps
}

/// Partial derivative of `f` with respect to coordinate `i`.
pub fn partial<T, F>(f: F, x: &[T], i: usize) -> T
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Dual<T>,
{
    let xs: Vec<Dual<T>> = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k == i {
                Dual::variable(v)
            } else {
                Dual::constant(v)
            }
        })
        .collect();
    f(&xs).eps
}

/// Mixed second partial `∂_i ∂_j f` via two nested dual levels.
pub fn second_partial<T, F>(f: F, x: &[T], i: usize, j: usize) -> T
where
    T: Scalar,
    F: Fn(&[Dual<Dual<T>>]) -> Dual<Dual<T>>,
{
    let xs: Vec<Dual<Dual<T>>> = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let inner = if k == j {
                Dual::variable(v)
            } else {
                Dual::constant(v)
            };
            let outer_eps = if k == i { T::one() } else { T::zero() };
            Dual::new(inner, Dual::constant(outer_eps))
        })
        .collect();
    f(&xs).eps.eps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs_potential<T: Scalar>(x: &[T]) -> T {
        let s = x.iter().fold(T::zero(), |acc, &v| acc + v * v);
        (T::one() + s).ln().scale(2.0)
    }

    #[test]
    fn first_and_second_partials_match_closed_form() {
        let x = [0.3, -0.7];
        let s = 0.3f64 * 0.3 + 0.7 * 0.7;
        let d0 = partial(fs_potential, &x, 0);
        assert!((d0 - 4.0 * 0.3 / (1.0 + s)).abs() < 1e-14);
        // ∂x∂y of 2 ln(1 + x² + y²) = -8xy / (1+s)²
        let dxy = second_partial(fs_potential, &x, 0, 1);
        assert!((dxy - (-8.0 * 0.3 * -0.7) / (1.0 + s).powi(2)).abs() < 1e-14);
    }

    #[test]
    fn nesting_is_symmetric() {
        let x = [0.2, 0.5];
        let f = |v: &[Dual<Dual<f64>>]| (v[0] * v[1] * v[1]).exp();
        let a = second_partial(f, &x, 0, 1);
        let b = second_partial(f, &x, 1, 0);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn sqrt_and_division_derivatives() {
        let f = |v: &[Dual<f64>]| v[0].sqrt() / (v[0] + Dual::from_f64(1.0));
        let x = [4.0];
        let d = partial(f, &x, 0);
        // d/dx sqrt(x)/(x+1) = (1/(2 sqrt x)(x+1) - sqrt x)/(x+1)^2
        let expected = (0.25 * 5.0 - 2.0) / 25.0;
        assert!((d - expected).abs() < 1e-14);
    }
}
