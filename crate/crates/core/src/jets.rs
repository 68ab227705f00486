//! Second-order truncated Taylor arithmetic in four variables.
//!
//! A [`Jet2`] carries the value, gradient and (symmetric) Hessian of a scalar
//! function at a point. Arithmetic on jets applies the Leibniz and chain rules
//! truncated at second order, so composing elementary operations yields exact
//! first and second derivatives up to rounding.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Number of independent coordinates.
pub const DIM: usize = 4;
/// Number of stored Hessian entries (upper triangle including the diagonal).
pub const HESS_LEN: usize = 10;

/// Position of the Hessian entry `(a, b)` in the packed storage.
#[inline]
pub const fn sym_index(a: usize, b: usize) -> usize {
    let (i, j) = if a <= b { (a, b) } else { (b, a) };
    i * (7 - i) / 2 + j
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: [f64; DIM],
    pub hess: [f64; HESS_LEN],
}

impl Default for Jet2 {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl Jet2 {
    pub const fn constant(value: f64) -> Self {
        Self {
            value,
            grad: [0.0; DIM],
            hess: [0.0; HESS_LEN],
        }
    }

    /// The coordinate function `x^a` evaluated at `x`.
    pub fn seed(x: &[f64; DIM], a: usize) -> Self {
        let mut grad = [0.0; DIM];
        grad[a] = 1.0;
        Self {
            value: x[a],
            grad,
            hess: [0.0; HESS_LEN],
        }
    }

    /// Seeds all four coordinates at once.
    pub fn variables(x: &[f64; DIM]) -> [Self; DIM] {
        std::array::from_fn(|a| Self::seed(x, a))
    }

    #[inline]
    pub fn hess_at(&self, a: usize, b: usize) -> f64 {
        self.hess[sym_index(a, b)]
    }

    /// Full 4x4 Hessian.
    pub fn hessian(&self) -> [[f64; DIM]; DIM] {
        std::array::from_fn(|a| std::array::from_fn(|b| self.hess_at(a, b)))
    }

    pub fn laplacian(&self, axes: std::ops::Range<usize>) -> f64 {
        axes.map(|a| self.hess_at(a, a)).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            value: self.value * s,
            grad: self.grad.map(|g| g * s),
            hess: self.hess.map(|h| h * s),
        }
    }

    /// Applies a scalar function given its value and first two derivatives at
    /// `self.value`.
    #[inline]
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::constant(f0);
        for a in 0..DIM {
            out.grad[a] = f1 * self.grad[a];
        }
        for a in 0..DIM {
            for b in a..DIM {
                let k = sym_index(a, b);
                out.hess[k] = f1 * self.hess[k] + f2 * self.grad[a] * self.grad[b];
            }
        }
        out
    }

    /// Applies a function of two jets given its partial derivatives
    /// `(f, f_u, f_v, f_uu, f_uv, f_vv)` at `(u.value, v.value)`.
    #[allow(clippy::too_many_arguments)]
    fn chain2(u: &Self, v: &Self, f: f64, fu: f64, fv: f64, fuu: f64, fuv: f64, fvv: f64) -> Self {
        let mut out = Self::constant(f);
        for a in 0..DIM {
            out.grad[a] = fu * u.grad[a] + fv * v.grad[a];
        }
        for a in 0..DIM {
            for b in a..DIM {
                let k = sym_index(a, b);
                out.hess[k] = fu * u.hess[k]
                    + fv * v.hess[k]
                    + fuu * u.grad[a] * u.grad[b]
                    + fvv * v.grad[a] * v.grad[b]
                    + fuv * (u.grad[a] * v.grad[b] + v.grad[a] * u.grad[b]);
            }
        }
        out
    }

    pub fn recip(&self) -> Result<Self> {
        let x = self.value;
        if x == 0.0 || !x.is_finite() {
            return Err(Error::Domain { op: "division", value: x });
        }
        let r = 1.0 / x;
        Ok(self.chain(r, -r * r, 2.0 * r * r * r))
    }

    pub fn div(&self, rhs: &Self) -> Result<Self> {
        Ok(*self * rhs.recip()?)
    }

    /// `self^p` for a constant exponent. Integer exponents accept any base
    /// (nonzero when negative); fractional exponents need a positive base.
    pub fn powf(&self, p: f64) -> Result<Self> {
        let x = self.value;
        if p == 0.0 {
            return Ok(Self::constant(1.0));
        }
        if p == 1.0 {
            return Ok(*self);
        }
        let integer = p.fract() == 0.0 && p.abs() < 1e9;
        if integer {
            if p < 0.0 && x == 0.0 {
                return Err(Error::Domain { op: "pow", value: x });
            }
            let n = p as i32;
            let f0 = x.powi(n);
            let f1 = if n == 1 { 1.0 } else { p * x.powi(n - 1) };
            let f2 = match n {
                1 => 0.0,
                2 => 2.0,
                _ => p * (p - 1.0) * x.powi(n - 2),
            };
            Ok(self.chain(f0, f1, f2))
        } else {
            if x <= 0.0 {
                return Err(Error::Domain { op: "pow", value: x });
            }
            let f0 = x.powf(p);
            Ok(self.chain(f0, p * f0 / x, p * (p - 1.0) * f0 / (x * x)))
        }
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn sqrt(&self) -> Result<Self> {
        let x = self.value;
        if x <= 0.0 || !x.is_finite() {
            return Err(Error::Domain { op: "sqrt", value: x });
        }
        let s = x.sqrt();
        Ok(self.chain(s, 0.5 / s, -0.25 / (s * x)))
    }

    /// Two-argument arctangent `atan2(self, x)`.
    pub fn atan2(&self, x: &Self) -> Result<Self> {
        let (yv, xv) = (self.value, x.value);
        let r2 = xv * xv + yv * yv;
        if r2 == 0.0 {
            return Err(Error::Domain { op: "atan2", value: 0.0 });
        }
        let r4 = r2 * r2;
        Ok(Self::chain2(
            self,
            x,
            yv.atan2(xv),
            xv / r2,
            -yv / r2,
            -2.0 * xv * yv / r4,
            (yv * yv - xv * xv) / r4,
            2.0 * xv * yv / r4,
        ))
    }

    /// `k`-th derivative of the flat function `exp(-1/u)` (zero for `u <= 0`).
    pub fn flat(&self, k: u32) -> Self {
        let u = self.value;
        self.chain(flat_derivative(k, u), flat_derivative(k + 1, u), flat_derivative(k + 2, u))
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value + rhs.value,
            grad: std::array::from_fn(|a| self.grad[a] + rhs.grad[a]),
            hess: std::array::from_fn(|k| self.hess[k] + rhs.hess[k]),
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2 {
            value: self.value - rhs.value,
            grad: std::array::from_fn(|a| self.grad[a] - rhs.grad[a]),
            hess: std::array::from_fn(|k| self.hess[k] - rhs.hess[k]),
        }
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        let mut out = Jet2::constant(self.value * rhs.value);
        for a in 0..DIM {
            out.grad[a] = self.grad[a] * rhs.value + self.value * rhs.grad[a];
        }
        for a in 0..DIM {
            for b in a..DIM {
                let k = sym_index(a, b);
                out.hess[k] = self.hess[k] * rhs.value
                    + self.value * rhs.hess[k]
                    + self.grad[a] * rhs.grad[b]
                    + self.grad[b] * rhs.grad[a];
            }
        }
        out
    }
}

/// Highest derivative order of the flat function that is tabulated.
const MAX_FLAT_ORDER: usize = 24;

/// Coefficients (in powers of `v = 1/u`) of the polynomials `R_k` with
/// `d^k/du^k exp(-1/u) = R_k(1/u) exp(-1/u)`.
fn flat_polynomials() -> &'static [Vec<f64>] {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // R_{k+1}(v) = v^2 (R_k(v) - R_k'(v))
        let mut table = vec![vec![1.0]];
        for k in 0..MAX_FLAT_ORDER {
            let prev = &table[k];
            let mut next = vec![0.0; prev.len() + 2];
            for (i, &c) in prev.iter().enumerate() {
                next[i + 2] += c;
                if i > 0 {
                    next[i + 1] -= i as f64 * c;
                }
            }
            table.push(next);
        }
        table
    })
}

/// `d^k/du^k exp(-1/u)` for `u > 0`, and exactly zero for `u <= 0`.
pub fn flat_derivative(k: u32, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let v = 1.0 / u;
    // exp(-v) underflows long before the polynomial can overflow
    if v > 740.0 {
        return 0.0;
    }
    let table = flat_polynomials();
    let coeffs = table
        .get(k as usize)
        .expect("flat function derivative order out of range");
    let poly = coeffs.iter().rev().fold(0.0, |acc, &c| acc * v + c);
    poly * (-v).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn packed_indices_cover_upper_triangle() {
        let mut seen = [false; HESS_LEN];
        for a in 0..DIM {
            for b in a..DIM {
                seen[sym_index(a, b)] = true;
                assert_eq!(sym_index(a, b), sym_index(b, a));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn square_of_coordinate() {
        let x = [0.0, 3.0, 0.0, 0.0];
        let x1 = Jet2::seed(&x, 1);
        let f = x1 * x1;
        assert_eq!(f.value, 9.0);
        assert_eq!(f.grad, [0.0, 6.0, 0.0, 0.0]);
        for a in 0..DIM {
            for b in a..DIM {
                let expect = if (a, b) == (1, 1) { 2.0 } else { 0.0 };
                assert_eq!(f.hess_at(a, b), expect);
            }
        }
    }

    #[test]
    fn sine_at_origin() {
        let f = Jet2::seed(&[0.0; 4], 0).sin();
        assert_eq!(f.value, 0.0);
        assert_eq!(f.grad, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.hess_at(0, 0), 0.0);
    }

    #[test]
    fn exp_of_product() {
        let x = [0.0, 1.0, 1.0, 0.0];
        let f = (Jet2::seed(&x, 1) * Jet2::seed(&x, 2)).exp();
        let e = std::f64::consts::E;
        assert_relative_eq!(f.value, e, max_relative = 1e-15);
        assert_relative_eq!(f.grad[1], e, max_relative = 1e-15);
        assert_relative_eq!(f.grad[2], e, max_relative = 1e-15);
        assert_relative_eq!(f.hess_at(1, 2), 2.0 * e, max_relative = 1e-15);
        assert_relative_eq!(f.hess_at(1, 1), e, max_relative = 1e-15);
        assert_relative_eq!(f.hess_at(2, 2), e, max_relative = 1e-15);
    }

    #[test]
    fn domain_errors() {
        let zero = Jet2::constant(0.0);
        assert!(matches!(zero.recip(), Err(Error::Domain { op: "division", .. })));
        assert!(matches!(zero.sqrt(), Err(Error::Domain { op: "sqrt", .. })));
        assert!(matches!(
            Jet2::constant(-1.0).powf(0.5),
            Err(Error::Domain { op: "pow", .. })
        ));
        assert!(Jet2::constant(-2.0).powf(3.0).is_ok());
        assert!(matches!(
            zero.atan2(&zero),
            Err(Error::Domain { op: "atan2", .. })
        ));
    }

    #[test]
    fn flat_function_is_smooth_at_origin() {
        for k in 0..6 {
            assert_eq!(flat_derivative(k, 0.0), 0.0);
            assert_eq!(flat_derivative(k, -0.3), 0.0);
            assert!(flat_derivative(k, 1e-3).abs() < 1e-300);
        }
        assert_relative_eq!(flat_derivative(0, 1.0), (-1.0f64).exp());
        // d/du exp(-1/u) = exp(-1/u)/u^2
        assert_relative_eq!(flat_derivative(1, 0.5), 4.0 * (-2.0f64).exp(), max_relative = 1e-14);
        // d2/du2 = exp(-1/u) (1/u^4 - 2/u^3)
        assert_relative_eq!(
            flat_derivative(2, 0.5),
            (16.0 - 16.0) * (-2.0f64).exp(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            flat_derivative(2, 2.0),
            (1.0 / 16.0 - 2.0 / 8.0) * (-0.5f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn flat_derivatives_match_difference_quotients() {
        let h = 1e-6;
        for k in 0..8 {
            for &u in &[0.2, 0.45, 0.9, 1.7] {
                let fd = (flat_derivative(k, u + h) - flat_derivative(k, u - h)) / (2.0 * h);
                let exact = flat_derivative(k + 1, u);
                assert_relative_eq!(fd, exact, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }
}
