//! Numeric carrier for transform evaluation.
//!
//! Every transform in the crate is written once against [`Scalar`] and is
//! evaluated either at complex points (`Complex64`, used for inversion and
//! pointwise checks) or on truncated Taylor series ([`Taylor`], used to pull
//! exact low-order moments out of the same formulas by forward-mode
//! differentiation at the origin).

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
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
    fn from_f64(x: f64) -> Self;
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;

    /// The function value (constant term).
    fn value(&self) -> Complex64;

    /// Replace the function value, keeping any higher-order terms.
    fn with_value(self, v: f64) -> Self;

    /// Convergence metric between successive iterates.
    fn distance(&self, other: &Self) -> f64;

    /// How far a product factor is from 1, measured against the running
    /// product so that higher-order terms are judged on their own scale.
    fn factor_deviation(&self, accumulated: &Self) -> f64;

    /// `num / den` where both may vanish at the expansion point.
    fn div_removable(num: Self, den: Self) -> Self {
        num / den
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn value_is_zero(&self) -> bool {
        let v = self.value();
        v.re == 0.0 && v.im == 0.0
    }

    fn is_finite(&self) -> bool;
}

impl Scalar for Complex64 {
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn powi(self, n: i32) -> Self {
        Complex64::powi(&self, n)
    }
    fn value(&self) -> Complex64 {
        *self
    }
    fn with_value(self, v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
    fn factor_deviation(&self, _accumulated: &Self) -> f64 {
        (self - 1.0).norm()
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Number of Taylor coefficients carried.
pub const TAYLOR_LEN: usize = 6;

/// Truncated power series `c0 + c1 x + ... + c5 x^5` in one real variable.
///
/// Coefficients are Taylor coefficients, not derivatives: `c[k] = f^(k)(0) / k!`.
/// Cancelling a common zero drops the top coefficient, which then becomes NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taylor {
    pub c: [f64; TAYLOR_LEN],
}

impl Taylor {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; TAYLOR_LEN];
        c[0] = v;
        Taylor { c }
    }

    /// The independent variable expanded at zero.
    pub fn variable() -> Self {
        let mut c = [0.0; TAYLOR_LEN];
        c[1] = 1.0;
        Taylor { c }
    }

    /// k-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        let fact: f64 = (1..=k).map(|j| j as f64).product();
        self.c[k] * fact
    }

    /// Number of leading coefficients that are finite.
    pub fn valid_terms(&self) -> usize {
        self.c.iter().take_while(|x| x.is_finite()).count()
    }

    /// Evaluate the first `terms` coefficients as a polynomial at `w`.
    pub fn eval_poly(&self, w: Complex64, terms: usize) -> Complex64 {
        let n = terms.min(TAYLOR_LEN);
        let mut acc = Complex64::new(0.0, 0.0);
        for k in (0..n).rev() {
            acc = acc * w + self.c[k];
        }
        acc
    }

    fn shift_down(self) -> Self {
        let mut c = [f64::NAN; TAYLOR_LEN];
        c[..TAYLOR_LEN - 1].copy_from_slice(&self.c[1..]);
        Taylor { c }
    }
}

impl Add for Taylor {
    type Output = Taylor;
    fn add(self, rhs: Taylor) -> Taylor {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        Taylor { c }
    }
}

impl Sub for Taylor {
    type Output = Taylor;
    fn sub(self, rhs: Taylor) -> Taylor {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
        Taylor { c }
    }
}

impl Neg for Taylor {
    type Output = Taylor;
    fn neg(self) -> Taylor {
        Taylor { c: self.c.map(|x| -x) }
    }
}

impl Mul for Taylor {
    type Output = Taylor;
    fn mul(self, rhs: Taylor) -> Taylor {
        let mut c = [0.0; TAYLOR_LEN];
        for k in 0..TAYLOR_LEN {
            let mut s = 0.0;
            for j in 0..=k {
                s += self.c[j] * rhs.c[k - j];
            }
            c[k] = s;
        }
        Taylor { c }
    }
}

impl Div for Taylor {
    type Output = Taylor;
    fn div(self, rhs: Taylor) -> Taylor {
        let mut q = [0.0; TAYLOR_LEN];
        let b0 = rhs.c[0];
        for k in 0..TAYLOR_LEN {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= rhs.c[j] * q[k - j];
            }
            q[k] = s / b0;
        }
        Taylor { c: q }
    }
}

impl Add<f64> for Taylor {
    type Output = Taylor;
    fn add(mut self, rhs: f64) -> Taylor {
        self.c[0] += rhs;
        self
    }
}

impl Sub<f64> for Taylor {
    type Output = Taylor;
    fn sub(mut self, rhs: f64) -> Taylor {
        self.c[0] -= rhs;
        self
    }
}

impl Mul<f64> for Taylor {
    type Output = Taylor;
    fn mul(self, rhs: f64) -> Taylor {
        Taylor { c: self.c.map(|x| x * rhs) }
    }
}

impl Div<f64> for Taylor {
    type Output = Taylor;
    fn div(self, rhs: f64) -> Taylor {
        Taylor { c: self.c.map(|x| x / rhs) }
    }
}

impl Scalar for Taylor {
    fn from_f64(x: f64) -> Self {
        Taylor::constant(x)
    }

    fn exp(self) -> Self {
        let mut e = [0.0; TAYLOR_LEN];
        e[0] = self.c[0].exp();
        for k in 1..TAYLOR_LEN {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Taylor { c: e }
    }

    fn powi(self, n: i32) -> Self {
        if n < 0 {
            return Taylor::one() / self.powi(-n);
        }
        let mut base = self;
        let mut acc = Taylor::one();
        let mut m = n as u32;
        while m > 0 {
            if m & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            m >>= 1;
        }
        acc
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.c[0], 0.0)
    }

    fn with_value(mut self, v: f64) -> Self {
        self.c[0] = v;
        self
    }

    fn distance(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for k in 0..TAYLOR_LEN {
            let scale = self.c[k].abs().max(other.c[k].abs()).max(1.0);
            d = d.max((self.c[k] - other.c[k]).abs() / scale);
        }
        d
    }

    fn factor_deviation(&self, accumulated: &Self) -> f64 {
        let mut d: f64 = (self.c[0] - 1.0).abs();
        for k in 1..TAYLOR_LEN {
            let scale = accumulated.c[k].abs().max(1.0);
            d = d.max(self.c[k].abs() / scale);
        }
        d
    }

    fn div_removable(num: Self, den: Self) -> Self {
        if den.c[0] == 0.0 {
            num.shift_down() / den.shift_down()
        } else {
            num / den
        }
    }

    fn is_finite(&self) -> bool {
        self.c[0].is_finite()
    }
}
