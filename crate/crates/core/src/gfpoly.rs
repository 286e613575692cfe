//! Polynomials over a prime field `F_b` and truncated Laurent expansions of
//! rational functions in `F_b((x^{-1}))`.
//!
//! Everything here is exact. Coefficients are stored lowest degree first and
//! the zero polynomial has no coefficients at all.

use std::fmt;

use crate::error::{Error, Result};

/// A prime `b`, checked at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldBase(u32);

impl FieldBase {
    pub const TWO: FieldBase = FieldBase(2);
    pub const THREE: FieldBase = FieldBase(3);

    pub fn new(b: u32) -> Result<Self> {
        // products of two digits must fit in u32
        if b < 2 || b > u16::MAX as u32 || !(2..).take_while(|d| d * d <= b).all(|d| !b.is_multiple_of(d)) {
            return Err(Error::NotPrime(b));
        }
        Ok(FieldBase(b))
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    #[inline]
    fn add(self, a: u32, c: u32) -> u32 {
        (a + c) % self.0
    }

    #[inline]
    fn sub(self, a: u32, c: u32) -> u32 {
        (a + self.0 - c) % self.0
    }

    #[inline]
    fn mul(self, a: u32, c: u32) -> u32 {
        a * c % self.0
    }

    fn inv(self, a: u32) -> u32 {
        debug_assert!(!a.is_multiple_of(self.0));
        // Fermat: a^(b-2)
        let (mut acc, mut base, mut e) = (1u32, a % self.0, self.0 - 2);
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        acc
    }

    /// `b^k`, or `None` on u64 overflow.
    pub fn pow(self, k: u32) -> Option<u64> {
        (self.0 as u64).checked_pow(k)
    }

    /// Largest digit count `P` with `b^P` representable in a u64.
    pub fn max_u64_digits(self) -> u32 {
        let mut p = 0;
        while self.pow(p + 1).is_some() {
            p += 1;
        }
        p
    }
}

impl fmt::Display for FieldBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A polynomial over `F_b`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PolyGF {
    base: FieldBase,
    coeffs: Vec<u32>,
}

impl PolyGF {
    /// Reduces every coefficient mod `b` and strips leading zeros.
    pub fn new(base: FieldBase, coeffs: impl Into<Vec<u32>>) -> Self {
        let mut coeffs: Vec<u32> = coeffs.into();
        for c in &mut coeffs {
            *c %= base.get();
        }
        let mut p = PolyGF { base, coeffs };
        p.normalize();
        p
    }

    pub fn zero(base: FieldBase) -> Self {
        PolyGF { base, coeffs: Vec::new() }
    }

    pub fn one(base: FieldBase) -> Self {
        PolyGF { base, coeffs: vec![1] }
    }

    /// `c x^k`
    pub fn monomial(base: FieldBase, c: u32, k: usize) -> Self {
        let mut coeffs = vec![0; k + 1];
        coeffs[k] = c;
        PolyGF::new(base, coeffs)
    }

    /// The polynomial whose coefficients are the base-`b` digits of `k`:
    /// `k = κ_0 + κ_1 b + ...` maps to `κ_0 + κ_1 x + ...`.
    pub fn from_int(mut k: u64, base: FieldBase) -> Self {
        let b = base.get() as u64;
        let mut coeffs = Vec::new();
        while k > 0 {
            coeffs.push((k % b) as u32);
            k /= b;
        }
        PolyGF { base, coeffs }
    }

    /// Inverse of [`PolyGF::from_int`]. Panics if the encoding overflows u64.
    pub fn to_int(&self) -> u64 {
        let b = self.base.get() as u64;
        self.coeffs
            .iter()
            .rev()
            .fold(0u64, |acc, &c| acc.checked_mul(b).and_then(|v| v.checked_add(c as u64)).expect("encoding overflows u64"))
    }

    fn normalize(&mut self) {
        while self.coeffs.last() == Some(&0) {
            self.coeffs.pop();
        }
    }

    pub fn base(&self) -> FieldBase {
        self.base
    }

    pub fn coeffs(&self) -> &[u32] {
        &self.coeffs
    }

    /// Coefficient of `x^k` (zero past the degree).
    pub fn coeff(&self, k: usize) -> u32 {
        self.coeffs.get(k).copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    fn leading(&self) -> u32 {
        *self.coeffs.last().unwrap_or(&0)
    }

    fn check_base(&self, other: &PolyGF) -> Result<()> {
        if self.base != other.base {
            return Err(Error::BaseMismatch(self.base.get(), other.base.get()));
        }
        Ok(())
    }

    pub fn add(&self, other: &PolyGF) -> Result<PolyGF> {
        self.check_base(other)?;
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs: Vec<u32> = (0..n).map(|k| self.base.add(self.coeff(k), other.coeff(k))).collect();
        let mut p = PolyGF { base: self.base, coeffs };
        p.normalize();
        Ok(p)
    }

    pub fn sub(&self, other: &PolyGF) -> Result<PolyGF> {
        self.check_base(other)?;
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs: Vec<u32> = (0..n).map(|k| self.base.sub(self.coeff(k), other.coeff(k))).collect();
        let mut p = PolyGF { base: self.base, coeffs };
        p.normalize();
        Ok(p)
    }

    pub fn mul(&self, other: &PolyGF) -> Result<PolyGF> {
        self.check_base(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(PolyGF::zero(self.base));
        }
        let f = self.base;
        let mut coeffs = vec![0u32; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (k, &c) in other.coeffs.iter().enumerate() {
                coeffs[i + k] = f.add(coeffs[i + k], f.mul(a, c));
            }
        }
        let mut p = PolyGF { base: f, coeffs };
        p.normalize();
        Ok(p)
    }

    /// Euclidean division: `self = q·d + r` with `deg r < deg d`.
    pub fn div_rem(&self, d: &PolyGF) -> Result<(PolyGF, PolyGF)> {
        self.check_base(d)?;
        let dd = d.degree().ok_or(Error::ZeroDivisor)?;
        let f = self.base;
        let mut rem = self.coeffs.clone();
        if rem.len() <= dd {
            return Ok((PolyGF::zero(f), self.clone()));
        }
        let inv = f.inv(d.leading());
        let mut quot = vec![0u32; rem.len() - dd];
        for shift in (0..quot.len()).rev() {
            let c = f.mul(rem[shift + dd], inv);
            if c == 0 {
                continue;
            }
            quot[shift] = c;
            for (k, &dk) in d.coeffs.iter().enumerate() {
                rem[shift + k] = f.sub(rem[shift + k], f.mul(c, dk));
            }
        }
        rem.truncate(dd);
        let mut q = PolyGF { base: f, coeffs: quot };
        let mut r = PolyGF { base: f, coeffs: rem };
        q.normalize();
        r.normalize();
        Ok((q, r))
    }

    pub fn rem(&self, d: &PolyGF) -> Result<PolyGF> {
        Ok(self.div_rem(d)?.1)
    }

    /// `(self·c) mod p`.
    pub fn mul_mod(&self, c: &PolyGF, p: &PolyGF) -> Result<PolyGF> {
        self.check_base(p)?;
        if p.is_zero() {
            return Err(Error::ZeroDivisor);
        }
        self.mul(c)?.rem(p)
    }

    /// Trial division by every monic polynomial of degree `1..=deg/2`.
    pub fn is_irreducible(&self) -> Result<bool> {
        let deg = match self.degree() {
            Some(d) if d >= 1 => d,
            _ => return Err(Error::ConstantPolynomial),
        };
        let b = self.base.get() as u64;
        for d in 1..=deg / 2 {
            let lo = b.pow(d as u32);
            for k in lo..2 * lo {
                if self.rem(&PolyGF::from_int(k, self.base))?.is_zero() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

impl fmt::Debug for PolyGF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self} (F_{})", self.base)
    }
}

impl fmt::Display for PolyGF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let mut first = true;
        for (k, &c) in self.coeffs.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            match (k, c) {
                (0, c) => write!(f, "{c}")?,
                (1, 1) => f.write_str("x")?,
                (1, c) => write!(f, "{c}x")?,
                (k, 1) => write!(f, "x^{k}")?,
                (k, c) => write!(f, "{c}x^{k}")?,
            }
        }
        Ok(())
    }
}

/// A finite base-`b` expansion `0.t_1 t_2 ... t_m`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DigitString {
    base: FieldBase,
    digits: Vec<u32>,
}

impl DigitString {
    pub fn new(base: FieldBase, digits: Vec<u32>) -> Result<Self> {
        if let Some(&d) = digits.iter().find(|&&d| d >= base.get()) {
            return Err(Error::Config(format!("digit {d} out of range for base {base}")));
        }
        Ok(DigitString { base, digits })
    }

    pub fn zeros(base: FieldBase, m: usize) -> Self {
        DigitString { base, digits: vec![0; m] }
    }

    /// The `m` leading digits of the fixed-point integer `value / b^m`.
    pub fn from_fixed(base: FieldBase, mut value: u128, m: usize) -> Self {
        let b = base.get() as u128;
        let mut digits = vec![0u32; m];
        for d in digits.iter_mut().rev() {
            *d = (value % b) as u32;
            value /= b;
        }
        debug_assert_eq!(value, 0, "value does not fit in {m} digits");
        DigitString { base, digits }
    }

    pub fn base(&self) -> FieldBase {
        self.base
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn precision(&self) -> usize {
        self.digits.len()
    }

    /// `t_1 b^{m-1} + ... + t_m`, the numerator of `v_m` over `b^m`.
    /// `None` if `b^m` does not fit in a u128.
    pub fn fixed_point(&self) -> Option<u128> {
        let b = self.base.get() as u128;
        self.digits.iter().try_fold(0u128, |acc, &d| acc.checked_mul(b)?.checked_add(d as u128))
    }

    /// `v_m` as an exact fraction `(numerator, b^m)`.
    pub fn to_rational(&self) -> Option<(u128, u128)> {
        let den = (self.base.get() as u128).checked_pow(self.digits.len() as u32)?;
        Some((self.fixed_point()?, den))
    }

    /// Nearest-ish `f64`, accumulated from the least significant digit up.
    pub fn to_f64(&self) -> f64 {
        let inv = 1.0 / self.base.get() as f64;
        self.digits.iter().rev().fold(0.0, |acc, &d| (acc + d as f64) * inv)
    }
}

impl fmt::Debug for DigitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0.{}_{}", self, self.base)
    }
}

impl fmt::Display for DigitString {
    /// Digits only, most significant first. Bases above 10 separate digits with `:`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.digits.iter().enumerate() {
            if self.base.get() > 10 && i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

/// The digits `t_1..t_m` of `num/den = Σ_{l≥w} t_l x^{-l}` by formal long division.
/// Terms with `l < 1` (the polynomial part) are discarded.
pub fn laurent_digits(num: &PolyGF, den: &PolyGF, m: usize) -> Result<DigitString> {
    num.check_base(den)?;
    let d = den.degree().ok_or(Error::ZeroDivisor)?;
    let f = num.base;
    let r = num.rem(den)?;
    let inv = f.inv(den.leading());
    // working remainder, always of degree ≤ d after the shift
    let mut rem = vec![0u32; d + 1];
    rem[..r.coeffs.len()].copy_from_slice(&r.coeffs);
    let mut digits = Vec::with_capacity(m);
    for _ in 0..m {
        rem.rotate_right(1); // multiply by x; the top slot was zero
        let t = f.mul(rem[d], inv);
        if t != 0 {
            for (k, &dk) in den.coeffs.iter().enumerate() {
                rem[k] = f.sub(rem[k], f.mul(t, dk));
            }
        }
        debug_assert_eq!(rem[d], 0);
        digits.push(t);
    }
    Ok(DigitString { base: f, digits })
}

/// `v_m(d) = Σ t_l b^{-l}` as the exact pair `(numerator, b^m)`.
///
/// Panics if `b^m` exceeds u128; use [`DigitString::to_rational`] to handle that case.
pub fn v_m(d: &DigitString) -> (u128, u128) {
    d.to_rational().expect("precision too large for an exact u128 fraction")
}
