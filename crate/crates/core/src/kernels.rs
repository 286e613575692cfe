//! Unanchored Sobolev kernels of integer smoothness and Bernoulli polynomials.

use std::sync::OnceLock;

use num_rational::Ratio;

use crate::coords::CoordSet;
use crate::error::{Error, Result};

type Q = Ratio<i128>;

/// Largest supported smoothness.
pub const MAX_CHI: usize = 6;
/// Largest tabulated Bernoulli degree.
pub const MAX_DEGREE: usize = 2 * MAX_CHI;

/// Default anchor coordinate; minimizes `k_1(a, a)`.
pub const DEFAULT_ANCHOR: f64 = 0.5;

fn binom(n: usize, k: usize) -> i128 {
    (0..k).fold(1i128, |acc, i| acc * (n - i) as i128 / (i + 1) as i128)
}

fn factorial(n: usize) -> i128 {
    (1..=n as i128).product()
}

/// Bernoulli numbers `B_0..=B_n` with `B_1 = -1/2`.
fn bernoulli_numbers(n: usize) -> Vec<Q> {
    let mut b = vec![Q::from_integer(1)];
    for k in 1..=n {
        let s: Q = (0..k).map(|j| b[j] * Q::from_integer(binom(k + 1, j))).sum();
        b.push(-s / Q::from_integer(k as i128 + 1));
    }
    b
}

/// Exact coefficients of `B_τ(x)` in ascending powers, for `τ = 0..=MAX_DEGREE`.
fn rational_table() -> &'static Vec<Vec<Q>> {
    static TABLE: OnceLock<Vec<Vec<Q>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let nums = bernoulli_numbers(MAX_DEGREE);
        (0..=MAX_DEGREE)
            .map(|n| (0..=n).map(|p| Q::from_integer(binom(n, p)) * nums[n - p]).collect())
            .collect()
    })
}

fn float_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        rational_table()
            .iter()
            .map(|c| c.iter().map(|q| *q.numer() as f64 / *q.denom() as f64).collect())
            .collect()
    })
}

/// Exact rational coefficients of `B_τ`, ascending powers.
pub fn bernoulli_coefficients(tau: usize) -> Result<&'static [Q]> {
    rational_table().get(tau).map(Vec::as_slice).ok_or(Error::BernoulliDegree(tau))
}

/// `B_τ(x)`.
pub fn bernoulli(tau: usize, x: f64) -> Result<f64> {
    let c = float_table().get(tau).ok_or(Error::BernoulliDegree(tau))?;
    Ok(c.iter().rev().fold(0.0, |acc, &a| acc * x + a))
}

/// `k_χ(x, y) = Σ_{τ=1}^{χ} B_τ(x)B_τ(y)/(τ!)² + (−1)^{χ+1} B_{2χ}(|x−y|)/(2χ)!`.
pub fn k_chi(chi: usize, x: f64, y: f64) -> Result<f64> {
    if chi == 0 || chi > MAX_CHI {
        return Err(Error::BernoulliDegree(2 * chi));
    }
    let mut s = 0.0;
    for tau in 1..=chi {
        let f = factorial(tau) as f64;
        s += bernoulli(tau, x)? * bernoulli(tau, y)? / (f * f);
    }
    let sign = if chi % 2 == 1 { 1.0 } else { -1.0 };
    Ok(s + sign * bernoulli(2 * chi, (x - y).abs())? / factorial(2 * chi) as f64)
}

/// `Π_{j∈u} k_χ(x_j, y_j)`. Coordinate `j` is read from index `j − 1` of `x` and `y`.
pub fn k_u(chi: usize, u: &CoordSet, x: &[f64], y: &[f64]) -> Result<f64> {
    let mut p = 1.0;
    for j in u.iter() {
        let i = j as usize - 1;
        let (xi, yi) = match (x.get(i), y.get(i)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::MissingCoordinate(j)),
        };
        p *= k_chi(chi, xi, yi)?;
    }
    Ok(p)
}

fn poly_mul(a: &[Q], b: &[Q]) -> Vec<Q> {
    let mut out = vec![Q::from_integer(0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_integral01(a: &[Q]) -> Q {
    a.iter().enumerate().map(|(p, c)| c / Q::from_integer(p as i128 + 1)).sum()
}

/// Exact `∫₀¹ k_χ(x, x) dx`.
pub fn kernel_mean_m_exact(chi: usize) -> Result<Q> {
    if chi == 0 || chi > MAX_CHI {
        return Err(Error::BernoulliDegree(2 * chi));
    }
    let mut total = Q::from_integer(0);
    for tau in 1..=chi {
        let c = bernoulli_coefficients(tau)?;
        let f = Q::from_integer(factorial(tau));
        total += poly_integral01(&poly_mul(c, c)) / (f * f);
    }
    let diag = bernoulli_coefficients(2 * chi)?[0] / Q::from_integer(factorial(2 * chi));
    Ok(if chi % 2 == 1 { total + diag } else { total - diag })
}

/// `M = ∫₀¹ k_χ(x, x) dx`.
pub fn kernel_mean_m(chi: usize) -> Result<f64> {
    let q = kernel_mean_m_exact(chi)?;
    Ok(*q.numer() as f64 / *q.denom() as f64)
}

/// The unanchored Sobolev kernel of smoothness `χ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SobolevKernel {
    chi: usize,
}

impl SobolevKernel {
    pub fn new(chi: usize) -> Result<Self> {
        if chi == 0 || chi > MAX_CHI {
            return Err(Error::Config(format!("smoothness must lie in 1..={MAX_CHI}, got {chi}")));
        }
        Ok(SobolevKernel { chi })
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        k_chi(self.chi, x, y).expect("validated smoothness")
    }

    pub fn eval_u(&self, u: &CoordSet, x: &[f64], y: &[f64]) -> Result<f64> {
        k_u(self.chi, u, x, y)
    }

    pub fn diagnostics(&self, anchor: f64) -> KernelDiagnostics {
        KernelDiagnostics {
            m: kernel_mean_m(self.chi).expect("validated smoothness"),
            k_aa: self.eval(anchor, anchor),
        }
    }
}

/// Scalar kernel constants used by the planner.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelDiagnostics {
    /// `∫ k(x, x) dx`
    pub m: f64,
    /// `k(a, a)` at the anchor coordinate
    pub k_aa: f64,
}
