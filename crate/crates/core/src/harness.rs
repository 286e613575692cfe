//! Test integrands, weight presets, experiment configuration, convergence and
//! variance studies, and their CSV/JSON outputs.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cdalg::{
    cd_estimate, diagnostics_b, epsilon_dimension, plan_build, plan_cost, CostModel, PlannerOptions, RuleTemplate,
};
use crate::coords::CoordSet;
use crate::decomp::Integrand;
use crate::error::{Error, Result};
use crate::gfpoly::FieldBase;
use crate::kernels::{bernoulli, DEFAULT_ANCHOR};
use crate::quadrature::{replicate, run_rule, summarize, GeneratorCache, RuleKind, RuleSpec};
use crate::lattice::PointSet;
use crate::scramble::{interlaced_points, interlaced_scrambled_points, ScrambleConfig};
use crate::weights::{Entry, Singletons, WeightModel};

/// `B_2(x)/2`, mean zero with `∫B² = 1/720`.
pub fn half_b2(x: f64) -> f64 {
    0.5 * (x * x - x + 1.0 / 6.0)
}

/// `∫_0^1 (B_2(x)/2)² dx`
pub const HALF_B2_SQ_NORM: f64 = 1.0 / 720.0;

/// Integrands whose anchored components have closed-form integrals.
pub trait ComponentIntegrals: Integrand {
    /// `∫ f_{u,a}` over `[0,1]^{|u|}`.
    fn component_integral(&self, anchor: f64, u: &CoordSet) -> f64;
}

/// `I(f) − Σ_{u∈Q} ∫ f_{u,a}`, the bias of any algorithm that integrates the
/// components in `q` exactly and drops the rest.
pub fn exact_bias<F: ComponentIntegrals + ?Sized>(f: &F, q: impl IntoIterator<Item = CoordSet>, anchor: f64) -> Option<f64> {
    let i = f.known_integral()?;
    let parts: Vec<f64> = q.into_iter().map(|u| f.component_integral(anchor, &u)).collect();
    Some(i - crate::cdalg::neumaier_sum(parts))
}

/// `f ≡ value`.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl ComponentIntegrals for Constant {
    fn component_integral(&self, _: f64, u: &CoordSet) -> f64 {
        if u.is_empty() { self.0 } else { 0.0 }
    }
}

impl Integrand for Constant {
    fn eval(&self, _: f64, _: &[u32], _: &[f64]) -> f64 {
        self.0
    }

    fn declared_active(&self) -> Option<CoordSet> {
        Some(CoordSet::empty())
    }

    fn known_integral(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// `f(x) = Σ_s c_s Π_{j∈s} B(x_j)` with `B = B_2/2`. Every term with `s ≠ ∅` has
/// mean zero and distinct terms are orthogonal.
#[derive(Clone, Debug)]
pub struct SumOfProducts {
    terms: Vec<(CoordSet, f64)>,
    by_coord: HashMap<u32, Vec<usize>>,
    cached: (f64, f64),
}

impl SumOfProducts {
    pub fn new(terms: Vec<(CoordSet, f64)>) -> Self {
        let mut by_coord: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, (s, _)) in terms.iter().enumerate() {
            for j in s.iter() {
                by_coord.entry(j).or_default().push(i);
            }
        }
        let mut f = SumOfProducts { terms, by_coord, cached: (f64::NAN, 0.0) };
        f.cached = (DEFAULT_ANCHOR, f.full(DEFAULT_ANCHOR, &[], &[]));
        f
    }

    pub fn terms(&self) -> &[(CoordSet, f64)] {
        &self.terms
    }

    fn term(&self, i: usize, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        let (s, c) = &self.terms[i];
        let mut p = *c;
        for j in s.iter() {
            let x = coords.binary_search(&j).map_or(anchor, |k| values[k]);
            p *= half_b2(x);
        }
        p
    }

    fn full(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        (0..self.terms.len()).map(|i| self.term(i, anchor, coords, values)).sum()
    }

    /// `Σ_{s≠∅} c_s² 720^{−|s|}`
    pub fn variance(&self) -> f64 {
        self.terms.iter().filter(|(s, _)| !s.is_empty()).map(|(s, c)| c * c * HALF_B2_SQ_NORM.powi(s.len() as i32)).sum()
    }
}

impl ComponentIntegrals for SumOfProducts {
    /// `(−1)^{|u|} Σ_{s⊇u} c_s B(a)^{|s|}`
    fn component_integral(&self, anchor: f64, u: &CoordSet) -> f64 {
        let sign = if u.len().is_multiple_of(2) { 1.0 } else { -1.0 };
        let b = half_b2(anchor);
        let candidates: Box<dyn Iterator<Item = usize>> = match u.iter().next() {
            Some(j) => Box::new(self.by_coord.get(&j).into_iter().flatten().copied()),
            None => Box::new(0..self.terms.len()),
        };
        sign * candidates
            .filter(|&i| u.is_subset(&self.terms[i].0))
            .map(|i| self.terms[i].1 * b.powi(self.terms[i].0.len() as i32))
            .sum::<f64>()
    }
}

impl Integrand for SumOfProducts {
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        if anchor.to_bits() != self.cached.0.to_bits() {
            return self.full(anchor, coords, values);
        }
        let mut touched: Vec<usize> =
            coords.iter().filter_map(|j| self.by_coord.get(j)).flatten().copied().collect();
        touched.sort_unstable();
        touched.dedup();
        let mut v = self.cached.1;
        for i in touched {
            v += self.term(i, anchor, coords, values) - self.term(i, anchor, &[], &[]);
        }
        v
    }

    fn declared_active(&self) -> Option<CoordSet> {
        Some(self.terms.iter().fold(CoordSet::empty(), |acc, (s, _)| acc.union(s)))
    }

    fn known_integral(&self) -> Option<f64> {
        Some(self.terms.iter().filter(|(s, _)| s.is_empty()).map(|(_, c)| c).sum())
    }
}

/// `f(x) = Π_{j≤J} (1 + c_j B(x_j))` with `B = B_2/2`; the integral is 1.
#[derive(Clone, Debug)]
pub struct ProductForm {
    coeffs: Vec<f64>,
    anchor: f64,
    anchor_factors: Vec<f64>,
    anchor_product: f64,
}

impl ProductForm {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        // 1 + c·B stays positive for |c| < 24
        if coeffs.iter().any(|c| !c.is_finite() || c.abs() >= 24.0) {
            return Err(Error::Config("product-form coefficients must lie in (-24, 24)".into()));
        }
        let anchor = DEFAULT_ANCHOR;
        let anchor_factors: Vec<f64> = coeffs.iter().map(|c| 1.0 + c * half_b2(anchor)).collect();
        let anchor_product = anchor_factors.iter().product();
        Ok(ProductForm { coeffs, anchor, anchor_factors, anchor_product })
    }

    /// `c_j = j^{−p}` for `j ≤ len`.
    pub fn power_law(len: usize, p: f64) -> Result<Self> {
        Self::new((1..=len).map(|j| (j as f64).powf(-p)).collect())
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `Π(1 + c_j²/720) − 1`
    pub fn variance(&self) -> f64 {
        self.coeffs.iter().map(|c| 1.0 + c * c * HALF_B2_SQ_NORM).product::<f64>() - 1.0
    }
}

impl ComponentIntegrals for ProductForm {
    /// `f(a) Π_{j∈u} (−c_j B(a)/(1 + c_j B(a)))`
    fn component_integral(&self, anchor: f64, u: &CoordSet) -> f64 {
        let b = half_b2(anchor);
        let mut p = self.eval(anchor, &[], &[]);
        for j in u.iter() {
            let c = self.coeffs.get(j as usize - 1).copied().unwrap_or(0.0);
            p *= -c * b / (1.0 + c * b);
        }
        p
    }
}

impl Integrand for ProductForm {
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        if anchor.to_bits() != self.anchor.to_bits() {
            let mut p: f64 = self.coeffs.iter().map(|c| 1.0 + c * half_b2(anchor)).product();
            for (&j, &x) in coords.iter().zip(values) {
                if let Some(c) = self.coeffs.get(j as usize - 1) {
                    p *= (1.0 + c * half_b2(x)) / (1.0 + c * half_b2(anchor));
                }
            }
            return p;
        }
        let mut p = self.anchor_product;
        for (&j, &x) in coords.iter().zip(values) {
            if let Some(c) = self.coeffs.get(j as usize - 1) {
                p *= (1.0 + c * half_b2(x)) / self.anchor_factors[j as usize - 1];
            }
        }
        p
    }

    fn declared_active(&self) -> Option<CoordSet> {
        Some(CoordSet::range(self.coeffs.len() as u32))
    }

    fn known_integral(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// A test integrand chosen by name.
pub enum BankFunction {
    Constant(Constant),
    Sum(SumOfProducts),
    Product(ProductForm),
}

impl BankFunction {
    fn inner(&self) -> &dyn ComponentIntegrals {
        match self {
            BankFunction::Constant(f) => f,
            BankFunction::Sum(f) => f,
            BankFunction::Product(f) => f,
        }
    }
}

impl Integrand for BankFunction {
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        self.inner().eval(anchor, coords, values)
    }

    fn declared_active(&self) -> Option<CoordSet> {
        self.inner().declared_active()
    }

    fn known_integral(&self) -> Option<f64> {
        self.inner().known_integral()
    }
}

impl ComponentIntegrals for BankFunction {
    fn component_integral(&self, anchor: f64, u: &CoordSet) -> f64 {
        self.inner().component_integral(anchor, u)
    }
}

fn parse_params(s: &str) -> Result<(&str, HashMap<String, String>)> {
    let (name, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut out = HashMap::new();
    for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value in `{kv}`")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((name.trim(), out))
}

fn param<T: FromStr>(p: &HashMap<String, String>, key: &str, default: T) -> Result<T> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))),
    }
}

fn reject_unknown(p: &HashMap<String, String>, known: &[&str], what: &str) -> Result<()> {
    match p.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(Error::Config(format!("unknown parameter `{k}` for {what}"))),
        None => Ok(()),
    }
}

/// Default number of pairs in the finite-intersection preset.
pub const DEFAULT_PAIRS: usize = 256;

/// Weights for pairs `{2j−1, 2j}`, `j ≤ pairs`, with `γ = c·j^{−a}` on each pair and on
/// both of its singletons; the declared decay is `a`.
pub fn fi_pairs_weights(pairs: usize, c: f64, a: f64) -> Result<WeightModel> {
    let mut entries = Vec::with_capacity(3 * pairs);
    for j in 1..=pairs as u32 {
        let g = c * (j as f64).powf(-a);
        for set in [CoordSet::from([2 * j - 1]), CoordSet::from([2 * j]), CoordSet::from([2 * j - 1, 2 * j])] {
            entries.push(Entry { set, gamma: g });
        }
    }
    let probe = WeightModel::explicit(entries.clone())?;
    let rho = probe.intersection_degree().unwrap_or(1);
    WeightModel::finite_intersection(rho, entries)?.with_decay(a)
}

/// Parses `product:a=3,c=1`, `finite-order:beta=2,a=3,c=1` or `fi-pairs:J=256,a=3,c=1`.
pub fn parse_weights(s: &str) -> Result<WeightModel> {
    let (name, p) = parse_params(s)?;
    let a = param(&p, "a", 3.0)?;
    let c = param(&p, "c", 1.0)?;
    match name {
        "product" => {
            reject_unknown(&p, &["a", "c"], name)?;
            WeightModel::power_law(c, a)
        }
        "finite-order" => {
            reject_unknown(&p, &["a", "c", "beta"], name)?;
            WeightModel::finite_product(param(&p, "beta", 2)?, Singletons::PowerLaw { c, a })
        }
        "fi-pairs" => {
            reject_unknown(&p, &["a", "c", "J"], name)?;
            fi_pairs_weights(param(&p, "J", DEFAULT_PAIRS)?, c, a)
        }
        _ => Err(Error::Config(format!("unknown weight preset `{name}`"))),
    }
}

/// Default length of the product-form integrand.
pub const DEFAULT_PRODUCT_LEN: usize = 1 << 17;

/// Coefficient exponent matched to weights with decay `a`, so that `c_u = γ_u`.
pub fn matched_exponent(a: f64) -> f64 {
    a
}

/// Parses `constant:v=..`, `building-block:c=..`, `product-form:J=..,p=..`,
/// `fi-pairs:J=..,p=..` or `finite-order:beta=..,J=..,p=..`.
pub fn parse_integrand(s: &str) -> Result<BankFunction> {
    let (name, p) = parse_params(s)?;
    let pw = param(&p, "p", matched_exponent(3.0))?;
    match name {
        "constant" => {
            reject_unknown(&p, &["v"], name)?;
            Ok(BankFunction::Constant(Constant(param(&p, "v", 1.0)?)))
        }
        "building-block" => {
            reject_unknown(&p, &["c"], name)?;
            Ok(BankFunction::Sum(SumOfProducts::new(vec![(CoordSet::from([1]), param(&p, "c", 1.0)?)])))
        }
        "product-form" => {
            reject_unknown(&p, &["J", "p"], name)?;
            Ok(BankFunction::Product(ProductForm::power_law(param(&p, "J", DEFAULT_PRODUCT_LEN)?, pw)?))
        }
        "fi-pairs" => {
            reject_unknown(&p, &["J", "p"], name)?;
            Ok(BankFunction::Sum(fi_pairs_integrand(param(&p, "J", DEFAULT_PAIRS)?, pw)))
        }
        "finite-order" => {
            reject_unknown(&p, &["J", "p", "beta"], name)?;
            let (beta, len) = (param(&p, "beta", 2usize)?, param(&p, "J", 32u32)?);
            Ok(BankFunction::Sum(finite_order_integrand(beta, len, pw)))
        }
        _ => Err(Error::Config(format!("unknown integrand `{name}`"))),
    }
}

/// `1 + Σ_j j^{−p} [B(x_{2j−1}) + B(x_{2j}) + B(x_{2j−1})B(x_{2j})]`.
pub fn fi_pairs_integrand(pairs: usize, p: f64) -> SumOfProducts {
    let mut terms = vec![(CoordSet::empty(), 1.0)];
    for j in 1..=pairs as u32 {
        let c = (j as f64).powf(-p);
        terms.push((CoordSet::from([2 * j - 1]), c));
        terms.push((CoordSet::from([2 * j]), c));
        terms.push((CoordSet::from([2 * j - 1, 2 * j]), c));
    }
    SumOfProducts::new(terms)
}

/// `1 + Σ_{0<|s|≤β, s⊆[len]} Π_{j∈s} j^{−p} B(x_j)`.
pub fn finite_order_integrand(beta: usize, len: u32, p: f64) -> SumOfProducts {
    let mut terms = vec![(CoordSet::empty(), 1.0)];
    for s in CoordSet::range(len.min(24)).subsets().filter(|s| !s.is_empty() && s.len() <= beta) {
        let c = s.iter().map(|j| (j as f64).powf(-p)).product();
        terms.push((s, c));
    }
    SumOfProducts::new(terms)
}

/// The integrand matched to a weight preset string.
pub fn default_integrand_for(weights: &str) -> Result<String> {
    let (name, p) = parse_params(weights)?;
    let a: f64 = param(&p, "a", 3.0)?;
    let pw = matched_exponent(a);
    Ok(match name {
        "product" => format!("product-form:J={DEFAULT_PRODUCT_LEN},p={pw}"),
        "finite-order" => format!("finite-order:beta={},J=32,p={pw}", param(&p, "beta", 2usize)?),
        "fi-pairs" => format!("fi-pairs:J={},p={pw}", param(&p, "J", DEFAULT_PAIRS)?),
        _ => return Err(Error::Config(format!("unknown weight preset `{name}`"))),
    })
}

/// Every experiment setting. Missing TOML keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub weights: String,
    /// `None` picks the integrand matched to the weights.
    pub integrand: Option<String>,
    pub chi: usize,
    pub alpha: usize,
    pub base: u32,
    pub rule: RuleKind,
    pub cost: String,
    pub tau: f64,
    pub anchor: f64,
    pub epsilon: f64,
    pub eps_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            weights: "product:a=3,c=1".into(),
            integrand: None,
            chi: 1,
            alpha: 3,
            base: 2,
            rule: RuleKind::InterlacedScrambledPlr,
            cost: "linear".into(),
            tau: 2.5,
            anchor: DEFAULT_ANCHOR,
            epsilon: 0.05,
            eps_grid: vec![0.5, 0.2, 0.1, 0.05],
            reps: 50,
            seed: 1,
            out: PathBuf::from("cdqmc-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn weight_model(&self) -> Result<WeightModel> {
        parse_weights(&self.weights)
    }

    pub fn integrand(&self) -> Result<BankFunction> {
        match &self.integrand {
            Some(s) => parse_integrand(s),
            None => parse_integrand(&default_integrand_for(&self.weights)?),
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        self.cost.parse()
    }

    pub fn template(&self) -> Result<RuleTemplate> {
        FieldBase::new(self.base)?;
        Ok(match self.rule {
            RuleKind::MonteCarlo => RuleTemplate::monte_carlo(),
            RuleKind::InterlacedScrambledPlr => RuleTemplate::plr(self.base, self.alpha),
        })
    }

    pub fn planner_options(&self) -> PlannerOptions {
        PlannerOptions { tau: self.tau, chi: self.chi, anchor: self.anchor, ..PlannerOptions::default() }
    }
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of `slope`; infinite with fewer than three points.
    pub slope_stderr: f64,
}

/// Ordinary least squares on `(xs, ys)`; needs two distinct abscissae.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { expected: xs.len(), got: ys.len() });
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Config("a line fit needs two distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_stderr = if xs.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    Ok(LineFit { slope, intercept, slope_stderr })
}

/// Least-squares line through `(ln x, ln y)`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    ols(&lx, &ly)
}

/// Slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    Ok(loglog_fit(xs, ys)?.slope)
}

/// Kolmogorov–Smirnov distance between a sample and the uniform law on `[0,1]`.
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the Kolmogorov–Smirnov statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// One row of a variance study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub variance_stderr: f64,
}

/// Variance of the rule `kind` on `g: [0,1]^s → ℝ` for `n = b^m`, `m ∈ ms`.
#[allow(clippy::too_many_arguments)]
pub fn variance_study<G>(
    g: G,
    s: usize,
    kind: RuleKind,
    base: FieldBase,
    alpha: usize,
    ms: &[u32],
    reps: usize,
    seed: u64,
    cache: &GeneratorCache,
) -> Result<Vec<VarianceRow>>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let u = CoordSet::range(s as u32);
    ms.iter()
        .map(|&m| {
            let n = base.pow(m).ok_or(Error::Precision { precision: m, base: base.get(), m })? as usize;
            let template = match kind {
                RuleKind::MonteCarlo => RuleSpec::monte_carlo(u.clone(), n, 0),
                RuleKind::InterlacedScrambledPlr => cache.plr_rule(u.clone(), n, base, alpha, 0)?,
            };
            let samples = replicate(reps, crate::seeds::derive(seed, m as u64), |sd| run_rule(&template.with_seed(sd), &g));
            let v = summarize(&samples)?;
            Ok(VarianceRow { n, mean: v.mean, variance: v.variance, variance_stderr: v.variance_stderr })
        })
        .collect()
}

/// One row of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub epsilon: f64,
    pub cost: f64,
    pub sets: usize,
    pub d_eps: usize,
    pub b_eps: f64,
    pub mean: f64,
    pub rmse2: f64,
    pub rmse2_stderr: f64,
    /// Squared exact bias `(I(f) − I(Ψ_Q f))²`.
    pub bias2: f64,
}

/// Result of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub rows: Vec<StudyRow>,
    /// Slope of `ln RMSE²` against `ln cost`.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub integral: f64,
}

/// Runs the plan for each `ε` in `config.eps_grid` on `f` for `config.reps`
/// replications and records the mean squared error against the exact integral.
pub fn run_convergence_study<F: ComponentIntegrals + ?Sized>(f: &F, config: &ExperimentConfig, cache: &GeneratorCache) -> Result<Study> {
    let integral = f.known_integral().ok_or_else(|| Error::Config("the integrand has no known integral".into()))?;
    let w = config.weight_model()?;
    let opts = config.planner_options();
    let template = config.template()?;
    let model = config.cost_model()?;
    if config.reps < 2 {
        return Err(Error::TooFewReplications { need: 2, got: config.reps });
    }
    let mut rows = Vec::new();
    for (i, &eps) in config.eps_grid.iter().enumerate() {
        let plan = plan_build(&w, eps, &opts, template)?;
        let master = crate::seeds::derive(config.seed, i as u64);
        let estimates: Vec<Result<f64>> = replicate_results(config.reps, master, |sd| {
            cd_estimate(f, &plan, sd, cache, model).map(|e| e.value)
        });
        let values: Vec<f64> = estimates.into_iter().collect::<Result<_>>()?;
        let sq: Vec<f64> = values.iter().map(|v| (v - integral) * (v - integral)).collect();
        let r = sq.len() as f64;
        let rmse2 = sq.iter().sum::<f64>() / r;
        let sd = (sq.iter().map(|x| (x - rmse2) * (x - rmse2)).sum::<f64>() / (r - 1.0)).sqrt();
        rows.push(StudyRow {
            epsilon: eps,
            cost: plan_cost(&plan, model),
            sets: plan.len(),
            d_eps: epsilon_dimension(&plan),
            b_eps: diagnostics_b(&plan),
            mean: values.iter().sum::<f64>() / r,
            rmse2,
            rmse2_stderr: sd / r.sqrt(),
            bias2: exact_bias(f, plan.active_set(), plan.anchor).map_or(f64::NAN, |b| b * b),
        });
    }
    let costs: Vec<f64> = rows.iter().map(|r| r.cost).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.rmse2).collect();
    // rows with zero error carry no rate information
    let fit = if errs.iter().all(|e| *e > 0.0) { loglog_fit(&costs, &errs).ok() } else { None };
    Ok(Study { rows, slope: fit.map(|f| f.slope), slope_stderr: fit.map(|f| f.slope_stderr), integral })
}

/// One replication of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub rep: u64,
    pub seed: u64,
    pub value: f64,
    pub cost: f64,
}

/// `reps` independent runs of `plan` with seeds derived from `master_seed`.
pub fn run_estimates<F: Integrand + ?Sized>(
    f: &F,
    plan: &crate::cdalg::Plan,
    reps: usize,
    master_seed: u64,
    model: CostModel,
    cache: &GeneratorCache,
) -> Result<Vec<EstimateRow>> {
    (0..reps as u64)
        .map(|rep| {
            let seed = crate::seeds::derive(master_seed, rep);
            let e = cd_estimate(f, plan, seed, cache, model)?;
            Ok(EstimateRow { rep, seed, value: e.value, cost: e.ledger.total })
        })
        .collect()
}

fn replicate_results<T: Send>(reps: usize, master: u64, f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    use rayon::prelude::*;
    (0..reps as u64).into_par_iter().map(|r| f(crate::seeds::derive(master, r))).collect()
}

/// Writes `rows` as CSV to `path` and `meta` as pretty JSON next to it.
pub fn write_csv_with_meta<T: Serialize>(path: &Path, rows: &[T], meta: &serde_json::Value) -> Result<PathBuf> {
    let io = |e: &dyn std::fmt::Display| Error::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(&e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))?;
    let sidecar = path.with_extension("json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| io(&e))?;
    std::fs::write(&sidecar, text).map_err(|e| io(&e))?;
    Ok(sidecar)
}

/// Writes the interlaced points of `ps` as base-`b` digit strings, one point per
/// line with space-separated coordinates, after a header line. `scramble = None`
/// keeps the `m` unscrambled digits.
pub fn dump_points(out: &mut dyn Write, ps: &PointSet, alpha: usize, scramble: Option<ScrambleConfig>) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(e.to_string());
    let pts = match &scramble {
        Some(cfg) => interlaced_scrambled_points(ps, &ScrambleConfig { alpha, ..*cfg })?,
        None => interlaced_points(ps, alpha)?,
    };
    let seed = scramble.map_or("none".to_string(), |c| c.seed.to_string());
    writeln!(out, "# b={} m={} s={} alpha={alpha} seed={seed}", ps.base().get(), ps.m(), pts.dim()).map_err(io)?;
    for h in 0..pts.n() {
        let line: Vec<String> = pts.row(h).iter().map(|d| d.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).map_err(io)?;
    }
    Ok(())
}

/// Outcome of one quick check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

/// Fast internal consistency checks; each runs in well under a second.
pub fn selftest() -> Result<Vec<Check>> {
    use crate::gfpoly::PolyGF;
    use crate::lattice::{plr_points, GeneratingVector};
    let mut out = Vec::new();

    let ok = (0..3u64.pow(6)).all(|k| PolyGF::from_int(k, FieldBase::THREE).to_int() == k);
    out.push(check("poly-roundtrip", ok, "from_int/to_int over F_3, k < 729".into()));

    let gv = GeneratingVector::from_ints(FieldBase::TWO, 5, &[1])?;
    let mut xs: Vec<f64> = (0..32).map(|h| plr_points(&gv).value(h, 0)).collect();
    xs.sort_by(f64::total_cmp);
    let ok = xs.iter().enumerate().all(|(i, &x)| x == i as f64 / 32.0);
    out.push(check("plr-projection", ok, "1-D projection is {i/32}".into()));

    let k = crate::kernels::k_chi(1, 0.5, 0.5)?;
    out.push(check("kernel-diagonal", (k - 1.0 / 12.0).abs() < 1e-15, format!("k_1(1/2,1/2) = {k}")));

    let b = bernoulli(2, 0.25)?;
    out.push(check("bernoulli", (b - (0.0625 - 0.25 + 1.0 / 6.0)).abs() < 1e-15, format!("B_2(1/4) = {b}")));

    let w = WeightModel::power_law(1.0, 3.0)?;
    let plan = plan_build(&w, 0.2, &PlannerOptions::default(), RuleTemplate::plr(2, 2))?;
    let cache = GeneratorCache::default();
    let est = cd_estimate(&Constant(2.5), &plan, 7, &cache, CostModel::Linear)?;
    let ok = est.value == 2.5 && est.ledger.total == plan_cost(&plan, CostModel::Linear);
    out.push(check("constant-exact", ok, format!("{} sets, estimate {}", plan.len(), est.value)));

    let f = SumOfProducts::new(vec![(CoordSet::empty(), 1.0), (CoordSet::from([1]), 1.0), (CoordSet::from([1, 2]), 0.5)]);
    let vals: Vec<f64> = (0..200u64)
        .map(|r| cd_estimate(&f, &plan, crate::seeds::derive(11, r), &cache, CostModel::Linear).map(|e| e.value))
        .collect::<Result<_>>()?;
    let s = summarize(&vals)?;
    let ok = (s.mean - 1.0).abs() <= 5.0 * s.mean_stderr.max(1e-12);
    out.push(check("unbiased", ok, format!("mean {:.3e} ± {:.1e}", s.mean - 1.0, s.mean_stderr)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::anchored_component;
    use crate::decomp::Assignment;

    #[test]
    fn half_b2_has_the_stated_moments() {
        let n = 200_000;
        let xs = (0..n).map(|i| (i as f64 + 0.5) / n as f64);
        let (m1, m2) = xs.fold((0.0, 0.0), |(a, b), x| (a + half_b2(x), b + half_b2(x).powi(2)));
        assert!((m1 / n as f64).abs() < 1e-10);
        assert!((m2 / n as f64 - HALF_B2_SQ_NORM).abs() < 1e-10);
        assert!((half_b2(0.5) + 1.0 / 24.0).abs() < 1e-17);
    }

    #[test]
    fn sum_of_products_fast_path_matches_full_evaluation() {
        let f = fi_pairs_integrand(5, 2.1);
        let coords = [1u32, 4, 9];
        let values = [0.1, 0.7, 0.95];
        let fast = f.eval(0.5, &coords, &values);
        let slow = f.full(0.5, &coords, &values);
        assert!((fast - slow).abs() < 1e-15);
        assert!((f.eval(0.3, &coords, &values) - f.full(0.3, &coords, &values)).abs() < 1e-15);
        assert_eq!(f.known_integral(), Some(1.0));
    }

    #[test]
    fn product_form_components_are_products() {
        let f = ProductForm::power_law(50, 2.1).unwrap();
        let x = Assignment::new([(2, 0.9), (3, 0.2)]);
        let u = CoordSet::from([2, 3]);
        let got = anchored_component(&f, &u, 0.5, &x).unwrap();
        let fa = f.eval(0.5, &[], &[]);
        let c2 = 2f64.powf(-2.1);
        let c3 = 3f64.powf(-2.1);
        let r = |c: f64, y: f64| (1.0 + c * half_b2(y)) / (1.0 + c * half_b2(0.5)) - 1.0;
        assert!((got - fa * r(c2, 0.9) * r(c3, 0.2)).abs() < 1e-14);
        assert!((f.eval(0.25, &[1], &[0.25]) - f.eval(0.25, &[], &[])).abs() < 1e-15);
    }

    #[test]
    fn presets_parse() {
        assert_eq!(parse_weights("product:a=3,c=1").unwrap(), WeightModel::power_law(1.0, 3.0).unwrap());
        assert_eq!(parse_weights("finite-order:beta=2,a=3").unwrap().order(), Some(2));
        let fi = parse_weights("fi-pairs:J=4,a=3").unwrap();
        assert_eq!(fi.decay().unwrap(), 3.0);
        assert_eq!(fi.gamma(&CoordSet::from([3, 4])), 0.125);
        assert_eq!(fi.gamma(&CoordSet::from([4])), 0.125);
        assert_eq!(fi.gamma(&CoordSet::from([2, 3])), 0.0);
        assert!(parse_weights("product:q=1").is_err());
        assert!(parse_weights("spiral").is_err());
        assert!(parse_integrand("product-form:J=10,p=2").is_ok());
        assert!(parse_integrand("constant:v=x").is_err());
        for w in ["product:a=3", "finite-order:beta=3", "fi-pairs:J=8"] {
            assert!(parse_integrand(&default_integrand_for(w).unwrap()).is_ok());
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ExperimentConfig { eps_grid: vec![0.3, 0.1], rule: RuleKind::MonteCarlo, ..Default::default() };
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = ExperimentConfig::from_toml("alpha = 2\nrule = \"mc\"\n").unwrap();
        assert_eq!(partial.alpha, 2);
        assert_eq!(partial.rule, RuleKind::MonteCarlo);
        assert!(ExperimentConfig::from_toml("alpah = 2").is_err());
    }

    #[test]
    fn ols_recovers_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.5 * x + 1.0).collect();
        let fit = ols(&xs, &ys).unwrap();
        assert!((fit.slope + 2.5).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-12);
        assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ks_statistic_of_a_uniform_grid_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!((ks_uniform(&xs) - 0.5 / n as f64).abs() < 1e-12);
        assert!(ks_uniform(&[0.0; 10]) > 0.99);
    }

    #[test]
    fn selftest_passes() {
        for c in selftest().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn dump_points_formats() {
        use crate::lattice::{plr_points, GeneratingVector};
        let ps = plr_points(&GeneratingVector::from_ints(FieldBase::TWO, 2, &[1]).unwrap());
        let mut buf = Vec::new();
        dump_points(&mut buf, &ps, 1, None).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# b=2 m=2 s=1 alpha=1 seed=none\n00\n01\n11\n10\n");

        let ps = GeneratorCache::default().point_set(FieldBase::TWO, 4, 3).unwrap();
        let dump = |seed| {
            let mut buf = Vec::new();
            dump_points(&mut buf, &ps, 2, Some(ScrambleConfig::new(2, seed))).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let text = dump(5);
        assert_eq!(text, dump(5));
        assert_ne!(text, dump(6));
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# b=2 m=3 s=2 alpha=2 seed=5");
        assert!(lines.all(|l| l.split(' ').count() == 2 && l.chars().all(|c| c == '0' || c == '1' || c == ' ')));
    }

    #[test]
    fn component_integrals_match_inclusion_exclusion() {
        let sum = fi_pairs_integrand(3, 2.0);
        let prod = ProductForm::power_law(6, 1.5).unwrap();
        let n: usize = 256;
        let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        for f in [&sum as &dyn ComponentIntegrals, &prod] {
            for u in [CoordSet::empty(), CoordSet::from([1]), CoordSet::from([1, 2]), CoordSet::from([2, 5])] {
                let mut acc = 0.0;
                let k = u.len() as u32;
                for idx in 0..n.pow(k) {
                    let pts: Vec<(u32, f64)> =
                        u.iter().enumerate().map(|(t, j)| (j, grid[(idx / n.pow(t as u32)) % n])).collect();
                    acc += anchored_component(f, &u, 0.3, &Assignment::new(pts)).unwrap();
                }
                let got = acc / (n.pow(k)) as f64;
                assert!((got - f.component_integral(0.3, &u)).abs() < 2e-6, "{u}");
            }
        }
        let all: Vec<CoordSet> = CoordSet::range(6).subsets().collect();
        assert!(exact_bias(&sum, all.clone(), 0.5).unwrap().abs() < 1e-15);
        assert!(exact_bias(&prod, all, 0.5).unwrap().abs() < 1e-15);
    }

    #[test]
    fn small_convergence_study_runs() {
        let cfg = ExperimentConfig { eps_grid: vec![0.5, 0.2], reps: 4, ..Default::default() };
        let f = ProductForm::power_law(1000, 3.0).unwrap();
        let study = run_convergence_study(&f, &cfg, &GeneratorCache::default()).unwrap();
        assert_eq!(study.rows.len(), 2);
        assert!(study.rows[1].cost > study.rows[0].cost);
        assert!(study.slope.is_some());
        for r in &study.rows {
            assert!(r.rmse2 >= r.bias2 - 4.0 * r.rmse2_stderr);
        }
        let c = run_convergence_study(&Constant(3.0), &cfg, &GeneratorCache::default()).unwrap();
        assert!(c.rows.iter().all(|r| r.rmse2 == 0.0 && r.bias2 == 0.0));
    }
}
