//! Randomized equal-weight rules `Q_{u,n}`: Monte Carlo and interlaced scrambled
//! polynomial lattice rules. Both randomize each coordinate independently.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::CoordSet;
use crate::error::{Error, Result};
use crate::gfpoly::FieldBase;
use crate::lattice::{plr_points, search_generating_vector, CbcOptions, PointSet, WalshMerit, MAX_TABULATED_M};
use crate::scramble::{interlaced_value, scramble_fixed, PermutationTree, DEFAULT_PRECISION};
use crate::seeds;
use crate::weights::WeightModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    #[serde(alias = "mc")]
    MonteCarlo,
    #[serde(rename = "plr")]
    InterlacedScrambledPlr,
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" | "monte-carlo" => Ok(RuleKind::MonteCarlo),
            "plr" | "interlaced-scrambled-plr" => Ok(RuleKind::InterlacedScrambledPlr),
            other => Err(Error::Config(format!("unknown rule kind `{other}` (expected mc or plr)"))),
        }
    }
}

impl std::fmt::Display for RuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RuleKind::MonteCarlo => "mc",
            RuleKind::InterlacedScrambledPlr => "plr",
        })
    }
}

/// The smallest `m` with `b^m ≥ n`, and `b^m`.
pub fn round_up_to_power(base: FieldBase, n: usize) -> (u32, usize) {
    let b = base.get() as usize;
    let (mut m, mut p) = (0u32, 1usize);
    while p < n {
        p *= b;
        m += 1;
    }
    (m, p)
}

/// One randomized rule on `[0,1]^{|u|}`.
#[derive(Clone, Debug)]
pub struct RuleSpec {
    pub kind: RuleKind,
    pub u: CoordSet,
    pub n: usize,
    pub alpha: usize,
    pub seed: u64,
    /// Underlying point set of dimension `α·|u|` with `n` points (PLR with `n > 1`).
    pub points: Option<Arc<PointSet>>,
    /// Digits kept per underlying coordinate; `None` means `max(m, 32)`.
    pub precision: Option<u32>,
    pub base: FieldBase,
}

impl RuleSpec {
    pub fn monte_carlo(u: CoordSet, n: usize, seed: u64) -> Self {
        RuleSpec { kind: RuleKind::MonteCarlo, u, n, alpha: 1, seed, points: None, precision: None, base: FieldBase::TWO }
    }

    /// An interlaced scrambled rule over `points`. A missing point set means the
    /// one-point rule at the scrambled origin.
    pub fn plr(u: CoordSet, points: Option<Arc<PointSet>>, base: FieldBase, alpha: usize, seed: u64) -> Result<Self> {
        let n = match &points {
            Some(ps) => {
                if ps.dim() != alpha * u.len() {
                    return Err(Error::LengthMismatch { expected: alpha * u.len(), got: ps.dim() });
                }
                if ps.base() != base {
                    return Err(Error::BaseMismatch(base.get(), ps.base().get()));
                }
                ps.n()
            }
            None => 1,
        };
        Ok(RuleSpec { kind: RuleKind::InterlacedScrambledPlr, u, n, alpha, seed, points, precision: None, base })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RuleSpec { seed, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Calls `visit` on each randomized point in order.
    pub fn for_each_point(&self, mut visit: impl FnMut(&[f64])) {
        let s = self.dim();
        let mut y = vec![0.0; s];
        match self.kind {
            RuleKind::MonteCarlo => {
                let mut rngs: Vec<ChaCha8Rng> =
                    (0..s).map(|j| ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, j as u64))).collect();
                for _ in 0..self.n {
                    for (yj, r) in y.iter_mut().zip(rngs.iter_mut()) {
                        *yj = r.random::<f64>();
                    }
                    visit(&y);
                }
            }
            RuleKind::InterlacedScrambledPlr => {
                let alpha = self.alpha;
                let trees: Vec<PermutationTree> =
                    (0..alpha * s).map(|i| PermutationTree::new(self.seed, self.base, i as u32)).collect();
                let (m, rows): (u32, Box<dyn Iterator<Item = &[u64]>>) = match &self.points {
                    Some(ps) => (ps.m(), Box::new(ps.rows())),
                    None => (0, Box::new(std::iter::once(&[][..]))),
                };
                let precision = self.precision.unwrap_or(m.max(DEFAULT_PRECISION));
                let mut block = vec![0u64; alpha];
                for row in rows {
                    for (j, yj) in y.iter_mut().enumerate() {
                        for (r, slot) in block.iter_mut().enumerate() {
                            let i = j * alpha + r;
                            let x = row.get(i).copied().unwrap_or(0);
                            *slot = scramble_fixed(&trees[i], x, m, precision);
                        }
                        *yj = interlaced_value(&block, self.base, precision);
                    }
                    visit(&y);
                }
            }
        }
    }

    /// All randomized points, row by row.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n);
        self.for_each_point(|y| out.push(y.to_vec()));
        out
    }
}

/// `(1/n) Σ_i g(y_i)` over the rule's randomized points.
pub fn run_rule(spec: &RuleSpec, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut sum = 0.0;
    spec.for_each_point(|y| sum += g(y));
    sum / spec.n as f64
}

/// Summary statistics of independent replications.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub reps: usize,
    pub mean: f64,
    /// Standard error of `mean`.
    pub mean_stderr: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Jackknife standard error of `variance`.
    pub variance_stderr: f64,
}

/// Sample mean and variance with standard errors; needs at least two samples.
pub fn summarize(samples: &[f64]) -> Result<VarianceEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewReplications { need: 2, got: n });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let m2: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let variance = m2 / (nf - 1.0);
    let variance_stderr = if n < 3 {
        f64::INFINITY
    } else {
        let loo: Vec<f64> =
            samples.iter().map(|x| (m2 - (x - mean) * (x - mean) * nf / (nf - 1.0)) / (nf - 2.0)).collect();
        let avg = loo.iter().sum::<f64>() / nf;
        ((nf - 1.0) / nf * loo.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>()).sqrt()
    };
    Ok(VarianceEstimate { reps: n, mean, mean_stderr: (variance / nf).sqrt(), variance, variance_stderr })
}

/// Runs `estimate(seed_r)` for `r < reps` with `seed_r = derive(master_seed, r)`, in order.
pub fn replicate<F>(reps: usize, master_seed: u64, estimate: F) -> Vec<f64>
where
    F: Fn(u64) -> f64 + Sync,
{
    (0..reps as u64).into_par_iter().map(|r| estimate(seeds::derive(master_seed, r))).collect()
}

/// Variance of `template` applied to `g` over `reps` independently seeded runs.
pub fn empirical_variance<G>(template: &RuleSpec, g: G, reps: usize, master_seed: u64) -> Result<VarianceEstimate>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    if reps < 2 {
        return Err(Error::TooFewReplications { need: 2, got: reps });
    }
    summarize(&replicate(reps, master_seed, |seed| run_rule(&template.with_seed(seed), &g)))
}

/// Lazily built polynomial lattice point sets, one per `(b, dimension, m)`.
///
/// Generating vectors come from a component-by-component search with unit weights.
pub struct GeneratorCache {
    options: CbcOptions,
    sets: Mutex<HashMap<(u32, usize, u32), Arc<PointSet>>>,
}

impl Default for GeneratorCache {
    fn default() -> Self {
        Self::new(CbcOptions::default())
    }
}

impl GeneratorCache {
    pub fn new(options: CbcOptions) -> Self {
        GeneratorCache { options, sets: Mutex::new(HashMap::new()) }
    }

    pub fn point_set(&self, base: FieldBase, dim: usize, m: u32) -> Result<Arc<PointSet>> {
        if m == 0 || m > MAX_TABULATED_M {
            return Err(Error::NoModulus { base: base.get(), m });
        }
        let key = (base.get(), dim, m);
        let mut sets = self.sets.lock().expect("cache lock");
        if let Some(ps) = sets.get(&key) {
            return Ok(ps.clone());
        }
        let gv = search_generating_vector(dim, m, base, &WeightModel::unit(), 1, self.options, &WalshMerit::default())?;
        let ps = Arc::new(plr_points(&gv));
        sets.insert(key, ps.clone());
        Ok(ps)
    }

    /// A PLR rule for `u` with at least `n` points (rounded up to a power of `b`).
    pub fn plr_rule(&self, u: CoordSet, n: usize, base: FieldBase, alpha: usize, seed: u64) -> Result<RuleSpec> {
        let (m, _) = round_up_to_power(base, n);
        let points = if m == 0 { None } else { Some(self.point_set(base, alpha * u.len(), m)?) };
        RuleSpec::plr(u, points, base, alpha, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::bernoulli;

    fn b2(y: f64) -> f64 {
        bernoulli(2, y).unwrap() / 2.0
    }

    #[test]
    fn constants_are_exact() {
        let cache = GeneratorCache::default();
        let u = CoordSet::from([1, 2]);
        for seed in 0..5 {
            let mc = RuleSpec::monte_carlo(u.clone(), 37, seed);
            assert_eq!(run_rule(&mc, |_| 2.5), 2.5);
            let plr = cache.plr_rule(u.clone(), 64, FieldBase::TWO, 2, seed).unwrap();
            assert_eq!(run_rule(&plr, |_| 2.5), 2.5);
        }
    }

    #[test]
    fn rounding_to_powers() {
        assert_eq!(round_up_to_power(FieldBase::TWO, 1), (0, 1));
        assert_eq!(round_up_to_power(FieldBase::TWO, 5), (3, 8));
        assert_eq!(round_up_to_power(FieldBase::THREE, 9), (2, 9));
        assert_eq!(round_up_to_power(FieldBase::THREE, 10), (3, 27));
    }

    #[test]
    fn determinism() {
        let cache = GeneratorCache::default();
        let r = cache.plr_rule(CoordSet::from([3]), 128, FieldBase::THREE, 2, 9).unwrap();
        let g = |y: &[f64]| (y[0] * 7.0).sin();
        assert_eq!(run_rule(&r, g).to_bits(), run_rule(&r, g).to_bits());
        let mc = RuleSpec::monte_carlo(CoordSet::from([1, 2]), 10, 4);
        assert_eq!(mc.points(), mc.points());
        assert_ne!(mc.points(), mc.with_seed(5).points());
    }

    #[test]
    fn points_lie_in_the_cube_and_one_point_rules_work() {
        let cache = GeneratorCache::default();
        let r = cache.plr_rule(CoordSet::from([1, 2]), 1, FieldBase::TWO, 3, 1).unwrap();
        assert_eq!(r.n, 1);
        let pts = r.points();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].iter().all(|&y| (0.0..1.0).contains(&y)));
        let r = cache.plr_rule(CoordSet::from([1, 2]), 256, FieldBase::TWO, 3, 1).unwrap();
        assert!(r.points().iter().flatten().all(|&y| (0.0..1.0).contains(&y)));
    }

    #[test]
    fn monte_carlo_mean_and_variance() {
        let spec = RuleSpec::monte_carlo(CoordSet::from([1]), 1000, 0);
        let est = empirical_variance(&spec, |y| y[0], 500, 11).unwrap();
        assert!((est.mean - 0.5).abs() <= 4.0 * est.mean_stderr);
        let want = 1.0 / 12.0 / 1000.0;
        assert!((est.variance - want).abs() <= 4.0 * est.variance_stderr, "{est:?} vs {want}");
        let zero = empirical_variance(&spec, |_| 0.0, 10, 1).unwrap();
        assert_eq!(zero.variance, 0.0);
        assert!(matches!(empirical_variance(&spec, |_| 0.0, 1, 1), Err(Error::TooFewReplications { .. })));
    }

    #[test]
    fn plr_beats_monte_carlo_on_smooth_functions() {
        let cache = GeneratorCache::default();
        let u = CoordSet::from([1]);
        let plr = cache.plr_rule(u.clone(), 1024, FieldBase::TWO, 1, 0).unwrap();
        let mc = RuleSpec::monte_carlo(u, 1024, 0);
        let g = |y: &[f64]| b2(y[0]);
        let vp = empirical_variance(&plr, g, 64, 3).unwrap();
        let vm = empirical_variance(&mc, g, 64, 3).unwrap();
        assert!(vp.mean.abs() <= 4.0 * vp.mean_stderr + 1e-15);
        assert!(vp.variance < vm.variance);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let xs = [0.3, 1.2, -0.7, 2.2, 0.9, 0.1];
        let est = summarize(&xs).unwrap();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
        };
        let loo: Vec<f64> = (0..xs.len())
            .map(|i| var(&xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| *x).collect::<Vec<_>>()))
            .collect();
        let n = xs.len() as f64;
        let avg = loo.iter().sum::<f64>() / n;
        let se = ((n - 1.0) / n * loo.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>()).sqrt();
        assert!((est.variance - var(&xs)).abs() < 1e-14);
        assert!((est.variance_stderr - se).abs() < 1e-12);
    }

    #[test]
    fn rule_kind_parsing() {
        assert_eq!("mc".parse::<RuleKind>().unwrap(), RuleKind::MonteCarlo);
        assert_eq!("plr".parse::<RuleKind>().unwrap(), RuleKind::InterlacedScrambledPlr);
        assert!("sobol".parse::<RuleKind>().is_err());
        assert_eq!(serde_json::to_string(&RuleKind::InterlacedScrambledPlr).unwrap(), "\"plr\"");
    }
}
