//! Changing dimension algorithms: ε-driven plans, execution over anchored
//! components, cost accounting and plan diagnostics.

use std::collections::BTreeSet;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::CoordSet;
use crate::decomp::{inclusion_exclusion, Integrand, MAX_COMPONENT_ORDER};
use crate::error::{Error, Result};
use crate::gfpoly::FieldBase;
use crate::kernels::{SobolevKernel, DEFAULT_ANCHOR};
use crate::quadrature::{round_up_to_power, GeneratorCache, RuleKind, RuleSpec};
use crate::seeds;
use crate::weights::{Truncation, WeightKind, WeightModel};

/// Cost `$(ν)` of one evaluation with `ν` active coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum CostModel {
    /// `1 + ν`
    Linear,
    /// `(1 + ν)^s`
    Polynomial { s: f64 },
    /// `e^{σν}`
    Exponential { sigma: f64 },
}

impl CostModel {
    pub fn dollar(&self, nu: usize) -> f64 {
        let nu = nu as f64;
        match self {
            CostModel::Linear => 1.0 + nu,
            CostModel::Polynomial { s } => (1.0 + nu).powf(*s),
            CostModel::Exponential { sigma } => (sigma * nu).exp(),
        }
    }

    /// Cost of `n` evaluations of `f_{u,a}`, each needing `2^{|u|}` evaluations of `f`.
    pub fn charge(&self, u: &CoordSet, n: usize) -> f64 {
        n as f64 * 2f64.powi(u.len() as i32) * self.dollar(u.len())
    }
}

impl FromStr for CostModel {
    type Err = Error;

    /// `linear`, `poly:<s>` or `exp:<σ>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown cost model `{s}` (expected linear, poly:<s> or exp:<sigma>)"));
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = || arg.parse::<f64>().map_err(|_| bad());
        let model = match name {
            "linear" if arg.is_empty() => CostModel::Linear,
            "poly" => CostModel::Polynomial { s: num()? },
            "exp" => CostModel::Exponential { sigma: num()? },
            _ => return Err(bad()),
        };
        match model {
            CostModel::Polynomial { s } if s < 0.0 => Err(bad()),
            CostModel::Exponential { sigma } if sigma < 0.0 => Err(bad()),
            m => Ok(m),
        }
    }
}

impl std::fmt::Display for CostModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostModel::Linear => write!(f, "linear"),
            CostModel::Polynomial { s } => write!(f, "poly:{s}"),
            CostModel::Exponential { sigma } => write!(f, "exp:{sigma}"),
        }
    }
}

/// The building-block rules of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleTemplate {
    pub kind: RuleKind,
    pub base: u32,
    pub alpha: usize,
    /// Digits kept per underlying coordinate; `None` means `max(m, 32)`.
    #[serde(default)]
    pub precision: Option<u32>,
    /// Exponents of the logarithmic factor `F_w(n)` in the variance bound of the rules.
    #[serde(default)]
    pub alpha1: f64,
    #[serde(default)]
    pub alpha2: f64,
}

impl RuleTemplate {
    pub fn plr(base: u32, alpha: usize) -> Self {
        RuleTemplate { kind: RuleKind::InterlacedScrambledPlr, base, alpha, precision: None, alpha1: 0.0, alpha2: 0.0 }
    }

    pub fn monte_carlo() -> Self {
        RuleTemplate { kind: RuleKind::MonteCarlo, base: 2, alpha: 1, precision: None, alpha1: 0.0, alpha2: 0.0 }
    }

    pub fn field(&self) -> Result<FieldBase> {
        FieldBase::new(self.base)
    }
}

/// Inputs of the planner other than the weights and `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerOptions {
    /// Variance decay rate of the building blocks.
    pub tau: f64,
    /// `None` picks the midpoint of the admissible interval.
    pub alpha0: Option<f64>,
    pub c: f64,
    pub big_c: f64,
    /// Margin used when `τ` must be lowered below `decay − 1`.
    pub delta: f64,
    pub anchor: f64,
    pub chi: usize,
    pub truncation: Truncation,
    /// Cap on `|Q|`.
    pub max_sets: usize,
    /// Cap on `|u|` for `u ∈ Q`.
    pub max_order: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            tau: 3.0,
            alpha0: None,
            c: 1.0,
            big_c: 1.0,
            delta: 0.01,
            anchor: DEFAULT_ANCHOR,
            chi: 1,
            truncation: Truncation::default(),
            max_sets: 100_000,
            max_order: MAX_COMPONENT_ORDER,
        }
    }
}

/// Scalars fixed by the weights, the kernel and `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConstants {
    pub epsilon: f64,
    pub alpha0: f64,
    /// Rate actually used, after any lowering below `decay − 1`.
    pub tau: f64,
    pub tau_requested: f64,
    pub decay: f64,
    pub c: f64,
    pub big_c: f64,
    pub k_aa: f64,
    /// `max{C(1 + k_aa), 4 k_aa}`
    pub c_hat: f64,
    /// `Σ_{u≠∅} γ_u^{1−α₀}` under the default truncation
    pub l: f64,
}

impl PlannerConstants {
    pub fn derive(w: &WeightModel, epsilon: f64, opts: &PlannerOptions) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Plan(format!("accuracy must be positive, got {epsilon}")));
        }
        let decay = w.decay()?;
        if decay <= 1.0 {
            return Err(Error::Plan(format!("decay {decay} must exceed 1")));
        }
        let tau = if opts.tau >= decay - 1.0 { decay - 1.0 - opts.delta } else { opts.tau };
        if tau <= 0.0 {
            return Err(Error::Plan(format!("no admissible rate below decay − 1 = {}", decay - 1.0)));
        }
        let (lo, hi) = (tau / decay, 1.0 - 1.0 / decay);
        let alpha0 = opts.alpha0.unwrap_or((lo + hi) / 2.0);
        if !(lo < alpha0 && alpha0 < hi) {
            return Err(Error::Plan(format!("alpha0 = {alpha0} outside ({lo}, {hi})")));
        }
        let k_aa = SobolevKernel::new(opts.chi)?.eval(opts.anchor, opts.anchor);
        let c_hat = (opts.big_c * (1.0 + k_aa)).max(4.0 * k_aa);
        let l = w.weighted_power_sum(1.0 - alpha0, opts.truncation)?.value;
        Ok(PlannerConstants {
            epsilon,
            alpha0,
            tau,
            tau_requested: opts.tau,
            decay,
            c: opts.c,
            big_c: opts.big_c,
            k_aa,
            c_hat,
            l,
        })
    }

    /// `c·L·Ĉ^{|u|}·γ_u^{α₀}` for a set of size `k` and weight `gamma`.
    pub fn score(&self, k: usize, gamma: f64) -> f64 {
        self.c * self.l * self.c_hat.powi(k as i32) * gamma.powf(self.alpha0)
    }

    /// `n_u′` for a set with the given score.
    pub fn n_prime(&self, score: f64) -> usize {
        allocation_count(score, self.epsilon, self.tau)
    }
}

/// `0` if `score < ε²`, else `⌊(score·ε^{−2})^{1/τ}⌋`. Values within `1e−9` of an
/// integer snap to it, so exact products are not lost to rounding.
pub fn allocation_count(score: f64, epsilon: f64, tau: f64) -> usize {
    let eps2 = epsilon * epsilon;
    if score < eps2 {
        return 0;
    }
    let x = (score / eps2).powf(1.0 / tau);
    let r = x.round();
    let n = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.floor() };
    n.max(1.0) as usize
}

/// Number of points for one coordinate set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub set: CoordSet,
    pub n: usize,
}

/// A changing dimension algorithm: `Q^{CD}(f) = Σ_{u∈Q} Q_{u,n_u}(f_{u,a})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub weights: WeightModel,
    pub constants: PlannerConstants,
    pub anchor: f64,
    pub chi: usize,
    pub template: RuleTemplate,
    /// Sorted by coordinate set; the sets form the active set `Q`.
    pub allocations: Vec<Allocation>,
}

impl Plan {
    pub fn active_set(&self) -> BTreeSet<CoordSet> {
        self.allocations.iter().map(|a| a.set.clone()).collect()
    }

    pub fn n_for(&self, u: &CoordSet) -> usize {
        self.allocations.binary_search_by(|a| a.set.cmp(u)).map_or(0, |i| self.allocations[i].n)
    }

    pub fn len(&self) -> usize {
        self.allocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Plan = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    /// Checks the structural invariants: sorted, downward closed, `n_∅ = 1`, all `n_u ≥ 1`.
    pub fn validate(&self) -> Result<()> {
        if !self.allocations.windows(2).all(|w| w[0].set < w[1].set) {
            return Err(Error::Plan("allocations must be sorted and distinct".into()));
        }
        if self.n_for(&CoordSet::empty()) != 1 {
            return Err(Error::Plan("the empty set must carry exactly one point".into()));
        }
        if self.allocations.iter().any(|a| a.n == 0) {
            return Err(Error::Plan("every active set needs at least one point".into()));
        }
        let q = self.active_set();
        if !crate::decomp::is_downward_closed(&q) {
            return Err(Error::Plan("active set is not downward closed".into()));
        }
        Ok(())
    }
}

struct ProductSearch<'a> {
    consts: &'a PlannerConstants,
    gamma: Vec<f64>,
    /// `boost[j] = Π_{i>j} max(1, Ĉγ_i^{α₀})`, index 0-based
    boost: Vec<f64>,
    eps2: f64,
    max_order: usize,
    max_sets: usize,
    found: Vec<CoordSet>,
}

impl ProductSearch<'_> {
    fn visit(&mut self, u: &CoordSet, score: f64, start: usize) -> Result<()> {
        for i in start.. {
            let g = self.gamma.get(i).copied().unwrap_or(0.0);
            let child_score = score * self.consts.c_hat * g.powf(self.consts.alpha0);
            let reach = child_score * self.boost.get(i).copied().unwrap_or(1.0);
            if reach < self.eps2 || g == 0.0 {
                break;
            }
            let child = u.extended(i as u32 + 1);
            if child_score >= self.eps2 {
                if child.len() > self.max_order {
                    return Err(Error::CapExceeded(format!("a qualifying set has more than {} coordinates", self.max_order)));
                }
                self.found.push(child.clone());
                if self.found.len() > self.max_sets {
                    return Err(Error::CapExceeded(format!("more than {} qualifying sets", self.max_sets)));
                }
            }
            if child.len() < self.max_order {
                self.visit(&child, child_score, i + 1)?;
            }
        }
        Ok(())
    }
}

/// Largest coordinate index scanned when looking for the end of `Ĉγ_j^{α₀} > 1`.
const MAX_BOOST_SCAN: u32 = 10_000_000;

/// Sets `u ≠ ∅` with `n_u′ ≥ 1` for product-structured weights, by depth-first search
/// over increasing coordinates. Requires nonincreasing singleton weights.
fn product_qualifiers(w: &WeightModel, consts: &PlannerConstants, opts: &PlannerOptions) -> Result<Vec<CoordSet>> {
    let s = w.singletons().expect("product-structured");
    if !s.is_nonincreasing() {
        return Err(Error::Plan("singleton weights must be nonincreasing in the coordinate index".into()));
    }
    let eps2 = consts.epsilon * consts.epsilon;
    let max_order = w.order().unwrap_or(usize::MAX).min(opts.max_order.max(1) + 1);
    // last index with Ĉγ_j^{α₀} > 1
    let mut big = Vec::new();
    let mut j = 1u32;
    while consts.c_hat * s.get(j).powf(consts.alpha0) > 1.0 {
        big.push(consts.c_hat * s.get(j).powf(consts.alpha0));
        j += 1;
        if j > MAX_BOOST_SCAN {
            return Err(Error::Plan("singleton weights do not decay below the planner threshold".into()));
        }
    }
    // coordinates that can appear in a qualifying set: Ĉγ_j^{α₀}·cL·boost ≥ ε²
    let top = consts.c * consts.l * big.iter().product::<f64>();
    let mut gamma = Vec::new();
    let mut j = 1u32;
    loop {
        let g = s.get(j);
        let reach = top * if (j as usize) > big.len() { consts.c_hat * g.powf(consts.alpha0) } else { 1.0 };
        if reach < eps2 || g == 0.0 {
            break;
        }
        gamma.push(g);
        j += 1;
        if gamma.len() > opts.max_sets {
            return Err(Error::CapExceeded(format!("more than {} active coordinates", opts.max_sets)));
        }
    }
    let mut boost = vec![1.0; gamma.len()];
    for i in 0..gamma.len() {
        boost[i] = big.iter().skip(i + 1).product();
    }
    let mut search =
        ProductSearch { consts, gamma, boost, eps2, max_order, max_sets: opts.max_sets, found: Vec::new() };
    search.visit(&CoordSet::empty(), consts.c * consts.l, 0)?;
    if search.found.iter().any(|u| u.len() > opts.max_order) {
        return Err(Error::CapExceeded(format!("a qualifying set has more than {} coordinates", opts.max_order)));
    }
    Ok(search.found)
}

/// Builds the plan for accuracy `epsilon`.
pub fn plan_build(w: &WeightModel, epsilon: f64, opts: &PlannerOptions, template: RuleTemplate) -> Result<Plan> {
    if matches!(w.kind(), WeightKind::Pod { .. }) && w.finite_support().is_none() {
        return Err(Error::Plan("no planner specialization exists for POD weights".into()));
    }
    let base = template.field()?;
    let consts = PlannerConstants::derive(w, epsilon, opts)?;

    let qualifiers: Vec<CoordSet> = match w.finite_support() {
        Some(entries) => {
            let q: Vec<CoordSet> = entries
                .into_iter()
                .filter(|e| consts.n_prime(consts.score(e.set.len(), e.gamma)) >= 1)
                .map(|e| e.set)
                .collect();
            if let Some(u) = q.iter().find(|u| u.len() > opts.max_order) {
                return Err(Error::CapExceeded(format!("{u} exceeds {} coordinates", opts.max_order)));
            }
            q
        }
        None => product_qualifiers(w, &consts, opts)?,
    };

    let mut q: BTreeSet<CoordSet> = BTreeSet::from([CoordSet::empty()]);
    for u in &qualifiers {
        for v in u.subsets() {
            q.insert(v);
        }
        if q.len() > opts.max_sets {
            return Err(Error::CapExceeded(format!("active set exceeds {} sets", opts.max_sets)));
        }
    }

    let allocations = q
        .into_iter()
        .map(|u| {
            let n = if u.is_empty() {
                1
            } else {
                let n = consts.n_prime(consts.score(u.len(), w.gamma(&u))).max(1);
                match template.kind {
                    RuleKind::InterlacedScrambledPlr => round_up_to_power(base, n).1,
                    RuleKind::MonteCarlo => n,
                }
            };
            Allocation { set: u, n }
        })
        .collect();
    let plan = Plan { weights: w.clone(), constants: consts, anchor: opts.anchor, chi: opts.chi, template, allocations };
    plan.validate()?;
    Ok(plan)
}

/// Charges per coordinate set, in plan order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub model: CostModel,
    pub total: f64,
    pub per_u: Vec<(CoordSet, f64)>,
}

impl CostLedger {
    pub fn new(model: CostModel) -> Self {
        CostLedger { model, total: 0.0, per_u: Vec::new() }
    }

    /// Records `evaluations` evaluations of `f_{u,a}`.
    pub fn charge(&mut self, u: &CoordSet, evaluations: usize) {
        let c = self.model.charge(u, evaluations);
        self.total += c;
        self.per_u.push((u.clone(), c));
    }
}

/// `Σ_{u∈Q} 2^{|u|} $(|u|) n_u`.
pub fn plan_cost(plan: &Plan, model: CostModel) -> f64 {
    let mut ledger = CostLedger::new(model);
    for a in &plan.allocations {
        ledger.charge(&a.set, a.n);
    }
    ledger.total
}

/// Result of one run of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ledger: CostLedger,
}

/// Compensated (Neumaier) summation in the given order.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// The rule a plan uses for one coordinate set under `master_seed`.
pub fn rule_for(plan: &Plan, a: &Allocation, master_seed: u64, cache: &GeneratorCache) -> Result<RuleSpec> {
    let seed = seeds::for_set(master_seed, &a.set);
    let t = &plan.template;
    let mut rule = match t.kind {
        RuleKind::MonteCarlo => RuleSpec::monte_carlo(a.set.clone(), a.n, seed),
        RuleKind::InterlacedScrambledPlr => cache.plr_rule(a.set.clone(), a.n, t.field()?, t.alpha, seed)?,
    };
    rule.precision = t.precision;
    Ok(rule)
}

/// Runs `plan` on `f`. Rules for distinct sets use independent seeds derived from
/// `master_seed`; the per-set results are summed in plan order.
pub fn cd_estimate<F: Integrand + ?Sized>(
    f: &F,
    plan: &Plan,
    master_seed: u64,
    cache: &GeneratorCache,
    model: CostModel,
) -> Result<Estimate> {
    let parts: Vec<(f64, usize)> = plan
        .allocations
        .par_iter()
        .map(|a| {
            if a.set.is_empty() {
                let v = f.eval(plan.anchor, &[], &[]);
                return finite(v, &a.set).map(|v| (v, 1));
            }
            let rule = rule_for(plan, a, master_seed, cache)?;
            let (mut c, mut vals) = (Vec::new(), Vec::new());
            let mut count = 0usize;
            let v = crate::quadrature::run_rule(&rule, |y| {
                count += 1;
                inclusion_exclusion(f, plan.anchor, a.set.as_slice(), y, &mut c, &mut vals)
            });
            finite(v, &a.set).map(|v| (v, count))
        })
        .collect::<Result<_>>()?;
    let mut ledger = CostLedger::new(model);
    for (a, (_, count)) in plan.allocations.iter().zip(&parts) {
        ledger.charge(&a.set, *count);
    }
    Ok(Estimate { value: neumaier_sum(parts.iter().map(|p| p.0)), ledger })
}

fn finite(v: f64, u: &CoordSet) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integrand { set: u.clone(), msg: format!("non-finite value {v}") })
    }
}

/// `d(ε) = max_{u∈Q} |u|`.
pub fn epsilon_dimension(plan: &Plan) -> usize {
    plan.allocations.iter().map(|a| a.set.len()).max().unwrap_or(0)
}

/// `F_w(n) = (1 + ln(n+1)/(|w|−1)^{α₂})^{α₁(|w|−1)^{α₂}}` for `|w| ≥ 2`, else 1.
pub fn log_factor(w_len: usize, n: usize, alpha1: f64, alpha2: f64) -> f64 {
    if w_len <= 1 || alpha1 == 0.0 {
        return 1.0;
    }
    let k = ((w_len - 1) as f64).powf(alpha2);
    (1.0 + ((n + 1) as f64).ln() / k).powf(alpha1 * k)
}

/// `B(ε) = max_{u∈Q, w⊆u} F_w(n_u)`.
pub fn diagnostics_b(plan: &Plan) -> f64 {
    let t = &plan.template;
    plan.allocations
        .iter()
        .flat_map(|a| (0..=a.set.len()).map(move |k| log_factor(k, a.n, t.alpha1, t.alpha2)))
        .fold(1.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{Entry, Singletons};

    struct Constant(f64);

    impl Integrand for Constant {
        fn eval(&self, _: f64, _: &[u32], _: &[f64]) -> f64 {
            self.0
        }
    }

    #[test]
    fn allocation_arithmetic() {
        // c = 1, L = 2, Ĉ = 2, γ^{α₀} = 0.5, τ = 1, ε = 0.1
        assert_eq!(allocation_count(1.0 * 2.0 * 2.0 * 0.5, 0.1, 1.0), 200);
        assert_eq!(allocation_count(0.009, 0.1, 1.0), 0);
        assert_eq!(allocation_count(0.02, 0.1, 2.0), 1);
    }

    #[test]
    fn cost_models() {
        assert_eq!(CostModel::Linear.dollar(0), 1.0);
        assert_eq!("poly:2".parse::<CostModel>().unwrap().dollar(2), 9.0);
        assert_eq!("exp:0".parse::<CostModel>().unwrap().dollar(5), 1.0);
        assert!("cubic".parse::<CostModel>().is_err());
        assert!("poly:x".parse::<CostModel>().is_err());
        for m in [CostModel::Linear, CostModel::Polynomial { s: 1.5 }, CostModel::Exponential { sigma: 0.3 }] {
            assert_eq!(m.to_string().parse::<CostModel>().unwrap(), m);
        }
    }

    fn plan_with(allocs: &[(&[u32], usize)]) -> Plan {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let consts = PlannerConstants::derive(&w, 1.0, &PlannerOptions::default()).unwrap();
        Plan {
            weights: w,
            constants: consts,
            anchor: 0.5,
            chi: 1,
            template: RuleTemplate::plr(2, 1),
            allocations: allocs
                .iter()
                .map(|(s, n)| Allocation { set: CoordSet::new(s.iter().copied()), n: *n })
                .collect(),
        }
    }

    #[test]
    fn plan_cost_examples() {
        assert_eq!(plan_cost(&plan_with(&[(&[], 1)]), CostModel::Linear), 1.0);
        assert_eq!(plan_cost(&plan_with(&[(&[], 1), (&[1], 4)]), CostModel::Linear), 17.0);
    }

    #[test]
    fn degenerate_plan_evaluates_the_anchor() {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let plan = plan_build(&w, 1e3, &PlannerOptions::default(), RuleTemplate::plr(2, 1)).unwrap();
        assert_eq!(plan.allocations, vec![Allocation { set: CoordSet::empty(), n: 1 }]);
        assert_eq!(epsilon_dimension(&plan), 0);
        assert_eq!(diagnostics_b(&plan), 1.0);
        let cache = GeneratorCache::default();
        let est = cd_estimate(&Constant(4.25), &plan, 1, &cache, CostModel::Linear).unwrap();
        assert_eq!(est.value, 4.25);
        assert_eq!(est.ledger.total, 1.0);
    }

    #[test]
    fn constants_survive_any_plan() {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let cache = GeneratorCache::default();
        let plan = plan_build(&w, 0.05, &PlannerOptions::default(), RuleTemplate::plr(2, 1)).unwrap();
        assert!(plan.len() > 3);
        for seed in 0..3 {
            let est = cd_estimate(&Constant(-1.5), &plan, seed, &cache, CostModel::Linear).unwrap();
            assert_eq!(est.value, -1.5);
            assert_eq!(est.ledger.total, plan_cost(&plan, CostModel::Linear));
        }
    }

    #[test]
    fn plans_are_downward_closed_and_monotone_in_epsilon() {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let opts = PlannerOptions { tau: 2.5, ..Default::default() };
        let mut prev: Option<Plan> = None;
        for eps in [0.3, 0.1, 0.03, 0.01] {
            let plan = plan_build(&w, eps, &opts, RuleTemplate::plr(2, 1)).unwrap();
            plan.validate().unwrap();
            if let Some(p) = &prev {
                for a in &p.allocations {
                    assert!(plan.n_for(&a.set) >= a.n, "{} shrank", a.set);
                }
                assert!(epsilon_dimension(&plan) >= epsilon_dimension(p));
            }
            prev = Some(plan);
        }
    }

    #[test]
    fn product_search_matches_exhaustive_scan() {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let opts = PlannerOptions { tau: 1.0, ..Default::default() };
        let eps = 0.1;
        let plan = plan_build(&w, eps, &opts, RuleTemplate::monte_carlo()).unwrap();
        let consts = plan.constants;
        let max_coord = plan.active_set().iter().filter_map(|u| u.max()).max().unwrap();
        // every set over a larger window that qualifies must be present
        for u in CoordSet::range(max_coord.min(14) + 2).subsets().filter(|u| u.len() <= 4) {
            let qualifies = consts.n_prime(consts.score(u.len(), w.gamma(&u))) >= 1;
            if qualifies {
                assert!(plan.n_for(&u) >= 1, "{u} missing");
            }
        }
        for a in plan.allocations.iter().filter(|a| !a.set.is_empty()) {
            assert_eq!(a.n, consts.n_prime(consts.score(a.set.len(), w.gamma(&a.set))).max(1));
        }
    }

    #[test]
    fn finite_order_plans_respect_the_order() {
        let w = WeightModel::finite_product(2, Singletons::PowerLaw { c: 1.0, a: 3.0 }).unwrap();
        for eps in [0.1, 0.01, 0.001] {
            let plan = plan_build(&w, eps, &PlannerOptions::default(), RuleTemplate::plr(2, 1)).unwrap();
            assert!(epsilon_dimension(&plan) <= 2);
        }
    }

    #[test]
    fn explicit_plans_iterate_the_support() {
        let w = WeightModel::explicit(vec![
            Entry { set: CoordSet::from([1]), gamma: 0.5 },
            Entry { set: CoordSet::from([2]), gamma: 0.5 },
            Entry { set: CoordSet::from([1, 2]), gamma: 0.25 },
        ])
        .unwrap();
        let plan = plan_build(&w, 0.01, &PlannerOptions::default(), RuleTemplate::plr(3, 1)).unwrap();
        assert_eq!(plan.len(), 4);
        for a in &plan.allocations[1..] {
            let (_, p) = round_up_to_power(FieldBase::THREE, a.n);
            assert_eq!(p, a.n);
        }
    }

    #[test]
    fn planner_errors() {
        let slow = WeightModel::power_law(1.0, 1.0).unwrap();
        assert!(plan_build(&slow, 0.1, &PlannerOptions::default(), RuleTemplate::plr(2, 1)).is_err());
        let pod = WeightModel::pod(vec![1.0; 3], Singletons::PowerLaw { c: 1.0, a: 3.0 })
            .unwrap()
            .with_decay(3.0)
            .unwrap();
        assert!(matches!(plan_build(&pod, 0.1, &PlannerOptions::default(), RuleTemplate::plr(2, 1)), Err(Error::Plan(_))));
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let tight = PlannerOptions { max_sets: 5, ..Default::default() };
        assert!(matches!(plan_build(&w, 1e-3, &tight, RuleTemplate::plr(2, 1)), Err(Error::CapExceeded(_))));
        let bad_alpha = PlannerOptions { alpha0: Some(0.99), ..Default::default() };
        assert!(plan_build(&w, 0.1, &bad_alpha, RuleTemplate::plr(2, 1)).is_err());
    }

    #[test]
    fn tau_is_lowered_below_decay_minus_one() {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let c = PlannerConstants::derive(&w, 0.1, &PlannerOptions { tau: 2.5, ..Default::default() }).unwrap();
        assert!((c.tau - 1.99).abs() < 1e-12);
        assert!((c.alpha0 - (1.99 / 3.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((c.c_hat - (1.0 + 1.0 / 12.0)).abs() < 1e-15);
    }

    #[test]
    fn log_factor_values() {
        assert_eq!(log_factor(2, 15, 0.0, 1.0), 1.0);
        assert!((log_factor(2, 15, 1.0, 1.0) - (1.0 + 16f64.ln())).abs() < 1e-12);
        let mut plan = plan_with(&[(&[], 1), (&[1], 15), (&[2], 15), (&[1, 2], 15)]);
        plan.template.alpha1 = 1.0;
        plan.template.alpha2 = 1.0;
        assert!((diagnostics_b(&plan) - 3.7726).abs() < 1e-4);
    }

    #[test]
    fn plan_json_round_trip() {
        let w = WeightModel::power_law(1.0, 3.0).unwrap();
        let plan = plan_build(&w, 0.05, &PlannerOptions::default(), RuleTemplate::plr(2, 1)).unwrap();
        let back = Plan::from_json(&plan.to_json().unwrap()).unwrap();
        assert_eq!(back, plan);
        let mut broken = plan.clone();
        broken.allocations.remove(0);
        assert!(Plan::from_json(&broken.to_json().unwrap()).is_err());
    }

    #[test]
    fn neumaier_is_accurate() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
    }
}
