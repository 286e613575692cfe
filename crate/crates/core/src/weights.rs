//! Weight families `γ_u` and the scalars derived from them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::coords::CoordSet;
use crate::error::{Error, Result};

/// Singleton weights `γ_j`, `j = 1, 2, ...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Singletons {
    /// `γ_j = c·j^{−a}`
    PowerLaw { c: f64, a: f64 },
    /// `γ_j = values[j−1]`, zero past the end
    List { values: Vec<f64> },
}

impl Singletons {
    pub fn get(&self, j: u32) -> f64 {
        match self {
            Singletons::PowerLaw { c, a } => c * (j as f64).powf(-a),
            Singletons::List { values } => values.get(j as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// Number of coordinates that can carry positive weight, if finite.
    pub fn support_len(&self) -> Option<u32> {
        match self {
            Singletons::PowerLaw { c, .. } => (*c == 0.0).then_some(0),
            Singletons::List { values } => Some(values.iter().rposition(|&g| g > 0.0).map_or(0, |i| i as u32 + 1)),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Singletons::PowerLaw { c, a } if *c < 0.0 || !c.is_finite() || !a.is_finite() => {
                Err(Error::Weights(format!("invalid power law c={c}, a={a}")))
            }
            Singletons::List { values } if values.iter().any(|g| *g < 0.0 || !g.is_finite()) => {
                Err(Error::Weights("singleton weights must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    fn scaled(&self, s: f64) -> Singletons {
        match self {
            Singletons::PowerLaw { c, a } => Singletons::PowerLaw { c: c * s, a: *a },
            Singletons::List { values } => Singletons::List { values: values.iter().map(|g| g * s).collect() },
        }
    }

    /// Whether `γ_1 ≥ γ_2 ≥ ...`.
    pub fn is_nonincreasing(&self) -> bool {
        match self {
            Singletons::PowerLaw { c, a } => *a >= 0.0 || *c == 0.0,
            Singletons::List { values } => values.windows(2).all(|w| w[0] >= w[1]),
        }
    }
}

/// One explicitly weighted coordinate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub set: CoordSet,
    pub gamma: f64,
}

/// The weight family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightKind {
    /// `γ_u = Π_{j∈u} γ_j`
    Product { singletons: Singletons },
    /// product weights for `|u| ≤ order`, zero otherwise
    FiniteProduct { order: usize, singletons: Singletons },
    /// `γ_u = Γ_{|u|} Π_{j∈u} γ_j` with `Γ_0 = 1` and `order_weights[ℓ−1] = Γ_ℓ` (zero past the end)
    Pod { order_weights: Vec<f64>, singletons: Singletons },
    /// finitely many positive weights; unlisted sets are zero
    Explicit { entries: Vec<Entry> },
    /// explicit weights with intersection degree at most `rho`
    FiniteIntersection { rho: usize, entries: Vec<Entry> },
}

/// Weights `γ_u` with an optional declared decay exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    #[serde(flatten)]
    kind: WeightKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declared_decay: Option<f64>,
}

/// Truncation of infinite weighted sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    /// Largest coordinate index included.
    pub max_coord: u32,
    /// Largest `|u|` included; `None` means no limit.
    pub max_order: Option<usize>,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { max_coord: 1000, max_order: Some(6) }
    }
}

impl Truncation {
    pub fn admits(&self, u: &CoordSet) -> bool {
        u.max().is_none_or(|m| m <= self.max_coord) && self.max_order.is_none_or(|k| u.len() <= k)
    }
}

/// A truncated weighted sum together with a bound on what the truncation dropped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSum {
    pub value: f64,
    /// Upper bound on the omitted remainder, when one is available.
    pub tail_bound: Option<f64>,
    /// False when the infinite sum is known to diverge.
    pub converged: bool,
}

/// Largest finite support enumerated explicitly.
const MAX_ENUMERATED: usize = 1 << 20;

fn normalize_entries(entries: Vec<Entry>) -> Result<Vec<Entry>> {
    let mut map: BTreeMap<CoordSet, f64> = BTreeMap::new();
    for e in entries {
        if e.gamma < 0.0 || !e.gamma.is_finite() {
            return Err(Error::Weights(format!("weight of {} must be finite and nonnegative", e.set)));
        }
        if e.set.is_empty() && e.gamma != 1.0 {
            return Err(Error::Weights("the empty set must carry weight 1".into()));
        }
        if map.insert(e.set.clone(), e.gamma).is_some() {
            return Err(Error::Weights(format!("{} listed twice", e.set)));
        }
    }
    map.remove(&CoordSet::empty());
    let entries: Vec<Entry> =
        map.into_iter().filter(|(_, g)| *g > 0.0).map(|(set, gamma)| Entry { set, gamma }).collect();
    for e in &entries {
        if e.set.len() > 20 {
            return Err(Error::SetTooLarge(e.set.clone(), 20));
        }
        for sub in e.set.subsets().filter(|s| !s.is_empty()) {
            if entries.binary_search_by(|x| x.set.cmp(&sub)).is_err() {
                return Err(Error::Weights(format!("{} is weighted but its subset {sub} is not", e.set)));
            }
        }
    }
    Ok(entries)
}

/// `max_{u>0} |{v>0 : v∩u ≠ ∅}| − 1` over nonempty positive sets, or 0 without any.
fn intersection_degree_of(entries: &[Entry]) -> usize {
    entries
        .iter()
        .map(|u| entries.iter().filter(|v| v.set.intersects(&u.set)).count() - 1)
        .max()
        .unwrap_or(0)
}

/// `max_k |{u>0 : k∈u}|`.
fn coordinate_degree_of(entries: &[Entry]) -> usize {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for e in entries {
        for j in e.set.iter() {
            *counts.entry(j).or_default() += 1;
        }
    }
    counts.values().copied().max().unwrap_or(0)
}

impl WeightModel {
    fn build(kind: WeightKind) -> Result<Self> {
        match &kind {
            WeightKind::Product { singletons } | WeightKind::FiniteProduct { singletons, .. } => {
                singletons.validate()?
            }
            WeightKind::Pod { order_weights, singletons } => {
                singletons.validate()?;
                if order_weights.iter().any(|g| *g < 0.0 || !g.is_finite()) {
                    return Err(Error::Weights("order weights must be finite and nonnegative".into()));
                }
                if order_weights.windows(2).any(|w| w[0] == 0.0 && w[1] > 0.0) {
                    return Err(Error::Weights("order weights vanish before a positive order".into()));
                }
            }
            WeightKind::Explicit { .. } | WeightKind::FiniteIntersection { .. } => {}
        }
        Ok(WeightModel { kind, declared_decay: None })
    }

    pub fn product(singletons: Singletons) -> Result<Self> {
        Self::build(WeightKind::Product { singletons })
    }

    /// Product weights `γ_j = c·j^{−a}`.
    pub fn power_law(c: f64, a: f64) -> Result<Self> {
        Self::product(Singletons::PowerLaw { c, a })
    }

    pub fn finite_product(order: usize, singletons: Singletons) -> Result<Self> {
        Self::build(WeightKind::FiniteProduct { order, singletons })
    }

    pub fn pod(order_weights: Vec<f64>, singletons: Singletons) -> Result<Self> {
        Self::build(WeightKind::Pod { order_weights, singletons })
    }

    /// Finitely supported weights. Every subset of a weighted set must be weighted.
    pub fn explicit(entries: Vec<Entry>) -> Result<Self> {
        let entries = normalize_entries(entries)?;
        Self::build(WeightKind::Explicit { entries })
    }

    /// Finitely supported weights whose intersection degree must not exceed `rho`.
    pub fn finite_intersection(rho: usize, entries: Vec<Entry>) -> Result<Self> {
        let entries = normalize_entries(entries)?;
        let got = intersection_degree_of(&entries);
        if got > rho {
            return Err(Error::Weights(format!("intersection degree {got} exceeds {rho}")));
        }
        Self::build(WeightKind::FiniteIntersection { rho, entries })
    }

    /// All weights equal to one.
    pub fn unit() -> Self {
        WeightModel {
            kind: WeightKind::Product { singletons: Singletons::PowerLaw { c: 1.0, a: 0.0 } },
            declared_decay: None,
        }
    }

    /// Declares the decay exponent, overriding any analytic value.
    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        if decay.is_nan() || decay <= 0.0 {
            return Err(Error::Weights(format!("invalid decay {decay}")));
        }
        self.declared_decay = Some(decay);
        Ok(self)
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn declared_decay(&self) -> Option<f64> {
        self.declared_decay
    }

    /// The singleton sequence of product-structured variants.
    pub fn singletons(&self) -> Option<&Singletons> {
        match &self.kind {
            WeightKind::Product { singletons }
            | WeightKind::FiniteProduct { singletons, .. }
            | WeightKind::Pod { singletons, .. } => Some(singletons),
            _ => None,
        }
    }

    /// Explicit entries of finitely supported variants.
    pub fn entries(&self) -> Option<&[Entry]> {
        match &self.kind {
            WeightKind::Explicit { entries } | WeightKind::FiniteIntersection { entries, .. } => Some(entries),
            _ => None,
        }
    }

    /// Largest `|u|` with positive weight, if bounded.
    pub fn order(&self) -> Option<usize> {
        match &self.kind {
            WeightKind::FiniteProduct { order, .. } => Some(*order),
            WeightKind::Pod { order_weights, .. } => {
                order_weights.iter().rposition(|&g| g > 0.0).map(|i| i + 1).or(Some(0))
            }
            WeightKind::Explicit { entries } | WeightKind::FiniteIntersection { entries, .. } => {
                Some(entries.iter().map(|e| e.set.len()).max().unwrap_or(0))
            }
            WeightKind::Product { singletons } => singletons.support_len().map(|n| n as usize),
        }
    }

    /// `Γ_ℓ`, the factor depending on `|u|` only.
    fn order_factor(&self, l: usize) -> f64 {
        if l == 0 {
            return 1.0;
        }
        match &self.kind {
            WeightKind::Product { .. } => 1.0,
            WeightKind::FiniteProduct { order, .. } => (l <= *order) as u8 as f64,
            WeightKind::Pod { order_weights, .. } => order_weights.get(l - 1).copied().unwrap_or(0.0),
            _ => unreachable!("explicit weights have no order factor"),
        }
    }

    /// `γ_u`.
    pub fn gamma(&self, u: &CoordSet) -> f64 {
        if u.is_empty() {
            return 1.0;
        }
        match (&self.kind, self.singletons()) {
            (_, Some(s)) => self.order_factor(u.len()) * u.iter().map(|j| s.get(j)).product::<f64>(),
            (WeightKind::Explicit { entries } | WeightKind::FiniteIntersection { entries, .. }, None) => {
                entries.binary_search_by(|e| e.set.cmp(u)).map_or(0.0, |i| entries[i].gamma)
            }
            _ => unreachable!(),
        }
    }

    /// `γ̂_u = γ_u · k_aa^{|u|}`.
    pub fn hat_gamma(&self, u: &CoordSet, k_aa: f64) -> f64 {
        self.gamma(u) * k_aa.powi(u.len() as i32)
    }

    /// Cut-off weights of order one: singletons keep their weight, larger sets drop to zero.
    pub fn cutoff_order1(&self) -> WeightModel {
        let kind = match (&self.kind, self.singletons()) {
            (_, Some(s)) => {
                WeightKind::FiniteProduct { order: 1, singletons: s.scaled(self.order_factor(1)) }
            }
            (_, None) => WeightKind::Explicit {
                entries: self.entries().unwrap().iter().filter(|e| e.set.len() == 1).cloned().collect(),
            },
        };
        WeightModel { kind, declared_decay: self.declared_decay }
    }

    /// The decay exponent: the declared value if any, otherwise the analytic one.
    pub fn decay(&self) -> Result<f64> {
        if let Some(d) = self.declared_decay {
            return Ok(d);
        }
        match &self.kind {
            WeightKind::Explicit { .. } | WeightKind::FiniteIntersection { .. } => Ok(f64::INFINITY),
            WeightKind::Product { singletons } | WeightKind::FiniteProduct { singletons, .. } => match singletons {
                _ if singletons.support_len().is_some() => Ok(f64::INFINITY),
                Singletons::PowerLaw { a, .. } => Ok(*a),
                Singletons::List { .. } => unreachable!("lists have finite support"),
            },
            WeightKind::Pod { singletons, order_weights } => {
                if singletons.support_len().is_some() || order_weights.is_empty() {
                    Ok(f64::INFINITY)
                } else {
                    Err(Error::UndeclaredDecay("POD"))
                }
            }
        }
    }

    /// All nonempty sets with positive weight when there are finitely many.
    pub fn finite_support(&self) -> Option<Vec<Entry>> {
        if let Some(e) = self.entries() {
            return Some(e.to_vec());
        }
        let s = self.singletons()?;
        let n = s.support_len()?;
        let coords: Vec<u32> = (1..=n).filter(|&j| s.get(j) > 0.0).collect();
        let order = self.order().unwrap_or(coords.len()).min(coords.len());
        let count: usize = (1..=order).map(|k| binom_usize(coords.len(), k)).sum();
        if count > MAX_ENUMERATED {
            return None;
        }
        let mut out = Vec::with_capacity(count);
        let all = CoordSet::new(coords);
        for u in all.subsets() {
            if !u.is_empty() && u.len() <= order {
                let gamma = self.gamma(&u);
                if gamma > 0.0 {
                    out.push(Entry { set: u, gamma });
                }
            }
        }
        out.sort_by(|a, b| a.set.cmp(&b.set));
        Some(out)
    }

    /// `{u : u ⊆ v for some weighted v}`, including the empty set.
    pub fn support_closure(&self) -> Result<BTreeSet<CoordSet>> {
        let support = self.finite_support().ok_or(Error::InfiniteSupport)?;
        let mut out = BTreeSet::from([CoordSet::empty()]);
        for e in support {
            out.extend(e.set.subsets());
        }
        Ok(out)
    }

    /// `Σ_{∅≠u, u admitted by T} γ_u^e`.
    pub fn weighted_power_sum(&self, e: f64, trunc: Truncation) -> Result<PowerSum> {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::Weights(format!("power-sum exponent must lie in (0, 1], got {e}")));
        }
        if let Some(entries) = self.entries() {
            let value = entries.iter().filter(|x| trunc.admits(&x.set)).map(|x| x.gamma.powf(e)).sum();
            return Ok(PowerSum { value, tail_bound: Some(0.0), converged: true });
        }
        let s = self.singletons().expect("product-structured");
        let max_coord = s.support_len().map_or(trunc.max_coord, |n| n.min(trunc.max_coord));
        let g: Vec<f64> = (1..=max_coord).map(|j| s.get(j).powf(e)).collect();
        let max_order = [trunc.max_order, self.order()].into_iter().flatten().min().unwrap_or(g.len()).min(g.len());
        let esym = elementary_symmetric(&g, max_order);
        let value: f64 = (1..=max_order).map(|l| self.order_factor(l).powf(e) * esym[l]).sum();

        let finite = s.support_len().is_some_and(|n| n <= trunc.max_coord)
            && trunc.max_order.is_none_or(|k| k >= self.order().unwrap_or(usize::MAX));
        if finite {
            return Ok(PowerSum { value, tail_bound: Some(0.0), converged: true });
        }
        let (tail_bound, converged) = match (&self.kind, s) {
            (WeightKind::Product { .. } | WeightKind::FiniteProduct { .. }, Singletons::PowerLaw { c, a }) => {
                let ae = a * e;
                if ae > 1.0 {
                    let rest = c.powf(e) * (max_coord as f64).powf(1.0 - ae) / (ae - 1.0);
                    let full: f64 = g.iter().map(|x| x.ln_1p()).sum::<f64>() + rest;
                    (Some((full.exp() - 1.0 - value).max(0.0)), true)
                } else {
                    (None, false)
                }
            }
            _ => (None, true),
        };
        Ok(PowerSum { value, tail_bound, converged })
    }

    /// Largest number of positive sets meeting a positive set, minus one.
    pub fn intersection_degree(&self) -> Option<usize> {
        self.entries().map(intersection_degree_of)
    }

    /// Largest number of positive sets containing one coordinate.
    pub fn coordinate_degree(&self) -> Option<usize> {
        self.entries().map(coordinate_degree_of)
    }

    /// `γ_u ≥ γ_v` whenever `u ⊆ v`. Exhaustive for finite supports.
    pub fn is_monotone(&self) -> Option<bool> {
        if let Some(entries) = self.entries() {
            return Some(entries.iter().all(|v| {
                v.set.subsets().all(|u| self.gamma(&u) >= v.gamma)
            }));
        }
        let s = self.singletons()?;
        let small = match s {
            Singletons::PowerLaw { c, a } => *c <= 1.0 && *a >= 0.0,
            Singletons::List { values } => values.iter().all(|g| *g <= 1.0),
        };
        match &self.kind {
            WeightKind::Product { .. } | WeightKind::FiniteProduct { .. } => Some(small),
            _ => None,
        }
    }
}

fn binom_usize(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// `e_0..=e_k` of the values `g`.
pub(crate) fn elementary_symmetric(g: &[f64], k: usize) -> Vec<f64> {
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (i, &x) in g.iter().enumerate() {
        for l in (1..=k.min(i + 1)).rev() {
            e[l] += x * e[l - 1];
        }
    }
    e
}
