//! Anchored decomposition: projections `Ψ_{v,a}`, components `f_{u,a}`,
//! alternating sums `S_{Q,u}`, the worst-case bias and the `r²` scalars.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::coords::CoordSet;
use crate::error::{Error, Result};
use crate::weights::{elementary_symmetric, Truncation, WeightKind, WeightModel};

/// Default cap on `|u|` for inclusion–exclusion.
pub const MAX_COMPONENT_ORDER: usize = 20;

/// A black-box integrand on `[0,1]^ℕ` with finitely many coordinates queried at a time.
pub trait Integrand: Sync {
    /// `f` at the point whose coordinates `coords` (sorted, 1-based) take `values`
    /// and every other coordinate equals `anchor`.
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64;

    /// A finite set outside which `f` is constant, if known.
    fn declared_active(&self) -> Option<CoordSet> {
        None
    }

    /// The exact integral, if known.
    fn known_integral(&self) -> Option<f64> {
        None
    }
}

impl<T: Integrand + ?Sized> Integrand for &T {
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        (**self).eval(anchor, coords, values)
    }
    fn declared_active(&self) -> Option<CoordSet> {
        (**self).declared_active()
    }
    fn known_integral(&self) -> Option<f64> {
        (**self).known_integral()
    }
}

/// Values for a finite set of coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    coords: Vec<u32>,
    values: Vec<f64>,
}

impl Assignment {
    pub fn new(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut p: Vec<(u32, f64)> = pairs.into_iter().collect();
        p.sort_by_key(|x| x.0);
        p.dedup_by_key(|x| x.0);
        Assignment { coords: p.iter().map(|x| x.0).collect(), values: p.iter().map(|x| x.1).collect() }
    }

    /// Assigns `values[i]` to coordinate `i + 1`.
    pub fn dense(values: &[f64]) -> Self {
        Self::new(values.iter().enumerate().map(|(i, &x)| (i as u32 + 1, x)))
    }

    pub fn get(&self, j: u32) -> Option<f64> {
        self.coords.binary_search(&j).ok().map(|i| self.values[i])
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The values of `v`, in coordinate order.
    pub fn restrict(&self, v: &CoordSet) -> Result<Vec<f64>> {
        v.iter().map(|j| self.get(j).ok_or(Error::MissingCoordinate(j))).collect()
    }
}

/// `Ψ_{v,a}(f)(x) = f(x_v; a)`.
pub fn psi_project<F: Integrand + ?Sized>(f: &F, v: &CoordSet, anchor: f64, x: &Assignment) -> Result<f64> {
    let vals = x.restrict(v)?;
    Ok(f.eval(anchor, v.as_slice(), &vals))
}

/// `Σ_{v⊆u} (−1)^{|u∖v|} f(y_v; a)` with `y` given on the coordinates `u` (sorted).
/// The buffers are scratch space.
pub(crate) fn inclusion_exclusion<F: Integrand + ?Sized>(
    f: &F,
    anchor: f64,
    u: &[u32],
    y: &[f64],
    coords: &mut Vec<u32>,
    values: &mut Vec<f64>,
) -> f64 {
    let k = u.len();
    let mut sum = 0.0;
    for mask in 0u64..1 << k {
        coords.clear();
        values.clear();
        for i in 0..k {
            if mask >> i & 1 == 1 {
                coords.push(u[i]);
                values.push(y[i]);
            }
        }
        let term = f.eval(anchor, coords, values);
        if (k - mask.count_ones() as usize).is_multiple_of(2) {
            sum += term;
        } else {
            sum -= term;
        }
    }
    sum
}

/// The anchored component `f_{u,a}(x)`, by inclusion–exclusion over `2^{|u|}` evaluations.
pub fn anchored_component<F: Integrand + ?Sized>(f: &F, u: &CoordSet, anchor: f64, x: &Assignment) -> Result<f64> {
    if u.len() > MAX_COMPONENT_ORDER {
        return Err(Error::SetTooLarge(u.clone(), MAX_COMPONENT_ORDER));
    }
    let y = x.restrict(u)?;
    let v = inclusion_exclusion(f, anchor, u.as_slice(), &y, &mut Vec::new(), &mut Vec::new());
    if !v.is_finite() {
        return Err(Error::Integrand { set: u.clone(), msg: format!("non-finite value {v}") });
    }
    Ok(v)
}

/// `f_{u,a}` as an integrand in its own right.
pub struct AnchoredComponent<'a, F: ?Sized> {
    pub f: &'a F,
    pub u: CoordSet,
}

impl<F: Integrand + ?Sized> Integrand for AnchoredComponent<'_, F> {
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        let y: Vec<f64> = self
            .u
            .iter()
            .map(|j| coords.binary_search(&j).map_or(anchor, |i| values[i]))
            .collect();
        inclusion_exclusion(self.f, anchor, self.u.as_slice(), &y, &mut Vec::new(), &mut Vec::new())
    }

    fn declared_active(&self) -> Option<CoordSet> {
        Some(self.u.clone())
    }
}

/// `S_{Q,u} = Σ_{v∈Q, v⊆u} (−1)^{|v|}`.
pub fn alt_sum_s<'a>(q: impl IntoIterator<Item = &'a CoordSet>, u: &CoordSet) -> i64 {
    q.into_iter().filter(|v| v.is_subset(u)).map(|v| if v.len() % 2 == 0 { 1 } else { -1 }).sum()
}

/// `S_{Q,u}` by enumerating the subsets of `u`, for large `Q`.
fn alt_sum_s_lookup(q: &BTreeSet<CoordSet>, u: &CoordSet) -> i64 {
    u.subsets().filter(|v| q.contains(v)).map(|v| if v.len() % 2 == 0 { 1 } else { -1 }).sum()
}

/// Whether every subset of every member of `q` is a member.
pub fn is_downward_closed(q: &BTreeSet<CoordSet>) -> bool {
    q.iter().all(|u| u.subsets().all(|v| q.contains(&v)))
}

/// The worst-case squared bias and what is known about its truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// `Σ_{∅≠u} S_{Q,u}² γ_u k_aa^{|u|}` over the truncated index set.
    pub value: f64,
    /// Upper bound on the mass skipped by the enumeration's pruning.
    pub pruned: f64,
    /// `Σ_{u∉Q} 4^{|u|} γ_u k_aa^{|u|}` over the truncated index set (product-structured weights).
    pub upper_bound: Option<f64>,
}

/// Relative pruning tolerance of the product-weight bias enumeration.
pub const BIAS_REL_TOL: f64 = 1e-8;

/// Worst-case squared bias of the changing dimension algorithm with active set `q`.
pub fn bias_squared(q: &BTreeSet<CoordSet>, w: &WeightModel, k_aa: f64, trunc: Truncation) -> Result<BiasReport> {
    bias_squared_with(q, w, k_aa, trunc, BIAS_REL_TOL)
}

/// [`bias_squared`] with an explicit pruning tolerance (`0` disables pruning).
pub fn bias_squared_with(
    q: &BTreeSet<CoordSet>,
    w: &WeightModel,
    k_aa: f64,
    trunc: Truncation,
    rel_tol: f64,
) -> Result<BiasReport> {
    if let Some(entries) = w.entries() {
        let value = entries
            .iter()
            .filter(|e| trunc.admits(&e.set))
            .map(|e| {
                let s = alt_sum_s_lookup(q, &e.set) as f64;
                s * s * e.gamma * k_aa.powi(e.set.len() as i32)
            })
            .sum();
        return Ok(BiasReport { value, pruned: 0.0, upper_bound: None });
    }
    if matches!(w.kind(), WeightKind::Pod { .. }) && w.order().is_none() {
        return Err(Error::Weights("POD weights need a finite order for the bias enumeration".into()));
    }
    product_bias(q, w, k_aa, trunc, rel_tol)
}

struct BiasSearch<'a> {
    q: &'a BTreeSet<CoordSet>,
    c: Vec<u32>,
    hat: Vec<f64>,
    /// `suffix[i] = Π_{k≥i} (1 + 4γ̂_{c_k})`
    suffix: Vec<f64>,
    /// `inner[k] = Σ_ℓ Γ_{k+ℓ} e_ℓ(outside)`
    inner: Vec<f64>,
    inner_max: f64,
    max_order: usize,
    rel_tol: f64,
    total: f64,
    pruned: f64,
}

impl BiasSearch<'_> {
    fn visit(&mut self, s: &CoordSet, hat_s: f64, start: usize) {
        for i in start..self.c.len() {
            let child = s.extended(self.c[i]);
            let hat_c = hat_s * self.hat[i];
            let k = child.len();
            let bound = 4f64.powi(k as i32) * hat_c * self.inner_max * self.suffix[i + 1];
            if bound <= self.rel_tol * self.total {
                self.pruned += bound;
                continue;
            }
            let sv = alt_sum_s_lookup(self.q, &child) as f64;
            self.total += sv * sv * hat_c * self.inner[k];
            if k < self.max_order {
                self.visit(&child, hat_c, i + 1);
            }
        }
    }
}

/// Splits every `u` into `u ∩ C` and the rest, where `C = ∪Q`; `S_{Q,u}` only
/// depends on `u ∩ C`, and the sum over the rest is an elementary symmetric sum.
fn product_bias(
    q: &BTreeSet<CoordSet>,
    w: &WeightModel,
    k_aa: f64,
    trunc: Truncation,
    rel_tol: f64,
) -> Result<BiasReport> {
    let s = w.singletons().expect("product-structured");
    let t = s.support_len().map_or(trunc.max_coord, |n| n.min(trunc.max_coord));
    let max_order = [trunc.max_order, w.order()].into_iter().flatten().min().unwrap_or(t as usize);
    let order_factor = order_factors(w, max_order);

    let union: BTreeSet<u32> = q.iter().flat_map(|u| u.iter()).filter(|&j| j <= t).collect();
    let c: Vec<u32> = union.into_iter().collect();
    let outside: Vec<f64> =
        (1..=t).filter(|j| c.binary_search(j).is_err()).map(|j| s.get(j) * k_aa).collect();
    let e_out = elementary_symmetric(&outside, max_order);
    let inner: Vec<f64> =
        (0..=max_order).map(|k| (0..=max_order - k).map(|l| order_factor[k + l] * e_out[l]).sum()).collect();
    let hat: Vec<f64> = c.iter().map(|&j| s.get(j) * k_aa).collect();
    let mut suffix = vec![1.0; c.len() + 1];
    for i in (0..c.len()).rev() {
        suffix[i] = suffix[i + 1] * (1.0 + 4.0 * hat[i]);
    }
    let inner_max = inner.iter().copied().fold(0.0, f64::max);

    // s = ∅ has S = 1 and contributes every nonempty set outside C
    let mut search = BiasSearch {
        q,
        c,
        hat,
        suffix,
        inner: inner.clone(),
        inner_max,
        max_order,
        rel_tol,
        total: inner[0] - 1.0,
        pruned: 0.0,
    };
    search.visit(&CoordSet::empty(), 1.0, 0);

    // Σ_{u∉Q} 4^{|u|} γ̂_u = Σ_all − Σ_{u∈Q}
    let four: Vec<f64> = (1..=t).map(|j| 4.0 * s.get(j) * k_aa).collect();
    let e4 = elementary_symmetric(&four, max_order);
    let all: f64 = (1..=max_order).map(|l| order_factor[l] * e4[l]).sum();
    let inside: f64 = q
        .iter()
        .filter(|u| !u.is_empty() && trunc.admits(u))
        .map(|u| 4f64.powi(u.len() as i32) * w.hat_gamma(u, k_aa))
        .sum();
    Ok(BiasReport { value: search.total, pruned: search.pruned, upper_bound: Some((all - inside).max(0.0)) })
}

fn order_factor_fallback(w: &WeightModel, l: usize) -> f64 {
    match w.kind() {
        WeightKind::FiniteProduct { order, .. } => (l <= *order) as u8 as f64,
        WeightKind::Pod { order_weights, .. } => {
            if l == 0 {
                1.0
            } else {
                order_weights.get(l - 1).copied().unwrap_or(0.0)
            }
        }
        _ => 1.0,
    }
}

/// `Γ_ℓ` of a product-structured model, read off its `γ` on `[ℓ]`.
fn order_factors(w: &WeightModel, max_order: usize) -> Vec<f64> {
    let s = w.singletons().expect("product-structured");
    (0..=max_order)
        .map(|l| {
            let p: f64 = (1..=l as u32).map(|j| s.get(j)).product();
            if p > 0.0 {
                w.gamma(&CoordSet::range(l as u32)) / p
            } else {
                order_factor_fallback(w, l)
            }
        })
        .collect()
}

/// `r²_{v,u,a} = Σ_{u′ ⊆ [T]∖v} γ_{u∪u′} k_aa^{|u′|}`.
pub fn r_squared(v: &CoordSet, u: &CoordSet, k_aa: f64, w: &WeightModel, trunc: Truncation) -> Result<f64> {
    if !u.is_subset(v) {
        return Err(Error::NotSubset { u: u.clone(), v: v.clone() });
    }
    if let Some(entries) = w.entries() {
        let mut sum = if u.is_empty() { 1.0 } else { 0.0 };
        for e in entries {
            if e.set.intersection(v) == *u {
                let extra = e.set.difference(v);
                if (!extra.is_empty() || !u.is_empty())
                    && trunc.admits(&extra) {
                        sum += e.gamma * k_aa.powi(extra.len() as i32);
                    }
            }
        }
        return Ok(sum);
    }
    let s = w.singletons().expect("product-structured");
    let t = s.support_len().map_or(trunc.max_coord, |n| n.min(trunc.max_coord));
    let outside: Vec<f64> = (1..=t).filter(|&j| !v.contains(j)).map(|j| s.get(j) * k_aa).collect();
    let order = w.order().unwrap_or(usize::MAX);
    let max_extra = trunc.max_order.unwrap_or(outside.len()).min(outside.len()).min(order.saturating_sub(u.len()));
    if u.len() > order {
        return Ok(0.0);
    }
    let e = elementary_symmetric(&outside, max_extra);
    let gamma_l = order_factors(w, u.len() + max_extra);
    let prod_u: f64 = u.iter().map(|j| s.get(j)).product();
    Ok(prod_u * (0..=max_extra).map(|l| gamma_l[u.len() + l] * e[l]).sum::<f64>())
}

/// `‖Ψ_{v,a}‖ = max_{u⊆v, γ_u>0} γ_u^{−1/2} r_{v,u,a}`.
pub fn psi_operator_norm(v: &CoordSet, k_aa: f64, w: &WeightModel, trunc: Truncation) -> Result<f64> {
    if v.len() > MAX_COMPONENT_ORDER {
        return Err(Error::SetTooLarge(v.clone(), MAX_COMPONENT_ORDER));
    }
    let mut best: f64 = 0.0;
    for u in v.subsets() {
        let g = w.gamma(&u);
        if g > 0.0 {
            best = best.max((r_squared(v, &u, k_aa, w, trunc)? / g).sqrt());
        }
    }
    Ok(best)
}

/// `Ψ_{Q,a} f = Σ_{w∈Q} f_{w,a}` for a downward-closed `Q`.
///
/// Queries supported on a member of `Q` return `f` itself, since the components
/// telescope there. Other queries are evaluated by inclusion–exclusion and counted.
pub struct ProjectedIntegrand<'a, F: ?Sized> {
    f: &'a F,
    q: BTreeSet<CoordSet>,
    outside: AtomicUsize,
}

impl<'a, F: Integrand + ?Sized> ProjectedIntegrand<'a, F> {
    pub fn new(f: &'a F, q: BTreeSet<CoordSet>) -> Result<Self> {
        if !is_downward_closed(&q) {
            return Err(Error::Plan("projection set is not downward closed".into()));
        }
        Ok(ProjectedIntegrand { f, q, outside: AtomicUsize::new(0) })
    }

    /// Number of queries whose support was not a member of `Q`.
    pub fn outside_queries(&self) -> usize {
        self.outside.load(Ordering::Relaxed)
    }
}

impl<F: Integrand + ?Sized> Integrand for ProjectedIntegrand<'_, F> {
    fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
        let support = CoordSet::new(coords.iter().copied());
        if self.q.contains(&support) {
            return self.f.eval(anchor, coords, values);
        }
        self.outside.fetch_add(1, Ordering::Relaxed);
        let (mut c, mut v) = (Vec::new(), Vec::new());
        self.q
            .iter()
            .filter(|w| w.is_subset(&support))
            .map(|w| {
                let y: Vec<f64> = w.iter().map(|j| values[coords.binary_search(&j).unwrap()]).collect();
                inclusion_exclusion(self.f, anchor, w.as_slice(), &y, &mut c, &mut v)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::bernoulli;
    use crate::weights::{Entry, Singletons};

    struct Fn1<G: Fn(&[f64]) -> f64 + Sync>(usize, G);

    impl<G: Fn(&[f64]) -> f64 + Sync> Integrand for Fn1<G> {
        fn eval(&self, anchor: f64, coords: &[u32], values: &[f64]) -> f64 {
            let mut x = vec![anchor; self.0];
            for (&j, &v) in coords.iter().zip(values) {
                if (j as usize) <= self.0 {
                    x[j as usize - 1] = v;
                }
            }
            (self.1)(&x)
        }
    }

    fn b(t: usize, x: f64) -> f64 {
        bernoulli(t, x).unwrap()
    }

    fn recursive(f: &dyn Integrand, u: &CoordSet, a: f64, x: &Assignment) -> f64 {
        let psi = psi_project(f, u, a, x).unwrap();
        psi - u.subsets().filter(|v| v != u).map(|v| recursive(f, &v, a, x)).sum::<f64>()
    }

    fn entry(set: &[u32], gamma: f64) -> Entry {
        Entry { set: CoordSet::new(set.iter().copied()), gamma }
    }

    #[test]
    fn projections() {
        let f = Fn1(2, |x: &[f64]| b(1, x[0]));
        let x = Assignment::dense(&[0.9, 0.3]);
        assert_eq!(psi_project(&f, &CoordSet::from([2]), 0.5, &x).unwrap(), 0.0);
        assert_eq!(psi_project(&f, &CoordSet::empty(), 0.5, &x).unwrap(), 0.0);
        assert!(matches!(psi_project(&f, &CoordSet::from([3]), 0.5, &x), Err(Error::MissingCoordinate(3))));
        assert_eq!(anchored_component(&f, &CoordSet::empty(), 0.5, &x).unwrap(), 0.0);
        assert!((anchored_component(&f, &CoordSet::from([1]), 0.5, &x).unwrap() - b(1, 0.9)).abs() < 1e-16);
    }

    #[test]
    fn inclusion_exclusion_matches_recursion() {
        let f = Fn1(4, |x: &[f64]| b(2, x[0]) * b(2, x[1]) + x[2].exp() * x[3] + x[0] * x[2] * x[3]);
        let x = Assignment::dense(&[0.11, 0.52, 0.93, 0.34]);
        for a in [0.0, 0.5] {
            for u in CoordSet::range(4).subsets() {
                let ie = anchored_component(&f, &u, a, &x).unwrap();
                let rec = recursive(&f, &u, a, &x);
                assert!((ie - rec).abs() < 1e-12, "{u}: {ie} vs {rec}");
            }
            let total: f64 = CoordSet::range(4).subsets().map(|u| anchored_component(&f, &u, a, &x).unwrap()).sum();
            assert!((total - f.eval(a, x.coords(), x.values())).abs() < 1e-12);
        }
    }

    #[test]
    fn components_vanish_off_their_support() {
        let f = Fn1(3, |x: &[f64]| (x[0] * x[1]).sin() + x[2] * x[1]);
        let x = Assignment::dense(&[0.2, 0.7, 0.4]);
        for u in CoordSet::range(3).subsets() {
            let comp = AnchoredComponent { f: &f, u: u.clone() };
            for w in CoordSet::range(3).subsets().filter(|w| !u.is_subset(w)) {
                assert!(psi_project(&comp, &w, 0.5, &x).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cap_and_errors() {
        let f = Fn1(1, |_: &[f64]| 1.0);
        let big = CoordSet::range(21);
        let x = Assignment::dense(&[0.5; 21]);
        assert!(matches!(anchored_component(&f, &big, 0.5, &x), Err(Error::SetTooLarge(_, 20))));
        let nan = Fn1(1, |_: &[f64]| f64::NAN);
        assert!(matches!(
            anchored_component(&nan, &CoordSet::from([1]), 0.5, &Assignment::dense(&[0.1])),
            Err(Error::Integrand { .. })
        ));
    }

    #[test]
    fn alternating_sums() {
        let q = BTreeSet::from([CoordSet::empty()]);
        assert_eq!(alt_sum_s(&q, &CoordSet::from([1, 2])), 1);
        let q1 = BTreeSet::from([CoordSet::empty(), CoordSet::from([1])]);
        assert_eq!(alt_sum_s(&q1, &CoordSet::from([1, 2])), 0);
        assert_eq!(alt_sum_s(&q1, &CoordSet::from([1])), 0);
        assert_eq!(alt_sum_s_lookup(&q1, &CoordSet::from([2, 3])), 1);
    }

    #[test]
    fn bias_examples() {
        let w = WeightModel::explicit(vec![entry(&[1], 0.5)]).unwrap();
        let q = BTreeSet::from([CoordSet::empty()]);
        let r = bias_squared(&q, &w, 1.0 / 12.0, Truncation::default()).unwrap();
        assert!((r.value - 1.0 / 24.0).abs() < 1e-16);
        let full = w.support_closure().unwrap();
        assert_eq!(bias_squared(&full, &w, 1.0 / 12.0, Truncation::default()).unwrap().value, 0.0);
    }

    #[test]
    fn product_bias_matches_brute_force() {
        let k = 1.0 / 12.0;
        let trunc = Truncation { max_coord: 9, max_order: None };
        let brute = |w: &WeightModel, q: &BTreeSet<CoordSet>| -> f64 {
            CoordSet::range(9)
                .subsets()
                .filter(|u| !u.is_empty())
                .map(|u| {
                    let s = alt_sum_s(q, &u) as f64;
                    s * s * w.hat_gamma(&u, k)
                })
                .sum()
        };
        let qs: Vec<BTreeSet<CoordSet>> = vec![
            BTreeSet::from([CoordSet::empty()]),
            BTreeSet::from([CoordSet::empty(), CoordSet::from([1])]),
            CoordSet::from([1, 2]).subsets().chain(CoordSet::from([3, 5]).subsets()).collect(),
        ];
        let models = [
            WeightModel::power_law(1.0, 2.0).unwrap(),
            WeightModel::finite_product(2, Singletons::PowerLaw { c: 2.0, a: 1.5 }).unwrap(),
            WeightModel::pod(vec![1.0, 2.0, 6.0], Singletons::PowerLaw { c: 0.5, a: 2.0 }).unwrap(),
        ];
        for w in &models {
            for q in &qs {
                let got = bias_squared_with(q, w, k, trunc, 0.0).unwrap();
                let want = brute(w, q);
                assert!((got.value - want).abs() < 1e-15, "{w:?} {q:?}: {} vs {want}", got.value);
                assert!(got.value <= got.upper_bound.unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn r_squared_paths() {
        let k = 1.0 / 12.0;
        let w = WeightModel::power_law(1.0, 2.0).unwrap();
        let v = CoordSet::from([1]);
        let closed = r_squared(&v, &v, k, &w, Truncation { max_coord: 100, max_order: None }).unwrap();
        let prod: f64 = (2..=100).map(|j| 1.0 + (j as f64).powi(-2) * k).product();
        assert!((closed - prod).abs() < 1e-12);

        let t3 = Truncation { max_coord: 100, max_order: Some(3) };
        let got = r_squared(&v, &v, k, &w, t3).unwrap();
        let mut brute = 1.0;
        for a in 2..=100u32 {
            let ga = (a as f64).powi(-2) * k;
            brute += ga;
            for b in a + 1..=100 {
                let gb = ga * (b as f64).powi(-2) * k;
                brute += gb;
                for c in b + 1..=100 {
                    brute += gb * (c as f64).powi(-2) * k;
                }
            }
        }
        assert!((got - brute).abs() < 1e-9, "{got} vs {brute}");

        let inside = WeightModel::explicit(vec![entry(&[1], 0.3), entry(&[2], 0.2), entry(&[1, 2], 0.1)]).unwrap();
        let v12 = CoordSet::from([1, 2]);
        assert_eq!(r_squared(&v12, &CoordSet::from([1]), k, &inside, Truncation::default()).unwrap(), 0.3);
        assert!(r_squared(&CoordSet::from([1]), &v12, k, &inside, Truncation::default()).is_err());
        assert!((psi_operator_norm(&v12, k, &inside, Truncation::default()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn explicit_r_squared_and_norm_match_enumeration() {
        let k: f64 = 0.2;
        let mut entries = Vec::new();
        for u in CoordSet::range(4).subsets().filter(|u| !u.is_empty()) {
            let g = 0.6f64.powi(u.len() as i32) / u.iter().map(|j| j as f64).sum::<f64>();
            entries.push(Entry { set: u, gamma: g });
        }
        let w = WeightModel::explicit(entries).unwrap();
        let v = CoordSet::from([1, 2]);
        let mut best: f64 = 0.0;
        for u in v.subsets() {
            let brute: f64 = CoordSet::from([3, 4])
                .subsets()
                .map(|up| w.gamma(&u.union(&up)) * k.powi(up.len() as i32))
                .sum();
            let got = r_squared(&v, &u, k, &w, Truncation::default()).unwrap();
            assert!((got - brute).abs() < 1e-15);
            best = best.max((brute / w.gamma(&u)).sqrt());
        }
        assert!((psi_operator_norm(&v, k, &w, Truncation::default()).unwrap() - best).abs() < 1e-15);
    }

    #[test]
    fn cutoff_operator_norm() {
        let k = 1.0 / 12.0;
        let trunc = Truncation { max_coord: 200, max_order: None };
        let w = WeightModel::power_law(1.0, 2.0).unwrap().cutoff_order1();
        let v = CoordSet::from([1, 3]);
        let sum: f64 = (1..=200u32).filter(|j| !v.contains(*j)).map(|j| (j as f64).powi(-2) * k).sum();
        let norm = psi_operator_norm(&v, k, &w, trunc).unwrap();
        assert!((norm - (1.0 + sum).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projected_integrand_counts_outside_queries() {
        let f = Fn1(3, |x: &[f64]| x[0] * x[1] + x[2]);
        let q: BTreeSet<CoordSet> = CoordSet::from([1, 2]).subsets().collect();
        let p = ProjectedIntegrand::new(&f, q.clone()).unwrap();
        assert_eq!(p.eval(0.5, &[1, 2], &[0.2, 0.3]), f.eval(0.5, &[1, 2], &[0.2, 0.3]));
        assert_eq!(p.outside_queries(), 0);
        // Ψ_Q f at (x_1, x_2, x_3) drops the x_3 component
        let got = p.eval(0.5, &[1, 2, 3], &[0.2, 0.3, 0.9]);
        assert!((got - f.eval(0.5, &[1, 2], &[0.2, 0.3])).abs() < 1e-15);
        assert_eq!(p.outside_queries(), 1);
        let mut bad = q;
        bad.remove(&CoordSet::from([1]));
        assert!(ProjectedIntegrand::new(&f, bad).is_err());
    }
}
