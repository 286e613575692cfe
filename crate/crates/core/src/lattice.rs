//! Polynomial lattice point sets and component-by-component search for their
//! generating vectors.
//!
//! Row `h` of the point set has coordinate `j` equal to `v_m(h(x) q_j(x) / p(x))`.
//! Coordinates are stored as fixed-point integers `X` with value `X / b^m`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coords::CoordSet;
use crate::error::{Error, Result};
use crate::gfpoly::{laurent_digits, DigitString, FieldBase, PolyGF};
use crate::kernels::bernoulli;
use crate::scramble::{scramble_fixed, PermutationTree};
use crate::seeds;
use crate::weights::WeightModel;

/// Smallest-encoding monic irreducible polynomial of degree `m = 1..=20` over `F_2`
/// (encoded by [`PolyGF::to_int`]).
const MODULI_B2: [u64; 20] = [
    2, 7, 11, 19, 37, 67, 131, 283, 515, 1033, 2053, 4105, 8219, 16417, 32771, 65579, 131081, 262153,
    524327, 1048585,
];

/// Same for `F_3`.
const MODULI_B3: [u64; 20] = [
    3, 10, 34, 86, 250, 734, 2198, 6572, 19747, 59068, 177158, 531452, 1594330, 4782974, 14348918,
    43046758, 129140170, 387420523, 1162261478, 3486784435,
];

/// Largest `m` with a tabulated modulus.
pub const MAX_TABULATED_M: u32 = 20;

/// The tabulated irreducible modulus of degree `m`.
pub fn default_modulus(base: FieldBase, m: u32) -> Result<PolyGF> {
    let table = match base.get() {
        2 => &MODULI_B2,
        3 => &MODULI_B3,
        _ => return Err(Error::NoModulus { base: base.get(), m }),
    };
    if m == 0 || m > MAX_TABULATED_M {
        return Err(Error::NoModulus { base: base.get(), m });
    }
    Ok(PolyGF::from_int(table[m as usize - 1], base))
}

/// Exhaustive search for the smallest-encoding irreducible polynomial of degree `m`.
pub fn find_modulus(base: FieldBase, m: u32) -> Result<PolyGF> {
    let lo = base.pow(m).ok_or(Error::NoModulus { base: base.get(), m })?;
    for k in lo..2 * lo {
        let p = PolyGF::from_int(k, base);
        if p.is_irreducible()? {
            return Ok(p);
        }
    }
    Err(Error::NoModulus { base: base.get(), m })
}

/// `(b, m, p, q_1..q_s)` defining a polynomial lattice point set with `b^m` points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratingVector {
    base: FieldBase,
    m: u32,
    modulus: PolyGF,
    q: Vec<PolyGF>,
}

impl GeneratingVector {
    pub fn new(base: FieldBase, m: u32, modulus: PolyGF, q: Vec<PolyGF>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidGeneratingVector(msg));
        if m == 0 {
            return bad("m must be at least 1".into());
        }
        if base.pow(m).is_none_or(|n| n > u32::MAX as u64) {
            return bad(format!("{base}^{m} points is too many"));
        }
        if modulus.base() != base {
            return Err(Error::BaseMismatch(base.get(), modulus.base().get()));
        }
        if modulus.degree() != Some(m as usize) {
            return bad(format!("modulus {modulus} does not have degree {m}"));
        }
        let tabulated = default_modulus(base, m).is_ok_and(|p| p == modulus);
        if !tabulated && !modulus.is_irreducible()? {
            return bad(format!("modulus {modulus} is reducible"));
        }
        let mut reduced = Vec::with_capacity(q.len());
        for (j, qj) in q.into_iter().enumerate() {
            let r = qj.rem(&modulus)?;
            if r.is_zero() {
                return bad(format!("q_{} ≡ 0 mod p", j + 1));
            }
            reduced.push(r);
        }
        Ok(GeneratingVector { base, m, modulus, q: reduced })
    }

    /// Uses the tabulated modulus and the integer encodings of `q`.
    pub fn from_ints(base: FieldBase, m: u32, q: &[u64]) -> Result<Self> {
        let p = default_modulus(base, m)?;
        GeneratingVector::new(base, m, p, q.iter().map(|&k| PolyGF::from_int(k, base)).collect())
    }

    pub fn base(&self) -> FieldBase {
        self.base
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> usize {
        self.base.get().pow(self.m) as usize
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn modulus(&self) -> &PolyGF {
        &self.modulus
    }

    pub fn q(&self) -> &[PolyGF] {
        &self.q
    }

    /// Integer encodings of `q_1..q_s`.
    pub fn q_ints(&self) -> Vec<u64> {
        self.q.iter().map(PolyGF::to_int).collect()
    }

    /// Coordinate `q` of every point, in row order.
    fn column(&self, q: &PolyGF) -> Vec<u64> {
        lattice_column(self.base, self.m, &self.modulus, q)
    }
}

/// `b^m` points in `[0,1)^s`, each coordinate a fixed-point integer over `b^m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointSet {
    base: FieldBase,
    m: u32,
    s: usize,
    coords: Vec<u64>,
}

impl PointSet {
    /// Row-major coordinates; each must be below `b^m`.
    pub fn from_rows(base: FieldBase, m: u32, s: usize, coords: Vec<u64>) -> Result<Self> {
        let n = base.pow(m).ok_or(Error::Precision { precision: m, base: base.get(), m })? as usize;
        if coords.len() != n * s {
            return Err(Error::LengthMismatch { expected: n * s, got: coords.len() });
        }
        if coords.iter().any(|&c| c >= n as u64) {
            return Err(Error::Config("coordinate exceeds b^m".into()));
        }
        Ok(PointSet { base, m, s, coords })
    }

    pub fn base(&self) -> FieldBase {
        self.base
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.s
    }

    pub fn n(&self) -> usize {
        if self.s == 0 {
            self.base.get().pow(self.m) as usize
        } else {
            self.coords.len() / self.s
        }
    }

    /// Fixed-point coordinates of row `h`.
    pub fn row(&self, h: usize) -> &[u64] {
        &self.coords[h * self.s..(h + 1) * self.s]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.coords.chunks(self.s.max(1))
    }

    pub fn digits(&self, h: usize, j: usize) -> DigitString {
        DigitString::from_fixed(self.base, self.row(h)[j] as u128, self.m as usize)
    }

    pub fn value(&self, h: usize, j: usize) -> f64 {
        self.row(h)[j] as f64 / self.n() as f64
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> PointSet {
        let coords = self.rows().flat_map(|r| cols.iter().map(move |&c| r[c])).collect();
        PointSet { base: self.base, m: self.m, s: cols.len(), coords }
    }
}

/// Fixed-point digits of `v_m(h·q/p)` for all `h < b^m`, computed from the images
/// of the basis `x^i` (the map `h ↦ v_m(h q / p)` is `F_b`-linear).
fn lattice_column(base: FieldBase, m: u32, modulus: &PolyGF, q: &PolyGF) -> Vec<u64> {
    let b = base.get() as u64;
    let n = b.pow(m) as usize;
    let basis: Vec<Vec<u32>> = (0..m as usize)
        .map(|i| {
            let num = PolyGF::monomial(base, 1, i).mul_mod(q, modulus).expect("same base");
            laurent_digits(&num, modulus, m as usize).expect("nonzero modulus").digits().to_vec()
        })
        .collect();
    if b == 2 {
        let packed: Vec<u64> = basis.iter().map(|d| d.iter().fold(0u64, |acc, &t| acc << 1 | t as u64)).collect();
        return (0..n as u64)
            .map(|h| {
                let mut acc = 0u64;
                let mut bits = h;
                while bits != 0 {
                    acc ^= packed[bits.trailing_zeros() as usize];
                    bits &= bits - 1;
                }
                acc
            })
            .collect();
    }
    let mut acc = vec![0u32; m as usize];
    (0..n as u64)
        .map(|h| {
            acc.fill(0);
            let mut rest = h;
            for row in &basis {
                let k = (rest % b) as u32;
                rest /= b;
                if k != 0 {
                    for (a, &t) in acc.iter_mut().zip(row) {
                        *a = (*a + k * t) % base.get();
                    }
                }
            }
            acc.iter().fold(0u64, |v, &t| v * b + t as u64)
        })
        .collect()
}

/// The polynomial lattice point set of `gv`.
pub fn plr_points(gv: &GeneratingVector) -> PointSet {
    let n = gv.n();
    let s = gv.dim();
    let columns: Vec<Vec<u64>> = gv.q.iter().map(|q| gv.column(q)).collect();
    let mut coords = vec![0u64; n * s];
    for (j, col) in columns.iter().enumerate() {
        for (h, &c) in col.iter().enumerate() {
            coords[h * s + j] = c;
        }
    }
    PointSet { base: gv.base, m: gv.m, s, coords }
}

/// Quality criterion minimized by the component-by-component search.
///
/// The search calls [`start`](FigureOfMerit::start) once, then for each coordinate
/// scores every candidate column and [`push`](FigureOfMerit::push)es the winner.
pub trait FigureOfMerit: Sync {
    type State: Send + Sync;

    fn start(&self, base: FieldBase, m: u32, weights: &[f64]) -> Self::State;

    /// Score of the current prefix extended by `column` as coordinate `coord`.
    fn score(&self, state: &Self::State, coord: usize, column: &[u64]) -> f64;

    fn push(&self, state: &mut Self::State, coord: usize, column: &[u64]);
}

/// Weighted sum over the nonzero dual-lattice vectors `k` with every `k_j < b^m`:
///
/// `Σ_{k ∈ dual, k ≠ 0} Π_j r_j(k_j)`, `r_j(0) = 1`, `r_j(k) = γ_j b^{-λ ψ(k)}`,
///
/// where `ψ(k)` is the number of base-`b` digits of `k`. Evaluated through the
/// character-sum identity `(1/N) Σ_h Π_j (1 + γ_j φ(x_{h,j})) − 1`, where `φ`
/// depends only on the number of leading zero digits of the coordinate.
#[derive(Clone, Debug)]
pub struct WalshMerit {
    pub lambda: f64,
}

impl Default for WalshMerit {
    fn default() -> Self {
        WalshMerit { lambda: 2.0 }
    }
}

pub struct WalshState {
    base: FieldBase,
    m: u32,
    weights: Vec<f64>,
    /// `φ` indexed by the count of leading zero digits, `0..=m`
    phi: Vec<f64>,
    prod: Vec<f64>,
}

impl WalshMerit {
    /// `φ(t) = Σ_{a=1}^{min(t+1, m)} b^{-λa} b^{a-1} (a ≤ t ? b−1 : −1)`.
    pub fn phi_table(&self, base: FieldBase, m: u32) -> Vec<f64> {
        let b = base.get() as f64;
        (0..=m)
            .map(|t| {
                (1..=(t + 1).min(m))
                    .map(|a| {
                        let w = b.powf(-self.lambda * a as f64) * b.powi(a as i32 - 1);
                        if a <= t {
                            w * (b - 1.0)
                        } else {
                            -w
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

fn leading_zero_digits(x: u64, base: FieldBase, m: u32) -> usize {
    if base.get() == 2 {
        return (m - (64 - x.leading_zeros()).min(m)) as usize;
    }
    let b = base.get() as u64;
    let mut len = 0u32;
    let mut v = x;
    while v > 0 {
        len += 1;
        v /= b;
    }
    (m - len.min(m)) as usize
}

impl FigureOfMerit for WalshMerit {
    type State = WalshState;

    fn start(&self, base: FieldBase, m: u32, weights: &[f64]) -> WalshState {
        let n = base.get().pow(m) as usize;
        WalshState { base, m, weights: weights.to_vec(), phi: self.phi_table(base, m), prod: vec![1.0; n] }
    }

    fn score(&self, st: &WalshState, coord: usize, column: &[u64]) -> f64 {
        let g = st.weights[coord];
        let total: f64 = st
            .prod
            .iter()
            .zip(column)
            .map(|(&p, &x)| p * (1.0 + g * st.phi[leading_zero_digits(x, st.base, st.m)]))
            .sum();
        total / st.prod.len() as f64 - 1.0
    }

    fn push(&self, st: &mut WalshState, coord: usize, column: &[u64]) {
        let g = st.weights[coord];
        for (p, &x) in st.prod.iter_mut().zip(column) {
            *p *= 1.0 + g * st.phi[leading_zero_digits(x, st.base, st.m)];
        }
    }
}

/// Empirical variance of the scrambled (non-interlaced) rule applied to the
/// product test function `Π_i (1 + γ_i B_2(y_i)/2)` over a fixed set of seeds.
#[derive(Clone, Debug)]
pub struct EmpiricalMerit {
    pub replications: usize,
    pub seed: u64,
    pub precision: u32,
}

impl Default for EmpiricalMerit {
    fn default() -> Self {
        EmpiricalMerit { replications: 32, seed: 0x5eed, precision: 32 }
    }
}

pub struct EmpiricalState {
    base: FieldBase,
    m: u32,
    weights: Vec<f64>,
    columns: Vec<Vec<u64>>,
}

impl EmpiricalMerit {
    fn variance(&self, st: &EmpiricalState, extra: Option<&[u64]>) -> f64 {
        let cols: Vec<&[u64]> = st.columns.iter().map(Vec::as_slice).chain(extra).collect();
        let n = cols.first().map_or(0, |c| c.len());
        let precision = self.precision.max(st.m);
        let estimates: Vec<f64> = (0..self.replications as u64)
            .map(|r| {
                let rep_seed = seeds::derive(self.seed, r);
                let trees: Vec<PermutationTree> =
                    (0..cols.len()).map(|i| PermutationTree::new(rep_seed, st.base, i as u32)).collect();
                let sum: f64 = (0..n)
                    .map(|h| {
                        cols.iter()
                            .zip(&trees)
                            .zip(&st.weights)
                            .map(|((c, t), g)| {
                                let y = scramble_fixed(t, c[h], st.m, precision) as f64
                                    / (st.base.get() as f64).powi(precision as i32);
                                1.0 + g * bernoulli(2, y).expect("degree 2") / 2.0
                            })
                            .product::<f64>()
                    })
                    .sum();
                sum / n as f64
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (estimates.len() as f64 - 1.0)
    }
}

impl FigureOfMerit for EmpiricalMerit {
    type State = EmpiricalState;

    fn start(&self, base: FieldBase, m: u32, weights: &[f64]) -> EmpiricalState {
        EmpiricalState { base, m, weights: weights.to_vec(), columns: Vec::new() }
    }

    fn score(&self, st: &EmpiricalState, _coord: usize, column: &[u64]) -> f64 {
        self.variance(st, Some(column))
    }

    fn push(&self, st: &mut EmpiricalState, _coord: usize, column: &[u64]) {
        st.columns.push(column.to_vec());
    }
}

/// Parameters of the component-by-component search.
#[derive(Clone, Copy, Debug)]
pub struct CbcOptions {
    /// Candidates scored per coordinate. `None` scores every nonzero `q` of degree `< m`;
    /// `Some(0)` skips the search and returns `q_j = 1`.
    pub budget: Option<usize>,
    /// Selects the candidate subset when the budget is smaller than the candidate pool.
    pub seed: u64,
}

impl Default for CbcOptions {
    fn default() -> Self {
        CbcOptions { budget: Some(256), seed: 0 }
    }
}

/// Scores within this relative distance of the best count as ties.
const TIE_TOLERANCE: f64 = 1e-12;

/// Component-by-component search for a generating vector of dimension `s·α`.
///
/// Underlying coordinate `i` (0-based) carries the singleton weight of output
/// coordinate `i/α + 1`. Ties go to the smallest integer encoding.
pub fn search_generating_vector<F: FigureOfMerit>(
    s: usize,
    m: u32,
    base: FieldBase,
    weights: &WeightModel,
    alpha: usize,
    opts: CbcOptions,
    merit: &F,
) -> Result<GeneratingVector> {
    if alpha == 0 {
        return Err(Error::Config("interlacing factor must be at least 1".into()));
    }
    let dim = s * alpha;
    let modulus = default_modulus(base, m)?;
    let pool = base.pow(m).expect("tabulated m fits") - 1;
    let underlying: Vec<f64> =
        (0..dim).map(|i| weights.gamma(&CoordSet::from([(i / alpha + 1) as u32]))).collect();

    if opts.budget == Some(0) {
        return GeneratingVector::new(base, m, modulus, vec![PolyGF::one(base); dim]);
    }

    let mut state = merit.start(base, m, &underlying);
    let mut chosen = Vec::with_capacity(dim);
    for coord in 0..dim {
        let candidates: Vec<u64> = match opts.budget {
            Some(k) if (k as u64) < pool => {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(opts.seed, coord as u64));
                let mut picked: Vec<u64> =
                    index::sample(&mut rng, pool as usize, k).into_iter().map(|i| i as u64 + 1).collect();
                picked.sort_unstable();
                picked
            }
            _ => (1..=pool).collect(),
        };
        if candidates.is_empty() {
            return Err(Error::InvalidGeneratingVector("no candidate polynomials".into()));
        }
        let scored: Vec<(u64, f64, Vec<u64>)> = candidates
            .par_iter()
            .map(|&k| {
                let col = lattice_column(base, m, &modulus, &PolyGF::from_int(k, base));
                let sc = merit.score(&state, coord, &col);
                (k, sc, col)
            })
            .collect();
        let mut best = 0;
        for (i, (_, sc, _)) in scored.iter().enumerate().skip(1) {
            let cur = scored[best].1;
            if *sc < cur - TIE_TOLERANCE * cur.abs().max(f64::MIN_POSITIVE) {
                best = i;
            }
        }
        let (k, _, col) = &scored[best];
        merit.push(&mut state, coord, col);
        chosen.push(PolyGF::from_int(*k, base));
    }
    GeneratingVector::new(base, m, modulus, chosen)
}

/// Score of a complete generating vector under `merit` (all coordinates pushed in order).
pub fn evaluate_merit<F: FigureOfMerit>(gv: &GeneratingVector, weights: &[f64], merit: &F) -> f64 {
    let mut state = merit.start(gv.base, gv.m, weights);
    let mut last = 0.0;
    for (j, q) in gv.q.iter().enumerate() {
        let col = gv.column(q);
        last = merit.score(&state, j, &col);
        merit.push(&mut state, j, &col);
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    const B2: FieldBase = FieldBase::TWO;
    const B3: FieldBase = FieldBase::THREE;

    #[test]
    fn tabulated_moduli_match_exhaustive_search() {
        for base in [B2, B3] {
            for m in 1..=8 {
                assert_eq!(default_modulus(base, m).unwrap(), find_modulus(base, m).unwrap(), "b={base} m={m}");
            }
        }
    }

    #[test]
    #[ignore = "slow: re-derives the full table up to degree 20"]
    fn full_modulus_table() {
        for base in [B2, B3] {
            for m in 9..=MAX_TABULATED_M {
                assert_eq!(default_modulus(base, m).unwrap(), find_modulus(base, m).unwrap());
            }
        }
    }

    #[test]
    fn small_example_points() {
        let gv = GeneratingVector::from_ints(B2, 2, &[1]).unwrap();
        assert_eq!(gv.modulus(), &PolyGF::new(B2, vec![1, 1, 1]));
        let ps = plr_points(&gv);
        let values: Vec<(u128, u128)> =
            (0..4).map(|h| ps.digits(h, 0).to_rational().unwrap()).collect();
        assert_eq!(values, vec![(0, 4), (1, 4), (3, 4), (2, 4)]);
    }

    #[test]
    fn column_matches_direct_laurent_division() {
        for (base, m, q) in [(B2, 5, vec![1u64, 7, 19, 30]), (B3, 3, vec![1, 5, 22])] {
            let gv = GeneratingVector::from_ints(base, m, &q).unwrap();
            let ps = plr_points(&gv);
            for h in 0..gv.n() {
                let hp = PolyGF::from_int(h as u64, base);
                for (j, qj) in gv.q().iter().enumerate() {
                    let num = hp.mul(qj).unwrap();
                    let d = laurent_digits(&num, gv.modulus(), m as usize).unwrap();
                    assert_eq!(d.fixed_point().unwrap() as u64, ps.row(h)[j]);
                }
            }
        }
    }

    #[test]
    fn origin_row_is_zero() {
        let gv = GeneratingVector::from_ints(B3, 4, &[1, 2, 40]).unwrap();
        assert!(plr_points(&gv).row(0).iter().all(|&c| c == 0));
    }

    #[test]
    fn construction_errors() {
        // x+1 has degree 1, not 2
        let p = PolyGF::new(B2, vec![1, 1]);
        assert!(matches!(
            GeneratingVector::new(B2, 2, p, vec![PolyGF::one(B2)]),
            Err(Error::InvalidGeneratingVector(_))
        ));
        // x^2 + 1 is reducible over F_2
        let p = PolyGF::new(B2, vec![1, 0, 1]);
        assert!(GeneratingVector::new(B2, 2, p, vec![PolyGF::one(B2)]).is_err());
        // q ≡ 0 mod p
        let p = default_modulus(B2, 2).unwrap();
        assert!(GeneratingVector::new(B2, 2, p.clone(), vec![p]).is_err());
    }

    #[test]
    fn one_dimensional_search_ties_to_one() {
        let w = WeightModel::unit();
        let merit = WalshMerit::default();
        let scores: Vec<f64> = (1..=3)
            .map(|k| evaluate_merit(&GeneratingVector::from_ints(B2, 2, &[k]).unwrap(), &[1.0], &merit))
            .collect();
        assert!(scores.iter().all(|s| (s - scores[0]).abs() <= 1e-15));
        let gv =
            search_generating_vector(1, 2, B2, &w, 1, CbcOptions { budget: None, seed: 0 }, &merit).unwrap();
        assert_eq!(gv.q_ints(), vec![1]);
    }

    #[test]
    fn zero_budget_gives_all_ones() {
        let gv = search_generating_vector(
            3,
            6,
            B2,
            &WeightModel::unit(),
            2,
            CbcOptions { budget: Some(0), seed: 1 },
            &WalshMerit::default(),
        )
        .unwrap();
        assert_eq!(gv.q_ints(), vec![1; 6]);
    }

    #[test]
    fn search_is_deterministic() {
        let w = WeightModel::unit();
        let opts = CbcOptions { budget: Some(20), seed: 9 };
        let a = search_generating_vector(2, 8, B2, &w, 2, opts, &WalshMerit::default()).unwrap();
        let b = search_generating_vector(2, 8, B2, &w, 2, opts, &WalshMerit::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 4);
    }

    #[test]
    fn cbc_beats_all_ones() {
        let w = WeightModel::unit();
        let merit = WalshMerit::default();
        let gv = search_generating_vector(3, 8, B2, &w, 1, CbcOptions { budget: None, seed: 0 }, &merit).unwrap();
        let ones = GeneratingVector::from_ints(B2, 8, &[1, 1, 1]).unwrap();
        assert!(evaluate_merit(&gv, &[1.0; 3], &merit) < evaluate_merit(&ones, &[1.0; 3], &merit));
    }
}
