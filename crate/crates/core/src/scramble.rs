//! Owen's nested uniform scrambling and digit interlacing.
//!
//! # Permutation construction
//!
//! The permutation applied to digit `k` of coordinate `j` depends on the seed,
//! on `j` and on the input digits `x_1..x_{k-1}`. A tree node is identified by
//! `id = b^{k-1} + (x_1 b^{k-2} + ... + x_{k-1})`, which is unique across depths.
//! Its key is `mix(tree_key ^ id·φ)` with `tree_key = derive(derive(seed, TREE_TAG), j)`,
//! `φ = 0x9e3779b97f4a7c15` and `mix`/`derive` from [`crate::seeds`]. The
//! permutation is a Fisher–Yates shuffle of `0..b`: for `i = b-1, ..., 1`, swap
//! positions `i` and `⌊(r_i >> 32)(i+1) / 2^32⌋` where `r_1` is the node key and
//! `r_i = mix(key + i·φ)` for `i ≥ 2`. In base 2 this flips the digit iff the top
//! bit of the node key is zero.

use crate::error::{Error, Result};
use crate::gfpoly::{DigitString, FieldBase};
use crate::lattice::PointSet;
use crate::seeds::{self, mix, GOLDEN};

const TREE_TAG: u64 = 0x7265_6573;

/// Default number of base-`b` digits kept after scrambling.
pub const DEFAULT_PRECISION: u32 = 32;

/// A family of digit permutations `π_{prefix}` for one coordinate.
pub trait DigitScrambler: Sync {
    fn base(&self) -> FieldBase;

    /// Image of `digit` under the permutation at digit position `depth` (1-based)
    /// reached through the input digits encoded in `prefix`.
    fn permute(&self, depth: u32, prefix: u64, digit: u32) -> u32;
}

/// Seeded, lazily evaluated tree of uniform random permutations for one coordinate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationTree {
    seed: u64,
    base: FieldBase,
    coordinate: u32,
    key: u64,
}

impl PermutationTree {
    pub fn new(seed: u64, base: FieldBase, coordinate: u32) -> Self {
        let key = seeds::derive(seeds::derive(seed, TREE_TAG), coordinate as u64);
        PermutationTree { seed, base, coordinate, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coordinate(&self) -> u32 {
        self.coordinate
    }

    #[inline]
    fn node_key(&self, depth: u32, prefix: u64) -> u64 {
        let id = (self.base.get() as u64).pow(depth - 1) + prefix;
        mix(self.key ^ id.wrapping_mul(GOLDEN))
    }

    /// The full permutation at a node, as the image table `π(0), ..., π(b-1)`.
    pub fn permutation(&self, depth: u32, prefix: u64) -> Vec<u32> {
        let b = self.base.get();
        let mut perm: Vec<u32> = (0..b).collect();
        shuffle(&mut perm, self.node_key(depth, prefix));
        perm
    }
}

#[inline]
fn bounded(r: u64, n: u64) -> usize {
    (((r >> 32) * n) >> 32) as usize
}

fn shuffle(perm: &mut [u32], key: u64) {
    for i in (1..perm.len()).rev() {
        let r = if i == 1 { key } else { mix(key.wrapping_add((i as u64).wrapping_mul(GOLDEN))) };
        perm.swap(i, bounded(r, i as u64 + 1));
    }
}

impl DigitScrambler for PermutationTree {
    fn base(&self) -> FieldBase {
        self.base
    }

    #[inline]
    fn permute(&self, depth: u32, prefix: u64, digit: u32) -> u32 {
        let key = self.node_key(depth, prefix);
        match self.base.get() {
            2 => digit ^ (1 - (key >> 63) as u32),
            b if b <= 32 => {
                let mut perm = [0u32; 32];
                for (i, p) in perm[..b as usize].iter_mut().enumerate() {
                    *p = i as u32;
                }
                shuffle(&mut perm[..b as usize], key);
                perm[digit as usize]
            }
            _ => self.permutation(depth, prefix)[digit as usize],
        }
    }
}

/// Every permutation is the identity.
#[derive(Clone, Copy, Debug)]
pub struct IdentityScrambler(pub FieldBase);

impl DigitScrambler for IdentityScrambler {
    fn base(&self) -> FieldBase {
        self.0
    }

    fn permute(&self, _depth: u32, _prefix: u64, digit: u32) -> u32 {
        digit
    }
}

fn check_precision(base: FieldBase, m: u32, precision: u32) -> Result<()> {
    if precision < m || precision == 0 || precision > base.max_u64_digits() {
        return Err(Error::Precision { precision, base: base.get(), m });
    }
    Ok(())
}

/// Scrambles the `m`-digit fixed-point value `x` (over `b^m`) to `precision` digits.
/// Digits past `m` are zeros on input. Returns a fixed-point value over `b^precision`.
#[inline]
pub fn scramble_fixed<S: DigitScrambler>(tree: &S, x: u64, m: u32, precision: u32) -> u64 {
    let b = tree.base().get() as u64;
    let mut out = 0u64;
    let mut prefix = 0u64;
    if b == 2 {
        for k in 1..=precision {
            let digit = if k <= m { (x >> (m - k)) & 1 } else { 0 };
            out = out << 1 | tree.permute(k, prefix, digit as u32) as u64;
            prefix = prefix << 1 | digit;
        }
        return out;
    }
    let mut div = b.pow(m);
    for k in 1..=precision {
        let digit = if k <= m {
            div /= b;
            (x / div) % b
        } else {
            0
        };
        out = out * b + tree.permute(k, prefix, digit as u32) as u64;
        prefix = prefix * b + digit;
    }
    out
}

/// Owen scrambling of an exact digit string, returning `precision` digits.
pub fn owen_scramble<S: DigitScrambler>(tree: &S, x: &DigitString, precision: u32) -> Result<DigitString> {
    let base = tree.base();
    if x.base() != base {
        return Err(Error::BaseMismatch(base.get(), x.base().get()));
    }
    check_precision(base, x.precision() as u32, precision)?;
    let fixed = x.fixed_point().expect("precision bounded by u64") as u64;
    let out = scramble_fixed(tree, fixed, x.precision() as u32, precision);
    Ok(DigitString::from_fixed(base, out as u128, precision as usize))
}

/// The digit interlacing map `D_α`: output digit `r + (d-1)α` is digit `d` of input `r`.
/// Inputs shorter than the longest one are padded with zeros.
pub fn interlace(alpha: usize, block: &[DigitString]) -> Result<DigitString> {
    if block.len() != alpha || alpha == 0 {
        return Err(Error::LengthMismatch { expected: alpha, got: block.len() });
    }
    let base = block[0].base();
    if let Some(other) = block.iter().find(|d| d.base() != base) {
        return Err(Error::BaseMismatch(base.get(), other.base().get()));
    }
    let len = block.iter().map(DigitString::precision).max().unwrap_or(0);
    let mut digits = Vec::with_capacity(len * alpha);
    for d in 0..len {
        for x in block {
            digits.push(x.digits().get(d).copied().unwrap_or(0));
        }
    }
    DigitString::new(base, digits)
}

/// Value of the interlaced digits of `block` (each a fixed-point integer with
/// `precision` digits), accumulated from the least significant digit upward exactly
/// like [`DigitString::to_f64`].
#[inline]
pub fn interlaced_value(block: &[u64], base: FieldBase, precision: u32) -> f64 {
    let b = base.get() as u64;
    let inv = 1.0 / b as f64;
    if b == 2 && block.len() == 1 && precision <= 53 {
        // exact, and identical to the digit-by-digit sum
        return block[0] as f64 * (precision as f64).exp2().recip();
    }
    let mut acc = 0.0;
    let mut div = 1u64;
    for _ in 0..precision {
        for &x in block.iter().rev() {
            acc = (acc + ((x / div) % b) as f64) * inv;
        }
        div *= b;
    }
    acc
}

/// Scrambling parameters for an interlaced scrambled point set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScrambleConfig {
    /// Digits kept per underlying coordinate; `None` means `max(m, 32)`.
    pub precision: Option<u32>,
    pub alpha: usize,
    pub seed: u64,
}

impl ScrambleConfig {
    pub fn new(alpha: usize, seed: u64) -> Self {
        ScrambleConfig { precision: None, alpha, seed }
    }

    pub fn precision_for(&self, m: u32) -> u32 {
        self.precision.unwrap_or(m.max(DEFAULT_PRECISION))
    }

    /// One independent tree per underlying coordinate.
    pub fn trees(&self, base: FieldBase, dim: usize) -> Vec<PermutationTree> {
        (0..dim as u32).map(|i| PermutationTree::new(self.seed, base, i)).collect()
    }
}

/// A point set with exact digit-string coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigitPointSet {
    s: usize,
    coords: Vec<DigitString>,
}

impl DigitPointSet {
    pub fn n(&self) -> usize {
        self.coords.len().checked_div(self.s).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.s
    }

    pub fn coord(&self, h: usize, j: usize) -> &DigitString {
        &self.coords[h * self.s + j]
    }

    pub fn row(&self, h: usize) -> &[DigitString] {
        &self.coords[h * self.s..(h + 1) * self.s]
    }

    pub fn value(&self, h: usize, j: usize) -> f64 {
        self.coord(h, j).to_f64()
    }
}

/// Scrambles every underlying coordinate `i` with `trees[i]` and interlaces blocks
/// of `alpha` consecutive coordinates.
pub fn interlaced_points_with<S: DigitScrambler>(
    ps: &PointSet,
    alpha: usize,
    precision: u32,
    trees: &[S],
) -> Result<DigitPointSet> {
    if alpha == 0 || !ps.dim().is_multiple_of(alpha) {
        return Err(Error::NotDivisible { dim: ps.dim(), alpha });
    }
    if trees.len() != ps.dim() {
        return Err(Error::LengthMismatch { expected: ps.dim(), got: trees.len() });
    }
    check_precision(ps.base(), ps.m(), precision)?;
    let s = ps.dim() / alpha;
    let mut coords = Vec::with_capacity(ps.n() * s);
    for row in ps.rows() {
        for j in 0..s {
            let block: Vec<DigitString> = (j * alpha..(j + 1) * alpha)
                .map(|i| {
                    let y = scramble_fixed(&trees[i], row[i], ps.m(), precision);
                    DigitString::from_fixed(ps.base(), y as u128, precision as usize)
                })
                .collect();
            coords.push(interlace(alpha, &block)?);
        }
    }
    Ok(DigitPointSet { s, coords })
}

/// The interlaced scrambled point set of `ps` under `cfg`.
pub fn interlaced_scrambled_points(ps: &PointSet, cfg: &ScrambleConfig) -> Result<DigitPointSet> {
    let trees = cfg.trees(ps.base(), ps.dim());
    interlaced_points_with(ps, cfg.alpha, cfg.precision_for(ps.m()), &trees)
}

/// Interlacing without scrambling, keeping the `m` digits of the point set.
pub fn interlaced_points(ps: &PointSet, alpha: usize) -> Result<DigitPointSet> {
    let trees = vec![IdentityScrambler(ps.base()); ps.dim()];
    interlaced_points_with(ps, alpha, ps.m(), &trees)
}
