//! Finite permutations, prefixes of permutations of the positive integers,
//! and exact combinatorics of components.

use std::collections::HashSet;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DiscreteDist;
use crate::rng::{par_batches, Stream};

/// Largest `n` for which 𝔖_n is enumerated.
pub const ENUMERATION_CAP: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PermError {
    #[error("image {0} is repeated")]
    NotInjective(u64),
    #[error("images must be positive integers")]
    ZeroImage,
    #[error("q = {0} must lie in (0, 1)")]
    BadQ(f64),
    #[error("n = {n} exceeds the enumeration cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("not a permutation of [n]")]
    NotPermutation,
}

/// An injection `(Π_1, ..., Π_n)` into the positive integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermPrefix {
    images: Vec<u64>,
}

/// A cycle of a completed component, identified by its least element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub component: usize,
    pub min: usize,
    pub len: usize,
}

/// Decomposition of a prefix into completed components and their cycles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStats {
    pub splits: Vec<usize>,
    /// Completed components as inclusive 1-based ranges.
    pub components: Vec<(usize, usize)>,
    /// Cycles inside completed components only.
    pub cycles: Vec<Cycle>,
    /// `D_i = Π_i - i` for every `i <= n`.
    pub displacements: Vec<i64>,
    /// The trailing range whose component is not yet closed, if any.
    pub incomplete: Option<(usize, usize)>,
}

impl BlockStats {
    pub fn component_cycle_lengths(&self, c: usize) -> Vec<usize> {
        self.cycles.iter().filter(|x| x.component == c).map(|x| x.len).collect()
    }
}

impl PermPrefix {
    pub fn new(images: Vec<u64>) -> Result<Self, PermError> {
        let mut seen = HashSet::with_capacity(images.len());
        for &x in &images {
            if x == 0 {
                return Err(PermError::ZeroImage);
            }
            if !seen.insert(x) {
                return Err(PermError::NotInjective(x));
            }
        }
        Ok(Self { images })
    }

    /// For samplers whose construction already guarantees injectivity.
    pub(crate) fn from_images_unchecked(images: Vec<u64>) -> Self {
        Self { images }
    }

    pub fn from_perm(pi: &[usize]) -> Self {
        Self { images: pi.iter().map(|&x| x as u64).collect() }
    }

    pub fn images(&self) -> &[u64] {
        &self.images
    }

    pub fn into_images(self) -> Vec<u64> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// All `k <= n` with `max(Π_1..Π_k) = k`.
    pub fn splitting_times(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut max = 0;
        for (i, &x) in self.images.iter().enumerate() {
            max = max.max(x);
            if max == i as u64 + 1 {
                out.push(i + 1);
            }
        }
        out
    }

    pub fn last_split(&self) -> usize {
        let mut max = 0;
        let mut last = 0;
        for (i, &x) in self.images.iter().enumerate() {
            max = max.max(x);
            if max == i as u64 + 1 {
                last = i + 1;
            }
        }
        last
    }

    pub fn decompose(&self) -> BlockStats {
        let splits = self.splitting_times();
        let n = self.images.len();
        let mut components = Vec::with_capacity(splits.len());
        let mut start = 1;
        for &s in &splits {
            components.push((start, s));
            start = s + 1;
        }
        let mut cycles = Vec::new();
        let mut visited = vec![false; splits.last().copied().unwrap_or(0) + 1];
        for (c, &(a, b)) in components.iter().enumerate() {
            for i in a..=b {
                if visited[i] {
                    continue;
                }
                let mut len = 0;
                let mut j = i;
                while !visited[j] {
                    visited[j] = true;
                    len += 1;
                    j = self.images[j - 1] as usize;
                }
                cycles.push(Cycle { component: c, min: i, len });
            }
        }
        let displacements = self.images.iter().enumerate().map(|(i, &x)| x as i64 - (i as i64 + 1)).collect();
        let incomplete = (start <= n).then_some((start, n));
        BlockStats { splits, components, cycles, displacements, incomplete }
    }
}

/// Number of pairs `i < j` with `π_i > π_j`.
pub fn inversions(pi: &[usize]) -> u64 {
    let mut inv = 0;
    for i in 0..pi.len() {
        for j in i + 1..pi.len() {
            inv += u64::from(pi[i] > pi[j]);
        }
    }
    inv
}

/// A permutation of `[n]` is indecomposable when its only splitting time is `n`.
pub fn is_indecomposable(pi: &[usize]) -> bool {
    let mut max = 0;
    for (i, &x) in pi.iter().enumerate() {
        max = max.max(x);
        if max == i + 1 {
            return i + 1 == pi.len();
        }
    }
    false
}

pub fn is_permutation(pi: &[usize]) -> bool {
    let mut seen = vec![false; pi.len() + 1];
    pi.iter().all(|&x| x >= 1 && x <= pi.len() && !std::mem::replace(&mut seen[x], true))
}

/// Lengths of the components of a permutation of `[n]`, left to right.
pub fn component_lengths(pi: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut max = 0;
    let mut start = 0;
    for (i, &x) in pi.iter().enumerate() {
        max = max.max(x);
        if max == i + 1 {
            out.push(i + 1 - start);
            start = i + 1;
        }
    }
    out
}

/// Cycle lengths of a permutation of `[n]`, ordered by least element.
pub fn cycle_lengths(pi: &[usize]) -> Vec<usize> {
    let mut visited = vec![false; pi.len() + 1];
    let mut out = Vec::new();
    for i in 1..=pi.len() {
        let mut len = 0;
        let mut j = i;
        while !visited[j] {
            visited[j] = true;
            len += 1;
            j = pi[j - 1];
        }
        if len > 0 {
            out.push(len);
        }
    }
    out
}

/// Advances to the next permutation in lexicographic order.
pub fn next_permutation(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Folds over all of 𝔖_n, sharded by first element. Shards are merged in
/// order of their first element, so the result does not depend on scheduling.
pub fn fold_permutations<T, I, S, M>(n: usize, init: I, step: S, merge: M) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    S: Fn(&mut T, &[usize]) + Sync,
    M: Fn(T, T) -> T,
{
    if n == 0 {
        let mut acc = init();
        step(&mut acc, &[]);
        return acc;
    }
    let shards: Vec<T> = (1..=n)
        .into_par_iter()
        .map(|first| {
            let mut acc = init();
            let mut a: Vec<usize> = std::iter::once(first).chain((1..=n).filter(|&x| x != first)).collect();
            loop {
                step(&mut acc, &a);
                if !next_permutation(&mut a[1..]) {
                    break;
                }
            }
            acc
        })
        .collect();
    let mut it = shards.into_iter();
    let first = it.next().expect("n >= 1");
    it.fold(first, merge)
}

/// A uniform permutation of `[n]` by the Fisher–Yates–Durstenfeld–Knuth shuffle.
pub fn uniform_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut a: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        a.swap(i, j);
    }
    a
}

pub fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::one(), |acc, k| acc * k)
}

/// The triangle `(n,k)†` of permutations of `[n]` with exactly `k` components.
#[derive(Clone, Debug, PartialEq)]
pub struct IndecomposableTable {
    rows: Vec<Vec<BigUint>>,
}

impl IndecomposableTable {
    pub fn n_max(&self) -> usize {
        self.rows.len() - 1
    }

    /// `(n,k)†`, with `(0,0)† = 1` and zero outside `0 <= k <= n`.
    pub fn get(&self, n: usize, k: usize) -> BigUint {
        self.rows.get(n).and_then(|r| r.get(k)).cloned().unwrap_or_default()
    }

    pub fn row(&self, n: usize) -> &[BigUint] {
        &self.rows[n]
    }
}

/// `(n,1)†` from `n! = Σ_k (k,1)† (n-k)!`, then `(n,k)†` as the k-fold
/// convolution of the `(·,1)†` sequence.
pub fn indecomposable_counts(n_max: usize) -> IndecomposableTable {
    let fact: Vec<BigUint> = (0..=n_max).map(factorial).collect();
    let mut ind = vec![BigUint::zero(); n_max + 1];
    for n in 1..=n_max {
        let s: BigUint = (1..n).map(|k| &ind[k] * &fact[n - k]).sum();
        ind[n] = &fact[n] - s;
    }
    let mut rows = vec![vec![BigUint::zero(); n_max + 1]; n_max + 1];
    rows[0][0] = BigUint::one();
    for k in 1..=n_max {
        for n in k..=n_max {
            let mut s = BigUint::zero();
            for m in 1..=n - (k - 1) {
                let prev = &rows[n - m][k - 1];
                if !prev.is_zero() {
                    s += &ind[m] * prev;
                }
            }
            rows[n][k] = s;
        }
    }
    for (n, r) in rows.iter_mut().enumerate() {
        r.truncate(n + 1);
    }
    IndecomposableTable { rows }
}

/// Exact laws of the component count `K_n`, the first component length
/// `L_{n,1}` and the size-biased component length `L*_n` of a uniform
/// permutation of `[n]`. Each vector is indexed by its value, from 0 to `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentLaw {
    pub n: usize,
    pub count: Vec<BigRational>,
    pub first: Vec<BigRational>,
    pub size_biased: Vec<BigRational>,
}

fn ratio(num: &BigUint, den: &BigUint) -> BigRational {
    BigRational::new(BigInt::from(num.clone()), BigInt::from(den.clone()))
}

/// `n · n! · P(L*_n = ℓ) = ℓ (ℓ,1)† Σ_k k (n-ℓ, k-1)†` for `ℓ = 1..=n`.
pub fn size_biased_row(table: &IndecomposableTable, n: usize) -> Vec<BigUint> {
    (1..=n)
        .map(|l| {
            let rest = n - l;
            let s: BigUint = (1..=rest + 1).map(|k| table.get(rest, k - 1) * BigUint::from(k)).sum();
            table.get(l, 1) * BigUint::from(l) * s
        })
        .collect()
}

pub fn component_law_with(table: &IndecomposableTable, n: usize) -> ComponentLaw {
    assert!(n >= 1 && n <= table.n_max());
    let nf = factorial(n);
    let mut count = vec![BigRational::zero(); n + 1];
    let mut first = vec![BigRational::zero(); n + 1];
    let mut size_biased = vec![BigRational::zero(); n + 1];
    for k in 1..=n {
        count[k] = ratio(&table.get(n, k), &nf);
        first[k] = ratio(&(table.get(k, 1) * factorial(n - k)), &nf);
    }
    let scale = &nf * BigUint::from(n);
    for (l, v) in size_biased_row(table, n).into_iter().enumerate() {
        size_biased[l + 1] = ratio(&v, &scale);
    }
    ComponentLaw { n, count, first, size_biased }
}

impl ComponentLaw {
    /// Whether each of the three laws sums to exactly one.
    pub fn sums_to_one(&self) -> bool {
        let one = BigRational::one();
        [&self.count, &self.first, &self.size_biased]
            .iter()
            .all(|v| v.iter().fold(BigRational::zero(), |a, b| a + b) == one)
    }
}

pub fn component_law(n: usize) -> ComponentLaw {
    component_law_with(&indecomposable_counts(n), n)
}

/// `Σ_{k=0}^n C(n,k)^{-1}`.
pub fn reciprocal_binomial_sum(n: usize) -> BigRational {
    let mut c = BigUint::one();
    let mut s = BigRational::zero();
    for k in 0..=n {
        s += BigRational::new(BigInt::one(), BigInt::from(c.clone()));
        c = c * BigUint::from(n - k) / BigUint::from(k + 1);
    }
    s
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn check_q(q: f64) -> Result<(), PermError> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(PermError::BadQ(q))
    }
}

/// `Z_{n,q} = Π_{j<=n} (1 + q + ... + q^{j-1})`.
pub fn mallows_qfactorial(n: usize, q: f64) -> Result<f64, PermError> {
    check_q(q)?;
    Ok((1..=n).map(|j| (0..j).map(|i| q.powi(i as i32)).sum::<f64>()).product())
}

/// `q^{inv(π)} / Z_{n,q}`.
pub fn mallows_mass(pi: &[usize], q: f64) -> Result<f64, PermError> {
    check_q(q)?;
    if !is_permutation(pi) {
        return Err(PermError::NotPermutation);
    }
    Ok(q.powi(inversions(pi) as i32) / mallows_qfactorial(pi.len(), q)?)
}

/// `Z†_{n,q}`: the sum of `q^{inv(π)}` over indecomposable `π` in 𝔖_n.
pub fn mallows_indecomposable_partition(n: usize, q: f64) -> Result<f64, PermError> {
    check_q(q)?;
    if n > ENUMERATION_CAP {
        return Err(PermError::TooLarge { n, cap: ENUMERATION_CAP });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let counts = fold_permutations(
        n,
        || vec![0u64; n * (n - 1) / 2 + 1],
        |acc, pi| {
            if is_indecomposable(pi) {
                acc[inversions(pi) as usize] += 1;
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );
    Ok(counts.iter().enumerate().map(|(i, &c)| c as f64 * q.powi(i as i32)).sum())
}

/// Exact quantities of the blocked model with geometric(1 - q) block
/// lengths and uniform blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockedGeometric {
    pub q: f64,
}

impl BlockedGeometric {
    pub fn new(q: f64) -> Result<Self, PermError> {
        check_q(q)?;
        Ok(Self { q })
    }

    pub fn mu(&self) -> f64 {
        1.0 / (1.0 - self.q)
    }

    /// Mean number of `j`-cycles per block: `q^{j-1}/j`.
    pub fn nu(&self, j: usize) -> f64 {
        self.q.powi(j as i32 - 1) / j as f64
    }

    /// Limit frequency `ν_j / μ` of `j`-cycles per site.
    pub fn cycle_frequency(&self, j: usize) -> f64 {
        self.nu(j) / self.mu()
    }

    /// `λ_1(q) = -log(1 - q)`.
    pub fn lambda1(&self) -> f64 {
        -(-self.q).ln_1p()
    }

    /// `P(Π_1 = k) = ((1-q)/q) Σ_{h>=k} q^h/h`, summed directly.
    pub fn pi1_law(&self, k: usize) -> f64 {
        let mut s = 0.0;
        let mut h = k;
        loop {
            let t = self.q.powi(h as i32) / h as f64;
            s += t;
            if t < 1e-20 * s {
                break;
            }
            h += 1;
        }
        (1.0 - self.q) / self.q * s
    }

    /// The same law written as `((1-q)/q)(λ_1(q) - Σ_{h<k} q^h/h)`.
    pub fn pi1_law_via_lambda(&self, k: usize) -> f64 {
        let head: f64 = (1..k).map(|h| self.q.powi(h as i32) / h as f64).sum();
        (1.0 - self.q) / self.q * (self.lambda1() - head)
    }

    /// `P(Π_1 = 1, Π_2 = 2) = 1 - q`.
    pub fn two_fixed_points(&self) -> f64 {
        1.0 - self.q
    }
}

/// Exact quantities of a blocked model with block-length law `p` and
/// uniform blocks. Infinite supports are truncated where the tail drops
/// below `1e-17`.
#[derive(Clone, Debug)]
pub struct UniformBlocked {
    pub p: DiscreteDist,
    support: usize,
}

impl UniformBlocked {
    pub fn new(p: DiscreteDist) -> Self {
        let support = p.effective_support(1e-17);
        Self { p, support }
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn mu(&self) -> f64 {
        self.p.mean()
    }

    /// `ν_j = P(Y ≥ j)/j`.
    pub fn nu(&self, j: usize) -> f64 {
        self.p.tail(j - 1) / j as f64
    }

    pub fn cycle_frequency(&self, j: usize) -> f64 {
        self.nu(j) / self.mu()
    }

    /// Relative frequency of `j`-cycles among all cycles:
    /// `P(Y ≥ j) / (j Σ_i p_i H_i)`.
    pub fn p_circ(&self, j: usize) -> f64 {
        let mut h = 0.0;
        let mut den = 0.0;
        for i in 1..=self.support {
            h += 1.0 / i as f64;
            den += self.p.mass(i) * h;
        }
        self.p.tail(j - 1) / (j as f64 * den)
    }

    /// `P(D* = d) = (1/μ) E[(Y - |d|)_+ / Y]`.
    pub fn displacement_mass(&self, d: i64) -> f64 {
        let a = d.unsigned_abs() as usize;
        let s: f64 = (a + 1..=self.support).map(|y| self.p.mass(y) * (y - a) as f64 / y as f64).sum();
        s / self.mu()
    }

    /// `E|D*| = (2/μ) E δ_1(Y)` with `δ_1(n) = (n^2 - 1)/6`.
    pub fn mean_abs_displacement(&self) -> f64 {
        let s: f64 = (1..=self.support).map(|y| self.p.mass(y) * ((y * y) as f64 - 1.0) / 6.0).sum();
        2.0 * s / self.mu()
    }

    /// `P(D* > 0) = (1 - 1/μ)/2`.
    pub fn positive_displacement(&self) -> f64 {
        0.5 * (1.0 - 1.0 / self.mu())
    }

    /// Mean number of `j`-components per block, `E[Y P(L*_Y = j)] / j`, for
    /// `j = 1..=j_max`.
    pub fn component_nu(&self, j_max: usize) -> Vec<f64> {
        let table = indecomposable_counts(self.support);
        let mut out = vec![0.0; j_max];
        for y in 1..=self.support {
            let py = self.p.mass(y);
            if py == 0.0 {
                continue;
            }
            let row = size_biased_row(&table, y);
            let scale = factorial(y) * BigUint::from(y);
            for (l, v) in row.iter().enumerate().take(j_max) {
                let prob = to_f64(&ratio(v, &scale));
                out[l] += py * y as f64 * prob / (l + 1) as f64;
            }
        }
        out
    }

    /// Relative frequency `p†_j` of `j`-components among all components.
    pub fn p_dagger(&self, j_max: usize) -> Vec<f64> {
        let nu = self.component_nu(self.support.max(j_max));
        let total: f64 = nu.iter().sum();
        nu.iter().take(j_max).map(|x| x / total).collect()
    }

    /// `P(split at n)` for `n = 0..=n_max` in the zero-delay blocked
    /// permutation. Splits include block ends and the splits inside blocks;
    /// with `b` the renewal sequence of block ends,
    /// `u_n = b_n + Σ_{s<n} b_s Σ_{y>n-s} p_y / C(y, n-s)`.
    pub fn split_u(&self, n_max: usize) -> Vec<f64> {
        let f: Vec<f64> = (1..=n_max.max(1)).map(|i| self.p.mass(i)).collect();
        let b = crate::renewal::u_from_f(&f, n_max).expect("block law is a distribution");
        // inner[k] = Σ_{y>k} p_y / C(y, k)
        let inner: Vec<f64> = (0..=n_max)
            .map(|k| {
                if k == 0 {
                    return 0.0;
                }
                let mut s = 0.0;
                for y in k + 1..=self.support.max(k + 1) {
                    s += self.p.mass(y) / binomial_f64(y, k);
                }
                s
            })
            .collect();
        (0..=n_max).map(|n| b[n] + (0..n).map(|s| b[s] * inner[n - s]).sum::<f64>()).collect()
    }
}

/// `C(n, k)` in floating point.
pub fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Empirical check that the cycle counts of a uniform permutation of a
/// geometric(1 - q) number of points are independent Poisson(q^j/j).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SheppLloydReport {
    pub q: f64,
    pub samples: u64,
    pub means: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub expected: Vec<f64>,
    /// Correlation of the 1- and 2-cycle counts.
    pub corr12: f64,
    pub corr12_se: f64,
}

pub fn shepp_lloyd_check(q: f64, n_samples: u64, j_max: usize, seed: u64) -> Result<SheppLloydReport, PermError> {
    check_q(q)?;
    let batches = crate::rng::DEFAULT_BATCHES;
    // per batch: count, Σ N_j, Σ N_j^2, Σ N_1 N_2
    let per = par_batches(seed, batches, |b, rng: &mut Stream| {
        let m = crate::rng::batch_size(n_samples, batches, b);
        let mut sum = vec![0.0; j_max.max(2)];
        let mut sq = vec![0.0; j_max.max(2)];
        let mut cross = 0.0;
        let mut counts = vec![0u32; 64];
        for _ in 0..m {
            let n = crate::rng::geometric_failures(rng, q) as usize;
            let pi = uniform_permutation(n, rng);
            counts.iter_mut().for_each(|c| *c = 0);
            if counts.len() <= n {
                counts.resize(n + 1, 0);
            }
            for len in cycle_lengths(&pi) {
                counts[len] += 1;
            }
            for j in 1..=sum.len() {
                let c = counts.get(j).copied().unwrap_or(0) as f64;
                sum[j - 1] += c;
                sq[j - 1] += c * c;
            }
            cross += counts[1] as f64 * counts.get(2).copied().unwrap_or(0) as f64;
        }
        (m as f64, sum, sq, cross)
    });
    let total: f64 = per.iter().map(|x| x.0).sum();
    let jj = j_max.max(2);
    let mut means = Vec::new();
    let mut mean_se = Vec::new();
    for j in 0..jj {
        let pairs: Vec<(f64, f64)> = per.iter().map(|x| (x.1[j], x.0)).collect();
        let (m, se) = crate::stats::ratio_estimate(&pairs);
        means.push(m);
        mean_se.push(se);
    }
    let corr = |n: f64, s1: f64, s2: f64, q1: f64, q2: f64, c: f64| {
        let (m1, m2) = (s1 / n, s2 / n);
        let v1 = q1 / n - m1 * m1;
        let v2 = q2 / n - m2 * m2;
        (c / n - m1 * m2) / (v1 * v2).sqrt()
    };
    let corr12 = {
        let s = |f: &dyn Fn(&(f64, Vec<f64>, Vec<f64>, f64)) -> f64| per.iter().map(f).sum::<f64>();
        corr(total, s(&|x| x.1[0]), s(&|x| x.1[1]), s(&|x| x.2[0]), s(&|x| x.2[1]), s(&|x| x.3))
    };
    let rb: Vec<f64> = per.iter().map(|x| corr(x.0, x.1[0], x.1[1], x.2[0], x.2[1], x.3)).collect();
    let mb = rb.iter().sum::<f64>() / rb.len() as f64;
    let var = rb.iter().map(|r| (r - mb).powi(2)).sum::<f64>() / (rb.len() as f64 - 1.0);
    let corr12_se = (var / rb.len() as f64).sqrt();
    means.truncate(j_max);
    mean_se.truncate(j_max);
    let expected = (1..=j_max).map(|j| q.powi(j as i32) / j as f64).collect();
    Ok(SheppLloydReport { q, samples: n_samples, means, mean_se, expected, corr12, corr12_se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn big(x: u64) -> BigUint {
        BigUint::from(x)
    }

    #[test]
    fn splitting_time_examples() {
        assert_eq!(PermPrefix::new(vec![1, 4, 3, 2]).unwrap().splitting_times(), vec![1, 4]);
        assert_eq!(PermPrefix::new(vec![1, 2, 3]).unwrap().splitting_times(), vec![1, 2, 3]);
        assert_eq!(PermPrefix::new(vec![2, 1, 4, 6, 8, 3]).unwrap().splitting_times(), vec![2]);
        assert_eq!(PermPrefix::new(vec![1, 1]), Err(PermError::NotInjective(1)));
        assert_eq!(PermPrefix::new(vec![0]), Err(PermError::ZeroImage));
    }

    #[test]
    fn decompose_examples() {
        let b = PermPrefix::new(vec![1, 4, 3, 2]).unwrap().decompose();
        assert_eq!(b.components, vec![(1, 1), (2, 4)]);
        assert_eq!(b.component_cycle_lengths(0), vec![1]);
        let mut c = b.component_cycle_lengths(1);
        c.sort();
        assert_eq!(c, vec![1, 2]);
        assert_eq!(b.displacements, vec![0, 2, 0, -2]);
        assert_eq!(b.incomplete, None);

        let b = PermPrefix::new(vec![1, 2, 3, 4, 5]).unwrap().decompose();
        assert_eq!(b.cycles.len(), 5);
        assert!(b.cycles.iter().all(|c| c.len == 1));
        assert!(b.displacements.iter().all(|&d| d == 0));

        let b = PermPrefix::new(vec![2, 1, 4, 6, 8, 3]).unwrap().decompose();
        assert_eq!(b.components, vec![(1, 2)]);
        assert_eq!(b.cycles, vec![Cycle { component: 0, min: 1, len: 2 }]);
        assert_eq!(b.incomplete, Some((3, 6)));
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(inversions(&[1, 2, 3, 4]), 0);
        assert!(!is_indecomposable(&[1, 2, 3, 4]));
        assert_eq!(inversions(&[4, 3, 2, 1]), 6);
        assert!(is_indecomposable(&[4, 3, 2, 1]));
        assert_eq!(inversions(&[2, 1]), 1);
        assert!(is_indecomposable(&[2, 1]));
    }

    #[test]
    fn indecomposable_examples() {
        let t = indecomposable_counts(10);
        let first: Vec<BigUint> = (1..=6).map(|n| t.get(n, 1)).collect();
        assert_eq!(first, [1u64, 1, 3, 13, 71, 461].map(big));
        for n in 1..=10 {
            assert_eq!(t.get(n, n), big(1));
            assert_eq!(t.row(n).iter().sum::<BigUint>(), factorial(n));
        }
    }

    #[test]
    fn enumeration_agrees_with_counts() {
        let t = indecomposable_counts(8);
        for n in 1..=8 {
            let brute = fold_permutations(
                n,
                || (vec![0u64; n + 1], vec![0u64; n + 1]),
                |acc, pi| {
                    let comps = component_lengths(pi);
                    acc.0[comps.len()] += 1;
                    for l in comps {
                        acc.1[l] += l as u64;
                    }
                },
                |mut a, b| {
                    a.0.iter_mut().zip(b.0).for_each(|(x, y)| *x += y);
                    a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
                    a
                },
            );
            for k in 1..=n {
                assert_eq!(t.get(n, k), big(brute.0[k]), "n={n} k={k}");
            }
            let row = size_biased_row(&t, n);
            for l in 1..=n {
                assert_eq!(row[l - 1], big(brute.1[l]), "n={n} l={l}");
            }
        }
    }

    #[test]
    fn component_law_examples() {
        let t = indecomposable_counts(7);
        assert_eq!(size_biased_row(&t, 3), [5u64, 4, 9].map(big));
        assert_eq!(size_biased_row(&t, 7)[6], big(24129));
        let law = component_law(1);
        assert_eq!(law.count[1], BigRational::one());
        assert_eq!(law.first[1], BigRational::one());
        assert_eq!(law.size_biased[1], BigRational::one());
        for n in 1..=10 {
            let law = component_law(n);
            for v in [&law.count, &law.first, &law.size_biased] {
                assert_eq!(v.iter().sum::<BigRational>(), BigRational::one());
            }
        }
    }

    #[test]
    fn reciprocal_binomial_examples() {
        let r = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        assert_eq!(reciprocal_binomial_sum(2), r(5, 2));
        assert_eq!(reciprocal_binomial_sum(1), r(2, 1));
        assert_eq!(reciprocal_binomial_sum(4), r(8, 3));
        for n in 1..40 {
            let s = reciprocal_binomial_sum(n);
            assert!(s >= r(2, 1) && s <= r(2 * n as i64 + 4, n as i64));
        }
    }

    #[test]
    fn mallows_examples() {
        assert!((mallows_qfactorial(2, 0.5).unwrap() - 1.5).abs() < 1e-15);
        let u3 = 0.125 * mallows_qfactorial(3, 0.5).unwrap();
        assert!((u3 - 21.0 / 64.0).abs() < 1e-15);
        assert!(mallows_qfactorial(3, 1.0).is_err());
        assert!(mallows_indecomposable_partition(11, 0.5).is_err());
        for n in 1..=8 {
            let total = fold_permutations(n, || 0.0, |s, pi| *s += mallows_mass(pi, 0.3).unwrap(), |a, b| a + b);
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mallows_indecomposable_matches_first_passage() {
        for q in [0.3f64, 0.7] {
            let u: Vec<f64> = (0..=8).map(|n| (1..=n).map(|j| 1.0 - q.powi(j)).product()).collect();
            let f = crate::renewal::f_from_u(&u).unwrap();
            for n in 1..=8 {
                let fq = (1.0 - q).powi(n as i32) * mallows_indecomposable_partition(n, q).unwrap();
                assert!((fq - f[n - 1]).abs() < 1e-10, "q={q} n={n}");
            }
        }
    }

    #[test]
    fn blocked_geometric_examples() {
        let b = BlockedGeometric::new(0.5).unwrap();
        assert!((b.pi1_law(1) - 2f64.ln()).abs() < 1e-12);
        assert_eq!(b.two_fixed_points(), 0.5);
        assert_eq!(b.nu(1), 1.0);
        for k in 1..20 {
            assert!((b.pi1_law(k) - b.pi1_law_via_lambda(k)).abs() < 1e-12);
        }
        let total: f64 = (1..200).map(|k| b.pi1_law(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let g = UniformBlocked::new(DiscreteDist::geometric(0.5).unwrap());
        for j in 1..10 {
            assert!((g.nu(j) - b.nu(j)).abs() < 1e-15);
        }
        assert!((g.p_circ(1) - 1.0 / (2.0 * 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn uniform_blocked_closed_forms() {
        let two = UniformBlocked::new(DiscreteDist::point_mass(2));
        assert!((two.displacement_mass(0) - 0.5).abs() < 1e-15);
        assert!((two.displacement_mass(1) - 0.25).abs() < 1e-15);
        assert!((two.displacement_mass(-1) - 0.25).abs() < 1e-15);
        assert!((two.mean_abs_displacement() - 0.5).abs() < 1e-15);
        assert!((two.positive_displacement() - 0.25).abs() < 1e-15);

        let mix = UniformBlocked::new(DiscreteDist::fixed(vec![0.5, 0.5], 0.0).unwrap());
        assert!((mix.p_circ(1) - 0.8).abs() < 1e-15);

        // displacement masses sum to one
        let g = UniformBlocked::new(DiscreteDist::geometric(0.4).unwrap());
        let total: f64 = (-80..=80).map(|d| g.displacement_mass(d)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // splits per unit length: E[number of components of a block] / μ
        let u = g.split_u(80);
        let per_block: f64 = (1..=g.support())
            .map(|y| g.p.mass(y) * (1..=y).map(|k| 1.0 / binomial_f64(y, k)).sum::<f64>())
            .sum();
        assert!((u[80] - per_block / g.mu()).abs() < 1e-9);
        assert!((u[1] - g.two_point_check()).abs() < 1e-12);
        let pd: f64 = g.p_dagger(40).iter().sum();
        assert!((pd - 1.0).abs() < 1e-9);
    }

    impl UniformBlocked {
        // P(Π_1 = 1) = Σ_y p_y / y
        fn two_point_check(&self) -> f64 {
            (1..=self.support()).map(|y| self.p.mass(y) / y as f64).sum()
        }
    }

    #[test]
    fn blocked_u_matches_enumeration() {
        // P(split at n) for y-blocks: enumerate over the block sizes covering [1..=n]
        let p = DiscreteDist::fixed(vec![0.2, 0.3, 0.5], 0.0).unwrap();
        let u = UniformBlocked::new(p).split_u(5);
        // n = 1: split iff first block has size 1 or first element fixed in a larger block
        let u1 = 0.2 + 0.3 / 2.0 + 0.5 / 3.0;
        assert!((u[1] - u1).abs() < 1e-15);
        // n = 2: blocks (1,1), (1,y>=2 with split at 1), (2), (3 with split at 2)
        let u2 = 0.2 * 0.2 + 0.2 * (0.3 / 2.0 + 0.5 / 3.0) + 0.3 + 0.5 / 3.0;
        assert!((u[2] - u2).abs() < 1e-15);
    }

    #[test]
    fn shepp_lloyd_small() {
        let r = shepp_lloyd_check(0.6, 200_000, 3, 9).unwrap();
        for j in 0..3 {
            assert!((r.means[j] - r.expected[j]).abs() < 5.0 * r.mean_se[j], "{r:?}");
        }
        assert!(r.corr12.abs() < 5.0 * r.corr12_se);
    }

    #[test]
    fn uniform_cycle_means() {
        let mut rng = stream(21, 0);
        for n in [3usize, 6, 9] {
            let reps = 100_000;
            let mut c = vec![0.0; n + 1];
            let mut c2 = vec![0.0; n + 1];
            for _ in 0..reps {
                let mut counts = vec![0.0; n + 1];
                for l in cycle_lengths(&uniform_permutation(n, &mut rng)) {
                    counts[l] += 1.0;
                }
                for j in 1..=n {
                    c[j] += counts[j];
                    c2[j] += counts[j] * counts[j];
                }
            }
            for j in 1..=n {
                let m = c[j] / reps as f64;
                let se = ((c2[j] / reps as f64 - m * m) / reps as f64).sqrt();
                assert!((m - 1.0 / j as f64).abs() < 3.0 * se.max(1e-9) + 1e-12, "n={n} j={j}");
            }
        }
    }

    proptest! {
        #[test]
        fn cycles_partition_components(seed in 0u64..10_000, n in 1usize..40) {
            let mut rng = stream(seed, 0);
            let pi = uniform_permutation(n, &mut rng);
            prop_assert!(is_permutation(&pi));
            let b = PermPrefix::from_perm(&pi).decompose();
            for (c, &(a, e)) in b.components.iter().enumerate() {
                prop_assert_eq!(b.component_cycle_lengths(c).iter().sum::<usize>(), e - a + 1);
            }
            prop_assert_eq!(b.splits.last().copied(), Some(n));
            prop_assert_eq!(component_lengths(&pi).iter().sum::<usize>(), n);
        }
    }
}
